//! Runs the finite-difference suite, then shows that a corrupted backward
//! rule is caught.

use melmo::cli::run_suite;
use melmo::numkernel::OpKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let t = std::time::Instant::now();
    for o in run_suite(None, None)? {
        println!("{:<14} {:.2e} < {:.0e}: {}", o.name, o.max_rel_error, o.tol, o.passed);
    }
    println!("suite took {:.1}s", t.elapsed().as_secs_f64());

    let broken = run_suite(Some("layer_norm"), Some(OpKind::LayerNorm))?;
    println!("\nwith the layer_norm backward rule scaled by 1.5:");
    for o in broken {
        println!("{:<14} {:.2e}: passed = {}", o.name, o.max_rel_error, o.passed);
    }
    Ok(())
}
