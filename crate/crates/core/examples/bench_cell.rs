//! Forward throughput of the two cell variants, interleaved.
//!
//! cargo run --release --example bench_cell

use melmo::model::ModelConfig;
use melmo::trainer::compare_variants;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ModelConfig::desk(1000);
    let cmp = compare_variants(1000, &cfg, 20, 5, 1)?;
    println!("clip before output: {:?}", cmp.clip_before.iter().map(|x| x.round()).collect::<Vec<_>>());
    println!("clip after output:  {:?}", cmp.clip_after.iter().map(|x| x.round()).collect::<Vec<_>>());
    println!(
        "medians {:.0} vs {:.0} tokens/sec ({:+.1}%)",
        cmp.median_before(),
        cmp.median_after(),
        100.0 * cmp.speedup()
    );
    Ok(())
}
