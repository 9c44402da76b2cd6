use super::tape::{OpKind, Tape, Var};
use super::tensor::Tensor;
use super::KernelError;

/// Worst disagreement found for one leaf.
#[derive(Clone, Debug)]
pub struct LeafReport {
    pub leaf: usize,
    pub max_rel_error: f64,
    pub worst_element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub leaves: Vec<LeafReport>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.leaves.iter().map(|l| l.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tol
    }
}

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Central-difference comparison of tape gradients.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub step: f64,
    pub tol: f64,
    /// Backward rule to corrupt while computing the analytic side.
    pub fault: Option<OpKind>,
}

impl GradCheck {
    pub fn new(step: f64, tol: f64) -> Self {
        Self { step, tol, fault: None }
    }

    /// Compares the tape gradient of `f` against `(f(x+h) − f(x−h)) / 2h`
    /// for every element of every leaf. All `leaves` are registered as
    /// trainable, in order, before `f` runs.
    pub fn run<F>(&self, f: F, leaves: &[Tensor]) -> Result<GradCheckReport, KernelError>
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var, KernelError>,
    {
        let eval = |values: &[Tensor]| -> Result<f64, KernelError> {
            let mut tape = Tape::new();
            let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
            let out = f(&mut tape, &vars)?;
            Ok(tape.value(out).data()[0])
        };

        let mut tape = Tape::new();
        tape.inject_fault(self.fault);
        let vars: Vec<Var> = leaves.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let grads = tape.backward(out)?;
        drop(tape);

        let mut work = leaves.to_vec();
        let mut reports = Vec::with_capacity(leaves.len());
        for (li, var) in vars.iter().enumerate() {
            let analytic = grads.get(*var).expect("trainable leaf has a gradient");
            let mut report = LeafReport {
                leaf: li,
                max_rel_error: 0.0,
                worst_element: 0,
                analytic: 0.0,
                numeric: 0.0,
            };
            for e in 0..work[li].len() {
                let orig = work[li].data()[e];
                work[li].data_mut()[e] = orig + self.step;
                let plus = eval(&work)?;
                work[li].data_mut()[e] = orig - self.step;
                let minus = eval(&work)?;
                work[li].data_mut()[e] = orig;
                let numeric = (plus - minus) / (2.0 * self.step);
                let a = analytic.data()[e];
                let err = rel_error(a, numeric);
                if err > report.max_rel_error || e == 0 {
                    report = LeafReport { leaf: li, max_rel_error: err, worst_element: e, analytic: a, numeric };
                }
            }
            reports.push(report);
        }
        Ok(GradCheckReport { leaves: reports, tol: self.tol })
    }
}

/// Convenience wrapper around [`GradCheck::run`].
pub fn grad_check<F>(f: F, leaves: &[Tensor], step: f64, tol: f64) -> Result<GradCheckReport, KernelError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, KernelError>,
{
    GradCheck::new(step, tol).run(f, leaves)
}
