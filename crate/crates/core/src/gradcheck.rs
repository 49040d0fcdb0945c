//! Central finite-difference verification of tape gradients.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// `(input index, element index)` of the worst element.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub pass: bool,
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares tape gradients of the scalar `f(inputs)` against central
/// differences with the given step.
///
/// `f` is evaluated on a fresh tape for every probe. A failing evaluation is
/// reported as a failed check rather than an error.
pub fn grad_check<F>(f: F, inputs: &[Tensor], step: f64, tol: f64) -> GradCheckReport
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let failed = GradCheckReport {
        max_rel_err: f64::INFINITY,
        max_abs_err: f64::INFINITY,
        worst: None,
        checked: 0,
        pass: false,
    };
    let eval = |xs: &[Tensor]| -> Option<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&tape, &vars).ok()?;
        let v = tape.value(out);
        v.is_scalar().then(|| v.item())
    };

    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
        let Ok(out) = f(&tape, &vars) else {
            return failed;
        };
        let Ok(mut grads) = tape.backward(out) else {
            return failed;
        };
        vars.iter()
            .zip(inputs)
            .map(|(&v, x)| grads.take(v).unwrap_or_else(|| Tensor::zeros(x.shape())))
            .collect()
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: None,
        checked: 0,
        pass: true,
    };
    let mut probe = inputs.to_vec();
    for (ii, x) in inputs.iter().enumerate() {
        for e in 0..x.len() {
            let orig = x.data()[e];
            probe[ii].data_mut()[e] = orig + step;
            let plus = eval(&probe);
            probe[ii].data_mut()[e] = orig - step;
            let minus = eval(&probe);
            probe[ii].data_mut()[e] = orig;
            let (Some(plus), Some(minus)) = (plus, minus) else {
                return failed;
            };
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[ii].data()[e];
            let rel = relative_error(a, numeric);
            if !(rel <= report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst = Some((ii, e));
            }
            report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
            report.checked += 1;
        }
    }
    report.pass = report.max_rel_err <= tol;
    report
}
