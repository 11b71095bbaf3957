use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Outcome of comparing tape gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub pass: bool,
    pub checked: usize,
    /// Coordinates skipped because a perturbation crossed a kink
    /// (ReLU sign change, channel arg-max switch, loss clamp).
    pub skipped: usize,
}

/// Check d f / d x for a scalar-valued `f` at `x`.
///
/// Each coordinate is compared as `|analytic - numeric| / max(1, |analytic|)`
/// with numeric `(f(x + step e) - f(x - step e)) / (2 step)`.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), None, step, tol)
}

/// Multi-input variant. `coords` restricts the check to
/// `(input index, flat element index)` pairs; `None` checks everything.
pub fn grad_check_many<F>(
    f: F,
    inputs: &[Tensor],
    coords: Option<&[(usize, usize)]>,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(step > 0.0 && step <= 1e-3) {
        return Err(Error::invalid("grad_check", format!("step {step} outside (0, 1e-3]")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(v))))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<(f64, u64)> {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|x| t.constant(x.clone())).collect();
        let o = f(&mut t, &vs)?;
        let v = t.value(o).data()[0];
        if !v.is_finite() {
            return Err(Error::NonFinite("grad_check objective at perturbed point".into()));
        }
        Ok((v, t.branch_signature()))
    };

    let all: Vec<(usize, usize)>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = inputs
                .iter()
                .enumerate()
                .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
                .collect();
            &all
        }
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        pass: true,
        checked: 0,
        skipped: 0,
    };
    for &(i, j) in coords {
        let orig = inputs[i].data()[j];
        let mut at = |delta: f64| -> Result<(f64, u64)> {
            work[i].data_mut()[j] = orig + delta;
            let r = eval(&work);
            work[i].data_mut()[j] = orig;
            r
        };
        // a kink within 10 steps shows up as a changed branch signature
        let (_, sig_lo) = at(-10.0 * step)?;
        let (_, sig_hi) = at(10.0 * step)?;
        let (f_plus, sig_p) = at(step)?;
        let (f_minus, sig_m) = at(-step)?;
        if sig_lo != sig_hi || sig_p != sig_m || sig_p != sig_lo {
            report.skipped += 1;
            continue;
        }
        let numeric = (f_plus - f_minus) / (2.0 * step);
        let a = analytic[i].data()[j];
        let rel = (a - numeric).abs() / a.abs().max(1.0);
        report.max_rel_err = report.max_rel_err.max(rel);
        report.checked += 1;
    }
    report.pass = report.max_rel_err < tol;
    Ok(report)
}
