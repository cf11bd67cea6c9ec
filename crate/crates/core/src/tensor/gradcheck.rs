use super::{Tape, Var};
use crate::error::{Error, Result};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug)]
pub struct GradcheckReport {
    /// Largest `|a − n| / max(|a|, |n|, 1e-6)` over all checked entries.
    pub max_rel_error: f64,
    /// `(input, element)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

/// Compare reverse-mode gradients of a scalar function against central
/// differences with step `eps`.
///
/// `f` rebuilds the graph from fresh leaves each time it is called.
pub fn gradcheck<F>(inputs: &[(Vec<usize>, Vec<f64>)], eps: f64, f: F) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Vec<f64>]| -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let mut vars = Vec::with_capacity(inputs.len());
        for ((shape, _), v) in inputs.iter().zip(vals) {
            vars.push(tape.var(shape, v.clone())?);
        }
        let root = f(&mut tape, &vars)?;
        Ok((tape, vars, root))
    };
    let mut vals: Vec<Vec<f64>> = inputs.iter().map(|(_, v)| v.clone()).collect();
    let (tape, vars, root) = eval(&vals)?;
    if tape.value(root).len() != 1 {
        return Err(Error::Shape("gradcheck: function must return a scalar".into()));
    }
    let grads = tape.backward(root)?;
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (ii, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var, vals[ii].len());
        for e in 0..vals[ii].len() {
            let orig = vals[ii][e];
            vals[ii][e] = orig + eps;
            let plus = { let (t, _, r) = eval(&vals)?; t.value(r)[0] };
            vals[ii][e] = orig - eps;
            let minus = { let (t, _, r) = eval(&vals)?; t.value(r)[0] };
            vals[ii][e] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((ii, e));
            }
        }
    }
    Ok(report)
}
