//! Finite-difference verification of analytic gradients: every parameter
//! is perturbed ±ε and the central difference of the scalar loss is
//! compared against the value the tape propagated back.

use crate::params::{ParamStore, Params};
use crate::tape::{Tape, Var};
use crate::NeuralError;

/// Upper bound on how many parameters the harness will finite-difference;
/// beyond this the two-evaluations-per-parameter cost stops being a test.
pub const MAX_CHECK_PARAMS: usize = 10_000;

/// Default perturbation, balancing truncation error against f64 roundoff.
pub const DEFAULT_EPSILON: f64 = 1e-4;

/// Outcome of one finite-difference sweep.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst relative error `|analytic − numeric| / max(|analytic|, |numeric|, 1e-5)`.
    pub max_rel_err: f64,
    /// Parameter block the worst entry lives in.
    pub worst_block: String,
    /// Flat index of the worst entry within its block.
    pub worst_index: usize,
    /// Total number of parameters compared.
    pub n_checked: usize,
}

/// Compare analytic parameter gradients of `loss_fn` against central finite
/// differences over every entry of `store`.
///
/// `loss_fn` must build the loss for whatever parameter values it is handed
/// — it is called once for the analytic pass and twice per parameter for
/// the numeric sweep, each time on a fresh tape.
pub fn grad_check(
    store: &ParamStore,
    epsilon: f64,
    loss_fn: &dyn Fn(&mut Tape, &Params) -> Result<Var, NeuralError>,
) -> Result<GradCheckReport, NeuralError> {
    if !(epsilon > 0.0) {
        return Err(NeuralError::BadConfig(format!("epsilon {epsilon} must be positive")));
    }
    let n_total = store.n_params();
    if n_total > MAX_CHECK_PARAMS {
        return Err(NeuralError::BadConfig(format!(
            "{n_total} parameters exceed the finite-difference budget of {MAX_CHECK_PARAMS}"
        )));
    }

    // Analytic pass.
    let mut tape = Tape::new();
    let params = store.attach(&mut tape);
    let loss = loss_fn(&mut tape, &params)?;
    if tape.shape(loss) != (1, 1) {
        return Err(NeuralError::Shape {
            op: "grad_check".into(),
            detail: format!("loss must be a scalar, got {:?}", tape.shape(loss)),
        });
    }
    if !tape.value(loss)[0].is_finite() {
        return Err(NeuralError::NonFinite { what: "loss value".into(), block: "-".into() });
    }
    tape.backward(loss);
    let analytic = store.gradients(&tape, &params)?;

    let eval = |work: &ParamStore| -> Result<f64, NeuralError> {
        let mut tape = Tape::new();
        let params = work.attach(&mut tape);
        let loss = loss_fn(&mut tape, &params)?;
        let v = tape.value(loss)[0];
        if !v.is_finite() {
            return Err(NeuralError::NonFinite { what: "loss value".into(), block: "-".into() });
        }
        Ok(v)
    };

    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_block: String::new(),
        worst_index: 0,
        n_checked: 0,
    };
    let names: Vec<String> = store.blocks().iter().map(|b| b.name.clone()).collect();
    for (b, name) in names.iter().enumerate() {
        let base = store.get(name).expect("block exists").data.clone();
        for i in 0..base.len() {
            let mut hi = base.clone();
            hi[i] += epsilon;
            work.set(name, hi);
            let up = eval(&work)?;
            let mut lo = base.clone();
            lo[i] -= epsilon;
            work.set(name, lo);
            let down = eval(&work)?;
            work.set(name, base.clone());
            let numeric = (up - down) / (2.0 * epsilon);
            let a = analytic[b][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5);
            report.n_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_block = name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}
