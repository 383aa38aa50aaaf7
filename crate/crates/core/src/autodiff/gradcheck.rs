use super::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Compares analytic gradients of the scalar produced by `fragment` against
/// central differences for every element of every parameter in `store`.
///
/// Relative error is `|analytic − numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(store: &mut ParamStore, mut fragment: F, tolerance: f64) -> Result<GradCheckReport>
where
    F: for<'a> FnMut(&mut Tape<'a>) -> Result<Var>,
{
    grad_check_with(store, &mut fragment, tolerance, |_| {})
}

/// Like [`grad_check`], with a hook applied to the analytic tape (used to
/// install corrupted backward rules in negative controls).
pub fn grad_check_with<F>(
    store: &mut ParamStore,
    fragment: &mut F,
    tolerance: f64,
    prepare: impl Fn(&mut Tape<'_>),
) -> Result<GradCheckReport>
where
    F: for<'a> FnMut(&mut Tape<'a>) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new(store);
        prepare(&mut tape);
        let loss = fragment(&mut tape)?;
        if tape.is_stochastic() {
            return Err(Error::StochasticGradCheck(
                "the fragment applies dropout; disable it (eval mode) before checking gradients",
            ));
        }
        let grads = tape.backward(loss)?;
        store
            .iter()
            .map(|(id, _)| grads.param_or_zero(store, id))
            .collect::<Vec<_>>()
    };

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(store);
        let loss = fragment(&mut tape)?;
        Ok(tape.value(loss).item())
    };

    let mut params = Vec::with_capacity(store.len());
    for (pid, grad) in analytic.iter().enumerate() {
        let id = super::ParamId(pid);
        let name = store.get(id).name.clone();
        let mut check = ParamCheck {
            name,
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..store.value(id).len() {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + FD_STEP;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig - FD_STEP;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = grad.data()[i];
            let err = (a - numeric).abs() / numeric.abs().max(1.0);
            if err > check.max_rel_error || i == 0 {
                check.max_rel_error = err.max(check.max_rel_error);
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        params.push(check);
    }
    Ok(GradCheckReport { params, tolerance })
}
