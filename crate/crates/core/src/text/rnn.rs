//! Bidirectional gated recurrent encoder and additive attention pooling.

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One direction of a gated recurrent unit. Gate order is update, reset,
/// candidate; input weights are `[in, hidden]`, recurrent weights `[hidden, hidden]`.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub input: [ParamId; 3],
    pub recurrent: [ParamId; 3],
    pub bias: [ParamId; 3],
    pub hidden: usize,
}

impl GruCell {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut reg = |name: &str, shape: &[usize]| store.add_gaussian(format!("{prefix}.{name}"), shape, std, rng);
        Ok(Self {
            input: [
                reg("w_z", &[input, hidden])?,
                reg("w_r", &[input, hidden])?,
                reg("w_h", &[input, hidden])?,
            ],
            recurrent: [
                reg("u_z", &[hidden, hidden])?,
                reg("u_r", &[hidden, hidden])?,
                reg("u_h", &[hidden, hidden])?,
            ],
            bias: [
                reg("b_z", &[1, hidden])?,
                reg("b_r", &[1, hidden])?,
                reg("b_h", &[1, hidden])?,
            ],
            hidden,
        })
    }

    /// `x: [B, in]`, `h: [B, hidden]` → next state.
    pub fn step(&self, tape: &mut Tape<'_>, x: Var, h: Var) -> Result<Var> {
        let gate = |tape: &mut Tape<'_>, k: usize, hh: Var| -> Result<Var> {
            let xi = tape.linear(x, self.input[k], Some(self.bias[k]))?;
            let u = tape.param(self.recurrent[k]);
            let hu = tape.matmul(hh, u)?;
            tape.add(xi, hu)
        };
        let z = gate(tape, 0, h)?;
        let z = tape.sigmoid(z);
        let r = gate(tape, 1, h)?;
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h)?;
        let cand = gate(tape, 2, rh)?;
        let cand = tape.tanh(cand);
        // h' = h + z ⊙ (cand − h)
        let delta = tape.sub(cand, h)?;
        let step = tape.mul(z, delta)?;
        tape.add(h, step)
    }
}

#[derive(Clone, Debug)]
pub struct BiGru {
    pub forward: GruCell,
    pub backward: GruCell,
}

impl BiGru {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            forward: GruCell::new(store, &format!("{prefix}.fwd"), input, hidden, std, rng)?,
            backward: GruCell::new(store, &format!("{prefix}.bwd"), input, hidden, std, rng)?,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.forward.hidden + self.backward.hidden
    }

    /// Runs both directions over `steps` (each `[B, in]`, one per position).
    /// Row `b` is real for positions `< lengths[b]`; past that its state is
    /// frozen, so padding never leaks into real positions. Returns one
    /// `[B, 2·hidden]` state per position.
    pub fn run(&self, tape: &mut Tape<'_>, steps: &[Var], lengths: &[usize]) -> Result<Vec<Var>> {
        if steps.is_empty() || lengths.contains(&0) {
            return Err(Error::Empty("recurrent encoder needs a nonempty sequence"));
        }
        let batch = lengths.len();
        let masks: Vec<Option<Var>> = (0..steps.len())
            .map(|t| step_mask(tape, lengths, t, self.forward.hidden))
            .collect();

        let mut fwd = Vec::with_capacity(steps.len());
        let mut h = tape.constant(Tensor::zeros(&[batch, self.forward.hidden]));
        for (t, &x) in steps.iter().enumerate() {
            h = masked_step(tape, &self.forward, x, h, masks[t])?;
            fwd.push(h);
        }

        let bmasks: Vec<Option<Var>> = if self.backward.hidden == self.forward.hidden {
            masks
        } else {
            (0..steps.len())
                .map(|t| step_mask(tape, lengths, t, self.backward.hidden))
                .collect()
        };
        let mut bwd = vec![None; steps.len()];
        let mut h = tape.constant(Tensor::zeros(&[batch, self.backward.hidden]));
        for t in (0..steps.len()).rev() {
            h = masked_step(tape, &self.backward, steps[t], h, bmasks[t])?;
            bwd[t] = Some(h);
        }

        fwd.into_iter()
            .zip(bwd)
            .map(|(f, b)| tape.concat_cols(&[f, b.expect("filled")]))
            .collect()
    }
}

fn step_mask(tape: &mut Tape<'_>, lengths: &[usize], t: usize, hidden: usize) -> Option<Var> {
    if lengths.iter().all(|&l| t < l) {
        return None;
    }
    let mut m = Vec::with_capacity(lengths.len() * hidden);
    for &l in lengths {
        let v = if t < l { 1.0 } else { 0.0 };
        m.extend(std::iter::repeat_n(v, hidden));
    }
    Some(tape.constant(Tensor::matrix(lengths.len(), hidden, m).expect("mask shape")))
}

fn masked_step(tape: &mut Tape<'_>, cell: &GruCell, x: Var, h: Var, mask: Option<Var>) -> Result<Var> {
    let next = cell.step(tape, x, h)?;
    match mask {
        None => Ok(next),
        Some(m) => {
            let delta = tape.sub(next, h)?;
            let kept = tape.mul(m, delta)?;
            tape.add(h, kept)
        }
    }
}

/// Additive attention pooling: `weights = softmax(vᵀ tanh(W s_t))` over the
/// unmasked steps, output `Σ weights_t s_t`.
#[derive(Clone, Debug)]
pub struct AttentionPool {
    pub w: ParamId,
    pub v: ParamId,
}

impl AttentionPool {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, dim: usize, std: f64, rng: &mut R) -> Result<Self> {
        Ok(Self {
            w: store.add_gaussian(format!("{prefix}.w"), &[dim, dim], std, rng)?,
            v: store.add_gaussian(format!("{prefix}.v"), &[dim, 1], std, rng)?,
        })
    }

    /// Pools one sequence `states: [len, k]`; only the first `valid` rows take
    /// part. Returns the pooled `[1, k]` row and the `[1, len]` weights.
    pub fn pool(&self, tape: &mut Tape<'_>, states: Var, valid: usize) -> Result<(Var, Var)> {
        let len = tape.value(states).rows();
        if valid == 0 {
            return Err(Error::Empty("attention pooling over fully masked steps"));
        }
        let hidden = tape.linear(states, self.w, None)?;
        let hidden = tape.tanh(hidden);
        let scores = tape.linear(hidden, self.v, None)?;
        let scores = tape.transpose(scores)?;
        let mask: Vec<bool> = (0..len).map(|i| i < valid).collect();
        let weights = tape.softmax_masked(scores, Some(&mask))?;
        let pooled = tape.matmul(weights, states)?;
        Ok((pooled, weights))
    }

    /// Pools a batch given position-major states (each `[B, k]`). Returns the
    /// pooled `[B, k]` rows and the `[B, T]` weights.
    pub fn pool_steps(&self, tape: &mut Tape<'_>, steps: &[Var], lengths: &[usize]) -> Result<(Var, Var)> {
        if lengths.contains(&0) || steps.is_empty() {
            return Err(Error::Empty("attention pooling over fully masked steps"));
        }
        let mut scores = Vec::with_capacity(steps.len());
        for &s in steps {
            let h = tape.linear(s, self.w, None)?;
            let h = tape.tanh(h);
            scores.push(tape.linear(h, self.v, None)?);
        }
        let scores = tape.concat_cols(&scores)?;
        let t_max = steps.len();
        let mask: Vec<bool> = lengths.iter().flat_map(|&l| (0..t_max).map(move |t| t < l)).collect();
        let weights = tape.softmax_masked(scores, Some(&mask))?;
        let mut pooled = None;
        for (t, &s) in steps.iter().enumerate() {
            let w = tape.slice_cols(weights, t, t + 1)?;
            let part = tape.mul_col(s, w)?;
            pooled = Some(match pooled {
                None => part,
                Some(acc) => tape.add(acc, part)?,
            });
        }
        Ok((pooled.expect("nonempty"), weights))
    }
}
