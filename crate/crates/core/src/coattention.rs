//! Local matching between requirement and experience sentence vectors.
//!
//! Matrices act on row vectors (`x · W`), so a weight written `W h` in column
//! notation is stored here as its transpose.

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct CoAttention {
    pub w1: ParamId,
    pub u1: ParamId,
    pub v1: ParamId,
    pub w2: ParamId,
    pub u2: ParamId,
    pub v2: ParamId,
    pub w3: ParamId,
    pub b3: ParamId,
    pub v_zeta: ParamId,
    pub w4: ParamId,
    pub b4: ParamId,
    pub v_mu: ParamId,
}

/// Output of [`CoAttention::cross_attend`].
#[derive(Clone, Copy, Debug)]
pub struct CrossAttention {
    /// `h^J`, one requirement mixture per experience: `[n, d]`.
    pub attended_job: Var,
    /// `h^R`, one experience mixture per requirement: `[m, d]`.
    pub attended_resume: Var,
    /// `η`, `[n, m]`, rows sum to one.
    pub eta: Var,
    /// `ε`, `[m, n]`, rows sum to one.
    pub epsilon: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LocalRepresentation {
    /// `H^J_local`, `[1, d]`.
    pub job: Var,
    /// `H^R_local`, `[1, d]`.
    pub resume: Var,
    /// `ζ`, `[1, n]`.
    pub zeta: Var,
    /// `μ`, `[1, m]`.
    pub mu: Var,
    pub cross: CrossAttention,
}

impl CoAttention {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, d: usize, std: f64, rng: &mut R) -> Result<Self> {
        let mut reg = |name: &str, shape: &[usize]| store.add_gaussian(format!("{prefix}.{name}"), shape, std, rng);
        Ok(Self {
            w1: reg("w1", &[d, d])?,
            u1: reg("u1", &[d, d])?,
            v1: reg("v1", &[d, 1])?,
            w2: reg("w2", &[d, d])?,
            u2: reg("u2", &[d, d])?,
            v2: reg("v2", &[d, 1])?,
            w3: reg("w3", &[d, d])?,
            b3: reg("b3", &[1, d])?,
            v_zeta: reg("v_zeta", &[d, 1])?,
            w4: reg("w4", &[d, d])?,
            b4: reg("b4", &[1, d])?,
            v_mu: reg("v_mu", &[d, 1])?,
        })
    }

    /// `requirements: [m, d]`, `experiences: [n, d]`.
    pub fn cross_attend(&self, tape: &mut Tape<'_>, requirements: Var, experiences: Var) -> Result<CrossAttention> {
        let m = tape.value(requirements).rows();
        let n = tape.value(experiences).rows();
        if m == 0 || n == 0 {
            return Err(Error::Empty("co-attention needs at least one sentence per side"));
        }

        let query = tape.linear(experiences, self.w1, None)?;
        let key = tape.linear(requirements, self.u1, None)?;
        let e = pair_scores(tape, query, key, self.v1)?;
        let eta = tape.softmax(e)?;
        let attended_job = tape.matmul(eta, requirements)?;

        let query = tape.linear(requirements, self.w2, None)?;
        let key = tape.linear(experiences, self.u2, None)?;
        let e = pair_scores(tape, query, key, self.v2)?;
        let epsilon = tape.softmax(e)?;
        let attended_resume = tape.matmul(epsilon, experiences)?;

        Ok(CrossAttention {
            attended_job,
            attended_resume,
            eta,
            epsilon,
        })
    }

    /// Importance pooling of both attended sides. Returns `(H^J_local, H^R_local, ζ, μ)`.
    pub fn pool_local(
        &self,
        tape: &mut Tape<'_>,
        attended_job: Var,
        attended_resume: Var,
    ) -> Result<(Var, Var, Var, Var)> {
        let (job, zeta) = importance_pool(tape, attended_job, self.w3, self.b3, self.v_zeta)?;
        let (resume, mu) = importance_pool(tape, attended_resume, self.w4, self.b4, self.v_mu)?;
        Ok((job, resume, zeta, mu))
    }

    pub fn forward(&self, tape: &mut Tape<'_>, requirements: Var, experiences: Var) -> Result<LocalRepresentation> {
        let cross = self.cross_attend(tape, requirements, experiences)?;
        let (job, resume, zeta, mu) = self.pool_local(tape, cross.attended_job, cross.attended_resume)?;
        Ok(LocalRepresentation {
            job,
            resume,
            zeta,
            mu,
            cross,
        })
    }
}

/// `s[l][k] = vᵀ tanh(query_l + key_k)` as an `[rows(query), rows(key)]` matrix.
fn pair_scores(tape: &mut Tape<'_>, query: Var, key: Var, v: ParamId) -> Result<Var> {
    let (n, m) = (tape.value(query).rows(), tape.value(key).rows());
    let qi: Vec<Option<usize>> = (0..n * m).map(|i| Some(i / m)).collect();
    let ki: Vec<Option<usize>> = (0..n * m).map(|i| Some(i % m)).collect();
    let q = tape.gather_rows(query, &qi)?;
    let k = tape.gather_rows(key, &ki)?;
    let s = tape.add(q, k)?;
    let s = tape.tanh(s);
    let s = tape.linear(s, v, None)?;
    tape.reshape(s, &[n, m])
}

/// Softmax-weighted sum of rows scored by `vᵀ tanh(W x + b)`; returns the
/// pooled `[1, d]` row and the `[1, rows]` weights.
fn importance_pool(tape: &mut Tape<'_>, rows: Var, w: ParamId, b: ParamId, v: ParamId) -> Result<(Var, Var)> {
    let h = tape.linear(rows, w, Some(b))?;
    let h = tape.tanh(h);
    let c = tape.linear(h, v, None)?;
    let c = tape.transpose(c)?;
    let weights = tape.softmax(c)?;
    let pooled = tape.matmul(weights, rows)?;
    Ok((pooled, weights))
}
