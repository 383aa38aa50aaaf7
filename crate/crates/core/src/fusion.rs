//! Cross-graph experience vectors and the global job/resume representations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Which graph each experience attention reads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Wiring {
    /// The summary of the job graph steers attention over the resume graph,
    /// and vice versa.
    #[default]
    Cross,
    /// Each summary steers attention over the graph it was built from.
    Direct,
}

/// `α_i = vᵀ σ(W g_i + c)` over the related nodes, `V = Σ α_i g_i`.
#[derive(Clone, Debug)]
pub struct SoftMap {
    pub v: ParamId,
    pub w: ParamId,
}

impl SoftMap {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, d: usize, std: f64, rng: &mut R) -> Result<Self> {
        Ok(Self {
            v: store.add_gaussian(format!("{prefix}.v"), &[d, 1], std, rng)?,
            w: store.add_gaussian(format!("{prefix}.w"), &[d, d], std, rng)?,
        })
    }

    /// `states: [q + 1, d]` with the current entity in row 0, which does not
    /// take part. Returns `V: [1, d]` (zero when `q = 0`) and the `[q, 1]`
    /// weights when there are related nodes.
    pub fn map(&self, tape: &mut Tape<'_>, states: Var, c: ParamId, normalize: bool) -> Result<(Var, Option<Var>)> {
        let (nodes, d) = (tape.value(states).rows(), tape.value(states).cols());
        if nodes < 2 {
            return Ok((tape.constant(Tensor::zeros(&[1, d])), None));
        }
        let related = tape.slice_rows(states, 1, nodes)?;
        let h = tape.linear(related, self.w, Some(c))?;
        let h = tape.sigmoid(h);
        let mut alpha = tape.linear(h, self.v, None)?;
        if normalize {
            let row = tape.transpose(alpha)?;
            let row = tape.softmax(row)?;
            alpha = tape.transpose(row)?;
        }
        let at = tape.transpose(alpha)?;
        let mapped = tape.matmul(at, related)?;
        Ok((mapped, Some(alpha)))
    }
}

/// `f_t = vᵀ tanh(W V + U g_t)`, softmax over every node including the
/// current one, `e = Σ β_t g_t`.
#[derive(Clone, Debug)]
pub struct ExperienceAttention {
    pub w: ParamId,
    pub u: ParamId,
    pub v: ParamId,
}

impl ExperienceAttention {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, d: usize, std: f64, rng: &mut R) -> Result<Self> {
        Ok(Self {
            w: store.add_gaussian(format!("{prefix}.w"), &[d, d], std, rng)?,
            u: store.add_gaussian(format!("{prefix}.u"), &[d, d], std, rng)?,
            v: store.add_gaussian(format!("{prefix}.v"), &[d, 1], std, rng)?,
        })
    }

    /// Returns `e: [1, d]` and the `[1, nodes]` weights.
    pub fn attend(&self, tape: &mut Tape<'_>, states: Var, context: Var) -> Result<(Var, Var)> {
        let ctx = tape.linear(context, self.w, None)?;
        let own = tape.linear(states, self.u, None)?;
        let h = tape.add_row(own, ctx)?;
        let h = tape.tanh(h);
        let f = tape.linear(h, self.v, None)?;
        let f = tape.transpose(f)?;
        let weights = tape.softmax(f)?;
        let e = tape.matmul(weights, states)?;
        Ok((e, weights))
    }
}

/// `tanh(W [g₀; e] + b)`.
#[derive(Clone, Debug)]
pub struct Fuse {
    pub w: ParamId,
    pub b: ParamId,
}

impl Fuse {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, d: usize, std: f64, rng: &mut R) -> Result<Self> {
        Ok(Self {
            w: store.add_gaussian(format!("{prefix}.w"), &[2 * d, d], std, rng)?,
            b: store.add_gaussian(format!("{prefix}.b"), &[1, d], std, rng)?,
        })
    }

    pub fn fuse(&self, tape: &mut Tape<'_>, current: Var, experience: Var) -> Result<Var> {
        let x = tape.concat_cols(&[current, experience])?;
        let y = tape.linear(x, self.w, Some(self.b))?;
        Ok(tape.tanh(y))
    }
}

#[derive(Clone, Debug)]
pub struct Fusion {
    /// Maps job-graph nodes (`v_j`, `W_j`).
    pub map_jobs: SoftMap,
    /// Maps resume-graph nodes (`q_r`, `W_r`).
    pub map_resumes: SoftMap,
    /// Bias shared by both maps.
    pub c: ParamId,
    /// Attention steered by the job-graph summary.
    pub beta: ExperienceAttention,
    /// Attention steered by the resume-graph summary.
    pub delta: ExperienceAttention,
    pub fuse_job: Fuse,
    pub fuse_resume: Fuse,
    pub normalize: bool,
    pub wiring: Wiring,
}

#[derive(Clone, Copy, Debug)]
pub struct GlobalRepresentation {
    /// `H^J_global`, `[1, d]`.
    pub job: Var,
    /// `H^R_global`, `[1, d]`.
    pub resume: Var,
    pub experience_job: Var,
    pub experience_resume: Var,
    /// Job-graph map weights `α`, `[q, 1]`.
    pub alpha: Option<Var>,
    /// Resume-graph map weights `γ`, `[p, 1]`.
    pub gamma: Option<Var>,
    /// `[1, nodes]` weights of the attention steered by the job-graph summary.
    pub beta: Var,
    /// `[1, nodes]` weights of the attention steered by the resume-graph summary.
    pub delta: Var,
}

impl Fusion {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        normalize: bool,
        wiring: Wiring,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            map_jobs: SoftMap::new(store, &format!("{prefix}.map_j"), d, std, rng)?,
            map_resumes: SoftMap::new(store, &format!("{prefix}.map_r"), d, std, rng)?,
            c: store.add_gaussian(format!("{prefix}.c"), &[1, d], std, rng)?,
            beta: ExperienceAttention::new(store, &format!("{prefix}.beta"), d, std, rng)?,
            delta: ExperienceAttention::new(store, &format!("{prefix}.delta"), d, std, rng)?,
            fuse_job: Fuse::new(store, &format!("{prefix}.fuse_j"), d, std, rng)?,
            fuse_resume: Fuse::new(store, &format!("{prefix}.fuse_r"), d, std, rng)?,
            normalize,
            wiring,
        })
    }

    /// `job_states: [q + 1, d]`, `resume_states: [p + 1, d]`, current entities in row 0.
    pub fn forward(&self, tape: &mut Tape<'_>, job_states: Var, resume_states: Var) -> Result<GlobalRepresentation> {
        let (from_jobs, alpha) = self.map_jobs.map(tape, job_states, self.c, self.normalize)?;
        let (from_resumes, gamma) = self.map_resumes.map(tape, resume_states, self.c, self.normalize)?;
        let (beta_graph, delta_graph) = match self.wiring {
            Wiring::Cross => (resume_states, job_states),
            Wiring::Direct => (job_states, resume_states),
        };
        let (e_beta, beta) = self.beta.attend(tape, beta_graph, from_jobs)?;
        let (e_delta, delta) = self.delta.attend(tape, delta_graph, from_resumes)?;
        let (experience_job, experience_resume) = match self.wiring {
            Wiring::Cross => (e_delta, e_beta),
            Wiring::Direct => (e_beta, e_delta),
        };
        let g_job = tape.slice_rows(job_states, 0, 1)?;
        let g_resume = tape.slice_rows(resume_states, 0, 1)?;
        let job = self.fuse_job.fuse(tape, g_job, experience_job)?;
        let resume = self.fuse_resume.fuse(tape, g_resume, experience_resume)?;
        Ok(GlobalRepresentation {
            job,
            resume,
            experience_job,
            experience_resume,
            alpha,
            gamma,
            beta,
            delta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_rows(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> Tensor {
        let data = (0..rows * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        Tensor::matrix(rows, d, data).unwrap()
    }

    fn setup(seed: u64, d: usize) -> (ParamStore, Fusion, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let f = Fusion::new(&mut store, "fu", d, false, Wiring::Cross, 0.5, &mut rng).unwrap();
        (store, f, rng)
    }

    #[test]
    fn no_related_nodes_maps_to_zero() {
        let (store, f, mut rng) = setup(0, 3);
        let mut tape = Tape::new(&store);
        let g = tape.constant(random_rows(&mut rng, 1, 3));
        let (v, alpha) = f.map_jobs.map(&mut tape, g, f.c, false).unwrap();
        assert!(alpha.is_none());
        assert_eq!(tape.value(v).data(), &[0.0; 3]);
    }

    #[test]
    fn map_weights_are_unnormalized() {
        let (mut store, f, mut rng) = setup(1, 2);
        let g = random_rows(&mut rng, 2, 2);
        store.value_mut(f.map_jobs.v).data_mut().fill(0.0);
        let mut tape = Tape::new(&store);
        let s = tape.constant(g.clone());
        let (v, _) = f.map_jobs.map(&mut tape, s, f.c, false).unwrap();
        assert_eq!(tape.value(v).data(), &[0.0, 0.0]);

        // σ(·) → 1 with huge bias, so α₁ = Σ v = 1 and V = g₁
        store.value_mut(f.c).data_mut().fill(1e3);
        store.value_mut(f.map_jobs.v).data_mut().copy_from_slice(&[0.25, 0.75]);
        let mut tape = Tape::new(&store);
        let s = tape.constant(g.clone());
        let (v, alpha) = f.map_jobs.map(&mut tape, s, f.c, false).unwrap();
        assert!((tape.value(alpha.unwrap()).item() - 1.0).abs() < 1e-12);
        assert!(tape.value(v).max_abs_diff(&Tensor::row(g.row_slice(1).to_vec())) < 1e-12);
    }

    #[test]
    fn normalized_map_weights_sum_to_one() {
        let (store, f, mut rng) = setup(2, 3);
        let mut tape = Tape::new(&store);
        let s = tape.constant(random_rows(&mut rng, 4, 3));
        let (_, alpha) = f.map_jobs.map(&mut tape, s, f.c, true).unwrap();
        let total: f64 = tape.value(alpha.unwrap()).data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singleton_and_identical_attention() {
        let (store, f, mut rng) = setup(3, 3);
        let one = random_rows(&mut rng, 1, 3);
        let mut tape = Tape::new(&store);
        let g = tape.constant(one.clone());
        let ctx = tape.constant(random_rows(&mut rng, 1, 3));
        let (e, w) = f.beta.attend(&mut tape, g, ctx).unwrap();
        assert_eq!(tape.value(w).data(), &[1.0]);
        assert_eq!(tape.value(e), &one);

        let same = tape.constant(Tensor::from_rows(&vec![one.row_slice(0).to_vec(); 4]).unwrap());
        let (e, _) = f.delta.attend(&mut tape, same, ctx).unwrap();
        assert!(tape.value(e).max_abs_diff(&one) < 1e-12);
    }

    #[test]
    fn zero_fuse_weights_give_zero() {
        let (mut store, f, mut rng) = setup(4, 3);
        store.value_mut(f.fuse_job.w).data_mut().fill(0.0);
        store.value_mut(f.fuse_job.b).data_mut().fill(0.0);
        let mut tape = Tape::new(&store);
        let g = tape.constant(random_rows(&mut rng, 1, 3));
        let e = tape.constant(random_rows(&mut rng, 1, 3));
        let h = f.fuse_job.fuse(&mut tape, g, e).unwrap();
        assert_eq!(tape.value(h).data(), &[0.0; 3]);
        let h = f.fuse_resume.fuse(&mut tape, g, e).unwrap();
        assert!(tape.value(h).data().iter().all(|x| x.abs() < 1.0));
    }

    #[test]
    fn history_free_pair_depends_on_current_nodes_only() {
        let (store, f, mut rng) = setup(5, 3);
        let gj = random_rows(&mut rng, 1, 3);
        let gr = random_rows(&mut rng, 1, 3);
        let mut tape = Tape::new(&store);
        let (a, b) = (tape.constant(gj), tape.constant(gr));
        let out = f.forward(&mut tape, a, b).unwrap();
        assert_eq!(tape.value(out.beta).data(), &[1.0]);
        assert_eq!(tape.value(out.experience_job), tape.value(a));
        assert_eq!(tape.value(out.experience_resume), tape.value(b));
    }

    #[test]
    fn full_chain_grad_check() {
        for wiring in [Wiring::Cross, Wiring::Direct] {
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let mut store = ParamStore::new();
            let f = Fusion::new(&mut store, "fu", 3, false, wiring, 0.5, &mut rng).unwrap();
            let gj = random_rows(&mut rng, 3, 3);
            let gr = random_rows(&mut rng, 2, 3);
            let report = grad_check(
                &mut store,
                |t| {
                    let a = t.leaf(gj.clone());
                    let b = t.leaf(gr.clone());
                    let out = f.forward(t, a, b)?;
                    let both = t.concat_cols(&[out.job, out.resume])?;
                    let sq = t.mul(both, both)?;
                    Ok(t.sum(sq))
                },
                1e-4,
            )
            .unwrap();
            assert!(report.passed(), "{wiring:?}: {:?}", report.worst());
        }
    }
}
