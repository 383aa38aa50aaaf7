use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check_with, GradCheckReport, OpKind, ParamStore, Tape, Var};
use crate::coattention::CoAttention;
use crate::error::Result;
use crate::fusion::{Fusion, Wiring};
use crate::ggnn::{Ggnn, NodeTable};
use crate::graph::{grad_check_similarity_encoder, SimilarityPair, SupervisedConfig};
use crate::model::{GraphInput, ModelConfig, Network, PairInput};
use crate::tensor::Tensor;
use crate::text::{embedding_table, Document, DocumentEncoder, EncoderConfig, SentenceBatch, SentenceEncoder};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Library modules and whether they hold differentiable code.
pub const MODULES: [(&str, bool); 9] = [
    ("autodiff", true),
    ("text", true),
    ("coattention", true),
    ("graph", true),
    ("ggnn", true),
    ("fusion", true),
    ("model", true),
    ("corpus", false),
    ("harness", false),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckCase {
    pub module: String,
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
    /// Parameter holding the largest error, with its analytic and numeric values.
    pub worst: Option<WorstEntry>,
    /// Set when the fragment itself failed to run.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorstEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuleCoverage {
    pub module: String,
    pub cases: usize,
    pub differentiable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSummary {
    pub tolerance: f64,
    /// Op kind whose backward rule was deliberately perturbed, if any.
    pub corrupted: Option<String>,
    pub modules: Vec<ModuleCoverage>,
    pub cases: Vec<CheckCase>,
    pub seconds: f64,
}

impl GradcheckSummary {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckCase> {
        self.cases.iter().filter(|c| !c.passed)
    }
}

/// Runs every gradient check at toy sizes. `corrupt` perturbs one op kind's
/// backward rule on every analytic tape (a negative control).
pub fn gradcheck_suite(seed: u64, corrupt: Option<OpKind>) -> GradcheckSummary {
    let start = Instant::now();
    let tol = GRADCHECK_TOLERANCE;
    let hook = move |tape: &mut Tape<'_>| {
        if let Some(kind) = corrupt {
            tape.corrupt_backward(kind);
        }
    };
    let mut cases = Vec::new();
    let mut push = |module: &str, name: &str, report: Result<GradCheckReport>| {
        cases.push(to_case(module, name, report));
    };

    for kind in OpKind::DIFFERENTIABLE {
        push("autodiff", kind.name(), op_case(kind, seed, &hook));
    }
    push("text", "sentence_encoder", sentence_case(seed, &hook));
    push("text", "document_encoder", document_case(seed, &hook));
    push("coattention", "local_matching", coattention_case(seed, &hook));
    push("graph", "supervised_similarity", similarity_case(seed, &hook));
    push("ggnn", "propagation", ggnn_case(seed, &hook));
    for (name, normalize, wiring) in [
        ("cross_wiring", false, Wiring::Cross),
        ("direct_wiring_normalized", true, Wiring::Direct),
    ] {
        push("fusion", name, fusion_case(seed, normalize, wiring, &hook));
    }
    for (name, ratio) in [
        ("end_to_end", None),
        ("end_to_end_projected", Some(0.4)),
        ("text_only", Some(0.0)),
    ] {
        push("model", name, network_case(seed, ratio, &hook));
    }

    let modules = MODULES
        .iter()
        .map(|&(module, differentiable)| ModuleCoverage {
            module: module.into(),
            cases: cases.iter().filter(|c| c.module == module).count(),
            differentiable,
        })
        .collect();
    GradcheckSummary {
        tolerance: tol,
        corrupted: corrupt.map(|k| k.name().to_string()),
        modules,
        cases,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn to_case(module: &str, name: &str, report: Result<GradCheckReport>) -> CheckCase {
    match report {
        Ok(r) => CheckCase {
            module: module.into(),
            name: name.into(),
            max_rel_error: r.max_rel_error(),
            passed: r.passed(),
            worst: r.worst().map(|w| WorstEntry {
                param: w.name.clone(),
                index: w.worst_index,
                analytic: w.analytic,
                numeric: w.numeric,
            }),
            error: None,
        },
        Err(e) => CheckCase {
            module: module.into(),
            name: name.into(),
            max_rel_error: f64::INFINITY,
            passed: false,
            worst: None,
            error: Some(e.to_string()),
        },
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("sized")
}

/// `Σ x ⊙ C` for a fixed random `C`, so every output entry gets a distinct weight.
fn weighted_sum(tape: &mut Tape<'_>, x: Var, weights: &Tensor) -> Result<Var> {
    let c = tape.constant(weights.reshaped(tape.shape(x))?);
    let p = tape.mul(x, c)?;
    Ok(tape.sum(p))
}

fn weights_for(rng: &mut ChaCha8Rng, len: usize) -> Tensor {
    uniform(rng, &[len], -1.0, 1.0)
}

fn op_case(kind: OpKind, seed: u64, hook: &impl Fn(&mut Tape<'_>)) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ kind as u64);
    let mut store = ParamStore::new();
    let mut input = |name: &str, shape: &[usize], lo: f64, hi: f64| store.add(name, uniform(&mut rng, shape, lo, hi));
    let a = input("a", &[3, 4], -2.0, 2.0)?;
    let b = match kind {
        OpKind::MatMul => input("b", &[4, 2], -2.0, 2.0)?,
        OpKind::AddRow => input("b", &[1, 4], -2.0, 2.0)?,
        OpKind::MulCol => input("b", &[3, 1], -2.0, 2.0)?,
        OpKind::ConcatCols => input("b", &[3, 2], -2.0, 2.0)?,
        OpKind::ConcatRows => input("b", &[1, 4], -2.0, 2.0)?,
        OpKind::Bce => input("b", &[4, 1], 0.05, 0.95)?,
        _ => input("b", &[3, 4], -2.0, 2.0)?,
    };
    let mut wrng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let weights = weights_for(&mut wrng, 32);
    let mask: Vec<f64> = (0..12).map(|i| if i % 3 == 0 { 0.0 } else { 1.5 }).collect();
    let mut fragment = |tape: &mut Tape<'_>| -> Result<Var> {
        let (va, vb) = (tape.param(a), tape.param(b));
        let out = match kind {
            OpKind::MatMul => tape.matmul(va, vb)?,
            OpKind::Add => tape.add(va, vb)?,
            OpKind::Sub => tape.sub(va, vb)?,
            OpKind::Mul => tape.mul(va, vb)?,
            OpKind::AddRow => tape.add_row(va, vb)?,
            OpKind::MulCol => tape.mul_col(va, vb)?,
            OpKind::Affine => tape.affine(va, -1.7, 0.3),
            OpKind::Tanh => tape.tanh(va),
            OpKind::Sigmoid => tape.sigmoid(va),
            OpKind::Softmax => tape.softmax(va)?,
            OpKind::ConcatCols => tape.concat_cols(&[va, vb])?,
            OpKind::ConcatRows => tape.concat_rows(&[va, vb])?,
            OpKind::SliceCols => tape.slice_cols(va, 1, 3)?,
            OpKind::SliceRows => tape.slice_rows(va, 1, 3)?,
            OpKind::GatherRows => tape.gather_rows(va, &[Some(2), None, Some(0), Some(2)])?,
            OpKind::Transpose => tape.transpose(va)?,
            OpKind::Sum => tape.sum(va),
            OpKind::Mean => tape.mean(va),
            OpKind::Reshape => tape.reshape(va, &[2, 6])?,
            OpKind::Dropout => tape.dropout_with_mask(va, mask.clone())?,
            OpKind::Cosine => tape.cosine(va, vb)?,
            OpKind::Bce => return tape.bce(vb, &[1.0, 0.0, 0.0, 1.0]),
            OpKind::Leaf | OpKind::Constant | OpKind::Param => unreachable!("not differentiable ops"),
        };
        let n = tape.value(out).len();
        weighted_sum(tape, out, &Tensor::row(weights.data()[..n].to_vec()))
    };
    grad_check_with(&mut store, &mut fragment, GRADCHECK_TOLERANCE, hook)
}

fn toy_encoder() -> EncoderConfig {
    EncoderConfig {
        word_dim: 3,
        hidden: 2,
        sentence_hidden: 2,
        out_dim: 3,
        max_sentence_len: 8,
        cell: "gru".into(),
    }
}

fn sentence_case(seed: u64, hook: &impl Fn(&mut Tape<'_>)) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let cfg = toy_encoder();
    let table = embedding_table(&mut store, "embedding", 6, cfg.word_dim, 0.5, &mut rng)?;
    let encoder = SentenceEncoder::new(&mut store, "sentence", table, &cfg, 0.5, &mut rng)?;
    let weights = weights_for(&mut rng, 6);
    let sentences: [&[u32]; 2] = [&[2, 3, 5], &[4]];
    let batch = SentenceBatch::new(&sentences)?;
    grad_check_with(
        &mut store,
        &mut |tape| {
            let v = encoder.encode(tape, &batch)?;
            weighted_sum(tape, v, &weights)
        },
        GRADCHECK_TOLERANCE,
        hook,
    )
}

fn document_case(seed: u64, hook: &impl Fn(&mut Tape<'_>)) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let cfg = toy_encoder();
    let table = embedding_table(&mut store, "embedding", 6, cfg.word_dim, 0.5, &mut rng)?;
    let encoder = DocumentEncoder::new(&mut store, "document", table, &cfg, 0.5, &mut rng)?;
    let weights = weights_for(&mut rng, 6);
    let docs = [
        Document::new(vec![vec![2, 3], vec![5, 4, 2]])?,
        Document::new(vec![vec![4]])?,
    ];
    let refs: Vec<&Document> = docs.iter().collect();
    grad_check_with(
        &mut store,
        &mut |tape| {
            let v = encoder.encode_documents(tape, &refs)?.vectors;
            weighted_sum(tape, v, &weights)
        },
        GRADCHECK_TOLERANCE,
        hook,
    )
}

fn coattention_case(seed: u64, hook: &impl Fn(&mut Tape<'_>)) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 3;
    let mut store = ParamStore::new();
    let co = CoAttention::new(&mut store, "coattention", d, 0.5, &mut rng)?;
    let req = store.add("requirements", uniform(&mut rng, &[2, d], -2.0, 2.0))?;
    let exp = store.add("experiences", uniform(&mut rng, &[3, d], -2.0, 2.0))?;
    let weights = weights_for(&mut rng, 2 * d);
    grad_check_with(
        &mut store,
        &mut |tape| {
            let (r, e) = (tape.param(req), tape.param(exp));
            let local = co.forward(tape, r, e)?;
            let both = tape.concat_cols(&[local.job, local.resume])?;
            weighted_sum(tape, both, &weights)
        },
        GRADCHECK_TOLERANCE,
        hook,
    )
}

fn similarity_case(seed: u64, hook: &impl Fn(&mut Tape<'_>)) -> Result<GradCheckReport> {
    let docs = [
        Document::new(vec![vec![2, 3], vec![4]])?,
        Document::new(vec![vec![5, 2, 3]])?,
        Document::new(vec![vec![4, 4], vec![6]])?,
    ];
    let pairs = [
        SimilarityPair { a: 0, b: 1, label: 1 },
        SimilarityPair { a: 1, b: 2, label: 0 },
    ];
    let cfg = SupervisedConfig {
        encoder: toy_encoder(),
        seed,
        ..SupervisedConfig::default()
    };
    grad_check_similarity_encoder(&docs, &pairs, &cfg, 7, GRADCHECK_TOLERANCE, hook)
}

fn graph_adjacency(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = rng.gen_range(-1.0..1.0);
            a[i * n + j] = v;
            a[j * n + i] = v;
        }
    }
    Tensor::matrix(n, n, a).expect("square")
}

fn ggnn_case(seed: u64, hook: &impl Fn(&mut Tape<'_>)) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 3;
    let mut store = ParamStore::new();
    let table = NodeTable::new(&mut store, "nodes", 4, d, 0.5, &mut rng)?;
    let ggnn = Ggnn::new(&mut store, "ggnn", d, 2, 0.5, &mut rng)?;
    let adjacency = graph_adjacency(&mut rng, 3);
    let weights = weights_for(&mut rng, 3 * d);
    grad_check_with(
        &mut store,
        &mut |tape| {
            let g0 = table.lookup(tape, &[Some(1), Some(3), None])?;
            let a = tape.constant(adjacency.clone());
            let g = ggnn.run(tape, g0, a)?;
            weighted_sum(tape, g, &weights)
        },
        GRADCHECK_TOLERANCE,
        hook,
    )
}

fn fusion_case(seed: u64, normalize: bool, wiring: Wiring, hook: &impl Fn(&mut Tape<'_>)) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 3;
    let mut store = ParamStore::new();
    let fusion = Fusion::new(&mut store, "fusion", d, normalize, wiring, 0.5, &mut rng)?;
    let jobs = store.add("job_states", uniform(&mut rng, &[3, d], -2.0, 2.0))?;
    let resumes = store.add("resume_states", uniform(&mut rng, &[2, d], -2.0, 2.0))?;
    let weights = weights_for(&mut rng, 2 * d);
    grad_check_with(
        &mut store,
        &mut |tape| {
            let (j, r) = (tape.param(jobs), tape.param(resumes));
            let g = fusion.forward(tape, j, r)?;
            let both = tape.concat_cols(&[g.job, g.resume])?;
            weighted_sum(tape, both, &weights)
        },
        GRADCHECK_TOLERANCE,
        hook,
    )
}

/// The whole network's loss at d = 6, d₂ = 8 on two pairs with two
/// requirements and two experiences each and at most two related nodes.
fn network_case(seed: u64, ratio: Option<f64>, hook: &impl Fn(&mut Tape<'_>)) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig {
        encoder: EncoderConfig {
            out_dim: 6,
            ..toy_encoder()
        },
        d2: 8,
        dropout: 0.0,
        init_std: 0.5,
        global_dim_ratio: ratio,
        ..ModelConfig::reference()
    };
    let mut store = ParamStore::new();
    let net = Network::new(&mut store, &cfg, 7, 3, 4, &mut rng)?;
    let job = Document::new(vec![vec![2, 3], vec![4]])?;
    let resume = Document::new(vec![vec![5, 6, 2], vec![3]])?;
    let job_graph = GraphInput {
        rows: vec![Some(0), Some(1), Some(2)],
        propagation: graph_adjacency(&mut rng, 3),
    };
    let resume_graph = GraphInput {
        rows: vec![Some(3), None],
        propagation: graph_adjacency(&mut rng, 2),
    };
    let lonely = GraphInput::single(Some(1));
    let pairs = [
        PairInput {
            job: &job,
            resume: &resume,
            job_graph: &job_graph,
            resume_graph: &resume_graph,
        },
        PairInput {
            job: &resume,
            resume: &job,
            job_graph: &lonely,
            resume_graph: &resume_graph,
        },
    ];
    grad_check_with(
        &mut store,
        &mut |tape| net.loss(tape, &pairs, &[1.0, 0.0], None),
        GRADCHECK_TOLERANCE,
        hook,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_suite_passes_and_covers_every_module() {
        let s = gradcheck_suite(3, None);
        for c in &s.cases {
            assert!(c.passed, "{c:?}");
        }
        assert_eq!(s.modules.len(), MODULES.len());
        for m in &s.modules {
            assert_eq!(m.cases > 0, m.differentiable, "{m:?}");
        }
        let ops = s.cases.iter().filter(|c| c.module == "autodiff").count();
        assert_eq!(ops, OpKind::DIFFERENTIABLE.len());
    }

    #[test]
    fn corrupted_rule_fails_its_own_case() {
        for kind in [OpKind::Tanh, OpKind::Softmax, OpKind::GatherRows] {
            let s = gradcheck_suite(3, Some(kind));
            assert!(!s.passed());
            let own = s.cases.iter().find(|c| c.name == kind.name()).unwrap();
            assert!(!own.passed, "{kind}");
            assert_eq!(s.corrupted.as_deref(), Some(kind.name()));
        }
    }
}
