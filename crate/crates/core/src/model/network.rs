//! The full matching network: sentence encoding, local co-attention, graph
//! propagation over history, cross-graph fusion and the comparison head.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Dims, ModelConfig};
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::coattention::{CoAttention, LocalRepresentation};
use crate::error::{Error, Result};
use crate::fusion::{Fusion, GlobalRepresentation};
use crate::ggnn::{Ggnn, NodeTable};
use crate::tensor::Tensor;
use crate::text::{embedding_table, Document, SentenceBatch, SentenceEncoder};

/// A recruitment graph as the network consumes it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphInput {
    /// Node-table row per graph node (`None` for the cold row); entry 0 is the
    /// current entity.
    pub rows: Vec<Option<usize>>,
    /// `[nodes, nodes]` propagation matrix.
    pub propagation: Tensor,
}

impl GraphInput {
    /// A graph holding only the current entity.
    pub fn single(row: Option<usize>) -> Self {
        Self {
            rows: vec![row],
            propagation: Tensor::zeros(&[1, 1]),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PairInput<'a> {
    pub job: &'a Document,
    pub resume: &'a Document,
    pub job_graph: &'a GraphInput,
    pub resume_graph: &'a GraphInput,
}

/// Comparison head: `D = tanh([H^J; H^R; H^J − H^R] W_d + b_d)`, `Ŷ = σ(D W_y + b_y)`.
#[derive(Clone, Debug)]
pub struct Head {
    pub w_d: ParamId,
    pub b_d: ParamId,
    pub w_y: ParamId,
    pub b_y: ParamId,
}

impl Head {
    pub fn new<R: Rng>(store: &mut ParamStore, side: usize, d2: usize, std: f64, rng: &mut R) -> Result<Self> {
        Ok(Self {
            w_d: store.add_gaussian("head.w_d", &[3 * side, d2], std, rng)?,
            b_d: store.add_gaussian("head.b_d", &[1, d2], std, rng)?,
            w_y: store.add_gaussian("head.w_y", &[d2, 1], std, rng)?,
            b_y: store.add_gaussian("head.b_y", &[1, 1], std, rng)?,
        })
    }

    /// `job`, `resume`: `[B, side]`. Returns `[B, 1]` probabilities.
    pub fn predict(
        &self,
        tape: &mut Tape<'_>,
        job: Var,
        resume: Var,
        dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<Var> {
        let diff = tape.sub(job, resume)?;
        let mut x = tape.concat_cols(&[job, resume, diff])?;
        if let Some((p, rng)) = dropout {
            x = tape.dropout(x, p, rng);
        }
        let pre = tape.linear(x, self.w_d, Some(self.b_d))?;
        let d = tape.tanh(pre);
        let logit = tape.linear(d, self.w_y, Some(self.b_y))?;
        Ok(tape.sigmoid(logit))
    }
}

/// Parameters of the history path.
#[derive(Clone, Debug)]
pub struct GlobalPath {
    pub job_nodes: NodeTable,
    pub resume_nodes: NodeTable,
    pub job_ggnn: Ggnn,
    /// `None` when both graph families share `job_ggnn`.
    pub resume_ggnn: Option<Ggnn>,
    pub fusion: Fusion,
    pub projection: Option<ParamId>,
}

/// Parameters of the text path.
#[derive(Clone, Debug)]
pub struct LocalPath {
    pub embedding: ParamId,
    pub sentences: SentenceEncoder,
    pub coattention: CoAttention,
    pub projection: Option<ParamId>,
}

/// Parameter handles of the whole network; values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Network {
    pub dims: Dims,
    pub local: Option<LocalPath>,
    pub global: Option<GlobalPath>,
    pub head: Head,
    pub dropout: f64,
}

/// Per-pair intermediate representations of a forward pass.
#[derive(Clone, Debug)]
pub struct PairTrace {
    pub local: Option<LocalRepresentation>,
    pub global: Option<GlobalRepresentation>,
    /// `[1, side]` concatenated representations.
    pub job: Var,
    pub resume: Var,
}

pub struct BatchOutput {
    /// `[B, 1]`.
    pub predictions: Var,
    pub pairs: Vec<PairTrace>,
}

impl Network {
    /// Registers every parameter. `jobs`/`resumes` size the node tables.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        cfg: &ModelConfig,
        vocab: usize,
        jobs: usize,
        resumes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d();
        let std = cfg.init_std;
        let dims = cfg.dims();
        let local = if dims.local > 0 {
            let embedding = embedding_table(store, "embedding", vocab, cfg.encoder.word_dim, std, rng)?;
            let sentences = SentenceEncoder::new(store, "sentence", embedding, &cfg.encoder, std, rng)?;
            let coattention = CoAttention::new(store, "coattention", d, std, rng)?;
            let projection = match dims.projected {
                true => Some(store.add_gaussian("local.projection", &[d, dims.local], std, rng)?),
                false => None,
            };
            Some(LocalPath {
                embedding,
                sentences,
                coattention,
                projection,
            })
        } else {
            None
        };
        let global = if dims.global > 0 {
            let job_nodes = NodeTable::new(store, "nodes.jobs", jobs, d, std, rng)?;
            let resume_nodes = NodeTable::new(store, "nodes.resumes", resumes, d, std, rng)?;
            let (job_ggnn, resume_ggnn) = if cfg.share_ggnn {
                (Ggnn::new(store, "ggnn", d, cfg.ggnn_layers, std, rng)?, None)
            } else {
                (
                    Ggnn::new(store, "ggnn.jobs", d, cfg.ggnn_layers, std, rng)?,
                    Some(Ggnn::new(store, "ggnn.resumes", d, cfg.ggnn_layers, std, rng)?),
                )
            };
            let fusion = Fusion::new(store, "fusion", d, cfg.normalize_map, cfg.wiring, std, rng)?;
            let projection = match dims.projected {
                true => Some(store.add_gaussian("global.projection", &[d, dims.global], std, rng)?),
                false => None,
            };
            Some(GlobalPath {
                job_nodes,
                resume_nodes,
                job_ggnn,
                resume_ggnn,
                fusion,
                projection,
            })
        } else {
            None
        };
        let head = Head::new(store, dims.side(), cfg.d2, std, rng)?;
        Ok(Self {
            dims,
            local,
            global,
            head,
            dropout: cfg.dropout,
        })
    }

    /// Runs a batch of pairs. `dropout_rng` switches on training mode.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        pairs: &[PairInput<'_>],
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<BatchOutput> {
        if pairs.is_empty() {
            return Err(Error::Empty("no pairs to score"));
        }
        let locals = match &self.local {
            Some(path) => self.local_pass(tape, path, pairs)?.into_iter().map(Some).collect(),
            None => vec![None; pairs.len()],
        };
        let mut traces = Vec::with_capacity(pairs.len());
        for (pair, local) in pairs.iter().zip(locals) {
            let global = match &self.global {
                Some(path) => Some(self.global_pass(tape, path, pair)?),
                None => None,
            };
            let mut job_parts = Vec::new();
            let mut resume_parts = Vec::new();
            if let (Some(l), Some(path)) = (&local, &self.local) {
                job_parts.push(project(tape, l.job, path.projection)?);
                resume_parts.push(project(tape, l.resume, path.projection)?);
            }
            if let (Some(g), Some(path)) = (&global, &self.global) {
                job_parts.push(project(tape, g.job, path.projection)?);
                resume_parts.push(project(tape, g.resume, path.projection)?);
            }
            let job = tape.concat_cols(&job_parts)?;
            let resume = tape.concat_cols(&resume_parts)?;
            traces.push(PairTrace {
                local,
                global,
                job,
                resume,
            });
        }
        let jobs: Vec<Var> = traces.iter().map(|t| t.job).collect();
        let resumes: Vec<Var> = traces.iter().map(|t| t.resume).collect();
        let job = tape.concat_rows(&jobs)?;
        let resume = tape.concat_rows(&resumes)?;
        let dropout = dropout_rng.map(|rng| (self.dropout, rng));
        let predictions = self.head.predict(tape, job, resume, dropout)?;
        Ok(BatchOutput {
            predictions,
            pairs: traces,
        })
    }

    /// Mean binary cross-entropy of a batch.
    pub fn loss(
        &self,
        tape: &mut Tape<'_>,
        pairs: &[PairInput<'_>],
        labels: &[f64],
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let out = self.forward(tape, pairs, dropout_rng)?;
        tape.bce(out.predictions, labels)
    }

    /// Encodes every requirement and experience of the batch in one pass and
    /// co-attends each pair.
    fn local_pass(
        &self,
        tape: &mut Tape<'_>,
        path: &LocalPath,
        pairs: &[PairInput<'_>],
    ) -> Result<Vec<LocalRepresentation>> {
        let mut sentences: Vec<&[u32]> = Vec::new();
        let mut spans = Vec::with_capacity(pairs.len());
        for p in pairs {
            let js = sentences.len();
            sentences.extend(p.job.sentences().iter().map(Vec::as_slice));
            let rs = sentences.len();
            sentences.extend(p.resume.sentences().iter().map(Vec::as_slice));
            spans.push((js, rs, sentences.len()));
        }
        let batch = SentenceBatch::new(&sentences)?;
        let vectors = path.sentences.encode(tape, &batch)?;
        spans
            .into_iter()
            .map(|(js, rs, end)| {
                let requirements = tape.slice_rows(vectors, js, rs)?;
                let experiences = tape.slice_rows(vectors, rs, end)?;
                path.coattention.forward(tape, requirements, experiences)
            })
            .collect()
    }

    fn global_pass(
        &self,
        tape: &mut Tape<'_>,
        path: &GlobalPath,
        pair: &PairInput<'_>,
    ) -> Result<GlobalRepresentation> {
        let job_states = run_graph(tape, &path.job_nodes, &path.job_ggnn, pair.job_graph)?;
        let resume_ggnn = path.resume_ggnn.as_ref().unwrap_or(&path.job_ggnn);
        let resume_states = run_graph(tape, &path.resume_nodes, resume_ggnn, pair.resume_graph)?;
        path.fusion.forward(tape, job_states, resume_states)
    }
}

fn run_graph(tape: &mut Tape<'_>, table: &NodeTable, ggnn: &Ggnn, graph: &GraphInput) -> Result<Var> {
    let n = graph.rows.len();
    if n == 0 || graph.propagation.shape() != [n, n] {
        return Err(Error::ShapeMismatch {
            op: "graph_input",
            lhs: vec![n],
            rhs: graph.propagation.shape().to_vec(),
        });
    }
    let initial = table.lookup(tape, &graph.rows)?;
    let adjacency = tape.constant(graph.propagation.clone());
    ggnn.run(tape, initial, adjacency)
}

fn project(tape: &mut Tape<'_>, x: Var, projection: Option<ParamId>) -> Result<Var> {
    match projection {
        Some(p) => tape.linear(x, p, None),
        None => Ok(x),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::model::ModelConfig;
    use crate::text::EncoderConfig;
    use rand::SeedableRng;

    pub(crate) fn toy_config() -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                word_dim: 3,
                hidden: 2,
                sentence_hidden: 2,
                out_dim: 6,
                max_sentence_len: 8,
                cell: "gru".into(),
            },
            d2: 8,
            dropout: 0.0,
            init_std: 0.5,
            ..ModelConfig::reference()
        }
    }

    fn graph(rows: &[usize], seed: u64) -> GraphInput {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rows.len();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = rng.gen_range(-1.0..1.0);
                a[i * n + j] = v;
                a[j * n + i] = v;
            }
        }
        GraphInput {
            rows: rows.iter().map(|&r| Some(r)).collect(),
            propagation: Tensor::matrix(n, n, a).unwrap(),
        }
    }

    fn build(cfg: &ModelConfig) -> (ParamStore, Network) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Network::new(&mut store, cfg, 7, 3, 4, &mut rng).unwrap();
        (store, net)
    }

    #[test]
    fn zero_parameters_predict_one_half() {
        let cfg = toy_config();
        let (mut store, net) = build(&cfg);
        for p in store.iter_mut() {
            p.value.data_mut().fill(0.0);
        }
        let job = Document::new(vec![vec![2, 3], vec![4]]).unwrap();
        let resume = Document::new(vec![vec![5, 6]]).unwrap();
        let (jg, rg) = (graph(&[0, 1, 2], 1), graph(&[3, 1], 2));
        let pair = PairInput {
            job: &job,
            resume: &resume,
            job_graph: &jg,
            resume_graph: &rg,
        };
        let mut tape = Tape::new(&store);
        let out = net.forward(&mut tape, &[pair], None).unwrap();
        assert_eq!(tape.value(out.predictions).data(), &[0.5]);
    }

    #[test]
    fn end_to_end_gradients() {
        for ratio in [None, Some(0.5)] {
            let cfg = ModelConfig {
                global_dim_ratio: ratio,
                ..toy_config()
            };
            let (mut store, net) = build(&cfg);
            let job = Document::new(vec![vec![2, 3], vec![4]]).unwrap();
            let resume = Document::new(vec![vec![5, 6, 2], vec![3]]).unwrap();
            let (jg, rg) = (graph(&[0, 1, 2], 3), graph(&[3, 1], 4));
            let single = GraphInput::single(None);
            let pairs = [
                PairInput {
                    job: &job,
                    resume: &resume,
                    job_graph: &jg,
                    resume_graph: &rg,
                },
                PairInput {
                    job: &resume,
                    resume: &job,
                    job_graph: &single,
                    resume_graph: &rg,
                },
            ];
            let report = grad_check(&mut store, |tape| net.loss(tape, &pairs, &[1.0, 0.0], None), 1e-4).unwrap();
            assert!(report.passed(), "{:?}", report.worst());
        }
    }
}
