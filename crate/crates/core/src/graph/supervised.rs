//! Twin-encoder similarity trained on co-hiring labels.
//!
//! Two resumes that applied to the same job form a positive pair when both were
//! hired and a negative pair when exactly one was; job pairs are built the same
//! way from resumes. The encoder predicts `σ(κ · cos(u, v) + b)`.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::similarity::{build_encoder, Similarity, SimilarityKind, WordVectors};
use super::Side;
use crate::autodiff::{grad_check_with, GradCheckReport, ParamId, ParamStore, Tape, Var};
use crate::corpus::LabeledPair;
use crate::error::{Error, Result};
use crate::optim::{adam_step, AdamConfig};
use crate::tensor::{cosine, Tensor};
use crate::text::{Document, DocumentEncoder, EncoderConfig};

const KAPPA: &str = "sim.kappa";
const BIAS: &str = "sim.bias";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SimilarityPair {
    pub a: usize,
    pub b: usize,
    pub label: u8,
}

/// Balanced similarity pairs among entities of `side`, at most `max_pairs`.
/// Errors unless both labels occur.
pub fn similarity_pairs(pairs: &[LabeledPair], side: Side, max_pairs: usize, seed: u64) -> Result<Vec<SimilarityPair>> {
    // group the other side's entity → (hired, rejected) members of `side`
    let mut groups: BTreeMap<usize, (BTreeSet<usize>, BTreeSet<usize>)> = BTreeMap::new();
    for p in pairs {
        let (key, member) = match side {
            Side::Resumes => (p.job, p.resume),
            Side::Jobs => (p.resume, p.job),
        };
        let g = groups.entry(key).or_default();
        if p.label == 1 {
            g.0.insert(member);
        } else {
            g.1.insert(member);
        }
    }
    let mut labels: BTreeMap<(usize, usize), u8> = BTreeMap::new();
    for (hired, rejected) in groups.values() {
        let hired: Vec<usize> = hired.iter().copied().collect();
        for (i, &a) in hired.iter().enumerate() {
            for &b in &hired[i + 1..] {
                labels.entry((a, b)).or_insert(1);
            }
            for &b in rejected {
                if a != b {
                    labels.entry((a.min(b), a.max(b))).or_insert(0);
                }
            }
        }
    }
    let mut pos: Vec<SimilarityPair> = Vec::new();
    let mut neg: Vec<SimilarityPair> = Vec::new();
    for (&(a, b), &label) in &labels {
        let p = SimilarityPair { a, b, label };
        if label == 1 {
            pos.push(p);
        } else {
            neg.push(p);
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Infeasible(format!(
            "similarity training needs both labels, have {} positive and {} negative",
            pos.len(),
            neg.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let n = pos.len().min(neg.len()).min((max_pairs / 2).max(1));
    let mut out: Vec<SimilarityPair> = pos[..n].iter().chain(&neg[..n]).copied().collect();
    out.shuffle(&mut rng);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisedConfig {
    pub encoder: EncoderConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub max_pairs: usize,
    /// Fraction of pairs held out for validation (one in five).
    pub valid_fraction: f64,
    pub kappa_init: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::desk(),
            epochs: 6,
            batch_size: 16,
            lr: 5e-3,
            max_pairs: 2000,
            valid_fraction: 0.2,
            kappa_init: 5.0,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupervisedReport {
    pub train_pairs: usize,
    pub valid_pairs: usize,
    /// Mean training loss of each epoch.
    pub epoch_loss: Vec<f64>,
    pub train_accuracy: f64,
    pub valid_accuracy: f64,
}

struct Twin {
    store: ParamStore,
    encoder: DocumentEncoder,
    kappa: ParamId,
    bias: ParamId,
}

impl Twin {
    fn new(cfg: &SupervisedConfig, vocab: usize) -> Result<Self> {
        let (mut store, encoder) = build_encoder(&cfg.encoder, vocab, cfg.seed)?;
        let kappa = store.add(KAPPA, Tensor::matrix(1, 1, vec![cfg.kappa_init])?)?;
        let bias = store.add(BIAS, Tensor::matrix(1, 1, vec![0.0])?)?;
        Ok(Self {
            store,
            encoder,
            kappa,
            bias,
        })
    }

    fn batch_loss(&self, docs: &[Document], batch: &[SimilarityPair]) -> Result<(f64, Vec<(String, Tensor)>)> {
        let mut tape = Tape::new(&self.store);
        let loss = twin_loss(&mut tape, &self.encoder, (self.kappa, self.bias), docs, batch)?;
        let grads = tape.backward(loss)?;
        Ok((tape.value(loss).item(), grads.named(&self.store)))
    }

    fn accuracy(&self, vectors: &[Vec<f64>], pairs: &[SimilarityPair]) -> f64 {
        if pairs.is_empty() {
            return 0.0;
        }
        let k = self.store.value(self.kappa).item();
        let b = self.store.value(self.bias).item();
        let hits = pairs
            .iter()
            .filter(|p| {
                let logit = k * cosine(&vectors[p.a], &vectors[p.b]) + b;
                (logit > 0.0) == (p.label == 1)
            })
            .count();
        hits as f64 / pairs.len() as f64
    }

    fn vectors(&self, docs: &[Document]) -> Result<Vec<Vec<f64>>> {
        let refs: Vec<&Document> = docs.iter().collect();
        let chunks = refs
            .par_chunks(32)
            .map(|c| self.encoder.vectors(&self.store, c))
            .collect::<Result<Vec<_>>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }
}

/// Checks the twin encoder's loss gradients on `pairs` at its initialization.
pub fn grad_check_similarity_encoder(
    docs: &[Document],
    pairs: &[SimilarityPair],
    cfg: &SupervisedConfig,
    vocab: usize,
    tolerance: f64,
    prepare: impl Fn(&mut Tape<'_>),
) -> Result<GradCheckReport> {
    let Twin {
        mut store,
        encoder,
        kappa,
        bias,
    } = Twin::new(cfg, vocab)?;
    grad_check_with(
        &mut store,
        &mut |tape| twin_loss(tape, &encoder, (kappa, bias), docs, pairs),
        tolerance,
        prepare,
    )
}

fn twin_loss(
    tape: &mut Tape<'_>,
    encoder: &DocumentEncoder,
    (kappa, bias): (ParamId, ParamId),
    docs: &[Document],
    batch: &[SimilarityPair],
) -> Result<Var> {
    let mut ids: Vec<usize> = batch.iter().flat_map(|p| [p.a, p.b]).collect();
    ids.sort_unstable();
    ids.dedup();
    let row = |e: usize| ids.binary_search(&e).expect("collected");
    let refs: Vec<&Document> = ids.iter().map(|&i| &docs[i]).collect();

    let enc = encoder.encode_documents(tape, &refs)?;
    let cosines = batch
        .iter()
        .map(|p| {
            let (ra, rb) = (row(p.a), row(p.b));
            let u = tape.slice_rows(enc.vectors, ra, ra + 1)?;
            let v = tape.slice_rows(enc.vectors, rb, rb + 1)?;
            tape.cosine(u, v)
        })
        .collect::<Result<Vec<_>>>()?;
    let cos = tape.concat_rows(&cosines)?;
    let logits = tape.linear(cos, kappa, Some(bias))?;
    let pred = tape.sigmoid(logits);
    let labels: Vec<f64> = batch.iter().map(|p| f64::from(p.label)).collect();
    tape.bce(pred, &labels)
}

/// Trains the twin encoder on `pairs` over the entities in `docs` and returns
/// the frozen similarity with its training report. `words` must cover the
/// same vocabulary the documents were tokenized with.
pub fn train_similarity_encoder(
    docs: &[Document],
    pairs: &[SimilarityPair],
    words: WordVectors,
    cfg: &SupervisedConfig,
) -> Result<(Similarity, SupervisedReport)> {
    if !(pairs.iter().any(|p| p.label == 1) && pairs.iter().any(|p| p.label == 0)) {
        return Err(Error::Infeasible("similarity training needs both labels".into()));
    }
    if let Some(p) = pairs.iter().find(|p| p.a.max(p.b) >= docs.len()) {
        return Err(Error::IndexOutOfRange {
            index: p.a.max(p.b),
            len: docs.len(),
        });
    }
    if cfg.batch_size == 0 {
        return Err(Error::Infeasible("batch size must be positive".into()));
    }
    let vocab = words.vocab();
    let mut twin = Twin::new(cfg, vocab)?;
    let n_valid = ((pairs.len() as f64 * cfg.valid_fraction).round() as usize).clamp(1, pairs.len() - 1);
    let (valid, train) = pairs.split_at(n_valid);
    let mut order: Vec<SimilarityPair> = train.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads) = twin.batch_loss(docs, batch)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch_loss.len(),
                    batch: batches,
                    loss,
                });
            }
            for (name, g) in grads {
                let id = twin.store.id(&name)?;
                twin.store.get_mut(id).grad.add_assign(&g);
            }
            adam_step(&mut twin.store, &cfg.adam, cfg.lr);
            twin.store.zero_grad();
            total += loss;
            batches += 1;
        }
        epoch_loss.push(total / batches.max(1) as f64);
    }

    let vectors = twin.vectors(docs)?;
    let report = SupervisedReport {
        train_pairs: train.len(),
        valid_pairs: valid.len(),
        epoch_loss,
        train_accuracy: twin.accuracy(&vectors, train),
        valid_accuracy: twin.accuracy(&vectors, valid),
    };
    let arrays = twin
        .store
        .snapshot()
        .into_iter()
        .filter(|a| a.name != KAPPA && a.name != BIAS)
        .collect();
    let sim = Similarity::from_encoder(SimilarityKind::Supervised, words, cfg.encoder.clone(), vocab, arrays)?;
    Ok((sim, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SimilarityState;

    fn lp(job: usize, resume: usize, label: u8) -> LabeledPair {
        LabeledPair { job, resume, label }
    }

    #[test]
    fn co_application_pairs() {
        // job 0 hired resumes 1 and 2 and rejected 3
        let pairs = [lp(0, 1, 1), lp(0, 2, 1), lp(0, 3, 0)];
        let mut got = similarity_pairs(&pairs, Side::Resumes, 100, 0).unwrap();
        got.sort();
        // one positive (1,2), balanced against one of the two negatives
        assert_eq!(got.len(), 2);
        assert!(got.contains(&SimilarityPair { a: 1, b: 2, label: 1 }));
        assert!(got.iter().any(|p| p.label == 0 && p.b == 3));

        // resume 5 hired by jobs 0 and 1, rejected by job 2
        let pairs = [lp(0, 5, 1), lp(1, 5, 1), lp(2, 5, 0)];
        let got = similarity_pairs(&pairs, Side::Jobs, 100, 0).unwrap();
        assert!(got.contains(&SimilarityPair { a: 0, b: 1, label: 1 }));

        assert!(similarity_pairs(&[lp(0, 1, 1), lp(0, 2, 1)], Side::Resumes, 100, 0).is_err());
    }

    fn clustered_docs() -> (Vec<Document>, Vec<SimilarityPair>) {
        // entity i belongs to cluster i % 2 and uses that cluster's tokens
        let docs: Vec<Document> = (0..20)
            .map(|i| {
                let base = if i % 2 == 0 { 2 } else { 6 };
                Document::new(vec![
                    vec![base, base + 1, 10 + (i % 3) as u32],
                    vec![base + 2, base + 3],
                ])
                .unwrap()
            })
            .collect();
        let mut pairs = Vec::new();
        for a in 0..20 {
            for b in a + 1..20 {
                pairs.push(SimilarityPair {
                    a,
                    b,
                    label: u8::from(a % 2 == b % 2),
                });
            }
        }
        pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
        (docs, pairs)
    }

    #[test]
    fn zero_epochs_keep_initialization() {
        let (docs, pairs) = clustered_docs();
        let cfg = SupervisedConfig {
            epochs: 0,
            ..SupervisedConfig::default()
        };
        let (sim, report) = train_similarity_encoder(&docs, &pairs, WordVectors::seeded(13, 4, 0), &cfg).unwrap();
        assert!(report.epoch_loss.is_empty());
        let (fresh, _) = build_encoder(&cfg.encoder, 13, cfg.seed).unwrap();
        let SimilarityState::Encoder { arrays, .. } = &sim.state else {
            panic!()
        };
        assert_eq!(arrays, &fresh.snapshot());
        let back: Similarity = serde_json::from_str(&serde_json::to_string(&sim).unwrap()).unwrap();
        assert_eq!(back, sim);
    }

    #[test]
    fn learns_clusters() {
        let (docs, pairs) = clustered_docs();
        let cfg = SupervisedConfig {
            epochs: 4,
            ..SupervisedConfig::default()
        };
        let (sim, report) = train_similarity_encoder(&docs, &pairs, WordVectors::seeded(13, 4, 0), &cfg).unwrap();
        assert!(report.valid_accuracy > 0.8, "{report:?}");
        // self-similarity is not below a random pair's
        for p in pairs.iter().take(20) {
            let same = sim.similarity(&docs[p.a], &docs[p.a]).unwrap();
            assert!(same + 1e-9 >= sim.similarity(&docs[p.a], &docs[p.b]).unwrap());
        }
    }
}
