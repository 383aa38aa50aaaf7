//! Document similarity functions used to weight graph edges.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::RwLock;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NamedArray, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{cosine, Tensor};
use crate::text::{embedding_table, Document, DocumentEncoder, EncoderConfig};

/// Smoothing constant of the smooth-inverse-frequency weights `a / (a + p(w))`.
pub const SIF_A: f64 = 1e-3;

const ENCODER_EMBEDDING: &str = "sim.embedding";
const ENCODER_PREFIX: &str = "sim.encoder";
const ENCODER_STD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityKind {
    /// Cosine of document-encoder vectors (a frozen, randomly initialized encoder).
    EncoderCosine,
    Mean,
    Tfidf,
    Sif,
    /// Relaxed word mover's distance, mapped to `1 / (1 + distance)`.
    Wmd,
    /// Cosine of a twin encoder trained to tell co-hired entities apart.
    Supervised,
}

impl SimilarityKind {
    pub const ALL: [SimilarityKind; 6] = [
        Self::EncoderCosine,
        Self::Mean,
        Self::Tfidf,
        Self::Sif,
        Self::Wmd,
        Self::Supervised,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::EncoderCosine => "encoder-cosine",
            Self::Mean => "mean",
            Self::Tfidf => "tfidf",
            Self::Sif => "sif",
            Self::Wmd => "wmd",
            Self::Supervised => "supervised",
        }
    }

    fn uses_encoder(self) -> bool {
        matches!(self, Self::EncoderCosine | Self::Supervised)
    }
}

impl fmt::Display for SimilarityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SimilarityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Infeasible(format!("unknown similarity kind `{s}`")))
    }
}

/// Frozen `[vocab, dim]` word vectors for the bag-of-words kinds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordVectors {
    table: Tensor,
}

impl WordVectors {
    pub fn new(table: Tensor) -> Result<Self> {
        if table.shape().len() != 2 || table.is_empty() {
            return Err(Error::Empty("word vector table must be a nonempty matrix"));
        }
        Ok(Self { table })
    }

    /// Standard normal vectors from a seeded generator.
    pub fn seeded(vocab: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let data = (0..vocab * dim).map(|_| normal.sample(&mut rng)).collect();
        Self {
            table: Tensor::matrix(vocab, dim, data).expect("sized"),
        }
    }

    pub fn table(&self) -> &Tensor {
        &self.table
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn vocab(&self) -> usize {
        self.table.rows()
    }

    pub fn vector(&self, token: u32) -> Result<&[f64]> {
        let t = token as usize;
        if t >= self.table.rows() {
            return Err(Error::IndexOutOfRange {
                index: t,
                len: self.table.rows(),
            });
        }
        Ok(self.table.row_slice(t))
    }

    /// `Σ_w weight(w) · v_w / count`, over every token occurrence.
    fn weighted_average(&self, doc: &Document, weight: impl Fn(u32) -> f64) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.dim()];
        let mut count = 0usize;
        for t in doc.tokens() {
            let w = weight(t);
            for (a, x) in acc.iter_mut().zip(self.vector(t)?) {
                *a += w * x;
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::Empty("document has no tokens"));
        }
        acc.iter_mut().for_each(|a| *a /= count as f64);
        Ok(acc)
    }
}

/// Statistics each kind fits, serializable so a fitted function reloads to
/// identical values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "kebab-case")]
pub enum SimilarityState {
    Mean,
    Tfidf {
        /// `ln((1 + N) / (1 + df)) + 1` per token id; ids past the end count as unseen.
        idf: Vec<f64>,
        documents: usize,
    },
    Sif {
        /// `a / (a + p(w))` per token id; ids past the end weigh 1.
        weights: Vec<f64>,
        /// Unit first principal component, removed from every vector.
        principal: Option<Vec<f64>>,
    },
    Wmd,
    Encoder {
        config: EncoderConfig,
        vocab: usize,
        arrays: Vec<NamedArray>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub kind: SimilarityKind,
    pub words: WordVectors,
    pub state: SimilarityState,
}

impl Similarity {
    /// Fits a bag-of-words kind on `docs`. Encoder kinds are built with
    /// [`Similarity::random_encoder`] or [`Similarity::from_encoder`].
    pub fn fit(kind: SimilarityKind, words: WordVectors, docs: &[&Document]) -> Result<Self> {
        let state = match kind {
            SimilarityKind::Mean => SimilarityState::Mean,
            SimilarityKind::Wmd => SimilarityState::Wmd,
            SimilarityKind::Tfidf => {
                if docs.is_empty() {
                    return Err(Error::Unfitted("tf-idf needs at least one document"));
                }
                let mut df = vec![0usize; words.vocab()];
                for d in docs {
                    let mut seen: Vec<u32> = d.tokens().collect();
                    seen.sort_unstable();
                    seen.dedup();
                    for t in seen {
                        if let Some(c) = df.get_mut(t as usize) {
                            *c += 1;
                        }
                    }
                }
                let n = docs.len() as f64;
                SimilarityState::Tfidf {
                    idf: df.iter().map(|&c| ((1.0 + n) / (1.0 + c as f64)).ln() + 1.0).collect(),
                    documents: docs.len(),
                }
            }
            SimilarityKind::Sif => {
                if docs.is_empty() {
                    return Err(Error::Unfitted("SIF needs at least one document"));
                }
                let mut counts = vec![0usize; words.vocab()];
                let mut total = 0usize;
                for t in docs.iter().flat_map(|d| d.tokens()) {
                    if let Some(c) = counts.get_mut(t as usize) {
                        *c += 1;
                    }
                    total += 1;
                }
                let freqs: Vec<f64> = counts.iter().map(|&c| c as f64 / total.max(1) as f64).collect();
                let mut sim = Self::sif_with_frequencies(words.clone(), &freqs, None);
                sim.fit_principal(docs)?;
                sim.state
            }
            SimilarityKind::EncoderCosine | SimilarityKind::Supervised => {
                return Err(Error::Unfitted("encoder similarity needs an encoder"));
            }
        };
        Ok(Self { kind, words, state })
    }

    /// SIF with given unigram probabilities and an optional principal component.
    pub fn sif_with_frequencies(words: WordVectors, freqs: &[f64], principal: Option<Vec<f64>>) -> Self {
        Self {
            kind: SimilarityKind::Sif,
            words,
            state: SimilarityState::Sif {
                weights: freqs.iter().map(|p| SIF_A / (SIF_A + p)).collect(),
                principal,
            },
        }
    }

    fn fit_principal(&mut self, docs: &[&Document]) -> Result<()> {
        if docs.len() < 2 {
            return Ok(());
        }
        let rows = docs.iter().map(|d| self.raw_vector(d)).collect::<Result<Vec<_>>>()?;
        let dim = self.words.dim();
        let x = DMatrix::from_fn(rows.len(), dim, |r, c| rows[r][c]);
        let eig = SymmetricEigen::new(x.transpose() * &x);
        let top = eig.eigenvalues.imax();
        let mut u: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
        // sign fixed so the component is reproducible
        if let Some(&first) = u.iter().find(|v| v.abs() > 1e-12) {
            if first < 0.0 {
                u.iter_mut().for_each(|v| *v = -*v);
            }
        }
        if let SimilarityState::Sif { principal, .. } = &mut self.state {
            *principal = Some(u);
        }
        Ok(())
    }

    /// Random frozen document encoder over a vocabulary of `vocab` tokens.
    pub fn random_encoder(words: WordVectors, config: EncoderConfig, vocab: usize, seed: u64) -> Result<Self> {
        let (store, _) = build_encoder(&config, vocab, seed)?;
        Ok(Self {
            kind: SimilarityKind::EncoderCosine,
            words,
            state: SimilarityState::Encoder {
                config,
                vocab,
                arrays: store.snapshot(),
            },
        })
    }

    /// Wraps trained encoder parameters.
    pub fn from_encoder(
        kind: SimilarityKind,
        words: WordVectors,
        config: EncoderConfig,
        vocab: usize,
        arrays: Vec<NamedArray>,
    ) -> Result<Self> {
        if !kind.uses_encoder() {
            return Err(Error::Infeasible(format!("{kind} does not use an encoder")));
        }
        let sim = Self {
            kind,
            words,
            state: SimilarityState::Encoder { config, vocab, arrays },
        };
        sim.encoder()?;
        Ok(sim)
    }

    fn encoder(&self) -> Result<(ParamStore, DocumentEncoder)> {
        let SimilarityState::Encoder { config, vocab, arrays } = &self.state else {
            return Err(Error::Unfitted("no encoder state"));
        };
        let (mut store, enc) = build_encoder(config, *vocab, 0)?;
        store.restore(arrays)?;
        Ok((store, enc))
    }

    fn raw_vector(&self, doc: &Document) -> Result<Vec<f64>> {
        match &self.state {
            SimilarityState::Mean | SimilarityState::Wmd => self.words.weighted_average(doc, |_| 1.0),
            SimilarityState::Tfidf { idf, documents } => {
                let unseen = (1.0 + *documents as f64).ln() + 1.0;
                self.words
                    .weighted_average(doc, |t| idf.get(t as usize).copied().unwrap_or(unseen))
            }
            SimilarityState::Sif { weights, .. } => self
                .words
                .weighted_average(doc, |t| weights.get(t as usize).copied().unwrap_or(1.0)),
            SimilarityState::Encoder { .. } => Err(Error::Unfitted("encoder vectors are computed in batches")),
        }
    }

    /// The vectors compared by cosine, one per document; `None` for the
    /// transport-based kind.
    pub fn vectors(&self, docs: &[&Document]) -> Result<Option<Vec<Vec<f64>>>> {
        match &self.state {
            SimilarityState::Wmd => {
                for d in docs {
                    if d.tokens().next().is_none() {
                        return Err(Error::Empty("document has no tokens"));
                    }
                }
                Ok(None)
            }
            SimilarityState::Encoder { .. } => {
                let (store, enc) = self.encoder()?;
                let chunks = docs
                    .par_chunks(32)
                    .map(|c| enc.vectors(&store, c))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Some(chunks.into_iter().flatten().collect()))
            }
            SimilarityState::Sif { principal, .. } => docs
                .par_iter()
                .map(|d| {
                    let mut v = self.raw_vector(d)?;
                    if let Some(u) = principal {
                        let proj: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                        v.iter_mut().zip(u).for_each(|(a, b)| *a -= proj * b);
                    }
                    Ok(v)
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            _ => docs
                .par_iter()
                .map(|d| self.raw_vector(d))
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    /// Similarity of two documents.
    pub fn similarity(&self, a: &Document, b: &Document) -> Result<f64> {
        match self.vectors(&[a, b])? {
            Some(v) => Ok(cosine(&v[0], &v[1])),
            None => Ok(1.0 / (1.0 + relaxed_wmd(&self.words, &Bag::new(a), &Bag::new(b))?)),
        }
    }
}

pub(super) fn build_encoder(config: &EncoderConfig, vocab: usize, seed: u64) -> Result<(ParamStore, DocumentEncoder)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let table = embedding_table(
        &mut store,
        ENCODER_EMBEDDING,
        vocab,
        config.word_dim,
        ENCODER_STD,
        &mut rng,
    )?;
    let enc = DocumentEncoder::new(&mut store, ENCODER_PREFIX, table, config, ENCODER_STD, &mut rng)?;
    Ok((store, enc))
}

/// Normalized word histogram over unique tokens.
#[derive(Clone, Debug)]
struct Bag(Vec<(u32, f64)>);

impl Bag {
    fn new(doc: &Document) -> Self {
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        let mut total = 0usize;
        for t in doc.tokens() {
            *counts.entry(t).or_default() += 1;
            total += 1;
        }
        Self(counts.into_iter().map(|(t, c)| (t, c as f64 / total as f64)).collect())
    }
}

/// Each word of one bag travels to its nearest word of the other; the larger
/// of the two one-sided costs is the distance.
fn relaxed_wmd(words: &WordVectors, a: &Bag, b: &Bag) -> Result<f64> {
    if a.0.is_empty() || b.0.is_empty() {
        return Err(Error::Empty("document has no tokens"));
    }
    let mut dist = vec![0.0; a.0.len() * b.0.len()];
    for (i, (ta, _)) in a.0.iter().enumerate() {
        let va = words.vector(*ta)?;
        for (j, (tb, _)) in b.0.iter().enumerate() {
            let vb = words.vector(*tb)?;
            dist[i * b.0.len() + j] = va.iter().zip(vb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        }
    }
    let nb = b.0.len();
    let forward: f64 =
        a.0.iter()
            .enumerate()
            .map(|(i, (_, w))| w * dist[i * nb..(i + 1) * nb].iter().copied().fold(f64::INFINITY, f64::min))
            .sum();
    let backward: f64 =
        b.0.iter()
            .enumerate()
            .map(|(j, (_, w))| w * (0..a.0.len()).map(|i| dist[i * nb + j]).fold(f64::INFINITY, f64::min))
            .sum();
    Ok(forward.max(backward))
}

/// A similarity function bound to the documents of one side (all jobs or all
/// resumes), with per-entity vectors precomputed and pair values memoized.
pub struct EntitySimilarity {
    sim: Similarity,
    vectors: Option<Vec<Vec<f64>>>,
    bags: Vec<Bag>,
    memo: RwLock<HashMap<(usize, usize), f64>>,
}

impl EntitySimilarity {
    pub fn new(sim: Similarity, docs: &[Document]) -> Result<Self> {
        let refs: Vec<&Document> = docs.iter().collect();
        let vectors = sim.vectors(&refs)?;
        let bags = if vectors.is_none() {
            docs.iter().map(Bag::new).collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            sim,
            vectors,
            bags,
            memo: RwLock::new(HashMap::new()),
        })
    }

    pub fn similarity_fn(&self) -> &Similarity {
        &self.sim
    }

    pub fn len(&self) -> usize {
        self.vectors.as_ref().map_or(self.bags.len(), Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vector(&self, entity: usize) -> Option<&[f64]> {
        self.vectors.as_ref().and_then(|v| v.get(entity)).map(Vec::as_slice)
    }

    pub fn sim(&self, a: usize, b: usize) -> Result<f64> {
        let n = self.len();
        for i in [a, b] {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, len: n });
            }
        }
        if let Some(v) = &self.vectors {
            return Ok(cosine(&v[a], &v[b]));
        }
        let key = (a.min(b), a.max(b));
        if let Some(&s) = self.memo.read().expect("memo lock").get(&key) {
            return Ok(s);
        }
        let s = 1.0 / (1.0 + relaxed_wmd(&self.sim.words, &self.bags[key.0], &self.bags[key.1])?);
        self.memo.write().expect("memo lock").insert(key, s);
        Ok(s)
    }
}
