//! Sentence and document encoders.
//!
//! The document encoder is a two-level stand-in for a multi-granularity
//! recurrent encoder: words → bidirectional GRU → attention pooling gives one
//! vector per sentence; sentence vectors → a second bidirectional GRU →
//! attention pooling → linear projection gives the document vector. The word
//! level alone, followed by a projection, encodes each requirement or
//! experience sentence independently.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rnn::{AttentionPool, BiGru};
use super::vocab::{Vocabulary, PAD};
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A tokenized job posting or resume: one index list per sentence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    sentences: Vec<Vec<u32>>,
}

impl Document {
    /// Drops empty sentences; errors when nothing is left.
    pub fn new(sentences: Vec<Vec<u32>>) -> Result<Self> {
        let sentences: Vec<Vec<u32>> = sentences.into_iter().filter(|s| !s.is_empty()).collect();
        if sentences.is_empty() {
            return Err(Error::Empty("document has no tokens"));
        }
        Ok(Self { sentences })
    }

    /// Encodes raw sentences, truncating each to `max_len` tokens.
    pub fn from_text<S: AsRef<str>>(vocab: &Vocabulary, sentences: &[S], max_len: usize) -> Result<Self> {
        Self::new(
            sentences
                .iter()
                .map(|s| {
                    let mut ids = vocab.encode(s.as_ref());
                    ids.truncate(max_len);
                    ids
                })
                .collect(),
        )
    }

    pub fn sentences(&self) -> &[Vec<u32>] {
        &self.sentences
    }

    pub fn num_sentences(&self) -> usize {
        self.sentences.len()
    }

    pub fn tokens(&self) -> impl Iterator<Item = u32> + '_ {
        self.sentences.iter().flatten().copied()
    }

    /// Same document with its sentences reordered: `order[i]` is the old index
    /// of new sentence `i`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            sentences: order.iter().map(|&i| self.sentences[i].clone()).collect(),
        }
    }
}

/// Right-padded token matrix `[batch, max_len]` with true lengths.
#[derive(Clone, Debug)]
pub struct SentenceBatch {
    tokens: Vec<u32>,
    lengths: Vec<usize>,
    max_len: usize,
}

impl SentenceBatch {
    pub fn new<S: AsRef<[u32]>>(sentences: &[S]) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::Empty("empty sentence batch"));
        }
        let lengths: Vec<usize> = sentences.iter().map(|s| s.as_ref().len()).collect();
        if lengths.contains(&0) {
            return Err(Error::Empty("zero-length sentence"));
        }
        let max_len = *lengths.iter().max().expect("nonempty");
        let mut tokens = vec![PAD; sentences.len() * max_len];
        for (b, s) in sentences.iter().enumerate() {
            tokens[b * max_len..b * max_len + s.as_ref().len()].copy_from_slice(s.as_ref());
        }
        Ok(Self {
            tokens,
            lengths,
            max_len,
        })
    }

    /// Builds a batch with an explicit padded width (extra positions are padding).
    pub fn with_width<S: AsRef<[u32]>>(sentences: &[S], width: usize) -> Result<Self> {
        let mut b = Self::new(sentences)?;
        if width > b.max_len {
            let mut tokens = vec![PAD; b.lengths.len() * width];
            for (i, &l) in b.lengths.iter().enumerate() {
                tokens[i * width..i * width + l].copy_from_slice(&b.tokens[i * b.max_len..i * b.max_len + l]);
            }
            b.tokens = tokens;
            b.max_len = width;
        }
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn token(&self, row: usize, pos: usize) -> u32 {
        self.tokens[row * self.max_len + pos]
    }

    /// Gather indices for position `pos`; padding maps to `None`.
    fn column(&self, pos: usize) -> Vec<Option<usize>> {
        (0..self.len())
            .map(|b| match self.token(b, pos) {
                PAD => None,
                t => Some(t as usize),
            })
            .collect()
    }
}

/// Row-gathers the embedding table: `[batch, max_len, word_dim]`, padding
/// positions are zero vectors.
pub fn embed(tape: &mut Tape<'_>, batch: &SentenceBatch, table: Var) -> Result<Var> {
    let idx: Vec<Option<usize>> = batch
        .tokens
        .iter()
        .map(|&t| if t == PAD { None } else { Some(t as usize) })
        .collect();
    let dim = tape.value(table).cols();
    let flat = tape.gather_rows(table, &idx)?;
    tape.reshape(flat, &[batch.len(), batch.max_len, dim])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub word_dim: usize,
    /// Per-direction width of the word-level recurrent encoder.
    pub hidden: usize,
    /// Per-direction width of the sentence-level recurrent encoder.
    pub sentence_hidden: usize,
    /// Output dimension `d`.
    pub out_dim: usize,
    pub max_sentence_len: usize,
    /// Recurrent cell family; only the gated recurrent unit is implemented.
    pub cell: String,
}

impl EncoderConfig {
    pub fn reference() -> Self {
        Self {
            word_dim: 200,
            hidden: 512,
            sentence_hidden: 512,
            out_dim: 200,
            max_sentence_len: 64,
            cell: "gru".into(),
        }
    }

    pub fn desk() -> Self {
        Self {
            word_dim: 16,
            hidden: 16,
            sentence_hidden: 16,
            out_dim: 32,
            max_sentence_len: 32,
            cell: "gru".into(),
        }
    }
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::reference()
    }
}

/// Registers a `[vocab, word_dim]` embedding table with row 0 (padding) zeroed.
pub fn embedding_table<R: Rng>(
    store: &mut ParamStore,
    name: &str,
    vocab_size: usize,
    word_dim: usize,
    std: f64,
    rng: &mut R,
) -> Result<ParamId> {
    let id = store.add_gaussian(name, &[vocab_size, word_dim], std, rng)?;
    store.value_mut(id).data_mut()[..word_dim].fill(0.0);
    Ok(id)
}

/// Word-level stage: embedding → BiGRU → attention pooling.
#[derive(Clone, Debug)]
pub struct WordEncoder {
    pub embedding: ParamId,
    pub gru: BiGru,
    pub pool: AttentionPool,
}

impl WordEncoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        embedding: ParamId,
        cfg: &EncoderConfig,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let gru = BiGru::new(store, &format!("{prefix}.gru"), cfg.word_dim, cfg.hidden, std, rng)?;
        let pool = AttentionPool::new(store, &format!("{prefix}.attn"), gru.output_dim(), std, rng)?;
        Ok(Self { embedding, gru, pool })
    }

    pub fn output_dim(&self) -> usize {
        self.gru.output_dim()
    }

    /// Per-position BiGRU states for a batch.
    pub fn states(&self, tape: &mut Tape<'_>, batch: &SentenceBatch) -> Result<Vec<Var>> {
        let table = tape.param(self.embedding);
        let steps = (0..batch.max_len())
            .map(|pos| tape.gather_rows(table, &batch.column(pos)))
            .collect::<Result<Vec<_>>>()?;
        self.gru.run(tape, &steps, batch.lengths())
    }

    /// Pooled `[batch, 2·hidden]` sentence vectors and `[batch, max_len]` weights.
    pub fn encode(&self, tape: &mut Tape<'_>, batch: &SentenceBatch) -> Result<(Var, Var)> {
        let states = self.states(tape, batch)?;
        self.pool.pool_steps(tape, &states, batch.lengths())
    }
}

/// Encodes each sentence independently into a `d`-vector.
#[derive(Clone, Debug)]
pub struct SentenceEncoder {
    pub words: WordEncoder,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
}

impl SentenceEncoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        embedding: ParamId,
        cfg: &EncoderConfig,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let words = WordEncoder::new(store, &format!("{prefix}.word"), embedding, cfg, std, rng)?;
        let proj_w = store.add_gaussian(format!("{prefix}.proj.w"), &[words.output_dim(), cfg.out_dim], std, rng)?;
        let proj_b = store.add_gaussian(format!("{prefix}.proj.b"), &[1, cfg.out_dim], std, rng)?;
        Ok(Self { words, proj_w, proj_b })
    }

    /// `[batch, d]`.
    pub fn encode(&self, tape: &mut Tape<'_>, batch: &SentenceBatch) -> Result<Var> {
        let (pooled, _) = self.words.encode(tape, batch)?;
        tape.linear(pooled, self.proj_w, Some(self.proj_b))
    }
}

/// Hierarchical document encoder.
#[derive(Clone, Debug)]
pub struct DocumentEncoder {
    pub words: WordEncoder,
    pub sentence_gru: BiGru,
    pub sentence_pool: AttentionPool,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
}

/// Output of [`DocumentEncoder::encode_documents`].
pub struct DocumentEncoding {
    /// `[docs, d]`.
    pub vectors: Var,
    /// Per-document sentence-level attention weights, each `[1, num_sentences]`.
    pub sentence_weights: Vec<Var>,
}

impl DocumentEncoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        embedding: ParamId,
        cfg: &EncoderConfig,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let words = WordEncoder::new(store, &format!("{prefix}.word"), embedding, cfg, std, rng)?;
        let sentence_gru = BiGru::new(
            store,
            &format!("{prefix}.sent.gru"),
            words.output_dim(),
            cfg.sentence_hidden,
            std,
            rng,
        )?;
        let k = sentence_gru.output_dim();
        let sentence_pool = AttentionPool::new(store, &format!("{prefix}.sent.attn"), k, std, rng)?;
        let proj_w = store.add_gaussian(format!("{prefix}.proj.w"), &[k, cfg.out_dim], std, rng)?;
        let proj_b = store.add_gaussian(format!("{prefix}.proj.b"), &[1, cfg.out_dim], std, rng)?;
        Ok(Self {
            words,
            sentence_gru,
            sentence_pool,
            proj_w,
            proj_b,
        })
    }

    pub fn encode_document(&self, tape: &mut Tape<'_>, doc: &Document) -> Result<Var> {
        Ok(self.encode_documents(tape, &[doc])?.vectors)
    }

    pub fn encode_documents(&self, tape: &mut Tape<'_>, docs: &[&Document]) -> Result<DocumentEncoding> {
        if docs.is_empty() {
            return Err(Error::Empty("no documents to encode"));
        }
        let all: Vec<&[u32]> = docs
            .iter()
            .flat_map(|d| d.sentences().iter().map(Vec::as_slice))
            .collect();
        let batch = SentenceBatch::new(&all)?;
        let (sentence_vecs, _) = self.words.encode(tape, &batch)?;

        // Position-major sentence sequences, one row per document.
        let counts: Vec<usize> = docs.iter().map(|d| d.num_sentences()).collect();
        let offsets: Vec<usize> = counts
            .iter()
            .scan(0, |acc, &c| {
                let o = *acc;
                *acc += c;
                Some(o)
            })
            .collect();
        let longest = *counts.iter().max().expect("nonempty");
        let steps = (0..longest)
            .map(|t| {
                let rows: Vec<Option<usize>> = counts
                    .iter()
                    .zip(&offsets)
                    .map(|(&c, &o)| (t < c).then_some(o + t))
                    .collect();
                tape.gather_rows(sentence_vecs, &rows)
            })
            .collect::<Result<Vec<_>>>()?;
        let states = self.sentence_gru.run(tape, &steps, &counts)?;
        let (pooled, weights) = self.sentence_pool.pool_steps(tape, &states, &counts)?;
        let vectors = tape.linear(pooled, self.proj_w, Some(self.proj_b))?;
        let sentence_weights = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let row = tape.slice_rows(weights, i, i + 1)?;
                tape.slice_cols(row, 0, c)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DocumentEncoding {
            vectors,
            sentence_weights,
        })
    }

    /// Forward-only document vectors (no gradient bookkeeping kept).
    pub fn vectors(&self, store: &ParamStore, docs: &[&Document]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(docs.len());
        for chunk in docs.chunks(64) {
            let mut tape = Tape::new(store);
            let enc = self.encode_documents(&mut tape, chunk)?;
            let t: &Tensor = tape.value(enc.vectors);
            out.extend((0..t.rows()).map(|r| t.row_slice(r).to_vec()));
        }
        Ok(out)
    }
}
