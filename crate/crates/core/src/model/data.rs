//! From a corpus to model-ready examples: tokenization, the split, the history
//! index, similarity functions and one pair of graphs per example.

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::{GraphInput, PairInput};
use super::Model;
use crate::autodiff::ParamStore;
use crate::corpus::{make_split, Corpus, LabeledPair, SplitPlan};
use crate::error::Result;
use crate::graph::{
    build_graph, similarity_pairs, train_similarity_encoder, EntitySimilarity, GraphConfig, HistoryIndex, Side,
    Similarity, SimilarityKind, SupervisedConfig, SupervisedReport, WordVectors,
};
use crate::text::{load_pretrained, Document, Vocabulary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Non-test pieces whose successes form the history (of 9).
    pub history_pieces: usize,
    /// Apply the length and success filters before splitting.
    pub filter: bool,
    pub graph: GraphConfig,
    pub similarity: SimilarityKind,
    /// Width of the frozen word vectors used by the bag-of-words similarity kinds.
    pub similarity_word_dim: usize,
    /// Optional `token v1 … vk` file overriding those word vectors.
    pub pretrained: Option<PathBuf>,
    /// Encoder used by both encoder-based similarity kinds, and the training
    /// setup of the supervised one.
    pub supervised: SupervisedConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            history_pieces: 5,
            filter: true,
            graph: GraphConfig::default(),
            similarity: SimilarityKind::EncoderCosine,
            similarity_word_dim: 32,
            pretrained: None,
            supervised: SupervisedConfig::default(),
        }
    }
}

/// A labeled pair with its two history graphs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub pair: LabeledPair,
    pub job_graph: GraphInput,
    pub resume_graph: GraphInput,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub kind: Option<SimilarityKind>,
    pub jobs: Option<SupervisedReport>,
    pub resumes: Option<SupervisedReport>,
}

#[derive(Clone)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub job_ids: Vec<String>,
    pub resume_ids: Vec<String>,
    pub job_docs: Vec<Document>,
    pub resume_docs: Vec<Document>,
    pub split: SplitPlan,
    pub history: HistoryIndex,
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
    pub test: Vec<Example>,
    pub similarity: SimilarityReport,
    pub corpus_hash: String,
    graph: GraphConfig,
    job_rows: Vec<Option<usize>>,
    resume_rows: Vec<Option<usize>>,
    job_sim: Option<Arc<EntitySimilarity>>,
    resume_sim: Option<Arc<EntitySimilarity>>,
}

impl Dataset {
    /// Prepares `corpus` for a model of shape `model`. With `bound`, the
    /// vocabulary and node-table rows of an existing model are reused (entities
    /// it has not seen map to the cold row); otherwise both are built from the
    /// corpus.
    pub fn prepare(
        corpus: &Corpus,
        cfg: &DataConfig,
        model: &ModelConfig,
        seed: u64,
        bound: Option<&Model>,
    ) -> Result<Self> {
        corpus.validate()?;
        let corpus = if cfg.filter { corpus.filter() } else { corpus.clone() };
        let pairs = corpus.labeled_pairs();
        let split = make_split(&pairs, seed, cfg.history_pieces)?;

        let texts = corpus
            .jobs
            .iter()
            .flat_map(|j| j.requirements.iter())
            .chain(corpus.resumes.iter().flat_map(|r| r.experiences.iter()))
            .map(String::as_str);
        let vocab = match bound {
            Some(m) => m.vocab.clone(),
            None => Vocabulary::build(texts, 1),
        };
        let max_len = model.encoder.max_sentence_len;
        let job_docs = corpus
            .jobs
            .iter()
            .map(|j| Document::from_text(&vocab, &j.requirements, max_len))
            .collect::<Result<Vec<_>>>()?;
        let resume_docs = corpus
            .resumes
            .iter()
            .map(|r| Document::from_text(&vocab, &r.experiences, max_len))
            .collect::<Result<Vec<_>>>()?;
        let job_ids: Vec<String> = corpus.jobs.iter().map(|j| j.id.clone()).collect();
        let resume_ids: Vec<String> = corpus.resumes.iter().map(|r| r.id.clone()).collect();
        let (job_rows, resume_rows) = match bound {
            Some(m) => (rows_by_id(&job_ids, &m.job_ids), rows_by_id(&resume_ids, &m.resume_ids)),
            None => (
                (0..job_ids.len()).map(Some).collect(),
                (0..resume_ids.len()).map(Some).collect(),
            ),
        };
        let history = HistoryIndex::from_pairs(&split.history);

        let mut similarity = SimilarityReport::default();
        let (job_sim, resume_sim) = if model.dims().global > 0 {
            similarity.kind = Some(cfg.similarity);
            let known: Vec<LabeledPair> = split.history.iter().chain(&split.train).copied().collect();
            let jobs = side_similarity(cfg, &vocab, &job_docs, &known, Side::Jobs, seed, &mut similarity.jobs)?;
            let resumes = side_similarity(
                cfg,
                &vocab,
                &resume_docs,
                &known,
                Side::Resumes,
                seed,
                &mut similarity.resumes,
            )?;
            (Some(Arc::new(jobs)), Some(Arc::new(resumes)))
        } else {
            (None, None)
        };

        let mut data = Self {
            vocab,
            job_ids,
            resume_ids,
            job_docs,
            resume_docs,
            train: Vec::new(),
            valid: Vec::new(),
            test: Vec::new(),
            history,
            similarity,
            corpus_hash: corpus.hash(),
            graph: cfg.graph.clone(),
            job_rows,
            resume_rows,
            job_sim,
            resume_sim,
            split,
        };
        data.rebuild_graphs()?;
        Ok(data)
    }

    /// Replaces the history index and rebuilds every example's graphs.
    pub fn set_history(&mut self, history: HistoryIndex) -> Result<()> {
        self.history = history;
        self.rebuild_graphs()
    }

    fn rebuild_graphs(&mut self) -> Result<()> {
        let split = &self.split;
        let [train, valid, test] = [&split.train, &split.valid, &split.test]
            .map(|pairs| pairs.par_iter().map(|&p| self.example(p)).collect::<Result<Vec<_>>>());
        self.train = train?;
        self.valid = valid?;
        self.test = test?;
        Ok(())
    }

    fn example(&self, pair: LabeledPair) -> Result<Example> {
        let (job_graph, resume_graph) = match (&self.job_sim, &self.resume_sim) {
            (Some(js), Some(rs)) => {
                let related = self.history.related_jobs(pair.job, pair.resume);
                let jg = build_graph(pair.job, &related, |a, b| js.sim(a, b), &self.graph)?;
                let related = self.history.related_resumes(pair.job, pair.resume);
                let rg = build_graph(pair.resume, &related, |a, b| rs.sim(a, b), &self.graph)?;
                (
                    GraphInput {
                        rows: jg.nodes.iter().map(|&i| self.job_rows[i]).collect(),
                        propagation: jg.propagation(&self.graph),
                    },
                    GraphInput {
                        rows: rg.nodes.iter().map(|&i| self.resume_rows[i]).collect(),
                        propagation: rg.propagation(&self.graph),
                    },
                )
            }
            _ => (
                GraphInput::single(self.job_rows[pair.job]),
                GraphInput::single(self.resume_rows[pair.resume]),
            ),
        };
        Ok(Example {
            pair,
            job_graph,
            resume_graph,
        })
    }

    pub fn input<'a>(&'a self, e: &'a Example) -> PairInput<'a> {
        PairInput {
            job: &self.job_docs[e.pair.job],
            resume: &self.resume_docs[e.pair.resume],
            job_graph: &e.job_graph,
            resume_graph: &e.resume_graph,
        }
    }

    pub fn inputs<'a>(&'a self, examples: &'a [Example]) -> Vec<PairInput<'a>> {
        examples.iter().map(|e| self.input(e)).collect()
    }

    pub fn job_similarity(&self) -> Option<&EntitySimilarity> {
        self.job_sim.as_deref()
    }

    pub fn resume_similarity(&self) -> Option<&EntitySimilarity> {
        self.resume_sim.as_deref()
    }
}

fn rows_by_id(ids: &[String], table: &[String]) -> Vec<Option<usize>> {
    let index: HashMap<&str, usize> = table.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    ids.iter().map(|id| index.get(id.as_str()).copied()).collect()
}

fn side_similarity(
    cfg: &DataConfig,
    vocab: &Vocabulary,
    docs: &[Document],
    known: &[LabeledPair],
    side: Side,
    seed: u64,
    report: &mut Option<SupervisedReport>,
) -> Result<EntitySimilarity> {
    let mut words = WordVectors::seeded(vocab.len(), cfg.similarity_word_dim, seed);
    if let Some(path) = &cfg.pretrained {
        let mut store = ParamStore::new();
        let id = store.add("words", words.table().clone())?;
        load_pretrained(path, vocab, &mut store, id)?;
        words = WordVectors::new(store.value(id).clone())?;
    }
    let entity = |p: &LabeledPair| match side {
        Side::Jobs => p.job,
        Side::Resumes => p.resume,
    };
    let fitted: BTreeSet<usize> = known.iter().map(entity).collect();
    let fitted_docs: Vec<&Document> = fitted.iter().map(|&i| &docs[i]).collect();
    let sim = match cfg.similarity {
        SimilarityKind::EncoderCosine => {
            Similarity::random_encoder(words, cfg.supervised.encoder.clone(), vocab.len(), seed)?
        }
        SimilarityKind::Supervised => {
            let sup = SupervisedConfig {
                seed: cfg.supervised.seed ^ seed,
                ..cfg.supervised.clone()
            };
            let pairs = similarity_pairs(known, side, sup.max_pairs, sup.seed)?;
            let (sim, r) = train_similarity_encoder(docs, &pairs, words, &sup)?;
            *report = Some(r);
            sim
        }
        kind => Similarity::fit(kind, words, &fitted_docs)?,
    };
    EntitySimilarity::new(sim, docs)
}
