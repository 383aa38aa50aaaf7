//! Historical success records, related-entity search and weighted
//! recruitment graphs.

mod similarity;
mod supervised;

pub use similarity::{EntitySimilarity, Similarity, SimilarityKind, SimilarityState, WordVectors, SIF_A};
pub use supervised::{
    grad_check_similarity_encoder, similarity_pairs, train_similarity_encoder, SimilarityPair, SupervisedConfig,
    SupervisedReport,
};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::LabeledPair;
use crate::error::Result;
use crate::tensor::Tensor;

/// Which entity family a graph or similarity function covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Jobs,
    Resumes,
}

/// The success records `P_h` with both inverted mappings.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HistoryIndex {
    records: BTreeSet<(usize, usize)>,
    jobs_of_resume: BTreeMap<usize, BTreeSet<usize>>,
    resumes_of_job: BTreeMap<usize, BTreeSet<usize>>,
}

impl HistoryIndex {
    /// Indexes `(job, resume)` success records.
    pub fn new(records: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut index = Self::default();
        for (j, r) in records {
            index.records.insert((j, r));
            index.jobs_of_resume.entry(r).or_default().insert(j);
            index.resumes_of_job.entry(j).or_default().insert(r);
        }
        index
    }

    /// Indexes the successful pairs among `pairs`.
    pub fn from_pairs(pairs: &[LabeledPair]) -> Self {
        Self::new(pairs.iter().filter(|p| p.label == 1).map(|p| (p.job, p.resume)))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, job: usize, resume: usize) -> bool {
        self.records.contains(&(job, resume))
    }

    pub fn records(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.records.iter().copied()
    }

    /// Jobs the current resume was hired for, without the current job, ascending.
    pub fn related_jobs(&self, job: usize, resume: usize) -> Vec<usize> {
        self.jobs_of_resume
            .get(&resume)
            .map(|s| s.iter().copied().filter(|&j| j != job).collect())
            .unwrap_or_default()
    }

    /// Resumes the current job hired, without the current resume, ascending.
    pub fn related_resumes(&self, job: usize, resume: usize) -> Vec<usize> {
        self.resumes_of_job
            .get(&job)
            .map(|s| s.iter().copied().filter(|&r| r != resume).collect())
            .unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    /// Keep at most this many related nodes, the most similar to the current one.
    pub max_related: usize,
    pub self_loops: bool,
    /// Divide each adjacency row by its sum (when positive) before propagation.
    pub normalize_rows: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            max_related: 20,
            self_loops: false,
            normalize_rows: true,
        }
    }
}

/// Node 0 is the current entity, nodes `1..=q` its related entities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecruitmentGraph {
    pub nodes: Vec<usize>,
    /// Symmetric `[q + 1, q + 1]` similarity matrix.
    pub adjacency: Tensor,
}

impl RecruitmentGraph {
    pub fn related(&self) -> usize {
        self.nodes.len() - 1
    }

    /// The matrix the graph network propagates with.
    pub fn propagation(&self, cfg: &GraphConfig) -> Tensor {
        if !cfg.normalize_rows {
            return self.adjacency.clone();
        }
        let n = self.nodes.len();
        let mut out = self.adjacency.clone();
        for r in 0..n {
            let row = &mut out.data_mut()[r * n..(r + 1) * n];
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|x| *x /= s);
            }
        }
        out
    }
}

/// Builds the complete graph over `current` and `related`, weighting every
/// edge with `sim`. When there are more related entities than
/// `cfg.max_related`, the ones most similar to `current` are kept (ties by
/// id); survivors stay in ascending id order.
pub fn build_graph(
    current: usize,
    related: &[usize],
    mut sim: impl FnMut(usize, usize) -> Result<f64>,
    cfg: &GraphConfig,
) -> Result<RecruitmentGraph> {
    let mut kept: Vec<usize> = related.to_vec();
    let mut to_current: BTreeMap<usize, f64> = BTreeMap::new();
    if kept.len() > cfg.max_related {
        for &r in &kept {
            to_current.insert(r, sim(current, r)?);
        }
        kept.sort_by(|a, b| to_current[b].total_cmp(&to_current[a]).then(a.cmp(b)));
        kept.truncate(cfg.max_related);
        kept.sort_unstable();
    }
    let mut nodes = vec![current];
    nodes.extend(kept);
    let n = nodes.len();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s = match (i, to_current.get(&nodes[j])) {
                (0, Some(&s)) => s,
                _ => sim(nodes[i], nodes[j])?,
            };
            a[i * n + j] = s;
            a[j * n + i] = s;
        }
        if cfg.self_loops {
            a[i * n + i] = sim(nodes[i], nodes[i])?;
        }
    }
    Ok(RecruitmentGraph {
        nodes,
        adjacency: Tensor::matrix(n, n, a)?,
    })
}
