//! Model assembly, data preparation, training, evaluation and checkpoints.

mod checkpoint;
mod config;
mod data;
mod network;
mod train;

pub use checkpoint::{ArrayEntry, CheckpointManifest, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{DecayMode, Dims, ModelConfig, TrainConfig};
pub use data::{DataConfig, Dataset, Example, SimilarityReport};
pub use network::{BatchOutput, GlobalPath, GraphInput, Head, LocalPath, Network, PairInput, PairTrace};
pub use train::{fit, EpochLog, FitReport, Metrics};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{ParamStore, Tape};
use crate::error::Result;
use crate::text::Vocabulary;

/// Pairs scored per tape during inference.
const EVAL_CHUNK: usize = 32;

/// A network with its parameter values and the tables that bind it to a
/// corpus: the vocabulary and the entity ids behind each node-table row.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub network: Network,
    pub vocab: Vocabulary,
    pub job_ids: Vec<String>,
    pub resume_ids: Vec<String>,
}

impl Model {
    pub fn new(
        config: ModelConfig,
        vocab: Vocabulary,
        job_ids: Vec<String>,
        resume_ids: Vec<String>,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let network = Network::new(
            &mut store,
            &config,
            vocab.len(),
            job_ids.len(),
            resume_ids.len(),
            &mut rng,
        )?;
        Ok(Self {
            config,
            store,
            network,
            vocab,
            job_ids,
            resume_ids,
        })
    }

    /// Builds a model sized for a prepared dataset.
    pub fn for_dataset(config: ModelConfig, data: &Dataset, seed: u64) -> Result<Self> {
        Self::new(
            config,
            data.vocab.clone(),
            data.job_ids.clone(),
            data.resume_ids.clone(),
            seed,
        )
    }

    /// Eval-mode probabilities, one per pair, in input order.
    pub fn predict(&self, pairs: &[PairInput<'_>]) -> Result<Vec<f64>> {
        let chunks = pairs
            .par_chunks(EVAL_CHUNK)
            .map(|chunk| {
                let mut tape = Tape::new(&self.store);
                let out = self.network.forward(&mut tape, chunk, None)?;
                Ok(tape.value(out.predictions).data().to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }

    /// Metrics of eval-mode predictions on prepared examples.
    pub fn evaluate(&self, data: &Dataset, examples: &[Example], threshold: f64) -> Result<Metrics> {
        let inputs = data.inputs(examples);
        let preds = self.predict(&inputs)?;
        let labels: Vec<u8> = examples.iter().map(|e| e.pair.label).collect();
        Metrics::from_predictions(&preds, &labels, threshold)
    }
}
