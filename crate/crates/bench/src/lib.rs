//! Shared fixtures for the benchmarks.

use pjfcann::corpus::{synth_generate, Corpus, SynthConfig};
use pjfcann::model::{DataConfig, Dataset, Model, ModelConfig};

/// A small synthetic corpus, large enough for non-trivial history graphs.
pub fn corpus() -> Corpus {
    synth_generate(&SynthConfig {
        jobs: 40,
        resumes: 120,
        applications: 2000,
        ..SynthConfig::default()
    })
    .expect("synthetic corpus")
}

/// A prepared dataset and an untrained model at the default desk size.
pub fn fixture(global_dim_ratio: Option<f64>) -> (Dataset, Model) {
    let mut cfg = ModelConfig::desk();
    cfg.global_dim_ratio = global_dim_ratio;
    let data = Dataset::prepare(&corpus(), &DataConfig::default(), &cfg, 0, None).expect("dataset");
    let model = Model::for_dataset(cfg, &data, 0).expect("model");
    (data, model)
}
