use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LabeledPair;
use crate::error::{Error, Result};

pub const PIECES: usize = 10;
const VALID_FRACTION: f64 = 0.1;

/// Balanced pieces and their roles: history (only successes kept), training
/// (split again into train/valid) and one test piece.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub pieces: Vec<Vec<LabeledPair>>,
    pub history_pieces: Vec<usize>,
    pub train_pieces: Vec<usize>,
    pub test_piece: usize,
    pub history: Vec<LabeledPair>,
    pub train: Vec<LabeledPair>,
    pub valid: Vec<LabeledPair>,
    pub test: Vec<LabeledPair>,
}

/// Number of the nine non-test pieces given to history for a history/training
/// size ratio in `[0, 1]`; at least one piece always remains for training.
pub fn history_pieces_for_ratio(ratio: f64) -> usize {
    ((ratio.clamp(0.0, 1.0) * (PIECES - 1) as f64).round() as usize).min(PIECES - 2)
}

pub fn make_split(pairs: &[LabeledPair], seed: u64, history_pieces: usize) -> Result<SplitPlan> {
    if history_pieces > PIECES - 2 {
        return Err(Error::Infeasible(format!(
            "{history_pieces} history pieces leave nothing to train on"
        )));
    }
    let mut pos: Vec<LabeledPair> = pairs.iter().copied().filter(|p| p.label == 1).collect();
    let mut neg: Vec<LabeledPair> = pairs.iter().copied().filter(|p| p.label == 0).collect();
    let n = pos.len().min(neg.len());
    if n < PIECES {
        return Err(Error::Infeasible(format!(
            "need at least {PIECES} pairs of each class, have {} positive and {} negative",
            pos.len(),
            neg.len()
        )));
    }
    pos.sort();
    neg.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    pos.truncate(n);
    neg.truncate(n);

    let mut pieces = vec![Vec::new(); PIECES];
    for (i, p) in pos.into_iter().enumerate() {
        pieces[i % PIECES].push(p);
    }
    for (i, p) in neg.into_iter().enumerate() {
        pieces[i % PIECES].push(p);
    }
    for piece in &mut pieces {
        piece.shuffle(&mut rng);
    }

    let mut roles: Vec<usize> = (0..PIECES).collect();
    roles.shuffle(&mut rng);
    let test_piece = roles[0];
    let mut history_idx = roles[1..1 + history_pieces].to_vec();
    let mut train_idx = roles[1 + history_pieces..].to_vec();
    history_idx.sort_unstable();
    train_idx.sort_unstable();

    let history: Vec<LabeledPair> = history_idx
        .iter()
        .flat_map(|&i| pieces[i].iter().copied().filter(|p| p.label == 1))
        .collect();
    let mut training: Vec<LabeledPair> = train_idx.iter().flat_map(|&i| pieces[i].iter().copied()).collect();
    training.shuffle(&mut rng);
    let n_valid = ((training.len() as f64 * VALID_FRACTION).round() as usize).clamp(1, training.len() - 1);
    let valid = training[..n_valid].to_vec();
    let train = training[n_valid..].to_vec();
    let test = pieces[test_piece].clone();

    Ok(SplitPlan {
        pieces,
        history_pieces: history_idx,
        train_pieces: train_idx,
        test_piece,
        history,
        train,
        valid,
        test,
    })
}
