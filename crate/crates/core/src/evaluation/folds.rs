//! Deterministic train/validation/test splits over transcript ids.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// One shuffle, then `k` contiguous test blocks that partition the ids.
    #[default]
    KFold,
    /// `k` independent shuffles, each holding out the first `n / k` ids.
    RepeatedHoldout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoldOptions {
    pub k: usize,
    /// Share of each training pool held out for early stopping.
    pub val_fraction: f64,
    pub mode: SplitMode,
    pub seed: u64,
}

impl Default for FoldOptions {
    fn default() -> Self {
        FoldOptions {
            k: 5,
            val_fraction: 0.05,
            mode: SplitMode::KFold,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub options: FoldOptions,
    pub folds: Vec<Fold>,
}

fn split_pool(pool: Vec<String>, val_fraction: f64) -> (Vec<String>, Vec<String>) {
    let n_val = ((pool.len() as f64) * val_fraction).round() as usize;
    let n_val = n_val.min(pool.len().saturating_sub(1));
    let mut train = pool;
    let val = train.split_off(train.len() - n_val);
    (train, val)
}

/// Splits `ids` into folds. Ids are sorted before the seeded shuffle, so the
/// plan does not depend on the order they are supplied in.
pub fn make_folds(ids: &[String], opts: &FoldOptions) -> Result<FoldPlan> {
    let n = ids.len();
    if opts.k < 2 {
        return Err(Error::invalid(format!("k = {} folds: need at least 2", opts.k)));
    }
    if n < opts.k {
        return Err(Error::invalid(format!("{n} transcripts cannot fill {} folds", opts.k)));
    }
    if !(0.0..1.0).contains(&opts.val_fraction) {
        return Err(Error::invalid(format!("val_fraction {} outside [0, 1)", opts.val_fraction)));
    }
    let mut sorted = ids.to_vec();
    sorted.sort();
    let unique: HashSet<&String> = sorted.iter().collect();
    if unique.len() != n {
        return Err(Error::invalid("duplicate transcript ids"));
    }

    let mut folds = Vec::with_capacity(opts.k);
    match opts.mode {
        SplitMode::KFold => {
            let mut order = sorted;
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));
            let (base, extra) = (n / opts.k, n % opts.k);
            let mut start = 0;
            for index in 0..opts.k {
                let len = base + usize::from(index < extra);
                let test = order[start..start + len].to_vec();
                let pool: Vec<String> = order[..start].iter().chain(&order[start + len..]).cloned().collect();
                let (train, val) = split_pool(pool, opts.val_fraction);
                folds.push(Fold { index, train, val, test });
                start += len;
            }
        }
        SplitMode::RepeatedHoldout => {
            let n_test = (n / opts.k).max(1);
            for index in 0..opts.k {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                rng.set_stream(index as u64);
                let mut order = sorted.clone();
                order.shuffle(&mut rng);
                let pool = order.split_off(n_test);
                let (train, val) = split_pool(pool, opts.val_fraction);
                folds.push(Fold {
                    index,
                    train,
                    val,
                    test: order,
                });
            }
        }
    }
    Ok(FoldPlan {
        options: opts.clone(),
        folds,
    })
}

/// Single train/validation split of all `ids` for a fit without a test set.
/// Uses the same sort-then-shuffle order as the first k-fold plan.
pub fn train_val_split(ids: &[String], val_fraction: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if ids.is_empty() {
        return Err(Error::invalid("no transcripts to split"));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::invalid(format!("val_fraction {val_fraction} outside [0, 1)")));
    }
    let mut order = ids.to_vec();
    order.sort();
    if order.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("duplicate transcript ids"));
    }
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(split_pool(order, val_fraction))
}
