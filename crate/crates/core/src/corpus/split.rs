use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Bundle, DocId};
use crate::error::{Error, Result};

/// Train/validation/test fractions of the groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.6, valid: 0.2, test: 0.2 }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(Error::Config(format!("split fractions must be non-negative: {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// Partitions a bundle by group into train, validation and test bundles.
///
/// Groups are shuffled under `seed` and cut by the rounded fractions, so a
/// group's documents, queries and tuples all land in one split. Background
/// documents (no group) are kept in every split's corpus.
pub fn split_by_group(bundle: &Bundle, fractions: SplitFractions, seed: u64) -> Result<[Bundle; 3]> {
    fractions.validate()?;
    let mut ids: Vec<u32> = bundle.groups.values().copied().collect::<BTreeSet<_>>().into_iter().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = ids.len();
    let n_train = ((fractions.train * n as f64).round() as usize).min(n);
    let n_valid = ((fractions.valid * n as f64).round() as usize).min(n - n_train);
    let assignment: BTreeMap<u32, usize> = ids
        .iter()
        .enumerate()
        .map(|(i, &g)| (g, if i < n_train { 0 } else if i < n_train + n_valid { 1 } else { 2 }))
        .collect();

    let split_of = |id: &DocId| -> Option<usize> { bundle.groups.get(id).map(|g| assignment[g]) };
    for q in &bundle.queries {
        if split_of(&q.qid).is_none() {
            return Err(Error::Config(format!("query {:?} has no group", q.qid.as_str())));
        }
    }

    let make = |part: usize| -> Bundle {
        let corpus = bundle.corpus.filter(|id| split_of(id).is_none_or(|s| s == part));
        let queries: Vec<_> = bundle.queries.iter().filter(|q| split_of(&q.qid) == Some(part)).cloned().collect();
        let qrels = bundle.qrels.restrict(queries.iter().map(|q| &q.qid));
        let tuples = bundle.tuples.iter().filter(|t| split_of(&t.anchor) == Some(part)).cloned().collect();
        let groups = bundle
            .groups
            .iter()
            .filter(|(_, g)| assignment[*g] == part)
            .map(|(d, g)| (d.clone(), *g))
            .collect();
        Bundle { corpus, queries, qrels, tuples, groups }
    };
    Ok([make(0), make(1), make(2)])
}
