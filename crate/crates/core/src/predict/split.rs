use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LabeledQuery, PredictError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratifyKey {
    #[default]
    DatasetId,
}

impl StratifyKey {
    fn of<'a>(&self, q: &'a LabeledQuery) -> &'a str {
        match self {
            StratifyKey::DatasetId => &q.dataset_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_ratio: f64,
    pub seed: u64,
    #[serde(default)]
    pub stratify_key: StratifyKey,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_ratio: 0.2,
            seed: 0,
            stratify_key: StratifyKey::DatasetId,
        }
    }
}

impl SplitSpec {
    pub fn new(test_ratio: f64, seed: u64) -> Result<Self, PredictError> {
        let spec = SplitSpec {
            test_ratio,
            seed,
            ..Default::default()
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), PredictError> {
        if !(self.test_ratio > 0.0 && self.test_ratio < 1.0) {
            return Err(PredictError::BadRatio(self.test_ratio));
        }
        Ok(())
    }

    /// round(n * ratio), at least 1 and at most n - 1.
    pub fn test_count(&self, stratum_size: usize) -> usize {
        let raw = (stratum_size as f64 * self.test_ratio).round() as usize;
        raw.clamp(1, stratum_size.saturating_sub(1).max(1))
    }
}

// FNV-1a, so stream seeds do not depend on the std hasher.
fn stratum_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Splits by query id within each stratum. Every model's row for a given
/// query lands on the same side, so models are scored on the same test set.
pub fn stratified_split(
    queries: &[LabeledQuery],
    spec: &SplitSpec,
) -> Result<(Vec<LabeledQuery>, Vec<LabeledQuery>), PredictError> {
    spec.validate()?;
    if queries.is_empty() {
        return Err(PredictError::EmptyInput);
    }
    let mut strata: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for q in queries {
        strata.entry(spec.stratify_key.of(q)).or_default().insert(&q.query_id);
    }
    let mut test_ids: BTreeSet<(&str, &str)> = BTreeSet::new();
    for (stratum, ids) in &strata {
        if ids.len() < 2 {
            return Err(PredictError::StratumTooSmall {
                stratum: stratum.to_string(),
                size: ids.len(),
            });
        }
        let mut order: Vec<&str> = ids.iter().copied().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ stratum_hash(stratum));
        order.shuffle(&mut rng);
        for id in order.into_iter().take(spec.test_count(ids.len())) {
            test_ids.insert((stratum, id));
        }
    }
    let (test, train): (Vec<_>, Vec<_>) = queries
        .iter()
        .cloned()
        .partition(|q| test_ids.contains(&(spec.stratify_key.of(q), q.query_id.as_str())));
    Ok((train, test))
}
