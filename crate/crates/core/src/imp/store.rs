use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pruning::{apply_mask, Mask};

/// How many previous optima are retained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorePolicy {
    #[default]
    All,
    LastOnly,
}

#[derive(Clone, Debug)]
pub struct StoredOptimum {
    pub round: usize,
    /// Full flat vector, zero off-mask.
    pub theta: Vec<f32>,
    pub mask: Mask,
}

/// Previous rounds' final weights.
#[derive(Clone, Debug, Default)]
pub struct OptimaStore {
    policy: StorePolicy,
    entries: Vec<StoredOptimum>,
}

impl OptimaStore {
    pub fn new(policy: StorePolicy) -> Self {
        OptimaStore {
            policy,
            entries: Vec::new(),
        }
    }

    pub fn policy(&self) -> StorePolicy {
        self.policy
    }

    pub fn entries(&self) -> &[StoredOptimum] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last(&self) -> Option<&StoredOptimum> {
        self.entries.last()
    }

    /// Rounds currently held, oldest first.
    pub fn rounds(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.round).collect()
    }

    /// Appends `θ ⊙ mask` for `round`; last-only keeps just the newest entry.
    pub fn store_optimum(&mut self, round: usize, theta: &[f32], mask: &Mask) -> Result<()> {
        if let Some(last) = self.entries.last() {
            if round <= last.round {
                return Err(Error::Contract(format!(
                    "optimum for round {round} stored after round {}",
                    last.round
                )));
            }
        }
        let entry = StoredOptimum {
            round,
            theta: apply_mask(theta, mask)?,
            mask: mask.clone(),
        };
        if self.policy == StorePolicy::LastOnly {
            self.entries.clear();
        }
        self.entries.push(entry);
        Ok(())
    }
}
