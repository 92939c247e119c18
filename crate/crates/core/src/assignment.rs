//! Assignment records and the append-only assignment log.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{AssignmentId, MoocletId, Pseudonym, Timestamp, VersionId};
use crate::registry::{PolicyKind, Version};
use crate::store::Value;

/// What decided an assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionSource {
    Policy,
    InstructorPin,
}

/// Outcome of one assignment decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentRecord {
    pub id: AssignmentId,
    pub learner: Pseudonym,
    pub mooclet: MoocletId,
    pub version: VersionId,
    /// Configured policy kind at decision time.
    pub policy: PolicyKind,
    pub source: DecisionSource,
    pub timestamp: Timestamp,
    /// Exactly the variables the policy consulted; `null` when the learner
    /// had no value.
    pub context: BTreeMap<String, Option<Value>>,
}

/// Served version together with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub version: Version,
    pub record: AssignmentRecord,
    /// True when a sticky MOOClet returned the learner's earlier assignment.
    pub repeat: bool,
}

#[derive(Debug, Clone, Default)]
pub struct AssignmentLog {
    records: Vec<AssignmentRecord>,
    by_id: HashMap<AssignmentId, usize>,
    by_pair: HashMap<(MoocletId, VersionId, Pseudonym), Vec<AssignmentId>>,
    rewards: BTreeMap<AssignmentId, bool>,
}

impl AssignmentLog {
    pub fn records(&self) -> &[AssignmentRecord] {
        &self.records
    }

    pub fn get(&self, id: AssignmentId) -> Option<&AssignmentRecord> {
        self.by_id.get(&id).map(|&i| &self.records[i])
    }

    pub fn reward(&self, id: AssignmentId) -> Option<bool> {
        self.rewards.get(&id).copied()
    }

    pub(crate) fn push(&mut self, record: AssignmentRecord) {
        self.by_id.insert(record.id, self.records.len());
        self.by_pair
            .entry((record.mooclet, record.version, record.learner.clone()))
            .or_default()
            .push(record.id);
        self.records.push(record);
    }

    pub(crate) fn set_reward(&mut self, id: AssignmentId, success: bool) {
        self.rewards.insert(id, success);
    }

    /// The assignment a reward for (mooclet, version, learner) attaches to:
    /// the earliest one not yet rewarded.
    pub fn rewardable(
        &self,
        mooclet: MoocletId,
        version: VersionId,
        learner: &Pseudonym,
    ) -> Result<&AssignmentRecord> {
        let ids = self
            .by_pair
            .get(&(mooclet, version, learner.clone()))
            .filter(|ids| !ids.is_empty())
            .ok_or_else(|| {
                Error::Provenance(format!(
                    "learner {learner} was never assigned {version} of mooclet {mooclet}"
                ))
            })?;
        ids.iter()
            .find(|id| !self.rewards.contains_key(id))
            .and_then(|id| self.get(*id))
            .ok_or_else(|| {
                Error::DuplicateReward(format!(
                    "every assignment of {version} of mooclet {mooclet} to {learner} already has a reward"
                ))
            })
    }

    /// Writes the log as JSON lines, one record per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W, mooclet: Option<MoocletId>) -> Result<()> {
        for r in self
            .records
            .iter()
            .filter(|r| mooclet.is_none_or(|m| r.mooclet == m))
        {
            serde_json::to_writer(&mut out, r).map_err(|e| Error::Journal(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}
