//! Assignment policies.
//!
//! Every policy is a function of the eligible versions, the MOOClet's
//! policy state, the learner's context, and a random source. A uniform A/B
//! split is the special case that ignores both state and context; Thompson
//! sampling reads the state; the contextual policy also reads the context.

use std::collections::BTreeMap;
use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::VersionId;
use crate::registry::{BetaPrior, Mooclet, PolicySpec};
use crate::rng::RandomSource;
use crate::store::Value;

/// Beta posterior over one arm's success probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub alpha: f64,
    pub beta: f64,
}

impl From<BetaPrior> for Posterior {
    fn from(p: BetaPrior) -> Self {
        Posterior {
            alpha: p.alpha,
            beta: p.beta,
        }
    }
}

impl Posterior {
    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    fn is_valid(&self) -> bool {
        self.alpha.is_finite() && self.beta.is_finite() && self.alpha > 0.0 && self.beta > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub assignments: u64,
    pub successes: u64,
    pub failures: u64,
    #[serde(flatten)]
    pub posterior: Posterior,
}

impl ArmStats {
    pub fn fresh(prior: BetaPrior) -> Self {
        ArmStats {
            assignments: 0,
            successes: 0,
            failures: 0,
            posterior: prior.into(),
        }
    }

    fn reprior(&mut self, prior: BetaPrior) {
        self.posterior = Posterior {
            alpha: prior.alpha + self.successes as f64,
            beta: prior.beta + self.failures as f64,
        };
    }

    fn record_outcome(&mut self, success: bool) {
        if success {
            self.successes += 1;
            self.posterior.alpha += 1.0;
        } else {
            self.failures += 1;
            self.posterior.beta += 1.0;
        }
    }

    /// Observed success rate, `None` before any outcome.
    pub fn outcome_mean(&self) -> Option<f64> {
        let n = self.successes + self.failures;
        (n > 0).then(|| self.successes as f64 / n as f64)
    }
}

/// Discrete value of a contextual policy's declared variable. Learners with
/// no value for the variable fall into [`ContextBucket::Missing`], shown as `⊥`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ContextBucket {
    Missing,
    Value(String),
}

impl ContextBucket {
    pub fn from_value(value: Option<&Value>) -> Self {
        match value {
            None => ContextBucket::Missing,
            Some(v) => ContextBucket::Value(v.bucket_label()),
        }
    }
}

impl fmt::Display for ContextBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContextBucket::Missing => f.write_str("⊥"),
            ContextBucket::Value(v) => f.write_str(v),
        }
    }
}

/// Per-bucket posterior tables for the contextual policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextTable {
    pub variable: String,
    #[serde(with = "bucket_rows")]
    pub rows: BTreeMap<ContextBucket, BTreeMap<VersionId, ArmStats>>,
}

impl ContextTable {
    pub fn new(variable: impl Into<String>) -> Self {
        ContextTable {
            variable: variable.into(),
            rows: BTreeMap::new(),
        }
    }

    /// Posteriors for `versions` in `bucket`; arms never seen in this bucket
    /// get the prior.
    pub fn posteriors(
        &self,
        bucket: &ContextBucket,
        versions: &[VersionId],
        prior: BetaPrior,
    ) -> Vec<(VersionId, Posterior)> {
        let row = self.rows.get(bucket);
        versions
            .iter()
            .map(|v| {
                let post = row
                    .and_then(|r| r.get(v))
                    .map(|s| s.posterior)
                    .unwrap_or_else(|| prior.into());
                (*v, post)
            })
            .collect()
    }

    fn arm_mut(
        &mut self,
        bucket: &ContextBucket,
        version: VersionId,
        prior: BetaPrior,
    ) -> &mut ArmStats {
        self.rows
            .entry(bucket.clone())
            .or_default()
            .entry(version)
            .or_insert_with(|| ArmStats::fresh(prior))
    }
}

mod bucket_rows {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Row {
        bucket: Option<String>,
        arms: BTreeMap<VersionId, ArmStats>,
    }

    pub fn serialize<S: Serializer>(
        rows: &BTreeMap<ContextBucket, BTreeMap<VersionId, ArmStats>>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let list: Vec<Row> = rows
            .iter()
            .map(|(b, arms)| Row {
                bucket: match b {
                    ContextBucket::Missing => None,
                    ContextBucket::Value(v) => Some(v.clone()),
                },
                arms: arms.clone(),
            })
            .collect();
        list.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<BTreeMap<ContextBucket, BTreeMap<VersionId, ArmStats>>, D::Error> {
        let list = Vec::<Row>::deserialize(d)?;
        Ok(list
            .into_iter()
            .map(|r| {
                let bucket = r
                    .bucket
                    .map_or(ContextBucket::Missing, ContextBucket::Value);
                (bucket, r.arms)
            })
            .collect())
    }
}

/// Mutable statistics of one MOOClet's policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    pub prior: BetaPrior,
    pub arms: BTreeMap<VersionId, ArmStats>,
    pub contexts: Option<ContextTable>,
}

impl PolicyState {
    pub fn new(spec: &PolicySpec) -> Self {
        PolicyState {
            prior: spec.prior(),
            arms: BTreeMap::new(),
            contexts: spec.context_variable().map(ContextTable::new),
        }
    }

    pub fn add_arm(&mut self, version: VersionId) {
        let prior = self.prior;
        self.arms
            .entry(version)
            .or_insert_with(|| ArmStats::fresh(prior));
        if let Some(table) = &mut self.contexts {
            for row in table.rows.values_mut() {
                row.entry(version).or_insert_with(|| ArmStats::fresh(prior));
            }
        }
    }

    /// Switches to a new policy. Counters survive; posteriors are rebuilt
    /// from the new prior. Context tables survive only if the context
    /// variable is unchanged.
    pub fn reconfigure(&mut self, spec: &PolicySpec) {
        self.prior = spec.prior();
        let prior = self.prior;
        for arm in self.arms.values_mut() {
            arm.reprior(prior);
        }
        self.contexts = match (self.contexts.take(), spec.context_variable()) {
            (Some(mut table), Some(var)) if table.variable == var => {
                for arm in table.rows.values_mut().flat_map(|r| r.values_mut()) {
                    arm.reprior(prior);
                }
                Some(table)
            }
            (_, Some(var)) => Some(ContextTable::new(var)),
            (_, None) => None,
        };
    }

    /// Runs the configured policy. Instructor pins and sticky assignments
    /// are resolved by the caller before this is reached.
    pub fn decide(
        &self,
        mooclet: &Mooclet,
        bucket: Option<&ContextBucket>,
        rng: &mut RandomSource,
    ) -> Result<VersionId> {
        let eligible = mooclet.eligible_versions();
        if eligible.is_empty() {
            return Err(Error::NoVersions(format!("mooclet {}", mooclet.id)));
        }
        let ids: Vec<VersionId> = eligible.iter().map(|v| v.id).collect();
        match &mooclet.policy {
            PolicySpec::UniformRandom => choose_uniform(&ids, rng),
            PolicySpec::WeightedRandom => {
                let weighted: Vec<(VersionId, f64)> =
                    eligible.iter().map(|v| (v.id, v.weight)).collect();
                choose_weighted(&weighted, rng)
            }
            PolicySpec::Pinned { version } => Ok(*version),
            PolicySpec::ThompsonBernoulli { .. } => {
                let posts: Vec<(VersionId, Posterior)> = ids
                    .iter()
                    .map(|v| {
                        let post = self
                            .arms
                            .get(v)
                            .map(|a| a.posterior)
                            .unwrap_or_else(|| self.prior.into());
                        (*v, post)
                    })
                    .collect();
                choose_thompson(&posts, rng)
            }
            PolicySpec::ContextualThompson { .. } => {
                let table = self.contexts.as_ref().ok_or_else(|| {
                    Error::StateCorruption("contextual policy without a context table".into())
                })?;
                choose_contextual(
                    bucket.unwrap_or(&ContextBucket::Missing),
                    table,
                    &ids,
                    self.prior,
                    rng,
                )
            }
        }
    }

    pub fn record_assignment(&mut self, version: VersionId, bucket: Option<&ContextBucket>) {
        let prior = self.prior;
        self.arms
            .entry(version)
            .or_insert_with(|| ArmStats::fresh(prior))
            .assignments += 1;
        if let (Some(table), Some(bucket)) = (&mut self.contexts, bucket) {
            table.arm_mut(bucket, version, prior).assignments += 1;
        }
    }

    /// Conjugate update: success adds one to alpha, failure one to beta.
    pub fn record_reward(
        &mut self,
        version: VersionId,
        bucket: Option<&ContextBucket>,
        success: bool,
    ) {
        let prior = self.prior;
        self.arms
            .entry(version)
            .or_insert_with(|| ArmStats::fresh(prior))
            .record_outcome(success);
        if let (Some(table), Some(bucket)) = (&mut self.contexts, bucket) {
            table
                .arm_mut(bucket, version, prior)
                .record_outcome(success);
        }
    }

    /// Verifies the bookkeeping invariants on every arm.
    pub fn check(&self) -> Result<()> {
        let rows = self.contexts.iter().flat_map(|t| t.rows.values());
        for arm in self.arms.values().chain(rows.flat_map(|r| r.values())) {
            let expect_alpha = self.prior.alpha + arm.successes as f64;
            let expect_beta = self.prior.beta + arm.failures as f64;
            if !arm.posterior.is_valid()
                || arm.posterior.alpha != expect_alpha
                || arm.posterior.beta != expect_beta
                || arm.successes + arm.failures > arm.assignments
            {
                return Err(Error::StateCorruption(format!("inconsistent arm {arm:?}")));
            }
        }
        Ok(())
    }
}

/// Each version with probability 1/K.
pub fn choose_uniform(versions: &[VersionId], rng: &mut RandomSource) -> Result<VersionId> {
    if versions.is_empty() {
        return Err(Error::NoVersions("empty version list".into()));
    }
    Ok(versions[rng.random_range(0..versions.len())])
}

/// Version i with probability wᵢ/Σw.
pub fn choose_weighted(versions: &[(VersionId, f64)], rng: &mut RandomSource) -> Result<VersionId> {
    if versions.is_empty() {
        return Err(Error::NoVersions("empty version list".into()));
    }
    if let Some((id, w)) = versions.iter().find(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::validation(format!("{id} has invalid weight {w}")));
    }
    let dist = WeightedIndex::new(versions.iter().map(|(_, w)| *w))
        .map_err(|_| Error::validation("weights sum to zero; no version can be chosen"))?;
    Ok(versions[dist.sample(rng)].0)
}

/// Draws θᵢ ~ Beta(αᵢ, βᵢ) for every arm in the order given and returns
/// the arm with the largest draw. Ties go to the lowest version id.
pub fn choose_thompson(
    posteriors: &[(VersionId, Posterior)],
    rng: &mut RandomSource,
) -> Result<VersionId> {
    let mut best: Option<(VersionId, f64)> = None;
    for (id, post) in posteriors {
        if !post.is_valid() {
            return Err(Error::StateCorruption(format!(
                "{id} has posterior Beta({}, {})",
                post.alpha, post.beta
            )));
        }
        let theta = Beta::new(post.alpha, post.beta)
            .map_err(|e| Error::StateCorruption(format!("{id}: {e}")))?
            .sample(rng);
        best = match best {
            Some((bid, btheta)) if btheta > theta || (btheta == theta && bid < *id) => {
                Some((bid, btheta))
            }
            _ => Some((*id, theta)),
        };
    }
    best.map(|(id, _)| id)
        .ok_or_else(|| Error::NoVersions("empty posterior list".into()))
}

/// Thompson selection within the learner's context bucket.
pub fn choose_contextual(
    bucket: &ContextBucket,
    table: &ContextTable,
    versions: &[VersionId],
    prior: BetaPrior,
    rng: &mut RandomSource,
) -> Result<VersionId> {
    choose_thompson(&table.posteriors(bucket, versions, prior), rng)
}
