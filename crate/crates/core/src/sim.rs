//! Synthetic learner populations for checking policy behavior end to end.
//!
//! A simulation creates a MOOClet with one version per arm, then for every
//! step picks a learner, asks the backend for an assignment, draws a
//! Bernoulli outcome from the model, pushes it to the variable store and
//! reports it as a reward. The [`SimReport`] is built afterwards from the
//! backend's assignment log and stored outcome values only.
//!
//! Learners are visited round-robin: step `t` serves learner
//! `t % population`, and learner `i` belongs to context segment
//! `i % segments`.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::assignment::AssignmentRecord;
use crate::auth::Principal;
use crate::engine::{Context, Engine, EngineConfig};
use crate::error::{Error, Result};
use crate::ids::{AssignmentId, MoocletId, VersionId};
use crate::registry::{content_from_str, BetaPrior, PolicySpec};
use crate::rng::RandomSource;
use crate::store::{
    Provenance, RecordFilter, Value, ValueRecord, ValueType, Variable, VariableKind,
};

pub const OUTCOME_VARIABLE: &str = "sim_outcome";
pub const SEGMENT_VARIABLE: &str = "sim_segment";
const OUTCOME_STREAM: u64 = u64::MAX - 1;

/// One context segment with its own arm means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub value: String,
    pub means: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerModel {
    pub population: usize,
    /// True success probability of each arm. Ignored when `segments` is set.
    #[serde(default)]
    pub means: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segments: Vec<Segment>,
}

impl LearnerModel {
    pub fn bernoulli(population: usize, means: &[f64]) -> Self {
        LearnerModel {
            population,
            means: means.to_vec(),
            segments: Vec::new(),
        }
    }

    pub fn arms(&self) -> usize {
        self.segments
            .first()
            .map_or(self.means.len(), |s| s.means.len())
    }

    fn segment_means(&self, learner: usize) -> (&str, &[f64]) {
        if self.segments.is_empty() {
            ("all", &self.means)
        } else {
            let s = &self.segments[learner % self.segments.len()];
            (&s.value, &s.means)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.population == 0 {
            return Err(Error::validation("population must be at least 1"));
        }
        let tables: Vec<&[f64]> = if self.segments.is_empty() {
            vec![&self.means]
        } else {
            self.segments.iter().map(|s| s.means.as_slice()).collect()
        };
        let arms = self.arms();
        if arms == 0 {
            return Err(Error::validation("model needs at least one arm"));
        }
        for t in tables {
            if t.len() != arms {
                return Err(Error::validation(
                    "every segment must give a mean for every arm",
                ));
            }
            if let Some(p) = t.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::validation(format!("probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Policy to simulate, with arms named by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimPolicy {
    Uniform,
    Weighted {
        weights: Vec<f64>,
    },
    Pinned {
        arm: usize,
    },
    Thompson {
        #[serde(flatten, default)]
        prior: BetaPrior,
    },
    Contextual {
        #[serde(flatten, default)]
        prior: BetaPrior,
    },
}

impl SimPolicy {
    fn spec(&self, versions: &[VersionId]) -> Result<PolicySpec> {
        Ok(match self {
            SimPolicy::Uniform => PolicySpec::UniformRandom,
            SimPolicy::Weighted { .. } => PolicySpec::WeightedRandom,
            SimPolicy::Pinned { arm } => PolicySpec::Pinned {
                version: *versions
                    .get(*arm)
                    .ok_or_else(|| Error::validation(format!("pinned arm {arm} does not exist")))?,
            },
            SimPolicy::Thompson { prior } => PolicySpec::ThompsonBernoulli { prior: *prior },
            SimPolicy::Contextual { prior } => PolicySpec::ContextualThompson {
                prior: *prior,
                context_variable: SEGMENT_VARIABLE.into(),
            },
        })
    }

    fn weight(&self, arm: usize) -> f64 {
        match self {
            SimPolicy::Weighted { weights } => weights.get(arm).copied().unwrap_or(0.0),
            _ => 1.0,
        }
    }
}

fn default_window() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub model: LearnerModel,
    pub policy: SimPolicy,
    pub horizon: usize,
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Width of the best-arm-share windows.
    #[serde(default = "default_window")]
    pub window: usize,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.horizon == 0 {
            return Err(Error::validation("horizon must be at least 1"));
        }
        if self.window == 0 {
            return Err(Error::validation("window must be at least 1"));
        }
        match &self.policy {
            SimPolicy::Weighted { weights } if weights.len() != self.model.arms() => Err(
                Error::validation("weighted policy needs one weight per arm"),
            ),
            SimPolicy::Pinned { arm } if *arm >= self.model.arms() => Err(Error::validation(
                format!("pinned arm {arm} does not exist"),
            )),
            _ => Ok(()),
        }
    }
}

/// Operations a simulation needs from an engine, in process or remote.
pub trait SimBackend {
    fn define_variable(&mut self, variable: Variable) -> Result<()>;
    fn create_mooclet(&mut self, name: &str, policy: PolicySpec, sticky: bool)
        -> Result<MoocletId>;
    fn add_version(
        &mut self,
        mooclet: MoocletId,
        name: &str,
        content: &str,
        weight: f64,
    ) -> Result<VersionId>;
    fn set_policy(&mut self, mooclet: MoocletId, policy: PolicySpec) -> Result<()>;
    fn assign(&mut self, mooclet: MoocletId, learner: &str) -> Result<AssignmentRecord>;
    fn push_value(
        &mut self,
        learner: &str,
        variable: &str,
        value: Value,
        provenance: Option<Provenance>,
    ) -> Result<()>;
    fn reward(
        &mut self,
        mooclet: MoocletId,
        version: VersionId,
        learner: &str,
        success: bool,
    ) -> Result<()>;
    fn assignment_log(&mut self, mooclet: MoocletId) -> Result<Vec<AssignmentRecord>>;
    fn values(&mut self, filter: &RecordFilter) -> Result<Vec<ValueRecord>>;
}

impl SimBackend for &Engine {
    fn define_variable(&mut self, variable: Variable) -> Result<()> {
        Engine::define_variable(self, variable).map(drop)
    }

    fn create_mooclet(
        &mut self,
        name: &str,
        policy: PolicySpec,
        sticky: bool,
    ) -> Result<MoocletId> {
        Engine::create_mooclet(self, name, policy, sticky).map(|m| m.id)
    }

    fn add_version(
        &mut self,
        mooclet: MoocletId,
        name: &str,
        content: &str,
        weight: f64,
    ) -> Result<VersionId> {
        Engine::add_version(self, mooclet, name, content_from_str(content)?, weight).map(|v| v.id)
    }

    fn set_policy(&mut self, mooclet: MoocletId, policy: PolicySpec) -> Result<()> {
        Engine::set_policy(self, mooclet, policy).map(drop)
    }

    fn assign(&mut self, mooclet: MoocletId, learner: &str) -> Result<AssignmentRecord> {
        Engine::assign(self, mooclet, learner, &Context::new()).map(|a| a.record)
    }

    fn push_value(
        &mut self,
        learner: &str,
        variable: &str,
        value: Value,
        provenance: Option<Provenance>,
    ) -> Result<()> {
        Engine::push_value(self, learner, variable, value, provenance).map(drop)
    }

    fn reward(
        &mut self,
        mooclet: MoocletId,
        version: VersionId,
        learner: &str,
        success: bool,
    ) -> Result<()> {
        Engine::update_reward(self, mooclet, version, learner, success).map(drop)
    }

    fn assignment_log(&mut self, mooclet: MoocletId) -> Result<Vec<AssignmentRecord>> {
        Ok(self.assignments_for(mooclet))
    }

    fn values(&mut self, filter: &RecordFilter) -> Result<Vec<ValueRecord>> {
        self.query_values(filter, &Principal::admin("simulator"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub segment: String,
    pub best_arm: usize,
    pub assignments: u64,
    /// Best-arm share over the last quarter of this segment's steps.
    pub final_quarter_best_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    pub assignment: AssignmentId,
    pub segment: String,
    pub arm: usize,
    pub outcome: bool,
    pub regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub seed: u64,
    pub config: SimConfig,
    pub mooclet: MoocletId,
    pub versions: Vec<VersionId>,
    /// Final assignment count per arm.
    pub counts: Vec<u64>,
    /// Cumulative per-arm counts at the end of each window.
    pub counts_over_time: Vec<Vec<u64>>,
    pub outcome_means: Vec<Option<f64>>,
    /// Expected regret against the best arm of each step's segment.
    pub cumulative_regret: Vec<f64>,
    pub total_regret: f64,
    pub best_arm_share_windows: Vec<f64>,
    /// Best-arm share over the final `window` steps.
    pub final_best_share: f64,
    pub segments: Vec<SegmentReport>,
    #[serde(skip)]
    pub trace: Vec<StepTrace>,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Flat per-step trace for plotting.
    pub fn trace_csv(&self) -> String {
        let mut out =
            String::from("step,assignment,segment,arm,version,outcome,regret,cumulative_regret\n");
        for (t, s) in self.trace.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                s.step,
                s.assignment,
                csv_field(&s.segment),
                s.arm,
                self.versions[s.arm],
                u8::from(s.outcome),
                s.regret,
                self.cumulative_regret[t]
            );
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn learner_name(i: usize) -> String {
    format!("sim-learner-{i}")
}

fn best_arm(means: &[f64]) -> usize {
    let mut best = 0;
    for (i, m) in means.iter().enumerate() {
        if *m > means[best] {
            best = i;
        }
    }
    best
}

/// Runs one seed against a fresh in-process engine.
pub fn run_simulation(config: &SimConfig, seed: u64) -> Result<SimReport> {
    config.validate()?;
    let engine = Engine::new(EngineConfig::deterministic(seed));
    run_simulation_on(&mut &engine, config, seed)
}

/// Runs one seed against `backend`, which should be a fresh engine.
pub fn run_simulation_on<B: SimBackend>(
    backend: &mut B,
    config: &SimConfig,
    seed: u64,
) -> Result<SimReport> {
    config.validate()?;
    let model = &config.model;
    let arms = model.arms();
    backend.define_variable(
        Variable::new(OUTCOME_VARIABLE, VariableKind::Outcome, ValueType::Number)
            .describe("simulated binary outcome")
            .with_bounds(0.0, 1.0),
    )?;
    let contextual = matches!(config.policy, SimPolicy::Contextual { .. });
    if contextual {
        backend.define_variable(
            Variable::new(SEGMENT_VARIABLE, VariableKind::Context, ValueType::Text)
                .describe("simulated learner segment"),
        )?;
        if !model.segments.is_empty() {
            for i in 0..model.population {
                let (segment, _) = model.segment_means(i);
                backend.push_value(
                    &learner_name(i),
                    SEGMENT_VARIABLE,
                    Value::Text(segment.to_owned()),
                    None,
                )?;
            }
        }
    }

    let mooclet = backend.create_mooclet("simulation", PolicySpec::UniformRandom, false)?;
    let mut versions = Vec::with_capacity(arms);
    for arm in 0..arms {
        let content = format!("{{\"arm\":{arm}}}");
        versions.push(backend.add_version(
            mooclet,
            &format!("arm-{arm}"),
            &content,
            config.policy.weight(arm),
        )?);
    }
    backend.set_policy(mooclet, config.policy.spec(&versions)?)?;

    let mut outcome_rng = RandomSource::with_stream(seed, OUTCOME_STREAM);
    for t in 0..config.horizon {
        let learner = t % model.population;
        let name = learner_name(learner);
        let record = backend.assign(mooclet, &name)?;
        let arm = versions
            .iter()
            .position(|v| *v == record.version)
            .ok_or_else(|| {
                Error::StateCorruption(format!("unexpected version {}", record.version))
            })?;
        let (_, means) = model.segment_means(learner);
        let success = outcome_rng.unit() < means[arm];
        let provenance = Provenance {
            mooclet,
            version: record.version,
            assignment: record.id,
        };
        backend.push_value(
            &name,
            OUTCOME_VARIABLE,
            Value::Number(f64::from(u8::from(success))),
            Some(provenance),
        )?;
        backend.reward(mooclet, record.version, &name, success)?;
    }

    compile_report(backend, config, seed, mooclet, versions)
}

fn compile_report<B: SimBackend>(
    backend: &mut B,
    config: &SimConfig,
    seed: u64,
    mooclet: MoocletId,
    versions: Vec<VersionId>,
) -> Result<SimReport> {
    let model = &config.model;
    let arms = versions.len();
    let log = backend.assignment_log(mooclet)?;
    if log.len() != config.horizon {
        return Err(Error::StateCorruption(format!(
            "assignment log has {} records for horizon {}",
            log.len(),
            config.horizon
        )));
    }
    let outcomes: HashMap<AssignmentId, bool> = backend
        .values(&RecordFilter::default().variable(OUTCOME_VARIABLE))?
        .into_iter()
        .filter_map(|r| Some((r.provenance?.assignment, r.value.as_number()? > 0.5)))
        .collect();
    let arm_of: HashMap<VersionId, usize> =
        versions.iter().enumerate().map(|(i, v)| (*v, i)).collect();

    let mut counts = vec![0u64; arms];
    let mut counts_over_time = Vec::new();
    let mut successes = vec![0u64; arms];
    let mut observed = vec![0u64; arms];
    let mut cumulative_regret = Vec::with_capacity(log.len());
    let mut trace = Vec::with_capacity(log.len());
    let mut total = 0.0;
    let mut best_hits = Vec::with_capacity(log.len());
    let mut per_segment: Vec<(String, usize, Vec<bool>)> = Vec::new();

    for (t, record) in log.iter().enumerate() {
        let arm = *arm_of
            .get(&record.version)
            .ok_or_else(|| Error::StateCorruption(format!("unknown version {}", record.version)))?;
        let learner = t % model.population;
        let (segment, means) = model.segment_means(learner);
        let best = best_arm(means);
        let regret = means[best] - means[arm];
        total += regret;
        counts[arm] += 1;
        if (t + 1) % config.window == 0 || t + 1 == log.len() {
            counts_over_time.push(counts.clone());
        }
        let outcome = outcomes.get(&record.id).copied();
        if let Some(o) = outcome {
            observed[arm] += 1;
            successes[arm] += u64::from(o);
        }
        cumulative_regret.push(total);
        best_hits.push(arm == best);
        match per_segment.iter_mut().find(|(s, _, _)| s == segment) {
            Some((_, _, hits)) => hits.push(arm == best),
            None => per_segment.push((segment.to_owned(), best, vec![arm == best])),
        }
        trace.push(StepTrace {
            step: t,
            assignment: record.id,
            segment: segment.to_owned(),
            arm,
            outcome: outcome.unwrap_or(false),
            regret,
        });
    }

    let share = |hits: &[bool]| {
        if hits.is_empty() {
            0.0
        } else {
            hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64
        }
    };
    let best_arm_share_windows = best_hits.chunks(config.window).map(share).collect();
    let final_best_share = share(&best_hits[best_hits.len().saturating_sub(config.window)..]);
    let segments = per_segment
        .into_iter()
        .map(|(segment, best_arm, hits)| {
            let quarter = hits.len().div_ceil(4);
            SegmentReport {
                segment,
                best_arm,
                assignments: hits.len() as u64,
                final_quarter_best_share: share(&hits[hits.len() - quarter..]),
            }
        })
        .collect();

    Ok(SimReport {
        seed,
        config: config.clone(),
        mooclet,
        versions,
        counts,
        counts_over_time,
        outcome_means: successes
            .iter()
            .zip(&observed)
            .map(|(s, n)| (*n > 0).then(|| *s as f64 / *n as f64))
            .collect(),
        cumulative_regret,
        total_regret: total,
        best_arm_share_windows,
        final_best_share,
        segments,
        trace,
    })
}

/// Runs every seed, in parallel, each on its own engine.
pub fn run_seeds(config: &SimConfig, seeds: &[u64]) -> Result<Vec<SimReport>> {
    config.validate()?;
    let workers = std::thread::available_parallelism()
        .map_or(4, |n| n.get())
        .max(1);
    let chunk = seeds.len().div_ceil(workers).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|s| run_simulation(config, *s))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub label: String,
    pub policy: SimPolicy,
    /// Defaults to the config's seeds; must match them when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub mean_regret: f64,
    pub mean_final_best_share: f64,
    pub regret_per_seed: Vec<f64>,
    pub final_best_share_per_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub seeds: Vec<u64>,
    pub horizon: usize,
    pub rows: Vec<ComparisonRow>,
}

/// Paired-seed comparison: every policy sees the same model and seeds.
pub fn compare_policies(
    config: &SimConfig,
    entries: &[ComparisonEntry],
) -> Result<ComparisonTable> {
    if config.seeds.is_empty() {
        return Err(Error::validation("comparison needs at least one seed"));
    }
    for e in entries {
        if let Some(seeds) = &e.seeds {
            if *seeds != config.seeds {
                return Err(Error::validation(format!(
                    "policy {:?} uses different seeds; comparisons must be paired",
                    e.label
                )));
            }
        }
    }
    let mut rows = Vec::with_capacity(entries.len());
    for e in entries {
        let cfg = SimConfig {
            policy: e.policy.clone(),
            ..config.clone()
        };
        let reports = run_seeds(&cfg, &config.seeds)?;
        let regret: Vec<f64> = reports.iter().map(|r| r.total_regret).collect();
        let share: Vec<f64> = reports.iter().map(|r| r.final_best_share).collect();
        let n = reports.len() as f64;
        rows.push(ComparisonRow {
            label: e.label.clone(),
            mean_regret: regret.iter().sum::<f64>() / n,
            mean_final_best_share: share.iter().sum::<f64>() / n,
            regret_per_seed: regret,
            final_best_share_per_seed: share,
        });
    }
    Ok(ComparisonTable {
        seeds: config.seeds.clone(),
        horizon: config.horizon,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(policy: SimPolicy, horizon: usize) -> SimConfig {
        SimConfig {
            model: LearnerModel::bernoulli(100, &[0.7, 0.3]),
            policy,
            horizon,
            seeds: vec![1, 2],
            window: 50,
        }
    }

    #[test]
    fn rejects_bad_models() {
        let mut c = config(SimPolicy::Uniform, 10);
        c.model.means = vec![1.2, 0.3];
        assert!(matches!(run_simulation(&c, 1), Err(Error::Validation(_))));
        let c = config(SimPolicy::Pinned { arm: 5 }, 10);
        assert!(run_simulation(&c, 1).is_err());
        let c = config(SimPolicy::Uniform, 0);
        assert!(run_simulation(&c, 1).is_err());
    }

    #[test]
    fn pinned_regret_is_closed_form() {
        let r = run_simulation(&config(SimPolicy::Pinned { arm: 1 }, 200), 3).unwrap();
        assert_eq!(r.counts, [0, 200]);
        assert!((r.total_regret - 200.0 * 0.4).abs() < 1e-9);
        let best = run_simulation(&config(SimPolicy::Pinned { arm: 0 }, 200), 3).unwrap();
        assert_eq!(best.total_regret, 0.0);
    }

    #[test]
    fn report_invariants() {
        let r = run_simulation(
            &config(
                SimPolicy::Thompson {
                    prior: BetaPrior::default(),
                },
                300,
            ),
            9,
        )
        .unwrap();
        assert_eq!(r.counts.iter().sum::<u64>(), 300);
        assert!(r.cumulative_regret.windows(2).all(|w| w[1] >= w[0]));
        assert!(r.total_regret <= 300.0 * 0.4 + 1e-9);
        assert_eq!(r.counts_over_time.len(), 6);
        assert_eq!(r.trace_csv().lines().count(), 301);
    }

    #[test]
    fn mismatched_seeds_are_rejected() {
        let c = config(SimPolicy::Uniform, 10);
        let entries = [ComparisonEntry {
            label: "u".into(),
            policy: SimPolicy::Uniform,
            seeds: Some(vec![9]),
        }];
        assert!(matches!(
            compare_policies(&c, &entries),
            Err(Error::Validation(_))
        ));
    }
}
