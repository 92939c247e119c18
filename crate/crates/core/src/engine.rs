//! The engine: a single handle that owns all state.
//!
//! Every mutation is turned into a journal [`Event`], written, and then
//! applied by the same code that replays the journal on startup.
//!
//! Lock order, outermost first: one MOOClet entry, then `core` (journal,
//! clock, id counters), then any of the shared tables. Operations never
//! hold two MOOClet entries; only [`Engine::snapshot`] takes them all, in id
//! order, before `core`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::assignment::{Assignment, AssignmentLog, AssignmentRecord, DecisionSource};
use crate::auth::{Principal, Role};
use crate::dp::{self, AggregateQuery, BudgetLedger, NoiseMode, PrivacyBudget};
use crate::error::{Error, Result};
use crate::ids::{
    AssignmentId, Clock, ClockKind, MoocletId, Pseudonym, Pseudonymizer, QuestionId, Timestamp,
    VersionId,
};
use crate::journal::{self, Counters, Event, Journal, JournalLine, SnapshotLine, SNAPSHOT_FORMAT};
use crate::policy::{ContextBucket, PolicyState};
use crate::registry::{self, Content, Mooclet, PolicyKind, PolicySpec, Version};
use crate::rng::RandomSource;
use crate::rubric::{OptionEntry, Question, Respondent, ResponseRecord, Rubric};
use crate::store::{
    self, Provenance, RecordFilter, StoreData, Value, ValueRecord, ValueType, Variable,
    VariableKind,
};

/// Learner context supplied with an assignment request. Values given here
/// take precedence over the learner's latest values in the store.
pub type Context = BTreeMap<String, Value>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EngineConfig {
    pub seed: u64,
    pub noise: NoiseMode,
    pub clock: ClockKind,
    pub pseudonym_key: String,
    /// Journal events between automatic snapshots; 0 disables them.
    pub snapshot_every: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            seed: 0,
            noise: NoiseMode::Laplace,
            clock: ClockKind::System,
            pseudonym_key: "mooclet-dev-key".into(),
            snapshot_every: 1000,
        }
    }
}

impl EngineConfig {
    /// Logical clock, fixed seed: reproducible runs for tests and simulation.
    pub fn deterministic(seed: u64) -> Self {
        EngineConfig {
            seed,
            clock: ClockKind::Logical,
            ..Default::default()
        }
    }
}

#[derive(Debug)]
struct MoocletEntry {
    mooclet: Mooclet,
    state: PolicyState,
    /// First assignment of each learner, consulted when the MOOClet is sticky.
    sticky: BTreeMap<Pseudonym, AssignmentId>,
    rng: RandomSource,
}

#[derive(Debug)]
struct Core {
    clock: Clock,
    ids: Counters,
    journal: Option<Journal>,
    noise_rng: RandomSource,
    since_snapshot: u64,
}

/// Stream id of the DP noise generator; MOOClet streams use their id.
const NOISE_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionUpdate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub archived: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionStats {
    pub id: VersionId,
    pub name: String,
    pub weight: f64,
    pub archived: bool,
    pub pinned: bool,
    pub assignments: u64,
    pub successes: u64,
    pub failures: u64,
    pub outcome_mean: Option<f64>,
}

/// Dashboard summary of one MOOClet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoocletStats {
    pub mooclet: MoocletId,
    pub name: String,
    pub policy: PolicyKind,
    pub pinned_version: Option<VersionId>,
    pub pin_updated_at: Option<Timestamp>,
    pub total_assignments: u64,
    pub versions: Vec<VersionStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpAnswer {
    pub value: f64,
    pub epsilon: f64,
    pub budget: PrivacyBudget,
}

pub struct Engine {
    config: EngineConfig,
    pseudonyms: Pseudonymizer,
    mooclets: RwLock<BTreeMap<MoocletId, Arc<Mutex<MoocletEntry>>>>,
    store: RwLock<StoreData>,
    assignments: RwLock<AssignmentLog>,
    rubric: RwLock<Rubric>,
    budgets: Mutex<BudgetLedger>,
    core: Mutex<Core>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl Engine {
    /// In-memory engine with no persistence.
    pub fn new(config: EngineConfig) -> Self {
        Engine {
            pseudonyms: Pseudonymizer::new(&config.pseudonym_key),
            mooclets: RwLock::new(BTreeMap::new()),
            store: RwLock::new(StoreData::default()),
            assignments: RwLock::new(AssignmentLog::default()),
            rubric: RwLock::new(Rubric::default()),
            budgets: Mutex::new(BudgetLedger::default()),
            core: Mutex::new(Core {
                clock: Clock::new(config.clock),
                ids: Counters::default(),
                journal: None,
                noise_rng: RandomSource::with_stream(config.seed, NOISE_STREAM),
                since_snapshot: 0,
            }),
            config,
        }
    }

    /// Engine persisted under `dir`: loads the snapshot, replays the journal
    /// tail, and keeps journaling from there.
    pub fn open(dir: impl AsRef<Path>, config: EngineConfig) -> Result<Self> {
        let dir = dir.as_ref();
        let engine = Engine::new(config);
        let mut after = 0;
        for line in journal::read_snapshot(dir)? {
            if let SnapshotLine::Header { seq, .. } = &line {
                after = *seq;
            }
            engine.restore(line)?;
        }
        for line in journal::read_journal(dir)? {
            if line.seq > after {
                engine.replay(line)?;
            }
        }
        engine.core.lock().journal = Some(Journal::open(dir)?);
        Ok(engine)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// The pseudonym standing in for a raw learner identity.
    pub fn pseudonym(&self, raw_learner: &str) -> Pseudonym {
        self.pseudonyms.pseudonym(raw_learner)
    }

    // ---- registry ----------------------------------------------------

    pub fn create_mooclet(&self, name: &str, policy: PolicySpec, sticky: bool) -> Result<Mooclet> {
        registry::validate_name("mooclet", name)?;
        {
            let store = self.store.read();
            policy.validate(&[], |v| store.variable(v).is_some())?;
        }
        let mooclet = {
            let mut core = self.core.lock();
            let at = core.clock.tick();
            let mooclet = Mooclet {
                id: MoocletId(core.ids.mooclet),
                name: name.trim().to_owned(),
                versions: Vec::new(),
                policy,
                pinned_version: None,
                sticky,
                created_at: at,
                pin_updated_at: None,
            };
            let event = Event::MoocletCreated {
                mooclet: mooclet.clone(),
            };
            self.write(&mut core, &event)?;
            self.apply_created(mooclet.clone());
            mooclet
        };
        self.maybe_snapshot()?;
        Ok(mooclet)
    }

    pub fn mooclet(&self, id: MoocletId) -> Result<Mooclet> {
        Ok(self.entry(id)?.lock().mooclet.clone())
    }

    pub fn mooclets(&self) -> Vec<Mooclet> {
        let entries: Vec<_> = self.mooclets.read().values().cloned().collect();
        entries.iter().map(|e| e.lock().mooclet.clone()).collect()
    }

    pub fn policy_state(&self, id: MoocletId) -> Result<PolicyState> {
        Ok(self.entry(id)?.lock().state.clone())
    }

    pub fn add_version(
        &self,
        id: MoocletId,
        name: &str,
        content: Content,
        weight: f64,
    ) -> Result<Version> {
        registry::validate_name("version", name)?;
        registry::validate_weight(weight)?;
        let entry = self.entry(id)?;
        let version = {
            let mut e = entry.lock();
            let mut core = self.core.lock();
            let at = core.clock.tick();
            let version = Version {
                id: VersionId(core.ids.version),
                name: name.trim().to_owned(),
                content,
                weight,
                archived: false,
            };
            let event = Event::VersionAdded {
                mooclet: id,
                version: version.clone(),
                at,
            };
            self.write(&mut core, &event)?;
            apply_version_added(&mut e, version.clone());
            version
        };
        self.maybe_snapshot()?;
        Ok(version)
    }

    /// Changes a version's weight or archival flag. Versions are never
    /// deleted.
    pub fn update_version(
        &self,
        id: MoocletId,
        version: VersionId,
        update: VersionUpdate,
    ) -> Result<Version> {
        if let Some(w) = update.weight {
            registry::validate_weight(w)?;
        }
        let entry = self.entry(id)?;
        let out = {
            let mut e = entry.lock();
            let current = e.mooclet.require_version(version)?.clone();
            let weight = update.weight.unwrap_or(current.weight);
            let archived = update.archived.unwrap_or(current.archived);
            let mut core = self.core.lock();
            let at = core.clock.tick();
            let event = Event::VersionUpdated {
                mooclet: id,
                version,
                weight,
                archived,
                at,
            };
            self.write(&mut core, &event)?;
            apply_version_updated(&mut e, version, weight, archived)?;
            e.mooclet.require_version(version)?.clone()
        };
        self.maybe_snapshot()?;
        Ok(out)
    }

    pub fn set_policy(&self, id: MoocletId, policy: PolicySpec) -> Result<Mooclet> {
        let entry = self.entry(id)?;
        let out = {
            let mut e = entry.lock();
            {
                let store = self.store.read();
                policy.validate(&e.mooclet.versions, |v| store.variable(v).is_some())?;
            }
            let mut core = self.core.lock();
            let at = core.clock.tick();
            let event = Event::PolicySet {
                mooclet: id,
                policy: policy.clone(),
                at,
            };
            self.write(&mut core, &event)?;
            apply_policy_set(&mut e, policy);
            e.mooclet.clone()
        };
        self.maybe_snapshot()?;
        Ok(out)
    }

    /// Pins `version` for all future assignments, or unpins with `None`.
    /// Earlier assignments are not revisited.
    pub fn pin_version(&self, id: MoocletId, version: Option<VersionId>) -> Result<Mooclet> {
        let entry = self.entry(id)?;
        let out = {
            let mut e = entry.lock();
            if let Some(v) = version {
                e.mooclet.require_version(v)?;
            }
            let mut core = self.core.lock();
            let at = core.clock.tick();
            self.write(
                &mut core,
                &Event::PinSet {
                    mooclet: id,
                    version,
                    at,
                },
            )?;
            e.mooclet.pinned_version = version;
            e.mooclet.pin_updated_at = Some(at);
            e.mooclet.clone()
        };
        self.maybe_snapshot()?;
        Ok(out)
    }

    // ---- assignment --------------------------------------------------

    /// Assigns a version to `learner` using the MOOClet's own random stream.
    pub fn assign(&self, id: MoocletId, learner: &str, context: &Context) -> Result<Assignment> {
        let entry = self.entry(id)?;
        let out = {
            let mut guard = entry.lock();
            let e = &mut *guard;
            let mut rng = e.rng.clone();
            let out = self.assign_locked(e, learner, context, &mut rng);
            e.rng = rng;
            out?
        };
        self.maybe_snapshot()?;
        Ok(out)
    }

    /// Assigns with a caller-supplied random source.
    pub fn assign_with(
        &self,
        id: MoocletId,
        learner: &str,
        context: &Context,
        rng: &mut RandomSource,
    ) -> Result<Assignment> {
        let entry = self.entry(id)?;
        let out = self.assign_locked(&mut entry.lock(), learner, context, rng)?;
        self.maybe_snapshot()?;
        Ok(out)
    }

    fn assign_locked(
        &self,
        e: &mut MoocletEntry,
        learner: &str,
        context: &Context,
        rng: &mut RandomSource,
    ) -> Result<Assignment> {
        if e.mooclet.versions.is_empty() {
            return Err(Error::NoVersions(format!("mooclet {}", e.mooclet.id)));
        }
        let learner = self.pseudonyms.pseudonym(learner);
        let mut snapshot = BTreeMap::new();
        let (version, source, bucket) = if let Some(pin) = e.mooclet.pinned_version {
            (pin, DecisionSource::InstructorPin, None)
        } else {
            if e.mooclet.sticky {
                if let Some(first) = e.sticky.get(&learner) {
                    let record = self
                        .assignments
                        .read()
                        .get(*first)
                        .cloned()
                        .ok_or_else(|| {
                            Error::StateCorruption(format!("sticky assignment {first} missing"))
                        })?;
                    let version = e.mooclet.require_version(record.version)?.clone();
                    return Ok(Assignment {
                        version,
                        record,
                        repeat: true,
                    });
                }
            }
            let bucket = match e.mooclet.policy.context_variable() {
                Some(var) => {
                    let value = match context.get(var) {
                        Some(v) => Some(v.clone()),
                        None => self.store.read().latest_value(&learner, var).cloned(),
                    };
                    let bucket = ContextBucket::from_value(value.as_ref());
                    snapshot.insert(var.to_owned(), value);
                    Some(bucket)
                }
                None => None,
            };
            let version = e.state.decide(&e.mooclet, bucket.as_ref(), rng)?;
            (version, DecisionSource::Policy, bucket)
        };

        let mut core = self.core.lock();
        let record = AssignmentRecord {
            id: AssignmentId(core.ids.assignment),
            learner,
            mooclet: e.mooclet.id,
            version,
            policy: e.mooclet.policy.kind(),
            source,
            timestamp: core.clock.tick(),
            context: snapshot,
        };
        let value_seq = core.ids.value;
        let event = Event::Assigned {
            record: record.clone(),
            value_seq,
        };
        self.write(&mut core, &event)?;
        self.apply_assigned(e, record.clone(), value_seq, bucket.as_ref());
        drop(core);
        Ok(Assignment {
            version: e.mooclet.require_version(version)?.clone(),
            record,
            repeat: false,
        })
    }

    /// Attributes a binary outcome to the learner's assignment of `version`.
    pub fn update_reward(
        &self,
        id: MoocletId,
        version: VersionId,
        learner: &str,
        success: bool,
    ) -> Result<PolicyState> {
        let entry = self.entry(id)?;
        let learner = self.pseudonyms.pseudonym(learner);
        let state = {
            let mut e = entry.lock();
            e.mooclet.require_version(version)?;
            let assignment = self
                .assignments
                .read()
                .rewardable(id, version, &learner)?
                .id;
            let mut core = self.core.lock();
            let at = core.clock.tick();
            let event = Event::Rewarded {
                assignment,
                success,
                at,
            };
            self.write(&mut core, &event)?;
            self.apply_rewarded(&mut e, assignment, success)?;
            e.state.clone()
        };
        self.maybe_snapshot()?;
        Ok(state)
    }

    pub fn assignment_log(&self) -> Vec<AssignmentRecord> {
        self.assignments.read().records().to_vec()
    }

    pub fn assignments_for(&self, id: MoocletId) -> Vec<AssignmentRecord> {
        let log = self.assignments.read();
        log.records()
            .iter()
            .filter(|r| r.mooclet == id)
            .cloned()
            .collect()
    }

    pub fn reward_of(&self, assignment: AssignmentId) -> Option<bool> {
        self.assignments.read().reward(assignment)
    }

    /// Line-delimited assignment log, optionally for one MOOClet.
    pub fn write_assignment_log<W: Write>(&self, out: W, mooclet: Option<MoocletId>) -> Result<()> {
        self.assignments.read().write_jsonl(out, mooclet)
    }

    pub fn stats(&self, id: MoocletId) -> Result<MoocletStats> {
        let entry = self.entry(id)?;
        let e = entry.lock();
        let versions: Vec<VersionStats> = e
            .mooclet
            .versions
            .iter()
            .map(|v| {
                let arm = e.state.arms.get(&v.id).copied();
                VersionStats {
                    id: v.id,
                    name: v.name.clone(),
                    weight: v.weight,
                    archived: v.archived,
                    pinned: e.mooclet.pinned_version == Some(v.id),
                    assignments: arm.map_or(0, |a| a.assignments),
                    successes: arm.map_or(0, |a| a.successes),
                    failures: arm.map_or(0, |a| a.failures),
                    outcome_mean: arm.and_then(|a| a.outcome_mean()),
                }
            })
            .collect();
        Ok(MoocletStats {
            mooclet: id,
            name: e.mooclet.name.clone(),
            policy: e.mooclet.policy.kind(),
            pinned_version: e.mooclet.pinned_version,
            pin_updated_at: e.mooclet.pin_updated_at,
            total_assignments: versions.iter().map(|v| v.assignments).sum(),
            versions,
        })
    }

    // ---- variable store ----------------------------------------------

    pub fn define_variable(&self, variable: Variable) -> Result<Variable> {
        if variable.name.starts_with(store::VERSION_OF_PREFIX)
            || variable.kind == VariableKind::System
        {
            return Err(Error::validation(
                "system variables are defined by the engine",
            ));
        }
        self.define_variable_unchecked(variable.clone())?;
        self.maybe_snapshot()?;
        Ok(variable)
    }

    fn define_variable_unchecked(&self, variable: Variable) -> Result<()> {
        let mut core = self.core.lock();
        self.store.read().check_new_variable(&variable)?;
        let at = core.clock.tick();
        self.write(
            &mut core,
            &Event::VariableDefined {
                variable: variable.clone(),
                at,
            },
        )?;
        self.store.write().insert_variable(variable);
        Ok(())
    }

    pub fn list_variables(&self) -> Vec<Variable> {
        self.store.read().variables().cloned().collect()
    }

    /// Appends a learner value. Provenance, when given, must name an
    /// existing assignment of this learner.
    pub fn push_value(
        &self,
        learner: &str,
        variable: &str,
        value: Value,
        provenance: Option<Provenance>,
    ) -> Result<ValueRecord> {
        let learner = self.pseudonyms.pseudonym(learner);
        {
            let store = self.store.read();
            let var = store.require_variable(variable)?;
            if var.kind == VariableKind::System {
                return Err(Error::validation(format!(
                    "{variable:?} is maintained by the engine"
                )));
            }
            store.check_value(variable, &value)?;
        }
        if let Some(p) = provenance {
            let log = self.assignments.read();
            let ok = log.get(p.assignment).is_some_and(|r| {
                r.mooclet == p.mooclet && r.version == p.version && r.learner == learner
            });
            if !ok {
                return Err(Error::Provenance(format!(
                    "assignment {} does not match ({}, {}) for this learner",
                    p.assignment, p.mooclet, p.version
                )));
            }
        }
        let record = {
            let mut core = self.core.lock();
            let record = ValueRecord {
                seq: core.ids.value,
                timestamp: core.clock.tick(),
                learner,
                variable: variable.to_owned(),
                value,
                provenance,
            };
            self.write(
                &mut core,
                &Event::ValuePushed {
                    record: record.clone(),
                },
            )?;
            self.store.write().append(record.clone());
            record
        };
        self.maybe_snapshot()?;
        Ok(record)
    }

    /// Record-level read. Platforms are refused.
    pub fn query_values(
        &self,
        filter: &RecordFilter,
        principal: &Principal,
    ) -> Result<Vec<ValueRecord>> {
        principal.require(
            &[Role::Instructor, Role::Researcher, Role::Admin],
            "read learner records",
        )?;
        Ok(self.store.read().query(filter))
    }

    pub fn record_count(&self) -> usize {
        self.store.read().len()
    }

    pub fn register_budget(&self, principal: &str, epsilon_total: f64) -> Result<()> {
        self.budgets.lock().register(principal, epsilon_total)
    }

    pub fn budget(&self, principal: &str) -> Option<PrivacyBudget> {
        self.budgets.lock().budget(principal)
    }

    /// Laplace-noised aggregate. The budget is debited together
    /// with the release; a refused or failed query costs nothing.
    pub fn dp_aggregate(
        &self,
        query: &AggregateQuery,
        epsilon: f64,
        principal: &Principal,
    ) -> Result<DpAnswer> {
        principal.require(&[Role::Researcher], "spend privacy budget")?;
        let mut core = self.core.lock();
        let mut budgets = self.budgets.lock();
        budgets.check(&principal.name, epsilon)?;
        let exact = dp::true_aggregate(&self.store.read(), query)?;
        let at = core.clock.tick();
        let event = Event::BudgetSpent {
            principal: principal.name.clone(),
            epsilon,
            at,
        };
        self.write(&mut core, &event)?;
        let value = exact.release(epsilon, self.config.noise, &mut core.noise_rng);
        budgets.debit(&principal.name, epsilon);
        let budget = budgets.budget(&principal.name).expect("checked above");
        Ok(DpAnswer {
            value,
            epsilon,
            budget,
        })
    }

    /// Timestamp-ordered CSV export for researchers and admins.
    pub fn export<W: Write>(
        &self,
        filter: &RecordFilter,
        principal: &Principal,
        out: W,
    ) -> Result<()> {
        principal.require(&[Role::Researcher, Role::Admin], "export records")?;
        self.store.read().export_csv(filter, out)
    }

    /// Loads an export file, keeping its timestamps and provenance. Variables
    /// from `catalog` missing here are defined first; ones already defined
    /// must agree on value type.
    pub fn import<R: Read>(&self, input: R, catalog: &[Variable]) -> Result<usize> {
        for var in catalog {
            let existing = self.store.read().variable(&var.name).cloned();
            match existing {
                Some(v) if v.value_type == var.value_type => {}
                Some(v) => {
                    return Err(Error::Conflict(format!(
                        "variable {:?} is {:?} here but {:?} in the import",
                        v.name, v.value_type, var.value_type
                    )));
                }
                None => self.define_variable_unchecked(var.clone())?,
            }
        }
        let known: BTreeMap<String, Variable> = self
            .list_variables()
            .into_iter()
            .map(|v| (v.name.clone(), v))
            .collect();
        let rows = store::parse_export(input, &known)?;
        let n = rows.len();
        for row in rows {
            let mut core = self.core.lock();
            core.clock.observe(row.timestamp);
            let record = ValueRecord {
                seq: core.ids.value,
                timestamp: row.timestamp,
                learner: row.learner,
                variable: row.variable,
                value: row.value,
                provenance: row.provenance,
            };
            self.write(
                &mut core,
                &Event::ValuePushed {
                    record: record.clone(),
                },
            )?;
            self.store.write().append(record);
        }
        self.maybe_snapshot()?;
        Ok(n)
    }

    // ---- rubric ------------------------------------------------------

    pub fn create_question(&self, prompt: &str, seeded_options: &[String]) -> Result<Question> {
        let question = {
            let mut core = self.core.lock();
            let question =
                Rubric::new_question(QuestionId(core.ids.question), prompt, seeded_options)?;
            let at = core.clock.tick();
            let event = Event::QuestionCreated {
                question: question.clone(),
                at,
            };
            self.write(&mut core, &event)?;
            self.rubric.write().insert_question(question.clone());
            question
        };
        self.maybe_snapshot()?;
        Ok(question)
    }

    pub fn questions(&self) -> Vec<Question> {
        self.rubric.read().questions().cloned().collect()
    }

    pub fn submit_response(
        &self,
        question: QuestionId,
        role: Respondent,
        free_text: Option<&str>,
        selections: &[String],
    ) -> Result<ResponseRecord> {
        let response = {
            let mut core = self.core.lock();
            let mut rubric = self.rubric.write();
            let ts = core.clock.tick();
            let response = rubric.prepare_response(question, role, free_text, selections, ts)?;
            self.write(
                &mut core,
                &Event::ResponseSubmitted {
                    response: response.clone(),
                },
            )?;
            rubric.apply_response(response.clone())?;
            response
        };
        self.maybe_snapshot()?;
        Ok(response)
    }

    /// Options by descending count, ties by normalized label.
    pub fn get_options(&self, question: QuestionId) -> Result<Vec<OptionEntry>> {
        Ok(self.rubric.read().question(question)?.ranked_options())
    }

    pub fn responses(&self) -> Vec<ResponseRecord> {
        self.rubric.read().responses().to_vec()
    }

    // ---- persistence -------------------------------------------------

    /// Writes a snapshot and truncates the journal. No-op when in-memory.
    pub fn snapshot(&self) -> Result<()> {
        let entries: Vec<_> = self.mooclets.read().values().cloned().collect();
        let guards: Vec<_> = entries.iter().map(|e| e.lock()).collect();
        let mut core = self.core.lock();
        if core.journal.is_none() {
            return Ok(());
        }
        let mut lines = vec![SnapshotLine::Header {
            format: SNAPSHOT_FORMAT.into(),
            seq: core.ids.seq - 1,
            counters: core.ids,
            clock: core.clock.tick(),
        }];
        for e in &guards {
            lines.push(SnapshotLine::Mooclet {
                mooclet: e.mooclet.clone(),
                state: e.state.clone(),
                sticky: e.sticky.iter().map(|(p, a)| (p.clone(), *a)).collect(),
            });
        }
        {
            let store = self.store.read();
            lines.extend(store.variables().map(|v| SnapshotLine::Variable {
                variable: v.clone(),
            }));
            lines.extend(
                store
                    .records()
                    .iter()
                    .map(|r| SnapshotLine::Value { record: r.clone() }),
            );
        }
        {
            let log = self.assignments.read();
            lines.extend(log.records().iter().map(|r| SnapshotLine::Assignment {
                record: r.clone(),
                reward: log.reward(r.id),
            }));
        }
        lines.extend(
            self.budgets
                .lock()
                .spent()
                .iter()
                .map(|(p, e)| SnapshotLine::BudgetSpent {
                    principal: p.clone(),
                    epsilon: *e,
                }),
        );
        {
            let rubric = self.rubric.read();
            lines.extend(rubric.questions().map(|q| SnapshotLine::Question {
                question: q.clone(),
            }));
            lines.extend(rubric.responses().iter().map(|r| SnapshotLine::Response {
                response: r.clone(),
            }));
        }
        core.journal
            .as_mut()
            .expect("checked")
            .write_snapshot(&lines)?;
        core.since_snapshot = 0;
        Ok(())
    }

    fn maybe_snapshot(&self) -> Result<()> {
        let due = {
            let core = self.core.lock();
            self.config.snapshot_every > 0
                && core.journal.is_some()
                && core.since_snapshot >= self.config.snapshot_every
        };
        if due {
            self.snapshot()?;
        }
        Ok(())
    }

    fn write(&self, core: &mut Core, event: &Event) -> Result<()> {
        let line = JournalLine {
            seq: core.ids.seq,
            event: event.clone(),
        };
        if let Some(j) = core.journal.as_mut() {
            j.append(&line)?;
        }
        core.ids.seq += 1;
        core.ids.observe(event);
        core.since_snapshot += 1;
        Ok(())
    }

    fn entry(&self, id: MoocletId) -> Result<Arc<Mutex<MoocletEntry>>> {
        self.mooclets
            .read()
            .get(&id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("mooclet {id}")))
    }

    fn new_entry(&self, mooclet: Mooclet, state: PolicyState) -> MoocletEntry {
        MoocletEntry {
            rng: RandomSource::with_stream(self.config.seed, mooclet.id.0),
            mooclet,
            state,
            sticky: BTreeMap::new(),
        }
    }

    fn apply_created(&self, mooclet: Mooclet) {
        let state = PolicyState::new(&mooclet.policy);
        let id = mooclet.id;
        let entry = self.new_entry(mooclet, state);
        self.mooclets
            .write()
            .insert(id, Arc::new(Mutex::new(entry)));
    }

    fn apply_assigned(
        &self,
        e: &mut MoocletEntry,
        record: AssignmentRecord,
        value_seq: u64,
        bucket: Option<&ContextBucket>,
    ) {
        e.state.record_assignment(record.version, bucket);
        if e.mooclet.sticky {
            e.sticky.entry(record.learner.clone()).or_insert(record.id);
        }
        let variable = store::version_of_variable(record.mooclet);
        let value = ValueRecord {
            seq: value_seq,
            timestamp: record.timestamp,
            learner: record.learner.clone(),
            variable: variable.clone(),
            value: Value::Text(record.version.to_string()),
            provenance: Some(Provenance {
                mooclet: record.mooclet,
                version: record.version,
                assignment: record.id,
            }),
        };
        let mut store = self.store.write();
        if store.variable(&variable).is_none() {
            store.insert_variable(
                Variable::new(variable, VariableKind::System, ValueType::Text).describe(format!(
                    "version of mooclet {} served to the learner",
                    record.mooclet
                )),
            );
        }
        store.append(value);
        drop(store);
        self.assignments.write().push(record);
    }

    fn apply_rewarded(
        &self,
        e: &mut MoocletEntry,
        assignment: AssignmentId,
        success: bool,
    ) -> Result<()> {
        let mut log = self.assignments.write();
        let record = log
            .get(assignment)
            .ok_or_else(|| Error::Journal(format!("reward for unknown assignment {assignment}")))?;
        let bucket = e
            .state
            .contexts
            .as_ref()
            .and_then(|t| record.context.get(&t.variable))
            .map(|v| ContextBucket::from_value(v.as_ref()));
        e.state
            .record_reward(record.version, bucket.as_ref(), success);
        log.set_reward(assignment, success);
        Ok(())
    }

    fn replay(&self, line: JournalLine) -> Result<()> {
        let mut core = self.core.lock();
        core.ids.seq = core.ids.seq.max(line.seq + 1);
        core.ids.observe(&line.event);
        drop(core);
        let entry_of = |id: MoocletId| {
            self.entry(id)
                .map_err(|_| Error::Journal(format!("event for unknown mooclet {id}")))
        };
        match line.event {
            Event::MoocletCreated { mooclet } => {
                self.observe(mooclet.created_at);
                self.apply_created(mooclet);
            }
            Event::VersionAdded {
                mooclet,
                version,
                at,
            } => {
                self.observe(at);
                apply_version_added(&mut entry_of(mooclet)?.lock(), version);
            }
            Event::VersionUpdated {
                mooclet,
                version,
                weight,
                archived,
                at,
            } => {
                self.observe(at);
                apply_version_updated(&mut entry_of(mooclet)?.lock(), version, weight, archived)?;
            }
            Event::PolicySet {
                mooclet,
                policy,
                at,
            } => {
                self.observe(at);
                apply_policy_set(&mut entry_of(mooclet)?.lock(), policy);
            }
            Event::PinSet {
                mooclet,
                version,
                at,
            } => {
                self.observe(at);
                let entry = entry_of(mooclet)?;
                let mut e = entry.lock();
                e.mooclet.pinned_version = version;
                e.mooclet.pin_updated_at = Some(at);
            }
            Event::Assigned { record, value_seq } => {
                self.observe(record.timestamp);
                let entry = entry_of(record.mooclet)?;
                let mut e = entry.lock();
                let bucket = e
                    .mooclet
                    .policy
                    .context_variable()
                    .and_then(|var| record.context.get(var))
                    .map(|v| ContextBucket::from_value(v.as_ref()));
                self.apply_assigned(&mut e, record, value_seq, bucket.as_ref());
            }
            Event::Rewarded {
                assignment,
                success,
                at,
            } => {
                self.observe(at);
                let mooclet = self
                    .assignments
                    .read()
                    .get(assignment)
                    .map(|r| r.mooclet)
                    .ok_or_else(|| {
                        Error::Journal(format!("reward for unknown assignment {assignment}"))
                    })?;
                self.apply_rewarded(&mut entry_of(mooclet)?.lock(), assignment, success)?;
            }
            Event::VariableDefined { variable, at } => {
                self.observe(at);
                self.store.write().insert_variable(variable);
            }
            Event::ValuePushed { record } => {
                self.observe(record.timestamp);
                self.store.write().append(record);
            }
            Event::BudgetSpent {
                principal,
                epsilon,
                at,
            } => {
                self.observe(at);
                self.budgets.lock().debit(&principal, epsilon);
            }
            Event::QuestionCreated { question, at } => {
                self.observe(at);
                self.rubric.write().insert_question(question);
            }
            Event::ResponseSubmitted { response } => {
                self.observe(response.timestamp);
                self.rubric.write().apply_response(response)?;
            }
        }
        Ok(())
    }

    fn restore(&self, line: SnapshotLine) -> Result<()> {
        match line {
            SnapshotLine::Header {
                format,
                counters,
                clock,
                ..
            } => {
                if format != SNAPSHOT_FORMAT {
                    return Err(Error::Journal(format!(
                        "unknown snapshot format {format:?}"
                    )));
                }
                let mut core = self.core.lock();
                core.ids = counters;
                core.clock.observe(clock);
            }
            SnapshotLine::Mooclet {
                mooclet,
                state,
                sticky,
            } => {
                let id = mooclet.id;
                let mut entry = self.new_entry(mooclet, state);
                entry.sticky = sticky.into_iter().collect();
                self.mooclets
                    .write()
                    .insert(id, Arc::new(Mutex::new(entry)));
            }
            SnapshotLine::Variable { variable } => self.store.write().insert_variable(variable),
            SnapshotLine::Value { record } => self.store.write().append(record),
            SnapshotLine::Assignment { record, reward } => {
                let id = record.id;
                let mut log = self.assignments.write();
                log.push(record);
                if let Some(r) = reward {
                    log.set_reward(id, r);
                }
            }
            SnapshotLine::BudgetSpent { principal, epsilon } => {
                self.budgets.lock().debit(&principal, epsilon)
            }
            SnapshotLine::Question { question } => self.rubric.write().insert_question(question),
            SnapshotLine::Response { response } => self.rubric.write().restore_response(response),
        }
        Ok(())
    }

    fn observe(&self, ts: Timestamp) {
        self.core.lock().clock.observe(ts);
    }
}

fn apply_version_added(e: &mut MoocletEntry, version: Version) {
    e.state.add_arm(version.id);
    e.mooclet.versions.push(version);
}

fn apply_version_updated(
    e: &mut MoocletEntry,
    version: VersionId,
    weight: f64,
    archived: bool,
) -> Result<()> {
    let v = e
        .mooclet
        .version_mut(version)
        .ok_or_else(|| Error::NotFound(format!("version {version}")))?;
    v.weight = weight;
    v.archived = archived;
    Ok(())
}

fn apply_policy_set(e: &mut MoocletEntry, policy: PolicySpec) {
    e.state.reconfigure(&policy);
    e.mooclet.policy = policy;
}
