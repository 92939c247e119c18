//! The user variable store: a catalog of declared variables and an
//! append-only log of learner values.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{AssignmentId, MoocletId, Pseudonym, Timestamp, VersionId};

/// Prefix of the system variable recording which version a learner was served.
pub const VERSION_OF_PREFIX: &str = "version_of:";

pub fn version_of_variable(mooclet: MoocletId) -> String {
    format!("{VERSION_OF_PREFIX}{mooclet}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableKind {
    Outcome,
    Covariate,
    Context,
    System,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueType {
    Number,
    Text,
    Boolean,
}

/// Clamp range for numeric variables; required for sum and mean aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_finite() && hi.is_finite() && lo <= hi {
            Ok(Bounds { lo, hi })
        } else {
            Err(Error::validation(format!(
                "invalid clamp bounds [{lo}, {hi}]"
            )))
        }
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub kind: VariableKind,
    pub value_type: ValueType,
    #[serde(default)]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Bounds>,
}

impl Variable {
    pub fn new(name: impl Into<String>, kind: VariableKind, value_type: ValueType) -> Self {
        Variable {
            name: name.into(),
            kind,
            value_type,
            description: String::new(),
            bounds: None,
        }
    }

    pub fn describe(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }

    pub fn with_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.bounds = Some(Bounds { lo, hi });
        self
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::validation("variable name must be nonempty"));
        }
        if let Some(b) = self.bounds {
            Bounds::new(b.lo, b.hi)?;
            if self.value_type != ValueType::Number {
                return Err(Error::validation(format!(
                    "variable {:?}: clamp bounds only apply to numbers",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Boolean(bool),
    Number(f64),
    Text(String),
}

impl Value {
    pub fn value_type(&self) -> ValueType {
        match self {
            Value::Boolean(_) => ValueType::Boolean,
            Value::Number(_) => ValueType::Number,
            Value::Text(_) => ValueType::Text,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(x) => Some(*x),
            _ => None,
        }
    }

    /// Key used when this value selects a context bucket.
    pub fn bucket_label(&self) -> String {
        self.to_string()
    }

    /// Parses the flat-file rendering of a value of type `ty`.
    pub fn parse_as(ty: ValueType, text: &str) -> Result<Value> {
        match ty {
            ValueType::Text => Ok(Value::Text(text.to_owned())),
            ValueType::Number => text
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .map(Value::Number)
                .ok_or_else(|| Error::validation(format!("{text:?} is not a number"))),
            ValueType::Boolean => match text {
                "true" => Ok(Value::Boolean(true)),
                "false" => Ok(Value::Boolean(false)),
                _ => Err(Error::validation(format!("{text:?} is not a boolean"))),
            },
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Boolean(b) => write!(f, "{b}"),
            Value::Number(x) => write!(f, "{x}"),
            Value::Text(s) => f.write_str(s),
        }
    }
}

/// Links a value to the assignment that produced or explains it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub mooclet: MoocletId,
    pub version: VersionId,
    pub assignment: AssignmentId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueRecord {
    pub seq: u64,
    pub timestamp: Timestamp,
    pub learner: Pseudonym,
    pub variable: String,
    pub value: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// Record selection. The time range is half-open: `since <= t < until`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learner: Option<Pseudonym>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variable: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub since: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub until: Option<Timestamp>,
}

impl RecordFilter {
    pub fn learner(mut self, learner: Pseudonym) -> Self {
        self.learner = Some(learner);
        self
    }

    pub fn variable(mut self, name: impl Into<String>) -> Self {
        self.variable = Some(name.into());
        self
    }

    pub fn between(mut self, since: Timestamp, until: Timestamp) -> Self {
        self.since = Some(since);
        self.until = Some(until);
        self
    }

    pub fn matches(&self, r: &ValueRecord) -> bool {
        self.learner.as_ref().is_none_or(|l| *l == r.learner)
            && self.variable.as_ref().is_none_or(|v| *v == r.variable)
            && self.since.is_none_or(|t| r.timestamp >= t)
            && self.until.is_none_or(|t| r.timestamp < t)
    }
}

pub const EXPORT_HEADER: [&str; 7] = [
    "timestamp",
    "learner",
    "variable",
    "value",
    "mooclet",
    "version",
    "assignment",
];

/// In-memory store contents. Synchronization is the engine's job.
#[derive(Debug, Default, Clone)]
pub struct StoreData {
    variables: BTreeMap<String, Variable>,
    records: Vec<ValueRecord>,
    latest: HashMap<(Pseudonym, String), usize>,
}

impl StoreData {
    pub fn variable(&self, name: &str) -> Option<&Variable> {
        self.variables.get(name)
    }

    pub fn require_variable(&self, name: &str) -> Result<&Variable> {
        self.variable(name)
            .ok_or_else(|| Error::NotFound(format!("variable {name:?}")))
    }

    pub fn variables(&self) -> impl Iterator<Item = &Variable> {
        self.variables.values()
    }

    pub fn records(&self) -> &[ValueRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn check_new_variable(&self, var: &Variable) -> Result<()> {
        var.validate()?;
        if self.variables.contains_key(&var.name) {
            return Err(Error::Conflict(format!(
                "variable {:?} already defined",
                var.name
            )));
        }
        Ok(())
    }

    pub fn check_value(&self, variable: &str, value: &Value) -> Result<()> {
        let var = self.require_variable(variable)?;
        if value.value_type() != var.value_type {
            return Err(Error::validation(format!(
                "variable {variable:?} holds {:?} values, got {value:?}",
                var.value_type
            )));
        }
        if let Value::Number(x) = value {
            if !x.is_finite() {
                return Err(Error::validation("numbers must be finite"));
            }
        }
        Ok(())
    }

    pub(crate) fn insert_variable(&mut self, var: Variable) {
        self.variables.entry(var.name.clone()).or_insert(var);
    }

    pub(crate) fn append(&mut self, record: ValueRecord) {
        self.latest.insert(
            (record.learner.clone(), record.variable.clone()),
            self.records.len(),
        );
        self.records.push(record);
    }

    /// Most recent value of `variable` for `learner`.
    pub fn latest_value(&self, learner: &Pseudonym, variable: &str) -> Option<&Value> {
        self.latest
            .get(&(learner.clone(), variable.to_owned()))
            .map(|&i| &self.records[i].value)
    }

    /// Matching records ordered by timestamp, then append order.
    pub fn query(&self, filter: &RecordFilter) -> Vec<ValueRecord> {
        let mut out: Vec<ValueRecord> = self
            .records
            .iter()
            .filter(|r| filter.matches(r))
            .cloned()
            .collect();
        out.sort_by_key(|r| (r.timestamp, r.seq));
        out
    }

    pub fn export_csv<W: Write>(&self, filter: &RecordFilter, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(EXPORT_HEADER).map_err(csv_error)?;
        for r in self.query(filter) {
            let (m, v, a) = match r.provenance {
                Some(p) => (
                    p.mooclet.to_string(),
                    p.version.to_string(),
                    p.assignment.to_string(),
                ),
                None => Default::default(),
            };
            w.write_record([
                r.timestamp.to_string(),
                r.learner.to_string(),
                r.variable,
                r.value.to_string(),
                m,
                v,
                a,
            ])
            .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One row of an export file, typed against the catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportedRow {
    pub timestamp: Timestamp,
    pub learner: Pseudonym,
    pub variable: String,
    pub value: Value,
    pub provenance: Option<Provenance>,
}

/// Parses an export file. Every variable it mentions must be in `catalog`.
pub fn parse_export<R: Read>(
    input: R,
    catalog: &BTreeMap<String, Variable>,
) -> Result<Vec<ImportedRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers().map_err(csv_error)?;
    if header.iter().ne(EXPORT_HEADER) {
        return Err(Error::validation(format!(
            "unexpected export header {header:?}"
        )));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_error)?;
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let variable = field(2).to_owned();
        let var = catalog
            .get(&variable)
            .ok_or_else(|| Error::NotFound(format!("variable {variable:?}")))?;
        let provenance = match (field(4), field(5), field(6)) {
            ("", "", "") => None,
            (m, v, a) => Some(Provenance {
                mooclet: m.parse()?,
                version: v.parse()?,
                assignment: a.parse()?,
            }),
        };
        rows.push(ImportedRow {
            timestamp: field(0).parse()?,
            learner: Pseudonym::parse(field(1))?,
            value: Value::parse_as(var.value_type, field(3))?,
            variable,
            provenance,
        });
    }
    Ok(rows)
}

fn csv_error(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::validation(format!("csv: {other:?}")),
        }
    } else {
        Error::validation(format!("csv: {e}"))
    }
}
