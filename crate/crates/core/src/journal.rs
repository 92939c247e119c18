//! Durable state: an append-only JSON-lines mutation journal plus periodic
//! snapshots in the same line-delimited style.
//!
//! Journal file `journal.jsonl`, one event per line:
//!
//! ```text
//! {"seq":1,"event":"mooclet_created","mooclet":{...}}
//! {"seq":2,"event":"version_added","mooclet":"m1","version":{...}}
//! ```
//!
//! Snapshot file `snapshot.jsonl` starts with a `header` line carrying the
//! last journal `seq` it covers; replay applies only journal lines with a
//! larger `seq`.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use std::fmt;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::value::RawValue;

use crate::assignment::AssignmentRecord;
use crate::error::{Error, Result};
use crate::ids::{AssignmentId, MoocletId, Pseudonym, Timestamp, VersionId};
use crate::policy::PolicyState;
use crate::registry::{Mooclet, PolicySpec, Version};
use crate::rubric::{Question, ResponseRecord};
use crate::store::{ValueRecord, Variable};

pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.jsonl";
pub const SNAPSHOT_FORMAT: &str = "mooclet-snapshot/1";

/// On disk the variant name sits beside the fields under `"event"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    MoocletCreated {
        mooclet: Mooclet,
    },
    VersionAdded {
        mooclet: MoocletId,
        version: Version,
        at: Timestamp,
    },
    VersionUpdated {
        mooclet: MoocletId,
        version: VersionId,
        weight: f64,
        archived: bool,
        at: Timestamp,
    },
    PolicySet {
        mooclet: MoocletId,
        policy: PolicySpec,
        at: Timestamp,
    },
    PinSet {
        mooclet: MoocletId,
        version: Option<VersionId>,
        at: Timestamp,
    },
    /// Also appends the matching `version_of:<mooclet>` value with sequence
    /// number `value_seq`.
    Assigned {
        record: AssignmentRecord,
        value_seq: u64,
    },
    Rewarded {
        assignment: AssignmentId,
        success: bool,
        at: Timestamp,
    },
    VariableDefined {
        variable: Variable,
        at: Timestamp,
    },
    ValuePushed {
        record: ValueRecord,
    },
    BudgetSpent {
        principal: String,
        epsilon: f64,
        at: Timestamp,
    },
    QuestionCreated {
        question: Question,
        at: Timestamp,
    },
    ResponseSubmitted {
        response: ResponseRecord,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct JournalLine {
    pub seq: u64,
    pub event: Event,
}

/// Next free value of every engine-generated id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub seq: u64,
    pub mooclet: u64,
    pub version: u64,
    pub assignment: u64,
    pub value: u64,
    pub question: u64,
}

impl Default for Counters {
    fn default() -> Self {
        Counters {
            seq: 1,
            mooclet: 1,
            version: 1,
            assignment: 1,
            value: 0,
            question: 1,
        }
    }
}

impl Counters {
    /// Advances past every id mentioned by `event`.
    pub fn observe(&mut self, event: &Event) {
        fn bump(slot: &mut u64, used: u64) {
            *slot = (*slot).max(used + 1);
        }
        match event {
            Event::MoocletCreated { mooclet } => bump(&mut self.mooclet, mooclet.id.0),
            Event::VersionAdded { version, .. } => bump(&mut self.version, version.id.0),
            Event::Assigned { record, value_seq } => {
                bump(&mut self.assignment, record.id.0);
                bump(&mut self.value, *value_seq);
            }
            Event::ValuePushed { record } => bump(&mut self.value, record.seq),
            Event::QuestionCreated { question, .. } => bump(&mut self.question, question.id.0),
            _ => {}
        }
    }
}

/// On disk the variant name sits beside the fields under `"kind"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotLine {
    Header {
        format: String,
        seq: u64,
        counters: Counters,
        clock: Timestamp,
    },
    Mooclet {
        mooclet: Mooclet,
        state: PolicyState,
        sticky: Vec<(Pseudonym, AssignmentId)>,
    },
    Variable {
        variable: Variable,
    },
    Value {
        record: ValueRecord,
    },
    Assignment {
        record: AssignmentRecord,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reward: Option<bool>,
    },
    BudgetSpent {
        principal: String,
        epsilon: f64,
    },
    Question {
        question: Question,
    },
    Response {
        response: ResponseRecord,
    },
}

/// Open journal file handle.
#[derive(Debug)]
pub struct Journal {
    dir: PathBuf,
    out: BufWriter<File>,
}

impl Journal {
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(JOURNAL_FILE);
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Journal {
            dir: dir.to_owned(),
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, line: &JournalLine) -> Result<()> {
        let text = encode_tagged(Some(line.seq), "event", &line.event)?;
        self.out.write_all(text.as_bytes())?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }

    /// Atomically replaces the snapshot, then empties the journal.
    pub fn write_snapshot(&mut self, lines: &[SnapshotLine]) -> Result<()> {
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            for line in lines {
                w.write_all(encode_tagged(None, "kind", line)?.as_bytes())?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
            w.get_ref().sync_all()?;
        }
        fs::rename(&tmp, self.dir.join(SNAPSHOT_FILE))?;
        self.out.flush()?;
        self.out.get_ref().set_len(0)?;
        Ok(())
    }
}

/// Top-level object fields in document order, values left unparsed.
struct Fields(Vec<(String, Box<RawValue>)>);

impl<'de> Deserialize<'de> for Fields {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Fields;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object")
            }
            fn visit_map<A: MapAccess<'de>>(
                self,
                mut map: A,
            ) -> std::result::Result<Fields, A::Error> {
                let mut out = Vec::new();
                while let Some(entry) = map.next_entry()? {
                    out.push(entry);
                }
                Ok(Fields(out))
            }
        }
        d.deserialize_map(V)
    }
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Journal(e.to_string())
}

// Internally tagged serde enums buffer their input, which raw version
// content cannot pass through, so the tag is moved in and out by hand.
fn encode_tagged<T: Serialize>(seq: Option<u64>, tag: &str, value: &T) -> Result<String> {
    let outer: Fields =
        serde_json::from_str(&serde_json::to_string(value).map_err(json_err)?).map_err(json_err)?;
    let [(variant, body)] = <[_; 1]>::try_from(outer.0)
        .map_err(|_| Error::Journal("expected a struct variant".into()))?;
    let inner: Fields = serde_json::from_str(body.get()).map_err(json_err)?;
    let mut out = String::from("{");
    if let Some(seq) = seq {
        out.push_str(&format!("\"seq\":{seq},"));
    }
    out.push_str(&format!(
        "{}:{}",
        serde_json::to_string(tag).map_err(json_err)?,
        serde_json::to_string(&variant).map_err(json_err)?
    ));
    for (k, v) in inner.0 {
        out.push(',');
        out.push_str(&serde_json::to_string(&k).map_err(json_err)?);
        out.push(':');
        out.push_str(v.get());
    }
    out.push('}');
    Ok(out)
}

fn decode_tagged<T: for<'de> Deserialize<'de>>(
    text: &str,
    tag: &str,
) -> serde_json::Result<(Option<u64>, T)> {
    use serde::de::Error as _;
    let fields: Fields = serde_json::from_str(text)?;
    let (mut seq, mut variant) = (None, None);
    let mut body = String::from("{");
    for (k, v) in fields.0 {
        if k == "seq" && seq.is_none() && tag == "event" {
            seq = Some(serde_json::from_str(v.get())?);
        } else if k == tag {
            variant = Some(v);
        } else {
            if body.len() > 1 {
                body.push(',');
            }
            body.push_str(&serde_json::to_string(&k)?);
            body.push(':');
            body.push_str(v.get());
        }
    }
    body.push('}');
    let variant = variant.ok_or_else(|| serde_json::Error::missing_field("tag"))?;
    let value = serde_json::from_str(&format!("{{{}:{body}}}", variant.get()))?;
    Ok((seq, value))
}

fn read_lines<T>(path: &Path, decode: impl Fn(&str) -> serde_json::Result<T>) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut rd = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    let mut buf = String::new();
    let mut lineno = 0;
    loop {
        buf.clear();
        if rd.read_line(&mut buf)? == 0 {
            break;
        }
        lineno += 1;
        let complete = buf.ends_with('\n');
        let text = buf.trim();
        if text.is_empty() {
            continue;
        }
        match decode(text) {
            Ok(v) => out.push(v),
            // a torn final write from a crash is dropped
            Err(_) if !complete => break,
            Err(e) => {
                return Err(Error::Journal(format!("{}:{lineno}: {e}", path.display())));
            }
        }
    }
    Ok(out)
}

pub fn read_journal(dir: &Path) -> Result<Vec<JournalLine>> {
    read_lines(&dir.join(JOURNAL_FILE), |text| {
        use serde::de::Error as _;
        let (seq, event) = decode_tagged(text, "event")?;
        let seq = seq.ok_or_else(|| serde_json::Error::missing_field("seq"))?;
        Ok(JournalLine { seq, event })
    })
}

pub fn read_snapshot(dir: &Path) -> Result<Vec<SnapshotLine>> {
    let lines: Vec<SnapshotLine> = read_lines(&dir.join(SNAPSHOT_FILE), |text| {
        Ok(decode_tagged(text, "kind")?.1)
    })?;
    match lines.first() {
        None => Ok(lines),
        Some(SnapshotLine::Header { format, .. }) if format == SNAPSHOT_FORMAT => Ok(lines),
        Some(_) => Err(Error::Journal(
            "snapshot does not start with a recognized header".into(),
        )),
    }
}
