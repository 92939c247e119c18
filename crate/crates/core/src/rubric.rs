//! Collaboration survey: questions whose option lists grow and reorder from
//! the answers instructors and researchers give.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{QuestionId, Timestamp};

/// Lowercases and collapses whitespace.
pub fn normalize_label(label: &str) -> String {
    label
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionEntry {
    pub label: String,
    pub count: u64,
    pub seeded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: QuestionId,
    pub prompt: String,
    pub options: Vec<OptionEntry>,
}

impl Question {
    fn position(&self, label: &str) -> Option<usize> {
        let key = normalize_label(label);
        self.options
            .iter()
            .position(|o| normalize_label(&o.label) == key)
    }

    /// Options by descending count, ties by normalized label.
    pub fn ranked_options(&self) -> Vec<OptionEntry> {
        let mut out = self.options.clone();
        out.sort_by(|a, b| {
            b.count
                .cmp(&a.count)
                .then_with(|| normalize_label(&a.label).cmp(&normalize_label(&b.label)))
        });
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Respondent {
    Instructor,
    Researcher,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub question: QuestionId,
    pub role: Respondent,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_text: Option<String>,
    #[serde(default)]
    pub selected_options: Vec<String>,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, Default)]
pub struct Rubric {
    questions: BTreeMap<QuestionId, Question>,
    responses: Vec<ResponseRecord>,
}

impl Rubric {
    pub fn question(&self, id: QuestionId) -> Result<&Question> {
        self.questions
            .get(&id)
            .ok_or_else(|| Error::NotFound(format!("question {id}")))
    }

    pub fn questions(&self) -> impl Iterator<Item = &Question> {
        self.questions.values()
    }

    pub fn responses(&self) -> &[ResponseRecord] {
        &self.responses
    }

    pub fn new_question(id: QuestionId, prompt: &str, seeds: &[String]) -> Result<Question> {
        if prompt.trim().is_empty() {
            return Err(Error::validation("question prompt must be nonempty"));
        }
        let mut q = Question {
            id,
            prompt: prompt.trim().to_owned(),
            options: Vec::new(),
        };
        for seed in seeds {
            if normalize_label(seed).is_empty() {
                return Err(Error::validation("option labels must be nonempty"));
            }
            if q.position(seed).is_some() {
                return Err(Error::Conflict(format!("duplicate seeded option {seed:?}")));
            }
            q.options.push(OptionEntry {
                label: seed.trim().to_owned(),
                count: 0,
                seeded: true,
            });
        }
        Ok(q)
    }

    pub(crate) fn insert_question(&mut self, q: Question) {
        self.questions.insert(q.id, q);
    }

    /// Restores a response whose effect is already in the stored counts.
    pub(crate) fn restore_response(&mut self, r: ResponseRecord) {
        self.responses.push(r);
    }

    /// Validates a submission against the current option list and returns
    /// the record to commit. Blank free text counts as absent.
    pub fn prepare_response(
        &self,
        question: QuestionId,
        role: Respondent,
        free_text: Option<&str>,
        selections: &[String],
        timestamp: Timestamp,
    ) -> Result<ResponseRecord> {
        let q = self.question(question)?;
        let free_text = free_text.filter(|t| !normalize_label(t).is_empty());
        if free_text.is_none() && selections.is_empty() {
            return Err(Error::validation(
                "a response needs free text or at least one selection",
            ));
        }
        for s in selections {
            if q.position(s).is_none() {
                return Err(Error::validation(format!(
                    "{s:?} is not an option of question {question}"
                )));
            }
        }
        Ok(ResponseRecord {
            question,
            role,
            free_text: free_text.map(|t| t.trim().to_owned()),
            selected_options: selections.to_vec(),
            timestamp,
        })
    }

    /// Each option the response touches gains exactly one count, however
    /// many ways the response names it.
    pub(crate) fn apply_response(&mut self, r: ResponseRecord) -> Result<()> {
        let q = self
            .questions
            .get_mut(&r.question)
            .ok_or_else(|| Error::NotFound(format!("question {}", r.question)))?;
        let mut touched = BTreeSet::new();
        for s in &r.selected_options {
            let i = q
                .position(s)
                .ok_or_else(|| Error::validation(format!("{s:?} is not an option")))?;
            touched.insert(i);
        }
        if let Some(text) = &r.free_text {
            match q.position(text) {
                Some(i) => {
                    touched.insert(i);
                }
                None => q.options.push(OptionEntry {
                    label: text.clone(),
                    count: 1,
                    seeded: false,
                }),
            }
        }
        for i in touched {
            q.options[i].count += 1;
        }
        self.responses.push(r);
        Ok(())
    }
}

/// Parses a question fixture: one prompt per line, optionally followed by
/// `|` and comma-separated seeded options. Blank lines and `#` comments are
/// skipped.
pub fn parse_fixture(text: &str) -> Vec<(String, Vec<String>)> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|line| match line.split_once('|') {
            Some((prompt, opts)) => (
                prompt.trim().to_owned(),
                opts.split(',')
                    .map(str::trim)
                    .filter(|o| !o.is_empty())
                    .map(str::to_owned)
                    .collect(),
            ),
            None => (line.to_owned(), Vec::new()),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rubric() -> Rubric {
        let mut r = Rubric::default();
        let q = Rubric::new_question(
            QuestionId(1),
            "What components of the course would you like to improve?",
            &["homework exercises".into(), "text documents".into()],
        )
        .unwrap();
        r.insert_question(q);
        r
    }

    fn submit(r: &mut Rubric, text: Option<&str>, sel: &[&str]) -> Result<()> {
        let sel: Vec<String> = sel.iter().map(|s| s.to_string()).collect();
        let rec = r.prepare_response(
            QuestionId(1),
            Respondent::Instructor,
            text,
            &sel,
            Timestamp(0),
        )?;
        r.apply_response(rec)
    }

    #[test]
    fn normalization() {
        assert_eq!(
            normalize_label("  Homework   Exercises \t"),
            "homework exercises"
        );
    }

    #[test]
    fn seeded_options_start_at_zero_in_label_order() {
        let r = rubric();
        let opts = r.question(QuestionId(1)).unwrap().ranked_options();
        assert_eq!(
            opts.iter()
                .map(|o| (o.label.as_str(), o.count))
                .collect::<Vec<_>>(),
            [("homework exercises", 0), ("text documents", 0)]
        );
    }

    #[test]
    fn free_text_matching_a_label_increments_it() {
        let mut r = rubric();
        submit(&mut r, Some("Homework  Exercises"), &[]).unwrap();
        let q = r.question(QuestionId(1)).unwrap();
        assert_eq!(q.options.len(), 2);
        assert_eq!(q.options[0].count, 1);
    }

    #[test]
    fn new_free_text_becomes_an_option() {
        let mut r = rubric();
        submit(&mut r, Some("email reminders"), &[]).unwrap();
        submit(&mut r, None, &["Email Reminders"]).unwrap();
        let opts = r.question(QuestionId(1)).unwrap().ranked_options();
        assert_eq!(opts[0].label, "email reminders");
        assert_eq!(opts[0].count, 2);
        assert!(!opts[0].seeded);
    }

    #[test]
    fn one_response_counts_once_per_option() {
        let mut r = rubric();
        submit(
            &mut r,
            Some("text documents"),
            &["text documents", "TEXT documents"],
        )
        .unwrap();
        assert_eq!(r.question(QuestionId(1)).unwrap().options[1].count, 1);
    }

    #[test]
    fn rejects_empty_and_unknown() {
        let mut r = rubric();
        assert!(matches!(
            submit(&mut r, None, &[]),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            submit(&mut r, Some("   "), &[]),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            submit(&mut r, None, &["videos"]),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            r.prepare_response(
                QuestionId(9),
                Respondent::Researcher,
                Some("x"),
                &[],
                Timestamp(0)
            ),
            Err(Error::NotFound(_))
        ));
        assert!(r.responses().is_empty());
    }

    #[test]
    fn fixture_lines() {
        let parsed = parse_fixture("# seeds\nWhat would you improve? | homework exercises, text documents\n\nWhat data do you collect?\n");
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].1, ["homework exercises", "text documents"]);
        assert!(parsed[1].1.is_empty());
    }
}
