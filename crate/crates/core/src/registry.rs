//! MOOClets with their versions and policies.

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::ids::{MoocletId, Timestamp, VersionId};

/// Opaque content document. Stored as the exact JSON text it arrived as and
/// returned byte-identically; the engine never looks inside.
pub type Content = Box<RawValue>;

/// Parses `text` as a content document, keeping its bytes verbatim.
pub fn content_from_str(text: &str) -> Result<Content> {
    RawValue::from_string(text.to_owned())
        .map_err(|e| Error::validation(format!("content is not a JSON document: {e}")))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Version {
    pub id: VersionId,
    pub name: String,
    pub content: Content,
    pub weight: f64,
    /// Archived versions are never chosen by a policy; they remain so that
    /// historical assignments keep a valid referent.
    #[serde(default)]
    pub archived: bool,
}

impl PartialEq for Version {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.name == other.name
            && self.content.get() == other.content.get()
            && self.weight.to_bits() == other.weight.to_bits()
            && self.archived == other.archived
    }
}

/// Beta prior shared by every arm of a Thompson policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPrior {
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub beta: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for BetaPrior {
    fn default() -> Self {
        BetaPrior {
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

impl BetaPrior {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let p = BetaPrior { alpha, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if ok(self.alpha) && ok(self.beta) {
            Ok(())
        } else {
            Err(Error::validation(format!(
                "prior alpha and beta must be positive, got ({}, {})",
                self.alpha, self.beta
            )))
        }
    }
}

/// The assignment rule a MOOClet runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    UniformRandom,
    WeightedRandom,
    /// Always serve one version. Unlike an instructor pin this is the
    /// configured policy itself.
    Pinned {
        version: VersionId,
    },
    ThompsonBernoulli {
        #[serde(flatten, default)]
        prior: BetaPrior,
    },
    ContextualThompson {
        #[serde(flatten, default)]
        prior: BetaPrior,
        /// Name of a declared variable whose current value selects the
        /// posterior table used for a learner.
        context_variable: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    UniformRandom,
    WeightedRandom,
    Pinned,
    ThompsonBernoulli,
    ContextualThompson,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::UniformRandom,
        PolicyKind::WeightedRandom,
        PolicyKind::Pinned,
        PolicyKind::ThompsonBernoulli,
        PolicyKind::ContextualThompson,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::UniformRandom => "uniform_random",
            PolicyKind::WeightedRandom => "weighted_random",
            PolicyKind::Pinned => "pinned",
            PolicyKind::ThompsonBernoulli => "thompson_bernoulli",
            PolicyKind::ContextualThompson => "contextual_thompson",
        }
    }
}

impl PolicySpec {
    pub fn kind(&self) -> PolicyKind {
        match self {
            PolicySpec::UniformRandom => PolicyKind::UniformRandom,
            PolicySpec::WeightedRandom => PolicyKind::WeightedRandom,
            PolicySpec::Pinned { .. } => PolicyKind::Pinned,
            PolicySpec::ThompsonBernoulli { .. } => PolicyKind::ThompsonBernoulli,
            PolicySpec::ContextualThompson { .. } => PolicyKind::ContextualThompson,
        }
    }

    /// Prior for adaptive kinds; the default Beta(1,1) otherwise, so that
    /// bookkeeping is uniform across kinds.
    pub fn prior(&self) -> BetaPrior {
        match self {
            PolicySpec::ThompsonBernoulli { prior }
            | PolicySpec::ContextualThompson { prior, .. } => *prior,
            _ => BetaPrior::default(),
        }
    }

    pub fn context_variable(&self) -> Option<&str> {
        match self {
            PolicySpec::ContextualThompson {
                context_variable, ..
            } => Some(context_variable),
            _ => None,
        }
    }

    /// Checks kind-specific parameters. `versions` are the MOOClet's current
    /// versions; `is_declared` answers whether a variable exists.
    pub fn validate(&self, versions: &[Version], is_declared: impl Fn(&str) -> bool) -> Result<()> {
        match self {
            PolicySpec::UniformRandom | PolicySpec::WeightedRandom => Ok(()),
            PolicySpec::Pinned { version } => {
                if versions.iter().any(|v| v.id == *version) {
                    Ok(())
                } else {
                    Err(Error::validation(format!(
                        "pinned policy names {version}, which is not a version of this mooclet"
                    )))
                }
            }
            PolicySpec::ThompsonBernoulli { prior } => prior.validate(),
            PolicySpec::ContextualThompson {
                prior,
                context_variable,
            } => {
                prior.validate()?;
                if is_declared(context_variable) {
                    Ok(())
                } else {
                    Err(Error::validation(format!(
                        "context variable {context_variable:?} is not declared"
                    )))
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mooclet {
    pub id: MoocletId,
    pub name: String,
    pub versions: Vec<Version>,
    pub policy: PolicySpec,
    pub pinned_version: Option<VersionId>,
    pub sticky: bool,
    pub created_at: Timestamp,
    /// Time of the last pin change, for last-writer-wins display.
    pub pin_updated_at: Option<Timestamp>,
}

impl Mooclet {
    pub fn version(&self, id: VersionId) -> Option<&Version> {
        self.versions.iter().find(|v| v.id == id)
    }

    pub fn version_mut(&mut self, id: VersionId) -> Option<&mut Version> {
        self.versions.iter_mut().find(|v| v.id == id)
    }

    /// Versions a policy may choose from, in ascending id order.
    pub fn eligible_versions(&self) -> Vec<&Version> {
        let mut out: Vec<&Version> = self.versions.iter().filter(|v| !v.archived).collect();
        out.sort_by_key(|v| v.id);
        out
    }

    pub fn require_version(&self, id: VersionId) -> Result<&Version> {
        self.version(id).ok_or_else(|| {
            Error::validation(format!("{id} is not a version of mooclet {}", self.id))
        })
    }
}

pub(crate) fn validate_weight(weight: f64) -> Result<()> {
    if weight.is_finite() && weight >= 0.0 {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "weight must be a nonnegative number, got {weight}"
        )))
    }
}

pub(crate) fn validate_name(what: &str, name: &str) -> Result<()> {
    if name.trim().is_empty() {
        Err(Error::validation(format!("{what} name must be nonempty")))
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_specs_use_a_kind_tag() {
        let spec: PolicySpec = serde_json::from_str(r#"{"kind":"thompson_bernoulli"}"#).unwrap();
        assert_eq!(
            spec,
            PolicySpec::ThompsonBernoulli {
                prior: BetaPrior::default()
            }
        );
        let spec: PolicySpec = serde_json::from_str(
            r#"{"kind":"contextual_thompson","alpha":2,"context_variable":"segment"}"#,
        )
        .unwrap();
        assert_eq!(
            spec.prior(),
            BetaPrior {
                alpha: 2.0,
                beta: 1.0
            }
        );
        assert_eq!(spec.context_variable(), Some("segment"));
        let text = serde_json::to_string(&PolicySpec::Pinned {
            version: VersionId(3),
        })
        .unwrap();
        assert_eq!(text, r#"{"kind":"pinned","version":"v3"}"#);
    }

    #[test]
    fn priors_must_be_positive() {
        assert!(BetaPrior::new(0.0, 1.0).is_err());
        assert!(BetaPrior::new(1.0, -2.0).is_err());
        assert!(BetaPrior::new(f64::NAN, 1.0).is_err());
        assert!(BetaPrior::new(0.5, 0.5).is_ok());
    }

    #[test]
    fn contextual_policy_needs_a_declared_variable() {
        let spec = PolicySpec::ContextualThompson {
            prior: BetaPrior::default(),
            context_variable: "segment".into(),
        };
        assert!(spec.validate(&[], |_| false).is_err());
        assert!(spec.validate(&[], |n| n == "segment").is_ok());
    }

    #[test]
    fn content_keeps_its_bytes() {
        let text = "{ \"b\":1,  \"a\" : [1,2] }";
        let c = content_from_str(text).unwrap();
        assert_eq!(c.get(), text);
        assert!(content_from_str("not json").is_err());
    }

    #[test]
    fn weights_must_be_nonnegative() {
        assert!(validate_weight(-1.0).is_err());
        assert!(validate_weight(f64::INFINITY).is_err());
        assert!(validate_weight(0.0).is_ok());
    }
}
