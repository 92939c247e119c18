//! Differentially private aggregates over the variable store: the Laplace
//! mechanism with per-principal epsilon budgets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{Pseudonym, Timestamp};
use crate::rng::RandomSource;
use crate::store::{RecordFilter, StoreData};

/// Draws one sample from Laplace(0, scale) by inverting the CDF.
pub fn sample_laplace(scale: f64, rng: &mut RandomSource) -> f64 {
    loop {
        let u = rng.unit() - 0.5;
        let tail = 1.0 - 2.0 * u.abs();
        if tail > 0.0 {
            return -scale * u.signum() * tail.ln();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    Laplace,
    /// Exact answers. Budgets are still enforced. Test deployments only.
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateOp {
    Count,
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateQuery {
    pub op: AggregateOp,
    pub variable: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learner: Option<Pseudonym>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub since: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub until: Option<Timestamp>,
}

impl AggregateQuery {
    pub fn count(variable: impl Into<String>) -> Self {
        Self::new(AggregateOp::Count, variable)
    }

    pub fn new(op: AggregateOp, variable: impl Into<String>) -> Self {
        AggregateQuery {
            op,
            variable: variable.into(),
            learner: None,
            since: None,
            until: None,
        }
    }

    fn filter(&self) -> RecordFilter {
        RecordFilter {
            learner: self.learner.clone(),
            variable: Some(self.variable.clone()),
            since: self.since,
            until: self.until,
        }
    }
}

/// Exact answer plus the L1 sensitivity of the released quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct TrueAggregate {
    /// Count or clamped sum.
    pub value: f64,
    pub sensitivity: f64,
    /// Divisor applied after noising, for means.
    pub divisor: Option<f64>,
}

pub(crate) fn true_aggregate(store: &StoreData, query: &AggregateQuery) -> Result<TrueAggregate> {
    let var = store.require_variable(&query.variable)?;
    let filter = query.filter();
    let matching = store.records().iter().filter(|r| filter.matches(r));
    if query.op == AggregateOp::Count {
        return Ok(TrueAggregate {
            value: matching.count() as f64,
            sensitivity: 1.0,
            divisor: None,
        });
    }
    let bounds = var.bounds.ok_or_else(|| {
        Error::validation(format!(
            "variable {:?} has no clamp bounds; sum and mean need them",
            var.name
        ))
    })?;
    let (sum, n) = matching
        .filter_map(|r| r.value.as_number())
        .fold((0.0, 0u64), |(s, n), x| (s + bounds.clamp(x), n + 1));
    let divisor = match query.op {
        AggregateOp::Mean if n == 0 => {
            return Err(Error::validation("mean over zero records is undefined"));
        }
        AggregateOp::Mean => Some(n as f64),
        _ => None,
    };
    Ok(TrueAggregate {
        value: sum,
        sensitivity: bounds.width(),
        divisor,
    })
}

impl TrueAggregate {
    pub fn release(&self, epsilon: f64, mode: NoiseMode, rng: &mut RandomSource) -> f64 {
        let noise = match mode {
            NoiseMode::Laplace => sample_laplace(self.sensitivity / epsilon, rng),
            NoiseMode::Disabled => 0.0,
        };
        let noisy = self.value + noise;
        match self.divisor {
            Some(n) => noisy / n,
            None => noisy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon_total: f64,
    pub epsilon_spent: f64,
}

impl PrivacyBudget {
    pub fn remaining(&self) -> f64 {
        (self.epsilon_total - self.epsilon_spent).max(0.0)
    }
}

/// Slack for floating-point accumulation when comparing spent to total.
const BUDGET_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Default)]
pub struct BudgetLedger {
    totals: BTreeMap<String, f64>,
    spent: BTreeMap<String, f64>,
}

impl BudgetLedger {
    pub fn register(&mut self, principal: &str, epsilon_total: f64) -> Result<()> {
        if !(epsilon_total.is_finite() && epsilon_total > 0.0) {
            return Err(Error::validation(format!(
                "epsilon_total must be positive, got {epsilon_total}"
            )));
        }
        self.totals.insert(principal.to_owned(), epsilon_total);
        Ok(())
    }

    pub fn budget(&self, principal: &str) -> Option<PrivacyBudget> {
        self.totals.get(principal).map(|&total| PrivacyBudget {
            epsilon_total: total,
            epsilon_spent: self.spent.get(principal).copied().unwrap_or(0.0),
        })
    }

    pub fn check(&self, principal: &str, epsilon: f64) -> Result<()> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::validation(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        let budget = self
            .budget(principal)
            .ok_or_else(|| Error::Budget(format!("{principal} has no privacy budget")))?;
        if budget.epsilon_spent + epsilon > budget.epsilon_total + BUDGET_SLACK {
            return Err(Error::Budget(format!(
                "{principal} requested epsilon {epsilon} with {} remaining",
                budget.remaining()
            )));
        }
        Ok(())
    }

    pub(crate) fn debit(&mut self, principal: &str, epsilon: f64) {
        *self.spent.entry(principal.to_owned()).or_insert(0.0) += epsilon;
    }

    pub(crate) fn spent(&self) -> &BTreeMap<String, f64> {
        &self.spent
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laplace_is_symmetric_with_right_scale() {
        let mut rng = RandomSource::new(11);
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_laplace(2.0, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let mad = xs.iter().map(|x| x.abs()).sum::<f64>() / n as f64;
        // E|X| = scale for Laplace(0, scale)
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!((mad - 2.0).abs() < 0.1, "mean abs {mad}");
    }

    #[test]
    fn budget_accounting() {
        let mut ledger = BudgetLedger::default();
        ledger.register("r", 1.0).unwrap();
        ledger.check("r", 0.7).unwrap();
        ledger.debit("r", 0.7);
        assert!(matches!(ledger.check("r", 0.7), Err(Error::Budget(_))));
        assert_eq!(ledger.budget("r").unwrap().epsilon_spent, 0.7);
        ledger.check("r", 0.3).unwrap();
        assert!(matches!(ledger.check("r", 0.0), Err(Error::Validation(_))));
        assert!(matches!(ledger.check("nobody", 0.1), Err(Error::Budget(_))));
    }

    #[test]
    fn disabled_noise_is_exact() {
        let agg = TrueAggregate {
            value: 42.0,
            sensitivity: 1.0,
            divisor: None,
        };
        let mut rng = RandomSource::new(0);
        assert_eq!(agg.release(0.5, NoiseMode::Disabled, &mut rng), 42.0);
        let mean = TrueAggregate {
            value: 10.0,
            sensitivity: 1.0,
            divisor: Some(4.0),
        };
        assert_eq!(mean.release(0.5, NoiseMode::Disabled, &mut rng), 2.5);
    }
}
