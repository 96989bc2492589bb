use serde::{Deserialize, Serialize};

use super::eval::{evaluate, EvalReport};
use super::report::{ReportSet, RunRecord};
use super::train::{train, TrainConfig};
use crate::error::{Error, Result};
use crate::objectives::LossVariant;
use crate::synthbench::Split;

/// Training split plus the two evaluation splits.
#[derive(Debug, Clone, Copy)]
pub struct SplitSet<'a> {
    pub train: &'a Split,
    /// Same answer priors as `train`.
    pub id_test: &'a Split,
    /// Shifted answer priors.
    pub ood_test: &'a Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub id: EvalReport,
    pub ood: EvalReport,
}

/// Trains and evaluates one run of `config` on both test splits.
pub fn train_and_evaluate(config: &TrainConfig, splits: SplitSet<'_>) -> Result<(EvalReport, EvalReport)> {
    let (model, _) = train(splits.train, config)?;
    let train_prior = &splits.train.prior;
    Ok((
        evaluate(&model, splits.id_test, Some(train_prior))?,
        evaluate(&model, splits.ood_test, Some(train_prior))?,
    ))
}

/// One LPF run per γ from the same seed, rows in the order given.
pub fn sweep_gamma(gammas: &[f64], base: &TrainConfig, splits: SplitSet<'_>) -> Result<Vec<SweepRow>> {
    if gammas.is_empty() {
        return Err(Error::invalid("gammas", "need at least one value"));
    }
    gammas
        .iter()
        .map(|&gamma| {
            let config = TrainConfig {
                variant: LossVariant::lpf(gamma)?,
                ..base.clone()
            };
            let (id, ood) = train_and_evaluate(&config, splits)?;
            Ok(SweepRow { gamma, id, ood })
        })
        .collect()
}

/// Flattens sweep rows into report records (two per γ: id-test then ood-test).
pub fn sweep_records(rows: &[SweepRow], seed: u64) -> ReportSet {
    let mut records = Vec::with_capacity(rows.len() * 2);
    for row in rows {
        for (split, report) in [("id-test", &row.id), ("ood-test", &row.ood)] {
            records.push(RunRecord {
                label: format!("lpf-gamma-{}", row.gamma),
                variant: "lpf".into(),
                gamma: row.gamma,
                seed,
                split: split.into(),
                report: report.clone(),
            });
        }
    }
    ReportSet { records }
}
