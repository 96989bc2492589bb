use serde::{Deserialize, Serialize};

use super::train::argmax;
use crate::error::{Error, Result};
use crate::model::VqaModel;
use crate::objectives::PriorTable;
use crate::synthbench::{empirical_prior, Split};
use crate::tensorcore::Tensor;

const EVAL_BATCH: usize = 512;
const KL_SMOOTHING: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QtypeReport {
    pub qtype: usize,
    pub count: usize,
    pub accuracy: f64,
    /// Fraction of this qtype's samples predicted as each answer id.
    pub predicted: Vec<f64>,
    /// KL(predicted ‖ answer distribution of the evaluated split)
    pub kl_to_split: f64,
    /// KL(predicted ‖ training prior), when a training prior was supplied.
    pub kl_to_train: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_samples: usize,
    pub overall_accuracy: f64,
    pub per_qtype: Vec<QtypeReport>,
    /// Mean over qtypes present in the split.
    pub mean_kl_to_split: f64,
    pub mean_kl_to_train: Option<f64>,
}

/// `Σ p_i ln(p_i / q̃_i)` where `q̃ = (q + ε) / (1 + nε)`, `ε = 1e-9`, and `0 ln 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape("kl_divergence", format!("{} vs {}", p.len(), q.len())));
    }
    let norm = 1.0 + q.len() as f64 * KL_SMOOTHING;
    Ok(p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / ((qi + KL_SMOOTHING) / norm)).ln())
        .sum())
}

/// Fused-path predictions for every sample, in split order.
pub fn predict_split(model: &VqaModel, split: &Split) -> Result<Vec<usize>> {
    model.config.check_split(split)?;
    let mut predictions = Vec::with_capacity(split.len());
    for chunk in split.samples.chunks(EVAL_BATCH) {
        let tokens: Vec<Vec<usize>> = chunk.iter().map(|s| s.question_tokens.clone()).collect();
        let features: Vec<f64> = chunk.iter().flat_map(|s| s.visual_feature.iter().copied()).collect();
        let logits = model.predict(&tokens, Tensor::new(vec![chunk.len(), split.v_in_dim], features)?)?;
        predictions.extend((0..chunk.len()).map(|i| argmax(logits.row(i))));
    }
    Ok(predictions)
}

/// Top-1 accuracy and answer-distribution diagnostics of the fused path.
pub fn evaluate(model: &VqaModel, split: &Split, train_prior: Option<&PriorTable>) -> Result<EvalReport> {
    if split.is_empty() {
        return Err(Error::invalid("split", "cannot evaluate on an empty split"));
    }
    let predictions = predict_split(model, split)?;
    report_from_predictions(split, &predictions, train_prior)
}

/// Builds a report from precomputed predictions (one per sample).
pub fn report_from_predictions(
    split: &Split,
    predictions: &[usize],
    train_prior: Option<&PriorTable>,
) -> Result<EvalReport> {
    if predictions.len() != split.len() || split.is_empty() {
        return Err(Error::shape("report", "one prediction per sample required"));
    }
    let (k, a) = (split.num_qtypes(), split.num_answers());
    if let Some(tp) = train_prior {
        if tp.num_qtypes() != k || tp.num_answers() != a {
            return Err(Error::ConfigMismatch("training prior shape differs from split".into()));
        }
    }
    let mut counts = vec![0usize; k];
    let mut correct = vec![0usize; k];
    let mut predicted = vec![vec![0usize; a]; k];
    for (s, &p) in split.samples.iter().zip(predictions) {
        counts[s.qtype_id] += 1;
        correct[s.qtype_id] += usize::from(p == s.answer_id);
        predicted[s.qtype_id][p] += 1;
    }

    let truth = split_distribution(split)?;
    let mut per_qtype = Vec::new();
    for q in (0..k).filter(|&q| counts[q] > 0) {
        let n = counts[q] as f64;
        let dist: Vec<f64> = predicted[q].iter().map(|&c| c as f64 / n).collect();
        per_qtype.push(QtypeReport {
            qtype: q,
            count: counts[q],
            accuracy: correct[q] as f64 / n,
            kl_to_split: kl_divergence(&dist, &truth[q])?,
            kl_to_train: train_prior
                .map(|tp| kl_divergence(&dist, &tp.rows()[q]))
                .transpose()?,
            predicted: dist,
        });
    }
    let present = per_qtype.len() as f64;
    let mean_kl_to_train = train_prior.map(|_| per_qtype.iter().filter_map(|r| r.kl_to_train).sum::<f64>() / present);
    Ok(EvalReport {
        num_samples: split.len(),
        overall_accuracy: correct.iter().sum::<usize>() as f64 / split.len() as f64,
        mean_kl_to_split: per_qtype.iter().map(|r| r.kl_to_split).sum::<f64>() / present,
        mean_kl_to_train,
        per_qtype,
    })
}

/// Empirical answer distribution per qtype; rows of absent qtypes are left at zero.
fn split_distribution(split: &Split) -> Result<Vec<Vec<f64>>> {
    match empirical_prior(split) {
        Ok(table) => Ok(table.rows().to_vec()),
        Err(_) => {
            let (k, a) = (split.num_qtypes(), split.num_answers());
            let mut counts = vec![vec![0usize; a]; k];
            for s in &split.samples {
                counts[s.qtype_id][s.answer_id] += 1;
            }
            Ok(counts
                .into_iter()
                .map(|row| {
                    let n = row.iter().sum::<usize>().max(1) as f64;
                    row.into_iter().map(|c| c as f64 / n).collect()
                })
                .collect())
        }
    }
}
