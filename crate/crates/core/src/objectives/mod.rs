//! Training objectives: plain cross-entropy, the question-only loss, the
//! prior-feedback reweighted loss and its two alternative bias estimators.
//!
//! Every reweighted objective has the form
//! `-(1/B) Σ_i (1 − α_i)^γ · log softmax(logits_vqa[i])[a_i]`; the variants
//! differ only in where `α_i` comes from:
//!
//! | variant       | `α_i`                                           | `γ`          |
//! |---------------|-------------------------------------------------|--------------|
//! | `Ce`          | unused (weight 1)                               | –            |
//! | `Lpf`         | question-only branch probability of `a_i`       | configurable |
//! | `Focal`       | fused model's own probability of `a_i`          | 1            |
//! | `Precomputed` | training-set frequency of `a_i` in its qtype    | 1            |
//!
//! `α` is always a constant: no gradient flows through the weights.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthbench::Split;
use crate::tensorcore::{softmax_vec, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossVariant {
    Ce,
    Lpf { gamma: f64 },
    Focal,
    Precomputed,
}

impl LossVariant {
    pub fn lpf(gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::invalid("gamma", format!("must be finite and >= 0, got {gamma}")));
        }
        Ok(LossVariant::Lpf { gamma })
    }

    /// Exponent of the modulating factor. `Ce` reports 0 (weight 1).
    pub fn gamma(&self) -> f64 {
        match self {
            LossVariant::Ce => 0.0,
            LossVariant::Lpf { gamma } => *gamma,
            LossVariant::Focal | LossVariant::Precomputed => 1.0,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LossVariant::Ce => "ce",
            LossVariant::Lpf { .. } => "lpf",
            LossVariant::Focal => "focal",
            LossVariant::Precomputed => "precomputed",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let LossVariant::Lpf { gamma } = self {
            LossVariant::lpf(*gamma)?;
        }
        Ok(())
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossVariant::Lpf { gamma } => write!(f, "lpf(gamma={gamma})"),
            other => f.write_str(other.kind()),
        }
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    /// Parses `ce`, `focal`, `precomputed`, `lpf` (γ=1) or `lpf:<gamma>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(LossVariant::Ce),
            "focal" => Ok(LossVariant::Focal),
            "precomputed" => Ok(LossVariant::Precomputed),
            "lpf" => LossVariant::lpf(1.0),
            other => match other.strip_prefix("lpf:") {
                Some(g) => LossVariant::lpf(
                    g.parse()
                        .map_err(|_| Error::invalid("variant", format!("bad gamma in `{other}`")))?,
                ),
                None => Err(Error::invalid("variant", format!("unknown variant `{other}`"))),
            },
        }
    }
}

/// Per-question-type answer distributions: `row[qtype][answer]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorTable {
    rows: Vec<Vec<f64>>,
}

impl PriorTable {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || width == 0 {
            return Err(Error::invalid("prior", "empty table"));
        }
        for (k, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::invalid("prior", format!("row {k} has {} entries, expected {width}", row.len())));
            }
            if row.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                return Err(Error::invalid("prior", format!("row {k} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid("prior", format!("row {k} sums to {sum}")));
            }
        }
        Ok(Self { rows })
    }

    pub fn num_qtypes(&self) -> usize {
        self.rows.len()
    }

    pub fn num_answers(&self) -> usize {
        self.rows[0].len()
    }

    pub fn row(&self, qtype: usize) -> Option<&[f64]> {
        self.rows.get(qtype).map(Vec::as_slice)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Most probable answer of a question type; ties go to the lowest id.
    pub fn argmax(&self, qtype: usize) -> Option<usize> {
        let row = self.row(qtype)?;
        let mut best = 0;
        for (a, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = a;
            }
        }
        Some(best)
    }
}

/// Per-sample quantities and the three scalar losses of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLossRecord {
    pub ce: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub lpf: f64,
    pub qo: f64,
    pub total: f64,
}

/// Handles to the loss nodes on the tape.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub lpf: Var,
    pub qo: Var,
    pub total: Var,
}

fn check_targets(targets: &[usize], rows: usize, classes: usize) -> Result<()> {
    if targets.len() != rows {
        return Err(Error::shape("targets", format!("{} targets for {rows} rows", targets.len())));
    }
    match targets.iter().enumerate().find(|(_, &t)| t >= classes) {
        Some((index, &target)) => Err(Error::TargetOutOfRange { index, target, classes }),
        None => Ok(()),
    }
}

/// Probability each row of `logits` assigns to its target, as a constant.
pub fn target_probability(logits: &Tensor, targets: &[usize]) -> Result<Vec<f64>> {
    let (rows, classes) = logits.dims2()?;
    check_targets(targets, rows, classes)?;
    Ok((0..rows).map(|i| softmax_vec(logits.row(i))[targets[i]]).collect())
}

/// Bias factor from the question-only logits (detached).
pub fn alpha_from_qo(logits_qo: &Tensor, targets: &[usize]) -> Result<Vec<f64>> {
    target_probability(logits_qo, targets)
}

/// Modulating factor `(1 − α)^γ`.
pub fn beta(alpha: f64, gamma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid("alpha", format!("{alpha} not in [0, 1]")));
    }
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::invalid("gamma", format!("must be finite and >= 0, got {gamma}")));
    }
    Ok((1.0 - alpha).powf(gamma))
}

/// Per-sample weights `max((1 − α_i)^γ, min_weight)`.
pub fn sample_weights(alpha: &[f64], gamma: f64, min_weight: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&min_weight) {
        return Err(Error::invalid("min_weight", format!("{min_weight} not in [0, 1]")));
    }
    alpha
        .iter()
        .map(|&a| beta(a, gamma).map(|b| b.max(min_weight)))
        .collect()
}

/// Reweighted cross-entropy on the fused logits.
pub fn lpf_loss(tape: &mut Tape, logits_vqa: Var, targets: &[usize], alpha: &[f64], gamma: f64) -> Result<Var> {
    let weights = sample_weights(alpha, gamma, 0.0)?;
    tape.weighted_ce(logits_vqa, targets, &weights)
}

/// Unweighted cross-entropy on the question-only logits.
pub fn qo_loss(tape: &mut Tape, logits_qo: Var, targets: &[usize]) -> Result<Var> {
    tape.weighted_ce(logits_qo, targets, &vec![1.0; targets.len()])
}

pub fn total_loss(tape: &mut Tape, lpf: Var, qo: Var) -> Result<Var> {
    tape.add(lpf, qo)
}

/// Bias factor for the two alternative estimators.
pub fn variant_alpha(
    variant: LossVariant,
    logits_vqa: &Tensor,
    priors: Option<&PriorTable>,
    qtype_ids: &[usize],
    targets: &[usize],
) -> Result<Vec<f64>> {
    match variant {
        LossVariant::Focal => target_probability(logits_vqa, targets),
        LossVariant::Precomputed => {
            let priors = priors.ok_or_else(|| Error::invalid("priors", "precomputed variant needs a prior table"))?;
            if qtype_ids.len() != targets.len() {
                return Err(Error::shape("variant_alpha", "qtype ids and targets differ in length"));
            }
            qtype_ids
                .iter()
                .zip(targets)
                .map(|(&k, &a)| {
                    let row = priors
                        .row(k)
                        .ok_or_else(|| Error::invalid("priors", format!("no prior row for qtype {k}")))?;
                    row.get(a).copied().ok_or(Error::TargetOutOfRange {
                        index: k,
                        target: a,
                        classes: row.len(),
                    })
                })
                .collect()
        }
        other => Err(Error::invalid("variant", format!("{other} has no variant alpha"))),
    }
}

/// Inputs of the reshaped objective for one batch.
pub struct ObjectiveInputs<'a> {
    pub variant: LossVariant,
    pub logits_vqa: Var,
    pub logits_qo: Var,
    pub targets: &'a [usize],
    pub qtype_ids: &'a [usize],
    pub priors: Option<&'a PriorTable>,
    pub min_weight: f64,
}

/// Builds `L_total = L_LPF + L_QO` on the tape and records every intermediate.
///
/// For `Ce` the fused loss is unweighted; `alpha` still reports the
/// question-only probability and `beta` is all ones.
pub fn reshaped_objective(tape: &mut Tape, inp: ObjectiveInputs<'_>) -> Result<(LossVars, BatchLossRecord)> {
    inp.variant.validate()?;
    let qo_alpha = alpha_from_qo(tape.value(inp.logits_qo), inp.targets)?;
    let (alpha, weights) = match inp.variant {
        LossVariant::Ce => (qo_alpha, vec![1.0; inp.targets.len()]),
        LossVariant::Lpf { gamma } => {
            let w = sample_weights(&qo_alpha, gamma, inp.min_weight)?;
            (qo_alpha, w)
        }
        v @ (LossVariant::Focal | LossVariant::Precomputed) => {
            let a = variant_alpha(v, tape.value(inp.logits_vqa), inp.priors, inp.qtype_ids, inp.targets)?;
            let w = sample_weights(&a, v.gamma(), inp.min_weight)?;
            (a, w)
        }
    };
    let ce = target_probability(tape.value(inp.logits_vqa), inp.targets)?
        .into_iter()
        .map(|p| -p.ln())
        .collect();

    let lpf = tape.weighted_ce(inp.logits_vqa, inp.targets, &weights)?;
    let qo = qo_loss(tape, inp.logits_qo, inp.targets)?;
    let total = total_loss(tape, lpf, qo)?;
    let scalar = |v: Var| tape.value(v).data()[0];
    let record = BatchLossRecord {
        ce,
        alpha,
        beta: weights,
        lpf: scalar(lpf),
        qo: scalar(qo),
        total: scalar(total),
    };
    Ok((LossVars { lpf, qo, total }, record))
}

/// Empirical answer distribution per question type.
pub fn build_prior_table(split: &Split) -> Result<PriorTable> {
    if split.samples.is_empty() {
        return Err(Error::invalid("split", "cannot build a prior from an empty split"));
    }
    let (k, a) = (split.num_qtypes(), split.num_answers());
    let mut counts = vec![vec![0usize; a]; k];
    for (i, s) in split.samples.iter().enumerate() {
        if s.qtype_id >= k || s.answer_id >= a {
            return Err(Error::invalid("split", format!("sample {i} outside the {k}×{a} table")));
        }
        counts[s.qtype_id][s.answer_id] += 1;
    }
    let rows = counts
        .into_iter()
        .enumerate()
        .map(|(q, row)| {
            let total: usize = row.iter().sum();
            if total == 0 {
                return Err(Error::invalid("split", format!("question type {q} has no samples")));
            }
            Ok(row.into_iter().map(|c| c as f64 / total as f64).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    PriorTable::new(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorcore::ParamSet;

    fn logits(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    /// Two-class logits whose target (class 0) has cross-entropy `ce`.
    fn logits_with_ce(ce: f64) -> Vec<f64> {
        let p = (-ce).exp();
        vec![(p / (1.0 - p)).ln(), 0.0]
    }

    #[test]
    fn alpha_examples() {
        let a = alpha_from_qo(&logits(&[vec![0.0; 4]]), &[2]).unwrap();
        assert_eq!(a, vec![0.25]);
        let a = alpha_from_qo(&logits(&[vec![0.0, 20.0, 0.0, 0.0]]), &[1]).unwrap();
        assert!(a[0] > 0.999999);
        let a = alpha_from_qo(&logits(&[vec![1.0, 2.0, 3.0]]), &[2]).unwrap();
        let e = |x: f64| x.exp();
        let oracle = e(3.0) / (e(1.0) + e(2.0) + e(3.0));
        assert!((a[0] - oracle).abs() < 1e-15);
        assert!((a[0] - 0.66524).abs() < 1e-5);
        assert!(matches!(
            alpha_from_qo(&logits(&[vec![0.0; 3]]), &[3]),
            Err(Error::TargetOutOfRange { .. })
        ));
    }

    #[test]
    fn beta_examples() {
        assert_eq!(beta(1.0, 1.0).unwrap(), 0.0);
        for a in [0.0, 0.3, 1.0] {
            assert_eq!(beta(a, 0.0).unwrap(), 1.0);
        }
        assert!((beta(0.81, 1.0).unwrap() - 0.19).abs() < 1e-15);
        // The quoted before/after pair (rounded to 4 digits) pins β ≈ 5.426 / 28.56.
        assert!((5.426_f64 / 28.56 - 0.19).abs() < 1e-4);
        assert!(beta(-0.1, 1.0).is_err());
        assert!(beta(1.1, 1.0).is_err());
        assert!(beta(0.5, -1.0).is_err());
    }

    #[test]
    fn lpf_loss_reproduces_worked_example() {
        let mut tape = Tape::new();
        for (ce, alpha, expected) in [(0.2856, 0.81, 0.054264), (0.0916, 0.13, 0.079692)] {
            let z = tape.input(logits(&[logits_with_ce(ce)]));
            let l = lpf_loss(&mut tape, z, &[0], &[alpha], 1.0).unwrap();
            assert!((tape.value(l).data()[0] - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn gamma_zero_is_plain_ce_bitwise() {
        let z = logits(&[vec![0.3, -1.2, 2.0], vec![1.0, 0.5, -0.5], vec![-2.0, 0.0, 4.0]]);
        let targets = [0, 2, 1];
        let run = |gamma: Option<f64>| {
            let mut params = ParamSet::new();
            let mut tape = Tape::new();
            let zv = tape.tracked_input(z.clone());
            let l = match gamma {
                Some(g) => lpf_loss(&mut tape, zv, &targets, &[0.9, 0.2, 1.0], g).unwrap(),
                None => tape.weighted_ce(zv, &targets, &[1.0; 3]).unwrap(),
            };
            let grads = tape.backward(l, &mut params).unwrap();
            (tape.value(l).data()[0].to_bits(), grads.wrt(zv).unwrap().clone())
        };
        let (l0, g0) = run(Some(0.0));
        let (lce, gce) = run(None);
        assert_eq!(l0, lce);
        assert_eq!(g0, gce);
    }

    #[test]
    fn qo_and_total_examples() {
        let mut tape = Tape::new();
        let z = tape.input(logits(&[vec![0.0, 900.0]]));
        let l = qo_loss(&mut tape, z, &[1]).unwrap();
        assert_eq!(tape.value(l).data()[0], 0.0);
        let z = tape.input(logits(&[vec![0.0; 4]]));
        let l = qo_loss(&mut tape, z, &[3]).unwrap();
        assert!((tape.value(l).data()[0] - 4f64.ln()).abs() < 1e-15);

        let a = tape.input(Tensor::scalar(0.5));
        let b = tape.input(Tensor::scalar(0.3));
        let t = total_loss(&mut tape, a, b).unwrap();
        assert!((tape.value(t).data()[0] - 0.8).abs() < 1e-15);
        let zero = tape.input(Tensor::scalar(0.0));
        let t = total_loss(&mut tape, a, zero).unwrap();
        assert_eq!(tape.value(t).data()[0], 0.5);
    }

    #[test]
    fn variant_alpha_examples() {
        let prior = PriorTable::new(vec![vec![0.8, 0.15, 0.05]]).unwrap();
        let z = logits(&[vec![0.0; 3]]);
        let a = variant_alpha(LossVariant::Precomputed, &z, Some(&prior), &[0], &[0]).unwrap();
        assert_eq!(a, vec![0.8]);

        let z4 = logits(&[vec![0.0; 4]]);
        let a = variant_alpha(LossVariant::Focal, &z4, None, &[0], &[1]).unwrap();
        assert_eq!(a, vec![0.25]);

        let z2 = logits(&[vec![3.0, 0.0, -1.0]]);
        let f1 = variant_alpha(LossVariant::Focal, &z, None, &[0], &[0]).unwrap();
        let f2 = variant_alpha(LossVariant::Focal, &z2, None, &[0], &[0]).unwrap();
        assert_ne!(f1, f2);
        let p1 = variant_alpha(LossVariant::Precomputed, &z, Some(&prior), &[0], &[0]).unwrap();
        let p2 = variant_alpha(LossVariant::Precomputed, &z2, Some(&prior), &[0], &[0]).unwrap();
        assert_eq!(p1, p2);

        assert!(variant_alpha(LossVariant::Precomputed, &z, None, &[0], &[0]).is_err());
        assert!(variant_alpha(LossVariant::Precomputed, &z, Some(&prior), &[1], &[0]).is_err());
        assert!(variant_alpha(LossVariant::Ce, &z, None, &[0], &[0]).is_err());
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("ce".parse::<LossVariant>().unwrap(), LossVariant::Ce);
        assert_eq!("lpf:5".parse::<LossVariant>().unwrap(), LossVariant::Lpf { gamma: 5.0 });
        assert_eq!(LossVariant::Focal.gamma(), 1.0);
        assert_eq!(LossVariant::Precomputed.gamma(), 1.0);
        assert!("lpf:-1".parse::<LossVariant>().is_err());
        assert!("rubi".parse::<LossVariant>().is_err());
    }

    #[test]
    fn prior_table_validation() {
        assert!(PriorTable::new(vec![vec![0.5, 0.5]]).is_ok());
        assert!(PriorTable::new(vec![vec![0.5, 0.4]]).is_err());
        assert!(PriorTable::new(vec![vec![1.5, -0.5]]).is_err());
        assert!(PriorTable::new(vec![vec![0.5, 0.5], vec![1.0]]).is_err());
        let t = PriorTable::new(vec![vec![0.2, 0.4, 0.4]]).unwrap();
        assert_eq!(t.argmax(0), Some(1));
    }
}
