//! Synthetic changing-priors benchmark.
//!
//! Each question type owns a disjoint block of `m` answers. Training answers
//! follow a Zipf law over a seeded ranking of the block; the out-of-distribution
//! test split assigns the same probabilities in reversed rank order. Visual
//! features are noisy copies of one unit prototype per (qtype, answer) cell,
//! so every question is answerable from the feature alone, while the question
//! tokens reveal only the question type.

mod io;
pub mod rng;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::objectives::{build_prior_table, PriorTable};
use rng::{derive_seed, Mt64};

pub use io::{decode_split, encode_split, read_split, write_split, FORMAT_VERSION};

const STREAM_PRIORS: u64 = 1;
const STREAM_PROTOTYPES: u64 = 2;
const STREAM_TRAIN: u64 = 3;
const STREAM_ID_TEST: u64 = 4;
const STREAM_OOD_TEST: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub num_qtypes: usize,
    pub answers_per_qtype: usize,
    pub tokens_per_question: usize,
    pub v_in_dim: usize,
    pub prototype_scale: f64,
    pub noise_std: f64,
    pub zipf_s: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            num_qtypes: 8,
            answers_per_qtype: 5,
            tokens_per_question: 4,
            v_in_dim: 16,
            prototype_scale: 1.0,
            noise_std: 0.1,
            zipf_s: 1.5,
            n_train: 8000,
            n_test: 4000,
            seed: 0,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        let cells = self.num_answers();
        let checks: [(bool, &'static str, String); 8] = [
            (self.num_qtypes >= 1, "num_qtypes", "must be >= 1".into()),
            (self.answers_per_qtype >= 2, "answers_per_qtype", "must be >= 2".into()),
            (self.tokens_per_question >= 2, "tokens_per_question", "must be >= 2".into()),
            (self.v_in_dim >= 1, "v_in_dim", "must be >= 1".into()),
            (self.zipf_s > 0.0 && self.zipf_s.is_finite(), "zipf_s", "must be > 0".into()),
            (
                self.noise_std >= 0.0 && self.noise_std < self.prototype_scale / 4.0,
                "noise_std",
                format!("must lie in [0, prototype_scale/4) = [0, {})", self.prototype_scale / 4.0),
            ),
            (self.n_train >= cells, "n_train", format!("must be >= {cells} (one per cell)")),
            (self.n_test >= cells, "n_test", format!("must be >= {cells} (one per cell)")),
        ];
        match checks.into_iter().find(|(ok, _, _)| !ok) {
            Some((_, arg, reason)) => Err(Error::invalid(arg, reason)),
            None => Ok(()),
        }
    }

    pub fn num_answers(&self) -> usize {
        self.num_qtypes * self.answers_per_qtype
    }

    /// Token 0 is shared by every template; the rest are type-specific.
    pub fn vocab_size(&self) -> usize {
        1 + self.num_qtypes * (self.tokens_per_question - 1)
    }

    pub fn question_tokens(&self, qtype: usize) -> Vec<usize> {
        let per = self.tokens_per_question - 1;
        std::iter::once(0).chain((0..per).map(|j| 1 + qtype * per + j)).collect()
    }

    /// Answer ids owned by a question type.
    pub fn answer_block(&self, qtype: usize) -> std::ops::Range<usize> {
        qtype * self.answers_per_qtype..(qtype + 1) * self.answers_per_qtype
    }

    /// Short hex digest of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitRole {
    Train,
    IdTest,
    OodTest,
}

impl SplitRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            SplitRole::Train => "train",
            SplitRole::IdTest => "id-test",
            SplitRole::OodTest => "ood-test",
        }
    }

    fn stream(&self) -> u64 {
        match self {
            SplitRole::Train => STREAM_TRAIN,
            SplitRole::IdTest => STREAM_ID_TEST,
            SplitRole::OodTest => STREAM_OOD_TEST,
        }
    }
}

impl fmt::Display for SplitRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitRole::Train),
            "id-test" => Ok(SplitRole::IdTest),
            "ood-test" => Ok(SplitRole::OodTest),
            other => Err(Error::invalid("role", format!("unknown split role `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub qtype_id: usize,
    pub question_tokens: Vec<usize>,
    pub visual_feature: Vec<f64>,
    pub answer_id: usize,
}

/// A sequence of samples with the stratified answer table it realizes.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub samples: Vec<Sample>,
    /// Per-qtype answer frequencies realized by the stratified counts.
    pub prior: PriorTable,
    pub role: SplitRole,
    pub fingerprint: String,
    pub vocab_size: usize,
    pub v_in_dim: usize,
}

impl Split {
    pub fn num_qtypes(&self) -> usize {
        self.prior.num_qtypes()
    }

    pub fn num_answers(&self) -> usize {
        self.prior.num_answers()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Train and OOD-test answer tables for a configuration.
pub fn build_priors(config: &BenchmarkConfig) -> Result<(PriorTable, PriorTable)> {
    config.validate()?;
    let m = config.answers_per_qtype;
    let weights: Vec<f64> = (1..=m).map(|r| (r as f64).powf(-config.zipf_s)).collect();
    let norm: f64 = weights.iter().sum();
    let zipf: Vec<f64> = weights.iter().map(|w| w / norm).collect();

    let mut rng = Mt64::new(derive_seed(config.seed, STREAM_PRIORS));
    let mut train = Vec::with_capacity(config.num_qtypes);
    let mut test = Vec::with_capacity(config.num_qtypes);
    for k in 0..config.num_qtypes {
        let mut ranking: Vec<usize> = config.answer_block(k).collect();
        rng.shuffle(&mut ranking);
        let mut train_row = vec![0.0; config.num_answers()];
        let mut test_row = vec![0.0; config.num_answers()];
        for (rank, &answer) in ranking.iter().enumerate() {
            train_row[answer] = zipf[rank];
            test_row[answer] = zipf[m - 1 - rank];
        }
        train.push(train_row);
        test.push(test_row);
    }
    Ok((PriorTable::new(train)?, PriorTable::new(test)?))
}

/// One seeded unit vector per (qtype, answer) cell, indexed by answer id.
pub fn prototypes(config: &BenchmarkConfig) -> Vec<Vec<f64>> {
    let mut rng = Mt64::new(derive_seed(config.seed, STREAM_PROTOTYPES));
    (0..config.num_answers())
        .map(|_| {
            let v: Vec<f64> = (0..config.v_in_dim).map(|_| rng.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// Largest-remainder apportionment of `n` over `probs`; ties go to the lowest index.
pub fn stratified_counts(probs: &[f64], n: usize) -> Vec<usize> {
    let exact: Vec<f64> = probs.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Samples per question type: `⌊n/K⌋`, remainder to the lowest ids.
pub fn qtype_counts(n: usize, num_qtypes: usize) -> Vec<usize> {
    (0..num_qtypes)
        .map(|k| n / num_qtypes + usize::from(k < n % num_qtypes))
        .collect()
}

pub fn generate_split(priors: &PriorTable, n: usize, role: SplitRole, config: &BenchmarkConfig) -> Result<Split> {
    config.validate()?;
    if priors.num_qtypes() != config.num_qtypes || priors.num_answers() != config.num_answers() {
        return Err(Error::ConfigMismatch(format!(
            "prior table is {}×{}, config implies {}×{}",
            priors.num_qtypes(),
            priors.num_answers(),
            config.num_qtypes,
            config.num_answers()
        )));
    }
    let cells = config.num_answers();
    if n < cells {
        return Err(Error::invalid("n", format!("{n} samples cannot cover {cells} cells")));
    }

    let protos = prototypes(config);
    let mut rng = Mt64::new(derive_seed(config.seed, role.stream()));
    let mut samples = Vec::with_capacity(n);
    for (k, &n_k) in qtype_counts(n, config.num_qtypes).iter().enumerate() {
        let tokens = config.question_tokens(k);
        let row = priors.row(k).expect("validated shape");
        for (answer, &count) in stratified_counts(row, n_k).iter().enumerate() {
            for _ in 0..count {
                let visual_feature = protos[answer]
                    .iter()
                    .map(|&p| p * config.prototype_scale + rng.normal() * config.noise_std)
                    .collect();
                samples.push(Sample {
                    qtype_id: k,
                    question_tokens: tokens.clone(),
                    visual_feature,
                    answer_id: answer,
                });
            }
        }
    }
    rng.shuffle(&mut samples);

    let mut split = Split {
        samples,
        prior: priors.clone(),
        role,
        fingerprint: config.fingerprint(),
        vocab_size: config.vocab_size(),
        v_in_dim: config.v_in_dim,
    };
    split.prior = build_prior_table(&split)?;
    Ok(split)
}

/// The three splits of one benchmark instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub config: BenchmarkConfig,
    pub train_prior: PriorTable,
    pub test_prior: PriorTable,
    pub train: Split,
    /// Drawn from the training priors with fresh noise.
    pub id_test: Split,
    /// Drawn from the rank-inverted priors.
    pub ood_test: Split,
}

pub fn generate_benchmark(config: &BenchmarkConfig) -> Result<Benchmark> {
    let (train_prior, test_prior) = build_priors(config)?;
    Ok(Benchmark {
        train: generate_split(&train_prior, config.n_train, SplitRole::Train, config)?,
        id_test: generate_split(&train_prior, config.n_test, SplitRole::IdTest, config)?,
        ood_test: generate_split(&test_prior, config.n_test, SplitRole::OodTest, config)?,
        config: config.clone(),
        train_prior,
        test_prior,
    })
}

pub fn empirical_prior(split: &Split) -> Result<PriorTable> {
    build_prior_table(split)
}

/// Accuracy of the best question-only predictor fit to `train`, evaluated
/// under `test`: mean over qtypes of `test[k][argmax train[k]]`.
pub fn question_only_trap_accuracy(train: &PriorTable, test: &PriorTable) -> Result<f64> {
    if train.num_qtypes() != test.num_qtypes() || train.num_answers() != test.num_answers() {
        return Err(Error::shape("trap_accuracy", "prior tables differ in shape"));
    }
    let k = train.num_qtypes();
    let total: f64 = (0..k)
        .map(|q| test.rows()[q][train.argmax(q).expect("row exists")])
        .sum();
    Ok(total / k as f64)
}

/// Bayes-optimal question-only accuracy on data drawn from `prior`.
pub fn question_only_ceiling(prior: &PriorTable) -> f64 {
    prior.rows().iter().map(|r| r.iter().copied().fold(0.0, f64::max)).sum::<f64>() / prior.num_qtypes() as f64
}
