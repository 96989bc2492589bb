//! Two-branch classifier.
//!
//! ```text
//! tokens ──embed+mean──affine──► q ─┬─────────────────────────┐
//!                                   │                     stop-grad
//! feature ──affine──relu──► v       │                         │
//!        project(v) ⊙ project(q) ──affine──relu──affine──► logits_vqa
//!                                           q̄ ──3-layer MLP──► logits_qo
//! ```
//!
//! The question-only branch reads a detached copy of `q`, so its loss never
//! reaches the shared encoders.

mod checkpoint;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthbench::rng::Mt64;
use crate::synthbench::{BenchmarkConfig, Split};
use crate::tensorcore::{ParamId, ParamSet, Tape, Tensor, Var};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub q_dim: usize,
    pub v_in_dim: usize,
    pub v_dim: usize,
    pub joint_dim: usize,
    pub hidden_dim: usize,
    pub num_answers: usize,
    pub qo_hidden_dim: usize,
    /// Token embeddings are drawn uniform in `±embed_init`.
    pub embed_init: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 25,
            embed_dim: 8,
            q_dim: 16,
            v_in_dim: 16,
            v_dim: 16,
            joint_dim: 16,
            hidden_dim: 16,
            num_answers: 40,
            qo_hidden_dim: 64,
            embed_init: 4.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Default layer sizes with the data-dependent dimensions taken from a benchmark.
    pub fn for_benchmark(bench: &BenchmarkConfig, seed: u64) -> Self {
        Self {
            vocab_size: bench.vocab_size(),
            v_in_dim: bench.v_in_dim,
            num_answers: bench.num_answers(),
            seed,
            ..Self::default()
        }
    }

    /// Overrides the data-dependent dimensions from a split.
    pub fn fit_to(mut self, split: &Split) -> Self {
        self.vocab_size = split.vocab_size;
        self.v_in_dim = split.v_in_dim;
        self.num_answers = split.num_answers();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("q_dim", self.q_dim),
            ("v_in_dim", self.v_in_dim),
            ("v_dim", self.v_dim),
            ("joint_dim", self.joint_dim),
            ("hidden_dim", self.hidden_dim),
            ("qo_hidden_dim", self.qo_hidden_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, d)| *d == 0) {
            return Err(Error::invalid(name, "dimension must be positive"));
        }
        if self.num_answers < 2 {
            return Err(Error::invalid("num_answers", "need at least 2 answers"));
        }
        if !(self.embed_init > 0.0 && self.embed_init.is_finite()) {
            return Err(Error::invalid("embed_init", "must be positive and finite"));
        }
        Ok(())
    }

    /// Checks that a split can be fed to a model of this shape.
    pub fn check_split(&self, split: &Split) -> Result<()> {
        let mismatch = |what: &str, model: usize, data: usize| {
            Err(Error::ConfigMismatch(format!("{what}: model has {model}, split has {data}")))
        };
        if split.num_answers() != self.num_answers {
            return mismatch("num_answers", self.num_answers, split.num_answers());
        }
        if split.v_in_dim != self.v_in_dim {
            return mismatch("v_in_dim", self.v_in_dim, split.v_in_dim);
        }
        if split.vocab_size > self.vocab_size {
            return mismatch("vocab_size", self.vocab_size, split.vocab_size);
        }
        Ok(())
    }
}

/// Which part of the network a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    TokenEmbeddings,
    QuestionEncoder,
    VisualEncoder,
    Fusion,
    QuestionOnly,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::TokenEmbeddings,
        ParamGroup::QuestionEncoder,
        ParamGroup::VisualEncoder,
        ParamGroup::Fusion,
        ParamGroup::QuestionOnly,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Affine {
    weight: ParamId,
    bias: Option<ParamId>,
}

impl Affine {
    fn apply(&self, params: &ParamSet, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(params, self.weight);
        let b = self.bias.map(|b| tape.param(params, b));
        tape.linear(x, w, b)
    }
}

/// Parameter ids of every layer; the forward pass reads values from any
/// `ParamSet` with this layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelLayout {
    embeddings: ParamId,
    q_encoder: Affine,
    v_encoder: Affine,
    v_proj: Affine,
    q_proj: Affine,
    fusion_hidden: Affine,
    fusion_out: Affine,
    qo: [Affine; 3],
}

/// Activations of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub q: Var,
    pub v_emb: Var,
    pub logits_vqa: Var,
    pub logits_qo: Var,
}

impl ModelLayout {
    /// Registers parameters in a fixed order, drawing initial weights from `rng`.
    fn build(config: &ModelConfig, params: &mut ParamSet, rng: &mut Mt64) -> Self {
        fn uniform(params: &mut ParamSet, rng: &mut Mt64, name: &str, shape: [usize; 2], bound: f64) -> ParamId {
            let data = (0..shape[0] * shape[1]).map(|_| rng.uniform(-bound, bound)).collect();
            params.add(name, Tensor::new(shape.to_vec(), data).expect("positive dims"))
        }
        let embeddings = uniform(params, rng, "token_embeddings", [config.vocab_size, config.embed_dim], config.embed_init);

        let mut layers = Vec::new();
        let specs: [(&str, usize, usize, bool); 9] = [
            ("q_encoder", config.embed_dim, config.q_dim, true),
            ("v_encoder", config.v_in_dim, config.v_dim, true),
            ("fusion.v_proj", config.v_dim, config.joint_dim, false),
            ("fusion.q_proj", config.q_dim, config.joint_dim, false),
            ("fusion.hidden", config.joint_dim, config.hidden_dim, true),
            ("fusion.out", config.hidden_dim, config.num_answers, true),
            ("qo.layer1", config.q_dim, config.qo_hidden_dim, true),
            ("qo.layer2", config.qo_hidden_dim, config.qo_hidden_dim, true),
            ("qo.layer3", config.qo_hidden_dim, config.num_answers, true),
        ];
        for (name, fan_in, fan_out, has_bias) in specs {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weight = uniform(params, rng, &format!("{name}.weight"), [fan_in, fan_out], bound);
            let bias = has_bias.then(|| params.add(format!("{name}.bias"), Tensor::zeros(&[fan_out])));
            layers.push(Affine { weight, bias });
        }
        Self {
            embeddings,
            q_encoder: layers[0],
            v_encoder: layers[1],
            v_proj: layers[2],
            q_proj: layers[3],
            fusion_hidden: layers[4],
            fusion_out: layers[5],
            qo: [layers[6], layers[7], layers[8]],
        }
    }

    pub fn group_of(&self, id: ParamId) -> ParamGroup {
        let in_layer = |a: &Affine| a.weight == id || a.bias == Some(id);
        if id == self.embeddings {
            ParamGroup::TokenEmbeddings
        } else if in_layer(&self.q_encoder) {
            ParamGroup::QuestionEncoder
        } else if in_layer(&self.v_encoder) {
            ParamGroup::VisualEncoder
        } else if self.qo.iter().any(in_layer) {
            ParamGroup::QuestionOnly
        } else {
            ParamGroup::Fusion
        }
    }

    /// `q = affine(mean_t embedding[token_t])`, one row per question.
    pub fn encode_question(&self, params: &ParamSet, tape: &mut Tape, tokens: &[Vec<usize>]) -> Result<Var> {
        let table = tape.param(params, self.embeddings);
        let pooled = tape.embed_mean(table, tokens)?;
        self.q_encoder.apply(params, tape, pooled)
    }

    /// `v = relu(affine(feature))`, one row per image.
    pub fn encode_visual(&self, params: &ParamSet, tape: &mut Tape, features: Var) -> Result<Var> {
        let h = self.v_encoder.apply(params, tape, features)?;
        Ok(tape.relu(h))
    }

    /// `affine₂(relu(affine₁(project(v) ⊙ project(q))))`.
    pub fn predict_vqa(&self, params: &ParamSet, tape: &mut Tape, v_emb: Var, q: Var) -> Result<Var> {
        let pv = self.v_proj.apply(params, tape, v_emb)?;
        let pq = self.q_proj.apply(params, tape, q)?;
        let joint = tape.mul(pv, pq)?;
        let h = self.fusion_hidden.apply(params, tape, joint)?;
        let h = tape.relu(h);
        self.fusion_out.apply(params, tape, h)
    }

    /// Three-layer MLP over a stop-gradient copy of `q`.
    pub fn predict_qo(&self, params: &ParamSet, tape: &mut Tape, q: Var) -> Result<Var> {
        let mut h = tape.detach(q);
        for (i, layer) in self.qo.iter().enumerate() {
            h = layer.apply(params, tape, h)?;
            if i + 1 < self.qo.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    pub fn forward(
        &self,
        params: &ParamSet,
        tape: &mut Tape,
        tokens: &[Vec<usize>],
        features: Tensor,
    ) -> Result<ForwardVars> {
        let q = self.encode_question(params, tape, tokens)?;
        let fv = tape.input(features);
        let v_emb = self.encode_visual(params, tape, fv)?;
        let logits_vqa = self.predict_vqa(params, tape, v_emb, q)?;
        let logits_qo = self.predict_qo(params, tape, q)?;
        Ok(ForwardVars {
            q,
            v_emb,
            logits_vqa,
            logits_qo,
        })
    }
}

/// Model configuration, parameter values and the layer layout.
#[derive(Debug, Clone, PartialEq)]
pub struct VqaModel {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub layout: ModelLayout,
}

impl VqaModel {
    /// Seeded initialization: weights uniform in `±1/√fan_in`, biases zero,
    /// embeddings uniform in `±embed_init`.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut rng = Mt64::new(config.seed);
        let layout = ModelLayout::build(&config, &mut params, &mut rng);
        Ok(Self { config, params, layout })
    }

    pub fn group_of(&self, id: ParamId) -> ParamGroup {
        self.layout.group_of(id)
    }

    pub fn ids_in(&self, group: ParamGroup) -> Vec<ParamId> {
        self.params.ids().filter(|&id| self.group_of(id) == group).collect()
    }

    pub fn forward(&self, tape: &mut Tape, tokens: &[Vec<usize>], features: Tensor) -> Result<ForwardVars> {
        self.layout.forward(&self.params, tape, tokens, features)
    }

    /// Fused-path logits only; the question-only branch is not evaluated.
    pub fn predict(&self, tokens: &[Vec<usize>], features: Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let q = self.layout.encode_question(&self.params, &mut tape, tokens)?;
        let fv = tape.input(features);
        let v = self.layout.encode_visual(&self.params, &mut tape, fv)?;
        let logits = self.layout.predict_vqa(&self.params, &mut tape, v, q)?;
        Ok(tape.value(logits).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::qo_loss;
    use crate::tensorcore::{grad_check_params, softmax};

    fn toy() -> ModelConfig {
        ModelConfig {
            vocab_size: 5,
            embed_dim: 3,
            q_dim: 4,
            v_in_dim: 3,
            v_dim: 4,
            joint_dim: 4,
            hidden_dim: 5,
            num_answers: 4,
            qo_hidden_dim: 4,
            embed_init: 1.0,
            seed: 11,
        }
    }

    fn features(rows: usize, dim: usize, seed: u64) -> Tensor {
        let mut rng = Mt64::new(seed);
        Tensor::new(vec![rows, dim], (0..rows * dim).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = VqaModel::init(toy()).unwrap();
        let b = VqaModel::init(toy()).unwrap();
        assert_eq!(a.params, b.params);
        let c = VqaModel::init(ModelConfig { seed: 12, ..toy() }).unwrap();
        assert!(a.params.max_abs_value_diff(&c.params) > 0.0);

        // fan_in = 4 for the hidden layer of q_dim=4 inputs.
        let w = a.params.by_name("qo.layer1.weight").unwrap();
        assert!(w.value.data().iter().all(|v| v.abs() <= 0.5));
        for p in a.params.iter() {
            assert!(p.value.is_finite());
            if p.name.ends_with(".bias") {
                assert!(p.value.data().iter().all(|&v| v == 0.0));
            }
        }
        assert!(VqaModel::init(ModelConfig { q_dim: 0, ..toy() }).is_err());
        assert!(VqaModel::init(ModelConfig { num_answers: 1, ..toy() }).is_err());
    }

    #[test]
    fn single_token_question_is_affine_of_embedding() {
        let m = VqaModel::init(toy()).unwrap();
        let mut tape = Tape::new();
        let q = m.layout.encode_question(&m.params, &mut tape, &[vec![2]]).unwrap();
        let emb = m.params.by_name("token_embeddings").unwrap().value.row(2).to_vec();
        let w = &m.params.by_name("q_encoder.weight").unwrap().value;
        let b = m.params.by_name("q_encoder.bias").unwrap().value.data();
        for j in 0..4 {
            let want: f64 = (0..3).map(|d| emb[d] * w.data()[d * 4 + j]).sum::<f64>() + b[j];
            assert!((tape.value(q).data()[j] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn question_encoding_is_order_invariant() {
        let m = VqaModel::init(toy()).unwrap();
        let mut tape = Tape::new();
        let a = m.layout.encode_question(&m.params, &mut tape, &[vec![0, 1, 4]]).unwrap();
        let b = m.layout.encode_question(&m.params, &mut tape, &[vec![4, 0, 1]]).unwrap();
        assert!(tape.value(a).max_abs_diff(tape.value(b)) < 1e-15);
        assert!(m.layout.encode_question(&m.params, &mut tape, &[vec![]]).is_err());
        assert!(m.layout.encode_question(&m.params, &mut tape, &[vec![5]]).is_err());
    }

    #[test]
    fn visual_encoder_cases() {
        let mut m = VqaModel::init(ModelConfig { v_in_dim: 4, ..toy() }).unwrap();
        let mut tape = Tape::new();
        let zero = tape.input(Tensor::zeros(&[1, 4]));
        let v = m.layout.encode_visual(&m.params, &mut tape, zero).unwrap();
        assert!(tape.value(v).data().iter().all(|&x| x == 0.0));

        let id = m.params.id_of("v_encoder.weight").unwrap();
        let eye: Vec<f64> = (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect();
        m.params.get_mut(id).value = Tensor::new(vec![4, 4], eye).unwrap();
        let x = tape.input(Tensor::from_rows(&[vec![0.5, 0.0, 2.0, 1.0]]).unwrap());
        let v = m.layout.encode_visual(&m.params, &mut tape, x).unwrap();
        assert_eq!(tape.value(v).data(), &[0.5, 0.0, 2.0, 1.0]);

        let bad = tape.input(Tensor::zeros(&[1, 3]));
        assert!(m.layout.encode_visual(&m.params, &mut tape, bad).is_err());
    }

    #[test]
    fn zero_question_leaves_only_output_bias() {
        let mut m = VqaModel::init(toy()).unwrap();
        let out_b = m.params.id_of("fusion.out.bias").unwrap();
        m.params.get_mut(out_b).value = Tensor::vector(vec![0.1, -0.2, 0.3, 0.0]).unwrap();
        let mut tape = Tape::new();
        let q = tape.input(Tensor::zeros(&[1, 4]));
        let x = tape.input(features(1, 3, 1));
        let v = m.layout.encode_visual(&m.params, &mut tape, x).unwrap();
        let logits = m.layout.predict_vqa(&m.params, &mut tape, v, q).unwrap();
        assert_eq!(tape.value(logits).data(), &[0.1, -0.2, 0.3, 0.0]);
    }

    #[test]
    fn zero_weights_give_uniform_predictions() {
        let mut m = VqaModel::init(toy()).unwrap();
        for p in m.params.iter_mut() {
            p.value.fill(0.0);
        }
        let mut tape = Tape::new();
        let f = m.forward(&mut tape, &[vec![1, 2]], features(1, 3, 2)).unwrap();
        for logits in [f.logits_vqa, f.logits_qo] {
            let p = softmax(tape.value(logits)).unwrap();
            assert!(p.data().iter().all(|&x| x == 0.25));
        }
    }

    #[test]
    fn tiny_fusion_matches_hand_computation() {
        let cfg = ModelConfig {
            vocab_size: 1,
            embed_dim: 2,
            q_dim: 2,
            v_in_dim: 2,
            v_dim: 2,
            joint_dim: 2,
            hidden_dim: 2,
            num_answers: 2,
            qo_hidden_dim: 2,
            embed_init: 1.0,
            seed: 0,
        };
        let mut m = VqaModel::init(cfg).unwrap();
        let mut set = |name: &str, data: Vec<f64>| {
            let id = m.params.id_of(name).unwrap();
            let shape = m.params.get(id).value.shape().to_vec();
            m.params.get_mut(id).value = Tensor::new(shape, data).unwrap();
        };
        set("fusion.v_proj.weight", vec![1.0, 0.5, 0.0, 1.0]);
        set("fusion.q_proj.weight", vec![2.0, 0.0, 1.0, -1.0]);
        set("fusion.hidden.weight", vec![1.0, -1.0, 1.0, 1.0]);
        set("fusion.hidden.bias", vec![0.0, 0.1]);
        set("fusion.out.weight", vec![1.0, 0.0, -1.0, 2.0]);
        set("fusion.out.bias", vec![0.5, 0.0]);

        let mut tape = Tape::new();
        let v = tape.input(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let q = tape.input(Tensor::from_rows(&[vec![0.5, 1.0]]).unwrap());
        let logits = m.layout.predict_vqa(&m.params, &mut tape, v, q).unwrap();
        // pv = [1, 2.5]; pq = [2, -1]; joint = [2, -2.5]
        // h = relu([2 - 2.5, -2 - 2.5 + 0.1]) = [0, 0]
        // logits = [0.5, 0]
        assert_eq!(tape.value(logits).data(), &[0.5, 0.0]);

        let q = tape.input(Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap());
        let logits = m.layout.predict_vqa(&m.params, &mut tape, v, q).unwrap();
        // pq = [2, 0]; joint = [2, 0]; h = relu([2, -2 + 0.1]) = [2, 0]
        // logits = [2 + 0.5, 0] = [2.5, 0]
        assert_eq!(tape.value(logits).data(), &[2.5, 0.0]);
    }

    #[test]
    fn question_only_gradient_stops_at_the_barrier() {
        let mut m = VqaModel::init(toy()).unwrap();
        let mut tape = Tape::new();
        let tokens = vec![vec![0, 1], vec![2, 3], vec![4, 0]];
        let f = m.forward(&mut tape, &tokens, features(3, 3, 3)).unwrap();
        let l = qo_loss(&mut tape, f.logits_qo, &[0, 1, 3]).unwrap();
        m.params.zero_grad();
        tape.backward(l, &mut m.params).unwrap();
        let emb = m.params.by_name("token_embeddings").unwrap();
        assert!(emb.grad.data().iter().all(|&g| g == 0.0));
        let mut qo_nonzero = false;
        for id in m.params.ids() {
            let zero = m.params.get(id).grad.data().iter().all(|&g| g == 0.0);
            match m.group_of(id) {
                ParamGroup::QuestionOnly => qo_nonzero |= !zero,
                _ => assert!(zero, "{}", m.params.get(id).name),
            }
        }
        assert!(qo_nonzero);
    }

    #[test]
    fn each_question_only_layer_matters() {
        let m = VqaModel::init(toy()).unwrap();
        let run = |params: &ParamSet| {
            let mut tape = Tape::new();
            let f = m.layout.forward(params, &mut tape, &[vec![1, 3]], features(1, 3, 4)).unwrap();
            tape.value(f.logits_qo).clone()
        };
        let base = run(&m.params);
        for layer in ["qo.layer1.weight", "qo.layer2.weight", "qo.layer3.weight"] {
            let mut p = m.params.clone();
            let id = p.id_of(layer).unwrap();
            p.get_mut(id).value.data_mut().iter_mut().for_each(|w| *w *= 1.5);
            assert!(run(&p).max_abs_diff(&base) > 0.0, "{layer}");
        }
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let mut m = VqaModel::init(toy()).unwrap();
        let layout = m.layout.clone();
        let ids: Vec<ParamId> = [ParamGroup::TokenEmbeddings, ParamGroup::QuestionEncoder, ParamGroup::VisualEncoder]
            .iter()
            .flat_map(|&g| m.ids_in(g))
            .collect();
        let tokens = vec![vec![0, 1], vec![2, 3, 4]];
        let feats = features(2, 3, 5);
        let report = grad_check_params(&mut m.params, &ids, 1e-5, |p, tape| {
            let f = layout.forward(p, tape, &tokens, feats.clone())?;
            tape.weighted_ce(f.logits_vqa, &[1, 2], &[1.0, 1.0])
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }
}
