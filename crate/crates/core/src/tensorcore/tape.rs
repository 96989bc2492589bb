//! Reverse-mode differentiation over a linear tape of batched operations.
//!
//! Every op evaluates eagerly on construction. `backward` walks the tape in
//! reverse and accumulates gradients into the [`ParamSet`] leaves. All
//! reductions run in a fixed left-to-right order, so results are bitwise
//! reproducible for identical inputs.

use super::tensor::{ParamId, ParamSet, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Relu(Var),
    Mul(Var, Var),
    Add(Var, Var),
    /// Stop-gradient: forwards the value, blocks the backward pass.
    Detach,
    EmbedMean {
        table: Var,
        tokens: Vec<Vec<usize>>,
    },
    WeightedCe {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of the backward root with respect to every tracked node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Constant leaf; no gradient is computed for it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Leaf whose gradient is computed and reported in [`Gradients`].
    pub fn tracked_input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, true)
    }

    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        self.push(params.get(id).value.clone(), Op::Param(id), true)
    }

    /// `x · w + b` for `x: [B, D_in]`, `w: [D_in, D_out]`, `b: [D_out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (rows, d_in) = self.value(x).dims2()?;
        let (w_in, d_out) = self.value(w).dims2()?;
        if w_in != d_in {
            return Err(Error::shape(
                "linear",
                format!("input has {d_in} features but weight expects {w_in}"),
            ));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [d_out] {
                return Err(Error::shape(
                    "linear",
                    format!("bias shape {:?}, expected [{d_out}]", self.value(b).shape()),
                ));
            }
        }
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![0.0; rows * d_out];
        for i in 0..rows {
            let out_row = &mut out[i * d_out..(i + 1) * d_out];
            for (d, &xd) in xv[i * d_in..(i + 1) * d_in].iter().enumerate() {
                for (o, &wdj) in out_row.iter_mut().zip(&wv[d * d_out..(d + 1) * d_out]) {
                    *o += xd * wdj;
                }
            }
            if let Some(b) = b {
                for (o, &bj) in out_row.iter_mut().zip(self.nodes[b.0].value.data()) {
                    *o += bj;
                }
            }
        }
        let value = Tensor::new(vec![rows, d_out], out)?;
        let rg = self.tracked(x) || self.tracked(w) || b.is_some_and(|b| self.tracked(b));
        Ok(self.push(value, Op::Linear { x, w, b }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        let rg = self.tracked(x);
        self.push(value, Op::Relu(x), rg)
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with("mul", a, b, |x, y| x * y)?;
        let rg = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with("add", a, b, |x, y| x + y)?;
        let rg = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    fn zip_with(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(op, format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push(value, Op::Detach, false)
    }

    /// Mean of embedding rows per sequence: `out[i] = mean_t table[tokens[i][t]]`.
    pub fn embed_mean(&mut self, table: Var, tokens: &[Vec<usize>]) -> Result<Var> {
        let (vocab, dim) = self.value(table).dims2()?;
        if tokens.is_empty() {
            return Err(Error::invalid("tokens", "empty batch"));
        }
        let tv = self.value(table).data();
        let mut out = vec![0.0; tokens.len() * dim];
        for (i, seq) in tokens.iter().enumerate() {
            if seq.is_empty() {
                return Err(Error::invalid("tokens", format!("empty token sequence at row {i}")));
            }
            let row = &mut out[i * dim..(i + 1) * dim];
            for &tok in seq {
                if tok >= vocab {
                    return Err(Error::invalid(
                        "tokens",
                        format!("token id {tok} out of vocabulary of size {vocab}"),
                    ));
                }
                for (o, &e) in row.iter_mut().zip(&tv[tok * dim..(tok + 1) * dim]) {
                    *o += e;
                }
            }
            let inv = 1.0 / seq.len() as f64;
            row.iter_mut().for_each(|o| *o *= inv);
        }
        let value = Tensor::new(vec![tokens.len(), dim], out)?;
        let rg = self.tracked(table);
        Ok(self.push(
            value,
            Op::EmbedMean {
                table,
                tokens: tokens.to_vec(),
            },
            rg,
        ))
    }

    /// `-(1/B) Σ_i weights[i] · log softmax(logits[i])[targets[i]]`.
    ///
    /// Weights are constants; no gradient flows into them.
    pub fn weighted_ce(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let (rows, classes) = self.value(logits).dims2()?;
        if targets.len() != rows || weights.len() != rows {
            return Err(Error::shape(
                "weighted_ce",
                format!(
                    "{rows} rows but {} targets and {} weights",
                    targets.len(),
                    weights.len()
                ),
            ));
        }
        for (index, &target) in targets.iter().enumerate() {
            if target >= classes {
                return Err(Error::TargetOutOfRange {
                    index,
                    target,
                    classes,
                });
            }
        }
        if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::invalid("weights", format!("{w} not in [0, 1]")));
        }
        let z = self.value(logits);
        let mut probs = Vec::with_capacity(rows * classes);
        let mut total = 0.0;
        for i in 0..rows {
            let row = z.row(i);
            let (p, log_norm) = softmax_with_log_norm(row);
            total += weights[i] * (row[targets[i]] - log_norm);
            probs.extend(p);
        }
        let loss = -total / rows as f64;
        let probs = Tensor::new(vec![rows, classes], probs)?;
        let rg = self.tracked(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::WeightedCe {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Backpropagates from a scalar `root`, accumulating into parameter grads.
    pub fn backward(&self, root: Var, params: &mut ParamSet) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("root must be scalar, got {:?}", self.value(root).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::filled(self.value(root).shape(), 1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Input => {}
                Op::Param(id) => params.get_mut(*id).grad.add_assign(&g),
                Op::Detach => {}
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let data = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(&gi, &xi)| if xi > 0.0 { gi } else { 0.0 })
                        .collect();
                    self.accumulate(&mut grads, *x, Tensor::new(g.shape().to_vec(), data)?);
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, g.clone());
                    self.accumulate(&mut grads, *b, g.clone());
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.tracked(*a) {
                        let data = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                        self.accumulate(&mut grads, *a, Tensor::new(g.shape().to_vec(), data)?);
                    }
                    if self.tracked(*b) {
                        let data = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                        self.accumulate(&mut grads, *b, Tensor::new(g.shape().to_vec(), data)?);
                    }
                }
                Op::Linear { x, w, b } => self.linear_backward(&mut grads, &g, *x, *w, *b)?,
                Op::EmbedMean { table, tokens } => {
                    let tshape = self.value(*table).shape().to_vec();
                    let dim = tshape[1];
                    let mut dt = Tensor::zeros(&tshape);
                    let dtd = dt.data_mut();
                    for (i, seq) in tokens.iter().enumerate() {
                        let inv = 1.0 / seq.len() as f64;
                        let gi = g.row(i);
                        for &tok in seq {
                            for (o, &gv) in dtd[tok * dim..(tok + 1) * dim].iter_mut().zip(gi) {
                                *o += gv * inv;
                            }
                        }
                    }
                    self.accumulate(&mut grads, *table, dt);
                }
                Op::WeightedCe {
                    logits,
                    targets,
                    weights,
                    probs,
                } => {
                    let upstream = g.data()[0];
                    let (rows, classes) = probs.dims2()?;
                    let mut dz = probs.clone();
                    let dzd = dz.data_mut();
                    for i in 0..rows {
                        let scale = upstream * weights[i] / rows as f64;
                        let row = &mut dzd[i * classes..(i + 1) * classes];
                        row[targets[i]] -= 1.0;
                        row.iter_mut().for_each(|v| *v *= scale);
                    }
                    self.accumulate(&mut grads, *logits, dz);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn linear_backward(
        &self,
        grads: &mut [Option<Tensor>],
        g: &Tensor,
        x: Var,
        w: Var,
        b: Option<Var>,
    ) -> Result<()> {
        let xv = self.value(x);
        let wv = self.value(w);
        let (rows, d_in) = xv.dims2()?;
        let d_out = wv.dims2()?.1;
        let gd = g.data();
        if self.tracked(x) {
            let mut dx = vec![0.0; rows * d_in];
            let wd = wv.data();
            for i in 0..rows {
                let gi = &gd[i * d_out..(i + 1) * d_out];
                for (d, o) in dx[i * d_in..(i + 1) * d_in].iter_mut().enumerate() {
                    *o = gi.iter().zip(&wd[d * d_out..(d + 1) * d_out]).map(|(a, b)| a * b).sum();
                }
            }
            self.accumulate(grads, x, Tensor::new(vec![rows, d_in], dx)?);
        }
        if self.tracked(w) {
            let mut dw = vec![0.0; d_in * d_out];
            let xd = xv.data();
            for i in 0..rows {
                let gi = &gd[i * d_out..(i + 1) * d_out];
                for (d, &xid) in xd[i * d_in..(i + 1) * d_in].iter().enumerate() {
                    for (o, &gij) in dw[d * d_out..(d + 1) * d_out].iter_mut().zip(gi) {
                        *o += xid * gij;
                    }
                }
            }
            self.accumulate(grads, w, Tensor::new(vec![d_in, d_out], dw)?);
        }
        if let Some(b) = b.filter(|&b| self.tracked(b)) {
            let mut db = vec![0.0; d_out];
            for i in 0..rows {
                for (o, &gij) in db.iter_mut().zip(&gd[i * d_out..(i + 1) * d_out]) {
                    *o += gij;
                }
            }
            self.accumulate(grads, b, Tensor::new(vec![d_out], db)?);
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
        if !self.tracked(var) {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }
}

/// Softmax of one row (max-subtracted) together with `log Σ exp(row)`.
fn softmax_with_log_norm(row: &[f64]) -> (Vec<f64>, f64) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probs = exps.into_iter().map(|e| e / sum).collect();
    (probs, max + sum.ln())
}

/// Row-wise softmax of a rank-2 tensor.
pub fn softmax(z: &Tensor) -> Result<Tensor> {
    let (rows, classes) = z.dims2()?;
    let mut out = Vec::with_capacity(rows * classes);
    for i in 0..rows {
        out.extend(softmax_with_log_norm(z.row(i)).0);
    }
    Tensor::new(vec![rows, classes], out)
}

/// Softmax of a single logit vector.
pub fn softmax_vec(z: &[f64]) -> Vec<f64> {
    softmax_with_log_norm(z).0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn linear_identity_and_bias_only() {
        let mut params = ParamSet::new();
        let w = params.add("w", mat(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let b = params.add("b", Tensor::vector(vec![0.0, 0.0]).unwrap());
        let w0 = params.add("w0", Tensor::zeros(&[2, 2]));
        let b34 = params.add("b34", Tensor::vector(vec![3.0, 4.0]).unwrap());
        let mut tape = Tape::new();
        let x = tape.input(mat(&[vec![1.0, 2.0]]));
        let (wv, bv) = (tape.param(&params, w), tape.param(&params, b));
        let y = tape.linear(x, wv, Some(bv)).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0]);
        let (wv, bv) = (tape.param(&params, w0), tape.param(&params, b34));
        let y = tape.linear(x, wv, Some(bv)).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 4.0]);
    }

    #[test]
    fn linear_rejects_mismatched_shapes() {
        let mut params = ParamSet::new();
        let w = params.add("w", Tensor::zeros(&[3, 2]));
        let b = params.add("b", Tensor::zeros(&[3]));
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(&[1, 2]));
        let wv = tape.param(&params, w);
        assert!(matches!(tape.linear(x, wv, None), Err(Error::Shape { .. })));
        let x3 = tape.input(Tensor::zeros(&[1, 3]));
        let bv = tape.param(&params, b);
        assert!(matches!(tape.linear(x3, wv, Some(bv)), Err(Error::Shape { .. })));
    }

    #[test]
    fn relu_forward_and_subgradient() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::vector(vec![-1.0, 0.0, 2.0]).unwrap());
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);

        // Upstream [1, 1] through relu at [3, -3] gives [1, 0].
        let mut params = ParamSet::new();
        let mut tape = Tape::new();
        let x = tape.tracked_input(mat(&[vec![3.0, -3.0]]));
        let r = tape.relu(x);
        let ones = params.add("ones", mat(&[vec![1.0], vec![1.0]]));
        let ov = tape.param(&params, ones);
        let s = tape.linear(r, ov, None).unwrap();
        let grads = tape.backward(s, &mut params).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0, 0.0]);

        let mut tape = Tape::new();
        let x = tape.tracked_input(mat(&[vec![-1.0, -2.0], vec![-0.5, 0.0]]));
        let r = tape.relu(x);
        assert!(tape.value(r).data().iter().all(|&v| v == 0.0));
        let w = params.add("w", mat(&[vec![2.0, 0.0], vec![-1.0, 1.0]]));
        let wv = tape.param(&params, w);
        let s = tape.linear(r, wv, None).unwrap();
        let l = tape.weighted_ce(s, &[0, 1], &[1.0, 1.0]).unwrap();
        let grads = tape.backward(l, &mut params).unwrap();
        assert!(grads.wrt(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&mat(&[vec![0.0; 4]])).unwrap();
        assert_eq!(p.data(), &[0.25; 4]);
        let p = softmax(&mat(&[vec![0.0, 2f64.ln()]])).unwrap();
        assert!((p.data()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((p.data()[1] - 2.0 / 3.0).abs() < 1e-15);
        let p = softmax(&mat(&[vec![1000.0, 1000.0]])).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
    }

    #[test]
    fn weighted_ce_examples() {
        let params = &mut ParamSet::new();
        let mut tape = Tape::new();
        let z = tape.tracked_input(mat(&[vec![0.0, 800.0, 0.0]]));
        let l = tape.weighted_ce(z, &[1], &[1.0]).unwrap();
        assert_eq!(tape.value(l).data()[0], 0.0);

        let z = tape.tracked_input(mat(&[vec![0.0; 3000]]));
        let l = tape.weighted_ce(z, &[17], &[1.0]).unwrap();
        let loss = tape.value(l).data()[0];
        assert!((loss - 3000f64.ln()).abs() < 1e-12);
        assert!((loss - 8.00637).abs() < 1e-5);

        let z = tape.tracked_input(mat(&[vec![0.3, -1.0, 2.0], vec![1.0, 1.0, 0.0]]));
        let l = tape.weighted_ce(z, &[0, 2], &[0.0, 0.0]).unwrap();
        assert_eq!(tape.value(l).data()[0], 0.0);
        let grads = tape.backward(l, params).unwrap();
        assert!(grads.wrt(z).unwrap().data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn weighted_ce_rejects_bad_inputs() {
        let mut tape = Tape::new();
        let z = tape.input(mat(&[vec![0.0, 1.0]]));
        assert!(matches!(
            tape.weighted_ce(z, &[2], &[1.0]),
            Err(Error::TargetOutOfRange { target: 2, .. })
        ));
        assert!(tape.weighted_ce(z, &[0], &[1.5]).is_err());
        assert!(tape.weighted_ce(z, &[0, 1], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut params = ParamSet::new();
        let w = params.add("w", mat(&[vec![1.0, -2.0], vec![0.5, 3.0]]));
        let mut tape = Tape::new();
        let x = tape.input(mat(&[vec![1.0, 2.0]]));
        let wv = tape.param(&params, w);
        let h = tape.linear(x, wv, None).unwrap();
        let hd = tape.detach(h);
        assert_eq!(tape.value(hd), tape.value(h));
        let l = tape.weighted_ce(hd, &[0], &[1.0]).unwrap();
        tape.backward(l, &mut params).unwrap();
        assert!(params.get(w).grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn embed_mean_rejects_bad_tokens() {
        let mut params = ParamSet::new();
        let t = params.add("emb", Tensor::zeros(&[3, 2]));
        let mut tape = Tape::new();
        let tv = tape.param(&params, t);
        assert!(tape.embed_mean(tv, &[vec![]]).is_err());
        assert!(tape.embed_mean(tv, &[vec![3]]).is_err());
        assert!(tape.embed_mean(tv, &[vec![0, 2, 1]]).is_ok());
    }
}
