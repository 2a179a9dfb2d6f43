//! The filter classifier: learnable hop weights `w` combine the basis slices into
//! `z = Σ_k w_k B_k`, followed by a softmax head (linear, or one ReLU hidden layer
//! when `hidden` is set). Gradients are derived by hand; training is full-batch
//! Adam with early stopping on validation accuracy.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::graph::{LabeledSplit, Subset};
use crate::matrix::{axpy, dot, SignalMatrix};
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub lr: f64,
    pub weight_decay: f64,
    /// Drop probability applied to the combined representation `z` during training.
    pub dropout: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Width of the optional ReLU hidden layer; `None` keeps the head linear.
    #[serde(default)]
    pub hidden: Option<usize>,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            lr: 0.01,
            weight_decay: 5e-4,
            dropout: 0.0,
            max_epochs: 1000,
            patience: 200,
            hidden: None,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.hidden == Some(0) {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    /// `width x d`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterModel {
    pub w: Vec<f64>,
    /// `C x d_in` row-major, `d_in` being the basis dimension or the hidden width.
    #[serde(rename = "head_W")]
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
    #[serde(default)]
    pub hidden_layer: Option<HiddenLayer>,
    pub num_classes: usize,
    pub dim: usize,
    pub hyper: Hyper,
    pub seed: u64,
}

/// Gradient of the objective with the same layout as [`FilterModel`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w: Vec<f64>,
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
    pub hidden_w: Vec<f64>,
    pub hidden_b: Vec<f64>,
}

impl FilterModel {
    /// Hop weights start at `1/(K+1)`; weight matrices are Glorot-uniform from
    /// the `"init"` sub-seed; biases start at zero.
    pub fn new(hops: usize, dim: usize, num_classes: usize, hyper: Hyper, seed: u64) -> Self {
        let mut rng = rng_for(seed, "init");
        let mut glorot = |rows: usize, cols: usize| -> Vec<f64> {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect()
        };
        let (hidden_layer, head_in) = match hyper.hidden {
            Some(width) => (
                Some(HiddenLayer {
                    weight: glorot(width, dim),
                    bias: vec![0.0; width],
                }),
                width,
            ),
            None => (None, dim),
        };
        Self {
            w: vec![1.0 / hops as f64; hops],
            head_w: glorot(num_classes, head_in),
            head_b: vec![0.0; num_classes],
            hidden_layer,
            num_classes,
            dim,
            hyper,
            seed,
        }
    }

    fn head_in(&self) -> usize {
        self.hidden_layer.as_ref().map_or(self.dim, |h| h.bias.len())
    }

    fn check_basis(&self, basis: &BasisSet) -> Result<()> {
        if basis.num_hops() != self.w.len() {
            return Err(Error::Dimension {
                what: "basis hops vs hop weights",
                expected: self.w.len(),
                actual: basis.num_hops(),
            });
        }
        if basis.dim() != self.dim {
            return Err(Error::Dimension {
                what: "basis dimension vs model input",
                expected: self.dim,
                actual: basis.dim(),
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        let hidden_ok = self
            .hidden_layer
            .as_ref()
            .is_none_or(|h| h.weight.iter().chain(&h.bias).all(|v| v.is_finite()));
        hidden_ok
            && self
                .w
                .iter()
                .chain(&self.head_w)
                .chain(&self.head_b)
                .all(|v| v.is_finite())
    }

    fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = vec![&mut self.w];
        if let Some(h) = self.hidden_layer.as_mut() {
            out.push(&mut h.weight);
            out.push(&mut h.bias);
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    /// Class probabilities for every node (`n x C`, rows sum to one).
    pub fn forward(&self, basis: &BasisSet) -> Result<SignalMatrix> {
        self.check_basis(basis)?;
        let rows: Vec<usize> = (0..basis.num_nodes()).collect();
        let batch = Batch::gather(basis, &rows, &vec![0; rows.len()]);
        let pass = self.forward_batch(&batch, None);
        Ok(pass.probs)
    }

    pub fn predict(&self, basis: &BasisSet) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.forward(basis)?))
    }

    /// Mean cross-entropy over `rows` plus `weight_decay/2 · ||θ||^2`, and its gradient.
    pub fn loss_and_gradient(&self, basis: &BasisSet, labels: &[usize], rows: &[usize]) -> Result<(f64, Gradients)> {
        self.check_basis(basis)?;
        if rows.is_empty() {
            return Err(Error::Split("no rows to evaluate the loss on".into()));
        }
        let batch = Batch::gather(basis, rows, labels);
        Ok(self.objective(&batch, None))
    }

    fn forward_batch(&self, batch: &Batch, mask: Option<&DropoutMask>) -> ForwardPass {
        let m = batch.len();
        let mut z = SignalMatrix::zeros(m, self.dim);
        for (k, slice) in batch.hops.iter().enumerate() {
            axpy(self.w[k], slice.as_slice(), z.as_mut_slice());
        }
        if let Some(mask) = mask {
            for (zi, &keep) in z.as_mut_slice().iter_mut().zip(&mask.keep) {
                *zi = if keep { *zi * mask.scale } else { 0.0 };
            }
        }
        let (pre_act, act) = match &self.hidden_layer {
            Some(h) => {
                let pre = affine(&z, &h.weight, &h.bias);
                let mut act = pre.clone();
                act.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
                (Some(pre), Some(act))
            }
            None => (None, None),
        };
        let head_input = act.as_ref().unwrap_or(&z);
        let mut probs = affine(head_input, &self.head_w, &self.head_b);
        softmax_rows(&mut probs);
        ForwardPass { z, pre_act, act, probs }
    }

    fn objective(&self, batch: &Batch, mask: Option<&DropoutMask>) -> (f64, Gradients) {
        let m = batch.len();
        let c = self.num_classes;
        let pass = self.forward_batch(batch, mask);

        let mut loss = 0.0;
        let mut g_logits = pass.probs.clone();
        for (r, &y) in batch.labels.iter().enumerate() {
            loss -= pass.probs.get(r, y).max(f64::MIN_POSITIVE).ln();
            g_logits.set(r, y, g_logits.get(r, y) - 1.0);
        }
        loss /= m as f64;
        g_logits.as_mut_slice().iter_mut().for_each(|g| *g /= m as f64);

        let head_input = pass.act.as_ref().unwrap_or(&pass.z);
        let head_in = self.head_in();
        let (head_w, head_b, mut g_input) = affine_backward(head_input, &self.head_w, &g_logits, c);

        let (hidden_w, hidden_b) = match (&self.hidden_layer, &pass.pre_act) {
            (Some(h), Some(pre)) => {
                for (g, &a) in g_input.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                }
                let (gw, gb, g_z) = affine_backward(&pass.z, &h.weight, &g_input, head_in);
                g_input = g_z;
                (gw, gb)
            }
            _ => (Vec::new(), Vec::new()),
        };

        // g_input is now dLoss/dz after dropout; undo the mask
        if let Some(mask) = mask {
            for (g, &keep) in g_input.as_mut_slice().iter_mut().zip(&mask.keep) {
                *g = if keep { *g * mask.scale } else { 0.0 };
            }
        }
        let w: Vec<f64> = batch
            .hops
            .iter()
            .map(|slice| dot(slice.as_slice(), g_input.as_slice()))
            .collect();

        let mut grads = Gradients {
            w,
            head_w,
            head_b,
            hidden_w,
            hidden_b,
        };
        let wd = self.hyper.weight_decay;
        if wd > 0.0 {
            let mut penalty = 0.0;
            let mut decay = |g: &mut [f64], p: &[f64]| {
                axpy(wd, p, g);
                penalty += dot(p, p);
            };
            decay(&mut grads.w, &self.w);
            decay(&mut grads.head_w, &self.head_w);
            decay(&mut grads.head_b, &self.head_b);
            if let Some(h) = &self.hidden_layer {
                decay(&mut grads.hidden_w, &h.weight);
                decay(&mut grads.hidden_b, &h.bias);
            }
            loss += 0.5 * wd * penalty;
        }
        (loss, grads)
    }
}

impl Gradients {
    fn groups(&self, hidden: bool) -> Vec<&Vec<f64>> {
        let mut out = vec![&self.w];
        if hidden {
            out.push(&self.hidden_w);
            out.push(&self.hidden_b);
        }
        out.push(&self.head_w);
        out.push(&self.head_b);
        out
    }
}

/// Basis rows gathered into dense per-hop matrices.
struct Batch {
    hops: Vec<SignalMatrix>,
    labels: Vec<usize>,
}

impl Batch {
    fn gather(basis: &BasisSet, rows: &[usize], labels: &[usize]) -> Self {
        let hops = basis
            .hops
            .iter()
            .map(|slice| {
                let mut out = SignalMatrix::zeros(rows.len(), slice.cols());
                for j in 0..slice.cols() {
                    let src = slice.col(j);
                    for (dst, &r) in out.col_mut(j).iter_mut().zip(rows) {
                        *dst = src[r];
                    }
                }
                out
            })
            .collect();
        Self {
            hops,
            labels: rows.iter().map(|&r| labels[r]).collect(),
        }
    }

    fn len(&self) -> usize {
        self.labels.len()
    }
}

struct DropoutMask {
    keep: Vec<bool>,
    scale: f64,
}

impl DropoutMask {
    fn sample(len: usize, p: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            keep: (0..len).map(|_| rng.random::<f64>() >= p).collect(),
            scale: 1.0 / (1.0 - p),
        }
    }
}

struct ForwardPass {
    z: SignalMatrix,
    pre_act: Option<SignalMatrix>,
    act: Option<SignalMatrix>,
    probs: SignalMatrix,
}

/// `x Wᵀ + b` with `W` row-major `out x in`.
fn affine(x: &SignalMatrix, weight: &[f64], bias: &[f64]) -> SignalMatrix {
    let (m, d_in) = (x.rows(), x.cols());
    let d_out = bias.len();
    let mut out = SignalMatrix::zeros(m, d_out);
    for o in 0..d_out {
        let col = out.col_mut(o);
        col.fill(bias[o]);
        for j in 0..d_in {
            let wij = weight[o * d_in + j];
            if wij != 0.0 {
                axpy(wij, x.col(j), col);
            }
        }
    }
    out
}

/// Given `dL/d(out)`, returns `(dL/dW, dL/db, dL/dx)` for `out = x Wᵀ + b`.
fn affine_backward(
    x: &SignalMatrix,
    weight: &[f64],
    g_out: &SignalMatrix,
    d_out: usize,
) -> (Vec<f64>, Vec<f64>, SignalMatrix) {
    let (m, d_in) = (x.rows(), x.cols());
    let mut g_w = vec![0.0; d_out * d_in];
    let mut g_b = vec![0.0; d_out];
    let mut g_x = SignalMatrix::zeros(m, d_in);
    for o in 0..d_out {
        let go = g_out.col(o);
        g_b[o] = go.iter().sum();
        for j in 0..d_in {
            g_w[o * d_in + j] = dot(go, x.col(j));
            axpy(weight[o * d_in + j], go, g_x.col_mut(j));
        }
    }
    (g_w, g_b, g_x)
}

fn softmax_rows(logits: &mut SignalMatrix) {
    let (m, c) = (logits.rows(), logits.cols());
    for r in 0..m {
        let max = (0..c).map(|k| logits.get(r, k)).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for k in 0..c {
            let e = (logits.get(r, k) - max).exp();
            logits.set(r, k, e);
            total += e;
        }
        for k in 0..c {
            logits.set(r, k, logits.get(r, k) / total);
        }
    }
}

/// Index of the largest entry per row; ties go to the lowest class index.
pub fn argmax_rows(probs: &SignalMatrix) -> Vec<usize> {
    (0..probs.rows())
        .map(|r| {
            let mut best = 0;
            for k in 1..probs.cols() {
                if probs.get(r, k) > probs.get(r, best) {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Fraction of `nodes` whose prediction equals the label.
pub fn accuracy_of(predictions: &[usize], labels: &[usize], nodes: &[usize]) -> Result<f64> {
    if nodes.is_empty() {
        return Err(Error::Split("cannot score an empty subset".into()));
    }
    let hits = nodes.iter().filter(|&&u| predictions[u] == labels[u]).count();
    Ok(hits as f64 / nodes.len() as f64)
}

/// Argmax accuracy of `model` on one subset of the split.
pub fn evaluate(model: &FilterModel, basis: &BasisSet, split: &LabeledSplit, subset: Subset) -> Result<f64> {
    let nodes = split.subset(subset);
    if nodes.is_empty() {
        return Err(Error::Split(format!("{subset:?} subset is empty")));
    }
    let preds = model.predict(basis)?;
    accuracy_of(&preds, &split.labels, nodes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub best_val_accuracy: f64,
    pub best_epoch: usize,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub epochs_run: usize,
    pub loss_curve: Vec<f64>,
    pub seed: u64,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(model: &mut FilterModel) -> Self {
        let shapes: Vec<usize> = model.params_mut().iter().map(|p| p.len()).collect();
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut FilterModel, grads: &Gradients, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t);
        let bc2 = 1.0 - Self::BETA2.powi(self.t);
        let hidden = model.hidden_layer.is_some();
        let groups = grads.groups(hidden);
        for (i, param) in model.params_mut().into_iter().enumerate() {
            let g = groups[i];
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..param.len() {
                m[j] = Self::BETA1 * m[j] + (1.0 - Self::BETA1) * g[j];
                v[j] = Self::BETA2 * v[j] + (1.0 - Self::BETA2) * g[j] * g[j];
                param[j] -= lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + Self::EPS);
            }
        }
    }
}

fn batch_accuracy(model: &FilterModel, batch: &Batch) -> (f64, f64) {
    let pass = model.forward_batch(batch, None);
    let preds = argmax_rows(&pass.probs);
    let hits = preds.iter().zip(&batch.labels).filter(|(p, y)| p == y).count();
    let loss = batch
        .labels
        .iter()
        .enumerate()
        .map(|(r, &y)| -pass.probs.get(r, y).max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / batch.len() as f64;
    (hits as f64 / batch.len() as f64, loss)
}

/// Full-batch Adam on the training nodes. Keeps the snapshot with the best
/// validation accuracy (ties broken by lower validation loss) and stops after
/// `patience` epochs without improvement. With an empty validation set the
/// training set is used for model selection.
pub fn train(basis: &BasisSet, split: &LabeledSplit, hyper: Hyper, seed: u64) -> Result<(FilterModel, TrainReport)> {
    hyper.validate()?;
    if split.train.is_empty() {
        return Err(Error::Split("train set is empty".into()));
    }
    if split.labels.len() != basis.num_nodes() {
        return Err(Error::Dimension {
            what: "labels vs basis rows",
            expected: basis.num_nodes(),
            actual: split.labels.len(),
        });
    }
    if !basis.is_finite() {
        return Err(Error::NonFinite("basis input".into()));
    }

    let mut model = FilterModel::new(basis.num_hops(), basis.dim(), split.num_classes, hyper, seed);
    let train_batch = Batch::gather(basis, &split.train, &split.labels);
    let val_batch = if split.val.is_empty() {
        None
    } else {
        Some(Batch::gather(basis, &split.val, &split.labels))
    };
    let select_batch = val_batch.as_ref().unwrap_or(&train_batch);

    let mut adam = Adam::new(&mut model);
    let mut dropout_rng = rng_for(seed, "dropout");
    let mask_len = train_batch.len() * basis.dim();

    let mut best = model.clone();
    let (mut best_acc, mut best_loss) = batch_accuracy(&model, select_batch);
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut loss_curve = Vec::new();

    for epoch in 1..=hyper.max_epochs {
        let mask = (hyper.dropout > 0.0).then(|| DropoutMask::sample(mask_len, hyper.dropout, &mut dropout_rng));
        let (loss, grads) = model.objective(&train_batch, mask.as_ref());
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {epoch} ({loss})")));
        }
        loss_curve.push(loss);
        adam.step(&mut model, &grads, hyper.lr);
        if !model.is_finite() {
            return Err(Error::NonFinite(format!("parameters after epoch {epoch}")));
        }

        let (acc, val_loss) = batch_accuracy(&model, select_batch);
        if acc > best_acc || (acc == best_acc && val_loss < best_loss) {
            best_acc = acc;
            best_loss = val_loss;
            best = model.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= hyper.patience {
                break;
            }
        }
    }

    let epochs_run = loss_curve.len();
    let preds = best.predict(basis)?;
    let train_accuracy = accuracy_of(&preds, &split.labels, &split.train)?;
    let test_accuracy = if split.test.is_empty() {
        None
    } else {
        Some(accuracy_of(&preds, &split.labels, &split.test)?)
    };
    let report = TrainReport {
        best_val_accuracy: best_acc,
        best_epoch,
        train_accuracy,
        test_accuracy,
        epochs_run,
        loss_curve,
        seed,
    };
    Ok((best, report))
}
