//! Two-head classifier: one ReLU hidden layer shared by an exact-class head
//! and a superclass head, trained with Adam on softmax cross-entropy.
//!
//! Weight matrices are stored input-major (`[fan_in][fan_out]`) so both the
//! forward pass and the weight-gradient accumulation run as contiguous axpy
//! loops.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{LabeledSet, Level};
use crate::error::{Error, Result};

/// Optimizer and architecture settings for one training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs_per_stage: usize,
    pub batch_size: usize,
    pub hidden_dim: usize,
    /// Mixed into every training seed the harness draws.
    pub init_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            epochs_per_stage: 100,
            batch_size: 64,
            hidden_dim: 64,
            init_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.epochs_per_stage == 0 || self.batch_size == 0 || self.hidden_dim == 0 {
            return Err(Error::Config(
                "epochs_per_stage, batch_size and hidden_dim must be positive".into(),
            ));
        }
        Ok(())
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TwoHeadModel {
    input_dim: usize,
    hidden_dim: usize,
    num_classes: usize,
    num_superclasses: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w_full: Vec<f64>,
    b_full: Vec<f64>,
    w_weak: Vec<f64>,
    b_weak: Vec<f64>,
}

/// Gradient of the loss of one head with respect to the extractor and that head.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub level: Level,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

pub const TENSOR_NAMES: [&str; 6] = ["w1", "b1", "w_full", "b_full", "w_weak", "b_weak"];

impl TwoHeadModel {
    /// All parameters zero.
    pub fn zeros(input_dim: usize, hidden_dim: usize, num_classes: usize, num_superclasses: usize) -> Self {
        TwoHeadModel {
            input_dim,
            hidden_dim,
            num_classes,
            num_superclasses,
            w1: vec![0.0; input_dim * hidden_dim],
            b1: vec![0.0; hidden_dim],
            w_full: vec![0.0; hidden_dim * num_classes],
            b_full: vec![0.0; num_classes],
            w_weak: vec![0.0; hidden_dim * num_superclasses],
            b_weak: vec![0.0; num_superclasses],
        }
    }

    /// Uniform `±1/sqrt(fan_in)` initialization of every weight and bias.
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        num_superclasses: usize,
        rng: &mut R,
    ) -> Self {
        let mut model = Self::zeros(input_dim, hidden_dim, num_classes, num_superclasses);
        let in_bound = 1.0 / (input_dim as f64).sqrt();
        let hid_bound = 1.0 / (hidden_dim as f64).sqrt();
        for (name, tensor) in TENSOR_NAMES.iter().zip(model.tensors_mut()) {
            let bound = if name.ends_with('1') { in_bound } else { hid_bound };
            for v in tensor.iter_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        model
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_superclasses(&self) -> usize {
        self.num_superclasses
    }

    pub fn num_outputs(&self, level: Level) -> usize {
        match level {
            Level::Full => self.num_classes,
            Level::Weak => self.num_superclasses,
        }
    }

    /// Parameter tensors in [`TENSOR_NAMES`] order.
    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            &self.w1,
            &self.b1,
            &self.w_full,
            &self.b_full,
            &self.w_weak,
            &self.b_weak,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w_full,
            &mut self.b_full,
            &mut self.w_weak,
            &mut self.b_weak,
        ]
    }

    fn head(&self, level: Level) -> (&[f64], &[f64]) {
        match level {
            Level::Full => (&self.w_full, &self.b_full),
            Level::Weak => (&self.w_weak, &self.b_weak),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Shape {
                expected: self.input_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Pre-activation of the hidden layer written into `pre`.
    fn hidden_pre(&self, x: &[f64], pre: &mut [f64]) {
        pre.copy_from_slice(&self.b1);
        let h = self.hidden_dim;
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.w1[i * h..(i + 1) * h];
            for (p, &w) in pre.iter_mut().zip(row) {
                *p += xi * w;
            }
        }
    }

    fn logits_from_hidden(&self, hidden: &[f64], level: Level, logits: &mut [f64]) {
        let (w, b) = self.head(level);
        let k = b.len();
        logits.copy_from_slice(b);
        for (j, &zj) in hidden.iter().enumerate() {
            if zj == 0.0 {
                continue;
            }
            let row = &w[j * k..(j + 1) * k];
            for (l, &wv) in logits.iter_mut().zip(row) {
                *l += zj * wv;
            }
        }
    }

    /// Extractor output (after ReLU), not normalized.
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut hidden = vec![0.0; self.hidden_dim];
        self.hidden_pre(x, &mut hidden);
        hidden.iter_mut().for_each(|v| *v = v.max(0.0));
        Ok(hidden)
    }

    pub fn logits(&self, x: &[f64], level: Level) -> Result<Vec<f64>> {
        let hidden = self.features(x)?;
        let mut logits = vec![0.0; self.num_outputs(level)];
        self.logits_from_hidden(&hidden, level, &mut logits);
        Ok(logits)
    }

    pub fn predict(&self, x: &[f64], level: Level) -> Result<Vec<f64>> {
        let mut p = self.logits(x, level)?;
        softmax_in_place(&mut p);
        Ok(p)
    }

    /// Exact-class probabilities.
    pub fn predict_full(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.predict(x, Level::Full)
    }

    /// Superclass probabilities.
    pub fn predict_weak(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.predict(x, Level::Weak)
    }

    /// Unit-norm extractor output. A zero extractor output maps to the first
    /// standard basis vector.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut e = self.features(x)?;
        normalize_or_basis(&mut e);
        Ok(e)
    }

    /// Mean cross-entropy of `level`'s head over `rows` of `data`, and its
    /// gradient with respect to the extractor and that head.
    pub fn loss_and_gradient(&self, data: &LabeledSet, rows: &[usize], level: Level) -> (f64, Gradients) {
        let h = self.hidden_dim;
        let k = self.num_outputs(level);
        let (head_w, _) = self.head(level);
        let mut grads = Gradients {
            level,
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; h],
            head_w: vec![0.0; h * k],
            head_b: vec![0.0; k],
        };
        if rows.is_empty() {
            return (0.0, grads);
        }
        let scale = 1.0 / rows.len() as f64;
        let mut pre = vec![0.0; h];
        let mut hidden = vec![0.0; h];
        let mut dlogits = vec![0.0; k];
        let mut dpre = vec![0.0; h];
        let mut loss = 0.0;
        for &r in rows {
            let x = data.row(r);
            let label = data.labels[r];
            self.hidden_pre(x, &mut pre);
            for (z, &a) in hidden.iter_mut().zip(&pre) {
                *z = a.max(0.0);
            }
            self.logits_from_hidden(&hidden, level, &mut dlogits);
            let max = dlogits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for l in dlogits.iter_mut() {
                *l = (*l - max).exp();
                sum += *l;
            }
            // loss = log(sum) - (logit_label - max)
            loss += sum.ln() - dlogits[label].ln();
            for l in dlogits.iter_mut() {
                *l = *l / sum * scale;
            }
            dlogits[label] -= scale;

            for (gb, &d) in grads.head_b.iter_mut().zip(&dlogits) {
                *gb += d;
            }
            for j in 0..h {
                let zj = hidden[j];
                let row = &head_w[j * k..(j + 1) * k];
                if zj != 0.0 {
                    let grow = &mut grads.head_w[j * k..(j + 1) * k];
                    for (g, &d) in grow.iter_mut().zip(&dlogits) {
                        *g += zj * d;
                    }
                }
                dpre[j] = if pre[j] > 0.0 {
                    row.iter().zip(&dlogits).map(|(w, d)| w * d).sum()
                } else {
                    0.0
                };
            }
            for (gb, &d) in grads.b1.iter_mut().zip(&dpre) {
                *gb += d;
            }
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let grow = &mut grads.w1[i * h..(i + 1) * h];
                for (g, &d) in grow.iter_mut().zip(&dpre) {
                    *g += xi * d;
                }
            }
        }
        (loss * scale, grads)
    }

    /// Mean cross-entropy of one head over a whole set.
    pub fn loss(&self, data: &LabeledSet, level: Level) -> f64 {
        let rows: Vec<usize> = (0..data.len()).collect();
        self.loss_and_gradient(data, &rows, level).0
    }

    /// Serializes into the versioned checkpoint container.
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for dim in [self.input_dim, self.hidden_dim, self.num_classes, self.num_superclasses] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        out.extend_from_slice(&(TENSOR_NAMES.len() as u32).to_le_bytes());
        for (name, tensor) in TENSOR_NAMES.iter().zip(self.tensors()) {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(tensor.len() as u64).to_le_bytes());
            for v in tensor {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let dims = [cur.u32()?, cur.u32()?, cur.u32()?, cur.u32()?].map(|d| d as usize);
        let mut model = Self::zeros(dims[0], dims[1], dims[2], dims[3]);
        let count = cur.u32()? as usize;
        if count != TENSOR_NAMES.len() {
            return Err(Error::Checkpoint(format!("expected 6 tensors, found {count}")));
        }
        for (expected, tensor) in TENSOR_NAMES.iter().zip(model.tensors_mut()) {
            let name_len = u16::from_le_bytes(cur.take(2)?.try_into().unwrap()) as usize;
            let name = cur.take(name_len)?;
            if name != expected.as_bytes() {
                return Err(Error::Checkpoint(format!(
                    "expected tensor {expected}, found {}",
                    String::from_utf8_lossy(name)
                )));
            }
            let len = u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize;
            if len != tensor.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {expected} has {len} values, expected {}",
                    tensor.len()
                )));
            }
            for v in tensor.iter_mut() {
                *v = f64::from_le_bytes(cur.take(8)?.try_into().unwrap());
            }
        }
        if cur.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(model)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"ISOALCKP";
const CHECKPOINT_VERSION: u32 = 1;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Checkpoint("truncated".into()));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    for l in logits.iter_mut() {
        *l = (*l / sum).max(f64::MIN_POSITIVE);
    }
}

pub(crate) fn normalize_or_basis(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 && norm.is_finite() {
        v.iter_mut().for_each(|x| *x /= norm);
    } else {
        v.iter_mut().for_each(|x| *x = 0.0);
        if let Some(first) = v.first_mut() {
            *first = 1.0;
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

struct AdamSlot {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamSlot {
    fn new(len: usize) -> Self {
        AdamSlot {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, bias1: f64, bias2: f64) {
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Adam over the extractor plus one head.
struct Adam {
    lr: f64,
    t: i32,
    slots: [AdamSlot; 4],
}

impl Adam {
    fn new(model: &TwoHeadModel, level: Level, lr: f64) -> Self {
        let (w, b) = model.head(level);
        Adam {
            lr,
            t: 0,
            slots: [
                AdamSlot::new(model.w1.len()),
                AdamSlot::new(model.b1.len()),
                AdamSlot::new(w.len()),
                AdamSlot::new(b.len()),
            ],
        }
    }

    fn step(&mut self, model: &mut TwoHeadModel, grads: &Gradients) {
        self.t += 1;
        let bias1 = 1.0 - ADAM_BETA1.powi(self.t);
        let bias2 = 1.0 - ADAM_BETA2.powi(self.t);
        let lr = self.lr;
        let [s_w1, s_b1, s_hw, s_hb] = &mut self.slots;
        s_w1.step(&mut model.w1, &grads.w1, lr, bias1, bias2);
        s_b1.step(&mut model.b1, &grads.b1, lr, bias1, bias2);
        let (hw, hb) = match grads.level {
            Level::Full => (&mut model.w_full, &mut model.b_full),
            Level::Weak => (&mut model.w_weak, &mut model.b_weak),
        };
        s_hw.step(hw, &grads.head_w, lr, bias1, bias2);
        s_hb.step(hb, &grads.head_b, lr, bias1, bias2);
    }
}

/// Runs `epochs_per_stage` epochs of shuffled mini-batch Adam on one head
/// (and the shared extractor). Returns the mean training loss per epoch.
pub fn fit_stage<R: Rng + ?Sized>(
    model: &mut TwoHeadModel,
    data: &LabeledSet,
    level: Level,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Ok(Vec::new());
    }
    if data.dim != model.input_dim {
        return Err(Error::Shape {
            expected: model.input_dim,
            actual: data.dim,
        });
    }
    let outputs = model.num_outputs(level);
    if let Some(&bad) = data.labels.iter().find(|&&l| l >= outputs) {
        return Err(Error::Training(format!(
            "label {bad} out of range for {level} head with {outputs} outputs"
        )));
    }
    let mut adam = Adam::new(model, level, cfg.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs_per_stage);
    for _ in 0..cfg.epochs_per_stage {
        order.shuffle(rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads) = model.loss_and_gradient(data, batch, level);
            total += loss * batch.len() as f64;
            adam.step(model, &grads);
        }
        epoch_losses.push(total / data.len() as f64);
    }
    Ok(epoch_losses)
}

/// Trains a freshly initialized model: the extractor and superclass head on
/// `weak_data` first, then the extractor and exact-class head on `full_data`.
/// An empty `weak_data` skips the first stage without consuming randomness.
pub fn train_two_stage<R: Rng + ?Sized>(
    cfg: &TrainConfig,
    num_classes: usize,
    num_superclasses: usize,
    full_data: &LabeledSet,
    weak_data: &LabeledSet,
    rng: &mut R,
) -> Result<TwoHeadModel> {
    cfg.validate()?;
    if full_data.is_empty() {
        return Err(Error::Training("no fully labeled data".into()));
    }
    if !weak_data.is_empty() && weak_data.dim != full_data.dim {
        return Err(Error::Shape {
            expected: full_data.dim,
            actual: weak_data.dim,
        });
    }
    let mut model = TwoHeadModel::init(full_data.dim, cfg.hidden_dim, num_classes, num_superclasses, rng);
    fit_stage(&mut model, weak_data, Level::Weak, cfg, rng)?;
    fit_stage(&mut model, full_data, Level::Full, cfg, rng)?;
    Ok(model)
}

/// Fraction of rows whose argmax prediction on `level`'s head equals the label.
pub fn evaluate_accuracy(model: &TwoHeadModel, data: &LabeledSet, level: Level) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Evaluation("cannot evaluate on an empty set".into()));
    }
    if data.dim != model.input_dim {
        return Err(Error::Shape {
            expected: model.input_dim,
            actual: data.dim,
        });
    }
    let mut hidden = vec![0.0; model.hidden_dim];
    let mut logits = vec![0.0; model.num_outputs(level)];
    let mut correct = 0usize;
    for (i, &label) in data.labels.iter().enumerate() {
        model.hidden_pre(data.row(i), &mut hidden);
        hidden.iter_mut().for_each(|v| *v = v.max(0.0));
        model.logits_from_hidden(&hidden, level, &mut logits);
        if argmax(&logits) == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(rng: &mut ChaCha8Rng, n: usize, dim: usize, classes: usize) -> LabeledSet {
        let mut set = LabeledSet::empty(dim);
        for _ in 0..n {
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            set.push(&x, rng.random_range(0..classes));
        }
        set
    }

    #[test]
    fn zero_heads_predict_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = TwoHeadModel::init(4, 8, 5, 2, &mut rng);
        for t in &mut model.tensors_mut()[2..] {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        let p = model.predict_full(&[0.3, -1.0, 2.0, 0.5]).unwrap();
        assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
        let p = model.predict_weak(&[0.3, -1.0, 2.0, 0.5]).unwrap();
        assert!(p.iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn softmax_closed_form() {
        let mut l = [2.0, 0.0];
        softmax_in_place(&mut l);
        let e2 = 2f64.exp();
        assert!((l[0] - e2 / (e2 + 1.0)).abs() < 1e-12);
        assert!((l[0] - 0.8808).abs() < 1e-3 && (l[1] - 0.1192).abs() < 1e-3);
    }

    #[test]
    fn predictions_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = TwoHeadModel::init(6, 10, 7, 3, &mut rng);
        for _ in 0..100 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-5.0..5.0)).collect();
            for level in [Level::Full, Level::Weak] {
                let p = model.predict(&x, level).unwrap();
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                assert!(p.iter().all(|&v| v > 0.0));
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let model = TwoHeadModel::zeros(3, 2, 2, 1);
        assert!(matches!(
            model.predict_full(&[1.0]),
            Err(Error::Shape { expected: 3, actual: 1 })
        ));
        assert!(model.embed(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_embedding_maps_to_first_basis_vector() {
        let model = TwoHeadModel::zeros(3, 4, 2, 1);
        assert_eq!(model.embed(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
        let mut v = vec![3.0, 4.0];
        normalize_or_basis(&mut v);
        assert_eq!(v, vec![0.6, 0.8]);
    }

    #[test]
    fn embedding_norm_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let model = TwoHeadModel::init(5, 12, 3, 2, &mut rng);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-10.0..10.0)).collect();
            let e = model.embed(&x).unwrap();
            let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn accuracy_examples() {
        let model = TwoHeadModel::zeros(1, 2, 2, 1);
        assert!(matches!(
            evaluate_accuracy(&model, &LabeledSet::empty(1), Level::Full),
            Err(Error::Evaluation(_))
        ));
        // Uniform predictions break ties toward class 0.
        let set = LabeledSet::new(1, vec![0.0; 5], vec![0, 1, 0, 1, 1]).unwrap();
        let zeros = set.labels.iter().filter(|&&l| l == 0).count() as f64 / 5.0;
        assert_eq!(evaluate_accuracy(&model, &set, Level::Full).unwrap(), zeros);

        // Hand-built model: class 1 iff x > 0.
        let mut model = TwoHeadModel::zeros(1, 1, 2, 1);
        model.w1[0] = 1.0;
        model.w_full = vec![0.0, 1.0];
        model.b_full = vec![0.5, 0.0];
        let set = LabeledSet::new(1, vec![-1.0, 2.0, 3.0, 4.0], vec![0, 1, 1, 0]).unwrap();
        assert_eq!(evaluate_accuracy(&model, &set, Level::Full).unwrap(), 0.75);
        let set = LabeledSet::new(1, vec![-1.0, 2.0], vec![0, 1]).unwrap();
        assert_eq!(evaluate_accuracy(&model, &set, Level::Full).unwrap(), 1.0);
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn empty_full_data_is_training_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let weak = random_set(&mut rng, 5, 2, 2);
        let err = train_two_stage(&TrainConfig::default(), 3, 2, &LabeledSet::empty(2), &weak, &mut rng);
        assert!(matches!(err, Err(Error::Training(_))));
    }

    #[test]
    fn training_is_deterministic() {
        let mut data_rng = ChaCha8Rng::seed_from_u64(5);
        let full = random_set(&mut data_rng, 30, 3, 4);
        let weak = random_set(&mut data_rng, 30, 3, 2);
        let cfg = TrainConfig {
            epochs_per_stage: 5,
            batch_size: 8,
            hidden_dim: 6,
            ..TrainConfig::default()
        };
        let a = train_two_stage(&cfg, 4, 2, &full, &weak, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = train_two_stage(&cfg, 4, 2, &full, &weak, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_weak_equals_single_stage() {
        let mut data_rng = ChaCha8Rng::seed_from_u64(6);
        let full = random_set(&mut data_rng, 25, 3, 3);
        let cfg = TrainConfig {
            epochs_per_stage: 7,
            batch_size: 4,
            hidden_dim: 5,
            ..TrainConfig::default()
        };
        let two = train_two_stage(
            &cfg,
            3,
            2,
            &full,
            &LabeledSet::empty(3),
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut single = TwoHeadModel::init(3, 5, 3, 2, &mut rng);
        fit_stage(&mut single, &full, Level::Full, &cfg, &mut rng).unwrap();
        for (a, b) in two.tensors().iter().zip(single.tensors()) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    /// Brute-force check that some direction `(cos θ, sin θ)` and offset
    /// separate the two classes.
    fn linearly_separable(set: &LabeledSet) -> bool {
        (0..3600).any(|step| {
            let theta = step as f64 * std::f64::consts::PI / 1800.0;
            let (c, s) = (theta.cos(), theta.sin());
            let proj: Vec<(f64, usize)> = (0..set.len())
                .map(|i| (set.row(i)[0] * c + set.row(i)[1] * s, set.labels[i]))
                .collect();
            let max0 = proj
                .iter()
                .filter(|p| p.1 == 0)
                .map(|p| p.0)
                .fold(f64::NEG_INFINITY, f64::max);
            let min1 = proj
                .iter()
                .filter(|p| p.1 == 1)
                .map(|p| p.0)
                .fold(f64::INFINITY, f64::min);
            max0 < min1
        })
    }

    #[test]
    fn separable_toy_reaches_full_training_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut set = LabeledSet::empty(2);
        for i in 0..20 {
            let label = i % 2;
            let sign = if label == 0 { -1.0 } else { 1.0 };
            let x = [
                sign * 1.5 + rng.random_range(-0.8..0.8),
                sign * 0.5 + rng.random_range(-0.8..0.8),
            ];
            set.push(&x, label);
        }
        assert!(linearly_separable(&set));
        let cfg = TrainConfig {
            epochs_per_stage: 200,
            batch_size: 4,
            hidden_dim: 16,
            ..TrainConfig::default()
        };
        let model = train_two_stage(&cfg, 2, 1, &set, &LabeledSet::empty(2), &mut rng).unwrap();
        assert_eq!(evaluate_accuracy(&model, &set, Level::Full).unwrap(), 1.0);
    }

    #[test]
    fn stage_two_loss_monotone_at_small_lr() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let full = random_set(&mut rng, 32, 4, 3);
        let cfg = TrainConfig {
            learning_rate: 1e-4,
            epochs_per_stage: 50,
            batch_size: 32,
            hidden_dim: 8,
            ..TrainConfig::default()
        };
        let mut model = TwoHeadModel::init(4, 8, 3, 2, &mut rng);
        let mut losses = vec![model.loss(&full, Level::Full)];
        for _ in 0..50 {
            let one = TrainConfig {
                epochs_per_stage: 1,
                ..cfg
            };
            fit_stage(&mut model, &full, Level::Full, &one, &mut rng).unwrap();
            losses.push(model.loss(&full, Level::Full));
        }
        assert!(losses.windows(2).all(|w| w[1] <= w[0]), "{losses:?}");
    }

    #[test]
    fn checkpoint_round_trip_and_rejects_garbage() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = TwoHeadModel::init(3, 5, 4, 2, &mut rng);
        let bytes = model.to_checkpoint_bytes();
        assert_eq!(TwoHeadModel::from_checkpoint_bytes(&bytes).unwrap(), model);
        assert!(TwoHeadModel::from_checkpoint_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(
            TwoHeadModel::from_checkpoint_bytes(&bad),
            Err(Error::Checkpoint(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn analytic_gradient_matches_finite_differences(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (d, h, c, s) = (3, 5, 4, 2);
            let model = TwoHeadModel::init(d, h, c, s, &mut rng);
            for level in [Level::Full, Level::Weak] {
                let data = random_set(&mut rng, 6, d, model.num_outputs(level));
                let rows: Vec<usize> = (0..data.len()).collect();
                let (_, grads) = model.loss_and_gradient(&data, &rows, level);
                let (w_idx, b_idx) = match level { Level::Full => (2, 3), Level::Weak => (4, 5) };
                for (t, g) in [(0, &grads.w1), (1, &grads.b1), (w_idx, &grads.head_w), (b_idx, &grads.head_b)] {
                    for (i, &analytic) in g.iter().enumerate() {
                        let mut plus = model.clone();
                        plus.tensors_mut()[t][i] += 1e-5;
                        let mut minus = model.clone();
                        minus.tensors_mut()[t][i] -= 1e-5;
                        let numeric = (plus.loss_and_gradient(&data, &rows, level).0
                            - minus.loss_and_gradient(&data, &rows, level).0) / 2e-5;
                        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
                        prop_assert!(rel < 1e-4, "tensor {} idx {}: {} vs {}", TENSOR_NAMES[t], i, analytic, numeric);
                    }
                }
            }
        }
    }
}
