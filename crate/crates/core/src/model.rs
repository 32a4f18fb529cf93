//! Residual multilayer perceptron for three-class classification.
//!
//! Layout: an initial block `affine → act → affine`, then `n_residual_blocks`
//! blocks computing `x + act(affine(act(affine(x))))`, then an affine layer to
//! three logits. Trained on mean softmax cross-entropy with mini-batch Adam.
//! Gradients are derived by hand; there is no autodiff.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::linalg::Matrix;

pub const N_CLASSES: usize = 3;
const FORMAT_TAG: &str = "ffdlab-mlp";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("expected {expected} input columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{rows} training rows is fewer than the batch size {batch_size}")]
    TooFewRows { rows: usize, batch_size: usize },
    #[error("label {0} outside 0..3")]
    InvalidLabel(usize),
    #[error("loss became non-finite at epoch {epoch} (learning rate {learning_rate})")]
    NonFiniteLoss { epoch: usize, learning_rate: f64 },
    #[error("label and prediction lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("unsupported model file: {0}")]
    BadFormat(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_residual_blocks: usize,
    pub activation: Activation,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            input_dim: 16,
            hidden_dim: 64,
            n_residual_blocks: 2,
            activation: Activation::Relu,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 100,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return bad("dimensions must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta1 and beta2 must lie in (0, 1)");
        }
        if !(self.learning_rate >= 0.0 && self.epsilon > 0.0) {
            return bad("learning_rate must be >= 0 and epsilon > 0");
        }
        Ok(())
    }
}

/// Parameter tensors in a fixed order:
/// `[W1, b1, W2, b2, (Wa, ba, Wb, bb) per block, Wo, bo]`.
/// Weights are `fan_in × fan_out`; biases are `1 × fan_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub config: MlpConfig,
    pub params: Vec<Matrix>,
    /// Mean training cross-entropy after each epoch.
    pub loss_history: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
    model: MlpModel,
}

struct ForwardCache {
    a1: Matrix,
    h1: Matrix,
    /// Input to each residual block, then the final hidden state.
    z: Vec<Matrix>,
    u: Vec<Matrix>,
    hu: Vec<Matrix>,
    v: Vec<Matrix>,
    logits: Matrix,
}

fn affine(x: &Matrix, w: &Matrix, b: &Matrix) -> Matrix {
    let mut out = x.matmul(w);
    for i in 0..out.rows() {
        for (o, bj) in out.row_mut(i).iter_mut().zip(b.as_slice()) {
            *o += bj;
        }
    }
    out
}

fn map(m: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    Matrix::from_vec(m.rows(), m.cols(), m.as_slice().iter().map(|&x| f(x)).collect())
}

fn hadamard_derivative(grad: &Matrix, pre: &Matrix, act: Activation) -> Matrix {
    let data = grad.as_slice().iter().zip(pre.as_slice()).map(|(g, &p)| g * act.derivative(p)).collect();
    Matrix::from_vec(grad.rows(), grad.cols(), data)
}

fn column_sums(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, m.cols());
    for i in 0..m.rows() {
        for (o, v) in out.as_mut_slice().iter_mut().zip(m.row(i)) {
            *o += v;
        }
    }
    out
}

/// Row-wise softmax, shifted by the row max.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut p = logits.clone();
    for i in 0..p.rows() {
        let row = p.row_mut(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    p
}

/// Mean cross-entropy of softmax(logits) against class indices.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / labels.len() as f64
}

impl MlpModel {
    /// He-uniform weights (`U(±sqrt(6 / fan_in))`) and zero biases.
    pub fn new(config: MlpConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut layer = |fan_in: usize, fan_out: usize| {
            let bound = (6.0 / fan_in as f64).sqrt();
            let w = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
            [Matrix::from_vec(fan_in, fan_out, w), Matrix::zeros(1, fan_out)]
        };
        let (d, h) = (config.input_dim, config.hidden_dim);
        let mut params = Vec::new();
        params.extend(layer(d, h));
        params.extend(layer(h, h));
        for _ in 0..config.n_residual_blocks {
            params.extend(layer(h, h));
            params.extend(layer(h, h));
        }
        params.extend(layer(h, N_CLASSES));
        Ok(MlpModel { config, params, loss_history: Vec::new() })
    }

    pub fn n_parameters(&self) -> usize {
        self.params.iter().map(|p| p.as_slice().len()).sum()
    }

    fn output_layer_index(&self) -> usize {
        4 + 4 * self.config.n_residual_blocks
    }

    /// Sets the output weights and bias to zero, making every prediction uniform.
    pub fn zero_output_layer(&mut self) {
        let o = self.output_layer_index();
        for p in &mut self.params[o..o + 2] {
            p.as_mut_slice().fill(0.0);
        }
    }

    /// Zeroes both affine layers of residual block `block`.
    pub fn zero_block(&mut self, block: usize) {
        let base = 4 + 4 * block;
        for p in &mut self.params[base..base + 4] {
            p.as_mut_slice().fill(0.0);
        }
    }

    fn check_input(&self, batch: &Matrix) -> Result<(), ModelError> {
        if batch.cols() != self.config.input_dim {
            return Err(ModelError::DimensionMismatch { expected: self.config.input_dim, got: batch.cols() });
        }
        Ok(())
    }

    fn forward_cached(&self, x: &Matrix) -> ForwardCache {
        let act = self.config.activation;
        let p = &self.params;
        let a1 = affine(x, &p[0], &p[1]);
        let h1 = map(&a1, |v| act.apply(v));
        let mut z = vec![affine(&h1, &p[2], &p[3])];
        let (mut us, mut hus, mut vs) = (Vec::new(), Vec::new(), Vec::new());
        for b in 0..self.config.n_residual_blocks {
            let base = 4 + 4 * b;
            let zin = z.last().expect("block input");
            let u = affine(zin, &p[base], &p[base + 1]);
            let hu = map(&u, |v| act.apply(v));
            let v = affine(&hu, &p[base + 2], &p[base + 3]);
            let mut next = zin.clone();
            for (n, &vv) in next.as_mut_slice().iter_mut().zip(v.as_slice()) {
                *n += act.apply(vv);
            }
            us.push(u);
            hus.push(hu);
            vs.push(v);
            z.push(next);
        }
        let o = self.output_layer_index();
        let logits = affine(z.last().expect("hidden"), &p[o], &p[o + 1]);
        ForwardCache { a1, h1, z, u: us, hu: hus, v: vs, logits }
    }

    /// Logits and softmax probabilities for each row.
    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, Matrix), ModelError> {
        self.check_input(batch)?;
        let logits = self.forward_cached(batch).logits;
        let probs = softmax(&logits);
        Ok((logits, probs))
    }

    /// Mean cross-entropy and its gradient with respect to every parameter tensor.
    pub fn loss_and_gradients(&self, x: &Matrix, labels: &[usize]) -> Result<(f64, Vec<Matrix>), ModelError> {
        self.check_input(x)?;
        let act = self.config.activation;
        let p = &self.params;
        let cache = self.forward_cached(x);
        let loss = cross_entropy(&cache.logits, labels);
        let n = labels.len() as f64;
        let mut dlogits = softmax(&cache.logits);
        for (i, &y) in labels.iter().enumerate() {
            dlogits[(i, y)] -= 1.0;
        }
        for v in dlogits.as_mut_slice() {
            *v /= n;
        }

        let mut grads: Vec<Matrix> = p.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
        let o = self.output_layer_index();
        let z_last = cache.z.last().expect("hidden");
        grads[o] = z_last.t_matmul(&dlogits);
        grads[o + 1] = column_sums(&dlogits);
        let mut dz = dlogits.matmul_t(&p[o]);

        for b in (0..self.config.n_residual_blocks).rev() {
            let base = 4 + 4 * b;
            let dv = hadamard_derivative(&dz, &cache.v[b], act);
            grads[base + 2] = cache.hu[b].t_matmul(&dv);
            grads[base + 3] = column_sums(&dv);
            let dhu = dv.matmul_t(&p[base + 2]);
            let du = hadamard_derivative(&dhu, &cache.u[b], act);
            grads[base] = cache.z[b].t_matmul(&du);
            grads[base + 1] = column_sums(&du);
            let through = du.matmul_t(&p[base]);
            for (d, t) in dz.as_mut_slice().iter_mut().zip(through.as_slice()) {
                *d += t;
            }
        }

        grads[2] = cache.h1.t_matmul(&dz);
        grads[3] = column_sums(&dz);
        let dh1 = dz.matmul_t(&p[2]);
        let da1 = hadamard_derivative(&dh1, &cache.a1, act);
        grads[0] = x.t_matmul(&da1);
        grads[1] = column_sums(&da1);
        Ok((loss, grads))
    }

    pub fn loss(&self, x: &Matrix, labels: &[usize]) -> Result<f64, ModelError> {
        self.check_input(x)?;
        Ok(cross_entropy(&self.forward_cached(x).logits, labels))
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        self.to_json_tagged(None)
    }

    /// Same as [`MlpModel::to_json`], recording the producing run's config hash.
    pub fn to_json_tagged(&self, config_hash: Option<&str>) -> Result<String, ModelError> {
        let file = ModelFile {
            format: FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            config_hash: config_hash.map(String::from),
            model: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != FORMAT_TAG || file.version != FORMAT_VERSION {
            return Err(ModelError::BadFormat(format!("{} v{}", file.format, file.version)));
        }
        let expected = MlpModel::new(file.model.config.clone())?;
        let shapes_ok = expected.params.len() == file.model.params.len()
            && expected
                .params
                .iter()
                .zip(&file.model.params)
                .all(|(a, b)| a.rows() == b.rows() && a.cols() == b.cols());
        if !shapes_ok {
            return Err(ModelError::BadFormat("parameter shapes do not match the config".into()));
        }
        Ok(file.model)
    }
}

fn validate_labels(labels: &[usize]) -> Result<(), ModelError> {
    match labels.iter().find(|&&l| l >= N_CLASSES) {
        Some(&l) => Err(ModelError::InvalidLabel(l)),
        None => Ok(()),
    }
}

/// Mini-batch Adam on mean cross-entropy. Initialization and the per-epoch
/// shuffle are both drawn from `cfg.seed`, so equal inputs give bit-identical
/// models.
pub fn train(features: &Matrix, labels: &[usize], cfg: &MlpConfig) -> Result<MlpModel, ModelError> {
    let mut model = MlpModel::new(cfg.clone())?;
    model.check_input(features)?;
    if features.rows() != labels.len() {
        return Err(ModelError::LengthMismatch(features.rows(), labels.len()));
    }
    validate_labels(labels)?;
    let rows = labels.len();
    if rows < cfg.batch_size {
        return Err(ModelError::TooFewRows { rows, batch_size: cfg.batch_size });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut m: Vec<Matrix> = model.params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
    let mut v = m.clone();
    let mut step = 0i32;
    let mut order: Vec<usize> = (0..rows).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let xb = features.select_rows(batch);
            let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (loss, grads) = model.loss_and_gradients(&xb, &yb)?;
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch, learning_rate: cfg.learning_rate });
            }
            step += 1;
            let bc1 = 1.0 - cfg.beta1.powi(step);
            let bc2 = 1.0 - cfg.beta2.powi(step);
            for ((param, g), (mt, vt)) in model.params.iter_mut().zip(&grads).zip(m.iter_mut().zip(v.iter_mut())) {
                let ps = param.as_mut_slice();
                let ms = mt.as_mut_slice();
                let vs = vt.as_mut_slice();
                for (k, &gk) in g.as_slice().iter().enumerate() {
                    ms[k] = cfg.beta1 * ms[k] + (1.0 - cfg.beta1) * gk;
                    vs[k] = cfg.beta2 * vs[k] + (1.0 - cfg.beta2) * gk * gk;
                    let mhat = ms[k] / bc1;
                    let vhat = vs[k] / bc2;
                    ps[k] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
                }
            }
        }
        let epoch_loss = model.loss(features, labels)?;
        if !epoch_loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { epoch, learning_rate: cfg.learning_rate });
        }
        model.loss_history.push(epoch_loss);
    }
    Ok(model)
}

/// Row-wise argmax of the logits; ties resolve to the lowest class.
pub fn argmax_rows(logits: &Matrix) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn predict(model: &MlpModel, features: &Matrix) -> Result<Vec<usize>, ModelError> {
    predict_with(model, features, Execution::Sequential)
}

/// Predictions computed in row chunks; chunking does not change the result.
pub fn predict_with(model: &MlpModel, features: &Matrix, exec: Execution) -> Result<Vec<usize>, ModelError> {
    model.check_input(features)?;
    const CHUNK: usize = 256;
    let n_chunks = features.rows().div_ceil(CHUNK);
    let parts = exec.map_range(n_chunks, |c| {
        let idx: Vec<usize> = (c * CHUNK..((c + 1) * CHUNK).min(features.rows())).collect();
        argmax_rows(&model.forward_cached(&features.select_rows(&idx)).logits)
    });
    Ok(parts.concat())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    /// Set when the metric's denominator was zero and it was reported as 0.
    pub precision_zero_division: bool,
    pub recall_zero_division: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AverageMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub per_class: Vec<ClassMetrics>,
    pub macro_avg: AverageMetrics,
    pub weighted_avg: AverageMetrics,
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion_matrix: [[usize; N_CLASSES]; N_CLASSES],
    pub total: usize,
}

pub fn classification_report(y_true: &[usize], y_pred: &[usize]) -> Result<ClassificationReport, ModelError> {
    if y_true.len() != y_pred.len() {
        return Err(ModelError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    validate_labels(y_true)?;
    validate_labels(y_pred)?;
    let mut cm = [[0usize; N_CLASSES]; N_CLASSES];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        cm[t][p] += 1;
    }
    let total = y_true.len();
    let per_class: Vec<ClassMetrics> = (0..N_CLASSES)
        .map(|c| {
            let tp = cm[c][c];
            let predicted: usize = (0..N_CLASSES).map(|r| cm[r][c]).sum();
            let support: usize = cm[c].iter().sum();
            let ratio = |num: usize, den: usize| if den == 0 { (0.0, true) } else { (num as f64 / den as f64, false) };
            let (precision, pz) = ratio(tp, predicted);
            let (recall, rz) = ratio(tp, support);
            let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            ClassMetrics { precision, recall, f1, support, precision_zero_division: pz, recall_zero_division: rz }
        })
        .collect();
    let k = N_CLASSES as f64;
    let macro_avg = AverageMetrics {
        precision: per_class.iter().map(|c| c.precision).sum::<f64>() / k,
        recall: per_class.iter().map(|c| c.recall).sum::<f64>() / k,
        f1: per_class.iter().map(|c| c.f1).sum::<f64>() / k,
    };
    let w = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(|c| c.support as f64 * f(c)).sum::<f64>() / total as f64;
    let weighted_avg = AverageMetrics { precision: w(|c| c.precision), recall: w(|c| c.recall), f1: w(|c| c.f1) };
    let accuracy = (0..N_CLASSES).map(|c| cm[c][c]).sum::<usize>() as f64 / total as f64;
    Ok(ClassificationReport { per_class, macro_avg, weighted_avg, accuracy, confusion_matrix: cm, total })
}

impl ClassificationReport {
    /// Aligned text table: one row per class, then accuracy, macro and weighted averages.
    pub fn to_text(&self) -> String {
        let mut s = format!("{:>12} {:>9} {:>9} {:>9} {:>9}\n\n", "", "precision", "recall", "f1-score", "support");
        for (c, m) in self.per_class.iter().enumerate() {
            s += &format!("{:>12} {:>9.2} {:>9.2} {:>9.2} {:>9}\n", c, m.precision, m.recall, m.f1, m.support);
        }
        s += "\n";
        s += &format!("{:>12} {:>9} {:>9} {:>9.2} {:>9}\n", "accuracy", "", "", self.accuracy, self.total);
        for (name, a) in [("macro avg", self.macro_avg), ("weighted avg", self.weighted_avg)] {
            s += &format!("{:>12} {:>9.2} {:>9.2} {:>9.2} {:>9}\n", name, a.precision, a.recall, a.f1, self.total);
        }
        s += "\nconfusion matrix (rows: true, columns: predicted)\n";
        for row in &self.confusion_matrix {
            s += &format!("{:>12} {:>9} {:>9} {:>9}\n", "", row[0], row[1], row[2]);
        }
        s
    }
}
