//! Region predictor: a one-hidden-layer perceptron with independent sigmoid
//! outputs, trained with a binary focal loss, plus the exponential moving
//! average that fuses per-frame confidences over time.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MODEL_MAGIC: [u8; 4] = *b"RGNP";
pub const MODEL_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("feature dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("probability vector has {got} entries, expected at least {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("label {label} out of range for {n_regions} regions")]
    LabelOutOfRange { label: usize, n_regions: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model file version {0}")]
    UnsupportedVersion(u16),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    pub d_in: usize,
    pub hidden: usize,
    pub n_regions: usize,
    /// hidden × d_in, row-major
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// n_regions × hidden, row-major
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub seed: u64,
}

impl PredictorModel {
    /// Randomly initialized model: He-uniform hidden layer, Glorot-uniform
    /// output layer, zero biases.
    pub fn new(d_in: usize, hidden: usize, n_regions: usize, seed: u64) -> Result<Self, PredictorError> {
        if d_in == 0 || hidden == 0 || n_regions == 0 {
            return Err(PredictorError::InvalidConfig(
                "d_in, hidden and n_regions must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lim1 = (6.0 / d_in as f64).sqrt();
        let lim2 = (6.0 / (hidden + n_regions) as f64).sqrt();
        let w1 = (0..hidden * d_in).map(|_| rng.random_range(-lim1..lim1)).collect();
        let w2 = (0..n_regions * hidden)
            .map(|_| rng.random_range(-lim2..lim2))
            .collect();
        Ok(Self {
            d_in,
            hidden,
            n_regions,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; n_regions],
            seed,
        })
    }

    pub fn zeros(d_in: usize, hidden: usize, n_regions: usize) -> Self {
        Self {
            d_in,
            hidden,
            n_regions,
            w1: vec![0.0; hidden * d_in],
            b1: vec![0.0; hidden],
            w2: vec![0.0; n_regions * hidden],
            b2: vec![0.0; n_regions],
            seed: 0,
        }
    }

    fn check_dim(&self, feature: &[f64]) -> Result<(), PredictorError> {
        if feature.len() != self.d_in {
            return Err(PredictorError::DimensionMismatch {
                expected: self.d_in,
                got: feature.len(),
            });
        }
        Ok(())
    }

    /// Per-region confidences σ(W2·relu(W1·x + b1) + b2). The outputs are
    /// independent and need not sum to one.
    pub fn forward(&self, feature: &[f64]) -> Result<Vec<f64>, PredictorError> {
        self.check_dim(feature)?;
        let mut pre = vec![0.0; self.hidden];
        let mut out = vec![0.0; self.n_regions];
        self.forward_into(feature, &mut pre, &mut out);
        Ok(out)
    }

    /// Fills `pre` with hidden pre-activations and `out` with confidences.
    fn forward_into(&self, x: &[f64], pre: &mut [f64], out: &mut [f64]) {
        for (j, slot) in pre.iter_mut().enumerate() {
            let row = &self.w1[j * self.d_in..(j + 1) * self.d_in];
            *slot = self.b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        for (i, slot) in out.iter_mut().enumerate() {
            let row = &self.w2[i * self.hidden..(i + 1) * self.hidden];
            let z = self.b2[i]
                + row
                    .iter()
                    .zip(pre.iter())
                    .map(|(w, h)| w * h.max(0.0))
                    .sum::<f64>();
            *slot = sigmoid(z);
        }
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), PredictorError> {
        out.write_all(&MODEL_MAGIC)?;
        out.write_all(&MODEL_VERSION.to_le_bytes())?;
        for dim in [self.d_in, self.hidden, self.n_regions] {
            let dim = u32::try_from(dim)
                .map_err(|_| PredictorError::InvalidConfig("dimension exceeds u32".into()))?;
            out.write_all(&dim.to_le_bytes())?;
        }
        for v in self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2) {
            out.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self, PredictorError> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if magic != MODEL_MAGIC {
            return Err(PredictorError::BadMagic);
        }
        let mut v = [0u8; 2];
        input.read_exact(&mut v)?;
        let version = u16::from_le_bytes(v);
        if version != MODEL_VERSION {
            return Err(PredictorError::UnsupportedVersion(version));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            let mut b = [0u8; 4];
            input.read_exact(&mut b)?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let [d_in, hidden, n_regions] = dims;
        let mut read_vec = |n: usize| -> io::Result<Vec<f64>> {
            let mut bytes = vec![0u8; n * 4];
            input.read_exact(&mut bytes)?;
            Ok(bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect())
        };
        Ok(Self {
            d_in,
            hidden,
            n_regions,
            w1: read_vec(hidden * d_in)?,
            b1: read_vec(hidden)?,
            w2: read_vec(n_regions * hidden)?,
            b2: read_vec(n_regions)?,
            seed: 0,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), PredictorError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PredictorError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Focal exponent γ.
    pub gamma: f64,
    pub step_size: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub clamp_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            step_size: 0.1,
            epochs: 100,
            batch: 32,
            seed: 0,
            clamp_eps: 1e-7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PredictorError> {
        let bad = |m: &str| Err(PredictorError::InvalidConfig(m.into()));
        if !(self.gamma >= 0.0) {
            return bad("gamma must be >= 0");
        }
        if !(self.step_size > 0.0) {
            return bad("step_size must be positive");
        }
        if self.batch == 0 {
            return bad("batch must be positive");
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return bad("clamp_eps must lie in (0, 0.5)");
        }
        Ok(())
    }
}

/// Binary focal loss summed over regions against a one-hot target:
/// −(1−σₜ)^γ·ln σₜ − Σ_{i≠t} σᵢ^γ·ln(1−σᵢ), with σ clamped to
/// [eps, 1−eps].
pub fn focal_loss(confidences: &[f64], target: usize, gamma: f64, clamp_eps: f64) -> f64 {
    confidences
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let s = s.clamp(clamp_eps, 1.0 - clamp_eps);
            if i == target {
                -(1.0 - s).powf(gamma) * s.ln()
            } else {
                -s.powf(gamma) * (1.0 - s).ln()
            }
        })
        .sum()
}

/// d(focal loss)/d(logit) for one output. Zero where the clamp is active.
fn focal_logit_grad(s: f64, is_target: bool, gamma: f64, clamp_eps: f64) -> f64 {
    if s < clamp_eps || s > 1.0 - clamp_eps {
        return 0.0;
    }
    if is_target {
        let q = 1.0 - s;
        gamma * s * q.powf(gamma) * s.ln() - q.powf(gamma + 1.0)
    } else {
        let q = 1.0 - s;
        -gamma * s.powf(gamma) * q * q.ln() + s.powf(gamma + 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Gradients {
    fn zeros_like(m: &PredictorModel) -> Self {
        Self {
            w1: vec![0.0; m.w1.len()],
            b1: vec![0.0; m.b1.len()],
            w2: vec![0.0; m.w2.len()],
            b2: vec![0.0; m.b2.len()],
        }
    }

    /// Flattened in the same order as [`PredictorModel::params_mut`].
    pub fn flatten(&self) -> Vec<f64> {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .copied()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub feature: Vec<f64>,
    pub region: usize,
}

/// Mean focal loss over `batch` and its analytic gradient.
pub fn loss_and_gradient(
    model: &PredictorModel,
    batch: &[&LabeledExample],
    gamma: f64,
    clamp_eps: f64,
) -> (f64, Gradients) {
    let mut grads = Gradients::zeros_like(model);
    let mut pre = vec![0.0; model.hidden];
    let mut out = vec![0.0; model.n_regions];
    let mut dz = vec![0.0; model.n_regions];
    let mut dh = vec![0.0; model.hidden];
    let scale = 1.0 / batch.len().max(1) as f64;
    let mut total = 0.0;

    for ex in batch {
        let x = &ex.feature;
        model.forward_into(x, &mut pre, &mut out);
        total += focal_loss(&out, ex.region, gamma, clamp_eps);

        for (i, g) in dz.iter_mut().enumerate() {
            *g = focal_logit_grad(out[i], i == ex.region, gamma, clamp_eps) * scale;
        }
        dh.iter_mut().for_each(|v| *v = 0.0);
        for (i, &g) in dz.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grads.b2[i] += g;
            let row = i * model.hidden;
            for j in 0..model.hidden {
                grads.w2[row + j] += g * pre[j].max(0.0);
                dh[j] += g * model.w2[row + j];
            }
        }
        for j in 0..model.hidden {
            if pre[j] <= 0.0 || dh[j] == 0.0 {
                continue;
            }
            grads.b1[j] += dh[j];
            let row = j * model.d_in;
            for (k, &xv) in x.iter().enumerate() {
                grads.w1[row + k] += dh[j] * xv;
            }
        }
    }
    (total * scale, grads)
}

/// Mini-batch gradient descent on the mean focal loss. Returns the trained
/// model and the mean training loss of every epoch.
pub fn train(
    model: &PredictorModel,
    dataset: &[LabeledExample],
    config: &TrainConfig,
) -> Result<(PredictorModel, Vec<f64>), PredictorError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(PredictorError::EmptyDataset);
    }
    for ex in dataset {
        model.check_dim(&ex.feature)?;
        if ex.region >= model.n_regions {
            return Err(PredictorError::LabelOutOfRange {
                label: ex.region,
                n_regions: model.n_regions,
            });
        }
    }

    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch) {
            let batch: Vec<&LabeledExample> = chunk.iter().map(|&i| &dataset[i]).collect();
            let (loss, g) = loss_and_gradient(&model, &batch, config.gamma, config.clamp_eps);
            epoch_loss += loss * chunk.len() as f64;
            let step = config.step_size;
            for (p, d) in model.params_mut().zip(g.flatten()) {
                *p -= step * d;
            }
        }
        history.push(epoch_loss / dataset.len() as f64);
    }
    Ok((model, history))
}

/// Exponential moving average over per-region confidences:
/// pₜ = α·oₜ + (1−α)·pₜ₋₁. A region's first observation is copied as is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaState {
    alpha: f64,
    p: Vec<f64>,
    initialized: Vec<bool>,
}

impl EmaState {
    pub fn new(alpha: f64) -> Result<Self, PredictorError> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(PredictorError::InvalidConfig("alpha must lie in (0, 1]".into()));
        }
        Ok(Self {
            alpha,
            p: Vec::new(),
            initialized: Vec::new(),
        })
    }

    /// State whose previous probabilities are already `p0`.
    pub fn with_initial(alpha: f64, p0: Vec<f64>) -> Result<Self, PredictorError> {
        let mut s = Self::new(alpha)?;
        if let Some(&bad) = p0.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(PredictorError::InvalidProbability(bad));
        }
        s.initialized = vec![true; p0.len()];
        s.p = p0;
        Ok(s)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    /// Folds one observation in. `o` may be longer than the current state
    /// (regions created since the last call) but never shorter.
    pub fn update(&mut self, o: &[f64]) -> Result<&[f64], PredictorError> {
        if o.len() < self.p.len() {
            return Err(PredictorError::LengthMismatch {
                expected: self.p.len(),
                got: o.len(),
            });
        }
        if let Some(&bad) = o.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(PredictorError::InvalidProbability(bad));
        }
        self.p.resize(o.len(), 0.0);
        self.initialized.resize(o.len(), false);
        for ((p, init), &obs) in self.p.iter_mut().zip(self.initialized.iter_mut()).zip(o) {
            if *init {
                *p = self.alpha * obs + (1.0 - self.alpha) * *p;
            } else {
                *p = obs;
                *init = true;
            }
        }
        Ok(&self.p)
    }
}

/// The `min(k, len)` indices with the highest values, descending; ties go to
/// the lower index.
pub fn top_k(p: &[f64], k: usize) -> Vec<usize> {
    let order = |a: &usize, b: &usize| p[*b].total_cmp(&p[*a]).then(a.cmp(b));
    let mut idx: Vec<usize> = (0..p.len()).collect();
    let k = k.min(idx.len());
    if k == 0 {
        return Vec::new();
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, order);
        idx.truncate(k);
    }
    idx.sort_by(order);
    idx
}
