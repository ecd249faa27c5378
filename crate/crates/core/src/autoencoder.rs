//! Fully-connected autoencoder with a mirrored decoder, trained with
//! mini-batch Adam on binary cross-entropy.
//!
//! Every hidden layer (the bottleneck included) uses ReLU and the output layer
//! uses the logistic sigmoid. Weights are stored `fan_in × fan_out` so a batch
//! forward step is `A·W + b`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::sigmoid;
use crate::error::{Error, Result};
use crate::matrix::{gemm, DenseMatrix};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    /// Encoder hidden widths, input side first.
    pub widths: Vec<usize>,
    pub encoding_dim: usize,
}

impl LayerSpec {
    pub fn new(widths: Vec<usize>, encoding_dim: usize) -> Result<Self> {
        let s = Self { widths, encoding_dim };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config(format!("hidden widths must be non-empty and positive, got {:?}", self.widths)));
        }
        if self.encoding_dim == 0 {
            return Err(Error::Config("encoding_dim must be positive".into()));
        }
        Ok(())
    }

    /// Layer widths from input to reconstruction: `d, w1..wL, e, wL..w1, d`.
    pub fn layer_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.widths);
        dims.push(self.encoding_dim);
        dims.extend(self.widths.iter().rev());
        dims.push(input_dim);
        dims
    }
}

/// The six orderings of three hidden widths, in lexicographic order of
/// index permutations.
pub fn structure_permutations(widths: [usize; 3]) -> Vec<Vec<usize>> {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    PERMS.iter().map(|p| p.iter().map(|&i| widths[i]).collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-7,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 || self.batch_size > n {
            return Err(Error::Config(format!("batch_size must be in 1..={n}, got {}", self.batch_size)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if !(self.adam_epsilon > 0.0 && self.adam_epsilon.is_finite()) {
            return Err(Error::Config(format!("adam_epsilon must be positive, got {}", self.adam_epsilon)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_in × fan_out`.
    pub w: DenseMatrix,
    pub b: Vec<f64>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: DenseMatrix::zeros(fan_in, fan_out),
            b: vec![0.0; fan_out],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    /// Encoder layers followed by decoder layers.
    pub layers: Vec<Layer>,
    pub spec: LayerSpec,
    pub input_dim: usize,
}

/// Glorot-uniform weights in `±√(6/(fan_in+fan_out))`.
pub fn glorot_init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Result<DenseMatrix> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::invalid("glorot_init needs positive fan_in and fan_out"));
    }
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Ok(DenseMatrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..=bound)))
}

impl AutoencoderModel {
    pub fn init(input_dim: usize, spec: &LayerSpec, rng: SeededRng) -> Result<Self> {
        spec.validate()?;
        if input_dim == 0 {
            return Err(Error::invalid("input dimension must be positive"));
        }
        let mut g = rng.rng();
        let dims = spec.layer_dims(input_dim);
        let layers = dims
            .windows(2)
            .map(|p| {
                Ok(Layer {
                    w: glorot_init(p[0], p[1], &mut g)?,
                    b: vec![0.0; p[1]],
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            layers,
            spec: spec.clone(),
            input_dim,
        })
    }

    /// Same architecture with every weight and bias zero.
    pub fn zeros(input_dim: usize, spec: &LayerSpec) -> Self {
        let dims = spec.layer_dims(input_dim);
        Self {
            layers: dims.windows(2).map(|p| Layer::zeros(p[0], p[1])).collect(),
            spec: spec.clone(),
            input_dim,
        }
    }

    pub fn encoder_len(&self) -> usize {
        self.spec.widths.len() + 1
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.as_slice().len() + l.b.len()).sum()
    }
}

/// Pre-activations of every layer; the last entry holds the output logits.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub input: DenseMatrix,
    pub pre: Vec<DenseMatrix>,
    pub reconstruction: DenseMatrix,
}

impl ForwardPass {
    fn activation(&self, layer: usize) -> DenseMatrix {
        self.pre[layer].map(relu)
    }
}

#[inline]
fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// `A·W + 1·bᵀ`.
fn affine(a: &DenseMatrix, layer: &Layer) -> DenseMatrix {
    let mut out = DenseMatrix::from_fn(a.rows(), layer.b.len(), |_, j| layer.b[j]);
    gemm(1.0, a, false, &layer.w, false, 1.0, &mut out);
    out
}

fn run_layers(layers: &[Layer], x: &DenseMatrix, last_relu: bool) -> (Vec<DenseMatrix>, DenseMatrix) {
    let mut pre = Vec::with_capacity(layers.len());
    let mut a = x.clone();
    for (i, layer) in layers.iter().enumerate() {
        let z = affine(&a, layer);
        a = if i + 1 < layers.len() || last_relu { z.map(relu) } else { z.map(sigmoid) };
        pre.push(z);
    }
    (pre, a)
}

fn check_input(model: &AutoencoderModel, x: &DenseMatrix, op: &'static str) -> Result<()> {
    if x.cols() != model.input_dim {
        return Err(Error::dim(op, model.input_dim, x.cols()));
    }
    Ok(())
}

pub fn forward(model: &AutoencoderModel, x: &DenseMatrix) -> Result<ForwardPass> {
    check_input(model, x, "forward")?;
    let (pre, reconstruction) = run_layers(&model.layers, x, false);
    Ok(ForwardPass {
        input: x.clone(),
        pre,
        reconstruction,
    })
}

/// Encoder half only: the bottleneck activations, `n × e`.
pub fn encode(model: &AutoencoderModel, x: &DenseMatrix) -> Result<DenseMatrix> {
    check_input(model, x, "encode")?;
    let (_, y) = run_layers(&model.layers[..model.encoder_len()], x, true);
    if y.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "encoding".into() });
    }
    Ok(y)
}

fn check_targets(x: &DenseMatrix) -> Result<()> {
    if let Some(v) = x.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("cross-entropy targets must lie in [0, 1], found {v}")));
    }
    Ok(())
}

/// Binary cross-entropy, summed over features and averaged over samples.
pub fn bce_loss(x: &DenseMatrix, x_hat: &DenseMatrix) -> Result<f64> {
    if x.shape() != x_hat.shape() {
        return Err(Error::dim("bce_loss", format!("{:?}", x.shape()), format!("{:?}", x_hat.shape())));
    }
    check_targets(x)?;
    let mut total = 0.0;
    for (&t, &p) in x.as_slice().iter().zip(x_hat.as_slice()) {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::invalid(format!("predictions must lie in (0, 1), found {p}")));
        }
        total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    }
    Ok(total / x.rows() as f64)
}

/// `log(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Same loss evaluated from output logits; finite even where the sigmoid
/// rounds to 0 or 1.
fn bce_from_logits(x: &DenseMatrix, logits: &DenseMatrix) -> f64 {
    let total: f64 = x
        .as_slice()
        .iter()
        .zip(logits.as_slice())
        .map(|(&t, &z)| softplus(z) - t * z)
        .sum();
    total / x.rows() as f64
}

/// Loss of the model on `x`.
pub fn loss(model: &AutoencoderModel, x: &DenseMatrix) -> Result<f64> {
    check_targets(x)?;
    let fp = forward(model, x)?;
    Ok(bce_from_logits(x, fp.pre.last().unwrap()))
}

/// Mean squared reconstruction error per sample (a diagnostic, not trained on).
pub fn reconstruction_sq_error(model: &AutoencoderModel, x: &DenseMatrix) -> Result<f64> {
    let fp = forward(model, x)?;
    Ok(fp.reconstruction.sub(x)?.frobenius_norm().powi(2) / x.rows() as f64)
}

/// Analytic gradient of the batch loss, shaped like `model.layers`.
pub fn backward(model: &AutoencoderModel, fp: &ForwardPass) -> Vec<Layer> {
    let nl = model.layers.len();
    let inv_n = 1.0 / fp.input.rows() as f64;
    let mut grads = Vec::with_capacity(nl);
    // output layer: d loss / d logits = (σ(z) − x) / n
    let mut delta = DenseMatrix::from_fn(fp.input.rows(), fp.input.cols(), |i, j| {
        (fp.reconstruction[(i, j)] - fp.input[(i, j)]) * inv_n
    });
    for l in (0..nl).rev() {
        let prev = if l == 0 { fp.input.clone() } else { fp.activation(l - 1) };
        let gw = prev.t_matmul(&delta).expect("shapes chain");
        let gb = delta.column_sums();
        if l > 0 {
            let mut back = delta.matmul_t(&model.layers[l].w).expect("shapes chain");
            for (v, &z) in back.as_mut_slice().iter_mut().zip(fp.pre[l - 1].as_slice()) {
                if z <= 0.0 {
                    *v = 0.0;
                }
            }
            delta = back;
        }
        grads.push(Layer { w: gw, b: gb });
    }
    grads.reverse();
    grads
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Layer>,
    v: Vec<Layer>,
    pub step: u64,
}

impl AdamState {
    pub fn new(model: &AutoencoderModel) -> Self {
        let z: Vec<Layer> = model.layers.iter().map(|l| Layer::zeros(l.w.rows(), l.w.cols())).collect();
        Self {
            m: z.clone(),
            v: z,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(model: &mut AutoencoderModel, grads: &[Layer], state: &mut AdamState, cfg: &TrainConfig) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
        }
    };
    for (l, layer) in model.layers.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[l], &mut state.v[l]);
        update(layer.w.as_mut_slice(), grads[l].w.as_slice(), m.w.as_mut_slice(), v.w.as_mut_slice());
        update(&mut layer.b, &grads[l].b, &mut m.b, &mut v.b);
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: AutoencoderModel,
    /// Sample-weighted mean batch loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Models captured at the end of the requested epochs, ascending.
    pub snapshots: Vec<(usize, AutoencoderModel)>,
}

pub fn train(x: &DenseMatrix, spec: &LayerSpec, cfg: &TrainConfig) -> Result<AutoencoderModel> {
    train_with_snapshots(x, spec, cfg, &[]).map(|o| o.model)
}

/// Train for `cfg.epochs`, keeping copies of the model after each epoch listed
/// in `snapshot_epochs` (1-based). Since training is deterministic, the
/// snapshot at epoch `t` equals the result of a `t`-epoch run.
pub fn train_with_snapshots(
    x: &DenseMatrix,
    spec: &LayerSpec,
    cfg: &TrainConfig,
    snapshot_epochs: &[usize],
) -> Result<TrainOutcome> {
    spec.validate()?;
    cfg.validate(x.rows())?;
    check_targets(x)?;
    if let Some(&e) = snapshot_epochs.iter().find(|&&e| e == 0 || e > cfg.epochs) {
        return Err(Error::Config(format!("snapshot epoch {e} outside 1..={}", cfg.epochs)));
    }
    let base = SeededRng::new(cfg.seed);
    let mut model = AutoencoderModel::init(x.cols(), spec, base.derive(0))?;
    let mut shuffle = base.derive(1).rng();
    let mut state = AdamState::new(&model);
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut snapshots = Vec::new();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch = x.select_rows(idx);
            let fp = forward(&model, &batch)?;
            let l = bce_from_logits(&batch, fp.pre.last().unwrap());
            if !l.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("training loss at epoch {epoch}, batch {}", bi + 1),
                });
            }
            total += l * idx.len() as f64;
            let grads = backward(&model, &fp);
            adam_step(&mut model, &grads, &mut state, cfg);
        }
        epoch_losses.push(total / x.rows() as f64);
        if snapshot_epochs.contains(&epoch) {
            snapshots.push((epoch, model.clone()));
        }
    }
    Ok(TrainOutcome {
        model,
        epoch_losses,
        snapshots,
    })
}

/// Where an encoding came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingProvenance {
    pub spec: LayerSpec,
    pub train: TrainConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodingSet {
    pub encodings: Vec<DenseMatrix>,
    pub provenance: Vec<EncodingProvenance>,
}

impl EncodingSet {
    pub fn new(encodings: Vec<DenseMatrix>, provenance: Vec<EncodingProvenance>) -> Result<Self> {
        let first = encodings.first().ok_or_else(|| Error::invalid("encoding set must not be empty"))?;
        if provenance.len() != encodings.len() {
            return Err(Error::dim("EncodingSet::new", encodings.len(), provenance.len()));
        }
        if let Some(bad) = encodings.iter().find(|y| y.rows() != first.rows()) {
            return Err(Error::dim("EncodingSet::new", first.rows(), bad.rows()));
        }
        Ok(Self { encodings, provenance })
    }

    pub fn m(&self) -> usize {
        self.encodings.len()
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"SCAE";

/// `SCAE`, layer count (u64 LE), then per layer fan_in and fan_out (u64 LE),
/// row-major weights and biases (f64 LE).
pub fn write_checkpoint<W: Write>(mut w: W, model: &AutoencoderModel) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(model.layers.len() as u64).to_le_bytes())?;
    for layer in &model.layers {
        w.write_all(&(layer.w.rows() as u64).to_le_bytes())?;
        w.write_all(&(layer.w.cols() as u64).to_le_bytes())?;
        for v in layer.w.as_slice().iter().chain(&layer.b) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<AutoencoderModel> {
    let truncated = |_| Error::Format("truncated checkpoint".into());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let read_u64 = |r: &mut R| -> Result<u64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(truncated)?;
        Ok(u64::from_le_bytes(b))
    };
    let count = read_u64(&mut r)? as usize;
    if count < 4 || count % 2 != 0 {
        return Err(Error::Format(format!("checkpoint layer count {count} is not a mirrored stack")));
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let fan_in = read_u64(&mut r)? as usize;
        let fan_out = read_u64(&mut r)? as usize;
        let total = fan_in
            .checked_mul(fan_out)
            .and_then(|v| v.checked_add(fan_out))
            .ok_or_else(|| Error::Format("layer size overflows".into()))?;
        let mut vals = Vec::with_capacity(total.min(1 << 24));
        for _ in 0..total {
            vals.push(f64::from_bits(read_u64(&mut r)?));
        }
        let b = vals.split_off(fan_in * fan_out);
        layers.push(Layer {
            w: DenseMatrix::new(fan_in, fan_out, vals)?,
            b,
        });
    }
    let dims: Vec<usize> = std::iter::once(layers[0].w.rows()).chain(layers.iter().map(|l| l.w.cols())).collect();
    if layers.windows(2).any(|p| p[0].w.cols() != p[1].w.rows()) {
        return Err(Error::Format("checkpoint layer shapes do not chain".into()));
    }
    let half = count / 2;
    let spec = LayerSpec {
        widths: dims[1..half].to_vec(),
        encoding_dim: dims[half],
    };
    let input_dim = dims[0];
    if spec.layer_dims(input_dim) != dims {
        return Err(Error::Format("checkpoint decoder does not mirror the encoder".into()));
    }
    Ok(AutoencoderModel { layers, spec, input_dim })
}

pub fn save_checkpoint(model: &AutoencoderModel, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<AutoencoderModel> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

/// Largest relative disagreement between `backward` and central finite
/// differences with step `h`, over every weight and bias.
pub fn gradient_check(model: &AutoencoderModel, x: &DenseMatrix, h: f64) -> Result<f64> {
    let fp = forward(model, x)?;
    let grads = backward(model, &fp);
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    let mut compare = |analytic: f64, numeric: f64| {
        let scale = analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic - numeric).abs() / scale);
    };
    for l in 0..model.layers.len() {
        for i in 0..model.layers[l].w.as_slice().len() {
            let orig = model.layers[l].w.as_slice()[i];
            probe.layers[l].w.as_mut_slice()[i] = orig + h;
            let up = loss(&probe, x)?;
            probe.layers[l].w.as_mut_slice()[i] = orig - h;
            let down = loss(&probe, x)?;
            probe.layers[l].w.as_mut_slice()[i] = orig;
            compare(grads[l].w.as_slice()[i], (up - down) / (2.0 * h));
        }
        for i in 0..model.layers[l].b.len() {
            let orig = model.layers[l].b[i];
            probe.layers[l].b[i] = orig + h;
            let up = loss(&probe, x)?;
            probe.layers[l].b[i] = orig - h;
            let down = loss(&probe, x)?;
            probe.layers[l].b[i] = orig;
            compare(grads[l].b[i], (up - down) / (2.0 * h));
        }
    }
    Ok(worst)
}
