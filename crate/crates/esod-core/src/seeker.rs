//! Objectness-mask estimation and its training losses.
//!
//! The estimator is deliberately tiny: a 13x13 depthwise block (BN + ReLU)
//! followed by a 1x1 convolution down to one channel, squashed by a sigmoid.
//! Losses are a focal/dice pair combined 20:1, with analytic gradients both
//! with respect to the logits and with respect to every parameter, so the
//! module can be optimised by plain gradient descent and the gradients can be
//! checked against finite differences.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{
    batchnorm_apply, conv2d, depthwise_conv, sigmoid, Activation, BatchNorm, ConvSpec,
    FeatureStack, Grid2D,
};

/// Depthwise kernel side; large to widen the receptive field.
pub const DW_KERNEL: usize = 13;

/// Focal-loss focusing exponent.
pub const FOCAL_GAMMA: f64 = 2.0;
/// Focal-loss positive-class weight.
pub const FOCAL_ALPHA: f64 = 0.25;
/// Dice smoothing constant (prevents 0/0 on empty masks).
pub const DICE_SMOOTH: f64 = 1.0;
/// Focal:dice weighting in the combined loss.
pub const FOCAL_WEIGHT: f64 = 20.0;
/// Probabilities are clamped to `[EPS, 1-EPS]` before logs.
pub const PROB_EPS: f64 = 1e-7;

const MAGIC: &[u8; 8] = b"ESODSKR1";

/// Parameters of the objectness estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct SeekerParams {
    pub channels: usize,
    /// `[c][ky][kx]` flattened, kernel side [`DW_KERNEL`].
    pub dw_weights: Vec<f64>,
    pub dw_bias: Vec<f64>,
    pub bn: BatchNorm,
    /// 1x1 projection to a single channel.
    pub pw: ConvSpec,
}

impl SeekerParams {
    pub fn validate(&self) -> Result<()> {
        if self.dw_weights.len() != self.channels * DW_KERNEL * DW_KERNEL {
            return Err(Error::shape(format!(
                "dw weight length {} != C*{DW_KERNEL}*{DW_KERNEL}",
                self.dw_weights.len()
            )));
        }
        if self.dw_bias.len() != self.channels {
            return Err(Error::shape("dw bias length != channels".to_string()));
        }
        self.bn.validate(self.channels)?;
        self.pw.validate()?;
        if self.pw.in_channels != self.channels
            || self.pw.out_channels != 1
            || self.pw.kernel_h != 1
            || self.pw.kernel_w != 1
            || self.pw.stride != 1
            || self.pw.padding != 0
        {
            return Err(Error::parameter(
                "pw layer must be a stride-1 1x1 conv down to one channel".to_string(),
            ));
        }
        Ok(())
    }

    /// Random initialisation scaled by fan-in; BN starts as identity stats.
    pub fn random(channels: usize, rng: &mut impl Rng) -> Self {
        let dw_scale = (3.0 / (DW_KERNEL * DW_KERNEL) as f64).sqrt();
        let pw_scale = (3.0 / channels as f64).sqrt();
        SeekerParams {
            channels,
            dw_weights: (0..channels * DW_KERNEL * DW_KERNEL)
                .map(|_| rng.gen_range(-dw_scale..dw_scale))
                .collect(),
            dw_bias: vec![0.0; channels],
            bn: BatchNorm {
                mean: vec![0.0; channels],
                var: vec![1.0; channels],
                gamma: vec![1.0; channels],
                beta: vec![0.0; channels],
                eps: 1e-5,
            },
            pw: ConvSpec {
                in_channels: channels,
                out_channels: 1,
                kernel_h: 1,
                kernel_w: 1,
                stride: 1,
                padding: 0,
                weights: (0..channels).map(|_| rng.gen_range(-pw_scale..pw_scale)).collect(),
                bias: vec![0.0],
            },
        }
    }

    /// Writes `magic, dims, little-endian doubles` to a flat binary file.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_all(&(self.channels as u32).to_le_bytes())?;
        out.write_all(&(DW_KERNEL as u32).to_le_bytes())?;
        let mut write_f64s = |values: &[f64]| -> Result<()> {
            for v in values {
                out.write_all(&v.to_le_bytes())?;
            }
            Ok(())
        };
        write_f64s(&self.dw_weights)?;
        write_f64s(&self.dw_bias)?;
        write_f64s(&self.bn.mean)?;
        write_f64s(&self.bn.var)?;
        write_f64s(&self.bn.gamma)?;
        write_f64s(&self.bn.beta)?;
        write_f64s(&[self.bn.eps])?;
        write_f64s(&self.pw.weights)?;
        write_f64s(&self.pw.bias)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        file.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad seeker-params magic".to_string()));
        }
        let mut u32buf = [0u8; 4];
        file.read_exact(&mut u32buf)?;
        let channels = u32::from_le_bytes(u32buf) as usize;
        file.read_exact(&mut u32buf)?;
        let kernel = u32::from_le_bytes(u32buf) as usize;
        if kernel != DW_KERNEL {
            return Err(Error::Format(format!("unsupported dw kernel {kernel}")));
        }
        if channels == 0 || channels > 4096 {
            return Err(Error::Format(format!("implausible channel count {channels}")));
        }
        let mut read_f64s = |count: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; count * 8];
            file.read_exact(&mut buf)?;
            Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        };
        let dw_weights = read_f64s(channels * DW_KERNEL * DW_KERNEL)?;
        let dw_bias = read_f64s(channels)?;
        let mean = read_f64s(channels)?;
        let var = read_f64s(channels)?;
        let gamma = read_f64s(channels)?;
        let beta = read_f64s(channels)?;
        let eps = read_f64s(1)?[0];
        let pw_weights = read_f64s(channels)?;
        let pw_bias = read_f64s(1)?;
        let params = SeekerParams {
            channels,
            dw_weights,
            dw_bias,
            bn: BatchNorm { mean, var, gamma, beta, eps },
            pw: ConvSpec {
                in_channels: channels,
                out_channels: 1,
                kernel_h: 1,
                kernel_w: 1,
                stride: 1,
                padding: 0,
                weights: pw_weights,
                bias: pw_bias,
            },
        };
        params.validate()?;
        Ok(params)
    }
}

/// Class-agnostic objectness probabilities on the stem grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectnessMask {
    pub grid: Grid2D,
}

impl ObjectnessMask {
    pub fn new(grid: Grid2D) -> Result<Self> {
        if grid.values().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::parameter("objectness values must lie in [0,1]"));
        }
        Ok(ObjectnessMask { grid })
    }

    pub fn from_logits(logits: &Grid2D) -> Self {
        ObjectnessMask { grid: logits.pointwise(Activation::Sigmoid) }
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct SeekerForward {
    /// Depthwise output.
    pub z1: FeatureStack,
    /// After batch norm.
    pub z2: FeatureStack,
    /// After ReLU.
    pub z3: FeatureStack,
    /// 1x1 projection output (pre-sigmoid).
    pub logits: Grid2D,
}

/// Runs the estimator and keeps intermediates.
pub fn seek_forward(features: &FeatureStack, params: &SeekerParams) -> Result<SeekerForward> {
    params.validate()?;
    if features.channels() != params.channels {
        return Err(Error::shape(format!(
            "seeker expects {} channels, features have {}",
            params.channels,
            features.channels()
        )));
    }
    let z1 = depthwise_conv(features, DW_KERNEL, &params.dw_weights, &params.dw_bias)?;
    let z2 = batchnorm_apply(&z1, &params.bn)?;
    let z3 = z2.pointwise(Activation::Relu);
    let z4 = conv2d(&z3, &params.pw)?;
    let logits = z4.channel_grid(0);
    Ok(SeekerForward { z1, z2, z3, logits })
}

/// Pre-sigmoid objectness logits.
pub fn seek_logits(features: &FeatureStack, params: &SeekerParams) -> Result<Grid2D> {
    Ok(seek_forward(features, params)?.logits)
}

/// Full forward pass to probabilities.
pub fn seek(features: &FeatureStack, params: &SeekerParams) -> Result<ObjectnessMask> {
    Ok(ObjectnessMask::from_logits(&seek_logits(features, params)?))
}

/// Inverse sigmoid with the standard probability clamp.
pub fn prob_to_logit(p: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    (p / (1.0 - p)).ln()
}

fn check_same_shape(a: &Grid2D, b: &Grid2D) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::shape(format!(
            "{}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// Binary focal loss with soft targets, evaluated from logits.
///
/// Per cell, with `p = sigmoid(z)` and target weight `y in [0,1]`:
/// `-( alpha*y*(1-p)^gamma*ln p + (1-alpha)*(1-y)*p^gamma*ln(1-p) )`,
/// averaged over cells. Returns the mean loss and its gradient with respect
/// to the logits.
pub fn focal_loss(
    logits: &Grid2D,
    target: &Grid2D,
    gamma: f64,
    alpha: f64,
) -> Result<(f64, Grid2D)> {
    check_same_shape(logits, target)?;
    if gamma < 0.0 {
        return Err(Error::parameter("gamma must be non-negative"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::parameter("alpha must lie in (0,1)"));
    }
    let n = (logits.height() * logits.width()) as f64;
    let mut sum = 0.0;
    let mut grad = Grid2D::zeros(logits.height(), logits.width());
    for y in 0..logits.height() {
        for x in 0..logits.width() {
            let z = logits.get(x, y);
            let t = target.get(x, y);
            let p = sigmoid(z);
            let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            let ln_p = pc.ln();
            let ln_q = (1.0 - pc).ln();
            let pow_pos = (1.0 - p).powf(gamma);
            let pow_neg = p.powf(gamma);
            sum += -(alpha * t * pow_pos * ln_p + (1.0 - alpha) * (1.0 - t) * pow_neg * ln_q);

            // d/dp, with the clamp freezing the log terms when saturated
            let saturated = p <= PROB_EPS || p >= 1.0 - PROB_EPS;
            let dlog_p = if saturated { 0.0 } else { 1.0 / pc };
            let dlog_q = if saturated { 0.0 } else { -1.0 / (1.0 - pc) };
            let dpow_pos = if gamma == 0.0 { 0.0 } else { -gamma * (1.0 - p).powf(gamma - 1.0) };
            let dpow_neg = if gamma == 0.0 { 0.0 } else { gamma * p.powf(gamma - 1.0) };
            let dterm_dp = -(alpha * t * (dpow_pos * ln_p + pow_pos * dlog_p)
                + (1.0 - alpha) * (1.0 - t) * (dpow_neg * ln_q + pow_neg * dlog_q));
            grad.set(x, y, dterm_dp * p * (1.0 - p) / n);
        }
    }
    Ok((sum / n, grad))
}

/// Dice loss on probabilities: `1 - (2*sum(p*y) + s)/(sum p + sum y + s)`.
///
/// Returns the loss and its gradient with respect to the predictions.
pub fn dice_loss(pred: &Grid2D, target: &Grid2D, smooth: f64) -> Result<(f64, Grid2D)> {
    check_same_shape(pred, target)?;
    if smooth <= 0.0 {
        return Err(Error::parameter("smooth must be positive"));
    }
    let mut inter = 0.0;
    let mut sum_p = 0.0;
    let mut sum_t = 0.0;
    for (p, t) in pred.values().iter().zip(target.values()) {
        inter += p * t;
        sum_p += p;
        sum_t += t;
    }
    let num = 2.0 * inter + smooth;
    let den = sum_p + sum_t + smooth;
    let loss = 1.0 - num / den;
    let grad = {
        let mut g = Grid2D::zeros(pred.height(), pred.width());
        for y in 0..pred.height() {
            for x in 0..pred.width() {
                let t = target.get(x, y);
                g.set(x, y, -(2.0 * t * den - num) / (den * den));
            }
        }
        g
    };
    Ok((loss, grad))
}

/// Focal + dice report for one prediction/target pair.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub focal: f64,
    pub dice: f64,
    /// `FOCAL_WEIGHT * focal + dice`.
    pub total: f64,
    /// d(total)/d(logit), same shape as the prediction.
    pub grad: Grid2D,
}

/// Combined 20:1 focal+dice loss from logits.
pub fn seeker_loss(logits: &Grid2D, target: &Grid2D) -> Result<LossReport> {
    let (focal, focal_grad) = focal_loss(logits, target, FOCAL_GAMMA, FOCAL_ALPHA)?;
    let probs = logits.pointwise(Activation::Sigmoid);
    let (dice, dice_grad_p) = dice_loss(&probs, target, DICE_SMOOTH)?;
    let mut grad = Grid2D::zeros(logits.height(), logits.width());
    for y in 0..logits.height() {
        for x in 0..logits.width() {
            let p = probs.get(x, y);
            let dice_dz = dice_grad_p.get(x, y) * p * (1.0 - p);
            grad.set(x, y, FOCAL_WEIGHT * focal_grad.get(x, y) + dice_dz);
        }
    }
    Ok(LossReport { focal, dice, total: FOCAL_WEIGHT * focal + dice, grad })
}

/// Parameter gradients of the estimator.
#[derive(Debug, Clone)]
pub struct SeekerGrads {
    pub dw_weights: Vec<f64>,
    pub dw_bias: Vec<f64>,
    pub bn_gamma: Vec<f64>,
    pub bn_beta: Vec<f64>,
    pub pw_weights: Vec<f64>,
    pub pw_bias: f64,
}

/// Backpropagates d(loss)/d(logits) to all trainable parameters.
///
/// BN running statistics are treated as frozen inference constants; only
/// gamma/beta receive gradients.
pub fn seeker_backward(
    features: &FeatureStack,
    params: &SeekerParams,
    fwd: &SeekerForward,
    grad_logits: &Grid2D,
) -> Result<SeekerGrads> {
    check_same_shape(&fwd.logits, grad_logits)?;
    let c = params.channels;
    let (h, w) = (grad_logits.height(), grad_logits.width());
    let r = (DW_KERNEL / 2) as isize;

    let mut pw_weights = vec![0.0; c];
    let mut pw_bias = 0.0;
    let mut bn_gamma = vec![0.0; c];
    let mut bn_beta = vec![0.0; c];
    let mut dw_weights = vec![0.0; c * DW_KERNEL * DW_KERNEL];
    let mut dw_bias = vec![0.0; c];

    for ch in 0..c {
        let pw_w = params.pw.weights[ch];
        let inv_std = 1.0 / (params.bn.var[ch] + params.bn.eps).sqrt();
        let scale = params.bn.gamma[ch] * inv_std;
        let kbase = ch * DW_KERNEL * DW_KERNEL;
        for y in 0..h {
            for x in 0..w {
                let g = grad_logits.get(x, y);
                if g == 0.0 {
                    continue;
                }
                pw_weights[ch] += g * fwd.z3.get(ch, x, y);
                if ch == 0 {
                    pw_bias += g;
                }
                // backprop through the 1x1 conv and the ReLU gate
                if fwd.z2.get(ch, x, y) <= 0.0 {
                    continue;
                }
                let g2 = g * pw_w;
                bn_gamma[ch] += g2 * (fwd.z1.get(ch, x, y) - params.bn.mean[ch]) * inv_std;
                bn_beta[ch] += g2;
                let g1 = g2 * scale;
                dw_bias[ch] += g1;
                for ky in 0..DW_KERNEL {
                    let iy = y as isize + ky as isize - r;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..DW_KERNEL {
                        let ix = x as isize + kx as isize - r;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dw_weights[kbase + ky * DW_KERNEL + kx] +=
                            g1 * features.get(ch, ix as usize, iy as usize);
                    }
                }
            }
        }
    }
    Ok(SeekerGrads { dw_weights, dw_bias, bn_gamma, bn_beta, pw_weights, pw_bias })
}

/// One plain gradient-descent step.
pub fn sgd_step(params: &mut SeekerParams, grads: &SeekerGrads, lr: f64) {
    for (w, g) in params.dw_weights.iter_mut().zip(&grads.dw_weights) {
        *w -= lr * g;
    }
    for (b, g) in params.dw_bias.iter_mut().zip(&grads.dw_bias) {
        *b -= lr * g;
    }
    for (gm, g) in params.bn.gamma.iter_mut().zip(&grads.bn_gamma) {
        *gm -= lr * g;
    }
    for (bt, g) in params.bn.beta.iter_mut().zip(&grads.bn_beta) {
        *bt -= lr * g;
    }
    for (w, g) in params.pw.weights.iter_mut().zip(&grads.pw_weights) {
        *w -= lr * g;
    }
    params.pw.bias[0] -= lr * grads.pw_bias;
}
