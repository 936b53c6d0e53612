//! Dense numeric carriers and the convolution/pooling primitives.
//!
//! Everything is double precision and CPU-only: the grids involved are
//! desk-scale (a few hundred cells per side at most), which keeps oracle
//! comparisons tight. Convolution is cross-correlation (no kernel flip),
//! matching the deep-learning convention. Border handling: zero padding for
//! convolutions and average pooling, negative-infinity semantics for max
//! pooling.

use crate::error::{Error, Result};

/// Dense 2-D scalar grid, row-major.
///
/// Cells are addressed as `(x, y)` = (column, row); `get(x, y)` reads
/// `values[y * width + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Grid2D {
    /// All-zero grid.
    pub fn zeros(height: usize, width: usize) -> Self {
        Grid2D { height, width, values: vec![0.0; height * width] }
    }

    /// Builds a grid from row-major values; the length must be `height*width`
    /// and every value finite.
    pub fn from_values(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::parameter("grid dimensions must be positive"));
        }
        if values.len() != height * width {
            return Err(Error::shape(format!(
                "value length {} != {}x{}",
                values.len(),
                height,
                width
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::parameter("grid values must be finite"));
        }
        Ok(Grid2D { height, width, values })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Grid2D { height, width, values: vec![value; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.values[y * self.width + x] = value;
    }

    pub fn same_shape(&self, other: &Grid2D) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Elementwise map.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid2D {
        Grid2D {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn pointwise(&self, kind: Activation) -> Grid2D {
        self.map(|v| kind.apply(v))
    }
}

/// C-channel stack of 2-D grids, channel-major (`[c][y][x]`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl FeatureStack {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureStack { channels, height, width, values: vec![0.0; channels * height * width] }
    }

    pub fn from_values(
        channels: usize,
        height: usize,
        width: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::parameter("stack dimensions must be positive"));
        }
        if values.len() != channels * height * width {
            return Err(Error::shape(format!(
                "value length {} != {}x{}x{}",
                values.len(),
                channels,
                height,
                width
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::parameter("stack values must be finite"));
        }
        Ok(FeatureStack { channels, height, width, values })
    }

    /// Wraps a single grid as a 1-channel stack.
    pub fn from_grid(grid: &Grid2D) -> Self {
        FeatureStack {
            channels: 1,
            height: grid.height(),
            width: grid.width(),
            values: grid.values().to_vec(),
        }
    }

    /// Copies channel `c` out as a grid.
    pub fn channel_grid(&self, c: usize) -> Grid2D {
        Grid2D {
            height: self.height,
            width: self.width,
            values: self.channel(c).to_vec(),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.values[c * plane..(c + 1) * plane]
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.values[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, value: f64) {
        self.values[(c * self.height + y) * self.width + x] = value;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FeatureStack {
        FeatureStack {
            channels: self.channels,
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn pointwise(&self, kind: Activation) -> FeatureStack {
        self.map(|v| kind.apply(v))
    }
}

/// Row-major boolean grid (activation masks).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitGrid {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BitGrid {
    pub fn new(height: usize, width: usize) -> Self {
        BitGrid { height, width, bits: vec![false; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, bit: bool) {
        self.bits[y * self.width + x] = bit;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Row-major coordinates of all set bits.
    pub fn ones(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    out.push((x, y));
                }
            }
        }
        out
    }
}

/// Pointwise non-linearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Sigmoid => sigmoid(v),
        }
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Parameters of one standard convolution layer.
///
/// Weight layout is `[out][in][ky][kx]`, flattened row-major; kernel sides
/// must be odd so that same-padding layers can use `padding = (k-1)/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let spec = ConvSpec {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
            weights,
            bias,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// 1x1 identity layer (weight 1, bias 0) over `channels`.
    pub fn identity(channels: usize) -> Self {
        let mut weights = vec![0.0; channels * channels];
        for c in 0..channels {
            weights[c * channels + c] = 1.0;
        }
        ConvSpec {
            in_channels: channels,
            out_channels: channels,
            kernel_h: 1,
            kernel_w: 1,
            stride: 1,
            padding: 0,
            weights,
            bias: vec![0.0; channels],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::parameter("channel counts must be positive"));
        }
        if self.kernel_h == 0
            || self.kernel_w == 0
            || self.kernel_h.is_multiple_of(2)
            || self.kernel_w.is_multiple_of(2)
        {
            return Err(Error::parameter("kernel sides must be odd and positive"));
        }
        if self.stride == 0 {
            return Err(Error::parameter("stride must be positive"));
        }
        let expected = self.out_channels * self.in_channels * self.kernel_h * self.kernel_w;
        if self.weights.len() != expected {
            return Err(Error::shape(format!(
                "weight length {} != out*in*kh*kw = {}",
                self.weights.len(),
                expected
            )));
        }
        if self.bias.len() != self.out_channels {
            return Err(Error::shape(format!(
                "bias length {} != out_channels {}",
                self.bias.len(),
                self.out_channels
            )));
        }
        Ok(())
    }

    /// True for stride-1 layers whose padding preserves the spatial shape.
    pub fn is_same_padding(&self) -> bool {
        self.stride == 1
            && self.padding == (self.kernel_h - 1) / 2
            && self.kernel_h == self.kernel_w
    }

    #[inline]
    fn weight(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((oc * self.in_channels + ic) * self.kernel_h + ky) * self.kernel_w + kx]
    }
}

/// Output side length of a convolution along one axis.
///
/// The quotient must be exact: a stride that does not evenly divide the
/// padded extent is rejected rather than floored.
fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(Error::shape(format!(
            "kernel {kernel} exceeds padded input {padded}"
        )));
    }
    let span = padded - kernel;
    if !span.is_multiple_of(stride) {
        return Err(Error::shape(format!(
            "non-integer output size: ({input} + 2*{padding} - {kernel}) not divisible by stride {stride}"
        )));
    }
    Ok(span / stride + 1)
}

/// Output `(height, width)` of `spec` applied to an input of the given size.
pub fn conv_output_dims(spec: &ConvSpec, height: usize, width: usize) -> Result<(usize, usize)> {
    Ok((
        conv_out_dim(height, spec.kernel_h, spec.stride, spec.padding)?,
        conv_out_dim(width, spec.kernel_w, spec.stride, spec.padding)?,
    ))
}

/// Standard cross-correlation with bias and zero padding.
pub fn conv2d(input: &FeatureStack, spec: &ConvSpec) -> Result<FeatureStack> {
    spec.validate()?;
    if spec.in_channels != input.channels() {
        return Err(Error::shape(format!(
            "spec expects {} input channels, stack has {}",
            spec.in_channels,
            input.channels()
        )));
    }
    let out_h = conv_out_dim(input.height(), spec.kernel_h, spec.stride, spec.padding)?;
    let out_w = conv_out_dim(input.width(), spec.kernel_w, spec.stride, spec.padding)?;

    let mut out = FeatureStack::zeros(spec.out_channels, out_h, out_w);
    for oc in 0..spec.out_channels {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut acc = spec.bias[oc];
                for ic in 0..input.channels() {
                    for ky in 0..spec.kernel_h {
                        let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                        if iy < 0 || iy >= input.height() as isize {
                            continue;
                        }
                        for kx in 0..spec.kernel_w {
                            let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                            if ix < 0 || ix >= input.width() as isize {
                                continue;
                            }
                            acc += spec.weight(oc, ic, ky, kx)
                                * input.get(ic, ix as usize, iy as usize);
                        }
                    }
                }
                out.set(oc, ox, oy, acc);
            }
        }
    }
    Ok(out)
}

/// Convolution of a single output position; used by the sparse head.
///
/// `spec` must be a stride-1 same-padding layer so positions map one-to-one.
pub(crate) fn conv2d_at(
    input: &FeatureStack,
    spec: &ConvSpec,
    x: usize,
    y: usize,
) -> Vec<f64> {
    let pad = spec.padding as isize;
    let mut out = Vec::with_capacity(spec.out_channels);
    for oc in 0..spec.out_channels {
        let mut acc = spec.bias[oc];
        for ic in 0..input.channels() {
            for ky in 0..spec.kernel_h {
                let iy = y as isize + ky as isize - pad;
                if iy < 0 || iy >= input.height() as isize {
                    continue;
                }
                for kx in 0..spec.kernel_w {
                    let ix = x as isize + kx as isize - pad;
                    if ix < 0 || ix >= input.width() as isize {
                        continue;
                    }
                    acc += spec.weight(oc, ic, ky, kx) * input.get(ic, ix as usize, iy as usize);
                }
            }
        }
        out.push(acc);
    }
    out
}

/// Depthwise convolution: each channel gets its own `k x k` kernel, same
/// padding, output shape equals input shape.
///
/// `weights` is `[c][ky][kx]` flattened, `bias` one scalar per channel.
pub fn depthwise_conv(
    input: &FeatureStack,
    kernel_size: usize,
    weights: &[f64],
    bias: &[f64],
) -> Result<FeatureStack> {
    if kernel_size == 0 || kernel_size.is_multiple_of(2) {
        return Err(Error::parameter(format!(
            "depthwise kernel size must be odd, got {kernel_size}"
        )));
    }
    let c = input.channels();
    if weights.len() != c * kernel_size * kernel_size {
        return Err(Error::shape(format!(
            "depthwise weight length {} != C*k*k = {}",
            weights.len(),
            c * kernel_size * kernel_size
        )));
    }
    if bias.len() != c {
        return Err(Error::shape(format!(
            "depthwise bias length {} != channels {}",
            bias.len(),
            c
        )));
    }
    let (h, w) = (input.height(), input.width());
    let r = (kernel_size / 2) as isize;
    let mut out = FeatureStack::zeros(c, h, w);
    for (ch, &channel_bias) in bias.iter().enumerate() {
        let kbase = ch * kernel_size * kernel_size;
        for y in 0..h {
            for x in 0..w {
                let mut acc = channel_bias;
                for ky in 0..kernel_size {
                    let iy = y as isize + ky as isize - r;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kernel_size {
                        let ix = x as isize + kx as isize - r;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        acc += weights[kbase + ky * kernel_size + kx]
                            * input.get(ch, ix as usize, iy as usize);
                    }
                }
                out.set(ch, x, y, acc);
            }
        }
    }
    Ok(out)
}

/// Shape-preserving max pooling; cells outside the grid act as -inf.
pub fn maxpool_same(grid: &Grid2D, window: usize) -> Result<Grid2D> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::parameter(format!(
            "pooling window must be odd, got {window}"
        )));
    }
    let (h, w) = (grid.height(), grid.width());
    let r = (window / 2) as isize;
    let mut out = Grid2D::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let mut best = f64::NEG_INFINITY;
            for dy in -r..=r {
                let iy = y as isize + dy;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for dx in -r..=r {
                    let ix = x as isize + dx;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    best = best.max(grid.get(ix as usize, iy as usize));
                }
            }
            out.set(x, y, best);
        }
    }
    Ok(out)
}

/// Shape-preserving average pooling with zero padding.
///
/// The divisor is fixed at `window^2` even where the window is truncated at a
/// border, so outputs are monotone in the number of contributing cells.
pub fn avgpool_same(grid: &Grid2D, window: usize) -> Result<Grid2D> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::parameter(format!(
            "pooling window must be odd, got {window}"
        )));
    }
    let (h, w) = (grid.height(), grid.width());
    let r = (window / 2) as isize;
    let divisor = (window * window) as f64;
    let mut out = Grid2D::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0;
            for dy in -r..=r {
                let iy = y as isize + dy;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for dx in -r..=r {
                    let ix = x as isize + dx;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    sum += grid.get(ix as usize, iy as usize);
                }
            }
            out.set(x, y, sum / divisor);
        }
    }
    Ok(out)
}

/// Inference-mode batch normalisation parameters (one entry per channel).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

impl BatchNorm {
    /// Identity normalisation over `channels`.
    pub fn identity(channels: usize) -> Self {
        BatchNorm {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            eps: 0.0,
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.mean.len() != channels
            || self.var.len() != channels
            || self.gamma.len() != channels
            || self.beta.len() != channels
        {
            return Err(Error::shape(format!(
                "batchnorm parameter arrays must all have length {channels}"
            )));
        }
        if self.var.iter().any(|&v| v < 0.0) {
            return Err(Error::parameter("batchnorm variance must be non-negative"));
        }
        if self.eps < 0.0 || (self.eps == 0.0 && self.var.contains(&0.0)) {
            return Err(Error::parameter("batchnorm eps must keep var+eps positive"));
        }
        Ok(())
    }

    /// Per-channel scale `gamma/sqrt(var+eps)`; used by the seeker backward
    /// pass as well.
    pub(crate) fn scale(&self, c: usize) -> f64 {
        self.gamma[c] / (self.var[c] + self.eps).sqrt()
    }
}

/// Applies per-channel `(x - mean)/sqrt(var + eps) * gamma + beta`.
pub fn batchnorm_apply(stack: &FeatureStack, bn: &BatchNorm) -> Result<FeatureStack> {
    bn.validate(stack.channels())?;
    let mut out = stack.clone();
    let plane = stack.height() * stack.width();
    for c in 0..stack.channels() {
        let scale = bn.scale(c);
        let mean = bn.mean[c];
        let beta = bn.beta[c];
        let base = c * plane;
        for i in 0..plane {
            let v = stack.values()[base + i];
            out.values[base + i] = (v - mean) * scale + beta;
        }
    }
    Ok(out)
}
