//! Small layer library over candle tensors.
//!
//! Everything here is composed from differentiable candle primitives so that
//! the same code path serves f32 training and f64 gradient checks.

use candle_core::{Tensor, D};

use crate::complexity::{add_macs, conv_macs};
use crate::params::{Init, Scope};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct ConvConfig {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub bias: bool,
}

impl ConvConfig {
    pub fn pointwise() -> Self {
        Self {
            kernel: 1,
            stride: 1,
            padding: 0,
            dilation: 1,
            bias: true,
        }
    }

    /// `k × k`, stride 1, padded to preserve the spatial size.
    pub fn same(kernel: usize) -> Self {
        Self {
            kernel,
            padding: kernel / 2,
            ..Self::pointwise()
        }
    }

    pub fn dilated(kernel: usize, dilation: usize) -> Self {
        Self {
            kernel,
            dilation,
            padding: dilation * (kernel / 2),
            ..Self::pointwise()
        }
    }

    pub fn strided(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
            ..Self::pointwise()
        }
    }

    pub fn bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }
}

/// Dense 2-D convolution with zero padding.
#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    cfg: ConvConfig,
}

impl Conv2d {
    pub fn new(scope: &Scope, cin: usize, cout: usize, cfg: ConvConfig) -> Result<Self> {
        Self::with_init(scope, cin, cout, cfg, Init::fan_in(cin * cfg.kernel * cfg.kernel))
    }

    pub fn with_init(
        scope: &Scope,
        cin: usize,
        cout: usize,
        cfg: ConvConfig,
        init: Init,
    ) -> Result<Self> {
        let weight = scope.var("weight", (cout, cin, cfg.kernel, cfg.kernel), init)?;
        let bias = if cfg.bias {
            Some(scope.var("bias", cout, Init::ZEROS)?)
        } else {
            None
        };
        Ok(Self { weight, bias, cfg })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Tensor> {
        self.bias.as_ref()
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = &self.cfg;
        let y = x.conv2d(&self.weight, c.padding, c.stride, c.dilation, 1)?;
        let (_, cout, ho, wo) = y.dims4()?;
        add_macs(conv_macs(c.kernel, self.weight.dims()[1], cout, ho, wo));
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.reshape((1, cout, 1, 1))?)?),
            None => Ok(y),
        }
    }
}

/// Depthwise `k × k` convolution, stride 1, zero padded to preserve size.
///
/// Realized as a sum of shifted, per-channel scaled copies of the input.
#[derive(Clone, Debug)]
pub struct DepthwiseConv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    kernel: usize,
    dilation: usize,
}

impl DepthwiseConv2d {
    pub fn new(scope: &Scope, channels: usize, kernel: usize, dilation: usize, bias: bool) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Config("depthwise kernel must be odd".into()));
        }
        let weight = scope.var(
            "weight",
            (channels, 1, kernel, kernel),
            Init::fan_in(kernel * kernel),
        )?;
        let bias = if bias {
            Some(scope.var("bias", channels, Init::ZEROS)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            kernel,
            dilation,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        let w4 = self.weight.reshape((c, self.kernel * self.kernel))?;
        let y = shifted_sum(x, self.kernel, self.dilation, |idx| {
            w4.narrow(1, idx, 1)?.reshape((1, c, 1, 1))
        })?;
        add_macs(conv_macs(self.kernel, 1, c, h, w));
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.reshape((1, c, 1, 1))?)?),
            None => Ok(y),
        }
    }
}

fn shifted_sum<F>(x: &Tensor, kernel: usize, dilation: usize, tap: F) -> Result<Tensor>
where
    F: Fn(usize) -> candle_core::Result<Tensor>,
{
    let (_, _, h, w) = x.dims4()?;
    let pad = dilation * (kernel / 2);
    let xp = x.pad_with_zeros(2, pad, pad)?.pad_with_zeros(3, pad, pad)?;
    let mut acc: Option<Tensor> = None;
    for ky in 0..kernel {
        let rows = xp.narrow(2, ky * dilation, h)?;
        for kx in 0..kernel {
            let patch = rows.narrow(3, kx * dilation, w)?;
            let term = patch.broadcast_mul(&tap(ky * kernel + kx)?)?;
            acc = Some(match acc {
                Some(a) => (a + term)?,
                None => term,
            });
        }
    }
    Ok(acc.expect("kernel is non-empty"))
}

/// Stride-1 average pooling with zero padding that counts padded cells,
/// so the output keeps the input size.
pub fn avg_pool_same(x: &Tensor, kernel: usize) -> Result<Tensor> {
    if kernel % 2 == 0 {
        return Err(Error::Config("same-size pooling needs an odd kernel".into()));
    }
    let (_, _, h, w) = x.dims4()?;
    let pad = kernel / 2;
    let xp = x.pad_with_zeros(3, pad, pad)?;
    let mut row = xp.narrow(3, 0, w)?;
    for k in 1..kernel {
        row = (row + xp.narrow(3, k, w)?)?;
    }
    let rp = row.pad_with_zeros(2, pad, pad)?;
    let mut out = rp.narrow(2, 0, h)?;
    for k in 1..kernel {
        out = (out + rp.narrow(2, k, h)?)?;
    }
    Ok((out / (kernel * kernel) as f64)?)
}

/// Non-overlapping average pooling by an integer factor. Sizes that are not
/// divisible are first padded by edge replication.
pub fn avg_pool_down(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 1 {
        return Ok(x.clone());
    }
    let (_, _, h, w) = x.dims4()?;
    let ph = (factor - h % factor) % factor;
    let pw = (factor - w % factor) % factor;
    let x = if ph > 0 || pw > 0 {
        log::debug!("pooling {h}x{w} by {factor}: replicate-padding by ({ph}, {pw})");
        x.pad_with_same(2, 0, ph)?.pad_with_same(3, 0, pw)?
    } else {
        x.clone()
    };
    Ok(x.avg_pool2d(factor)?)
}

/// Mean over the spatial axes, keeping them as size-1 dims.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean_keepdim(3)?.mean_keepdim(2)?)
}

pub fn gelu(x: &Tensor) -> Result<Tensor> {
    Ok(x.gelu()?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

/// Softmax over the last axis, composed from primitive ops.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::softmax(x, D::Minus1)?)
}

/// Layer normalization over the channel axis of a `(B, C, H, W)` map.
#[derive(Clone, Debug)]
pub struct ChannelNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl ChannelNorm {
    pub fn new(scope: &Scope, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: scope.var("gamma", channels, Init::ONES)?,
            beta: scope.var("beta", channels, Init::ZEROS)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = x.dims()[1];
        let mean = x.mean_keepdim(1)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = xc.sqr()?.mean_keepdim(1)?;
        let y = xc.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(y
            .broadcast_mul(&self.gamma.reshape((1, c, 1, 1))?)?
            .broadcast_add(&self.beta.reshape((1, c, 1, 1))?)?)
    }
}

/// Affine map over the last axis of a `(.., N, Cin)` tensor.
#[derive(Clone, Debug)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(scope: &Scope, cin: usize, cout: usize) -> Result<Self> {
        Ok(Self {
            weight: scope.var("weight", (cin, cout), Init::fan_in(cin))?,
            bias: scope.var("bias", cout, Init::ZEROS)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (cin, cout) = self.weight.dims2()?;
        let rows = x.elem_count() / cin;
        add_macs((rows * cin * cout) as u64);
        Ok(x.broadcast_matmul(&self.weight)?.broadcast_add(&self.bias)?)
    }
}

/// Convolution along the level axis of a `(B, N, C)` level table, zero padded
/// so the number of levels is preserved.
#[derive(Clone, Debug)]
pub struct LevelConv {
    weight: Tensor,
    bias: Tensor,
    kernel: usize,
}

impl LevelConv {
    pub fn new(scope: &Scope, cin: usize, cout: usize, kernel: usize) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Config("level conv kernel must be odd".into()));
        }
        Ok(Self {
            weight: scope.var("weight", (cout, cin, kernel), Init::fan_in(cin * kernel))?,
            bias: scope.var("bias", cout, Init::ZEROS)?,
            kernel,
        })
    }

    /// `x`: `(B, N, Cin)` → `(B, N, Cout)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, n, _) = x.dims3()?;
        let (cout, cin, k) = self.weight.dims3()?;
        let xt = x.transpose(1, 2)?.contiguous()?;
        let y = xt.conv1d(&self.weight, self.kernel / 2, 1, 1, 1)?;
        add_macs((k * cin * cout * n * x.dims()[0]) as u64);
        let y = y.broadcast_add(&self.bias.reshape((1, cout, 1))?)?;
        Ok(y.transpose(1, 2)?.contiguous()?)
    }
}

/// Plain convolutional substitute used when a component is ablated:
/// `conv3x3 → GELU → conv3x3`, with the hidden width chosen so the parameter
/// count approximates `target_params`.
#[derive(Clone, Debug)]
pub struct StandIn {
    first: Conv2d,
    second: Conv2d,
}

impl StandIn {
    pub fn hidden_for(cin: usize, cout: usize, target_params: usize) -> usize {
        // params = 9·cin·h + h + 9·h·cout + cout
        let per_hidden = 9 * (cin + cout) + 1;
        let h = (target_params.saturating_sub(cout) as f64 / per_hidden as f64).round();
        (h as usize).max(1)
    }

    pub fn matched(scope: &Scope, cin: usize, cout: usize, target_params: usize) -> Result<Self> {
        let hidden = Self::hidden_for(cin, cout, target_params);
        Ok(Self {
            first: Conv2d::new(&scope.pp("conv1"), cin, hidden, ConvConfig::same(3))?,
            second: Conv2d::new(&scope.pp("conv2"), hidden, cout, ConvConfig::same(3))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.second.forward(&gelu(&self.first.forward(x)?)?)
    }
}

/// Parameter count of a module, measured by building it in a scratch store.
pub fn measure_params<F>(build: F) -> Result<usize>
where
    F: FnOnce(&Scope) -> Result<()>,
{
    let scratch = crate::params::ParamStore::cpu(candle_core::DType::F32, 0);
    build(&scratch.root())?;
    Ok(scratch.num_params())
}
