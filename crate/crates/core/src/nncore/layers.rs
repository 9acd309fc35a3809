//! Layer parameters and the forward/backward kernels shared by inference and the tape.
//!
//! Convolution weights are laid out `[lead, second, k, k, k]`. For `conv3d` the
//! lead axis is the output channel; for `convtranspose3d` it is the input
//! channel, so a `conv3d` and a `convtranspose3d` built from the same weight
//! tensor are adjoint linear maps.

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv3d,
    ConvTranspose3d,
    Linear,
}

/// Cubic kernel geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
        }
    }

    pub fn conv_out(&self, n: usize) -> Option<usize> {
        let padded = n + 2 * self.padding;
        if self.kernel == 0 || self.stride == 0 || padded < self.kernel {
            None
        } else {
            Some((padded - self.kernel) / self.stride + 1)
        }
    }

    pub fn transpose_out(&self, n: usize) -> Option<usize> {
        if n == 0 || self.kernel == 0 || self.stride == 0 {
            return None;
        }
        ((n - 1) * self.stride + self.kernel).checked_sub(2 * self.padding)
            .filter(|v| *v > 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub kind: LayerKind,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub geometry: ConvGeometry,
}

impl<T: Real> LayerParams<T> {
    pub fn conv3d(weight: Tensor<T>, bias: Tensor<T>, geometry: ConvGeometry) -> Result<Self> {
        Self::conv_like(LayerKind::Conv3d, weight, bias, geometry)
    }

    pub fn convtranspose3d(
        weight: Tensor<T>,
        bias: Tensor<T>,
        geometry: ConvGeometry,
    ) -> Result<Self> {
        Self::conv_like(LayerKind::ConvTranspose3d, weight, bias, geometry)
    }

    fn conv_like(
        kind: LayerKind,
        weight: Tensor<T>,
        bias: Tensor<T>,
        geometry: ConvGeometry,
    ) -> Result<Self> {
        let k = geometry.kernel;
        let ws = weight.shape();
        if ws.len() != 5 || ws[2] != k || ws[3] != k || ws[4] != k || geometry.stride == 0 {
            return Err(Error::Shape(format!(
                "{kind:?} weight {ws:?} does not match kernel {k} (stride {})",
                geometry.stride
            )));
        }
        let out_channels = if kind == LayerKind::Conv3d { ws[0] } else { ws[1] };
        if bias.shape() != [out_channels] {
            return Err(Error::Shape(format!(
                "{kind:?} bias {:?} does not match {out_channels} output channels",
                bias.shape()
            )));
        }
        Ok(Self {
            kind,
            weight,
            bias,
            geometry,
        })
    }

    pub fn linear(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let ws = weight.shape();
        if ws.len() != 2 || bias.shape() != [ws[0]] {
            return Err(Error::Shape(format!(
                "linear weight {ws:?} incompatible with bias {:?}",
                bias.shape()
            )));
        }
        Ok(Self {
            kind: LayerKind::Linear,
            weight,
            bias,
            geometry: ConvGeometry::new(1, 1, 0),
        })
    }

    pub fn in_channels(&self) -> usize {
        let ws = self.weight.shape();
        match self.kind {
            LayerKind::Conv3d => ws[1],
            LayerKind::ConvTranspose3d => ws[0],
            LayerKind::Linear => ws[1],
        }
    }

    pub fn out_channels(&self) -> usize {
        let ws = self.weight.shape();
        match self.kind {
            LayerKind::Conv3d => ws[0],
            LayerKind::ConvTranspose3d => ws[1],
            LayerKind::Linear => ws[0],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.view().forward(input)
    }

    pub fn view(&self) -> LayerView<'_, T> {
        LayerView {
            kind: self.kind,
            weight: &self.weight,
            bias: &self.bias,
            geometry: self.geometry,
        }
    }
}

/// Borrowed layer parameters, validated by the same rules as [`LayerParams`].
#[derive(Debug, Clone, Copy)]
pub struct LayerView<'a, T> {
    pub kind: LayerKind,
    pub weight: &'a Tensor<T>,
    pub bias: &'a Tensor<T>,
    pub geometry: ConvGeometry,
}

impl<'a, T: Real> LayerView<'a, T> {
    pub fn new(
        kind: LayerKind,
        weight: &'a Tensor<T>,
        bias: &'a Tensor<T>,
        geometry: ConvGeometry,
    ) -> Result<Self> {
        let ws = weight.shape();
        let ok = match kind {
            LayerKind::Linear => ws.len() == 2 && bias.shape() == [ws[0]],
            _ => {
                let k = geometry.kernel;
                let out_c = if kind == LayerKind::Conv3d { ws.first() } else { ws.get(1) };
                ws.len() == 5
                    && ws[2..] == [k, k, k]
                    && geometry.stride > 0
                    && out_c.is_some_and(|c| bias.shape() == [*c])
            }
        };
        if !ok {
            return Err(Error::Shape(format!(
                "{kind:?} weight {ws:?} and bias {:?} are inconsistent with kernel {}",
                bias.shape(),
                geometry.kernel
            )));
        }
        Ok(Self {
            kind,
            weight,
            bias,
            geometry,
        })
    }

    pub fn in_channels(&self) -> usize {
        let ws = self.weight.shape();
        match self.kind {
            LayerKind::ConvTranspose3d => ws[0],
            _ => ws[1],
        }
    }

    pub fn out_channels(&self) -> usize {
        let ws = self.weight.shape();
        match self.kind {
            LayerKind::ConvTranspose3d => ws[1],
            _ => ws[0],
        }
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        match self.kind {
            LayerKind::Conv3d => conv3d_view(input, self),
            LayerKind::ConvTranspose3d => convtranspose3d_view(input, self),
            LayerKind::Linear => linear_view(input, self),
        }
    }
}

pub(crate) type Dims3 = [usize; 3];

fn spatial(shape: &[usize]) -> Option<(usize, Dims3)> {
    match shape {
        [c, d, h, w] => Some((*c, [*d, *h, *w])),
        _ => None,
    }
}

/// Inclusive range of output positions whose tap at offset `k` hits the input.
#[inline]
fn valid_range(k: usize, g: &ConvGeometry, in_len: usize, out_len: usize) -> Option<(usize, usize)> {
    // input index = o*s + k - p must lie in [0, in_len)
    let s = g.stride as isize;
    let shift = k as isize - g.padding as isize;
    let lo = if shift >= 0 { 0 } else { (-shift + s - 1) / s };
    let hi_num = in_len as isize - 1 - shift;
    if hi_num < 0 {
        return None;
    }
    let hi = (hi_num / s).min(out_len as isize - 1);
    if lo > hi {
        None
    } else {
        Some((lo as usize, hi as usize))
    }
}

/// Visits every (kernel offset, output row) pair with valid taps.
#[inline]
fn for_each_tap(
    g: &ConvGeometry,
    in_dims: Dims3,
    out_dims: Dims3,
    mut f: impl FnMut(usize, usize, usize, (usize, usize), isize),
) {
    let k = g.kernel;
    let s = g.stride;
    let p = g.padding as isize;
    for kz in 0..k {
        let Some((z0, z1)) = valid_range(kz, g, in_dims[0], out_dims[0]) else { continue };
        for ky in 0..k {
            let Some((y0, y1)) = valid_range(ky, g, in_dims[1], out_dims[1]) else { continue };
            for kx in 0..k {
                let Some(xr) = valid_range(kx, g, in_dims[2], out_dims[2]) else { continue };
                let kidx = (kz * k + ky) * k + kx;
                for oz in z0..=z1 {
                    let iz = (oz * s) as isize + kz as isize - p;
                    for oy in y0..=y1 {
                        let iy = (oy * s) as isize + ky as isize - p;
                        let in_row = (iz as usize * in_dims[1] + iy as usize) * in_dims[2];
                        let out_row = (oz * out_dims[1] + oy) * out_dims[2];
                        f(kidx, in_row, out_row, xr, kx as isize - p);
                    }
                }
            }
        }
    }
}

/// `out[a, o] += sum_{b,k} w[a, b, k] * x[b, o*s + k - p]`.
pub(crate) fn correlate<R: Real>(
    x: &[R],
    x_dims: Dims3,
    w: &[R],
    lead: usize,
    second: usize,
    g: &ConvGeometry,
    out: &mut [R],
    out_dims: Dims3,
) {
    let kvol = g.kernel.pow(3);
    let in_vol = x_dims.iter().product::<usize>();
    let out_vol = out_dims.iter().product::<usize>();
    let s = g.stride;
    for a in 0..lead {
        let out_a = &mut out[a * out_vol..(a + 1) * out_vol];
        for b in 0..second {
            let x_b = &x[b * in_vol..(b + 1) * in_vol];
            let w_ab = &w[(a * second + b) * kvol..(a * second + b + 1) * kvol];
            for_each_tap(g, x_dims, out_dims, |kidx, in_row, out_row, (x0, x1), shift| {
                let wv = w_ab[kidx];
                let orow = &mut out_a[out_row + x0..=out_row + x1];
                let start = (in_row as isize + (x0 * s) as isize + shift) as usize;
                if s == 1 {
                    let irow = &x_b[start..start + orow.len()];
                    for (o, i) in orow.iter_mut().zip(irow) {
                        *o += wv * *i;
                    }
                } else {
                    for (j, o) in orow.iter_mut().enumerate() {
                        *o += wv * x_b[start + j * s];
                    }
                }
            });
        }
    }
}

/// `into[b, o*s + k - p] += sum_{a,k} w[a, b, k] * g[a, o]` (adjoint of [`correlate`]).
pub(crate) fn scatter<R: Real>(
    grad: &[R],
    grad_dims: Dims3,
    w: &[R],
    lead: usize,
    second: usize,
    g: &ConvGeometry,
    into: &mut [R],
    into_dims: Dims3,
) {
    let kvol = g.kernel.pow(3);
    let into_vol = into_dims.iter().product::<usize>();
    let grad_vol = grad_dims.iter().product::<usize>();
    let s = g.stride;
    for a in 0..lead {
        let g_a = &grad[a * grad_vol..(a + 1) * grad_vol];
        for b in 0..second {
            let into_b = &mut into[b * into_vol..(b + 1) * into_vol];
            let w_ab = &w[(a * second + b) * kvol..(a * second + b + 1) * kvol];
            for_each_tap(g, into_dims, grad_dims, |kidx, in_row, out_row, (x0, x1), shift| {
                let wv = w_ab[kidx];
                let grow = &g_a[out_row + x0..=out_row + x1];
                let start = (in_row as isize + (x0 * s) as isize + shift) as usize;
                if s == 1 {
                    let irow = &mut into_b[start..start + grow.len()];
                    for (i, gv) in irow.iter_mut().zip(grow) {
                        *i += wv * *gv;
                    }
                } else {
                    for (j, gv) in grow.iter().enumerate() {
                        into_b[start + j * s] += wv * *gv;
                    }
                }
            });
        }
    }
}

/// `gw[a, b, k] += sum_o g[a, o] * x[b, o*s + k - p]`.
pub(crate) fn weight_grad<R: Real>(
    x: &[R],
    x_dims: Dims3,
    grad: &[R],
    grad_dims: Dims3,
    lead: usize,
    second: usize,
    g: &ConvGeometry,
    gw: &mut [R],
) {
    let kvol = g.kernel.pow(3);
    let in_vol = x_dims.iter().product::<usize>();
    let grad_vol = grad_dims.iter().product::<usize>();
    let s = g.stride;
    for a in 0..lead {
        let g_a = &grad[a * grad_vol..(a + 1) * grad_vol];
        for b in 0..second {
            let x_b = &x[b * in_vol..(b + 1) * in_vol];
            let gw_ab = &mut gw[(a * second + b) * kvol..(a * second + b + 1) * kvol];
            for_each_tap(g, x_dims, grad_dims, |kidx, in_row, out_row, (x0, x1), shift| {
                let grow = &g_a[out_row + x0..=out_row + x1];
                let start = (in_row as isize + (x0 * s) as isize + shift) as usize;
                let mut acc = R::zero();
                if s == 1 {
                    for (gv, xv) in grow.iter().zip(&x_b[start..start + grow.len()]) {
                        acc += *gv * *xv;
                    }
                } else {
                    for (j, gv) in grow.iter().enumerate() {
                        acc += *gv * x_b[start + j * s];
                    }
                }
                gw_ab[kidx] += acc;
            });
        }
    }
}

fn conv_dims<T: Real>(input: &Tensor<T>, params: &LayerView<'_, T>) -> Result<(Dims3, Dims3)> {
    let (c, dims) = spatial(input.shape()).ok_or_else(|| {
        Error::Shape(format!(
            "{:?} expects a [C, D, H, W] input, got {:?} (weight {:?})",
            params.kind,
            input.shape(),
            params.weight.shape()
        ))
    })?;
    if c != params.in_channels() {
        return Err(Error::Shape(format!(
            "{:?} input {:?} has {c} channels but weight {:?} expects {}",
            params.kind,
            input.shape(),
            params.weight.shape(),
            params.in_channels()
        )));
    }
    let g = &params.geometry;
    let out = dims.map(|n| match params.kind {
        LayerKind::ConvTranspose3d => g.transpose_out(n),
        _ => g.conv_out(n),
    });
    match out {
        [Some(d), Some(h), Some(w)] => Ok((dims, [d, h, w])),
        _ => Err(Error::Shape(format!(
            "{:?} input {:?} too small for weight {:?} with kernel {} stride {} padding {}",
            params.kind,
            input.shape(),
            params.weight.shape(),
            g.kernel,
            g.stride,
            g.padding
        ))),
    }
}

fn broadcast_bias<T: Real>(bias: &Tensor<T>, out_dims: Dims3) -> Vec<T> {
    let vol: usize = out_dims.iter().product();
    bias.data()
        .iter()
        .flat_map(|b| std::iter::repeat_n(*b, vol))
        .collect()
}

fn channel_sums<T: Real>(grad: &[T], channels: usize) -> Tensor<T> {
    let vol = grad.len() / channels;
    Tensor::vector(grad.chunks(vol).map(|c| c.iter().copied().sum()).collect())
}

/// Cross-correlation with optional zero padding; output side `floor((n + 2p - k) / s) + 1`.
pub fn conv3d<T: Real>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<Tensor<T>> {
    conv3d_view(input, &params.view())
}

fn conv3d_view<T: Real>(input: &Tensor<T>, params: &LayerView<'_, T>) -> Result<Tensor<T>> {
    if params.kind != LayerKind::Conv3d {
        return Err(Error::Shape(format!("conv3d called with {:?} params", params.kind)));
    }
    let (in_dims, out_dims) = conv_dims(input, params)?;
    let cout = params.out_channels();
    let mut out = broadcast_bias(&params.bias, out_dims);
    correlate(
        input.data(),
        in_dims,
        params.weight.data(),
        cout,
        params.in_channels(),
        &params.geometry,
        &mut out,
        out_dims,
    );
    Ok(Tensor::from_parts(
        vec![cout, out_dims[0], out_dims[1], out_dims[2]],
        out,
    ))
}

/// Transposed convolution; output side `(n - 1) s - 2p + k`.
pub fn convtranspose3d<T: Real>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<Tensor<T>> {
    convtranspose3d_view(input, &params.view())
}

fn convtranspose3d_view<T: Real>(input: &Tensor<T>, params: &LayerView<'_, T>) -> Result<Tensor<T>> {
    if params.kind != LayerKind::ConvTranspose3d {
        return Err(Error::Shape(format!(
            "convtranspose3d called with {:?} params",
            params.kind
        )));
    }
    let (in_dims, out_dims) = conv_dims(input, params)?;
    let cout = params.out_channels();
    let mut out = broadcast_bias(&params.bias, out_dims);
    scatter(
        input.data(),
        in_dims,
        params.weight.data(),
        params.in_channels(),
        cout,
        &params.geometry,
        &mut out,
        out_dims,
    );
    Ok(Tensor::from_parts(
        vec![cout, out_dims[0], out_dims[1], out_dims[2]],
        out,
    ))
}

/// `W x + b`; any input shape with `N` elements is treated as a flat vector.
pub fn linear<T: Real>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<Tensor<T>> {
    linear_view(input, &params.view())
}

fn linear_view<T: Real>(input: &Tensor<T>, params: &LayerView<'_, T>) -> Result<Tensor<T>> {
    let ws = params.weight.shape();
    if params.kind != LayerKind::Linear || ws.len() != 2 || ws[1] != input.len() {
        return Err(Error::Shape(format!(
            "linear weight {ws:?} cannot consume input {:?}",
            input.shape()
        )));
    }
    let n = ws[1];
    let x = input.data();
    let out = params
        .weight
        .data()
        .chunks(n)
        .zip(params.bias.data())
        .map(|(row, b)| {
            let mut acc = *b;
            for (w, v) in row.iter().zip(x) {
                acc += *w * *v;
            }
            acc
        })
        .collect();
    Ok(Tensor::vector(out))
}

/// Gradients of one layer application.
pub struct LayerGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn layer_backward<T: Real>(
    input: &Tensor<T>,
    params: &LayerView<'_, T>,
    grad_out: &Tensor<T>,
) -> Result<LayerGrads<T>> {
    match params.kind {
        LayerKind::Linear => {
            let ws = params.weight.shape();
            let (m, n) = (ws[0], ws[1]);
            if grad_out.len() != m || input.len() != n {
                return Err(Error::Shape(format!(
                    "linear backward: weight {ws:?}, input {:?}, grad {:?}",
                    input.shape(),
                    grad_out.shape()
                )));
            }
            let g = grad_out.data();
            let x = input.data();
            let mut gx = vec![T::zero(); n];
            let mut gw = vec![T::zero(); m * n];
            for ((row, grow), gv) in params.weight.data().chunks(n).zip(gw.chunks_mut(n)).zip(g) {
                for ((gxi, wi), (gwi, xi)) in gx.iter_mut().zip(row).zip(grow.iter_mut().zip(x)) {
                    *gxi += *wi * *gv;
                    *gwi = *gv * *xi;
                }
            }
            Ok(LayerGrads {
                input: Tensor::from_parts(input.shape().to_vec(), gx),
                weight: Tensor::from_parts(ws.to_vec(), gw),
                bias: Tensor::from_parts(vec![m], g.to_vec()),
            })
        }
        LayerKind::Conv3d | LayerKind::ConvTranspose3d => {
            let (in_dims, out_dims) = conv_dims(input, params)?;
            let cout = params.out_channels();
            let expected = [cout, out_dims[0], out_dims[1], out_dims[2]];
            if grad_out.shape() != expected {
                return Err(Error::Shape(format!(
                    "{:?} backward: grad {:?} does not match output {expected:?}",
                    params.kind,
                    grad_out.shape()
                )));
            }
            let cin = params.in_channels();
            let geom = &params.geometry;
            let w = params.weight.data();
            let mut gx = vec![T::zero(); input.len()];
            let mut gw = vec![T::zero(); params.weight.len()];
            if params.kind == LayerKind::Conv3d {
                scatter(grad_out.data(), out_dims, w, cout, cin, geom, &mut gx, in_dims);
                weight_grad(input.data(), in_dims, grad_out.data(), out_dims, cout, cin, geom, &mut gw);
            } else {
                correlate(grad_out.data(), out_dims, w, cin, cout, geom, &mut gx, in_dims);
                weight_grad(grad_out.data(), out_dims, input.data(), in_dims, cin, cout, geom, &mut gw);
            }
            Ok(LayerGrads {
                input: Tensor::from_parts(input.shape().to_vec(), gx),
                weight: Tensor::from_parts(params.weight.shape().to_vec(), gw),
                bias: channel_sums(grad_out.data(), cout),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn activation<T: Real>(input: &Tensor<T>, kind: Activation) -> Tensor<T> {
    match kind {
        Activation::Relu => input.map(|v| v.max(T::zero())),
        Activation::Sigmoid => input.map(sigmoid),
    }
}
