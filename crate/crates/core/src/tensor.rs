//! Small dense-tensor kernels: convolution, activations, pooling and
//! bilinear sampling. Storage is `f32`; every reduction accumulates in `f64`.

use crate::error::{shape_err, Error, Result};

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("tensor contains non-finite values".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: Vec<usize>, value: f32) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> f32) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(C, H, W)` of a rank-3 tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(shape_err!("expected a C×H×W tensor, got shape {:?}", self.shape)),
        }
    }

    #[inline]
    pub fn at3(&self, c: usize, y: usize, x: usize) -> f32 {
        let (h, w) = (self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(shape_err!(
                "elementwise op on shapes {:?} and {:?}",
                self.shape,
                other.shape
            ));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f32) -> Tensor {
        self.map(|v| v * s)
    }

    /// Concatenates rank-3 tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| shape_err!("nothing to concatenate"))?;
        let (_, h, w) = first.chw()?;
        let mut c_total = 0;
        let mut data = Vec::new();
        for t in parts {
            let (c, th, tw) = t.chw()?;
            if (th, tw) != (h, w) {
                return Err(shape_err!("concat of {h}x{w} with {th}x{tw}"));
            }
            c_total += c;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: vec![c_total, h, w],
            data,
        })
    }

    /// Multiplies channel `c` of a rank-3 tensor by `scales[c]`.
    pub fn scale_channels(&self, scales: &[f32]) -> Result<Tensor> {
        let (c, h, w) = self.chw()?;
        if scales.len() != c {
            return Err(shape_err!("{} channel scales for {c} channels", scales.len()));
        }
        let mut out = self.clone();
        for (ch, s) in out.data.chunks_mut(h * w).zip(scales) {
            ch.iter_mut().for_each(|v| *v *= s);
        }
        Ok(out)
    }
}

/// Stride-1 cross-correlation with zero padding that preserves `H × W`.
/// Supports `1×1` and `3×3` kernels of shape `C_out × C_in × k × k`.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (c_in, h, w) = input.chw()?;
    let [c_out, k_in, kh, kw] = kernel.shape[..] else {
        return Err(shape_err!("conv kernel must be rank 4, got {:?}", kernel.shape));
    };
    if k_in != c_in {
        return Err(shape_err!("kernel expects {k_in} input channels, input has {c_in}"));
    }
    if kh != kw || !(kh == 1 || kh == 3) {
        return Err(shape_err!("unsupported kernel size {kh}x{kw}"));
    }
    if bias.shape != [c_out] {
        return Err(shape_err!("bias shape {:?} for {c_out} output channels", bias.shape));
    }
    let pad = (kh / 2) as isize;
    let mut out = vec![0f32; c_out * h * w];
    let mut acc = vec![0f64; h * w];
    for co in 0..c_out {
        acc.iter_mut().for_each(|a| *a = bias.data[co] as f64);
        for ci in 0..c_in {
            let plane = &input.data[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wgt = kernel.data[((co * c_in + ci) * kh + ky) * kw + kx] as f64;
                    if wgt == 0.0 {
                        continue;
                    }
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (h as isize - dy).min(h as isize).max(0) as usize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let src = &plane[sy * w..(sy + 1) * w];
                        let dst = &mut acc[y * w..(y + 1) * w];
                        for x in x0..x1 {
                            dst[x] += wgt * src[(x as isize + dx) as usize] as f64;
                        }
                    }
                }
            }
        }
        for (o, a) in out[co * h * w..(co + 1) * h * w].iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    }
    Ok(Tensor {
        shape: vec![c_out, h, w],
        data: out,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    /// Softmax across axis 0 at every remaining index.
    ChannelSoftmax,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activate(x: &Tensor, kind: Activation) -> Result<Tensor> {
    match kind {
        Activation::Sigmoid => Ok(x.map(|v| sigmoid(v as f64) as f32)),
        Activation::ChannelSoftmax => {
            let c = *x
                .shape
                .first()
                .ok_or_else(|| shape_err!("softmax needs a channel axis"))?;
            if c == 0 {
                return Err(shape_err!("softmax over zero channels"));
            }
            let site = x.data.len() / c;
            let mut out = vec![0f32; x.data.len()];
            let mut buf = vec![0f64; c];
            for s in 0..site {
                let m = (0..c).map(|k| x.data[k * site + s] as f64).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (k, b) in buf.iter_mut().enumerate() {
                    *b = (x.data[k * site + s] as f64 - m).exp();
                    sum += *b;
                }
                for (k, b) in buf.iter().enumerate() {
                    out[k * site + s] = (b / sum) as f32;
                }
            }
            Ok(Tensor {
                shape: x.shape.clone(),
                data: out,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pool {
    Max2x2,
    /// Reduces each channel to its mean, giving `C × 1 × 1`.
    GlobalAvg,
}

pub fn pool(x: &Tensor, kind: Pool) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    match kind {
        Pool::Max2x2 => {
            if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
                return Err(shape_err!("max pool 2x2 needs even non-zero dims, got {h}x{w}"));
            }
            let (oh, ow) = (h / 2, w / 2);
            let mut out = Vec::with_capacity(c * oh * ow);
            for ch in 0..c {
                for y in 0..oh {
                    for xx in 0..ow {
                        let m = x
                            .at3(ch, 2 * y, 2 * xx)
                            .max(x.at3(ch, 2 * y, 2 * xx + 1))
                            .max(x.at3(ch, 2 * y + 1, 2 * xx))
                            .max(x.at3(ch, 2 * y + 1, 2 * xx + 1));
                        out.push(m);
                    }
                }
            }
            Ok(Tensor {
                shape: vec![c, oh, ow],
                data: out,
            })
        }
        Pool::GlobalAvg => {
            if h * w == 0 {
                return Err(shape_err!("global average over an empty plane"));
            }
            let data = x
                .data
                .chunks(h * w)
                .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / (h * w) as f64) as f32)
                .collect();
            Ok(Tensor {
                shape: vec![c, 1, 1],
                data,
            })
        }
    }
}

/// Maps a pixel coordinate to `[-1, 1]` with corner-aligned sampling
/// (pixel 0 → −1, pixel `size − 1` → +1).
#[inline]
pub fn normalize_coord(pixel: f64, size: usize) -> f64 {
    if size <= 1 {
        0.0
    } else {
        2.0 * pixel / (size - 1) as f64 - 1.0
    }
}

#[inline]
pub fn denormalize_coord(norm: f64, size: usize) -> f64 {
    if size <= 1 {
        0.0
    } else {
        (norm + 1.0) * 0.5 * (size - 1) as f64
    }
}

/// Pixel positions within f32 rounding of an integer site land on it, so
/// that sampling at sites expressed in normalized f32 gathers exactly.
#[inline]
fn snap_to_site(p: f64, size: usize) -> f64 {
    let n = p.round();
    if (p - n).abs() <= 4.0 * f32::EPSILON as f64 * size as f64 {
        n
    } else {
        p
    }
}

/// Bilinear sampling of `src` (`C × H × W`) at normalized coordinates
/// `coords` (`2 × H' × W'`, channel 0 = x along W, channel 1 = y along H).
/// Neighbours outside the source contribute zero.
pub fn bilinear_sample(src: &Tensor, coords: &Tensor) -> Result<Tensor> {
    let (c, h, w) = src.chw()?;
    let (two, oh, ow) = coords.chw()?;
    if two != 2 {
        return Err(shape_err!("sampling grid needs 2 channels, got {two}"));
    }
    let sites = oh * ow;
    let mut out = vec![0f32; c * sites];
    for s in 0..sites {
        let gx = coords.data[s] as f64;
        let gy = coords.data[sites + s] as f64;
        let px = snap_to_site(denormalize_coord(gx, w), w);
        let py = snap_to_site(denormalize_coord(gy, h), h);
        let x0 = px.floor();
        let y0 = py.floor();
        let fx = px - x0;
        let fy = py - y0;
        let taps = [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x0 + 1.0, y0, fx * (1.0 - fy)),
            (x0, y0 + 1.0, (1.0 - fx) * fy),
            (x0 + 1.0, y0 + 1.0, fx * fy),
        ];
        for ch in 0..c {
            let mut acc = 0.0f64;
            for &(tx, ty, wt) in &taps {
                if wt == 0.0 || tx < 0.0 || ty < 0.0 || tx >= w as f64 || ty >= h as f64 {
                    continue;
                }
                acc += wt * src.at3(ch, ty as usize, tx as usize) as f64;
            }
            out[ch * sites + s] = acc as f32;
        }
    }
    Ok(Tensor {
        shape: vec![c, oh, ow],
        data: out,
    })
}

/// Row-wise affine map: `x` is `N × C_in`, `weight` is `C_out × C_in`,
/// `bias` is `C_out`; returns `N × C_out`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [n, c_in] = x.shape[..] else {
        return Err(shape_err!("linear input must be N×C, got {:?}", x.shape));
    };
    let [c_out, k_in] = weight.shape[..] else {
        return Err(shape_err!("linear weight must be rank 2, got {:?}", weight.shape));
    };
    if k_in != c_in || bias.shape != [c_out] {
        return Err(shape_err!(
            "linear {c_in} -> weight {:?} / bias {:?}",
            weight.shape,
            bias.shape
        ));
    }
    let mut out = Vec::with_capacity(n * c_out);
    for row in x.data.chunks(c_in.max(1)).take(n) {
        for o in 0..c_out {
            let wrow = &weight.data[o * c_in..(o + 1) * c_in];
            let mut acc = bias.data[o] as f64;
            for (a, b) in row.iter().zip(wrow) {
                acc += *a as f64 * *b as f64;
            }
            out.push(acc as f32);
        }
    }
    if c_in == 0 {
        out = (0..n).flat_map(|_| bias.data.iter().copied()).collect();
    }
    Ok(Tensor {
        shape: vec![n, c_out],
        data: out,
    })
}
