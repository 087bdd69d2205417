//! Dense numeric kernels shared by the model, saliency and saccade code.
//!
//! Storage is `f32`; every reduction (dot products, sums, moments) accumulates
//! in `f64` and in a fixed order, so a kernel's output depends only on its
//! inputs and never on the thread count.

use rayon::prelude::*;

use crate::error::{ensure, Error, Result};

/// Work threshold (multiply-adds) above which `matmul` splits rows across threads.
const PAR_MATMUL_WORK: usize = 1 << 18;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        ensure(data.len() == rows * cols, || {
            format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )
        })?;
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        ensure(rows.iter().all(|r| r.len() == cols), || {
            "ragged rows in matrix literal".to_string()
        })?;
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// New matrix made of the listed rows, in order.
    pub fn gather_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Row-major 2-D grid of values (attention and saliency maps).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl Grid2D {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        ensure(values.len() == height * width, || {
            format!(
                "grid values length {} does not match {height}x{width}",
                values.len()
            )
        })?;
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let m = Matrix::from_rows(rows)?;
        Ok(Self {
            height: m.rows,
            width: m.cols,
            values: m.data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                values.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            values,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.values[y * self.width + x] = v;
    }

    pub fn min(&self) -> f32 {
        self.values.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Corner values in the order top-left, top-right, bottom-left, bottom-right.
    pub fn corners(&self) -> [f32; 4] {
        let (h, w) = (self.height, self.width);
        [
            self.get(0, 0),
            self.get(0, w - 1),
            self.get(h - 1, 0),
            self.get(h - 1, w - 1),
        ]
    }
}

/// Matrix product `a * b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    ensure(a.cols == b.rows, || {
        format!(
            "matmul dimension mismatch: {}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )
    })?;
    let mut out = Matrix::zeros(a.rows, b.cols);
    if b.cols == 0 {
        return Ok(out);
    }
    let work = a.rows * a.cols * b.cols;
    if work >= PAR_MATMUL_WORK {
        out.data
            .par_chunks_mut(b.cols)
            .enumerate()
            .for_each_init(
                || vec![0f64; b.cols],
                |acc, (i, dst)| matmul_row(a.row(i), b, acc, dst),
            );
    } else {
        let mut acc = vec![0f64; b.cols];
        for (i, dst) in out.data.chunks_mut(b.cols).enumerate() {
            matmul_row(a.row(i), b, &mut acc, dst);
        }
    }
    Ok(out)
}

#[inline]
fn matmul_row(a_row: &[f32], b: &Matrix, acc: &mut [f64], dst: &mut [f32]) {
    acc.fill(0.0);
    for (k, &aik) in a_row.iter().enumerate() {
        let aik = aik as f64;
        for (s, &bkj) in acc.iter_mut().zip(b.row(k)) {
            *s += aik * bkj as f64;
        }
    }
    for (d, s) in dst.iter_mut().zip(acc.iter()) {
        *d = *s as f32;
    }
}

/// `x * w + bias`, with `bias` broadcast over rows.
pub fn linear(x: &Matrix, w: &Matrix, bias: &[f32]) -> Result<Matrix> {
    ensure(bias.len() == w.cols, || {
        format!("bias length {} does not match {} outputs", bias.len(), w.cols)
    })?;
    let mut out = matmul(x, w)?;
    for r in 0..out.rows {
        for (v, b) in out.row_mut(r).iter_mut().zip(bias) {
            *v += *b;
        }
    }
    Ok(out)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(m: &Matrix) -> Result<Matrix> {
    if !m.is_finite() {
        return Err(Error::contract("softmax input contains non-finite values"));
    }
    let mut out = m.clone();
    for r in 0..out.rows {
        softmax_in_place(out.row_mut(r));
    }
    Ok(out)
}

/// In-place softmax of one finite row.
pub fn softmax_in_place(row: &mut [f32]) {
    if row.is_empty() {
        return;
    }
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    for (dst, e) in row.iter_mut().zip(exps) {
        *dst = (e / sum) as f32;
    }
}

/// Layer normalization with learned gain and bias (population variance).
pub fn layer_norm(v: &[f32], gain: &[f32], bias: &[f32], eps: f32) -> Result<Vec<f32>> {
    ensure(v.len() == gain.len() && v.len() == bias.len(), || {
        format!(
            "layer_norm length mismatch: input {}, gain {}, bias {}",
            v.len(),
            gain.len(),
            bias.len()
        )
    })?;
    ensure(eps > 0.0, || format!("layer_norm eps must be positive, got {eps}"))?;
    let mut out = vec![0f32; v.len()];
    layer_norm_into(v, gain, bias, eps, &mut out);
    Ok(out)
}

pub(crate) fn layer_norm_into(v: &[f32], gain: &[f32], bias: &[f32], eps: f32, out: &mut [f32]) {
    let n = v.len() as f64;
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v
        .iter()
        .map(|&x| {
            let d = x as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let inv = 1.0 / (var + eps as f64).sqrt();
    for i in 0..v.len() {
        out[i] = ((v[i] as f64 - mean) * inv * gain[i] as f64 + bias[i] as f64) as f32;
    }
}

/// Row-wise layer normalization of a matrix.
pub fn layer_norm_rows(m: &Matrix, gain: &[f32], bias: &[f32], eps: f32) -> Result<Matrix> {
    ensure(m.cols == gain.len() && m.cols == bias.len(), || {
        format!(
            "layer_norm width {} does not match gain {} / bias {}",
            m.cols,
            gain.len(),
            bias.len()
        )
    })?;
    let mut out = Matrix::zeros(m.rows, m.cols);
    for r in 0..m.rows {
        let (src, dst) = (m.row(r), &mut out.data[r * m.cols..(r + 1) * m.cols]);
        layer_norm_into(src, gain, bias, eps, dst);
    }
    Ok(out)
}

/// GELU, tanh approximation.
pub fn gelu(v: &[f32]) -> Vec<f32> {
    v.iter().map(|&x| gelu_scalar(x)).collect()
}

#[inline]
pub(crate) fn gelu_scalar(x: f32) -> f32 {
    const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
    let x = x as f64;
    (0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + 0.044_715 * x * x * x)).tanh())) as f32
}

/// Bilinear resampling with aligned corners: output corner cells sample the
/// input corner cells exactly.
pub fn bilinear_resize(g: &Grid2D, out_h: usize, out_w: usize) -> Result<Grid2D> {
    ensure(g.height >= 1 && g.width >= 1, || {
        format!("cannot resize an empty {}x{} grid", g.height, g.width)
    })?;
    ensure(out_h >= 1 && out_w >= 1, || {
        format!("cannot resize to an empty {out_h}x{out_w} grid")
    })?;
    let ys: Vec<(usize, usize, f64)> = (0..out_h).map(|i| source_coord(i, g.height, out_h)).collect();
    let xs: Vec<(usize, usize, f64)> = (0..out_w).map(|j| source_coord(j, g.width, out_w)).collect();
    let mut values = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, ty) in &ys {
        for &(x0, x1, tx) in &xs {
            let top = lerp(g.get(y0, x0) as f64, g.get(y0, x1) as f64, tx);
            let bottom = lerp(g.get(y1, x0) as f64, g.get(y1, x1) as f64, tx);
            values.push(lerp(top, bottom, ty) as f32);
        }
    }
    Ok(Grid2D {
        height: out_h,
        width: out_w,
        values,
    })
}

/// Aligned-corner source position for output index `i`: (lower, upper, frac).
fn source_coord(i: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    if out_len == 1 || in_len == 1 {
        return (0, 0, 0.0);
    }
    let num = i * (in_len - 1);
    let den = out_len - 1;
    let lo = num / den;
    let frac = (num % den) as f64 / den as f64;
    (lo, (lo + 1).min(in_len - 1), frac)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a * (1.0 - t) + b * t
    }
}
