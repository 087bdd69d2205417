//! Graph-based bottom-up saliency.
//!
//! Single-scale simplification of the GBVS family: seven feature channels
//! (intensity, red-green and blue-yellow opponency, four orientation
//! energies) are pooled onto a small working grid. Each channel becomes a
//! fully connected Markov chain whose edge weights combine feature
//! dissimilarity with spatial proximity; the stationary distribution is the
//! channel's activation. A second chain weighted by that activation
//! concentrates mass, and the channel results are averaged.

use crate::error::{ensure, Error, Result};
use crate::image::ImageTensor;
use crate::tensor::{bilinear_resize, Grid2D};

use super::{SaliencyGrid, SourceTag};

#[derive(Debug, Clone, PartialEq)]
pub struct GraphSaliencyParams {
    /// Longest side of the working grid; at most 32.
    pub working_grid: usize,
    /// Gaussian falloff as a fraction of the working-grid diagonal.
    pub sigma_fraction: f64,
    /// Floor applied to feature values before taking log ratios.
    pub feature_floor: f64,
    pub tolerance: f64,
    pub max_iters: usize,
    /// Output grid `(rows, cols)`.
    pub output_grid: (usize, usize),
    /// Channel statistics used to map the model input back to `[0, 1]`.
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for GraphSaliencyParams {
    fn default() -> Self {
        Self {
            working_grid: 32,
            sigma_fraction: 0.15,
            feature_floor: 1e-6,
            tolerance: 1e-8,
            max_iters: 10_000,
            output_grid: (14, 14),
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

/// Dense row-stochastic transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    n: usize,
    transition: Vec<f64>,
    /// Starting vector for power iteration.
    warm_start: Vec<f64>,
}

/// Stationary distribution and the power-iteration diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Stationary {
    pub pi: Vec<f64>,
    /// `|| pi P - pi ||_1` at exit.
    pub residual: f64,
    pub iterations: usize,
}

impl MarkovChain {
    /// Normalizes nonnegative `weights` (row-major `n x n`, `w[a][b]` is the
    /// weight of moving from `a` to `b`) into transition probabilities. Every
    /// row needs a positive sum.
    pub fn from_weights(n: usize, weights: Vec<f64>) -> Result<Self> {
        ensure(n >= 1 && weights.len() == n * n, || {
            format!("weight matrix of length {} is not {n}x{n}", weights.len())
        })?;
        ensure(weights.iter().all(|&w| w >= 0.0 && w.is_finite()), || {
            "transition weights must be finite and nonnegative".into()
        })?;
        // For weights of the form w[a][b] = u[a] s[a][b] u[b] with s symmetric,
        // the chain is reversible and pi[a] is proportional to the row sum;
        // row sums are a good starting point in every case.
        let mut transition = weights;
        let mut warm_start = vec![0.0; n];
        for a in 0..n {
            let row = &mut transition[a * n..(a + 1) * n];
            let sum: f64 = row.iter().sum();
            ensure(sum > 0.0, || format!("state {a} has no outgoing weight"))?;
            for w in row.iter_mut() {
                *w /= sum;
            }
            warm_start[a] = sum;
        }
        let total: f64 = warm_start.iter().sum();
        warm_start.iter_mut().for_each(|v| *v /= total);
        Ok(Self {
            n,
            transition,
            warm_start,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn probability(&self, from: usize, to: usize) -> f64 {
        self.transition[from * self.n + to]
    }

    /// Replaces the power-iteration starting vector (normalized internally).
    pub fn with_warm_start(mut self, start: Vec<f64>) -> Result<Self> {
        ensure(start.len() == self.n, || "warm start has the wrong length".into())?;
        let total: f64 = start.iter().sum();
        ensure(total > 0.0 && start.iter().all(|&v| v >= 0.0), || {
            "warm start must be nonnegative with a positive sum".into()
        })?;
        self.warm_start = start.into_iter().map(|v| v / total).collect();
        Ok(self)
    }

    /// Row vector times the transition matrix.
    pub fn step(&self, pi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (a, &p) in pi.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (o, &t) in out.iter_mut().zip(&self.transition[a * self.n..(a + 1) * self.n]) {
                *o += p * t;
            }
        }
        out
    }

    /// Power iteration until `|| pi P - pi ||_1 < tol`.
    pub fn stationary(&self, tol: f64, max_iters: usize) -> Result<Stationary> {
        let mut pi = self.warm_start.clone();
        let mut residual = f64::INFINITY;
        for iteration in 0..=max_iters {
            let next = self.step(&pi);
            residual = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
            if residual < tol {
                return Ok(Stationary {
                    pi,
                    residual,
                    iterations: iteration,
                });
            }
            let total: f64 = next.iter().sum();
            pi = next.into_iter().map(|v| v / total).collect();
        }
        Err(Error::NotConverged {
            iterations: max_iters,
            residual,
        })
    }
}

/// One feature channel's activation after both Markov passes.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelActivation {
    pub name: &'static str,
    /// `None` when the channel is constant and carries no contrast.
    pub activation: Option<Stationary>,
    pub normalized: Option<Stationary>,
    /// Final per-cell mass on the working grid (sums to 1).
    pub map: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphSaliency {
    pub saliency: SaliencyGrid,
    pub working_grid: (usize, usize),
    pub channels: Vec<ChannelActivation>,
}

pub fn graph_saliency(img: &ImageTensor, params: &GraphSaliencyParams) -> Result<SaliencyGrid> {
    Ok(graph_saliency_detailed(img, params)?.saliency)
}

/// Full computation, keeping each channel's chain diagnostics.
pub fn graph_saliency_detailed(img: &ImageTensor, params: &GraphSaliencyParams) -> Result<GraphSaliency> {
    ensure(img.height() >= 32 && img.width() >= 32, || {
        format!("graph saliency needs at least 32x32 pixels, got {}x{}", img.height(), img.width())
    })?;
    ensure((1..=32).contains(&params.working_grid), || {
        format!("working grid {} outside 1..=32", params.working_grid)
    })?;
    let gh = params.working_grid.min(img.height());
    let gw = params.working_grid.min(img.width());
    let n = gh * gw;

    let sigma = params.sigma_fraction * ((gh * gh + gw * gw) as f64).sqrt();
    let mut proximity = vec![0.0; n * n];
    for a in 0..n {
        let (ay, ax) = ((a / gw) as f64, (a % gw) as f64);
        for b in 0..n {
            let (by, bx) = ((b / gw) as f64, (b % gw) as f64);
            let d2 = (ay - by).powi(2) + (ax - bx).powi(2);
            proximity[a * n + b] = (-d2 / (2.0 * sigma * sigma)).exp();
        }
    }

    let mut channels = Vec::with_capacity(7);
    for (name, feature) in feature_channels(img, params) {
        let pooled = pool(&feature, img.height(), img.width(), gh, gw);
        channels.push(channel_activation(name, &pooled, &proximity, n, params)?);
    }

    let mut mean = vec![0.0; n];
    for ch in &channels {
        for (m, v) in mean.iter_mut().zip(&ch.map) {
            *m += v / channels.len() as f64;
        }
    }
    let working = Grid2D::new(gh, gw, mean.iter().map(|&v| v as f32).collect())?;
    let (oh, ow) = params.output_grid;
    let grid = bilinear_resize(&working, oh, ow)?;
    Ok(GraphSaliency {
        saliency: SaliencyGrid::new(grid, SourceTag::GraphBased)?,
        working_grid: (gh, gw),
        channels,
    })
}

fn channel_activation(
    name: &'static str,
    feature: &[f64],
    proximity: &[f64],
    n: usize,
    params: &GraphSaliencyParams,
) -> Result<ChannelActivation> {
    let logs: Vec<f64> = feature.iter().map(|&f| f.max(params.feature_floor).ln()).collect();
    let constant = logs.iter().all(|&l| l == logs[0]);
    if constant {
        return Ok(ChannelActivation {
            name,
            activation: None,
            normalized: None,
            map: vec![1.0 / n as f64; n],
        });
    }
    let mut weights = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            weights[a * n + b] = (logs[a] - logs[b]).abs() * proximity[a * n + b];
        }
    }
    let activation = MarkovChain::from_weights(n, weights)?.stationary(params.tolerance, params.max_iters)?;

    // Normalization pass: flow toward cells with high activation.
    let act = &activation.pi;
    let mut weights = vec![0.0; n * n];
    let mut warm = vec![0.0; n];
    for a in 0..n {
        let mut row_sum = 0.0;
        for b in 0..n {
            let w = act[b] * proximity[a * n + b];
            weights[a * n + b] = w;
            row_sum += w;
        }
        warm[a] = act[a] * row_sum;
    }
    let normalized = MarkovChain::from_weights(n, weights)?
        .with_warm_start(warm)?
        .stationary(params.tolerance, params.max_iters)?;
    let map = normalized.pi.clone();
    Ok(ChannelActivation {
        name,
        activation: Some(activation),
        normalized: Some(normalized),
        map,
    })
}

/// Full-resolution nonnegative feature maps, row-major.
fn feature_channels(img: &ImageTensor, params: &GraphSaliencyParams) -> Vec<(&'static str, Vec<f64>)> {
    let (h, w) = (img.height(), img.width());
    let mut intensity = Vec::with_capacity(h * w);
    let mut rg = Vec::with_capacity(h * w);
    let mut by = Vec::with_capacity(h * w);
    for px in img.data().chunks_exact(3) {
        let c: Vec<f64> = (0..3)
            .map(|i| (px[i] * params.std[i] + params.mean[i]) as f64)
            .collect();
        intensity.push(((c[0] + c[1] + c[2]) / 3.0).max(0.0));
        rg.push((c[0] - c[1]).abs());
        by.push((c[2] - 0.5 * (c[0] + c[1])).abs());
    }
    let at = |y: isize, x: isize| {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        intensity[y * w + x]
    };
    let angles = [0.0f64, 45.0, 90.0, 135.0];
    let mut orient: Vec<Vec<f64>> = (0..4).map(|_| Vec::with_capacity(h * w)).collect();
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = 0.5 * (at(y, x + 1) - at(y, x - 1));
            let gy = 0.5 * (at(y + 1, x) - at(y - 1, x));
            for (o, a) in orient.iter_mut().zip(angles) {
                let (s, c) = a.to_radians().sin_cos();
                o.push((gx * c + gy * s).abs());
            }
        }
    }
    let mut out = vec![("intensity", intensity), ("red_green", rg), ("blue_yellow", by)];
    for (name, o) in ["orientation_0", "orientation_45", "orientation_90", "orientation_135"]
        .into_iter()
        .zip(orient)
    {
        out.push((name, o));
    }
    out
}

/// Area average of a full-resolution map onto a `gh x gw` grid.
fn pool(map: &[f64], h: usize, w: usize, gh: usize, gw: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(gh * gw);
    for gy in 0..gh {
        let (y0, y1) = (gy * h / gh, (gy + 1) * h / gh);
        for gx in 0..gw {
            let (x0, x1) = (gx * w / gw, (gx + 1) * w / gw);
            let mut s = 0.0;
            for y in y0..y1 {
                s += map[y * w + x0..y * w + x1].iter().sum::<f64>();
            }
            out.push(s / ((y1 - y0) * (x1 - x0)) as f64);
        }
    }
    out
}
