//! Fixation selection with inhibition of return.
//!
//! A fixation is the arg-max cell of the working map. The fovea is the
//! `f x f` token window around it, shifted inward at borders so it always
//! holds exactly `f * f` cells; the same window is then suppressed so later
//! fixations land elsewhere.

use std::io::Write;

use crate::error::{ensure, Error, Result};
use crate::saliency::{SaliencyGrid, SourceTag};
use crate::tensor::Grid2D;

/// Value written into suppressed cells.
pub const SUPPRESSED_VALUE: f32 = -1e30;

pub type Cell = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FoveaSpec {
    /// Tokens per side; odd.
    pub size: usize,
    /// Patch grid `(rows, cols)`.
    pub grid: (usize, usize),
    pub patch_size: usize,
}

impl FoveaSpec {
    pub fn new(size: usize, grid: (usize, usize), patch_size: usize) -> Result<Self> {
        ensure(size % 2 == 1, || format!("fovea size {size} must be odd"))?;
        ensure(size <= grid.0.min(grid.1), || {
            format!("fovea size {size} exceeds grid {}x{}", grid.0, grid.1)
        })?;
        ensure(patch_size >= 1, || "patch size must be positive".into())?;
        Ok(Self {
            size,
            grid,
            patch_size,
        })
    }

    pub fn num_cells(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    /// Fovea side in pixels.
    pub fn pixels(&self) -> usize {
        self.size * self.patch_size
    }

    /// Center moved inward so the whole window fits in the grid.
    pub fn clamp_center(&self, (r, c): Cell) -> Cell {
        let h = self.size / 2;
        (r.clamp(h, self.grid.0 - 1 - h), c.clamp(h, self.grid.1 - 1 - h))
    }

    /// Top-left cell of the (clamped) window.
    pub fn window_origin(&self, center: Cell) -> Cell {
        let (r, c) = self.clamp_center(center);
        let h = self.size / 2;
        (r - h, c - h)
    }

    fn window_cells(&self, center: Cell) -> impl Iterator<Item = usize> + '_ {
        let (r0, c0) = self.window_origin(center);
        let (f, w) = (self.size, self.grid.1);
        (r0..r0 + f).flat_map(move |r| (c0..c0 + f).map(move |c| r * w + c))
    }

    fn check_center(&self, (r, c): Cell) -> Result<()> {
        ensure(r < self.grid.0 && c < self.grid.1, || {
            format!("center ({r},{c}) outside {}x{} grid", self.grid.0, self.grid.1)
        })
    }
}

/// Saliency values plus the cells already suppressed.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkingGrid {
    pub values: Grid2D,
    pub suppressed: Vec<bool>,
    pub fixations: usize,
}

impl WorkingGrid {
    pub fn new(values: Grid2D) -> Self {
        let n = values.len();
        Self {
            values,
            suppressed: vec![false; n],
            fixations: 0,
        }
    }
}

/// Arg-max over unsuppressed cells; ties go to the smallest row, then column.
pub fn select_fixation_in(values: &Grid2D, suppressed: &[bool]) -> Option<Cell> {
    let mut best: Option<(usize, f32)> = None;
    for (i, (&v, &s)) in values.values().iter().zip(suppressed).enumerate() {
        if s {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| (i / values.width(), i % values.width()))
}

pub fn select_fixation(state: &WorkingGrid) -> Result<Cell> {
    select_fixation_in(&state.values, &state.suppressed).ok_or(Error::Exhausted {
        step: state.fixations + 1,
    })
}

/// Suppresses the fovea window around `center`.
pub fn apply_inhibition(state: &mut WorkingGrid, center: Cell, spec: &FoveaSpec) -> Result<()> {
    spec.check_center(center)?;
    ensure(
        (state.values.height(), state.values.width()) == spec.grid,
        || "working grid does not match fovea spec".into(),
    )?;
    for i in spec.window_cells(center) {
        state.values.values_mut()[i] = SUPPRESSED_VALUE;
        state.suppressed[i] = true;
    }
    state.fixations += 1;
    Ok(())
}

/// Boolean grid (row-major) with the `f x f` window around `center` set.
pub fn fovea_mask(center: Cell, spec: &FoveaSpec) -> Result<Vec<bool>> {
    spec.check_center(center)?;
    let mut mask = vec![false; spec.num_cells()];
    for i in spec.window_cells(center) {
        mask[i] = true;
    }
    Ok(mask)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaccadeTrace {
    /// Arg-max cells in fixation order.
    pub centers: Vec<Cell>,
    /// Cumulative reveal mask after each fixation.
    pub masks: Vec<Vec<bool>>,
    pub revealed_cells: Vec<usize>,
    /// Fraction of image pixels visible after each fixation.
    pub revealed_fraction: Vec<f64>,
    pub source: SourceTag,
    pub spec: FoveaSpec,
}

impl SaccadeTrace {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// `k` fixations on `sal`, accumulating reveal masks.
pub fn run_saccade_sequence(sal: &SaliencyGrid, spec: &FoveaSpec, k: usize) -> Result<SaccadeTrace> {
    ensure(k >= 1, || "at least one saccade is required".into())?;
    ensure((sal.grid.height(), sal.grid.width()) == spec.grid, || {
        format!(
            "saliency grid {}x{} does not match fovea grid {}x{}",
            sal.grid.height(),
            sal.grid.width(),
            spec.grid.0,
            spec.grid.1
        )
    })?;
    let mut state = WorkingGrid::new(sal.grid.clone());
    let mut mask = vec![false; spec.num_cells()];
    let pixel_area = (spec.grid.0 * spec.patch_size * spec.grid.1 * spec.patch_size) as f64;
    let mut trace = SaccadeTrace {
        centers: Vec::with_capacity(k),
        masks: Vec::with_capacity(k),
        revealed_cells: Vec::with_capacity(k),
        revealed_fraction: Vec::with_capacity(k),
        source: sal.source,
        spec: *spec,
    };
    for _ in 0..k {
        let center = select_fixation(&state)?;
        for (m, f) in mask.iter_mut().zip(fovea_mask(center, spec)?) {
            *m |= f;
        }
        apply_inhibition(&mut state, center, spec)?;
        let cells = mask.iter().filter(|&&m| m).count();
        trace.centers.push(center);
        trace.masks.push(mask.clone());
        trace.revealed_cells.push(cells);
        trace
            .revealed_fraction
            .push((cells * spec.patch_size * spec.patch_size) as f64 / pixel_area);
    }
    Ok(trace)
}

/// Fixation distances in token-grid units.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DistanceReport {
    /// Per-index distance between two traces, when a second trace is given.
    pub cross: Option<Vec<f64>>,
    /// Distance of every fixation from the first one (entry 0 is 0).
    pub from_first: Vec<f64>,
    /// Distance of fixation `i` from fixation `i - 1`, for `i >= 1`.
    pub from_previous: Vec<f64>,
}

fn euclid(a: Cell, b: Cell) -> f64 {
    let dy = a.0 as f64 - b.0 as f64;
    let dx = a.1 as f64 - b.1 as f64;
    (dy * dy + dx * dx).sqrt()
}

pub fn fixation_distances(a: &SaccadeTrace, b: Option<&SaccadeTrace>) -> Result<DistanceReport> {
    distances_of(&a.centers, b.map(|t| t.centers.as_slice()))
}

pub fn distances_of(a: &[Cell], b: Option<&[Cell]>) -> Result<DistanceReport> {
    let cross = match b {
        Some(b) => {
            ensure(a.len() == b.len(), || {
                format!("trace lengths differ: {} vs {}", a.len(), b.len())
            })?;
            Some(a.iter().zip(b).map(|(&p, &q)| euclid(p, q)).collect())
        }
        None => None,
    };
    let from_first = a.iter().map(|&p| euclid(p, a[0])).collect();
    let from_previous = a.windows(2).map(|w| euclid(w[1], w[0])).collect();
    Ok(DistanceReport {
        cross,
        from_first,
        from_previous,
    })
}

pub const TRACE_CSV_HEADER: [&str; 7] = [
    "image_id",
    "saccade_index",
    "row",
    "col",
    "revealed_cells",
    "revealed_fraction",
    "source",
];

/// One CSV row per fixation, `saccade_index` starting at 1.
pub fn write_trace_csv<'a, W: Write>(
    out: W,
    traces: impl IntoIterator<Item = (&'a str, &'a SaccadeTrace)>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::contract(format!("csv write failed: {e}"));
    w.write_record(TRACE_CSV_HEADER).map_err(csv_err)?;
    for (id, trace) in traces {
        for i in 0..trace.len() {
            let (r, c) = trace.centers[i];
            w.write_record([
                id.to_string(),
                (i + 1).to_string(),
                r.to_string(),
                c.to_string(),
                trace.revealed_cells[i].to_string(),
                crate::harness::fmt_float(trace.revealed_fraction[i]),
                trace.source.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::contract(format!("csv flush failed: {e}")))?;
    Ok(())
}
