//! Uniform cell-centred grid on a rectangle and scalar fields living on it.
//!
//! Cells are stored row-major: cell `(i, j)` with `i` the x-index and `j` the
//! y-index has linear index `j * nx + i`. Cell centres sit at
//! `((i + 1/2) hx, (j + 1/2) hy)`.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_GRID_ID: AtomicU64 = AtomicU64::new(1);

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self { x0, x1, y0, y1 }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

/// Which subdomain mask to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mask {
    /// The whole domain.
    Full,
    /// The control subdomain.
    Control,
    /// The observation subdomain.
    Observe,
}

#[derive(Debug, Clone)]
pub struct Grid2D {
    id: u64,
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    hx: f64,
    hy: f64,
    control_mask: Vec<bool>,
    observe_mask: Vec<bool>,
    control_cells: Vec<usize>,
}

impl PartialEq for Grid2D {
    fn eq(&self, other: &Self) -> bool {
        self.nx == other.nx
            && self.ny == other.ny
            && self.lx == other.lx
            && self.ly == other.ly
            && self.control_mask == other.control_mask
            && self.observe_mask == other.observe_mask
    }
}

impl Grid2D {
    /// Builds the grid and rasterizes the control and observation rectangles
    /// onto cell centres.
    pub fn new(lx: f64, ly: f64, nx: usize, ny: usize, control: Rect, observe: Rect) -> Result<Self> {
        if !(lx.is_finite() && ly.is_finite()) || lx <= 0.0 || ly <= 0.0 {
            return Err(Error::InvalidGrid(format!("zero-area domain {lx} x {ly}")));
        }
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2x2 cells, got {nx}x{ny}")));
        }
        let hx = lx / nx as f64;
        let hy = ly / ny as f64;
        let raster = |r: &Rect, name: &str| -> Result<Vec<bool>> {
            let mask: Vec<bool> = (0..nx * ny)
                .map(|k| {
                    let (i, j) = (k % nx, k / nx);
                    r.contains((i as f64 + 0.5) * hx, (j as f64 + 0.5) * hy)
                })
                .collect();
            if mask.iter().any(|&m| m) {
                Ok(mask)
            } else {
                Err(Error::EmptyMask(name.to_string()))
            }
        };
        let control_mask = raster(&control, "control")?;
        let observe_mask = raster(&observe, "observe")?;
        let control_cells = (0..nx * ny).filter(|&k| control_mask[k]).collect();
        Ok(Self {
            id: NEXT_GRID_ID.fetch_add(1, Ordering::Relaxed),
            nx,
            ny,
            lx,
            ly,
            hx,
            hy,
            control_mask,
            observe_mask,
            control_cells,
        })
    }

    /// Grid with both subdomains equal to the whole rectangle.
    pub fn full(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Self> {
        let r = Rect::new(0.0, lx, 0.0, ly);
        Self::new(lx, ly, nx, ny, r, r)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn hx(&self) -> f64 {
        self.hx
    }
    pub fn hy(&self) -> f64 {
        self.hy
    }
    pub fn lx(&self) -> f64 {
        self.lx
    }
    pub fn ly(&self) -> f64 {
        self.ly
    }
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }
    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }

    pub fn center(&self, k: usize) -> (f64, f64) {
        let (i, j) = (k % self.nx, k / self.nx);
        ((i as f64 + 0.5) * self.hx, (j as f64 + 0.5) * self.hy)
    }

    pub fn mask(&self, which: Mask) -> Option<&[bool]> {
        match which {
            Mask::Full => None,
            Mask::Control => Some(&self.control_mask),
            Mask::Observe => Some(&self.observe_mask),
        }
    }

    pub fn control_mask(&self) -> &[bool] {
        &self.control_mask
    }
    pub fn observe_mask(&self) -> &[bool] {
        &self.observe_mask
    }

    /// Linear indices of the control cells, ascending.
    pub fn control_cells(&self) -> &[usize] {
        &self.control_cells
    }

    pub fn is_in(&self, which: Mask, k: usize) -> bool {
        self.mask(which).is_none_or(|m| m[k])
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// True if both handles refer to the same grid instance (or an identical copy).
    pub fn same_as(&self, other: &Grid2D) -> bool {
        self.id == other.id || self == other
    }
}

/// One scalar value per cell of a grid.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid_id: u64,
    nx: usize,
    ny: usize,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Grid2D) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Grid2D, c: f64) -> Self {
        Self { grid_id: grid.id, nx: grid.nx, ny: grid.ny, values: vec![c; grid.len()] }
    }

    pub fn from_values(grid: &Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension { expected: (grid.nx, grid.ny), found: values.len() });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("field value at cell {k}")));
        }
        Ok(Self { grid_id: grid.id, nx: grid.nx, ny: grid.ny, values })
    }

    /// Samples `f(x, y)` at cell centres.
    pub fn from_fn(grid: &Grid2D, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|k| {
                let (x, y) = grid.center(k);
                f(x, y)
            })
            .collect();
        Self { grid_id: grid.id, nx: grid.nx, ny: grid.ny, values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Identity of the grid this field was created on.
    pub fn grid_id(&self) -> u64 {
        self.grid_id
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn on(&self, grid: &Grid2D) -> bool {
        self.nx == grid.nx && self.ny == grid.ny
    }

    pub fn check_grid(&self, grid: &Grid2D) -> Result<()> {
        if self.on(grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub(crate) fn same_shape(&self, other: &ScalarField) -> Result<()> {
        if self.nx == other.nx && self.ny == other.ny {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self { grid_id: self.grid_id, nx: self.nx, ny: self.ny, values }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `a * self + b * other`.
    pub fn axpby(&self, a: f64, other: &ScalarField, b: f64) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        self.with_values(values)
    }

    pub fn scale(&self, a: f64) -> Self {
        self.with_values(self.values.iter().map(|x| a * x).collect())
    }

    /// Plain Euclidean dot product of the value vectors (no cell weights).
    pub fn dot(&self, other: &ScalarField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }
}

/// Midpoint-rule integral `Σ w · hx · hy`.
pub fn integrate(grid: &Grid2D, w: &ScalarField) -> f64 {
    w.values.iter().sum::<f64>() * grid.cell_area()
}

/// `Σ_{mask} w² · hx · hy`.
pub fn masked_l2_sq(grid: &Grid2D, w: &ScalarField, which: Mask) -> f64 {
    let sum: f64 = match grid.mask(which) {
        None => w.values.iter().map(|v| v * v).sum(),
        Some(m) => w.values.iter().zip(m).filter(|(_, &b)| b).map(|(v, _)| v * v).sum(),
    };
    sum * grid.cell_area()
}
