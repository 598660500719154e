//! Sparse five-point matrices and the linear solvers used by every time step.
//!
//! The default route is a banded LU with partial pivoting. It is exact up to
//! rounding, and its transposed solve reuses the same factors, so forward,
//! tangent and adjoint sweeps see exactly transposed operators. BiCGSTAB is
//! available for grids too large for the band factorization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Matrix with the sparsity of a five-point stencil on an `nx × ny` grid.
///
/// Row `k` reads `c[k] x[k] + w[k] x[k-1] + e[k] x[k+1] + s[k] x[k-nx] + n[k] x[k+nx]`.
/// Coefficients reaching outside the grid are always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FivePoint {
    nx: usize,
    ny: usize,
    pub center: Vec<f64>,
    pub west: Vec<f64>,
    pub east: Vec<f64>,
    pub south: Vec<f64>,
    pub north: Vec<f64>,
}

/// Direction from a cell to a neighbour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dir {
    East,
    North,
}

impl FivePoint {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        let n = nx * ny;
        Self {
            nx,
            ny,
            center: vec![0.0; n],
            west: vec![0.0; n],
            east: vec![0.0; n],
            south: vec![0.0; n],
            north: vec![0.0; n],
        }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn dim(&self) -> usize {
        self.nx * self.ny
    }

    /// Adds the 2×2 block coupling cell `a` with its neighbour `b = a + East|North`:
    /// row a gets `aa·x_a + ab·x_b`, row b gets `ba·x_a + bb·x_b`.
    pub fn add_face(&mut self, a: usize, dir: Dir, aa: f64, ab: f64, ba: f64, bb: f64) {
        let b = match dir {
            Dir::East => a + 1,
            Dir::North => a + self.nx,
        };
        self.center[a] += aa;
        self.center[b] += bb;
        match dir {
            Dir::East => {
                self.east[a] += ab;
                self.west[b] += ba;
            }
            Dir::North => {
                self.north[a] += ab;
                self.south[b] += ba;
            }
        }
    }

    pub fn add_diagonal(&mut self, d: &[f64]) {
        for (c, v) in self.center.iter_mut().zip(d) {
            *c += v;
        }
    }

    pub fn add_scalar_diagonal(&mut self, d: f64) {
        for c in &mut self.center {
            *c += d;
        }
    }

    /// `self ← self + a · other`.
    pub fn add_scaled(&mut self, a: f64, other: &FivePoint) {
        let pairs = [
            (&mut self.center, &other.center),
            (&mut self.west, &other.west),
            (&mut self.east, &other.east),
            (&mut self.south, &other.south),
            (&mut self.north, &other.north),
        ];
        for (dst, src) in pairs {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += a * s;
            }
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let nx = self.nx;
        let n = self.dim();
        (0..n)
            .map(|k| {
                let mut acc = self.center[k] * x[k];
                if k % nx > 0 {
                    acc += self.west[k] * x[k - 1];
                }
                if k % nx + 1 < nx {
                    acc += self.east[k] * x[k + 1];
                }
                if k >= nx {
                    acc += self.south[k] * x[k - nx];
                }
                if k + nx < n {
                    acc += self.north[k] * x[k + nx];
                }
                acc
            })
            .collect()
    }

    pub fn transpose(&self) -> FivePoint {
        let nx = self.nx;
        let n = self.dim();
        let mut t = FivePoint::zeros(self.nx, self.ny);
        t.center.clone_from(&self.center);
        for k in 0..n {
            if k % nx + 1 < nx {
                // entry (k, k+1) moves to (k+1, k)
                t.west[k + 1] = self.east[k];
                t.east[k] = self.west[k + 1];
            }
            if k + nx < n {
                t.south[k + nx] = self.north[k];
                t.north[k] = self.south[k + nx];
            }
        }
        t
    }

    /// Dense copy, row-major. Intended for small grids and tests.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut d = vec![vec![0.0; n]; n];
        for (k, row) in d.iter_mut().enumerate() {
            row[k] = self.center[k];
            if k % self.nx > 0 {
                row[k - 1] = self.west[k];
            }
            if k % self.nx + 1 < self.nx {
                row[k + 1] = self.east[k];
            }
            if k >= self.nx {
                row[k - self.nx] = self.south[k];
            }
            if k + self.nx < n {
                row[k + self.nx] = self.north[k];
            }
        }
        d
    }
}

/// Banded LU factorization with partial pivoting (LAPACK `gbtrf` layout).
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    /// upper bandwidth of U after pivoting, `kl + ku`
    ku: usize,
    width: usize,
    /// row i stores columns `i - kl ..= i + ku`
    ab: Vec<f64>,
    piv: Vec<usize>,
}

impl BandLu {
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    pub fn factor(a: &FivePoint) -> Result<Self> {
        let n = a.dim();
        let kl = a.nx;
        let ku = 2 * a.nx;
        let width = kl + ku + 1;
        let mut lu = BandLu { n, kl, ku, width, ab: vec![0.0; n * width], piv: vec![0; n] };
        let nx = a.nx;
        for k in 0..n {
            let d = lu.idx(k, k);
            lu.ab[d] = a.center[k];
            if k % nx > 0 {
                let p = lu.idx(k, k - 1);
                lu.ab[p] = a.west[k];
            }
            if k % nx + 1 < nx {
                let p = lu.idx(k, k + 1);
                lu.ab[p] = a.east[k];
            }
            if k >= nx {
                let p = lu.idx(k, k - nx);
                lu.ab[p] = a.south[k];
            }
            if k + nx < n {
                let p = lu.idx(k, k + nx);
                lu.ab[p] = a.north[k];
            }
        }

        let anorm = lu.ab.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let tiny = anorm * n as f64 * f64::EPSILON;
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + lu.ku).min(n - 1);
            let mut p = k;
            let mut best = lu.ab[lu.idx(k, k)].abs();
            for i in k + 1..=last_row {
                let v = lu.ab[lu.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= tiny || !best.is_finite() {
                return Err(Error::Singular { cell: k });
            }
            lu.piv[k] = p;
            if p != k {
                for j in k..=last_col {
                    let (x, y) = (lu.idx(k, j), lu.idx(p, j));
                    lu.ab.swap(x, y);
                }
            }
            let pivot = lu.ab[lu.idx(k, k)];
            for i in k + 1..=last_row {
                let ik = lu.idx(i, k);
                let l = lu.ab[ik] / pivot;
                lu.ab[ik] = l;
                if l != 0.0 {
                    let base_k = lu.idx(k, k);
                    let base_i = lu.idx(i, k);
                    for off in 1..=(last_col - k) {
                        lu.ab[base_i + off] -= l * lu.ab[base_k + off];
                    }
                }
            }
        }
        Ok(lu)
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            if xk != 0.0 {
                for i in k + 1..=(k + self.kl).min(n - 1) {
                    x[i] -= self.ab[self.idx(i, k)] * xk;
                }
            }
        }
        for k in (0..n).rev() {
            let base = self.idx(k, k);
            let mut acc = x[k];
            for off in 1..=((k + self.ku).min(n - 1) - k) {
                acc -= self.ab[base + off] * x[k + off];
            }
            x[k] = acc / self.ab[base];
        }
        x
    }

    /// Solves `Aᵀ x = b` with the factors of `A`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        // Uᵀ y = b
        for k in 0..n {
            let mut acc = x[k];
            for j in k.saturating_sub(self.ku)..k {
                acc -= self.ab[self.idx(j, k)] * x[j];
            }
            x[k] = acc / self.ab[self.idx(k, k)];
        }
        // apply the transposed eliminations and swaps in reverse
        for k in (0..n).rev() {
            let mut acc = x[k];
            for i in k + 1..=(k + self.kl).min(n - 1) {
                acc -= self.ab[self.idx(i, k)] * x[i];
            }
            x[k] = acc;
            let p = self.piv[k];
            if p != k {
                x.swap(k, p);
            }
        }
        x
    }
}

/// Which linear solver to use for the per-step systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    /// Band LU up to [`AUTO_DIRECT_LIMIT`] unknowns, BiCGSTAB above.
    #[default]
    Auto,
    Direct,
    Iterative,
}

/// Largest system solved directly by [`SolverKind::Auto`].
pub const AUTO_DIRECT_LIMIT: usize = 96 * 96;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub kind: SolverKind,
    /// relative residual target for the iterative route
    pub rel_tol: f64,
    pub max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { kind: SolverKind::Auto, rel_tol: 1e-12, max_iters: 5000 }
    }
}

/// A matrix prepared for repeated solves with it and its transpose.
#[derive(Debug, Clone)]
pub enum Prepared {
    Direct(BandLu),
    Iterative { a: FivePoint, at: FivePoint, opts: SolverOptions },
}

impl Prepared {
    pub fn new(a: FivePoint, opts: &SolverOptions) -> Result<Self> {
        let direct = match opts.kind {
            SolverKind::Direct => true,
            SolverKind::Iterative => false,
            SolverKind::Auto => a.dim() <= AUTO_DIRECT_LIMIT,
        };
        if direct {
            Ok(Prepared::Direct(BandLu::factor(&a)?))
        } else {
            if let Some(k) = a.center.iter().position(|&c| c == 0.0) {
                return Err(Error::Singular { cell: k });
            }
            let at = a.transpose();
            Ok(Prepared::Iterative { a, at, opts: *opts })
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        match self {
            Prepared::Direct(lu) => Ok(lu.solve(b)),
            Prepared::Iterative { a, opts, .. } => bicgstab(a, b, opts),
        }
    }

    pub fn solve_transpose(&self, b: &[f64]) -> Result<Vec<f64>> {
        match self {
            Prepared::Direct(lu) => Ok(lu.solve_transpose(b)),
            Prepared::Iterative { at, opts, .. } => bicgstab(at, b, opts),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Jacobi-preconditioned BiCGSTAB.
pub fn bicgstab(a: &FivePoint, b: &[f64], opts: &SolverOptions) -> Result<Vec<f64>> {
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let dinv: Vec<f64> = a.center.iter().map(|d| 1.0 / d).collect();
    let precond = |v: &[f64]| -> Vec<f64> { v.iter().zip(&dinv).map(|(x, d)| x * d).collect() };

    let mut r = b.to_vec();
    let r_hat = r.clone();
    let mut p = vec![0.0; n];
    let mut v = vec![0.0; n];
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut rel = 1.0;
    for it in 1..=opts.max_iters {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            return Err(Error::NoConvergence { iterations: it, residual: rel });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let y = precond(&p);
        v = a.matvec(&y);
        alpha = rho / dot(&r_hat, &v);
        let s: Vec<f64> = r.iter().zip(&v).map(|(r, v)| r - alpha * v).collect();
        if norm(&s) <= opts.rel_tol * bnorm {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok(x);
        }
        let z = precond(&s);
        let t = a.matvec(&z);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        rel = norm(&r) / bnorm;
        if !rel.is_finite() {
            return Err(Error::NoConvergence { iterations: it, residual: rel });
        }
        if rel <= opts.rel_tol {
            // confirm with the true residual
            let ax = a.matvec(&x);
            let true_rel = norm(&ax.iter().zip(b).map(|(p, q)| q - p).collect::<Vec<_>>()) / bnorm;
            if true_rel <= 10.0 * opts.rel_tol {
                return Ok(x);
            }
            r = b.iter().zip(&ax).map(|(q, p)| q - p).collect();
        }
    }
    Err(Error::NoConvergence { iterations: opts.max_iters, residual: rel })
}
