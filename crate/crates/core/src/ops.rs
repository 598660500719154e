//! Conservative face-flux operators with homogeneous Neumann boundaries.
//!
//! Every operator is written as a sum over interior faces; a flux leaving one
//! cell enters its neighbour, so grid integrals of the results telescope to
//! zero. Boundary faces carry no flux, which is the ghost-cell mirror rule
//! `w_ghost = w_boundary`.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{Grid2D, ScalarField};
use crate::linalg::{Dir, FivePoint};

/// Face value rule for the cell density in the chemotactic flux.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FluxScheme {
    /// Arithmetic mean of the two adjacent cells.
    #[default]
    Central,
    /// Value from the upwind cell with respect to the drift `-∇v`.
    Upwind,
}

impl std::fmt::Display for FluxScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FluxScheme::Central => "central",
            FluxScheme::Upwind => "upwind",
        })
    }
}

/// Interior face between cell `a` and its east or north neighbour `b`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Face {
    pub a: usize,
    pub b: usize,
    pub dir: Dir,
    /// `1 / h²` in the face-normal direction
    pub inv_h2: f64,
}

pub(crate) fn faces(grid: &Grid2D) -> impl Iterator<Item = Face> + '_ {
    let (nx, ny) = (grid.nx(), grid.ny());
    let ex = 1.0 / (grid.hx() * grid.hx());
    let ey = 1.0 / (grid.hy() * grid.hy());
    (0..nx * ny).flat_map(move |a| {
        let east = (a % nx + 1 < nx).then_some(Face { a, b: a + 1, dir: Dir::East, inv_h2: ex });
        let north = (a + nx < nx * ny).then_some(Face { a, b: a + nx, dir: Dir::North, inv_h2: ey });
        east.into_iter().chain(north)
    })
}

/// Weight of cell `a` in the face value `θ u_a + (1-θ) u_b`.
#[inline]
pub(crate) fn face_weight(scheme: FluxScheme, v_a: f64, v_b: f64) -> f64 {
    match scheme {
        FluxScheme::Central => 0.5,
        // the drift -∇v points from b to a when v_b > v_a, so b is upwind
        FluxScheme::Upwind => {
            if v_b > v_a {
                0.0
            } else {
                1.0
            }
        }
    }
}

/// Five-point Laplacian with zero boundary flux.
pub fn laplacian_neumann(grid: &Grid2D, w: &ScalarField) -> Result<ScalarField> {
    w.check_grid(grid)?;
    let x = w.values();
    let mut out = vec![0.0; x.len()];
    for f in faces(grid) {
        let flux = (x[f.b] - x[f.a]) * f.inv_h2;
        out[f.a] += flux;
        out[f.b] -= flux;
    }
    Ok(w.with_values(out))
}

/// `∇·(u ∇v)` in flux form.
pub fn chemotactic_divergence(
    grid: &Grid2D,
    u: &ScalarField,
    v: &ScalarField,
    scheme: FluxScheme,
) -> Result<ScalarField> {
    frozen_chemotactic_divergence(grid, u, v, v, scheme)
}

/// `∇·(u ∇v)` where the upwind direction is taken from `v_select` instead of
/// `v`. This is the derivative of [`chemotactic_divergence`] in `v` with the
/// face rule frozen, and equals it when `v_select == v`.
pub fn frozen_chemotactic_divergence(
    grid: &Grid2D,
    u: &ScalarField,
    v: &ScalarField,
    v_select: &ScalarField,
    scheme: FluxScheme,
) -> Result<ScalarField> {
    u.check_grid(grid)?;
    u.same_shape(v)?;
    u.same_shape(v_select)?;
    let (uu, vv, vs) = (u.values(), v.values(), v_select.values());
    let mut out = vec![0.0; uu.len()];
    for f in faces(grid) {
        let theta = face_weight(scheme, vs[f.a], vs[f.b]);
        let u_face = theta * uu[f.a] + (1.0 - theta) * uu[f.b];
        let flux = u_face * (vv[f.b] - vv[f.a]) * f.inv_h2;
        out[f.a] += flux;
        out[f.b] -= flux;
    }
    Ok(u.with_values(out))
}

/// Discrete `‖∇v‖²` from face differences, each face weighted by `hx·hy`.
pub fn gradient_norm_sq(grid: &Grid2D, v: &ScalarField) -> f64 {
    let x = v.values();
    let sum: f64 = faces(grid)
        .map(|f| {
            let d = x[f.b] - x[f.a];
            d * d * f.inv_h2
        })
        .sum();
    sum * grid.cell_area()
}

/// Matrix of [`laplacian_neumann`].
pub fn laplacian_matrix(grid: &Grid2D) -> FivePoint {
    let mut m = FivePoint::zeros(grid.nx(), grid.ny());
    for f in faces(grid) {
        let c = f.inv_h2;
        m.add_face(f.a, f.dir, -c, c, c, -c);
    }
    m
}

/// Matrix of `u ↦ chemotactic_divergence(u, v)` for fixed `v`.
pub fn chemotaxis_matrix_in_u(grid: &Grid2D, v: &ScalarField, scheme: FluxScheme) -> FivePoint {
    let vv = v.values();
    let mut m = FivePoint::zeros(grid.nx(), grid.ny());
    for f in faces(grid) {
        let theta = face_weight(scheme, vv[f.a], vv[f.b]);
        let g = (vv[f.b] - vv[f.a]) * f.inv_h2;
        m.add_face(f.a, f.dir, theta * g, (1.0 - theta) * g, -theta * g, -(1.0 - theta) * g);
    }
    m
}

/// Matrix of `V ↦ frozen_chemotactic_divergence(u, V, v_select)` for fixed
/// `u` and face rule. This is a weighted Laplacian `∇·(u_face ∇V)`.
pub fn chemotaxis_matrix_in_v(grid: &Grid2D, u: &ScalarField, v_select: &ScalarField, scheme: FluxScheme) -> FivePoint {
    let (uu, vs) = (u.values(), v_select.values());
    let mut m = FivePoint::zeros(grid.nx(), grid.ny());
    for f in faces(grid) {
        let theta = face_weight(scheme, vs[f.a], vs[f.b]);
        let c = (theta * uu[f.a] + (1.0 - theta) * uu[f.b]) * f.inv_h2;
        m.add_face(f.a, f.dir, -c, c, c, -c);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::integrate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_field(g: &Grid2D, rng: &mut ChaCha8Rng) -> ScalarField {
        ScalarField::from_fn(g, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn laplacian_of_constant_is_zero() {
        let g = Grid2D::full(1.0, 2.0, 5, 7).unwrap();
        let l = laplacian_neumann(&g, &ScalarField::constant(&g, 3.7)).unwrap();
        assert!(l.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn laplacian_spike_stencil() {
        let g = Grid2D::full(1.0, 2.0, 4, 4).unwrap();
        let (hx, hy) = (g.hx(), g.hy());
        // interior cell (1, 2)
        let k = 2 * 4 + 1;
        let mut w = ScalarField::zeros(&g);
        w.values_mut()[k] = 1.0;
        let l = laplacian_neumann(&g, &w).unwrap();
        let v = l.values();
        assert!((v[k] - (-2.0 / (hx * hx) - 2.0 / (hy * hy))).abs() < 1e-12);
        assert!((v[k - 1] - 1.0 / (hx * hx)).abs() < 1e-12);
        assert!((v[k + 1] - 1.0 / (hx * hx)).abs() < 1e-12);
        assert!((v[k - 4] - 1.0 / (hy * hy)).abs() < 1e-12);
        assert!((v[k + 4] - 1.0 / (hy * hy)).abs() < 1e-12);
        let others = v.iter().enumerate().filter(|(i, _)| ![k, k - 1, k + 1, k - 4, k + 4].contains(i));
        assert!(others.into_iter().all(|(_, &x)| x == 0.0));
    }

    fn cos_error(n: usize) -> f64 {
        let lx = 2.0;
        let g = Grid2D::full(lx, 1.0, n, n).unwrap();
        let w = ScalarField::from_fn(&g, |x, _| (PI * x / lx).cos());
        let l = laplacian_neumann(&g, &w).unwrap();
        let k2 = (PI / lx).powi(2);
        l.values().iter().zip(w.values()).map(|(a, b)| (a + k2 * b).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn laplacian_converges_at_second_order() {
        let e32 = cos_error(32);
        let e64 = cos_error(64);
        let order = (e32 / e64).log2();
        assert!(e64 < 1e-3, "error on 64x64: {e64}");
        assert!(order >= 1.9, "observed order {order}");
    }

    #[test]
    fn divergence_of_constant_v_is_zero() {
        let g = Grid2D::full(1.0, 1.0, 5, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_field(&g, &mut rng);
        let v = ScalarField::constant(&g, 2.0);
        for scheme in [FluxScheme::Central, FluxScheme::Upwind] {
            let d = chemotactic_divergence(&g, &u, &v, scheme).unwrap();
            assert!(d.values().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn central_divergence_of_constant_u_is_scaled_laplacian() {
        let g = Grid2D::full(1.0, 1.5, 6, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = random_field(&g, &mut rng);
        let u = ScalarField::constant(&g, 2.5);
        let d = chemotactic_divergence(&g, &u, &v, FluxScheme::Central).unwrap();
        let l = laplacian_neumann(&g, &v).unwrap();
        for (a, b) in d.values().iter().zip(l.values()) {
            assert!((a - 2.5 * b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn divergence_integrates_to_zero() {
        let g = Grid2D::full(1.0, 1.0, 5, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let u = random_field(&g, &mut rng);
            let v = random_field(&g, &mut rng);
            let scale = u.max_abs() * v.max_abs() * g.area() / (g.hx() * g.hx());
            for scheme in [FluxScheme::Central, FluxScheme::Upwind] {
                // brute force: every face flux is added once and subtracted once
                let d = chemotactic_divergence(&g, &u, &v, scheme).unwrap();
                assert!(integrate(&g, &d).abs() <= 1e-13 * scale);
            }
        }
    }

    #[test]
    fn matrices_match_operators() {
        let g = Grid2D::full(1.0, 1.0, 5, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let u = random_field(&g, &mut rng);
        let v = random_field(&g, &mut rng);
        let w = random_field(&g, &mut rng);
        for scheme in [FluxScheme::Central, FluxScheme::Upwind] {
            let du = chemotaxis_matrix_in_u(&g, &v, scheme).matvec(u.values());
            let d = chemotactic_divergence(&g, &u, &v, scheme).unwrap();
            for (a, b) in du.iter().zip(d.values()) {
                assert!((a - b).abs() < 1e-10);
            }
            let dv = chemotaxis_matrix_in_v(&g, &u, &v, scheme).matvec(w.values());
            let d = frozen_chemotactic_divergence(&g, &u, &w, &v, scheme).unwrap();
            for (a, b) in dv.iter().zip(d.values()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
        let l = laplacian_matrix(&g).matvec(w.values());
        let lw = laplacian_neumann(&g, &w).unwrap();
        for (a, b) in l.iter().zip(lw.values()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_norm_of_linear_profile() {
        // v = x on [0,1]x[0,1]: interior x-faces carry difference hx; ‖∇v‖² → 1 - hx
        let g = Grid2D::full(1.0, 1.0, 8, 8).unwrap();
        let v = ScalarField::from_fn(&g, |x, _| x);
        let expected = 7.0 * 8.0 * g.cell_area();
        assert!((gradient_norm_sq(&g, &v) - expected).abs() < 1e-12);
    }
}
