//! One time step against a dense system assembled cell by cell and solved
//! with nalgebra's LU.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use chemorep::forward::step_state;
use chemorep::{FluxScheme, Grid2D, Rect, ScalarField, Scenario};

const N: usize = 6;

fn neighbours(i: usize, j: usize) -> Vec<(usize, f64)> {
    let h2 = (N as f64).powi(2);
    let mut out = Vec::new();
    if i + 1 < N {
        out.push((j * N + i + 1, h2));
    }
    if i > 0 {
        out.push((j * N + i - 1, h2));
    }
    if j + 1 < N {
        out.push(((j + 1) * N + i, h2));
    }
    if j > 0 {
        out.push(((j - 1) * N + i, h2));
    }
    out
}

fn dense_laplacian() -> DMatrix<f64> {
    let mut l = DMatrix::zeros(N * N, N * N);
    for j in 0..N {
        for i in 0..N {
            let a = j * N + i;
            for (b, w) in neighbours(i, j) {
                l[(a, b)] += w;
                l[(a, a)] -= w;
            }
        }
    }
    l
}

/// Row `a` of `∇·(u∇v)` as a linear map of `u`.
fn dense_drift(v: &[f64], scheme: FluxScheme) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(N * N, N * N);
    for j in 0..N {
        for i in 0..N {
            let a = j * N + i;
            for (b, w) in neighbours(i, j) {
                let g = w * (v[b] - v[a]);
                match scheme {
                    FluxScheme::Central => {
                        d[(a, a)] += 0.5 * g;
                        d[(a, b)] += 0.5 * g;
                    }
                    // drift −∇v carries u from the cell with larger v
                    FluxScheme::Upwind => {
                        if v[b] > v[a] {
                            d[(a, b)] += g;
                        } else {
                            d[(a, a)] += g;
                        }
                    }
                }
            }
        }
    }
    d
}

fn check(scheme: FluxScheme, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = 1e-3;
    let g = Grid2D::new(1.0, 1.0, N, N, Rect::new(0.0, 0.5, 0.0, 1.0), Rect::new(0.0, 1.0, 0.0, 1.0)).unwrap();
    let u = ScalarField::from_fn(&g, |_, _| rng.gen_range(0.0..2.0));
    let v = ScalarField::from_fn(&g, |_, _| rng.gen_range(0.0..2.0));
    let mut sc = Scenario::new(g, 2.0, dt, 1, u.clone(), v.clone());
    sc.scheme = scheme;
    let f_slice: Vec<f64> = sc.grid.control_cells().iter().map(|_| rng.gen_range(-3.0..3.0)).collect();
    let (u1, v1) = step_state(&u, &v, &f_slice, &sc).unwrap();

    let n = N * N;
    let lap = dense_laplacian();
    let mut fdiag = DVector::zeros(n);
    for (&k, &fk) in sc.grid.control_cells().iter().zip(&f_slice) {
        fdiag[k] = fk;
    }
    let av = DMatrix::identity(n, n) * (1.0 / dt + 1.0) - &lap - DMatrix::from_diagonal(&fdiag);
    let rv = DVector::from_iterator(n, v.values().iter().zip(u.values()).map(|(v, u)| v / dt + u.max(0.0).powi(2)));
    let v_ref = av.lu().solve(&rv).unwrap();
    let au = DMatrix::identity(n, n) / dt - &lap - dense_drift(v_ref.as_slice(), scheme);
    let ru = DVector::from_iterator(n, u.values().iter().map(|u| u / dt));
    let u_ref = au.lu().solve(&ru).unwrap();

    for k in 0..n {
        assert!((v1.values()[k] - v_ref[k]).abs() <= 1e-10, "{scheme} v cell {k}");
        assert!((u1.values()[k] - u_ref[k]).abs() <= 1e-10, "{scheme} u cell {k}");
    }
}

#[test]
fn central_step_matches_dense_oracle() {
    for seed in 0..5 {
        check(FluxScheme::Central, seed);
    }
}

#[test]
fn upwind_step_matches_dense_oracle() {
    for seed in 10..15 {
        check(FluxScheme::Upwind, seed);
    }
}
