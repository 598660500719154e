//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any fails.

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use chemorep::adjoint::{duality_residual, Cotangent};
use chemorep::diagnostics::{energy_series, mass_series, max_drift, v_balance_residuals};
use chemorep::forward::{max_stable_dt, solve_forward, Trajectory};
use chemorep::objective::{evaluate_cost, evaluate_with_gradient, gradient_check, optimize, OptimizeOptions};
use chemorep::runner::{run, Overrides, RunKind};
use chemorep::{ControlField, DesiredState, FluxScheme, Grid2D, Rect, ScalarField, Scenario, TangentSource};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

/// Every forward run in this suite goes through here so that criterion 3
/// can check the balance identity on all of them.
#[derive(Default)]
struct BalanceLog {
    runs: usize,
    worst: f64,
}

impl BalanceLog {
    fn record(&mut self, traj: &Trajectory, f: &ControlField, sc: &Scenario) {
        self.runs += 1;
        let r = v_balance_residuals(traj, f, sc);
        self.worst = r.iter().fold(self.worst, |m, x| m.max(x.abs()));
    }

    fn forward(&mut self, sc: &Scenario, f: &ControlField) -> Trajectory {
        let traj = solve_forward(sc, f).expect("forward solve");
        self.record(&traj, f, sc);
        traj
    }
}

fn unit_grid(nx: usize, ny: usize, control: Rect, observe: Rect) -> Grid2D {
    Grid2D::new(1.0, 1.0, nx, ny, control, observe).unwrap()
}

fn whole() -> Rect {
    Rect::new(0.0, 1.0, 0.0, 1.0)
}

/// Smooth random data: a few low cosine modes around a positive mean.
fn smooth_random(grid: &Grid2D, rng: &mut ChaCha8Rng, mean: f64, amp: f64) -> ScalarField {
    let modes: Vec<(f64, f64, f64)> =
        (0..6).map(|_| (rng.gen_range(0..4) as f64, rng.gen_range(0..4) as f64, rng.gen_range(-1.0..1.0))).collect();
    let norm: f64 = modes.iter().map(|m| m.2.abs()).sum();
    ScalarField::from_fn(grid, |x, y| {
        mean + amp / norm * modes.iter().map(|&(a, b, c)| c * (a * PI * x).cos() * (b * PI * y).cos()).sum::<f64>()
    })
}

fn mass_conservation(log: &mut BalanceLog) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for p in [2.0, 1.5] {
        let g = unit_grid(32, 32, Rect::new(0.2, 0.7, 0.1, 0.9), whole());
        let u0 = ScalarField::from_fn(&g, |_, _| rng.gen_range(0.0..2.0));
        let v0 = ScalarField::from_fn(&g, |_, _| rng.gen_range(0.0..2.0));
        let sc = Scenario::new(g, p, 1.0, 200, u0, v0);
        let f = ControlField::from_fn(&sc, |_, _, _| rng.gen_range(-2.0..2.0));
        let traj = log.forward(&sc, &f);
        let m = mass_series(&sc.grid, &traj);
        let rel = max_drift(&m) / m[0].abs().max(1.0);
        worst = worst.max(rel);
        parts.push(format!("p={p}: {rel:.2e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst <= 1e-10, format!("{} (bound 1e-10), {secs:.2} s", parts.join(", ")))
}

fn constant_data(log: &mut BalanceLog) -> Outcome {
    let mut errs = Vec::new();
    let mut ok = true;
    let mut u_err: f64 = 0.0;
    for nt in [10, 20, 40, 80] {
        let g = unit_grid(4, 4, whole(), whole());
        let u0 = ScalarField::constant(&g, 2.0);
        let v0 = ScalarField::zeros(&g);
        let sc = Scenario::new(g, 2.0, 1.0, nt, u0, v0);
        let f = ControlField::zeros(&sc);
        let traj = log.forward(&sc, &f);
        let dt = sc.dt();
        let mut e: f64 = 0.0;
        for n in 0..=nt {
            let exact = 4.0 * (1.0 - (-sc.time(n)).exp());
            let en = traj.v(n).values().iter().fold(0.0f64, |m, v| m.max((v - exact).abs()));
            ok &= en <= 2.0 * dt;
            e = e.max(en);
            u_err = traj.u(n).values().iter().fold(u_err, |m, u| m.max((u - 2.0).abs()));
        }
        errs.push(e);
    }
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let ok = ok && u_err <= 1e-12 && orders.iter().all(|&o| o >= 0.9);
    outcome(
        ok,
        format!(
            "max |u-2| = {u_err:.1e}; v errors {:?}; observed orders {:?} (need v err <= 2dt, order >= 0.9)",
            errs.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>(),
            orders.iter().map(|o| format!("{o:.3}")).collect::<Vec<_>>()
        ),
    )
}

fn duality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let (nx, ny) = (rng.gen_range(2..=16), rng.gen_range(2..=16));
        let nt = rng.gen_range(1..=20);
        let p = if i % 2 == 0 { 2.0 } else { 1.5 };
        let (lx, ly) = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0));
        let g = Grid2D::new(lx, ly, nx, ny, Rect::new(0.0, lx, 0.0, ly), Rect::new(0.0, lx, 0.0, ly)).unwrap();
        let u0 = ScalarField::from_fn(&g, |_, _| rng.gen_range(0.0..2.0));
        let v0 = ScalarField::from_fn(&g, |_, _| rng.gen_range(0.0..2.0));
        let mut sc = Scenario::new(g, p, rng.gen_range(0.1..1.0), nt, u0, v0);
        sc.scheme = if rng.gen_bool(0.5) { FluxScheme::Central } else { FluxScheme::Upwind };
        let f = ControlField::from_fn(&sc, |_, _, _| rng.gen_range(-2.0..2.0));
        let df = ControlField::from_fn(&sc, |_, _, _| rng.gen_range(-1.0..1.0));
        let base = solve_forward(&sc, &f).unwrap();
        let src = if rng.gen_bool(0.5) {
            TangentSource {
                g_u: Some((0..nt).map(|_| ScalarField::from_fn(&sc.grid, |_, _| rng.gen_range(-1.0..1.0))).collect()),
                g_v: Some((0..nt).map(|_| ScalarField::from_fn(&sc.grid, |_, _| rng.gen_range(-1.0..1.0))).collect()),
            }
        } else {
            TangentSource::none()
        };
        let w = Cotangent::random(&sc, rng.gen());
        worst = worst.max(duality_residual(&base, &f, &df, &src, &sc, &w).unwrap());
    }
    outcome(worst <= 1e-12, format!("worst of 100 instances {worst:.2e} (bound 1e-12)"))
}

fn gradient_scenario(eps: f64, rng: &mut ChaCha8Rng) -> (Scenario, ControlField) {
    let g = unit_grid(8, 8, Rect::new(0.0, 0.75, 0.0, 1.0), Rect::new(0.25, 1.0, 0.0, 1.0));
    let u0 = smooth_random(&g, rng, 1.0, 0.5);
    let v0 = smooth_random(&g, rng, 0.8, 0.4);
    let mut sc = Scenario::new(g, 2.0, 0.5, 10, u0, v0);
    sc.u_d = DesiredState::Constant(ScalarField::from_fn(&sc.grid, |x, _| 1.0 + 0.3 * x));
    sc.v_d = DesiredState::Constant(ScalarField::constant(&sc.grid, 0.4));
    sc.gamma_f = 0.1;
    sc.eps = eps;
    let f = ControlField::from_fn(&sc, |_, _, _| {
        let m: f64 = rng.gen_range(0.3..1.5);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    });
    (sc, f)
}

fn gradient_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ok = true;
    let mut parts = Vec::new();
    for (eps, bound, p) in [(0.0, 1e-6, 2.0), (0.5, 1e-5, 2.0), (0.0, 1e-6, 1.5)] {
        let (mut sc, f) = gradient_scenario(eps, &mut rng);
        sc.p = p;
        let eval = evaluate_with_gradient(&sc, &f).unwrap();
        let all: Vec<usize> = (0..f.values().len()).collect();
        let probes = gradient_check(&sc, &f, &eval.gradient, &all, 1e-4).unwrap();
        let worst = probes.iter().fold(0.0f64, |m, q| m.max(q.rel_error));
        ok &= worst <= bound;
        parts.push(format!("eps={eps} p={p}: {worst:.2e} over {} DOFs (bound {bound:.0e})", probes.len()));
    }
    outcome(ok, parts.join("; "))
}

fn optimizer(log: &mut BalanceLog) -> Outcome {
    let start = Instant::now();
    let g = unit_grid(16, 16, Rect::new(0.25, 0.75, 0.25, 0.75), whole());
    let u0 = ScalarField::from_fn(&g, |x, y| 1.0 + 0.5 * (PI * x).cos() * (PI * y).cos());
    let v0 = ScalarField::constant(&g, 0.5);
    let mut sc = Scenario::new(g, 2.0, 1.0, 20, u0, v0);
    sc.gamma_u = 0.0;
    sc.gamma_v = 1.0;
    sc.gamma_f = 1e-4;
    sc.f_min = -5.0;
    sc.f_max = 5.0;
    let f_star = ControlField::from_fn(&sc, |t, x, y| 1.0 + 0.5 * (PI * x).cos() * (PI * y).sin() + 0.5 * t);
    let target = log.forward(&sc, &f_star);
    sc.v_d = DesiredState::Series(target.v_series().to_vec());
    sc.u_d = DesiredState::Series(target.u_series().to_vec());

    let f0 = ControlField::zeros(&sc);
    let j0 = evaluate_cost(&log.forward(&sc, &f0), &f0, &sc).unwrap().j_total;
    let opts = OptimizeOptions { tol: 1e-6, max_iters: 2000, ..Default::default() };
    let rep = optimize(&sc, &f0, &opts).unwrap();
    log.record(&rep.final_state, &rep.final_control, &sc);
    let costs: Vec<f64> = rep.iterates.iter().map(|r| r.cost.j_total).collect();
    let strictly = costs.windows(2).all(|w| w[1] < w[0]);
    let jf = rep.final_cost().j_total;
    let res = rep.final_residual();
    let secs = start.elapsed().as_secs_f64();
    let ok = res <= 1e-6 && strictly && jf <= 0.01 * j0 && secs <= 60.0;
    outcome(
        ok,
        format!(
            "{} iterations ({}), residual {res:.2e}, J {j0:.3e} -> {jf:.3e} ({:.2}%), strictly decreasing: {strictly}, {secs:.1} s",
            rep.iterates.len() - 1,
            rep.reason,
            100.0 * jf / j0
        ),
    )
}

fn nonnegativity(log: &mut BalanceLog) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = f64::INFINITY;
    let mut parts = Vec::new();
    for p in [2.0, 1.5] {
        let g = unit_grid(32, 32, Rect::new(0.0, 0.6, 0.0, 1.0), whole());
        // steep, partly vanishing data where a centred flux would undershoot
        let u0 = ScalarField::from_fn(&g, |x, y| {
            let r2 = (x - 0.4).powi(2) + (y - 0.5).powi(2);
            if r2 < 0.04 {
                4.0 * rng.gen_range(0.5..1.0)
            } else {
                0.0
            }
        });
        let v0 = ScalarField::from_fn(&g, |x, _| if x > 0.5 { 20.0 } else { rng.gen_range(0.0..0.1) });
        let mut sc = Scenario::new(g, p, 0.5, 100, u0, v0);
        sc.scheme = FluxScheme::Upwind;
        let f = ControlField::from_fn(&sc, |_, _, _| rng.gen_range(0.0..3.0));
        assert!(sc.dt() < max_stable_dt(&f));
        let traj = log.forward(&sc, &f);
        let m = traj.min_u_series().into_iter().chain(traj.min_v_series()).fold(f64::INFINITY, f64::min);
        worst = worst.min(m);
        parts.push(format!("p={p}: min {m:.2e}"));
    }
    outcome(worst >= -1e-12, format!("{} (bound -1e-12)", parts.join(", ")))
}

fn energy(log: &mut BalanceLog) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = unit_grid(32, 32, whole(), whole());
    let u0 = smooth_random(&g, &mut rng, 1.0, 0.8);
    let v0 = smooth_random(&g, &mut rng, 1.0, 0.8);
    let sc = Scenario::new(g, 2.0, 1.0, 200, u0, v0);
    let f = ControlField::zeros(&sc);
    let traj = log.forward(&sc, &f);
    let e = energy_series(&sc.grid, &traj);
    let rise = e.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    outcome(
        rise <= 1e-8 * e[0],
        format!(
            "E0 = {:.4e}, E_end = {:.4e}, largest per-step change {rise:.2e} (bound {:.2e})",
            e[0],
            e[200],
            1e-8 * e[0]
        ),
    )
}

const DETERMINISM_SCENARIO: &str = r#"
[grid]
lx = 1.0
ly = 1.0
nx = 12
ny = 10
control = [0.0, 0.5, 0.0, 1.0]
observe = [0.25, 1.0, 0.0, 1.0]

[model]
p = 1.5
t_final = 0.5
nt = 12

[initial]
u0 = "1 + 0.5*cos(pi*x)*cos(2*pi*y)"
v0 = "0.5 + 0.25*sin(pi*x)"

[cost]
gamma_u = 0.5
gamma_f = 1e-3
eps = 0.5
v_d = "0.7 + 0.1*x"

[control]
initial = "0.5*cos(pi*t)*y"

[optimize]
max_iters = 15

[output]
snapshot_stride = 4
"#;

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scenario.toml");
    std::fs::write(&path, DETERMINISM_SCENARIO).unwrap();
    let o = Overrides::default();
    let mut ok = true;
    let mut files = 0;
    for kind in [RunKind::Forward, RunKind::Optimize] {
        let name = kind.to_string();
        let a = run(kind, &path, &dir.path().join(format!("{name}_a")), &o).unwrap();
        let b = run(kind, &path, &dir.path().join(format!("{name}_b")), &o).unwrap();
        ok &= a.manifest.files == b.manifest.files && !a.manifest.files.is_empty();
        files += a.manifest.files.len();
        for f in &a.manifest.files {
            let x = std::fs::read(dir.path().join(format!("{name}_a")).join(&f.name)).unwrap();
            let y = std::fs::read(dir.path().join(format!("{name}_b")).join(&f.name)).unwrap();
            ok &= x == y;
        }
    }
    outcome(ok, format!("{files} files per run pair compared by SHA-256 and bytes"))
}

fn main() {
    let mut log = BalanceLog::default();
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 mass conservation", mass_conservation(&mut log)),
        ("2 constant-data analytic solution", constant_data(&mut log)),
        ("4 adjoint duality", duality()),
        ("5 gradient vs finite differences", gradient_consistency()),
        ("6 optimizer descent and stationarity", optimizer(&mut log)),
        ("7 upwind nonnegativity", nonnegativity(&mut log)),
        ("8 energy decay", energy(&mut log)),
        ("9 determinism", determinism()),
    ];
    let balance = outcome(
        log.worst <= 1e-10,
        format!("worst relative residual {:.2e} over {} forward runs (bound 1e-10)", log.worst, log.runs),
    );
    results.insert(2, ("3 v-balance identity", balance));

    let mut failed = 0;
    for (name, r) in &results {
        println!("{} criterion {name}: {}", if r.passed { "PASS" } else { "FAIL" }, r.detail);
        failed += usize::from(!r.passed);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
