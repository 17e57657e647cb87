//! Randomized and oracle-based property suites, one per module.
//!
//! Every suite returns a [`SuiteReport`] whose `Display` form is a flat
//! `key = value` listing with one `failure = <check>: <detail>` line per
//! failed check, suitable for scripts.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::constants::{
    compute_c_p, estimate_delta_schulze, estimate_m1, estimate_m2, pinch_constant_from_eps,
    SamplingConfig,
};
use crate::error::{Error, Result};
use crate::flow::{self, InitialProfile, RunConfig, StepOptions};
use crate::geometry::{
    alexandrov_fenchel_residual, area, curvatures, principal_curvatures, radii, volume,
    RadialProfile,
};
use crate::sampling::rng;
use crate::symfun::{
    check_maclaurin, check_trace_bound, elem_sym_grad, elem_sym_normalized, sigma, sigma_grad,
    sigma_hessian_form, CurvatureVector, FlowParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Symfun,
    Constants,
    Geometry,
    FlowShort,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symfun" => Ok(Suite::Symfun),
            "constants" => Ok(Suite::Constants),
            "geometry" => Ok(Suite::Geometry),
            "flow-short" => Ok(Suite::FlowShort),
            other => Err(Error::Config(format!(
                "unknown suite `{other}` (expected symfun, constants, geometry or flow-short)"
            ))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Symfun => "symfun",
            Suite::Constants => "constants",
            Suite::Geometry => "geometry",
            Suite::FlowShort => "flow-short",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub check: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: usize,
    pub failures: Vec<Failure>,
}

impl SuiteReport {
    fn new(suite: impl Into<String>) -> Self {
        Self {
            suite: suite.into(),
            checks: 0,
            failures: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// Number of checks named `check` that failed.
    pub fn failures_of(&self, check: &str) -> usize {
        self.failures.iter().filter(|f| f.check == check).count()
    }

    fn record(&mut self, check: &str, ok: bool, detail: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.failures.push(Failure {
                check: check.to_string(),
                detail: detail(),
            });
        }
    }

    fn absorb(&mut self, other: SuiteReport) {
        self.checks += other.checks;
        self.failures.extend(other.failures);
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "suite = {}", self.suite)?;
        writeln!(f, "checks = {}", self.checks)?;
        writeln!(f, "failures = {}", self.failures.len())?;
        for fail in &self.failures {
            writeln!(f, "failure = {}: {}", fail.check, fail.detail)?;
        }
        Ok(())
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<SuiteReport> {
    match suite {
        Suite::Symfun => Ok(symfun_suite(10_000, seed)),
        Suite::Constants => constants_suite(100_000, seed),
        Suite::Geometry => geometry_suite(),
        Suite::FlowShort => flow_short_suite(seed),
    }
}

/// All `(n, m, beta)` with `n` in 2..=5, every `m`, `beta` in `{1/m + 0.1, 1, 2}`.
pub fn parameter_grid() -> Vec<FlowParams> {
    let mut out = Vec::new();
    for n in 2..=5 {
        for m in 1..=n {
            for beta in [1.0 / m as f64 + 0.1, 1.0, 2.0] {
                out.push(FlowParams::new(n, m, beta).expect("grid parameters are valid"));
            }
        }
    }
    out
}

/// Log-uniform curvatures in `[0.1, 10]`.
fn random_positive(rng: &mut ChaCha8Rng, n: usize) -> CurvatureVector {
    let k = (0..n)
        .map(|_| 10f64.powf(rng.gen_range(-1.0..1.0)))
        .collect();
    CurvatureVector::new(k).expect("finite")
}

fn random_symmetric_unit(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v: f64 = rng.gen_range(-1.0..1.0);
            b[(i, j)] = v;
            b[(j, i)] = v;
        }
    }
    let norm = b.norm();
    b / norm
}

/// `sigma` of the eigenvalues of a symmetric matrix.
fn sigma_of_matrix(a: &DMatrix<f64>, p: &FlowParams) -> f64 {
    let eig = a.clone().symmetric_eigenvalues();
    sigma(&CurvatureVector::new(eig.iter().copied().collect()).expect("finite"), p)
        .unwrap_or(f64::NAN)
}

/// Randomized checks of positivity, concavity, the trace bound, Maclaurin,
/// the Euler identities, and gradient and Hessian-form finite differences.
/// Each property gets `samples` checks spread over [`parameter_grid`].
pub fn symfun_suite(samples: usize, seed: u64) -> SuiteReport {
    let mut rep = SuiteReport::new("symfun");
    let grid = parameter_grid();
    let mut rng = rng(seed);
    for s in 0..samples {
        let p = grid[s % grid.len()];
        let n = p.n;
        let k = random_positive(&mut rng, n);

        // (a) positivity of every partial derivative
        let g_hm = elem_sym_grad(&k, p.m).expect("valid order");
        let g = sigma_grad(&k, &p).expect("positive cone");
        rep.record(
            "positivity",
            g_hm.iter().chain(&g).all(|&x| x > 0.0),
            || format!("n={n} m={} beta={} k={:?} grad={g:?}", p.m, p.beta, k.as_slice()),
        );

        // (b) concavity of H_m^{1/m} along a random chord
        let other = random_positive(&mut rng, n);
        let t: f64 = rng.gen();
        let root = |v: &CurvatureVector| {
            elem_sym_normalized(v, p.m)
                .expect("valid order")
                .powf(1.0 / p.m as f64)
        };
        let mid = CurvatureVector::new(
            k.as_slice()
                .iter()
                .zip(other.as_slice())
                .map(|(a, b)| t * a + (1.0 - t) * b)
                .collect(),
        )
        .expect("finite");
        let gap = root(&mid) - (t * root(&k) + (1.0 - t) * root(&other));
        rep.record("concavity", gap >= -1e-10, || {
            format!("n={n} m={} gap={gap:e}", p.m)
        });

        // (c) trace bound and (d) Maclaurin
        let tr = check_trace_bound(&k, &p).expect("positive cone");
        rep.record("trace_bound", tr.slack >= -1e-10, || {
            format!("n={n} m={} beta={} slack={:e}", p.m, p.beta, tr.slack)
        });
        let mac = check_maclaurin(&k, p.m).expect("positive cone");
        rep.record("maclaurin", mac.slack >= -1e-10, || {
            format!("n={n} m={} slack={:e}", p.m, mac.slack)
        });

        // Euler identities
        let sig = sigma(&k, &p).expect("positive cone");
        let hm = elem_sym_normalized(&k, p.m).expect("valid order");
        let dot = |v: &[f64]| v.iter().zip(k.as_slice()).map(|(a, b)| a * b).sum::<f64>();
        let e1 = (dot(&g) - p.degree() * sig).abs() / (p.degree() * sig);
        let e2 = (dot(&g_hm) - p.m as f64 * hm).abs() / (p.m as f64 * hm);
        rep.record("euler", e1 <= 1e-12 && e2 <= 1e-12, || {
            format!("n={n} m={} beta={} rel={e1:e}/{e2:e}", p.m, p.beta)
        });

        // gradient against central differences with step 1e-5 |k|
        let step = 1e-5 * k.norm();
        let gmax = g.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        let mut worst = 0.0_f64;
        for i in 0..n {
            let shifted = |d: f64| {
                let mut v = k.as_slice().to_vec();
                v[i] += d;
                sigma(&CurvatureVector::new(v).expect("finite"), &p).expect("cone")
            };
            let fd = (shifted(step) - shifted(-step)) / (2.0 * step);
            worst = worst.max((fd - g[i]).abs() / gmax);
        }
        rep.record("gradient_fd", worst <= 1e-6, || {
            format!("n={n} m={} beta={} rel={worst:e}", p.m, p.beta)
        });

        // Hessian form against second differences of the matrix function
        if s % 10 == 0 {
            let b = random_symmetric_unit(&mut rng, n);
            let exact = sigma_hessian_form(&k, &b, &p).expect("valid form");
            let a0 = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(k.as_slice()));
            let h = 1e-4 * k.norm();
            let fd = (sigma_of_matrix(&(&a0 + &b * h), &p) - 2.0 * sig
                + sigma_of_matrix(&(&a0 - &b * h), &p))
                / (h * h);
            let scale = exact.abs().max(sig / k.norm_sq());
            let rel = (fd - exact).abs() / scale;
            rep.record("hessian_fd", rel <= 1e-4, || {
                format!("n={n} m={} beta={} exact={exact:e} fd={fd:e}", p.m, p.beta)
            });
        }
    }
    rep
}

/// Parameter triples exercised by the constants suite.
pub const CONSTANT_TRIPLES: [(usize, usize, f64); 3] = [(2, 1, 2.0), (2, 2, 1.0), (3, 2, 1.5)];

/// Random nonnegative vector: half uniform on the simplex, half close to the umbilic ray.
fn random_nonnegative(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    if rng.gen::<bool>() {
        (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect()
    } else {
        let spread = 10f64.powf(rng.gen_range(-4.0..0.0));
        (0..n)
            .map(|_| (1.0 + spread * rng.gen_range(-1.0..1.0)).max(0.0))
            .collect()
    }
}

/// Constants pipeline: range of `C_p`, root residual, monotonicity of `M1` and
/// `M2`, the cone implication `K > C H^n => min k > eps H`, and the Schulze
/// inequality on sampled points.
pub fn constants_suite(implication_samples: usize, seed: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("constants");
    let sampling = SamplingConfig::with_seed(seed);
    let mut rng = rng(seed ^ 0x5eed);
    for (n, m, beta) in CONSTANT_TRIPLES {
        let p = FlowParams::new(n, m, beta)?;
        let tag = format!("(n={n},m={m},beta={beta})");
        let report = compute_c_p(&p, &sampling)?;
        let bound = 1.0 / (n as f64).powi(n as i32);
        rep.record("c_p_range", report.c_p > 0.0 && report.c_p < bound, || {
            format!("{tag} C_p={:e}", report.c_p)
        });
        let scale = report.m1 * report.eps_star * report.eps_star;
        let rel = report.eps_residual().abs() / scale;
        rep.record("eps_residual", rel <= 1e-6, || format!("{tag} rel={rel:e}"));
        let exact = pinch_constant_from_eps(report.eps_star, n)?;
        rep.record("c_p_composition", report.c_p == exact, || {
            format!("{tag} {} vs {exact}", report.c_p)
        });

        let eps_max = 1.0 / n as f64;
        let eps_grid: Vec<f64> = (1..=20).map(|i| eps_max * i as f64 / 21.0).collect();
        let m1: Vec<f64> = eps_grid
            .iter()
            .map(|&e| estimate_m1(e, &p, &sampling))
            .collect::<Result<_>>()?;
        let m2: Vec<f64> = eps_grid
            .iter()
            .map(|&e| estimate_m2(e, &p, &sampling))
            .collect::<Result<_>>()?;
        let m1_ok = m1.windows(2).all(|w| w[1] >= w[0] - 1e-8);
        let m2_ok = m2.windows(2).all(|w| w[1] <= w[0] + 1e-8);
        rep.record("m1_monotone", m1_ok, || format!("{tag} {m1:?}"));
        rep.record("m2_monotone", m2_ok, || format!("{tag} {m2:?}"));

        // cone implication at eps*
        let eps = report.eps_star;
        let mut counterexamples = 0usize;
        let mut first = None;
        for _ in 0..implication_samples {
            let k = random_nonnegative(&mut rng, n);
            let h: f64 = k.iter().sum();
            let kk: f64 = k.iter().product();
            if h > 0.0 && kk > report.c_p * h.powi(n as i32) {
                let min = k.iter().copied().fold(f64::INFINITY, f64::min);
                if !(min > eps * h) {
                    counterexamples += 1;
                    first.get_or_insert(k);
                }
            }
        }
        rep.record("cone_implication", counterexamples == 0, || {
            format!("{tag} {counterexamples} counterexamples, first {first:?}")
        });

        // Schulze inequality with the estimated delta
        let delta = estimate_delta_schulze(eps, n, &sampling)?;
        rep.record("delta_positive", delta > 0.0, || format!("{tag} delta={delta:e}"));
        let mut worst = f64::INFINITY;
        for _ in 0..2_000 {
            let raw = random_nonnegative(&mut rng, n);
            let h: f64 = raw.iter().sum();
            if h <= 0.0 {
                continue;
            }
            let k = CurvatureVector::new(raw.iter().map(|x| x / h).collect()).expect("finite");
            if k.min() < eps {
                continue;
            }
            worst = worst.min(k.isotropy_defect() - delta * k.q_defect());
        }
        rep.record("schulze", worst >= -1e-12, || format!("{tag} margin={worst:e}"));
    }
    Ok(rep)
}

/// Closed-form ellipsoid curvatures `(profile, rotational)` at polar angle `theta`.
pub fn ellipsoid_curvatures(a: f64, b: f64, theta: f64) -> (f64, f64) {
    let phi = (a * theta.sin()).atan2(b * theta.cos());
    let s = (a * a * phi.sin().powi(2) + b * b * phi.cos().powi(2)).sqrt();
    (a * b / s.powi(3), a / (b * s))
}

fn ellipsoid_curvature_error(cells: usize) -> Result<f64> {
    let prof = RadialProfile::ellipsoid(2, cells, 1.2, 1.0)?;
    let (kp, kr) = principal_curvatures(&prof);
    Ok((0..=cells)
        .map(|j| {
            let (ep, er) = ellipsoid_curvatures(1.2, 1.0, prof.grid().theta(j));
            (kp[j] - ep).abs().max((kr[j] - er).abs())
        })
        .fold(0.0, f64::max))
}

/// Sphere and ellipsoid oracles for curvatures, quadrature, radii and the
/// Alexandrov-Fenchel residual, plus snapshot round trips.
pub fn geometry_suite() -> Result<SuiteReport> {
    use std::f64::consts::PI;
    let mut rep = SuiteReport::new("geometry");

    let sphere = RadialProfile::sphere(2, 128, 2.0)?;
    let (kp, kr) = principal_curvatures(&sphere);
    let worst = kp.iter().chain(&kr).map(|k| (k - 0.5).abs()).fold(0.0, f64::max);
    rep.record("sphere_curvature", worst < 1e-14, || format!("err={worst:e}"));
    let area_err = (area(&sphere) - 16.0 * PI).abs() / (16.0 * PI);
    let vol_err = (volume(&sphere) - 32.0 * PI / 3.0).abs() / (32.0 * PI / 3.0);
    rep.record("sphere_quadrature", area_err < 1e-8 && vol_err < 1e-8, || {
        format!("area={area_err:e} volume={vol_err:e}")
    });
    let s3 = RadialProfile::sphere(3, 128, 1.0)?;
    let e3 = (volume(&s3) - PI * PI / 2.0).abs();
    rep.record("sphere3_volume", e3 < 1e-8, || format!("err={e3:e}"));

    let (e1, e2) = (ellipsoid_curvature_error(128)?, ellipsoid_curvature_error(256)?);
    rep.record("ellipsoid_curvature", e2 < 1e-3, || format!("err={e2:e}"));
    let ratio = e1 / e2;
    rep.record("curvature_order", (ratio - 4.0).abs() < 1.2, || {
        format!("ratio={ratio}")
    });

    let exact = 4.0 / 3.0 * PI * 1.2;
    let ell = RadialProfile::ellipsoid(2, 256, 1.2, 1.0)?;
    let ve = (volume(&ell) - exact).abs() / exact;
    rep.record("ellipsoid_volume", ve < 1e-8, || format!("rel={ve:e}"));

    let rad = radii(&ell);
    rep.record(
        "ellipsoid_radii",
        (rad.inradius - 1.0).abs() < 1e-5 && (rad.outer_radius - 1.2).abs() < 1e-9,
        || format!("{rad:?}"),
    );

    let af = alexandrov_fenchel_residual(&sphere);
    let c2 = crate::geometry::alexandrov_fenchel_constant(2);
    rep.record("af_sphere", af.abs() < 1e-7 * c2, || format!("residual={af:e}"));
    let af = alexandrov_fenchel_residual(&RadialProfile::ellipsoid(2, 256, 1.5, 1.0)?);
    rep.record("af_ellipsoid", af > 0.0, || format!("residual={af:e}"));

    let p = FlowParams::new(3, 2, 1.5)?;
    let ell3 = RadialProfile::ellipsoid(3, 128, 1.3, 1.0)?;
    let field = curvatures(&ell3, &p)?;
    let symmetric = (0..=128).all(|j| {
        field.k_profile[j] == field.k_profile[128 - j] && field.k_rot[j] == field.k_rot[128 - j]
    });
    rep.record("reflection_symmetry", symmetric, || "field not mirror symmetric".into());

    let mut buf = Vec::new();
    ell3.write_snapshot(0.75, &mut buf)?;
    let (back, t) = RadialProfile::read_snapshot(&buf[..])?;
    rep.record("snapshot_round_trip", back == ell3 && t == 0.75, || {
        "snapshot did not round-trip".into()
    });
    Ok(rep)
}

/// Short flows: sphere stationarity, contracting sphere, and one unit of time
/// from the ellipsoid `a = 1.1, b = 1` at `N = 128`.
pub fn flow_short_suite(seed: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("flow-short");
    let p = FlowParams::new(2, 1, 2.0)?;

    let mut cfg = RunConfig::new(p, InitialProfile::Sphere(1.0), 0.1);
    cfg.cells = 64;
    cfg.cadence = 0.02;
    cfg.seed = seed;
    let out = flow::run(&cfg)?;
    let first = out.records[0];
    let drift = out
        .records
        .iter()
        .map(|r| (r.volume - first.volume).abs().max((r.q_min - first.q_min).abs()))
        .fold(0.0, f64::max);
    rep.record("sphere_stationary", drift < 1e-12, || format!("drift={drift:e}"));

    let s0 = flow::FlowState::new(RadialProfile::sphere(2, 16, 1.0)?, p, 0.0)?;
    let opts = StepOptions {
        volume_preserving: false,
        project_to_volume: None,
    };
    let mut s = s0;
    let dt = 1e-4;
    for _ in 0..2000 {
        s = flow::step(&s, dt, &opts)?;
    }
    let exact = flow::contracting_sphere_radius(&p, 1.0, s.t());
    let gap = (s.profile().radii()[3] - exact).abs() / exact;
    rep.record("contracting_sphere", gap < 1e-6, || format!("rel={gap:e}"));

    let mut cfg = RunConfig::new(p, InitialProfile::Ellipsoid(1.1, 1.0), 1.0);
    cfg.cells = 128;
    cfg.cadence = 0.05;
    cfg.seed = seed;
    let out = flow::run(&cfg)?;
    rep.record("no_step_failure", out.failure.is_none(), || {
        format!("{:?}", out.failure)
    });
    let vd = out.max_volume_drift();
    rep.record("volume_drift", vd <= 1e-6, || format!("drift={vd:e}"));
    let q = flow::monitor_q_min(&out.records, 2, 128);
    rep.record("q_min_monotone", q.violations.is_empty(), || {
        format!("{:?}", q.violations)
    });
    let (d0, d1) = (out.records[0].q_defect, out.records.last().expect("records").q_defect);
    rep.record("q_defect_decreases", d1 < d0, || format!("{d0:e} -> {d1:e}"));
    let af_min = out
        .records
        .iter()
        .map(|r| r.af_residual)
        .fold(f64::INFINITY, f64::min);
    rep.record("af_nonnegative", af_min >= -1e-8, || format!("min={af_min:e}"));
    let bounds = flow::monitor_bounds(&out.records, out.pinching.as_ref());
    rep.record("h_positive", bounds.inf_h > 0.0, || format!("{bounds:?}"));
    rep.record(
        "records_finite",
        out.records.iter().all(|r| r.is_finite()),
        || "non-finite diagnostics".into(),
    );
    Ok(rep)
}

/// Run several suites and merge their reports.
pub fn run_all(suites: &[Suite], seed: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(
        suites
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    for &s in suites {
        rep.absorb(run_suite(s, seed)?);
    }
    Ok(rep)
}
