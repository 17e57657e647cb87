//! The pinching constant `C_p(n, m, beta)` and the quantities it is built from.
//!
//! * `M1(eps)`: minimum of every `d sigma / dk_i` over the cone slice
//!   `K_eps ∩ {|k| = 1}`, where `K_eps = { min k_i >= eps H > 0 }`.
//! * `M2(eps)`: maximum over the same slice of `|sigma_hessian_form(k, B)|` for
//!   symmetric `B` with unit Frobenius norm.
//! * `eps*`: the root of `M1(eps) eps^2 - 2 n^{3/2} (1 - n eps) M2(eps)` in `(0, 1/n)`.
//! * `C_p = C(eps*, n)`, the largest `K / H^n` on `{ k >= 0, min k_i <= eps H }`.
//!
//! Both extremal problems are solved on the simplex slice `{ sum k = 1, k_i >= eps }`
//! and mapped to the unit sphere by homogeneity; see [`crate::sampling`].

use std::fmt;
use std::str::FromStr;

use log::warn;

use crate::error::{Error, Result};
use crate::sampling::{minimize_on_slice, SliceSearch};
use crate::symfun::{sigma_grad, sigma_hessian_operator_norm, CurvatureVector, FlowParams};

/// How densely the compact cone slices are searched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    /// Upper bound on the number of regular simplex-lattice points.
    pub lattice_points: usize,
    /// Number of shifted Halton points.
    pub halton_points: usize,
    /// Number of best candidates handed to the local compass search.
    pub polish_starts: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            lattice_points: 1500,
            halton_points: 1500,
            polish_starts: 4,
            seed: 42,
        }
    }
}

impl SamplingConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Same seed, twice the candidate points.
    pub fn doubled(&self) -> Self {
        Self {
            lattice_points: 2 * self.lattice_points,
            halton_points: 2 * self.halton_points,
            ..*self
        }
    }

    pub fn sample_count(&self) -> usize {
        self.lattice_points + self.halton_points
    }

    fn search(&self) -> SliceSearch {
        SliceSearch {
            lattice_budget: self.lattice_points,
            halton_points: self.halton_points,
            polish_starts: self.polish_starts,
            seed: self.seed,
        }
    }
}

fn check_eps_open(eps: f64, n: usize) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0 / n as f64) {
        return Err(Error::domain(format!(
            "eps must lie in (0, 1/{n}), got {eps}"
        )));
    }
    Ok(())
}

fn unit(k: &[f64]) -> CurvatureVector {
    let norm = k.iter().map(|x| x * x).sum::<f64>().sqrt();
    CurvatureVector::new(k.iter().map(|x| x / norm).collect())
        .expect("slice points are finite with n >= 2")
}

fn m1_unchecked(eps: f64, p: &FlowParams, sampling: &SamplingConfig) -> f64 {
    let f = |k: &[f64]| {
        sigma_grad(&unit(k), p)
            .map(|g| g.into_iter().fold(f64::INFINITY, f64::min))
            .unwrap_or(f64::NAN)
    };
    minimize_on_slice(p.n, eps, &sampling.search(), f).1
}

fn m2_unchecked(eps: f64, p: &FlowParams, sampling: &SamplingConfig) -> f64 {
    let f = |k: &[f64]| {
        sigma_hessian_operator_norm(&unit(k), p)
            .map(|v| -v)
            .unwrap_or(f64::NAN)
    };
    -minimize_on_slice(p.n, eps, &sampling.search(), f).1
}

/// `M1(eps) = min { d sigma/dk_i (k) : k in K_eps, |k| = 1 }`.
pub fn estimate_m1(eps: f64, p: &FlowParams, sampling: &SamplingConfig) -> Result<f64> {
    check_eps_open(eps, p.n)?;
    Ok(m1_unchecked(eps, p, sampling))
}

/// `M2(eps) = max { |sigma''(k)[B, B]| : k in K_eps, |k| = 1, |B|_F = 1 }`.
///
/// The inner maximum over `B` is exact (largest absolute eigenvalue of the
/// form); only the curvature slice is searched.
pub fn estimate_m2(eps: f64, p: &FlowParams, sampling: &SamplingConfig) -> Result<f64> {
    check_eps_open(eps, p.n)?;
    Ok(m2_unchecked(eps, p, sampling))
}

/// Left-hand side of the root equation for `eps`.
pub fn eps_equation(eps: f64, p: &FlowParams, sampling: &SamplingConfig) -> Result<f64> {
    check_eps_open(eps, p.n)?;
    Ok(eps_equation_unchecked(eps, p, sampling))
}

fn eps_equation_unchecked(eps: f64, p: &FlowParams, sampling: &SamplingConfig) -> f64 {
    let n = p.n as f64;
    m1_unchecked(eps, p, sampling) * eps * eps
        - 2.0 * n.powf(1.5) * (1.0 - n * eps) * m2_unchecked(eps, p, sampling)
}

/// Root of the `eps` equation, as returned by [`solve_eps_star`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsStar {
    pub eps: f64,
    pub m1: f64,
    pub m2: f64,
    /// Value of the equation at `eps`.
    pub residual: f64,
    /// Set when `M2` vanishes identically and `eps` is the `1/(2n)` floor.
    pub degenerate: bool,
}

const EPS_ABS_TOL: f64 = 1e-12;

/// Solve `M1(eps) eps^2 = 2 n^{3/2} (1 - n eps) M2(eps)` on `(0, 1/n)` by bisection.
///
/// The left side minus the right side is negative near zero and equals
/// `M1(1/n) / n^2 > 0` at `eps = 1/n`, which closes the bracket.
pub fn solve_eps_star(p: &FlowParams, sampling: &SamplingConfig) -> Result<EpsStar> {
    let n = p.n as f64;
    let floor = 1.0 / (2.0 * n);
    let m2_mid = m2_unchecked(floor, p, sampling);
    let m1_mid = m1_unchecked(floor, p, sampling);
    if m2_mid <= 1e-14 * m1_mid {
        warn!(
            "sigma has vanishing Hessian for (n, m, beta) = ({}, {}, {}); using eps* = 1/(2n)",
            p.n, p.m, p.beta
        );
        return Ok(EpsStar {
            eps: floor,
            m1: m1_mid,
            m2: m2_mid,
            residual: m1_mid * floor * floor,
            degenerate: true,
        });
    }

    let f = |eps: f64| eps_equation_unchecked(eps, p, sampling);
    let mut lo = 1e-4_f64.min(0.5 / n);
    while f(lo) >= 0.0 {
        lo *= 0.1;
        if lo < 1e-12 {
            return Err(Error::Numerical(
                "eps equation is not negative near zero".to_string(),
            ));
        }
    }
    let mut hi = 1.0 / n;
    if f(hi) <= 0.0 {
        return Err(Error::Numerical(
            "eps equation is not positive at 1/n".to_string(),
        ));
    }
    while hi - lo > EPS_ABS_TOL {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let eps = 0.5 * (lo + hi);
    let m1 = m1_unchecked(eps, p, sampling);
    let m2 = m2_unchecked(eps, p, sampling);
    let residual = m1 * eps * eps - 2.0 * n.powf(1.5) * (1.0 - n * eps) * m2;
    if residual.abs() > 1e-6 * m1 * eps * eps {
        return Err(Error::Numerical(format!(
            "bisection stalled at eps = {eps} with residual {residual}"
        )));
    }
    Ok(EpsStar {
        eps,
        m1,
        m2,
        residual,
        degenerate: false,
    })
}

/// `C(eps, n) = max { K/H^n : k >= 0, min k_i <= eps H }`.
///
/// The maximum sits at `k_1 = eps H` with the other curvatures equal, giving
/// `eps (1 - eps)^{n-1} / (n-1)^{n-1}`.
pub fn pinch_constant_from_eps(eps: f64, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::domain(format!("dimension n must be >= 2, got {n}")));
    }
    check_eps_open(eps, n)?;
    let rest = (n - 1) as f64;
    Ok(eps * ((1.0 - eps) / rest).powi(n as i32 - 1))
}

/// Exclusion radius around the umbilic ray in [`estimate_delta_schulze`].
const UMBILIC_EXCLUSION: f64 = 1e-6;

/// Ratio `((n|A|^2 - H^2)/H^2) / (1/n^n - K/H^n)`, or `None` at umbilic points.
fn schulze_ratio(k: &CurvatureVector) -> Option<f64> {
    let d = k.q_defect();
    if d <= 0.0 {
        return None;
    }
    Some(k.isotropy_defect() / d)
}

/// Limit of the Schulze ratio at the umbilic ray, by Richardson extrapolation
/// of the ratio along a family of sum-preserving directions.
fn schulze_umbilic_limit(eps: f64, n: usize) -> f64 {
    let centre = 1.0 / n as f64;
    let mut directions: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let mut d = vec![0.0; n];
            d[i] = 1.0;
            d[j] = -1.0;
            directions.push(d);
        }
    }
    for i in 0..n {
        let mut d = vec![-1.0; n];
        d[i] = (n - 1) as f64;
        directions.push(d);
    }
    let ratio_at = |d: &[f64], h: f64| {
        let k: Vec<f64> = d.iter().map(|x| centre + h * x).collect();
        schulze_ratio(&CurvatureVector::new(k).expect("finite")).unwrap_or(f64::INFINITY)
    };
    directions
        .iter()
        .map(|d| {
            let amax = d.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
            let h = 1e-4_f64.min(0.5 * (centre - eps) / amax);
            2.0 * ratio_at(d, 0.5 * h) - ratio_at(d, h)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Largest `delta` with `(n|A|^2 - H^2)/H^2 >= delta (1/n^n - K/H^n)` on
/// `{ k_1 >= eps H }`: the smaller of the sampled infimum away from the
/// umbilic ray and the limit at the ray.
pub fn estimate_delta_schulze(eps: f64, n: usize, sampling: &SamplingConfig) -> Result<f64> {
    if n < 2 {
        return Err(Error::domain(format!("dimension n must be >= 2, got {n}")));
    }
    check_eps_open(eps, n)?;
    let centre = 1.0 / n as f64;
    let f = |k: &[f64]| {
        let dist = k.iter().map(|x| (x - centre).powi(2)).sum::<f64>().sqrt();
        if dist < UMBILIC_EXCLUSION {
            return f64::INFINITY;
        }
        schulze_ratio(&CurvatureVector::new(k.to_vec()).expect("finite")).unwrap_or(f64::INFINITY)
    };
    let sampled = minimize_on_slice(n, eps, &sampling.search(), f).1;
    Ok(sampled.min(schulze_umbilic_limit(eps, n)))
}

/// Everything the pinching construction produces for one `(n, m, beta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinchingReport {
    pub params: FlowParams,
    pub eps_star: f64,
    pub m1: f64,
    pub m2: f64,
    pub c_p: f64,
    pub delta_schulze: f64,
    pub sample_count: usize,
    pub seed: u64,
    pub degenerate: bool,
}

/// Compose `eps*`, `C(eps*, n)` and `delta(eps*, n)`.
pub fn compute_c_p(p: &FlowParams, sampling: &SamplingConfig) -> Result<PinchingReport> {
    let root = solve_eps_star(p, sampling)?;
    let c_p = pinch_constant_from_eps(root.eps, p.n)?;
    let delta_schulze = estimate_delta_schulze(root.eps, p.n, sampling)?;
    Ok(PinchingReport {
        params: *p,
        eps_star: root.eps,
        m1: root.m1,
        m2: root.m2,
        c_p,
        delta_schulze,
        sample_count: sampling.sample_count(),
        seed: sampling.seed,
        degenerate: root.degenerate,
    })
}

impl PinchingReport {
    /// Residual of the root equation at `eps*`.
    pub fn eps_residual(&self) -> f64 {
        let n = self.params.n as f64;
        self.m1 * self.eps_star * self.eps_star
            - 2.0 * n.powf(1.5) * (1.0 - n * self.eps_star) * self.m2
    }

    /// Whether a curvature vector satisfies `K > C_p H^n`.
    pub fn is_pinched(&self, k: &CurvatureVector) -> bool {
        k.mean_curvature() > 0.0 && k.pinching_quotient() > self.c_p
    }
}

/// Flat `key = value` record with keys `n, m, beta, eps_star, M1, M2, C_p, delta, seed`.
impl fmt::Display for PinchingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n = {}", self.params.n)?;
        writeln!(f, "m = {}", self.params.m)?;
        writeln!(f, "beta = {:.16e}", self.params.beta)?;
        writeln!(f, "eps_star = {:.16e}", self.eps_star)?;
        writeln!(f, "M1 = {:.16e}", self.m1)?;
        writeln!(f, "M2 = {:.16e}", self.m2)?;
        writeln!(f, "C_p = {:.16e}", self.c_p)?;
        writeln!(f, "delta = {:.16e}", self.delta_schulze)?;
        writeln!(f, "seed = {}", self.seed)
    }
}

impl FromStr for PinchingReport {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut map = std::collections::HashMap::new();
        for (i, line) in s.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            map.insert(k.trim().to_string(), (i + 1, v.trim().to_string()));
        }
        fn get<T: FromStr>(
            map: &std::collections::HashMap<String, (usize, String)>,
            key: &str,
        ) -> Result<T> {
            let (line, v) = map.get(key).ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("missing key `{key}`"),
            })?;
            v.parse().map_err(|_| Error::Parse {
                line: *line,
                msg: format!("bad value for `{key}`: `{v}`"),
            })
        }
        let params = FlowParams::new(get(&map, "n")?, get(&map, "m")?, get(&map, "beta")?)?;
        Ok(Self {
            params,
            eps_star: get(&map, "eps_star")?,
            m1: get(&map, "M1")?,
            m2: get(&map, "M2")?,
            c_p: get(&map, "C_p")?,
            delta_schulze: get(&map, "delta")?,
            sample_count: 0,
            seed: get(&map, "seed")?,
            degenerate: false,
        })
    }
}
