//! Star-shaped hypersurfaces of revolution in `R^{n+1}` as radial graphs.
//!
//! A profile stores `r(theta_j)` on the uniform grid `theta_j = j pi / N`,
//! `j = 0..=N`, and describes the surface
//! `{ (r cos theta, r sin theta * w) : w in S^{n-1} }`. The surface has one
//! profile curvature and one rotational curvature of multiplicity `n - 1`.
//!
//! Derivatives use central differences with even reflection across the poles,
//! so `r_theta = 0` there. All stencils are written so that a profile symmetric
//! under `theta -> pi - theta` yields a bit-exactly symmetric curvature field.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::sync::Arc;

use log::warn;

use crate::error::{Error, Result};
use crate::symfun::{binomial, CurvatureVector, FlowParams};

/// Area of the unit `k`-sphere `S^k ⊂ R^{k+1}`.
pub fn unit_sphere_area(k: usize) -> f64 {
    // 2 pi^{(k+1)/2} / Gamma((k+1)/2)
    let half = k + 1;
    let mut gamma = if half % 2 == 0 { 1.0 } else { PI.sqrt() };
    let mut x = if half % 2 == 0 { 1.0 } else { 0.5 };
    while x < half as f64 / 2.0 {
        gamma *= x;
        x += 1.0;
    }
    2.0 * PI.powf(half as f64 / 2.0) / gamma
}

/// Volume of the unit ball in `R^d`.
pub fn unit_ball_volume(d: usize) -> f64 {
    unit_sphere_area(d - 1) / d as f64
}

/// Uniform angular grid with mirrored trigonometric tables and Simpson weights.
#[derive(Debug)]
pub struct Grid {
    cells: usize,
    dtheta: f64,
    sin: Vec<f64>,
    cos: Vec<f64>,
    simpson: Vec<f64>,
}

impl Grid {
    pub fn new(cells: usize) -> Result<Self> {
        if cells < 4 || cells % 2 != 0 {
            return Err(Error::domain(format!(
                "grid needs an even number of cells >= 4, got {cells}"
            )));
        }
        let dtheta = PI / cells as f64;
        let mut sin = vec![0.0; cells + 1];
        let mut cos = vec![0.0; cells + 1];
        for j in 0..=cells / 2 {
            let th = j as f64 * dtheta;
            sin[j] = th.sin();
            cos[j] = if 2 * j == cells { 0.0 } else { th.cos() };
            sin[cells - j] = sin[j];
            cos[cells - j] = -cos[j];
        }
        sin[0] = 0.0;
        sin[cells] = 0.0;
        let simpson = (0..=cells)
            .map(|j| {
                let w = if j == 0 || j == cells {
                    1.0
                } else if j % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                w * dtheta / 3.0
            })
            .collect();
        Ok(Self {
            cells,
            dtheta,
            sin,
            cos,
            simpson,
        })
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn dtheta(&self) -> f64 {
        self.dtheta
    }

    pub fn theta(&self, j: usize) -> f64 {
        j as f64 * self.dtheta
    }

    pub fn sin(&self) -> &[f64] {
        &self.sin
    }

    pub fn cos(&self) -> &[f64] {
        &self.cos
    }

    pub fn simpson(&self) -> &[f64] {
        &self.simpson
    }

    /// Composite Simpson quadrature of nodal values over `[0, pi]`.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.simpson).map(|(v, w)| v * w).sum()
    }

    /// Central first and second differences of nodal values at node `j`, with
    /// even reflection at the poles.
    #[inline]
    pub fn derivatives(&self, values: &[f64], j: usize) -> (f64, f64) {
        self.derivatives_split(values, None, j)
    }

    /// Derivatives of `hi + lo`, where `lo` holds low-order parts lost to
    /// rounding. Neighbouring values are differenced before they are summed, so
    /// the second difference is free of cancellation.
    pub(crate) fn derivatives_split(&self, hi: &[f64], lo: Option<&[f64]>, j: usize) -> (f64, f64) {
        let n = self.cells;
        let (l, r) = (if j == 0 { 1 } else { j - 1 }, if j == n { n - 1 } else { j + 1 });
        let mut d1 = hi[r] - hi[l];
        let mut d2 = (hi[r] - hi[j]) + (hi[l] - hi[j]);
        if let Some(lo) = lo {
            d1 += lo[r] - lo[l];
            d2 += (lo[r] - lo[j]) + (lo[l] - lo[j]);
        }
        (d1 / (2.0 * self.dtheta), d2 / (self.dtheta * self.dtheta))
    }

    /// Five-point fourth-order version of [`Grid::derivatives`], with the same
    /// even reflection across both poles.
    fn derivatives_fourth_order(&self, values: &[f64], j: usize) -> (f64, f64) {
        let n = self.cells as isize;
        let at = |i: isize| {
            let k = if i < 0 {
                -i
            } else if i > n {
                2 * n - i
            } else {
                i
            };
            values[k as usize]
        };
        let j = j as isize;
        let (m2, m1, c, p1, p2) = (at(j - 2), at(j - 1), at(j), at(j + 1), at(j + 2));
        let h = self.dtheta;
        let d1 = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
        let d2 = (16.0 * (p1 + m1) - (p2 + m2) - 30.0 * c) / (12.0 * h * h);
        (d1, d2)
    }
}

/// Radial graph over the polar angle, describing a star-shaped hypersurface of
/// revolution about the origin.
#[derive(Debug, Clone)]
pub struct RadialProfile {
    n: usize,
    grid: Arc<Grid>,
    r: Vec<f64>,
}

impl PartialEq for RadialProfile {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.r == other.r
    }
}

impl RadialProfile {
    pub fn new(n: usize, r: Vec<f64>) -> Result<Self> {
        if r.len() < 2 {
            return Err(Error::domain("profile needs at least two nodes"));
        }
        let grid = Arc::new(Grid::new(r.len() - 1)?);
        Self::on_grid(n, grid, r)
    }

    /// Build a profile on an existing grid (shared between time steps).
    pub fn on_grid(n: usize, grid: Arc<Grid>, r: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::domain(format!("dimension n must be >= 2, got {n}")));
        }
        if r.len() != grid.cells + 1 {
            return Err(Error::domain(format!(
                "expected {} radii, got {}",
                grid.cells + 1,
                r.len()
            )));
        }
        for (node, &value) in r.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite { node });
            }
            if value <= 0.0 {
                return Err(Error::StarShapeLost { node, value });
            }
        }
        Ok(Self { n, grid, r })
    }

    pub fn from_fn(n: usize, cells: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let grid = Grid::new(cells)?;
        let r = (0..=cells).map(|j| f(grid.theta(j))).collect();
        Self::on_grid(n, Arc::new(grid), r)
    }

    pub fn sphere(n: usize, cells: usize, radius: f64) -> Result<Self> {
        Self::from_fn(n, cells, |_| radius)
    }

    /// Ellipsoid of revolution with semi-axis `a` along the rotation axis and
    /// `b` in the equatorial directions.
    pub fn ellipsoid(n: usize, cells: usize, a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::domain("ellipsoid semi-axes must be positive"));
        }
        let grid = Grid::new(cells)?;
        let r = (0..=cells)
            .map(|j| {
                let (s, c) = (grid.sin[j], grid.cos[j]);
                a * b / (b * b * c * c + a * a * s * s).sqrt()
            })
            .collect();
        Self::on_grid(n, Arc::new(grid), r)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn cells(&self) -> usize {
        self.grid.cells
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn radii(&self) -> &[f64] {
        &self.r
    }

    pub fn into_radii(self) -> Vec<f64> {
        self.r
    }

    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        Self::on_grid(
            self.n,
            self.grid.clone(),
            self.r.iter().map(|x| x * lambda).collect(),
        )
    }

    /// Meridian coordinates `(x, y) = (r cos theta, r sin theta)` of every node.
    pub fn meridian_points(&self) -> Vec<(f64, f64)> {
        self.r
            .iter()
            .zip(self.grid.cos.iter().zip(&self.grid.sin))
            .map(|(r, (c, s))| (r * c, r * s))
            .collect()
    }

    /// Write the snapshot format: header `n N t`, then `theta r` per node,
    /// all floats with 17 significant digits.
    pub fn write_snapshot<W: Write>(&self, t: f64, mut w: W) -> Result<()> {
        writeln!(w, "{} {} {:.16e}", self.n, self.cells(), t)?;
        for (j, r) in self.r.iter().enumerate() {
            writeln!(w, "{:.16e} {:.16e}", self.grid.theta(j), r)?;
        }
        Ok(())
    }

    /// Read a snapshot written by [`RadialProfile::write_snapshot`]; returns the profile and its time.
    pub fn read_snapshot<R: BufRead>(reader: R) -> Result<(Self, f64)> {
        let mut lines = reader.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty snapshot".into(),
        })?;
        let header = header?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let bad_header = || Error::Parse {
            line: 1,
            msg: format!("expected header `n N t`, got `{header}`"),
        };
        if fields.len() != 3 {
            return Err(bad_header());
        }
        let n: usize = fields[0].parse().map_err(|_| bad_header())?;
        let cells: usize = fields[1].parse().map_err(|_| bad_header())?;
        let t: f64 = fields[2].parse().map_err(|_| bad_header())?;
        let grid = Grid::new(cells)?;
        let mut r = Vec::with_capacity(cells + 1);
        for (idx, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let mut it = line.split_whitespace();
            let parse = |s: Option<&str>| -> Result<f64> {
                s.and_then(|v| v.parse().ok()).ok_or_else(|| Error::Parse {
                    line: lineno,
                    msg: format!("expected `theta r`, got `{line}`"),
                })
            };
            let theta = parse(it.next())?;
            let radius = parse(it.next())?;
            let j = r.len();
            if j > cells || (theta - grid.theta(j)).abs() > 1e-12 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("node {j} is not on the uniform grid (theta = {theta})"),
                });
            }
            r.push(radius);
        }
        if r.len() != cells + 1 {
            return Err(Error::Parse {
                line: r.len() + 2,
                msg: format!("expected {} nodes, found {}", cells + 1, r.len()),
            });
        }
        Ok((Self::on_grid(n, Arc::new(grid), r)?, t))
    }
}

/// Local metric and curvature data at one node.
#[derive(Debug, Clone, Copy)]
pub(crate) struct NodeGeometry {
    pub r_theta: f64,
    /// `sqrt(r^2 + r_theta^2)`, the arclength density of the meridian.
    pub metric: f64,
    pub k_profile: f64,
    pub k_rot: f64,
}

#[inline]
pub(crate) fn node_geometry(grid: &Grid, r: &[f64], j: usize) -> NodeGeometry {
    node_geometry_split(grid, r, None, j)
}

/// [`node_geometry`] for radii `r + lo` split into high and low parts.
pub(crate) fn node_geometry_split(
    grid: &Grid,
    r: &[f64],
    lo: Option<&[f64]>,
    j: usize,
) -> NodeGeometry {
    let (rt, rtt) = grid.derivatives_split(r, lo, j);
    let rj = r[j];
    let l2 = rj * rj + rt * rt;
    let l = l2.sqrt();
    let k_profile = (rj * rj + 2.0 * rt * rt - rj * rtt) / (l2 * l);
    let k_rot = if j == 0 || j == grid.cells {
        k_profile
    } else {
        let rs = rj * grid.sin[j];
        (rs - rt * grid.cos[j]) / (rs * l)
    };
    NodeGeometry {
        r_theta: rt,
        metric: l,
        k_profile,
        k_rot,
    }
}

/// Change of `(k_profile, k_rot)` at node `j` when the radii move from `r` to
/// `r + dr`, evaluated without subtracting nearly equal curvatures.
pub(crate) fn curvature_increment(
    grid: &Grid,
    r: &[f64],
    lo: Option<&[f64]>,
    dr: &[f64],
    j: usize,
) -> (f64, f64) {
    let (rt, rtt) = grid.derivatives_split(r, lo, j);
    let (drt, drtt) = grid.derivatives(dr, j);
    let (rj, d) = (r[j], dr[j]);
    let l0_sq = rj * rj + rt * rt;
    let dl_sq = d * (2.0 * rj + d) + drt * (2.0 * rt + drt);
    let l1_sq = l0_sq + dl_sq;
    let (l0, l1) = (l0_sq.sqrt(), l1_sq.sqrt());
    let dl = dl_sq / (l0 + l1);
    let a0 = rj * rj + 2.0 * rt * rt - rj * rtt;
    let da = d * (2.0 * rj + d) + 2.0 * drt * (2.0 * rt + drt) - (d * rtt + rj * drtt + d * drtt);
    let (b0, b1) = (l0_sq * l0, l1_sq * l1);
    let db = dl * (l1_sq + l1 * l0 + l0_sq);
    let dkp = (da * b0 - a0 * db) / (b0 * b1);
    if j == 0 || j == grid.cells {
        return (dkp, dkp);
    }
    let (p0, p1) = (rj * l0, (rj + d) * l1);
    let dp = d * l1 + rj * dl;
    let d_inv_l = -dl / (l0 * l1);
    let d_slope = (drt * p0 - rt * dp) / (p0 * p1);
    (dkp, d_inv_l - grid.cos[j] / grid.sin[j] * d_slope)
}

/// `(x + dx)^k - x^k` for `k >= 0`, without cancellation.
fn power_increment(x: f64, dx: f64, k: i32) -> f64 {
    let y = x + dx;
    dx * (0..k).map(|i| y.powi(i) * x.powi(k - 1 - i)).sum::<f64>()
}

/// Symmetric functions at curvature vectors of the form `(k_p, k_r, ..., k_r)`.
///
/// Closed forms of the generic [`crate::symfun`] kernel for one simple and one
/// `(n-1)`-fold curvature; used on every node of every stage.
#[derive(Debug, Clone, Copy)]
pub struct AxialKernel {
    n: usize,
    m: i32,
    beta: f64,
    int_beta: Option<i32>,
    norm: f64,
    hm_rot: f64,
    hm_mixed: f64,
    grad_rot_rot: f64,
    grad_rot_mixed: f64,
}

impl AxialKernel {
    pub fn new(p: &FlowParams) -> Self {
        let (n, m) = (p.n as i64, p.m as i64);
        Self {
            n: p.n,
            m: p.m as i32,
            beta: p.beta,
            int_beta: (p.beta.fract() == 0.0 && p.beta.abs() < 64.0).then_some(p.beta as i32),
            norm: binomial(n, m),
            hm_rot: binomial(n - 1, m),
            hm_mixed: binomial(n - 1, m - 1),
            grad_rot_rot: binomial(n - 2, m - 1),
            grad_rot_mixed: binomial(n - 2, m - 2),
        }
    }

    #[inline]
    pub fn hm(&self, kp: f64, kr: f64) -> f64 {
        let mut e = self.hm_mixed * kp * kr.powi(self.m - 1);
        if self.hm_rot != 0.0 {
            e += self.hm_rot * kr.powi(self.m);
        }
        e / self.norm
    }

    /// `x^beta`, with an integer power when `beta` is integral.
    #[inline]
    pub fn power(&self, x: f64, shift: i32) -> f64 {
        match self.int_beta {
            Some(b) => x.powi(b + shift),
            None => x.powf(self.beta + shift as f64),
        }
    }

    #[inline]
    pub fn sigma(&self, kp: f64, kr: f64) -> f64 {
        self.power(self.hm(kp, kr), 0)
    }

    /// `(d sigma/dk_profile, d sigma/dk_rot)` where the second is the derivative
    /// with respect to one of the `n - 1` rotational curvatures.
    #[inline]
    pub fn sigma_grad(&self, kp: f64, kr: f64) -> (f64, f64) {
        self.sigma_grad_at(kp, kr, self.hm(kp, kr))
    }

    /// [`AxialKernel::sigma_grad`] with `H_m` already known.
    #[inline]
    pub fn sigma_grad_at(&self, kp: f64, kr: f64, hm: f64) -> (f64, f64) {
        let factor = self.beta * self.power(hm, -1) / self.norm;
        let d_profile = self.hm_mixed * kr.powi(self.m - 1);
        let mut d_rot = self.grad_rot_rot * kr.powi(self.m - 1);
        if self.grad_rot_mixed != 0.0 {
            d_rot += self.grad_rot_mixed * kp * kr.powi(self.m - 2);
        }
        (factor * d_profile, factor * d_rot)
    }

    /// Change of `H_m` when `(kp, kr)` moves by `(dkp, dkr)`.
    pub(crate) fn hm_increment(&self, kp: f64, kr: f64, dkp: f64, dkr: f64) -> f64 {
        let mixed = dkp * (kr + dkr).powi(self.m - 1) + kp * power_increment(kr, dkr, self.m - 1);
        let mut e = self.hm_mixed * mixed;
        if self.hm_rot != 0.0 {
            e += self.hm_rot * power_increment(kr, dkr, self.m);
        }
        e / self.norm
    }

    /// Change of `sigma = H_m^beta` when `H_m` moves by `dhm`.
    pub(crate) fn sigma_increment(&self, hm: f64, dhm: f64) -> f64 {
        self.power(hm, 0) * (self.beta * (dhm / hm).ln_1p()).exp_m1()
    }

    #[inline]
    pub fn trace(&self, kp: f64, kr: f64) -> f64 {
        let (a, b) = self.sigma_grad(kp, kr);
        a + (self.n - 1) as f64 * b
    }

    pub fn dim(&self) -> usize {
        self.n
    }
}

/// Curvature data of a whole profile.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureField {
    pub n: usize,
    pub k_profile: Vec<f64>,
    /// Rotational curvature, multiplicity `n - 1`.
    pub k_rot: Vec<f64>,
    pub mean: Vec<f64>,
    pub gauss: Vec<f64>,
    pub hm: Vec<f64>,
    pub sigma: Vec<f64>,
    /// `q = K / H^n`.
    pub q: Vec<f64>,
    /// `1/n^n - q`, evaluated without cancellation.
    pub q_defect: Vec<f64>,
}

impl CurvatureField {
    pub fn len(&self) -> usize {
        self.k_profile.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k_profile.is_empty()
    }

    pub fn curvature_vector(&self, j: usize) -> CurvatureVector {
        let mut k = vec![self.k_rot[j]; self.n];
        k[0] = self.k_profile[j];
        CurvatureVector::new(k).expect("finite curvatures with n >= 2")
    }

    pub fn is_convex(&self) -> bool {
        self.k_profile.iter().chain(&self.k_rot).all(|&k| k > 0.0)
    }
}

/// Principal curvatures only: `(k_profile, k_rot)` per node.
pub fn principal_curvatures(profile: &RadialProfile) -> (Vec<f64>, Vec<f64>) {
    let g = &profile.grid;
    (0..=g.cells)
        .map(|j| {
            let ng = node_geometry(g, &profile.r, j);
            (ng.k_profile, ng.k_rot)
        })
        .unzip()
}

/// Curvatures, `H_m`, `sigma` and the pinching quotient at every node.
pub fn curvatures(profile: &RadialProfile, p: &FlowParams) -> Result<CurvatureField> {
    if profile.n != p.n {
        return Err(Error::domain(format!(
            "profile dimension {} does not match n = {}",
            profile.n, p.n
        )));
    }
    let kernel = AxialKernel::new(p);
    let (k_profile, k_rot) = principal_curvatures(profile);
    let len = k_profile.len();
    let nf = p.n as f64;
    let mut field = CurvatureField {
        n: p.n,
        mean: Vec::with_capacity(len),
        gauss: Vec::with_capacity(len),
        hm: Vec::with_capacity(len),
        sigma: Vec::with_capacity(len),
        q: Vec::with_capacity(len),
        q_defect: Vec::with_capacity(len),
        k_profile,
        k_rot,
    };
    for j in 0..len {
        let (kp, kr) = (field.k_profile[j], field.k_rot[j]);
        if !(kp.is_finite() && kr.is_finite()) {
            return Err(Error::NonFinite { node: j });
        }
        let hm = kernel.hm(kp, kr);
        if hm <= 0.0 {
            return Err(Error::ConeExit { node: j, value: hm });
        }
        let h = kp + (nf - 1.0) * kr;
        let k = kp * kr.powi(p.n as i32 - 1);
        field.mean.push(h);
        field.gauss.push(k);
        field.hm.push(hm);
        field.sigma.push(kernel.power(hm, 0));
        field.q.push(k / h.powi(p.n as i32));
        field.q_defect.push(field.curvature_vector(j).q_defect());
    }
    Ok(field)
}

/// Per-node surface measure weights: Simpson weight times
/// `s_{n-1} (r sin theta)^{n-1} sqrt(r^2 + r_theta^2)`.
pub fn area_weights(profile: &RadialProfile) -> Vec<f64> {
    let g = &profile.grid;
    let s = unit_sphere_area(profile.n - 1);
    (0..=g.cells)
        .map(|j| {
            let (rt, _) = g.derivatives(&profile.r, j);
            let rj = profile.r[j];
            let l = (rj * rj + rt * rt).sqrt();
            s * g.simpson[j] * (rj * g.sin[j]).powi(profile.n as i32 - 1) * l
        })
        .collect()
}

/// `|M| = s_{n-1} ∫ (r sin theta)^{n-1} sqrt(r^2 + r_theta^2) d theta`.
pub fn area(profile: &RadialProfile) -> f64 {
    area_weights(profile).iter().sum()
}

/// `V = s_{n-1}/(n+1) ∫ r^{n+1} sin^{n-1} theta d theta`.
pub fn volume(profile: &RadialProfile) -> f64 {
    let g = &profile.grid;
    let n = profile.n as i32;
    let integral: f64 = (0..=g.cells)
        .map(|j| g.simpson[j] * profile.r[j].powi(n + 1) * g.sin[j].powi(n - 1))
        .sum();
    unit_sphere_area(profile.n - 1) / (n + 1) as f64 * integral
}

/// Radius of the ball with the same volume.
pub fn equal_volume_radius(n: usize, volume: f64) -> f64 {
    (volume / unit_ball_volume(n + 1)).powf(1.0 / (n + 1) as f64)
}

/// `h = (1/|M|) ∫ sigma dmu`.
pub fn averaged_speed(profile: &RadialProfile, p: &FlowParams) -> Result<f64> {
    let field = curvatures(profile, p)?;
    let w = area_weights(profile);
    let total: f64 = w.iter().sum();
    Ok(w.iter().zip(&field.sigma).map(|(a, b)| a * b).sum::<f64>() / total)
}

/// Inradius and outer radius with the optimal centres on the rotation axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Radii {
    pub inradius: f64,
    pub in_centre: f64,
    pub outer_radius: f64,
    pub out_centre: f64,
}

const CENTRE_TOL: f64 = 1e-10;

/// Golden-section search for the minimum of a unimodal function on `[lo, hi]`.
fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - phi * (hi - lo);
    let mut b = lo + phi * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > tol {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - phi * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + phi * (hi - lo);
            fb = f(b);
        }
    }
    let c = 0.5 * (lo + hi);
    (c, f(c))
}

/// Coarse scan of `[lo, hi]` followed by golden-section refinement around the
/// best scan point, for objectives that need not be unimodal.
fn scan_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    const SCAN: usize = 400;
    let h = (hi - lo) / SCAN as f64;
    let best = (0..=SCAN)
        .map(|i| (i, f(lo + i as f64 * h)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map_or(0, |(i, _)| i);
    let a = lo + best.saturating_sub(1) as f64 * h;
    let b = lo + (best + 1).min(SCAN) as f64 * h;
    golden_min(f, a, b, CENTRE_TOL)
}

fn axis_distances(points: &[(f64, f64)], c: f64) -> impl Iterator<Item = f64> + '_ {
    points.iter().map(move |(x, y)| ((x - c) * (x - c) + y * y).sqrt())
}

/// `rho = max_c min_j |X_j - c|`, `D = min_c max_j |X_j - c|` over axis points `c`.
pub fn radii(profile: &RadialProfile) -> Radii {
    let (kp, kr) = principal_curvatures(profile);
    if kp.iter().chain(&kr).any(|&k| k <= 0.0) {
        warn!("radii requested for a non-convex profile; values are node-based estimates");
    }
    let pts = profile.meridian_points();
    let lo = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let (in_centre, neg_in) = scan_min(
        |c| -axis_distances(&pts, c).fold(f64::INFINITY, f64::min),
        lo,
        hi,
    );
    let (out_centre, outer_radius) = golden_min(
        |c| axis_distances(&pts, c).fold(0.0, f64::max),
        lo,
        hi,
        CENTRE_TOL,
    );
    Radii {
        inradius: -neg_in,
        in_centre,
        outer_radius,
        out_centre,
    }
}

/// Node-based Hausdorff distance to the best axis-centred sphere of the given
/// radius; returns `(distance, centre)`.
pub fn hausdorff_to_sphere(profile: &RadialProfile, radius: f64) -> (f64, f64) {
    let pts = profile.meridian_points();
    let lo = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let (c, d) = scan_min(
        |c| axis_distances(&pts, c).fold(0.0, |acc, d| acc.max((d - radius).abs())),
        lo,
        hi,
    );
    (d, c)
}

/// `C_n = (n s_n)^{n+1} / omega_{n+1}^{n-1}`, the equality constant for spheres.
pub fn alexandrov_fenchel_constant(n: usize) -> f64 {
    let nf = n as f64;
    (nf * unit_sphere_area(n)).powi(n as i32 + 1) / unit_ball_volume(n + 1).powi(n as i32 - 1)
}

/// `(∫ H dmu)^{n+1} / V^{n-1} - C_n`; nonnegative on convex bodies up to quadrature error.
///
/// The excess over `C_n` is quadratic in the distance from a sphere, so the
/// curvatures here use fourth-order stencils; with the second-order ones of
/// the flow the linear discretization error would swamp it near the sphere.
pub fn alexandrov_fenchel_residual(profile: &RadialProfile) -> f64 {
    let g = &profile.grid;
    let n = profile.n;
    let s = unit_sphere_area(n - 1);
    let total_mean: f64 = (0..=g.cells)
        .map(|j| {
            let (rt, rtt) = g.derivatives_fourth_order(&profile.r, j);
            let rj = profile.r[j];
            let l2 = rj * rj + rt * rt;
            let l = l2.sqrt();
            let kp = (rj * rj + 2.0 * rt * rt - rj * rtt) / (l2 * l);
            let kr = if j == 0 || j == g.cells {
                kp
            } else {
                let rs = rj * g.sin[j];
                (rs - rt * g.cos[j]) / (rs * l)
            };
            let w = s * g.simpson[j] * (rj * g.sin[j]).powi(n as i32 - 1) * l;
            w * (kp + (n - 1) as f64 * kr)
        })
        .sum();
    total_mean.powi(n as i32 + 1) / volume(profile).powi(n as i32 - 1)
        - alexandrov_fenchel_constant(n)
}

/// Result of comparing principal curvatures against a pinching ratio bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioCheck {
    pub holds: bool,
    /// Largest `max(k_rot/k_profile, k_profile/k_rot)` over the nodes.
    pub max_ratio: f64,
}

/// Whether `k_max <= B1 k_min` at every node.
pub fn pinching_ratio_check(field: &CurvatureField, b1: f64) -> RatioCheck {
    let max_ratio = field
        .k_profile
        .iter()
        .zip(&field.k_rot)
        .map(|(&a, &b)| (a / b).max(b / a))
        .fold(1.0_f64, f64::max);
    RatioCheck {
        holds: field.is_convex() && max_ratio <= b1,
        max_ratio,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: usize, m: usize, beta: f64) -> FlowParams {
        FlowParams::new(n, m, beta).unwrap()
    }

    /// Closed-form principal curvatures of the ellipsoid of revolution at the
    /// point with polar angle `theta`.
    fn ellipsoid_curvatures(a: f64, b: f64, theta: f64) -> (f64, f64) {
        let phi = (a * theta.sin()).atan2(b * theta.cos());
        let s = (a * a * phi.sin().powi(2) + b * b * phi.cos().powi(2)).sqrt();
        (a * b / s.powi(3), a / (b * s))
    }

    fn max_ellipsoid_error(cells: usize) -> f64 {
        let prof = RadialProfile::ellipsoid(2, cells, 1.2, 1.0).unwrap();
        let (kp, kr) = principal_curvatures(&prof);
        (0..=cells)
            .map(|j| {
                let (ep, er) = ellipsoid_curvatures(1.2, 1.0, prof.grid().theta(j));
                (kp[j] - ep).abs().max((kr[j] - er).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn sphere_constants() {
        assert!((unit_sphere_area(1) - 2.0 * PI).abs() < 1e-14);
        assert!((unit_sphere_area(2) - 4.0 * PI).abs() < 1e-14);
        assert!((unit_sphere_area(3) - 2.0 * PI * PI).abs() < 1e-13);
        assert!((unit_ball_volume(3) - 4.0 * PI / 3.0).abs() < 1e-14);
        assert!((unit_ball_volume(4) - PI * PI / 2.0).abs() < 1e-13);
        assert!((alexandrov_fenchel_constant(2) - 384.0 * PI * PI).abs() < 1e-9);
    }

    #[test]
    fn sphere_curvatures() {
        let prof = RadialProfile::sphere(2, 64, 2.0).unwrap();
        let (kp, kr) = principal_curvatures(&prof);
        for j in 0..=64 {
            assert!((kp[j] - 0.5).abs() < 1e-15);
            assert!((kr[j] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn ellipsoid_curvatures_match_closed_form() {
        let err = max_ellipsoid_error(256);
        assert!(err < 1e-3, "{err}");
        let ratio = max_ellipsoid_error(128) / err;
        assert!((ratio - 4.0).abs() < 0.3 * 4.0, "refinement ratio {ratio}");
    }

    #[test]
    fn sphere_area_and_volume() {
        let s2 = RadialProfile::sphere(2, 128, 1.5).unwrap();
        // Simpson error for these integrands is about dtheta^4 / 90 relative
        let rel = |a: f64, b: f64| ((a - b) / b).abs();
        assert!(rel(area(&s2), 4.0 * PI * 1.5f64.powi(2)) < 1e-8);
        assert!(rel(volume(&s2), 4.0 / 3.0 * PI * 1.5f64.powi(3)) < 1e-8);
        let s3 = RadialProfile::sphere(3, 128, 1.5).unwrap();
        assert!(rel(area(&s3), 2.0 * PI * PI * 1.5f64.powi(3)) < 1e-8);
        assert!(rel(volume(&s3), PI * PI / 2.0 * 1.5f64.powi(4)) < 1e-8);
    }

    #[test]
    fn ellipsoid_volume_converges_at_fourth_order() {
        let exact = 4.0 / 3.0 * PI * 1.2;
        let err = |cells| (volume(&RadialProfile::ellipsoid(2, cells, 1.2, 1.0).unwrap()) - exact).abs();
        let (e1, e2) = (err(32), err(64));
        assert!(e2 < 2e-6, "{e1:e} {e2:e}");
        let order = (e1 / e2).log2();
        assert!(order > 3.7, "order {order}");
    }

    #[test]
    fn averaged_speed_on_sphere_and_bounds() {
        let p = params(2, 1, 2.0);
        let h = averaged_speed(&RadialProfile::sphere(2, 64, 2.0).unwrap(), &p).unwrap();
        assert!((h - 2f64.powf(-2.0)).abs() < 1e-15);

        let prof = RadialProfile::ellipsoid(2, 128, 1.2, 1.0).unwrap();
        let field = curvatures(&prof, &p).unwrap();
        let h = averaged_speed(&prof, &p).unwrap();
        let lo = field.sigma.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = field.sigma.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo < h && h < hi);
    }

    #[test]
    fn averaged_speed_matches_fine_quadrature() {
        // reference: adaptive-free brute force with 10^6 midpoint panels of the
        // exact ellipsoid integrands
        let (a, b) = (1.2, 1.0);
        let p = params(2, 1, 2.0);
        let panels = 1_000_000;
        let dth = PI / panels as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..panels {
            let th = (i as f64 + 0.5) * dth;
            let (s, c) = th.sin_cos();
            let q = b * b * c * c + a * a * s * s;
            let r = a * b / q.sqrt();
            let rt = -a * b * (a * a - b * b) * s * c / q.powf(1.5);
            let w = r * s * (r * r + rt * rt).sqrt();
            let (kp, kr) = ellipsoid_curvatures(a, b, th);
            let sigma = ((kp + kr) / 2.0).powi(2);
            num += w * sigma;
            den += w;
        }
        let reference = num / den;
        let h = averaged_speed(&RadialProfile::ellipsoid(2, 16384, a, b).unwrap(), &p).unwrap();
        assert!((h - reference).abs() < 1e-8, "{h} vs {reference}");
    }

    #[test]
    fn sphere_radii() {
        let r = radii(&RadialProfile::sphere(3, 64, 1.3).unwrap());
        assert!((r.inradius - 1.3).abs() < 1e-9);
        assert!((r.outer_radius - 1.3).abs() < 1e-9);
    }

    #[test]
    fn ellipsoid_radii_against_centre_grid() {
        let prof = RadialProfile::ellipsoid(2, 256, 1.2, 1.0).unwrap();
        let rad = radii(&prof);
        let pts = prof.meridian_points();
        let mut best_in = 0.0_f64;
        let mut best_out = f64::INFINITY;
        for i in 0..=240_000 {
            let c = -1.2 + 2.4 * i as f64 / 240_000.0;
            let d: Vec<f64> = pts.iter().map(|(x, y)| ((x - c).powi(2) + y * y).sqrt()).collect();
            best_in = best_in.max(d.iter().copied().fold(f64::INFINITY, f64::min));
            best_out = best_out.min(d.iter().copied().fold(0.0, f64::max));
        }
        // the search must do at least as well as the grid, and not much better
        assert!(rad.inradius >= best_in - 1e-12 && rad.inradius - best_in < 1e-7, "{rad:?} {best_in}");
        assert!(rad.outer_radius <= best_out + 1e-10 && best_out - rad.outer_radius < 1e-7);
        // node-based distances overestimate the continuous inradius b = 1 by O(dtheta^2)
        assert!((rad.inradius - 1.0).abs() < 1e-5, "{}", rad.inradius);
        assert!((rad.outer_radius - 1.2).abs() < 1e-9);
        let mean_radius = equal_volume_radius(2, volume(&prof));
        assert!(rad.inradius <= mean_radius && mean_radius <= rad.outer_radius);
    }

    #[test]
    fn alexandrov_fenchel_on_sphere_and_ellipsoid() {
        let sphere = RadialProfile::sphere(2, 256, 1.0).unwrap();
        let res = alexandrov_fenchel_residual(&sphere);
        assert!(res.abs() < 1e-6 * alexandrov_fenchel_constant(2), "{res}");
        let ell = RadialProfile::ellipsoid(2, 256, 1.5, 1.0).unwrap();
        assert!(alexandrov_fenchel_residual(&ell) > 0.0);
    }

    #[test]
    fn fourth_order_stencil_converges() {
        let err = |cells: usize| {
            let g = Grid::new(cells).unwrap();
            let f: Vec<f64> = (0..=cells).map(|j| (2.0 * g.theta(j)).cos()).collect();
            (0..=cells)
                .map(|j| {
                    let (d1, d2) = g.derivatives_fourth_order(&f, j);
                    let th = 2.0 * g.theta(j);
                    (d1 + 2.0 * th.sin()).abs().max((d2 + 4.0 * th.cos()).abs())
                })
                .fold(0.0, f64::max)
        };
        let ratio = err(32) / err(64);
        assert!(ratio > 14.0, "{ratio}");
    }

    #[test]
    fn split_derivatives_add_low_part() {
        let g = Grid::new(8).unwrap();
        let hi = vec![1.0; 9];
        let lo: Vec<f64> = (0..9).map(|j| 1e-18 * (j * j) as f64).collect();
        let (d1, d2) = g.derivatives_split(&hi, Some(&lo), 3);
        let h = g.dtheta();
        assert!((d1 - 12e-18 / (2.0 * h)).abs() < 1e-30);
        assert!((d2 - 2e-18 / (h * h)).abs() < 1e-30);
    }

    #[test]
    fn pinching_ratio_examples() {
        let p = params(2, 1, 2.0);
        let sphere = curvatures(&RadialProfile::sphere(2, 64, 1.0).unwrap(), &p).unwrap();
        assert!(pinching_ratio_check(&sphere, 1.0).holds);
        assert!(!pinching_ratio_check(&sphere, 0.99).holds);

        let ell = curvatures(&RadialProfile::ellipsoid(2, 512, 2.0, 1.0).unwrap(), &p).unwrap();
        let check = pinching_ratio_check(&ell, 10.0);
        // closed form: at the equator k_rot / k_profile = (1/b) / (b/a^2) = a^2/b^2
        assert!((check.max_ratio - 4.0).abs() < 1e-3, "{}", check.max_ratio);
        assert!(check.holds);
        assert!(!pinching_ratio_check(&ell, 0.5).holds);
    }

    #[test]
    fn field_reflection_symmetry_is_bit_exact() {
        let p = params(3, 2, 1.5);
        let prof = RadialProfile::ellipsoid(3, 128, 1.3, 1.0).unwrap();
        let f = curvatures(&prof, &p).unwrap();
        for j in 0..=128 {
            assert_eq!(f.k_profile[j], f.k_profile[128 - j]);
            assert_eq!(f.k_rot[j], f.k_rot[128 - j]);
            assert_eq!(f.sigma[j], f.sigma[128 - j]);
        }
    }

    #[test]
    fn discrete_am_gm() {
        let p = params(3, 3, 0.5);
        let f = curvatures(&RadialProfile::ellipsoid(3, 128, 1.4, 0.9).unwrap(), &p).unwrap();
        assert!(f.q.iter().all(|&q| q <= 1.0 / 27.0 + 1e-10));
        assert!(f.q_defect.iter().all(|&d| d >= -1e-15));
    }

    #[test]
    fn axial_kernel_matches_generic_symfun() {
        use crate::symfun::{elem_sym_normalized, sigma_grad};
        for (n, m, beta) in [(2, 1, 2.0), (2, 2, 1.0), (3, 2, 1.5), (4, 1, 3.0), (4, 4, 0.5), (5, 3, 1.0)] {
            let p = params(n, m, beta);
            let kernel = AxialKernel::new(&p);
            let (kp, kr) = (0.7, 1.3);
            let mut k = vec![kr; n];
            k[0] = kp;
            let kv = CurvatureVector::new(k).unwrap();
            let hm = elem_sym_normalized(&kv, m).unwrap();
            assert!((kernel.hm(kp, kr) - hm).abs() < 1e-14 * hm);
            let g = sigma_grad(&kv, &p).unwrap();
            let (gp, gr) = kernel.sigma_grad(kp, kr);
            assert!((gp - g[0]).abs() < 1e-13 * g[0].abs().max(1.0));
            assert!((gr - g[1]).abs() < 1e-13 * g[1].abs().max(1.0));
        }
    }

    #[test]
    fn rejects_invalid_profiles() {
        assert!(matches!(
            RadialProfile::new(2, vec![1.0, 1.0, -0.1, 1.0, 1.0]),
            Err(Error::StarShapeLost { node: 2, .. })
        ));
        assert!(RadialProfile::new(2, vec![1.0; 4]).is_err());
        assert!(RadialProfile::new(1, vec![1.0; 5]).is_err());
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let prof = RadialProfile::ellipsoid(2, 16, 1.1, 1.0).unwrap();
        let mut buf = Vec::new();
        prof.write_snapshot(0.125, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("2 16 "));
        let (back, t) = RadialProfile::read_snapshot(&buf[..]).unwrap();
        assert_eq!(t, 0.125);
        assert_eq!(back, prof);
    }

    #[test]
    fn snapshot_rejects_malformed_input() {
        assert!(RadialProfile::read_snapshot(&b"2 4\n"[..]).is_err());
        assert!(RadialProfile::read_snapshot(&b"2 4 0.0\n0.0 1.0\n"[..]).is_err());
        let off_grid = b"2 4 0\n0 1\n0.5 1\n1.5707963267948966 1\n2.356194490192345 1\n3.141592653589793 1\n";
        assert!(RadialProfile::read_snapshot(&off_grid[..]).is_err());
    }
}
