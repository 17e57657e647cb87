//! Symmetric functions of the principal curvatures.
//!
//! Everything here is a pure function of a curvature vector `k = (k_1, ..., k_n)`.
//! The m-th mean curvature is always the *normalized* elementary symmetric
//! polynomial `H_m = e_m(k) / C(n, m)`, so that `H_1 = H / n`, `H_n = K` and
//! `H_m = 1` on the unit sphere. The speed is `sigma = H_m^beta`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Principal curvatures at one point of a hypersurface.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureVector(Vec<f64>);

impl CurvatureVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::domain(format!(
                "curvature vector needs n >= 2 entries, got {}",
                entries.len()
            )));
        }
        if entries.iter().any(|k| !k.is_finite()) {
            return Err(Error::domain("curvature vector has non-finite entries"));
        }
        Ok(Self(entries))
    }

    /// All curvatures equal to `k`: an umbilic point.
    pub fn umbilic(n: usize, k: f64) -> Result<Self> {
        Self::new(vec![k; n])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// `H = k_1 + ... + k_n`
    pub fn mean_curvature(&self) -> f64 {
        self.0.iter().sum()
    }

    /// `K = k_1 * ... * k_n`
    pub fn gauss_curvature(&self) -> f64 {
        self.0.iter().product()
    }

    /// `|A|^2 = sum k_i^2`
    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|k| k * k).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        Self(self.0.iter().map(|k| k * lambda).collect())
    }

    pub fn in_positive_cone(&self) -> bool {
        self.0.iter().all(|&k| k > 0.0)
    }

    /// The pinching quotient `q = K / H^n`.
    pub fn pinching_quotient(&self) -> f64 {
        self.gauss_curvature() / self.mean_curvature().powi(self.dim() as i32)
    }

    /// `1/n^n - K/H^n`, evaluated without cancellation near umbilic points.
    ///
    /// With `u_i = n k_i / H - 1` (so `sum u_i = 0`) the defect equals
    /// `-n^{-n} * sum_{j >= 2} e_j(u)`.
    pub fn q_defect(&self) -> f64 {
        let n = self.dim();
        let h = self.mean_curvature();
        let u: Vec<f64> = self.0.iter().map(|k| n as f64 * k / h - 1.0).collect();
        let e = elementary_symmetric(&u, n);
        let tail: f64 = e[2..].iter().sum();
        -tail / (n as f64).powi(n as i32)
    }

    /// `(n|A|^2 - H^2) / H^2`, using `n|A|^2 - H^2 = sum_{i<j} (k_i - k_j)^2`.
    pub fn isotropy_defect(&self) -> f64 {
        let k = &self.0;
        let mut acc = 0.0;
        for i in 0..k.len() {
            for j in (i + 1)..k.len() {
                let d = k[i] - k[j];
                acc += d * d;
            }
        }
        let h = self.mean_curvature();
        acc / (h * h)
    }
}

/// Parameters of the speed `sigma = H_m^beta` in dimension `n`.
///
/// Construction accepts the closed range `m * beta >= 1` so that the linear
/// speed `H / n` (m = 1, beta = 1) can be evaluated; the flow regime proper is
/// `m * beta > 1`, see [`FlowParams::is_superlinear`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    pub n: usize,
    pub m: usize,
    pub beta: f64,
}

impl FlowParams {
    pub fn new(n: usize, m: usize, beta: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::domain(format!("dimension n must be >= 2, got {n}")));
        }
        if m < 1 || m > n {
            return Err(Error::domain(format!("m must lie in 1..={n}, got {m}")));
        }
        if !beta.is_finite() || m as f64 * beta < 1.0 - 1e-12 {
            return Err(Error::domain(format!(
                "beta must satisfy beta >= 1/m, got beta = {beta} with m = {m}"
            )));
        }
        Ok(Self { n, m, beta })
    }

    /// Degree of homogeneity `m * beta` of the speed.
    pub fn degree(&self) -> f64 {
        self.m as f64 * self.beta
    }

    /// Exponent `d = m * beta + 1` of the contracting-sphere solution.
    pub fn sphere_exponent(&self) -> f64 {
        self.degree() + 1.0
    }

    /// `beta > 1/m`, the regime in which the pinching theory applies.
    pub fn is_superlinear(&self) -> bool {
        self.degree() > 1.0 + 1e-12
    }
}

/// Binomial coefficient as a float; zero outside `0 <= k <= n`.
pub fn binomial(n: i64, k: i64) -> f64 {
    if k < 0 || n < 0 || k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// Raw elementary symmetric polynomials `e_0, ..., e_m` of `k`.
pub(crate) fn elementary_symmetric(k: &[f64], m: usize) -> Vec<f64> {
    let mut e = vec![0.0; m + 1];
    e[0] = 1.0;
    for (count, &x) in k.iter().enumerate() {
        for j in (1..=m.min(count + 1)).rev() {
            e[j] += x * e[j - 1];
        }
    }
    e
}

/// `e_m` of `k` with the entries at `skip` removed.
fn elementary_symmetric_without(k: &[f64], m: usize, skip: &[usize]) -> f64 {
    let mut e = vec![0.0; m + 1];
    e[0] = 1.0;
    let mut count = 0;
    for (i, &x) in k.iter().enumerate() {
        if skip.contains(&i) {
            continue;
        }
        for j in (1..=m.min(count + 1)).rev() {
            e[j] += x * e[j - 1];
        }
        count += 1;
    }
    e[m]
}

fn check_order(kappa: &CurvatureVector, m: usize) -> Result<()> {
    let n = kappa.dim();
    if m < 1 || m > n {
        return Err(Error::domain(format!("m must lie in 1..={n}, got {m}")));
    }
    Ok(())
}

fn check_params(kappa: &CurvatureVector, p: &FlowParams) -> Result<()> {
    if kappa.dim() != p.n {
        return Err(Error::domain(format!(
            "curvature vector has {} entries but n = {}",
            kappa.dim(),
            p.n
        )));
    }
    Ok(())
}

fn require_positive_cone(kappa: &CurvatureVector) -> Result<()> {
    if !kappa.in_positive_cone() {
        return Err(Error::domain(
            "curvature vector outside the positive cone (some k_i <= 0)",
        ));
    }
    Ok(())
}

/// Normalized m-th mean curvature `H_m = e_m(k) / C(n, m)`.
pub fn elem_sym_normalized(kappa: &CurvatureVector, m: usize) -> Result<f64> {
    check_order(kappa, m)?;
    let n = kappa.dim();
    let e = elementary_symmetric(kappa.as_slice(), m);
    Ok(e[m] / binomial(n as i64, m as i64))
}

/// Partial derivatives `dH_m / dk_i`.
pub fn elem_sym_grad(kappa: &CurvatureVector, m: usize) -> Result<Vec<f64>> {
    check_order(kappa, m)?;
    let n = kappa.dim();
    let c = binomial(n as i64, m as i64);
    Ok((0..n)
        .map(|i| elementary_symmetric_without(kappa.as_slice(), m - 1, &[i]) / c)
        .collect())
}

/// Second partials `d^2 H_m / dk_i dk_j` (zero on the diagonal).
fn elem_sym_hessian(kappa: &CurvatureVector, m: usize) -> DMatrix<f64> {
    let n = kappa.dim();
    let c = binomial(n as i64, m as i64);
    DMatrix::from_fn(n, n, |i, j| {
        if i == j || m < 2 {
            0.0
        } else {
            elementary_symmetric_without(kappa.as_slice(), m - 2, &[i, j]) / c
        }
    })
}

/// The speed `sigma = H_m^beta`, defined where `H_m > 0`.
pub fn sigma(kappa: &CurvatureVector, p: &FlowParams) -> Result<f64> {
    check_params(kappa, p)?;
    let hm = elem_sym_normalized(kappa, p.m)?;
    if hm <= 0.0 {
        return Err(Error::domain(format!(
            "speed undefined outside positive-H_m cone (H_m = {hm})"
        )));
    }
    Ok(hm.powf(p.beta))
}

/// Gradient `d sigma / dk_i = beta H_m^{beta-1} dH_m/dk_i`; requires `k` in the positive cone.
pub fn sigma_grad(kappa: &CurvatureVector, p: &FlowParams) -> Result<Vec<f64>> {
    check_params(kappa, p)?;
    require_positive_cone(kappa)?;
    let hm = elem_sym_normalized(kappa, p.m)?;
    let factor = p.beta * hm.powf(p.beta - 1.0);
    Ok(elem_sym_grad(kappa, p.m)?
        .into_iter()
        .map(|g| factor * g)
        .collect())
}

/// Hessian matrix `d^2 sigma / dk_i dk_j` in the eigenvalue variables.
pub fn sigma_hessian(kappa: &CurvatureVector, p: &FlowParams) -> Result<DMatrix<f64>> {
    check_params(kappa, p)?;
    require_positive_cone(kappa)?;
    let hm = elem_sym_normalized(kappa, p.m)?;
    let grad = elem_sym_grad(kappa, p.m)?;
    let hess = elem_sym_hessian(kappa, p.m);
    let b = p.beta;
    let outer = b * (b - 1.0) * hm.powf(b - 2.0);
    let inner = b * hm.powf(b - 1.0);
    let n = kappa.dim();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        outer * grad[i] * grad[j] + inner * hess[(i, j)]
    }))
}

/// Off-diagonal coefficients `(sigma^i - sigma^j) / (k_i - k_j)` of the matrix
/// Hessian, with the limit `sigma_ii - sigma_ij` at (near) coincident curvatures.
pub fn sigma_divided_differences(
    kappa: &CurvatureVector,
    p: &FlowParams,
) -> Result<DMatrix<f64>> {
    let grad = sigma_grad(kappa, p)?;
    let hess = sigma_hessian(kappa, p)?;
    let k = kappa.as_slice();
    let threshold = 1e-8 * kappa.norm();
    let n = kappa.dim();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else if (k[i] - k[j]).abs() < threshold {
            hess[(i, i)] - hess[(i, j)]
        } else {
            (grad[i] - grad[j]) / (k[i] - k[j])
        }
    }))
}

/// Second derivative of `sigma` viewed as a function of a symmetric matrix,
/// evaluated at `diag(k)` in the direction `B`:
///
/// `sum_{i,j} sigma_ij B_ii B_jj + sum_{i != j} (sigma^i - sigma^j)/(k_i - k_j) B_ij^2`.
pub fn sigma_hessian_form(
    kappa: &CurvatureVector,
    b: &DMatrix<f64>,
    p: &FlowParams,
) -> Result<f64> {
    let n = kappa.dim();
    if b.nrows() != n || b.ncols() != n {
        return Err(Error::domain(format!(
            "direction matrix must be {n}x{n}, got {}x{}",
            b.nrows(),
            b.ncols()
        )));
    }
    let scale = b.amax().max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in (i + 1)..n {
            if (b[(i, j)] - b[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::domain("direction matrix is not symmetric"));
            }
        }
    }
    let hess = sigma_hessian(kappa, p)?;
    let dd = sigma_divided_differences(kappa, p)?;
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += hess[(i, j)] * b[(i, i)] * b[(j, j)];
            if i != j {
                acc += dd[(i, j)] * b[(i, j)] * b[(i, j)];
            }
        }
    }
    Ok(acc)
}

/// Largest `|sigma_hessian_form(k, B)|` over symmetric `B` of unit Frobenius norm.
///
/// In the orthonormal basis `{E_ii} ∪ {(E_ij + E_ji)/sqrt 2}` the form is block
/// diagonal: the eigenvalue Hessian on the diagonal block and the divided
/// differences on the off-diagonal directions.
pub fn sigma_hessian_operator_norm(kappa: &CurvatureVector, p: &FlowParams) -> Result<f64> {
    let hess = sigma_hessian(kappa, p)?;
    let dd = sigma_divided_differences(kappa, p)?;
    let eig = hess.symmetric_eigenvalues();
    let diag_block = eig.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    Ok(dd.iter().fold(diag_block, |acc, v| acc.max(v.abs())))
}

/// Outcome of an inequality predicate: whether it holds and by how much.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Check {
    pub holds: bool,
    /// Signed margin; nonnegative when the inequality holds exactly.
    pub slack: f64,
}

/// Maclaurin: `H_m^{1/m} <= H / n` on the positive cone.
pub fn check_maclaurin(kappa: &CurvatureVector, m: usize) -> Result<Check> {
    check_order(kappa, m)?;
    require_positive_cone(kappa)?;
    let n = kappa.dim() as f64;
    let mean = kappa.mean_curvature() / n;
    let hm = elem_sym_normalized(kappa, m)?;
    let slack = mean - hm.powf(1.0 / m as f64);
    Ok(Check {
        holds: slack >= -1e-12 * mean,
        slack,
    })
}

/// Whether all curvatures coincide to within `1e-10` relative: the equality
/// case of the Maclaurin inequality.
pub fn is_umbilic(kappa: &CurvatureVector) -> bool {
    let scale = kappa.max().abs().max(f64::MIN_POSITIVE);
    (kappa.max() - kappa.min()) <= 1e-10 * scale
}

/// Trace bound `tr(sigma_dot) >= m beta sigma^{1 - 1/(m beta)}`.
pub fn check_trace_bound(kappa: &CurvatureVector, p: &FlowParams) -> Result<Check> {
    let grad = sigma_grad(kappa, p)?;
    let trace: f64 = grad.iter().sum();
    let s = sigma(kappa, p)?;
    let d = p.degree();
    let slack = trace - d * s.powf(1.0 - 1.0 / d);
    Ok(Check {
        holds: slack >= -1e-12 * trace,
        slack,
    })
}

/// Membership in `K_eps = { min k_i >= eps H, H > 0 }`.
pub fn cone_membership(kappa: &CurvatureVector, eps: f64) -> Result<bool> {
    let n = kappa.dim() as f64;
    if !(eps > 0.0 && eps <= 1.0 / n * (1.0 + 1e-15)) {
        return Err(Error::domain(format!("eps must lie in (0, 1/n], got {eps}")));
    }
    let h = kappa.mean_curvature();
    if h <= 0.0 {
        return Ok(false);
    }
    let bound = eps * h;
    Ok(kappa.min() >= bound - 4.0 * f64::EPSILON * bound.abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(v: &[f64]) -> CurvatureVector {
        CurvatureVector::new(v.to_vec()).unwrap()
    }

    fn params(n: usize, m: usize, beta: f64) -> FlowParams {
        FlowParams::new(n, m, beta).unwrap()
    }

    /// Brute-force e_m by enumerating all m-subsets.
    fn subset_sum(k: &[f64], m: usize) -> f64 {
        let n = k.len();
        let mut total = 0.0;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize == m {
                total += (0..n)
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| k[i])
                    .product::<f64>();
            }
        }
        total
    }

    #[test]
    fn elem_sym_examples() {
        assert_eq!(elem_sym_normalized(&kv(&[1.0, 1.0, 1.0]), 2).unwrap(), 1.0);
        let v = elem_sym_normalized(&kv(&[1.0, 2.0, 3.0]), 2).unwrap();
        assert!((v - subset_sum(&[1.0, 2.0, 3.0], 2) / 3.0).abs() < 1e-15);
        assert!((v - 11.0 / 3.0).abs() < 1e-15);
        assert_eq!(elem_sym_normalized(&kv(&[2.0, 2.0]), 1).unwrap(), 2.0);
    }

    #[test]
    fn elem_sym_matches_subset_enumeration() {
        let k = [0.3, 1.7, 2.2, 0.9, 4.1];
        for m in 1..=5 {
            let got = elem_sym_normalized(&kv(&k), m).unwrap();
            let want = subset_sum(&k, m) / binomial(5, m as i64);
            assert!((got - want).abs() < 1e-13 * want.abs(), "m = {m}");
        }
    }

    #[test]
    fn elem_sym_rejects_bad_order() {
        assert!(elem_sym_normalized(&kv(&[1.0, 2.0]), 0).is_err());
        assert!(elem_sym_normalized(&kv(&[1.0, 2.0]), 3).is_err());
    }

    #[test]
    fn h1_and_hn_reduce_to_mean_and_gauss() {
        let k = kv(&[0.5, 1.5, 2.5, 3.0]);
        let h1 = elem_sym_normalized(&k, 1).unwrap();
        let hn = elem_sym_normalized(&k, 4).unwrap();
        assert!((h1 - k.mean_curvature() / 4.0).abs() < 1e-15);
        assert!((hn - k.gauss_curvature()).abs() < 1e-14);
    }

    #[test]
    fn sigma_examples() {
        assert_eq!(sigma(&kv(&[2.0, 2.0]), &params(2, 1, 2.0)).unwrap(), 4.0);
        let s = sigma(&kv(&[1.0, 2.0, 3.0]), &params(3, 2, 1.5)).unwrap();
        assert!((s - (11.0_f64 / 3.0).powf(1.5)).abs() < 1e-13);
        assert!((s - 7.021132).abs() < 1e-6);
        let p = params(2, 1, 2.0);
        let base = sigma(&kv(&[1.0, 1.0]), &p).unwrap();
        let scaled = sigma(&kv(&[2.0, 2.0]), &p).unwrap();
        assert!((scaled - 2f64.powf(p.degree()) * base).abs() < 1e-14);
    }

    #[test]
    fn sigma_rejects_nonpositive_hm() {
        let p = params(2, 2, 1.0);
        assert!(sigma(&kv(&[-1.0, 2.0]), &p).is_err());
        // boundary of the cone but H_m > 0 is fine for m = 1
        let p1 = params(2, 1, 2.0);
        assert!(sigma(&kv(&[0.0, 2.0]), &p1).is_ok());
        assert!(sigma_grad(&kv(&[0.0, 2.0]), &p1).is_err());
    }

    #[test]
    fn sigma_grad_examples() {
        let g = sigma_grad(&kv(&[2.0, 2.0]), &params(2, 1, 2.0)).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-15 && (g[1] - 2.0).abs() < 1e-15);

        let k = kv(&[1.0, 2.0, 3.0]);
        let p = params(3, 2, 1.5);
        let g = sigma_grad(&k, &p).unwrap();
        let euler: f64 = g.iter().zip(k.as_slice()).map(|(a, b)| a * b).sum();
        let s = sigma(&k, &p).unwrap();
        assert!((euler - 3.0 * s).abs() < 1e-12 * s);

        let g = sigma_grad(&CurvatureVector::umbilic(4, 1.0).unwrap(), &params(4, 3, 2.0)).unwrap();
        assert!(g.iter().all(|x| (x - g[0]).abs() < 1e-15));
    }

    #[test]
    fn hessian_form_examples() {
        let p = params(2, 2, 1.0);
        let k = kv(&[1.0, 2.0]);
        let zero = DMatrix::zeros(2, 2);
        assert_eq!(sigma_hessian_form(&k, &zero, &p).unwrap(), 0.0);
        let id = DMatrix::identity(2, 2);
        assert!((sigma_hessian_form(&k, &id, &p).unwrap() - 2.0).abs() < 1e-14);

        let lin = params(3, 1, 1.0);
        let b = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, -0.2, 0.3, -2.0, 0.5, -0.2, 0.5, 0.7]);
        let v = sigma_hessian_form(&kv(&[1.0, 2.0, 3.0]), &b, &lin).unwrap();
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn hessian_form_rejects_asymmetric_direction() {
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let r = sigma_hessian_form(&kv(&[1.0, 2.0]), &b, &params(2, 2, 1.0));
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn hessian_form_uses_limit_at_repeated_curvatures() {
        let p = params(3, 2, 1.5);
        let b = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let exact = sigma_hessian_form(&kv(&[1.0, 1.0, 2.0]), &b, &p).unwrap();
        let near = sigma_hessian_form(&kv(&[1.0, 1.0 + 1e-6, 2.0]), &b, &p).unwrap();
        assert!(exact.is_finite());
        assert!((exact - near).abs() < 1e-5 * exact.abs().max(1.0));
    }

    #[test]
    fn maclaurin_examples() {
        let c = check_maclaurin(&CurvatureVector::umbilic(3, 1.0).unwrap(), 2).unwrap();
        assert!(c.holds && c.slack.abs() < 1e-15);
        assert!(is_umbilic(&CurvatureVector::umbilic(3, 1.0).unwrap()));

        let c = check_maclaurin(&kv(&[1.0, 2.0, 3.0]), 2).unwrap();
        assert!(c.holds);
        assert!((c.slack - (2.0 - (11.0_f64 / 3.0).sqrt())).abs() < 1e-15);

        let c = check_maclaurin(&kv(&[1.0, 10.0]), 2).unwrap();
        assert!((c.slack - (5.5 - 10f64.sqrt())).abs() < 1e-14);
        assert!(!is_umbilic(&kv(&[1.0, 10.0])));
    }

    #[test]
    fn trace_bound_examples() {
        let p = params(2, 1, 2.0);
        let c = check_trace_bound(&kv(&[2.0, 2.0]), &p).unwrap();
        assert!(c.holds && c.slack.abs() < 1e-14);
        // m = 1 is an equality for every k
        let c = check_trace_bound(&kv(&[1.0, 3.0]), &p).unwrap();
        assert!(c.holds && c.slack.abs() < 1e-14);

        let p = params(3, 2, 1.5);
        let k = kv(&[0.5, 1.0, 3.0]);
        let c1 = check_trace_bound(&k, &p).unwrap();
        let c2 = check_trace_bound(&k.scaled(2.0), &p).unwrap();
        assert!(c1.slack > 0.0);
        let ratio = c2.slack / c1.slack;
        assert!((ratio - 2f64.powf(p.degree() - 1.0)).abs() < 1e-12 * ratio);
    }

    #[test]
    fn cone_membership_examples() {
        assert!(cone_membership(&CurvatureVector::umbilic(3, 1.0).unwrap(), 1.0 / 3.0).unwrap());
        assert!(cone_membership(&CurvatureVector::umbilic(5, 2.0).unwrap(), 0.2).unwrap());
        assert!(!cone_membership(&kv(&[1.0, 3.0]), 0.3).unwrap());
        assert!(cone_membership(&kv(&[1.0, 3.0]), 0.25).unwrap());
        assert!(cone_membership(&kv(&[1.0, 3.0]), 0.0).is_err());
        assert!(cone_membership(&kv(&[1.0, 3.0]), 0.6).is_err());
    }

    #[test]
    fn operator_norm_for_gauss_curvature_in_2d() {
        // sigma = k1 k2: Hessian eigenvalues +-1, divided difference -1
        let v = sigma_hessian_operator_norm(&kv(&[0.3, 0.9]), &params(2, 2, 1.0)).unwrap();
        assert!((v - 1.0).abs() < 1e-14);
    }

    #[test]
    fn stable_defects_match_naive_formulas() {
        let k = kv(&[0.7, 1.1, 1.9]);
        let n = 3.0_f64;
        let naive_q = 1.0 / n.powi(3) - k.pinching_quotient();
        assert!((k.q_defect() - naive_q).abs() < 1e-15);
        let h = k.mean_curvature();
        let naive_iso = (n * k.norm_sq() - h * h) / (h * h);
        assert!((k.isotropy_defect() - naive_iso).abs() < 1e-15);
    }

    #[test]
    fn flow_params_validation() {
        assert!(FlowParams::new(1, 1, 2.0).is_err());
        assert!(FlowParams::new(3, 4, 2.0).is_err());
        assert!(FlowParams::new(3, 2, 0.4).is_err());
        let lin = FlowParams::new(2, 1, 1.0).unwrap();
        assert!(!lin.is_superlinear());
        assert!(FlowParams::new(3, 3, 0.5).unwrap().is_superlinear());
        assert_eq!(FlowParams::new(2, 1, 2.0).unwrap().sphere_exponent(), 3.0);
    }
}
