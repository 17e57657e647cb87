//! Deterministic search over the simplex slice `{ sum k_i = 1, k_i >= lower }`.
//!
//! Candidates come from a regular simplex lattice (which contains every vertex
//! and edge of the slice) plus a randomly shifted Halton sequence pushed onto
//! the simplex. The best candidates are then polished by a compass search whose
//! moves transfer mass between pairs of coordinates, so every trial point stays
//! on the slice.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::symfun::binomial;

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SliceSearch {
    pub lattice_budget: usize,
    pub halton_points: usize,
    pub polish_starts: usize,
    pub seed: u64,
}

/// Largest lattice resolution whose point count stays within `budget`.
fn lattice_resolution(n: usize, budget: usize) -> usize {
    let mut g = 1;
    while binomial((g + n) as i64, (n - 1) as i64) <= budget as f64 {
        g += 1;
    }
    g
}

/// All weight vectors `parts / g` with nonnegative integer parts summing to `g`.
fn simplex_lattice(n: usize, g: usize) -> Vec<Vec<f64>> {
    fn rec(n: usize, left: usize, g: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == n - 1 {
            cur.push(left);
            out.push(cur.iter().map(|&c| c as f64 / g as f64).collect());
            cur.pop();
            return;
        }
        for c in 0..=left {
            cur.push(c);
            rec(n, left - c, g, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, g, g, &mut Vec::with_capacity(n), &mut out);
    out
}

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as f64;
    let mut inv = 1.0 / b;
    let mut acc = 0.0;
    while i > 0 {
        acc += (i % base as u64) as f64 * inv;
        i /= base as u64;
        inv /= b;
    }
    acc
}

/// Shifted Halton points mapped onto the simplex through `-ln u` weights.
fn halton_simplex(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    (1..=count as u64)
        .map(|i| {
            let w: Vec<f64> = (0..n)
                .map(|d| {
                    let u = (radical_inverse(i, PRIMES[d % PRIMES.len()]) + shift[d]).fract();
                    -(1.0 - u).max(1e-300).ln()
                })
                .collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
        .collect()
}

/// Map simplex weights onto the slice with the given lower bound.
fn to_slice(w: &[f64], lower: f64) -> Vec<f64> {
    let span = 1.0 - w.len() as f64 * lower;
    w.iter().map(|x| lower + span * x).collect()
}

/// Candidate points on the slice `{ sum k = 1, k_i >= lower }`.
pub(crate) fn candidates(n: usize, lower: f64, search: &SliceSearch) -> Vec<Vec<f64>> {
    let g = lattice_resolution(n, search.lattice_budget);
    simplex_lattice(n, g)
        .into_iter()
        .chain(halton_simplex(n, search.halton_points, search.seed))
        .map(|w| to_slice(&w, lower))
        .collect()
}

/// Compass search for a local minimum of `f` on the slice.
pub(crate) fn compass_minimize<F>(f: &F, start: Vec<f64>, lower: f64) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let n = start.len();
    let span = 1.0 - n as f64 * lower;
    let mut x = start;
    let mut fx = f(&x);
    let mut step = 0.05 * span;
    let min_step = 1e-13 * span.max(1e-300);
    let mut evals = 0usize;
    while step > min_step && evals < 200_000 {
        let mut improved = false;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let s = step.min(x[j] - lower);
                if s <= 0.0 {
                    continue;
                }
                let mut y = x.clone();
                y[i] += s;
                y[j] -= s;
                if s == x[j] - lower {
                    y[j] = lower;
                }
                let fy = f(&y);
                evals += 1;
                if fy < fx {
                    x = y;
                    fx = fy;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, fx)
}

/// Global minimum estimate of `f` on the slice: candidates, then polishing of
/// the best few.
pub(crate) fn minimize_on_slice<F>(n: usize, lower: f64, search: &SliceSearch, f: F) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let mut scored: Vec<(f64, Vec<f64>)> = candidates(n, lower, search)
        .into_iter()
        .map(|k| (f(&k), k))
        .filter(|(v, _)| !v.is_nan())
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = scored[0].clone();
    for (_, start) in scored.into_iter().take(search.polish_starts.max(1)) {
        let (x, fx) = compass_minimize(&f, start, lower);
        if fx < best.0 {
            best = (fx, x);
        }
    }
    (best.1, best.0)
}

/// A seeded stream of uniform draws, shared by the randomized checks.
pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[allow(dead_code)]
pub(crate) fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn search() -> SliceSearch {
        SliceSearch {
            lattice_budget: 500,
            halton_points: 500,
            polish_starts: 4,
            seed: 7,
        }
    }

    #[test]
    fn lattice_counts_and_vertices() {
        let pts = simplex_lattice(3, 4);
        assert_eq!(pts.len(), binomial(6, 2) as usize);
        assert!(pts.iter().any(|p| p == &vec![1.0, 0.0, 0.0]));
        assert!(pts.iter().all(|p| (p.iter().sum::<f64>() - 1.0).abs() < 1e-15));
    }

    #[test]
    fn candidates_stay_on_slice() {
        for k in candidates(4, 0.1, &search()) {
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(k.iter().all(|&x| x >= 0.1 - 1e-15));
        }
    }

    #[test]
    fn halton_is_deterministic() {
        assert_eq!(halton_simplex(3, 10, 5), halton_simplex(3, 10, 5));
        assert_ne!(halton_simplex(3, 10, 5), halton_simplex(3, 10, 6));
    }

    #[test]
    fn polish_finds_interior_minimum() {
        // minimum of sum (k_i - c_i)^2 on the plane is at c when c lies on it
        let c = [0.2, 0.3, 0.5];
        let f = |k: &[f64]| k.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let (x, fx) = minimize_on_slice(3, 0.05, &search(), f);
        assert!(fx < 1e-20);
        assert!(x.iter().zip(&c).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn polish_finds_boundary_minimum() {
        let f = |k: &[f64]| k[0];
        let (x, fx) = minimize_on_slice(3, 0.1, &search(), f);
        assert_eq!(fx, 0.1);
        assert_eq!(x[0], 0.1);
    }
}
