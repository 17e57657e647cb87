//! Property tests across module boundaries.

use hmflow::geometry::{curvatures, volume, RadialProfile};
use hmflow::symfun::{
    check_maclaurin, elem_sym_normalized, sigma, sigma_grad, CurvatureVector, FlowParams,
};
use proptest::prelude::*;

fn params() -> impl Strategy<Value = FlowParams> {
    (2usize..=5)
        .prop_flat_map(|n| (Just(n), 1..=n))
        .prop_flat_map(|(n, m)| {
            let lo = 1.0 / m as f64 + 0.05;
            (Just(n), Just(m), lo..3.0)
        })
        .prop_map(|(n, m, beta)| FlowParams::new(n, m, beta).unwrap())
}

fn curvature(n: usize) -> impl Strategy<Value = CurvatureVector> {
    prop::collection::vec(0.05f64..5.0, n).prop_map(|v| CurvatureVector::new(v).unwrap())
}

fn case() -> impl Strategy<Value = (FlowParams, CurvatureVector)> {
    params().prop_flat_map(|p| (Just(p), curvature(p.n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn speed_and_gradient_are_positive((p, k) in case()) {
        prop_assert!(sigma(&k, &p).unwrap() > 0.0);
        prop_assert!(sigma_grad(&k, &p).unwrap().iter().all(|&g| g > 0.0));
    }

    #[test]
    fn euler_identity_for_homogeneous_speed((p, k) in case()) {
        let s = sigma(&k, &p).unwrap();
        let g = sigma_grad(&k, &p).unwrap();
        let lhs: f64 = g.iter().zip(k.as_slice()).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - p.degree() * s).abs() <= 1e-10 * s.max(1.0));
    }

    #[test]
    fn speed_is_homogeneous((p, k) in case(), lambda in 0.2f64..5.0) {
        let s = sigma(&k, &p).unwrap();
        let scaled = sigma(&k.scaled(lambda), &p).unwrap();
        let expected = lambda.powf(p.degree()) * s;
        prop_assert!((scaled - expected).abs() <= 1e-12 * expected.max(1.0));
    }

    #[test]
    fn gradient_matches_central_differences((p, k) in case()) {
        let g = sigma_grad(&k, &p).unwrap();
        for i in 0..p.n {
            let h = 1e-6 * k.as_slice()[i];
            let mut up = k.clone().into_inner();
            let mut dn = up.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (sigma(&CurvatureVector::new(up).unwrap(), &p).unwrap()
                - sigma(&CurvatureVector::new(dn).unwrap(), &p).unwrap())
                / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1e-3), "i={} fd={} g={}", i, fd, g[i]);
        }
    }

    #[test]
    fn mean_root_is_concave_on_chords((p, a) in case(), t in 0.0f64..1.0, seed in curvature(5)) {
        let b = CurvatureVector::new(seed.as_slice()[..p.n].to_vec()).unwrap();
        let root = |v: &CurvatureVector| elem_sym_normalized(v, p.m).unwrap().powf(1.0 / p.m as f64);
        let mix = CurvatureVector::new(
            a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (1.0 - t) * x + t * y).collect(),
        ).unwrap();
        let chord = (1.0 - t) * root(&a) + t * root(&b);
        prop_assert!(root(&mix) >= chord - 1e-10 * chord.max(1.0));
    }

    #[test]
    fn maclaurin_chain_holds((p, k) in case()) {
        prop_assert!(check_maclaurin(&k, p.m).unwrap().holds);
    }

    #[test]
    fn snapshot_round_trips(
        a in 0.6f64..1.6,
        b in 0.6f64..1.6,
        t in 0.0f64..100.0,
        half in 4usize..64,
        n in 2usize..=4,
    ) {
        let prof = RadialProfile::ellipsoid(n, 2 * half, a, b).unwrap();
        let mut buf = Vec::new();
        prof.write_snapshot(t, &mut buf).unwrap();
        let (back, t_back) = RadialProfile::read_snapshot(&buf[..]).unwrap();
        prop_assert_eq!(t_back, t);
        prop_assert_eq!(back.radii(), prof.radii());
        prop_assert_eq!(back.dim(), n);
    }

    #[test]
    fn reflection_symmetric_profiles_have_symmetric_fields(
        coeffs in prop::collection::vec(-0.02f64..0.02, 3),
        half in 8usize..48,
    ) {
        let cells = 2 * half;
        // mirror the upper half so r(pi - theta) = r(theta) holds exactly
        let shape = |th: f64| {
            let c = th.cos();
            1.0 + coeffs[0] * c * c + coeffs[1] * c.powi(4) + coeffs[2] * (2.0 * th).sin().powi(2)
        };
        let dth = std::f64::consts::PI / cells as f64;
        let upper: Vec<f64> = (0..=half).map(|j| shape(j as f64 * dth)).collect();
        let r: Vec<f64> = (0..=cells).map(|j| upper[j.min(cells - j)]).collect();
        let prof = RadialProfile::new(2, r).unwrap();
        let p = FlowParams::new(2, 1, 2.0).unwrap();
        let f = curvatures(&prof, &p).unwrap();
        for j in 0..=cells {
            prop_assert_eq!(f.sigma[j], f.sigma[cells - j]);
            prop_assert_eq!(f.q[j], f.q[cells - j]);
        }
        prop_assert!(volume(&prof) > 0.0);
    }
}
