use proptest::prelude::*;
use ssk_lab::model::{ModelParams, SpectralSample};
use ssk_lab::regimes::{micro_contour_eta, parisi_weights, random_saddle};
use ssk_lab::saddle::{solve_c_beta, GFunction, GKind};
use ssk_lab::semicircle;
use ssk_lab::special::{bessel_half, bessel_i_series, ks_distance, sorted, HalfOrder, ReferenceDistribution};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn stieltjes_transform_solves_its_quadratic(z in 2.0001f64..50.0) {
        let m = semicircle::m(z).unwrap();
        prop_assert!(m < 0.0 && m > -1.0);
        prop_assert!((m * m + z * m + 1.0).abs() < 1e-12);
        let h = 1e-5 * z;
        let fd = (semicircle::m(z + h).unwrap() - semicircle::m(z - h).unwrap()) / (2.0 * h);
        prop_assert!((semicircle::m_prime(z).unwrap() - fd).abs() < 1e-6 * (1.0 + fd.abs()));
    }

    #[test]
    fn c_beta_solves_its_quadratic(beta in 1.001f64..20.0, t in 0.0f64..50.0) {
        let (c, b) = solve_c_beta(beta, t).unwrap();
        let bm = beta - 1.0;
        prop_assert!((bm * c * c - c - t).abs() < 1e-9 * (1.0 + t + c));
        prop_assert!(b >= -1e-12);
        prop_assert!((b - (c * bm - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn eta_decreases_in_e(e1 in -0.999f64..-0.001, e2 in -0.999f64..-0.001, b in 0.0f64..10.0) {
        prop_assume!((e1 - e2).abs() > 1e-6);
        let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
        prop_assert!(micro_contour_eta(lo, b).unwrap() > micro_contour_eta(hi, b).unwrap());
    }

    #[test]
    fn bessel_ladder_recurrence(x in 1e-3f64..200.0) {
        use HalfOrder::*;
        let i = |o| bessel_half(o, x).unwrap();
        for (lo, mid, hi) in [(MinusHalf, Half, ThreeHalves), (Half, ThreeHalves, FiveHalves), (ThreeHalves, FiveHalves, SevenHalves)] {
            let nu = mid.nu();
            let lhs = i(lo) - i(hi);
            let rhs = 2.0 * nu / x * i(mid);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (i(lo).abs() + rhs.abs()));
        }
        prop_assert!((i(Half) / i(MinusHalf) - x.tanh()).abs() < 1e-13);
    }

    #[test]
    fn bessel_matches_power_series(x in 1e-3f64..30.0) {
        for o in [HalfOrder::MinusHalf, HalfOrder::Half, HalfOrder::ThreeHalves] {
            let a = bessel_half(o, x).unwrap();
            let b = bessel_i_series(o.nu(), x);
            prop_assert!((a - b).abs() <= 1e-11 * a.abs(), "{:?} x={} {} {}", o, x, a, b);
        }
    }

    #[test]
    fn random_saddle_is_a_critical_point_right_of_the_spectrum(
        lambdas in prop::collection::vec(-2.5f64..2.5, 3..40),
        beta in 0.2f64..4.0,
        h in 0.0f64..1.5,
    ) {
        let n = lambdas.len();
        let v: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64) * 1.3).sin()).collect();
        let s = SpectralSample::from_parts(lambdas, v, 0).unwrap();
        let p = ModelParams::new(n, beta, h).unwrap();
        let gamma = random_saddle(&s, &p).unwrap();
        prop_assert!(gamma > s.lambda1());
        let g = GFunction::new(GKind::Random, p.beta, p.theta, Some(&s)).unwrap();
        let d = g.derivs(gamma).unwrap();
        prop_assert!(d[1].abs() < 1e-8 * (1.0 + beta), "G'(γ) = {}", d[1]);
        prop_assert!(d[2] > 0.0);
    }

    #[test]
    fn parisi_weights_form_a_distribution(v in 0.0f64..20.0, theta in 0.0f64..5.0, beta in 1.01f64..5.0) {
        let (plus, minus) = parisi_weights(v, theta, beta);
        prop_assert!((plus + minus - 1.0).abs() < 1e-14);
        prop_assert!((0.5..=1.0).contains(&plus));
    }

    #[test]
    fn ks_distance_is_a_sup_norm(xs in prop::collection::vec(-5.0f64..5.0, 1..200)) {
        let xs = sorted(xs);
        let d = ks_distance(&xs, &ReferenceDistribution::StdNormal);
        prop_assert!(d >= 0.5 / xs.len() as f64 - 1e-15 && d <= 1.0);
    }

    #[test]
    fn semicircle_quantiles_are_ordered(n in 2usize..500) {
        let q: Vec<f64> = (1..=n).map(|i| semicircle::quantile(i, n).unwrap()).collect();
        prop_assert!(q.windows(2).all(|w| w[0] >= w[1]) || q.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(q.iter().all(|x| (-2.0..=2.0).contains(x)));
    }
}
