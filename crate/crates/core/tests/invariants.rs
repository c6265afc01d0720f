use num_complex::Complex64;
use proptest::prelude::*;

use spectral_forge_core::almost_integer::Perturbed;
use spectral_forge_core::blocks;
use spectral_forge_core::norms::{ap_norm_torus, completeness_residual, LandauSet, PeriodicSeries, Tail};
use spectral_forge_core::sparse::{lemma_sparse_blocks, sigma, SparseBudget, Weight};
use spectral_forge_core::trigpoly::{Frequency, TrigPoly};

fn series_strategy() -> impl Strategy<Value = PeriodicSeries> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..8)
        .prop_filter("odd length", |v| v.len() % 2 == 1)
        .prop_map(|v| PeriodicSeries::new(v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect(), Tail::EXACT))
}

fn perturbed_strategy() -> impl Strategy<Value = TrigPoly> {
    prop::collection::btree_map(-20i64..20, (-0.4f64..0.4, -1.0f64..1.0), 1..8).prop_map(|m| {
        TrigPoly::from_terms(m.into_iter().map(|(n, (a, c))| (Frequency::Real(n as f64 + a), Complex64::new(c, 0.5 * c))))
            .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn torus_norms_decrease_in_the_exponent(f in series_strategy(), p in 1.0f64..3.0, dq in 0.0f64..2.0) {
        let a = ap_norm_torus(&f, p).unwrap().value;
        let b = ap_norm_torus(&f, p + dq).unwrap().value;
        prop_assert!(b <= a * (1.0 + 1e-12));
    }

    #[test]
    fn product_with_wiener_factor_is_bounded(f in series_strategy(), g in series_strategy(), p in 1.0f64..4.0) {
        let fg = f.mul(&g);
        let lhs = ap_norm_torus(&fg, p).unwrap().value;
        let rhs = ap_norm_torus(&f, p).unwrap().value * ap_norm_torus(&g, 1.0).unwrap().value;
        prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-14);
    }

    #[test]
    fn exact_difference_storage_agrees_with_trig_polynomials(poly in perturbed_strategy(), k in 0u32..5, t in -2.0f64..2.0) {
        let exact = Perturbed::from_trigpoly(&poly).diff(k).eval(t);
        let spectral = poly.diff_op(k).eval(t);
        prop_assert!((exact - spectral).norm() <= 1e-10 * (1.0 + spectral.norm()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn completeness_residual_is_invariant_under_integer_translation(
        freqs in prop::collection::vec(-6.0f64..6.0, 2..6),
        shift in -4i64..4,
        centre in -0.3f64..0.3,
    ) {
        let mut fs = freqs.clone();
        fs.sort_by(f64::total_cmp);
        prop_assume!(fs.windows(2).all(|w| w[1] - w[0] > 0.2));
        let om = LandauSet::new(1, 0.6).unwrap();
        let g = |t: f64| Complex64::new((-(t - centre).powi(2) * 4.0).exp(), 0.0);
        let moved: Vec<f64> = fs.iter().map(|f| f + shift as f64).collect();
        let r0 = completeness_residual(&fs, &om, g).unwrap().residual;
        let r1 = completeness_residual(&moved, &om, |t| g(t) * Frequency::Integer(shift).cis(t)).unwrap().residual;
        prop_assert!((r0 - r1).abs() <= 1e-10);
    }
}

#[test]
fn fejer_kernels_are_nonnegative() {
    for n in 0..=64 {
        let k = blocks::fejer(n);
        let min = k.eval_grid(4096).iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        assert!(min >= -1e-12, "N = {n}: {min}");
    }
}

#[test]
fn block_product_has_unit_mass_and_nonnegative_coefficients() {
    let u = Weight::from_line(blocks::sigma_bump(1, 0.4, 0.6).unwrap());
    let h = TrigPoly::from_terms((1..=2).map(|n| (Frequency::Real(sigma(n)), Complex64::new(0.4, 0.0)))).unwrap();
    let budget = SparseBudget::default();
    let blk = lemma_sparse_blocks(&u, &h, 3.0, 0.5, &budget).unwrap();
    let build = blk.build(20.0, &budget).unwrap();
    assert!((build.gamma_product.constant() - 1.0).norm() <= 1e-12);
    let coeffs = build.gamma_product.expand(1_000_000).expect("small product");
    assert!(coeffs.values().all(|c| c.re >= -1e-15 && c.im.abs() <= 1e-15));
    let total: Complex64 = coeffs.values().sum();
    assert!((total - build.gamma_product.eval(0.0)).norm() <= 1e-9);
    let lambdas: Vec<f64> = build.lambdas.iter().map(|l| l.0).collect();
    assert!(lambdas[0] > 20.0);
    assert!(lambdas.windows(2).all(|w| w[1] > w[0]));
}
