mod common;

use common::{random_model, Law};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spectral_distill::spectra::{
    companion_stieltjes_boundary, make_quadrature, mp_measure, mp_quantile_inverse, mp_stieltjes, mp_support,
    outlier_atom_mass, spiked_measure, spiked_stieltjes, zero_atom_mass,
};
use spectral_distill::{Error, SpikedModel};

fn iso(s2: f64, c: f64) -> SpikedModel {
    SpikedModel::new(s2, c, vec![], 1.0, 1.0).unwrap()
}

#[test]
fn rejects_invalid_models() {
    let bad = [
        SpikedModel::with_pairs(0.0, 1.0, &[], 1.0, 1.0),
        SpikedModel::with_pairs(1.0, -1.0, &[], 1.0, 1.0),
        SpikedModel::with_pairs(1.0, 1.0, &[(2.0, 0.0)], 1.0, 1.0),
        SpikedModel::with_pairs(1.0, 1.0, &[(2.0, 0.5), (2.0, 0.5)], 1.0, 1.0),
        SpikedModel::with_pairs(1.0, 1.0, &[(2.0, 0.8), (3.0, 0.8)], 1.0, 1.0),
        SpikedModel::with_pairs(1.0, 4.0, &[(1.0, 0.1), (4.0, 0.1)], 1.0, 1.0),
        SpikedModel::with_pairs(1.0, 4.0, &[(2.0, 0.1)], 1.0, 1.0),
        SpikedModel::with_pairs(1.0, 1.0, &[], 1.0, -0.5),
    ];
    for m in bad {
        assert!(matches!(m, Err(Error::InvalidModel(_))), "{m:?}");
    }
}

#[test]
fn model_params_round_trip_through_json() {
    let m = common::two_spike_model();
    let js = serde_json::to_string(&m).unwrap();
    let back: SpikedModel = serde_json::from_str(&js).unwrap();
    assert_eq!(m, back);
    let unknown = r#"{"sigma0_sq":1,"c":1,"r":1,"sigma_eps_sq":1,"extra":2}"#;
    assert!(serde_json::from_str::<SpikedModel>(unknown).is_err());
}

#[test]
fn mp_moments_match_closed_forms() {
    for &(s2, c) in &[(1.0, 0.3), (1.0, 1.0), (2.0, 1.0), (0.7, 2.5), (1.3, 1.05)] {
        let m = iso(s2, c);
        let rule = make_quadrature(&m, 2048).unwrap();
        let mp = mp_measure(&m);
        let mass = mp.total_mass(&rule);
        let mean = mp.integrate(&rule, |x| x);
        let second = mp.integrate(&rule, |x| x * x);
        assert!((mass - 1.0).abs() < 1e-12, "c={c}: mass {mass}");
        assert!((mean - s2).abs() < 1e-12, "c={c}: mean {mean}");
        assert!((second - s2 * s2 * (1.0 + c)).abs() < 1e-11, "c={c}: second {second}");
    }
}

/// Just off `c = 1` the lower edge is tiny but nonzero, which is where a plain
/// angle rule loses accuracy.
#[test]
fn mass_is_exact_near_unit_aspect_ratio() {
    for c in [1.0 - 1e-3, 1.0 + 1e-6, 1.0008408467086458, 1.0 + 1e-2] {
        for s2 in [0.2, 1.0] {
            let m = iso(s2, c);
            let rule = make_quadrature(&m, 2048).unwrap();
            let mp = mp_measure(&m);
            assert!((mp.total_mass(&rule) - 1.0).abs() < 1e-10, "c={c}");
            assert!((mp.integrate(&rule, |x| x) - s2).abs() < 1e-10, "c={c}");
            let delta = 0.05 * s2 * c.sqrt();
            let f = spiked_measure(&m, delta).unwrap();
            assert!((f.total_mass(&rule) - 1.0).abs() < 1e-10, "c={c}");
            assert!((f.integrate(&rule, |x| x) - (s2 + delta)).abs() < 1e-10, "c={c}");
            let split = f.integrate_split(|x| x, &[s2]);
            assert!((split - (s2 + delta)).abs() < 1e-10, "c={c}: {split}");
        }
    }
}

#[test]
fn atom_masses_follow_the_threshold() {
    let m = iso(1.0, 2.0);
    assert_eq!(outlier_atom_mass(&m, 1.0), 0.0);
    assert!(outlier_atom_mass(&m, 2.0) > 0.0);
    assert!((zero_atom_mass(&m, 3.0) - 0.2).abs() < 1e-15);
    assert_eq!(zero_atom_mass(&iso(1.0, 0.5), 3.0), 0.0);
    assert!((outlier_atom_mass(&iso(1.0, 1.0), 2.0) - 1.0 / 2.0).abs() < 1e-15);
    let below = spiked_measure(&iso(1.0, 0.5), 0.3).unwrap();
    assert!(below.atoms.is_empty());
}

#[test]
fn spiked_measures_agree_with_direct_integration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let m = random_model(&mut rng, 1);
        let delta = m.spikes()[0].delta;
        let law = Law::of(&m, delta);
        let rule = make_quadrature(&m, 2048).unwrap();
        let meas = spiked_measure(&m, delta).unwrap();
        for (k, phi) in [|_: f64| 1.0, |x: f64| x, |x: f64| x * x, |x: f64| 1.0 / (x + 1.0)].iter().enumerate() {
            let lib = meas.integrate(&rule, phi);
            let oracle = law.integrate(phi);
            assert!((lib - oracle).abs() < 1e-9 * oracle.abs().max(1.0), "phi {k}: {lib} vs {oracle} for {m:?}");
        }
    }
}

#[test]
fn stieltjes_matches_frozen_reference_values() {
    let m = iso(1.0, 1.0);
    let cases = [
        (Complex64::new(-1.0, 0.0), Complex64::new(0.350_372_906_022_698_6, 0.0)),
        (Complex64::new(2.0, 1.0), Complex64::new(0.10933863424999783, 0.312_063_610_999_973_9)),
        (Complex64::new(5.0, -0.5), Complex64::new(-0.6619575983060669, -0.533_901_658_873_303_7)),
    ];
    for (z, want) in cases {
        let got = spiked_stieltjes(&m, 2.0, z).unwrap();
        assert!((got - want).norm() < 1e-13, "z={z}: {got} vs {want}");
    }
    let m0 = mp_stieltjes(&m, Complex64::new(-1.0, 0.0)).unwrap();
    assert!((m0.re - 0.618_033_988_749_894_8).abs() < 1e-14);
}

#[test]
fn stieltjes_matches_direct_integration() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..6 {
        let m = random_model(&mut rng, 1);
        let delta = m.spikes()[0].delta;
        let law = Law::of(&m, delta);
        let (a, b) = mp_support(&m);
        for z in [
            Complex64::new(-0.7, 0.0),
            Complex64::new(0.5 * (a + b), 0.8),
            Complex64::new(b + 1.0, -1.5),
            Complex64::new(a, 2.0),
        ] {
            let got = spiked_stieltjes(&m, delta, z).unwrap();
            let re = law.integrate(|x| (1.0 / (Complex64::new(x, 0.0) - z)).re);
            let im = law.integrate(|x| (1.0 / (Complex64::new(x, 0.0) - z)).im);
            assert!((got - Complex64::new(re, im)).norm() < 1e-9, "z={z}: {got} vs {re}+{im}i");
        }
    }
}

#[test]
fn companion_boundary_modulus() {
    for &(s2, c) in &[(1.0, 0.5), (1.5, 1.0), (0.8, 3.0)] {
        let m = iso(s2, c);
        let (a, b) = mp_support(&m);
        for k in 1..20 {
            let x = a + (b - a) * k as f64 / 20.0;
            let mb = companion_stieltjes_boundary(&m, x).unwrap();
            assert!((mb.norm_sqr() - 1.0 / (s2 * x)).abs() < 1e-12 * (1.0 / (s2 * x)));
            assert!(mb.im > 0.0);
        }
    }
}

#[test]
fn quantile_inverse_matches_reference() {
    let q = mp_quantile_inverse(&iso(1.0, 1.0), 0.5).unwrap();
    assert!((q - 0.652_775_941_633_570_3).abs() < 1e-10, "{q}");
    assert_eq!(mp_quantile_inverse(&iso(1.0, 2.0), 0.0).unwrap(), mp_support(&iso(1.0, 2.0)).1);
    assert!(matches!(mp_quantile_inverse(&iso(1.0, 2.0), 0.5), Err(Error::Domain(_))));
}

#[test]
fn quantile_inverse_agrees_with_tail_integral() {
    for &(c, tau) in &[(0.5, 0.1), (0.5, 0.9), (2.0, 0.3), (1.0, 0.05), (0.999, 0.98), (1.001, 0.97)] {
        let m = iso(1.0, c);
        let q = mp_quantile_inverse(&m, tau).unwrap();
        let law = Law::of(&m, 0.0);
        let (_, b) = law.edges();
        let tail = common::tanh_sinh(q, b, |x, _, tb| {
            let (a, _) = law.edges();
            law.density(x, x - a, tb)
        });
        assert!((tail - tau).abs() < 1e-9, "c={c} tau={tau}: tail {tail}");
    }
}
