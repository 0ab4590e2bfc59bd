mod common;

use common::{random_model, Law};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spectral_distill::federated::{federated_coefficients, federated_optimum, federated_risk};
use spectral_distill::measures::mixture_weights;
use spectral_distill::montecarlo::SampleSpectrum;
use spectral_distill::optimal::{optimal_pred_rule, synthesize_sd};
use spectral_distill::poly::Poly;
use spectral_distill::shrinkage::{limiting_pred_risk, pred_risk_tabulated, sd_chain_fn};
use spectral_distill::spectra::{
    make_quadrature, mp_support, outlier_atom_mass, outlier_location, spiked_measure, zero_atom_mass,
};
use spectral_distill::{ModelContext, SdParams, ShrinkageFn, SpikedModel};

fn model_from(seed: u64, s: usize) -> SpikedModel {
    random_model(&mut ChaCha8Rng::seed_from_u64(seed), s)
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config(48))]

    #[test]
    fn spiked_measure_is_a_probability(s2 in 0.2f64..3.0, c in 0.1f64..5.0, ratio in 0.05f64..8.0) {
        let m = SpikedModel::with_pairs(s2, c, &[], 1.0, 1.0).unwrap();
        let delta = ratio * s2 * c.sqrt();
        let rule = make_quadrature(&m, 2048).unwrap();
        let f = spiked_measure(&m, delta).unwrap();
        prop_assert!((f.total_mass(&rule) - 1.0).abs() < 1e-8);
        let mean = f.integrate(&rule, |x| x);
        prop_assert!((mean - (delta + s2)).abs() < 1e-6);
        let mp = spectral_distill::spectra::mp_measure(&m);
        let law = Law::of(&m, delta);
        for phi in [|_: f64| 1.0, |x: f64| x, |x: f64| x * x, |x: f64| 1.0 / (x + 1.0)] {
            let lhs = mp.integrate(&rule, phi);
            let rhs = f.integrate(&rule, |x| phi(x) * law.nu(x));
            prop_assert!((lhs - rhs).abs() < 1e-8);
        }
    }

    #[test]
    fn atoms_appear_exactly_past_their_thresholds(s2 in 0.2f64..3.0, c in 0.1f64..5.0, ratio in 0.05f64..8.0) {
        let m = SpikedModel::with_pairs(s2, c, &[], 1.0, 1.0).unwrap();
        let delta = ratio * s2 * c.sqrt();
        prop_assert_eq!(outlier_atom_mass(&m, delta) > 0.0, delta > s2 * c.sqrt());
        prop_assert_eq!(zero_atom_mass(&m, delta) > 0.0, c > 1.0);
        let (_, b) = mp_support(&m);
        prop_assert!(outlier_location(&m, delta).unwrap() >= b * (1.0 - 1e-15));
    }

    #[test]
    fn radon_nikodym_factors(seed in any::<u64>(), s in 1usize..=3) {
        let m = model_from(seed, s);
        let ctx = ModelContext::new(&m).unwrap();
        let (a, b) = mp_support(&m);
        for j in 0..s {
            let slope = ctx.rn.nu_j(j, 1.0) - ctx.rn.nu_j(j, 0.0);
            prop_assert!(slope < 0.0);
            prop_assert!(ctx.rn.nu_j(j, b) > 0.0 && ctx.rn.nu_j(j, a) > 0.0 && ctx.rn.nu_j(j, 0.0) > 0.0);
            for phi in [|_: f64| 1.0, |x: f64| x, |x: f64| x * x] {
                let lhs: f64 = (0..ctx.n_points()).map(|i| ctx.w_alpha[i] * ctx.mu[j + 1][i] * phi(ctx.xs[i])).sum();
                let rhs = ctx.measures.spiked[j].integrate(&ctx.measures.rule, phi);
                prop_assert!((lhs - rhs).abs() < 1e-8 * rhs.abs().max(1.0));
            }
        }
        let h = ctx.gram_system().unwrap().h;
        let min = h.clone().symmetric_eigen().eigenvalues.min();
        prop_assert!(min >= -1e-10 * h.trace());
    }

    #[test]
    fn risk_parts_add_up(seed in any::<u64>(), s in 1usize..=3, lam in 0.01f64..10.0) {
        let ctx = ModelContext::new(&model_from(seed, s)).unwrap();
        let r = limiting_pred_risk(&ctx, &ShrinkageFn::Ridge { lambda: lam }).unwrap();
        prop_assert_eq!(r.total, r.bias_bulk + r.bias_spikes.iter().sum::<f64>() + r.variance);
    }

    #[test]
    fn sd_chain_matches_recursion(
        lambdas in prop::collection::vec(0.05f64..5.0, 1..5),
        xis in prop::collection::vec(-2.0f64..2.0, 4),
        x in 0.0f64..20.0,
    ) {
        let k = lambdas.len() - 1;
        let p = SdParams::new(lambdas.clone(), xis[..k].to_vec()).unwrap();
        let mut f = 1.0 / (x + lambdas[0]);
        for t in 1..=k {
            f = ((1.0 - xis[t - 1]) + xis[t - 1] * x * f) / (x + lambdas[t]);
        }
        prop_assert!((sd_chain_fn(p).eval(x) - f).abs() < 1e-12 * f.abs().max(1.0));
    }

    #[test]
    fn risk_scales_with_the_covariates(seed in any::<u64>(), kappa in 0.2f64..5.0, lam in 0.05f64..5.0) {
        let m = model_from(seed, 2);
        let scaled = SpikedModel::with_pairs(
            kappa * m.sigma0_sq(),
            m.c(),
            &m.spikes().iter().map(|s| (kappa * s.delta, s.alpha / kappa.sqrt())).collect::<Vec<_>>(),
            m.r() / kappa.sqrt(),
            m.sigma_eps_sq(),
        ).unwrap();
        let r1 = limiting_pred_risk(&ModelContext::new(&m).unwrap(), &ShrinkageFn::Ridge { lambda: lam }).unwrap().total;
        let r2 = limiting_pred_risk(&ModelContext::new(&scaled).unwrap(), &ShrinkageFn::Ridge { lambda: kappa * lam }).unwrap().total;
        prop_assert!((r1 - r2).abs() < 1e-8 * r1);
    }
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn optimum_beats_random_competitors(seed in any::<u64>(), s in 1usize..=3, draws in prop::collection::vec(0.01f64..1.0, 6)) {
        let m = model_from(seed, s);
        let ctx = ModelContext::new(&m).unwrap();
        let (rule, coef) = optimal_pred_rule(&ctx).unwrap();
        prop_assert!(coef.fixed_point_residual < 1e-8);
        let best = limiting_pred_risk(&ctx, &rule.to_shrinkage()).unwrap().total;
        // Poles below the spectrum keep every competitor admissible.
        let pole = -(0.05 + 3.0 * draws[0]);
        let competitors = [
            ShrinkageFn::Ridge { lambda: 10f64.powf(-2.0 + 4.0 * draws[1]) },
            ShrinkageFn::Rational {
                num: Poly::new(vec![draws[2], 1.0]),
                den: Poly::from_roots(&[pole, pole - draws[3] - 0.1]),
            },
            sd_chain_fn(SdParams::new(vec![draws[4] + 0.01, 2.0 * draws[5] + 0.01], vec![2.0 * draws[3] - 1.0]).unwrap()),
        ];
        for f in competitors {
            let r = limiting_pred_risk(&ctx, &f).unwrap().total;
            prop_assert!(best <= r + 1e-12, "{best} > {r} for {f:?}");
        }
    }

    #[test]
    fn synthesis_preserves_the_risk(seed in any::<u64>(), s in 1usize..=3) {
        let ctx = ModelContext::new(&model_from(seed, s)).unwrap();
        let (rule, _) = optimal_pred_rule(&ctx).unwrap();
        let syn = synthesize_sd(&rule.normalized()).unwrap();
        prop_assert!((syn.t.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let direct = limiting_pred_risk(&ctx, &rule.to_shrinkage()).unwrap().total;
        let sd = sd_chain_fn(syn.params.clone());
        let vals = ctx.tabulate(|x| rule.gain * sd.eval(x));
        let via_sd = pred_risk_tabulated(&ctx, &vals).unwrap().total;
        prop_assert!((direct - via_sd).abs() < 1e-9 * direct);
    }

    #[test]
    fn bumping_one_client_hurts(seed in any::<u64>(), s in 1usize..=2, k in 2usize..=6, eps in 0.01f64..0.2) {
        let ctx = ModelContext::new(&model_from(seed, s)).unwrap();
        let fed = federated_optimum(&ctx, k).unwrap();
        let local = fed.local_rule.to_shrinkage();
        let mut rules = vec![local.clone(); k];
        let rhos = vec![fed.rho_star; k];
        let best = federated_risk(&ctx, k, &rules, &rhos).unwrap();
        let ShrinkageFn::Rational { num, den } = local else { unreachable!() };
        // f + eps·(bump) with the bump sharing f's denominator.
        rules[0] = ShrinkageFn::Rational { num: num.add(&den.scale(eps / (1.0 + den.eval(0.0).abs()))), den };
        let bumped = federated_risk(&ctx, k, &rules, &rhos).unwrap();
        prop_assert!(bumped > best, "{bumped} <= {best}");
    }

    #[test]
    fn leading_federated_coefficient_has_isolated_zeros(seed in any::<u64>(), s in 1usize..=3, k in 2usize..=8) {
        let m = model_from(seed, s);
        let w = mixture_weights(&m);
        let mut prev: Option<f64> = None;
        for i in 0..50 {
            let se2 = 10f64.powf(-1.0 + 3.0 * i as f64 / 49.0);
            let mi = m.with_sigma_eps_sq(se2).unwrap();
            let ctx = ModelContext::with_nodes(&mi, 512).unwrap();
            let b0 = federated_coefficients(&ctx, k).unwrap()[0];
            let gamma = spectral_distill::measures::gram_rhs(&mi, &w);
            let scale = gamma.iter().map(|g| g * g).sum::<f64>().sqrt();
            let tiny = b0.abs() < 1e-10 * scale;
            if let Some(p) = prev {
                prop_assert!(!(tiny && p.abs() < 1e-10 * scale), "consecutive zeros at se2 = {se2}");
            }
            prev = Some(b0);
        }
    }
}

proptest! {
    #![proptest_config(config(12))]

    #[test]
    fn sd_fit_equals_closed_form_fit(
        seed in any::<u64>(),
        n in 20usize..120,
        p in 20usize..120,
        l0 in 0.05f64..2.0,
        l1 in 0.05f64..2.0,
        xi in -1.5f64..1.5,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        let x = DMatrix::from_fn(n, p, |_, _| rng.gen::<f64>() - 0.5);
        let y = DVector::from_fn(n, |_, _| rng.gen::<f64>() - 0.5);
        let params = SdParams::new(vec![l0, l1], vec![xi]).unwrap();
        let sp = SampleSpectrum::new(&x, &y).unwrap();
        let a = sp.fit_sd(&params);
        let b = sp.fit(&sd_chain_fn(params));
        prop_assert!((&a - &b).norm() < 1e-8 * b.norm().max(1e-12));
    }
}
