use betamix::io::{default_scenario, simulate, TrueParams, INCOME_COLUMN};
use betamix::laplace::{fit_laplace, LaplaceConfig};
use betamix::likelihood::{marginal_loglik, ml_fit_model, profile_interval, wald_interval};
use betamix::mcmc::{run_mcmc, McmcConfig};
use betamix::model::{BetaMixedModel, HyperPoint, ModelSpec, RandomEffects};
use betamix::prior::default_priors;
use proptest::prelude::*;

fn small_data(seed: u64) -> (ModelSpec, betamix::model::Dataset) {
    let spec = ModelSpec::new(vec![INCOME_COLUMN.into()], RandomEffects::Intercept);
    let truth = TrueParams { beta: vec![0.3, 0.6], phi: 50.0, tau1_sq: Some(25.0), tau2_sq: None, rho: None };
    let data = simulate(&spec, &truth, &[15; 6], seed).unwrap();
    (spec, data)
}

fn short_chain(seed: u64) -> McmcConfig {
    McmcConfig { n_chains: 2, iterations: 3_000, burn_in: 1_000, thin: 5, seed, adapt_window: 50 }
}

#[test]
fn mcmc_is_deterministic_per_seed() {
    let (spec, data) = small_data(3);
    let pri = default_priors(&spec);
    let a = run_mcmc(&data, &spec, &pri, &short_chain(5)).unwrap();
    let b = run_mcmc(&data, &spec, &pri, &short_chain(5)).unwrap();
    assert_eq!(a, b);
    let c = run_mcmc(&data, &spec, &pri, &short_chain(6)).unwrap();
    assert_ne!(a.chains[0].draws, c.chains[0].draws);
    // chains of one run use distinct streams
    assert_ne!(a.chains[0].draws, a.chains[1].draws);
    assert_eq!(a.chains[0].draws[0].len(), 400);
}

#[test]
fn reduced_mcmc_agrees_with_laplace() {
    let (spec, data) = small_data(8);
    let pri = default_priors(&spec);
    let fit = fit_laplace(&data, &spec, &pri, &LaplaceConfig { criteria: false, ..LaplaceConfig::default() }).unwrap();
    let mc = run_mcmc(&data, &spec, &pri, &McmcConfig { seed: 11, ..McmcConfig::reduced() }).unwrap();
    for ch in &mc.chains {
        assert!(ch.acceptance.iter().all(|a| (0.1..0.7).contains(a)), "{:?}", ch.acceptance);
    }
    for m in &fit.marginals {
        let j = mc.index(&m.name).unwrap();
        assert!(mc.rhat[j] < 1.05, "{} rhat {}", m.name, mc.rhat[j]);
        // the Laplace marginal is an approximation, so allow a tenth of a posterior sd on top of MC error
        let tol = 4.0 * mc.mc_standard_error(j) + 0.1 * m.sd;
        assert!((mc.mean(j) - m.mean).abs() < tol, "{}: mcmc {} laplace {}", m.name, mc.mean(j), m.mean);
        assert!((mc.sd(j) / m.sd - 1.0).abs() < 0.15, "{}: sd {} vs {}", m.name, mc.sd(j), m.sd);
    }
}

#[test]
fn ml_estimate_is_a_local_maximum_with_nested_intervals() {
    let (spec, data) = small_data(4);
    let model = BetaMixedModel::new(&data, &spec, default_priors(&spec)).unwrap();
    let ml = ml_fit_model(&model).unwrap();
    let p = model.design().p();
    let theta = HyperPoint::from_slice(spec.q(), &ml.internal[p..]).unwrap();
    let beta = &ml.internal[..p];
    let at = marginal_loglik(&model, beta, &theta).unwrap();
    assert!((at - ml.loglik).abs() < 1e-9 * at.abs().max(1.0));
    for k in 0..p {
        let h = ml.std_errors[k];
        let mut values = Vec::new();
        for s in [-1.0, 1.0] {
            let mut b = beta.to_vec();
            b[k] += s * h;
            values.push(marginal_loglik(&model, &b, &theta).unwrap());
        }
        assert!(values.iter().all(|v| *v < at));
        // quadratic behaviour one standard error out: each side drops by about 1/2
        assert!(values.iter().all(|v| (at - v - 0.5).abs() < 0.2), "{values:?} vs {at}");
    }
    for k in 0..ml.names.len() {
        let i90 = profile_interval(&model, &ml, k, 0.90).unwrap();
        let i95 = profile_interval(&model, &ml, k, 0.95).unwrap();
        let est = ml.estimates[k];
        let (l90, u90) = (i90.lower.unwrap(), i90.upper.unwrap());
        let (l95, u95) = (i95.lower.unwrap(), i95.upper.unwrap());
        assert!(l95 < l90 && l90 < est && est < u90 && u90 < u95, "{}: {l95} {l90} {est} {u90} {u95}", ml.names[k]);
        if k < p {
            let (wl, wu) = wald_interval(&ml, k, 0.95).unwrap();
            assert!((wu - wl) / (u95 - l95) > 0.8 && (wu - wl) / (u95 - l95) < 1.25);
        }
    }
}

#[test]
fn default_scenario_ml_recovers_truth_roughly() {
    let (spec, truth) = default_scenario();
    let data = simulate(&spec, &truth, &betamix::io::DEFAULT_GROUP_SIZES, 2024).unwrap();
    let model = BetaMixedModel::new(&data, &spec, default_priors(&spec)).unwrap();
    let ml = ml_fit_model(&model).unwrap();
    let k = ml.index("income").unwrap();
    assert!((ml.estimates[k] - truth.beta[3]).abs() < 3.0 * ml.std_errors[k]);
    let f = ml.index("phi").unwrap();
    assert!((ml.estimates[f] / truth.phi - 1.0).abs() < 0.3);
}

proptest! {
    #[test]
    fn pair_hyper_roundtrips_through_natural_scale(
        lp in -3.0f64..8.0, l1 in -6.0f64..6.0, l2 in -6.0f64..6.0, z in -3.0f64..3.0,
    ) {
        let h = HyperPoint::Pair { log_phi: lp, log_tau1: l1, log_tau2: l2, z_rho: z };
        let n = h.natural();
        let back = HyperPoint::from_natural(n.phi, n.tau1_sq, n.tau2_sq, n.rho).unwrap();
        let (a, b) = (h.to_vec(), back.to_vec());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-8 * (1.0 + x.abs()));
        }
        prop_assert!((n.correlation.unwrap() - z.tanh()).abs() < 1e-12);
        let q = h.precision().unwrap();
        prop_assert!(q.clone().cholesky().is_some());
        prop_assert_eq!(HyperPoint::from_slice(2, &a).unwrap(), h);
    }
}
