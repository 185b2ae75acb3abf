//! Acceptance checks. Runs without the libtest harness so every criterion
//! prints one line; exits nonzero if a criterion fails unexpectedly.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use betamix::dist::{beta_logpdf, beta_logpdf_grad, scaled_t_logpdf, BetaMeanPrecision, GammaShapeRate, StudentTParams};
use betamix::io::{default_scenario, simulate, DEFAULT_GROUP_SIZES, INCOME_COLUMN, SIZE_COLUMN};
use betamix::laplace::{fit_laplace, FitResult, LaplaceConfig};
use betamix::likelihood::{ml_fit_model, profile_all};
use betamix::mcmc::{interval_containment, run_mcmc, McmcConfig};
use betamix::model::{BetaMixedModel, Curvature, HyperPoint, ModelSpec};
use betamix::prior::{default_priors, elicit_gamma_prior, ElicitationInput, DEFAULT_TAU_PRIOR};
use betamix::quad::{integrate, Support};
use betamix::sensitivity::{
    gamma_hellinger_closed, hellinger, hellinger_marginals, sensitivity_scan, SensitivityParam, DEFAULT_TARGETS,
    PHI_SENSITIVITY_DEFAULT,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria that are red for reasons recorded in the README.
const KNOWN_RED: [usize; 2] = [7, 9];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn ga(shape: f64, rate: f64) -> GammaShapeRate {
    GammaShapeRate::new(shape, rate).unwrap()
}

fn default_data() -> (ModelSpec, betamix::model::Dataset) {
    let (spec, truth) = default_scenario();
    (spec.clone(), simulate(&spec, &truth, &DEFAULT_GROUP_SIZES, 2024).unwrap())
}

fn published_distances() -> Outcome {
    let phi = [(0.0135, 0.1058), (0.0178, 0.2005), (0.0242, 0.3005), (0.0338, 0.4006), (0.050, 0.5046), (0.0765, 0.6004)];
    let tau = [(0.00225, 0.1030), (0.0035, 0.2086), (0.0055, 0.3085), (0.0088, 0.4017), (0.016, 0.5031), (0.033, 0.6022)];
    let mut worst_loose: f64 = 0.0;
    let mut worst_tight: f64 = 0.0;
    for (k, &(rate, printed)) in phi.iter().enumerate() {
        let err = (gamma_hellinger_closed(&PHI_SENSITIVITY_DEFAULT, &ga(1.0, rate)) - printed).abs();
        worst_loose = worst_loose.max(err);
        if k > 0 {
            worst_tight = worst_tight.max(err);
        }
    }
    for &(rate, printed) in &tau {
        let err = (gamma_hellinger_closed(&DEFAULT_TAU_PRIOR, &ga(0.5, rate)) - printed).abs();
        worst_loose = worst_loose.max(err);
        worst_tight = worst_tight.max(err);
    }
    outcome(worst_loose < 5e-3 && worst_tight < 1e-3, format!("max error {worst_loose:.1e} (all 12), {worst_tight:.1e} (11 tight rows)"))
}

fn elicitation() -> Outcome {
    let g = elicit_gamma_prior(&ElicitationInput::new(2f64.ln(), 1.0)).unwrap();
    outcome((g.rate - 0.001487).abs() <= 2e-6 && g.shape == 0.5, format!("Ga({}, {:.7})", g.shape, g.rate))
}

fn hellinger_quadrature() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let g1 = ga(rng.random_range(0.3..8.0), 10f64.powf(rng.random_range(-3.0..1.0)));
        let g2 = ga(rng.random_range(0.3..8.0), 10f64.powf(rng.random_range(-3.0..1.0)));
        let q = hellinger(|x| g1.logpdf(x).exp(), |x| g2.logpdf(x).exp(), Support::Positive).unwrap();
        worst = worst.max((q - gamma_hellinger_closed(&g1, &g2)).abs());
    }
    outcome(worst < 1e-6, format!("max |quadrature - closed| {worst:.1e} over 50 pairs"))
}

fn t_mixture() -> Outcome {
    let mut worst: f64 = 0.0;
    for g in [ga(0.5, 0.001487), ga(1.0, 0.01)] {
        let t = StudentTParams::from_gamma_mixture(&g);
        let s = t.sq_scale.sqrt();
        for k in 0..20 {
            let x = s * (-6.0 + 12.0 * k as f64 / 19.0);
            let mixed = integrate(
                |tau| (0.5 * (tau / std::f64::consts::TAU).ln() - 0.5 * tau * x * x + g.logpdf(tau)).exp(),
                Support::Positive,
                1e-12,
                1e-10,
            )
            .unwrap();
            let closed = scaled_t_logpdf(x, &t).exp();
            worst = worst.max((mixed - closed).abs() / closed.max(1.0));
        }
    }
    outcome(worst < 1e-6, format!("max error {worst:.1e} at 40 abscissae"))
}

fn derivatives() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rel = |fd: f64, a: f64| (fd - a).abs() / a.abs().max(1.0);
    let mut worst_beta: f64 = 0.0;
    for _ in 0..100 {
        let (y, mu, phi) = (rng.random_range(0.02..0.98), rng.random_range(0.05..0.95), rng.random_range(1.0..300.0));
        let (dm, dp) = beta_logpdf_grad(y, &BetaMeanPrecision::new(mu, phi).unwrap()).unwrap();
        let f = |m: f64, p: f64| beta_logpdf(y, &BetaMeanPrecision::new(m, p).unwrap()).unwrap();
        let (hm, hp) = (1e-6, 1e-5 * phi);
        worst_beta = worst_beta.max(rel((f(mu + hm, phi) - f(mu - hm, phi)) / (2.0 * hm), dm));
        worst_beta = worst_beta.max(rel((f(mu, phi + hp) - f(mu, phi - hp)) / (2.0 * hp), dp));
    }
    let (spec, truth) = default_scenario();
    let data = simulate(&spec, &truth, &[6; 8], 77).unwrap();
    let model = BetaMixedModel::new(&data, &spec, default_priors(&spec)).unwrap();
    let mut worst_joint: f64 = 0.0;
    let h = 1e-5;
    for _ in 0..100 {
        let theta = HyperPoint::from_slice(spec.q(), &[rng.random_range(2.0..6.0), rng.random_range(1.0..5.0)]).unwrap();
        let x: Vec<f64> = (0..model.latent_dim()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let der = model.derivatives(&x, &theta, Curvature::Observed);
        let hd = der.neg_hessian.to_dense();
        for k in 0..x.len() {
            let (mut up, mut dn) = (x.clone(), x.clone());
            up[k] += h;
            dn[k] -= h;
            let fd = (model.latent_objective(&up, &theta) - model.latent_objective(&dn, &theta)) / (2.0 * h);
            worst_joint = worst_joint.max(rel(fd, der.gradient[k]));
            let gu = model.derivatives(&up, &theta, Curvature::Observed).gradient;
            let gd = model.derivatives(&dn, &theta, Curvature::Observed).gradient;
            for r in 0..x.len() {
                worst_joint = worst_joint.max(rel(-(gu[r] - gd[r]) / (2.0 * h), hd[(r, k)]));
            }
        }
    }
    outcome(
        worst_beta < 1e-5 && worst_joint < 1e-5,
        format!("beta density {worst_beta:.1e}, joint gradient/Hessian {worst_joint:.1e} (100 points each)"),
    )
}

fn engine_agreement() -> Outcome {
    let (spec, data) = default_data();
    let pri = default_priors(&spec);
    let fit = fit_laplace(&data, &spec, &pri, &LaplaceConfig { criteria: false, ..LaplaceConfig::default() }).unwrap();
    let model = BetaMixedModel::new(&data, &spec, pri.clone()).unwrap();
    let ml = ml_fit_model(&model).unwrap();
    let prof = profile_all(&model, &ml, 0.95).unwrap();
    let t = Instant::now();
    let mc = run_mcmc(&data, &spec, &pri, &McmcConfig { seed: 2024, ..McmcConfig::reduced() }).unwrap();
    let mcmc_secs = t.elapsed().as_secs_f64();
    let (mut h_max, mut lap_rng, mut prof_rng) = (0f64, (1f64, 0f64), (1f64, 0f64));
    let mut ok = mcmc_secs <= 120.0;
    for m in &fit.marginals {
        let j = mc.index(&m.name).unwrap();
        let h = hellinger_marginals(m, &mc.kernel_density(j, 401).unwrap());
        let s = mc.pooled(j);
        let (lo, hi) = m.equal_tail(0.95);
        let in_lap = interval_containment(&s, lo, hi).unwrap();
        let p = &prof[ml.index(&m.name).unwrap()];
        let in_prof = match (p.lower, p.upper) {
            (Some(a), Some(b)) => interval_containment(&s, a, b).unwrap(),
            _ => f64::NAN,
        };
        ok &= h < 0.05 && (0.93..=0.97).contains(&in_lap) && (0.93..=0.97).contains(&in_prof);
        h_max = h_max.max(h);
        lap_rng = (lap_rng.0.min(in_lap), lap_rng.1.max(in_lap));
        prof_rng = (prof_rng.0.min(in_prof), prof_rng.1.max(in_prof));
    }
    outcome(
        ok,
        format!(
            "reduced 3x50k in {mcmc_secs:.0}s; max H {h_max:.3}; in Laplace 95% {:.3}-{:.3}; in profile 95% {:.3}-{:.3}",
            lap_rng.0, lap_rng.1, prof_rng.0, prof_rng.1
        ),
    )
}

fn sensitivity() -> Outcome {
    let (spec, data) = default_data();
    let pri = default_priors(&spec);
    let cfg = LaplaceConfig::default();
    let mut ok = true;
    let mut parts = Vec::new();
    for (param, def) in [(SensitivityParam::Phi, Some(PHI_SENSITIVITY_DEFAULT)), (SensitivityParam::Tau, None)] {
        let r = sensitivity_scan(&data, &spec, &pri, param, &DEFAULT_TARGETS, def, &cfg).unwrap();
        let post: Vec<f64> = r.rows.iter().map(|row| row.posterior_h.unwrap_or(f64::NAN)).collect();
        let ratios: Vec<f64> = r.rows.iter().map(|row| row.ratio.unwrap_or(f64::NAN)).collect();
        let monotone = post.windows(2).all(|w| w[1] > w[0]);
        let below = r.rows.iter().zip(&post).all(|(row, p)| *p < row.prior_h);
        let s_max = ratios.iter().copied().fold(f64::NAN, f64::max);
        let last = r.rows.last().unwrap();
        let shift = r
            .default_summaries
            .iter()
            .filter(|s| s.name != "phi" && !s.name.starts_with("tau"))
            .map(|s| {
                let m = last.summaries.iter().find(|t| t.name == s.name).unwrap().mean;
                (m - s.mean).abs() / s.mean.abs()
            })
            .fold(0.0, f64::max);
        ok &= monotone && below && s_max < 0.5 && shift < 0.02;
        parts.push(format!(
            "{}: monotone {monotone}, post<prior {below}, max S {s_max:.3}, max coef shift {:.2}%",
            param.marginal_name(),
            100.0 * shift
        ));
    }
    outcome(ok, parts.join("; "))
}

fn fits_for(data: &betamix::model::Dataset, specs: &[ModelSpec]) -> Vec<FitResult> {
    specs.iter().map(|s| fit_laplace(data, s, &default_priors(s), &LaplaceConfig::default()).unwrap()).collect()
}

fn model_selection() -> Outcome {
    let seq = ModelSpec::nested_sequence(SIZE_COLUMN, INCOME_COLUMN);
    let specs = [seq[0].clone(), seq[3].clone()];
    let (gen, truth) = default_scenario();
    let (mut both, mut phi_up) = (0, 0);
    let reps = 50;
    for r in 0..reps {
        let data = simulate(&gen, &truth, &DEFAULT_GROUP_SIZES, 20_000 + r).unwrap();
        let f = fits_for(&data, &specs);
        let (c0, c1) = (f[0].criteria.as_ref().unwrap(), f[1].criteria.as_ref().unwrap());
        if c1.dic < c0.dic && c1.lml > c0.lml {
            both += 1;
        }
        if f[1].marginal("phi").unwrap().mean > f[0].marginal("phi").unwrap().mean {
            phi_up += 1;
        }
    }
    outcome(
        both as f64 >= 0.8 * reps as f64 && phi_up as f64 >= 0.9 * reps as f64,
        format!("DIC and LML prefer the covariate model in {both}/{reps}; phi mean increases in {phi_up}/{reps}"),
    )
}

fn calibration() -> Outcome {
    let (spec, truth) = default_scenario();
    let cfg = LaplaceConfig { criteria: false, ..LaplaceConfig::default() };
    let reps = 200;
    let mut covered = 0;
    for r in 0..reps {
        let data = simulate(&spec, &truth, &[10; 8], 10_000 + r).unwrap();
        let fit = fit_laplace(&data, &spec, &default_priors(&spec), &cfg).unwrap();
        let (lo, hi) = fit.marginal(INCOME_COLUMN).unwrap().equal_tail(0.95);
        if lo <= truth.beta[3] && truth.beta[3] <= hi {
            covered += 1;
        }
    }
    let rate = covered as f64 / reps as f64;
    outcome((0.93..=0.97).contains(&rate), format!("income 95% interval covers the truth in {covered}/{reps} = {rate:.3}"))
}

fn main() -> ExitCode {
    type Check = fn() -> Outcome;
    let checks: [(&str, Check, Duration); 9] = [
        ("published prior distances", published_distances, Duration::from_secs(1)),
        ("elicitation constant", elicitation, Duration::from_secs(1)),
        ("quadrature vs closed-form Hellinger", hellinger_quadrature, Duration::from_secs(5)),
        ("t-mixture identity", t_mixture, Duration::from_secs(5)),
        ("derivatives vs finite differences", derivatives, Duration::from_secs(10)),
        ("engine agreement", engine_agreement, Duration::from_secs(600)),
        ("sensitivity contraction", sensitivity, Duration::from_secs(300)),
        ("model-selection ordering", model_selection, Duration::from_secs(600)),
        ("frequentist calibration", calibration, Duration::from_secs(600)),
    ];
    let mut unexpected = Vec::new();
    let mut passed = 0;
    for (k, (name, check, budget)) in checks.iter().enumerate() {
        let n = k + 1;
        let t = Instant::now();
        let o = check();
        let secs = t.elapsed();
        let pass = o.pass && secs <= *budget;
        let note = if !pass && KNOWN_RED.contains(&n) { " (known)" } else { "" };
        println!(
            "criterion {n} {}{note}: {name}: {} [{:.1}s, budget {}s]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            secs.as_secs_f64(),
            budget.as_secs()
        );
        if pass {
            passed += 1;
        } else if !KNOWN_RED.contains(&n) {
            unexpected.push(n);
        }
    }
    println!("acceptance: {passed}/9 pass");
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {unexpected:?}");
        ExitCode::FAILURE
    }
}
