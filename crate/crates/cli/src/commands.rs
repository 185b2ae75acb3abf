use std::path::PathBuf;

use serde_json::json;

use betamix::io::{dataset_to_csv, AnalysisConfig};
use betamix::laplace::{fit_laplace, FitResult, LaplaceConfig};
use betamix::likelihood::{ml_fit_model, profile_all, wald_interval};
use betamix::mcmc::run_mcmc;
use betamix::model::BetaMixedModel;
use betamix::prior::{elicit_gamma_prior, elicited_range_roundtrip};
use betamix::selection::compare_models;
use betamix::sensitivity::sensitivity_scan;

use crate::summary::{data_info, CriteriaSummary, Output, ParamRow};
use crate::CliError;

fn csv_text(rows: impl IntoIterator<Item = Vec<String>>, header: &[&str]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn cpo_csv(fit: &FitResult) -> Option<String> {
    let c = fit.criteria.as_ref()?;
    let y = fit.model.response();
    let d = fit.model.design();
    let rows = c.cpo.iter().enumerate().map(|(i, v)| {
        vec![
            (i + 1).to_string(),
            y[i].to_string(),
            d.group_labels()[d.group(i)].clone(),
            format!("{v:.6e}"),
            c.cpo_flagged.contains(&i).to_string(),
        ]
    });
    Some(csv_text(rows, &["row", "y", "group", "cpo", "flagged"]))
}

fn grid_details(fit: &FitResult) -> serde_json::Value {
    json!({
        "grid_points": fit.grid.points.len(),
        "failed_points": fit.grid.failed_points,
        "z_step": fit.grid.z_step,
        "engine_secs": fit.elapsed_secs,
        "derived": fit.derived.iter().map(ParamRow::from_marginal).collect::<Vec<_>>(),
    })
}

pub fn fit(cfg: &AnalysisConfig) -> Result<(), CliError> {
    let data = cfg.dataset()?;
    let priors = cfg.priors()?;
    let mut out = Output::new(cfg)?;
    let fit = fit_laplace(&data, &cfg.model, &priors, &cfg.laplace)?;
    out.write_marginals(fit.marginals.iter().chain(&fit.derived))?;
    if let Some(text) = cpo_csv(&fit) {
        out.write("cpo.csv", &text)?;
    }
    let params: Vec<ParamRow> = fit.marginals.iter().map(ParamRow::from_marginal).collect();
    let crit = fit.criteria.as_ref().map(CriteriaSummary::from);
    let info = data_info(cfg, &data);
    out.finish("fit", cfg, "laplace", Some(&info), &params, crit.as_ref(), grid_details(&fit))?;
    Ok(())
}

pub fn mcmc(cfg: &AnalysisConfig) -> Result<(), CliError> {
    let data = cfg.dataset()?;
    let priors = cfg.priors()?;
    let mcfg = cfg.mcmc_config();
    let mut out = Output::new(cfg)?;
    let chains = run_mcmc(&data, &cfg.model, &priors, &mcfg)?;
    let mut params = Vec::new();
    let mut diag = Vec::new();
    let mut kdes = Vec::new();
    for (j, name) in chains.names.iter().enumerate() {
        let mut s = chains.pooled(j);
        s.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = p * (s.len() - 1) as f64;
            let (i, f) = (h.floor() as usize, h.fract());
            s[i] + f * (s[(i + 1).min(s.len() - 1)] - s[i])
        };
        params.push(ParamRow {
            name: name.clone(),
            mean: chains.mean(j),
            sd: chains.sd(j),
            median: Some(q(0.5)),
            lower: Some(q(0.025)),
            upper: Some(q(0.975)),
        });
        diag.push(json!({
            "name": name,
            "rhat": chains.rhat[j],
            "ess": chains.ess[j],
            "mcse": chains.mc_standard_error(j),
        }));
        kdes.push(chains.kernel_density(j, cfg.laplace.density_points)?);
    }
    out.write_marginals(&kdes)?;
    for k in 0..chains.chains.len() {
        out.write(PathBuf::from("chains").join(format!("chain{}.csv", k + 1)), &chains.chain_csv(k)?)?;
    }
    let acceptance: Vec<_> = chains
        .chains
        .iter()
        .map(|c| chains.block_names.iter().zip(&c.acceptance).map(|(b, a)| (b.clone(), json!(a))).collect::<serde_json::Map<_, _>>())
        .collect();
    let details = json!({
        "n_chains": mcfg.n_chains,
        "iterations": mcfg.iterations,
        "burn_in": mcfg.burn_in,
        "thin": mcfg.thin,
        "kept_per_chain": mcfg.kept_per_chain(),
        "diagnostics": diag,
        "acceptance": acceptance,
    });
    let info = data_info(cfg, &data);
    out.finish("mcmc", cfg, "mcmc", Some(&info), &params, None, details)?;
    Ok(())
}

pub fn ml(cfg: &AnalysisConfig) -> Result<(), CliError> {
    let data = cfg.dataset()?;
    let model = BetaMixedModel::new(&data, &cfg.model, cfg.priors()?)?;
    let mut out = Output::new(cfg)?;
    let fit = ml_fit_model(&model)?;
    let level = cfg.ml.level;
    let profiles = profile_all(&model, &fit, level)?;
    let mut rows = Vec::new();
    let mut params = Vec::new();
    for (k, p) in profiles.iter().enumerate() {
        let (wl, wu) = wald_interval(&fit, k, level)?;
        rows.push(vec![
            p.name.clone(),
            format!("{:.6}", fit.estimates[k]),
            format!("{:.6}", fit.std_errors[k]),
            opt(p.lower),
            opt(p.upper),
            format!("{wl:.6}"),
            format!("{wu:.6}"),
        ]);
        params.push(ParamRow {
            name: p.name.clone(),
            mean: fit.estimates[k],
            sd: fit.std_errors[k],
            median: None,
            lower: p.lower,
            upper: p.upper,
        });
    }
    out.write(
        "ml.csv",
        &csv_text(rows, &["parameter", "estimate", "se", "profile_lower", "profile_upper", "wald_lower", "wald_upper"]),
    )?;
    let details = json!({
        "level": level,
        "loglik": fit.loglik,
        "iterations": fit.iterations,
        "open_ended": profiles.iter().filter(|p| p.lower.is_none() || p.upper.is_none()).map(|p| &p.name).collect::<Vec<_>>(),
    });
    let info = data_info(cfg, &data);
    out.finish("ml", cfg, "likelihood", Some(&info), &params, None, details)?;
    Ok(())
}

pub fn compare(cfg: &AnalysisConfig) -> Result<(), CliError> {
    let data = cfg.dataset()?;
    let mut out = Output::new(cfg)?;
    let lcfg = LaplaceConfig { criteria: true, ..cfg.laplace };
    let mut fits = Vec::new();
    let mut labels = Vec::new();
    for entry in &cfg.compare.models {
        let spec = entry.spec();
        let priors = cfg.priors.apply(&spec)?;
        let fit = fit_laplace(&data, &spec, &priors, &lcfg)
            .map_err(|e| CliError { kind: e.kind(), message: format!("model `{}`: {e}", entry.label) })?;
        out.write_marginals_under(&entry.label, &fit.marginals)?;
        fits.push(fit);
        labels.push(entry.label.clone());
    }
    let table = compare_models(&fits, &labels)?;
    out.write("comparison.csv", &table.to_csv()?)?;
    print!("{}", table.to_text());
    let models: Vec<_> = fits
        .iter()
        .zip(&labels)
        .map(|(f, l)| {
            json!({
                "label": l,
                "parameters": f.marginals.iter().map(ParamRow::from_marginal).collect::<Vec<_>>(),
                "criteria": f.criteria.as_ref().map(CriteriaSummary::from),
            })
        })
        .collect();
    let details = json!({
        "models": models,
        "best_dic": labels[table.best_dic],
        "best_lml": labels[table.best_lml],
    });
    let info = data_info(cfg, &data);
    out.finish("compare", cfg, "laplace", Some(&info), &[], None, details)?;
    Ok(())
}

pub fn sensitivity(cfg: &AnalysisConfig) -> Result<(), CliError> {
    let data = cfg.dataset()?;
    let priors = cfg.priors()?;
    let s = &cfg.sensitivity;
    let mut out = Output::new(cfg)?;
    let report = sensitivity_scan(&data, &cfg.model, &priors, s.param, &s.targets, s.calibration_default(), &cfg.laplace)?;
    out.write("sensitivity.csv", &report.to_csv()?)?;
    out.write("sensitivity_summary.csv", &report.summary_csv()?)?;
    let params: Vec<ParamRow> = report
        .default_summaries
        .iter()
        .map(|p| ParamRow { name: p.name.clone(), mean: p.mean, sd: p.sd, median: None, lower: None, upper: None })
        .collect();
    let details = serde_json::to_value(&report)?;
    let info = data_info(cfg, &data);
    out.finish("sensitivity", cfg, "laplace", Some(&info), &params, None, details)?;
    Ok(())
}

pub fn elicit(cfg: &AnalysisConfig) -> Result<(), CliError> {
    let e = &cfg.elicit;
    let g = elicit_gamma_prior(e)?;
    let out = Output::new(cfg)?;
    println!("shape {}, rate {:.6}", g.shape, g.rate);
    let details = json!({
        "range": e.range,
        "df": e.df,
        "coverage": e.coverage,
        "shape": g.shape,
        "rate": g.rate,
        "implied_range": elicited_range_roundtrip(&g, e.coverage)?,
    });
    out.finish("elicit", cfg, "none", None, &[], None, details)?;
    Ok(())
}

pub fn simulate(cfg: &AnalysisConfig) -> Result<(), CliError> {
    let data = cfg.simulated()?;
    let mut out = Output::new(cfg)?;
    out.write("data.csv", &dataset_to_csv(&data)?)?;
    let details = json!({
        "model": cfg.simulate.model,
        "truth": cfg.simulate.truth,
        "sizes": cfg.simulate.sizes,
    });
    let info = data_info(cfg, &data);
    out.finish("simulate", cfg, "none", Some(&info), &[], None, details)?;
    Ok(())
}
