//! Implementations of the subcommands. Each returns the text printed on
//! success; files go to the configured output directory.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use secar::diagnostics::{
    bias_study, correlation_matrix, draws_from_weighted, effective_parameters, ks_uniform, pit_residuals,
    BiasStudyConfig, StudyMethod,
};
use secar::graph::{load_graph, CarStructure, SpatialGraph};
use secar::inference::{explore_grid, latent_marginal, maximize_posterior, GridSpec, Method, NewtonOptions, Problem};
use secar::io;
use secar::mcmc::{run_chains, McmcOptions};
use secar::model::{simulate, CountPanel, CovariateDesign, ModelParams, SimulationSpec};
use secar::prior::{PriorSpec, ScalarPrior, ZetaPrior};
use secar::{build_torus_lattice, Error, Result};

use crate::config::Config;

const VERSION: &str = env!("CARGO_PKG_VERSION");

const GRAPH_KEYS: [&str; 4] = ["graph", "graph_strict", "rows", "cols"];
const DATA_KEYS: [&str; 3] = ["counts", "covariates", "standardize"];
const PRIOR_KEYS: [&str; 7] = [
    "prior.tau_scale",
    "prior.zeta_lower",
    "prior.zeta_upper",
    "prior.eta_lower",
    "prior.eta_upper",
    "prior.beta_variance",
    "include_priors",
];

fn keys<'a>(groups: &[&[&'a str]]) -> Vec<&'a str> {
    groups.iter().flat_map(|g| g.iter().copied()).collect()
}

fn out_dir(cfg: &Config) -> PathBuf {
    cfg.path("out").unwrap_or_else(|| PathBuf::from("out"))
}

fn seed(cfg: &Config) -> Result<u64> {
    cfg.parse_value("seed")?
        .ok_or_else(|| Error::Config("this command needs a seed (set seed = <integer>)".into()))
}

fn structure(cfg: &Config) -> Result<CarStructure> {
    match cfg.path("graph") {
        Some(p) => {
            let loaded = load_graph(&p, cfg.get("graph_strict", false)?)?;
            if !loaded.asymmetric_pairs.is_empty() {
                eprintln!(
                    "warning: {} one-sided neighbor listings in {} were symmetrized",
                    loaded.asymmetric_pairs.len(),
                    p.display()
                );
            }
            Ok(CarStructure::new(loaded.graph))
        }
        None => Ok(CarStructure::new(build_torus_lattice(cfg.get("rows", 10)?, cfg.get("cols", 10)?)?)),
    }
}

fn data(cfg: &Config, car: &CarStructure) -> Result<(CountPanel, CovariateDesign)> {
    let n = car.n_locations();
    let panel = io::read_counts(cfg.require("counts")?, n)?;
    let mut design = match cfg.path("covariates") {
        Some(p) => io::read_covariates(p, n, panel.n_times())?,
        None => CovariateDesign::intercept_only(n, panel.n_times()),
    };
    for name in cfg.list::<String>("standardize")?.unwrap_or_default() {
        design.standardize(&name)?;
    }
    Ok((panel, design))
}

fn priors(cfg: &Config) -> Result<PriorSpec> {
    let mut p = PriorSpec::default();
    p.tau = ScalarPrior::HalfCauchy {
        scale: cfg.get("prior.tau_scale", 5.0)?,
    };
    if let (Some(lower), Some(upper)) = (cfg.parse_value("prior.zeta_lower")?, cfg.parse_value("prior.zeta_upper")?) {
        p.zeta = ZetaPrior::Explicit(ScalarPrior::Uniform { lower, upper });
    }
    p.eta = ScalarPrior::Uniform {
        lower: cfg.get("prior.eta_lower", 0.0)?,
        upper: cfg.get("prior.eta_upper", 1.0)?,
    };
    p.beta = ScalarPrior::Gaussian {
        mean: 0.0,
        variance: cfg.get("prior.beta_variance", 1000.0)?,
    };
    Ok(p)
}

fn manifest(command: &str, cfg: &Config, extra: &[(&str, String)]) -> String {
    let mut s = format!("secar_version = {VERSION}\ncommand = {command}\n");
    for (k, v) in cfg.entries() {
        let _ = writeln!(s, "config.{k} = {v}");
    }
    for (k, v) in extra {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}

fn fmt_params(p: &ModelParams, names: &[String]) -> String {
    let mut s = format!("eta = {:.6}\nzeta = {:.6}\ntau2 = {:.6}\n", p.eta, p.zeta, p.tau2);
    for (name, b) in names.iter().zip(&p.beta) {
        let _ = writeln!(s, "beta_{name} = {b:.6}");
    }
    s
}

pub fn simulate_cmd(cfg: &Config) -> Result<String> {
    cfg.check_keys(&keys(&[
        &GRAPH_KEYS,
        &["covariates", "weeks", "eta", "zeta", "tau2", "beta", "seed", "burn_in", "out"],
    ]))?;
    let seed = seed(cfg)?;
    let car = structure(cfg)?;
    let n = car.n_locations();
    let weeks: usize = cfg.get("weeks", 100)?;
    let design = match cfg.path("covariates") {
        Some(p) => io::read_covariates(p, n, weeks)?,
        None => CovariateDesign::intercept_only(n, weeks),
    };
    let beta = cfg.list::<f64>("beta")?.unwrap_or_else(|| vec![0.0]);
    if beta.len() != design.p() {
        return Err(Error::Config(format!(
            "beta has {} entries but the design has {} columns ({})",
            beta.len(),
            design.p(),
            design.names().join(", ")
        )));
    }
    let params = ModelParams {
        eta: cfg.get("eta", 0.1)?,
        zeta: cfg.get("zeta", 0.245)?,
        tau2: cfg.get("tau2", 0.4)?,
        beta,
    };
    let spec = SimulationSpec {
        seed,
        burn_in: cfg.get("burn_in", SimulationSpec::DEFAULT_BURN_IN)?,
    };
    let (panel, latent) = simulate(&car, &params, &design, spec)?;
    let out = out_dir(cfg);
    io::write_counts(out.join("counts.csv"), &panel)?;
    io::write_field(out.join("latent.csv"), &latent, "y")?;
    io::write_graph(out.join("graph.txt"), car.graph())?;
    let extra = [
        ("locations", n.to_string()),
        ("weeks", weeks.to_string()),
        ("seed", seed.to_string()),
        ("burn_in", spec.burn_in.to_string()),
        ("eta", params.eta.to_string()),
        ("zeta", params.zeta.to_string()),
        ("tau2", params.tau2.to_string()),
        ("beta", format!("{:?}", params.beta)),
    ];
    io::write_text(out.join("manifest.txt"), &manifest("simulate", cfg, &extra))?;
    Ok(format!(
        "simulated {n} locations x {weeks} weeks into {}\n",
        out.display()
    ))
}

fn newton_options(cfg: &Config) -> Result<NewtonOptions> {
    let d = NewtonOptions::default();
    Ok(NewtonOptions {
        grad_tol: cfg.get("newton.grad_tol", d.grad_tol)?,
        max_iter: cfg.get("newton.max_iter", d.max_iter)?,
        rel_step: cfg.get("newton.rel_step", d.rel_step)?,
        max_step: d.max_step,
    })
}

fn mcmc_options(cfg: &Config, seed: u64) -> Result<McmcOptions> {
    let d = McmcOptions::default();
    Ok(McmcOptions {
        n_chains: cfg.get("mcmc.chains", d.n_chains)?,
        n_iter: cfg.get("mcmc.iter", d.n_iter)?,
        seed,
        ..d
    })
}

pub fn fit_cmd(cfg: &Config) -> Result<String> {
    cfg.check_keys(&keys(&[
        &GRAPH_KEYS,
        &DATA_KEYS,
        &PRIOR_KEYS,
        &[
            "method",
            "newton.grad_tol",
            "newton.max_iter",
            "newton.rel_step",
            "grid",
            "grid.spacing",
            "grid.cutoff",
            "grid.max_points",
            "latent",
            "level",
            "mcmc.chains",
            "mcmc.iter",
            "seed",
            "out",
        ],
    ]))?;
    let car = structure(cfg)?;
    let (panel, design) = data(cfg, &car)?;
    let priors = priors(cfg)?;
    let mut problem = Problem::new(&panel, &design, &car, &priors)?;
    if !cfg.get("include_priors", true)? {
        problem = problem.likelihood_only();
    }
    let out = out_dir(cfg);
    let method = cfg.str("method").unwrap_or("xla");
    let started = Instant::now();
    let result = if method == "mcmc" {
        fit_mcmc(cfg, &problem, &out)
    } else {
        fit_laplace(cfg, &problem, method.parse()?, &out)
    };
    let report = match result {
        Ok(r) => r,
        Err(e) => {
            io::write_text(out.join("failure.txt"), &format!("{e}\n"))?;
            return Err(e);
        }
    };
    io::write_text(out.join("report.txt"), &report)?;
    io::write_text(
        out.join("timing.txt"),
        &format!("seconds = {:.3}\n", started.elapsed().as_secs_f64()),
    )?;
    io::write_text(
        out.join("manifest.txt"),
        &manifest("fit", cfg, &[("locations", car.n_locations().to_string()), ("weeks", panel.n_times().to_string())]),
    )?;
    Ok(report)
}

fn fit_laplace(cfg: &Config, problem: &Problem<'_>, method: Method, out: &Path) -> Result<String> {
    let mut fit = maximize_posterior(problem, method, None, newton_options(cfg)?)?;
    let level: f64 = cfg.get("level", 0.95)?;
    let intervals = secar::inference::credible_intervals(&fit, level);
    let mut r = format!(
        "method = {method}\nposterior = {}\nlog_posterior = {:.6}\niterations = {}\nfallback_steps = {}\n",
        if problem.include_priors { "posterior mode" } else { "likelihood (priors dropped)" },
        fit.log_posterior,
        fit.iterations,
        fit.fallback_steps
    );
    r.push_str(&fmt_params(&fit.theta_hat, problem.design.names()));
    match &intervals {
        Ok(ivs) => {
            let _ = writeln!(r, "\n{:.0}% credible intervals", 100.0 * level);
            for iv in ivs {
                let _ = writeln!(r, "{} = {:.6} ({:.6}, {:.6})", iv.name, iv.estimate, iv.lower, iv.upper);
            }
        }
        Err(e) => {
            let _ = writeln!(r, "\nno credible intervals: {e}");
        }
    }
    if cfg.get("grid", true)? && intervals.is_ok() {
        let d = GridSpec::default();
        let spec = GridSpec {
            spacing: cfg.get("grid.spacing", d.spacing)?,
            cutoff: cfg.get("grid.cutoff", d.cutoff)?,
            max_points: cfg.get("grid.max_points", d.max_points)?,
        };
        fit = explore_grid(&fit, problem, spec)?;
        io::write_grid(out.join("grid.csv"), &fit)?;
        let _ = writeln!(r, "\ngrid_points = {}\ngrid_truncated = {}", fit.grid.len(), fit.grid_truncated);
        let seed: u64 = cfg.get("seed", 1)?;
        let e = effective_parameters(&fit, problem, 100, seed)?;
        let _ = writeln!(
            r,
            "effective_parameters = {:.3}\nobservations_per_parameter = {:.3}",
            e.pd, e.ratio
        );
        if cfg.get("latent", false)? {
            let m = latent_marginal(&fit, problem)?;
            io::write_field(out.join("latent_mean.csv"), &m.mean, "mean")?;
            io::write_field(out.join("latent_variance.csv"), &m.variance, "variance")?;
        }
    }
    Ok(r)
}

fn fit_mcmc(cfg: &Config, problem: &Problem<'_>, out: &Path) -> Result<String> {
    let seed = seed(cfg)?;
    let run = run_chains(problem, None, mcmc_options(cfg, seed)?)?;
    io::write_samples(out.join("samples.csv"), &run)?;
    let mut r = format!(
        "method = mcmc\nchains = {}\ndraws = {}\ndivergences = {}\n\nparameter mean sd q2.5 q97.5 mcse rhat ess\n",
        run.chains.len(),
        run.n_draws(),
        run.diagnostics.divergences
    );
    for s in run.summary()? {
        let _ = writeln!(
            r,
            "{} {:.6} {:.6} {:.6} {:.6} {:.6} {:.4} {:.1}",
            s.name, s.mean, s.sd, s.lower, s.upper, s.mcse, s.rhat, s.ess
        );
    }
    for (c, a) in run.diagnostics.acceptance.iter().enumerate() {
        let _ = writeln!(
            r,
            "chain {c} acceptance: latent {:.3}, theta {:.3} / {:.3}",
            a.latent, a.theta_centered, a.theta_whitened
        );
    }
    if let Some(e) = run.deviance {
        let _ = writeln!(
            r,
            "effective_parameters = {:.3}\nobservations_per_parameter = {:.3}",
            e.pd, e.ratio
        );
    }
    Ok(r)
}

pub fn residuals_cmd(cfg: &Config) -> Result<String> {
    cfg.check_keys(&keys(&[&GRAPH_KEYS, &DATA_KEYS, &["fit_dir", "draws", "seed", "out"]]))?;
    let seed = seed(cfg)?;
    let car = structure(cfg)?;
    let (panel, design) = data(cfg, &car)?;
    let fit_dir = PathBuf::from(cfg.require("fit_dir")?);
    let n_draws: usize = cfg.get("draws", 100)?;
    let grid = fit_dir.join("grid.csv");
    let samples = fit_dir.join("samples.csv");
    let draws = if grid.exists() {
        draws_from_weighted(&io::read_grid(&grid)?, n_draws, seed)?
    } else if samples.exists() {
        let all = io::read_samples(&samples)?;
        let step = (all.len() / n_draws.max(1)).max(1);
        all.into_iter().step_by(step).take(n_draws).collect()
    } else {
        return Err(Error::Config(format!(
            "{} has neither grid.csv nor samples.csv; run fit first",
            fit_dir.display()
        )));
    };
    let res = pit_residuals(&panel, &design, &car, &draws, seed)?;
    let out = out_dir(cfg);
    io::write_residuals(out.join("residuals.csv"), &panel, &res)?;
    let by_loc = res.by_location();
    io::write_location_means(out.join("residuals_by_location.csv"), &by_loc)?;
    let ks = ks_uniform(res.pooled());
    let mean = res.pooled().iter().sum::<f64>() / res.pooled().len().max(1) as f64;
    let summary = format!(
        "cells = {}\ndraws = {}\nmean_u = {mean:.4}\nks_statistic = {:.5}\nks_p_value = {:.4}\nuniform_at_0.01 = {}\n",
        res.pooled().len(),
        draws.len(),
        ks.statistic,
        ks.p_value,
        ks.p_value >= 0.01
    );
    io::write_text(out.join("residuals_summary.txt"), &summary)?;
    Ok(summary)
}

fn parse_cells(text: &str) -> Result<Vec<(f64, f64)>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|cell| {
            let bad = || Error::Config(format!("cell {cell:?} is not eta:tau2"));
            let (a, b) = cell.split_once(':').ok_or_else(bad)?;
            Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
        })
        .collect()
}

pub fn bias_study_cmd(cfg: &Config) -> Result<String> {
    cfg.check_keys(&[
        "cells",
        "replicates",
        "rows",
        "cols",
        "weeks",
        "zeta",
        "beta0",
        "methods",
        "seed",
        "mcmc.chains",
        "mcmc.iter",
        "out",
    ])?;
    let seed = seed(cfg)?;
    let d = BiasStudyConfig::default();
    let config = BiasStudyConfig {
        cells: cfg.str("cells").map(parse_cells).transpose()?.unwrap_or(d.cells),
        replicates: cfg.get("replicates", d.replicates)?,
        rows: cfg.get("rows", d.rows)?,
        cols: cfg.get("cols", d.cols)?,
        n_times: cfg.get("weeks", d.n_times)?,
        zeta: cfg.get("zeta", d.zeta)?,
        beta0: cfg.get("beta0", d.beta0)?,
        methods: cfg.list::<StudyMethod>("methods")?.unwrap_or(d.methods),
        seed,
        mcmc: mcmc_options(cfg, seed)?,
    };
    let report = bias_study(&config)?;
    let out = out_dir(cfg);
    io::write_bias_study(
        out.join("bias_replicates.csv"),
        out.join("bias_summary.csv"),
        out.join("bias_timing.csv"),
        &report,
    )?;
    let mut r = String::from("eta tau2 method fits failures mean_tau2 rel_bias_tau2 rel_bias_eta\n");
    for s in &report.summaries {
        let _ = writeln!(
            r,
            "{} {} {} {} {} {:.4} {:+.4} {}",
            s.eta,
            s.tau2,
            s.method,
            s.fits,
            s.failures,
            s.mean_tau2,
            s.rel_bias_tau2,
            s.rel_bias_eta.map_or("-".to_string(), |b| format!("{b:+.4}"))
        );
    }
    r.push_str("\npreferred method (cheapest with relative bias within 15%)\n");
    for ((eta, tau2), m) in &report.preferred {
        let _ = writeln!(r, "eta = {eta}, tau2 = {tau2}: {}", m.map_or("none of the methods run".into(), |m| m.to_string()));
    }
    io::write_text(out.join("bias_report.txt"), &r)?;
    io::write_text(out.join("manifest.txt"), &manifest("bias-study", cfg, &[]))?;
    Ok(r)
}

/// Hop distance from `source` to every location.
fn hop_distances(graph: &SpatialGraph, source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; graph.n_locations()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(i) = queue.pop_front() {
        let d = dist[i].unwrap_or(0);
        for &j in graph.neighbors(i) {
            if dist[j].is_none() {
                dist[j] = Some(d + 1);
                queue.push_back(j);
            }
        }
    }
    dist
}

pub fn corr_cmd(cfg: &Config) -> Result<String> {
    cfg.check_keys(&keys(&[&GRAPH_KEYS, &["eta", "zeta", "tau2", "beta0", "out"]]))?;
    let car = structure(cfg)?;
    let params = ModelParams::intercept_only(
        cfg.get("eta", 0.1)?,
        cfg.get("zeta", 0.245)?,
        cfg.get("tau2", 0.4)?,
        cfg.get("beta0", 0.0)?,
    );
    let c = correlation_matrix(&params, &car)?;
    let graph = car.graph();
    let n = graph.n_locations();
    let mut by_distance: Vec<(f64, usize)> = Vec::new();
    let mut rows = String::from("location_i,location_j,distance,correlation\n");
    for i in 0..n {
        let dist = hop_distances(graph, i);
        for j in i..n {
            let d = dist[j];
            if let Some(d) = d {
                if by_distance.len() <= d {
                    by_distance.resize(d + 1, (0.0, 0));
                }
                by_distance[d].0 += c[(i, j)];
                by_distance[d].1 += 1;
            }
            let _ = writeln!(
                rows,
                "{},{},{},{}",
                i + 1,
                j + 1,
                d.map_or(String::new(), |d| d.to_string()),
                c[(i, j)]
            );
        }
    }
    let mut r = String::from("distance pairs mean_correlation\n");
    for (d, (sum, k)) in by_distance.iter().enumerate() {
        let _ = writeln!(r, "{d} {k} {:.6}", sum / *k as f64);
    }
    if let Some(out) = cfg.path("out") {
        io::write_text(out.join("corr.csv"), &rows)?;
        io::write_text(out.join("corr_by_distance.txt"), &r)?;
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_parse() {
        assert_eq!(parse_cells("0.1:0.4, 0.4:.6").unwrap(), vec![(0.1, 0.4), (0.4, 0.6)]);
        assert!(parse_cells("0.1-0.4").is_err());
    }

    #[test]
    fn hop_distance_on_torus() {
        let g = build_torus_lattice(4, 4).unwrap();
        let d = hop_distances(&g, 0);
        assert_eq!(d[1], Some(1));
        assert_eq!(d[5], Some(2));
        assert_eq!(d[10], Some(4));
    }
}
