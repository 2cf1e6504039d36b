mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use secar::graph::SpatialGraph;
use secar::inference::Problem;
use secar::mcmc::{log_joint, mala_log_proposal, run_chains, rw_log_ratio, McmcOptions};
use secar::model::{g_gradient, linear_predictor, simulate, SimulationSpec};
use secar::{build_torus_lattice, CarStructure, CountPanel, CovariateDesign, Field, ModelParams, PriorSpec};

#[test]
fn log_joint_matches_dense_computation() {
    let car = CarStructure::new(build_torus_lattice(3, 4).unwrap());
    let design = CovariateDesign::intercept_only(12, 5);
    let priors = PriorSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for k in 0..100 {
        let params = ModelParams::intercept_only(
            rng.random_range(0.0..0.9),
            rng.random_range(-0.3..0.24),
            rng.random_range(0.1..2.0),
            rng.random_range(-1.0..1.5),
        );
        let (panel, _) = simulate(&car, &params, &design, SimulationSpec::new(k)).unwrap();
        let problem = Problem::new(&panel, &design, &car, &priors).unwrap();
        let y = Field::from_time_major(12, 5, (0..60).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let alpha = linear_predictor(&design, &params.beta).unwrap();
        let expect = common::dense_log_likelihood(&car, &panel, &params, &alpha, &y) + priors.log_density(&params, &car);
        let got = log_joint(&problem, &params, &y).unwrap();
        assert!((got - expect).abs() < 1e-10 * expect.abs().max(1.0), "{got} vs {expect}");
    }
}

#[test]
fn log_joint_is_minus_infinity_outside_support() {
    let car = CarStructure::new(build_torus_lattice(3, 3).unwrap());
    let design = CovariateDesign::intercept_only(9, 2);
    let panel = CountPanel::new(9, vec![1; 9], vec![2; 18]).unwrap();
    let priors = PriorSpec::default();
    let problem = Problem::new(&panel, &design, &car, &priors).unwrap();
    let y = Field::zeros(9, 2);
    for params in [
        ModelParams::intercept_only(1.2, 0.1, 0.5, 0.0),
        ModelParams::intercept_only(0.3, 0.3, 0.5, 0.0),
        ModelParams::intercept_only(0.3, 0.1, -0.5, 0.0),
    ] {
        assert_eq!(log_joint(&problem, &params, &y).unwrap(), f64::NEG_INFINITY);
    }
}

/// `pi(x) q(x -> y) a(x -> y)` in logs, with Metropolis-Hastings acceptance.
fn log_flow(lp_x: f64, lp_y: f64, lq_xy: f64, lq_yx: f64) -> f64 {
    lp_x + lq_xy + (lp_y + lq_yx - lp_x - lq_xy).min(0.0)
}

#[test]
fn random_walk_kernel_satisfies_detailed_balance() {
    let car = CarStructure::new(build_torus_lattice(3, 3).unwrap());
    let design = CovariateDesign::intercept_only(9, 3);
    let truth = ModelParams::intercept_only(0.3, 0.1, 0.5, 0.4);
    let (panel, y) = simulate(&car, &truth, &design, SimulationSpec::new(2)).unwrap();
    let priors = PriorSpec::default();
    let problem = Problem::new(&panel, &design, &car, &priors).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let a = ModelParams::intercept_only(rng.random_range(0.05..0.9), rng.random_range(-0.2..0.2), rng.random_range(0.1..1.5), 0.4);
        let b = ModelParams::intercept_only(rng.random_range(0.05..0.9), rng.random_range(-0.2..0.2), rng.random_range(0.1..1.5), 0.4);
        let (la, lb) = (log_joint(&problem, &a, &y).unwrap(), log_joint(&problem, &b, &y).unwrap());
        let forward = la + rw_log_ratio(la, lb).min(0.0);
        let backward = lb + rw_log_ratio(lb, la).min(0.0);
        assert!((forward - backward).abs() < 1e-12 * la.abs().max(1.0));
    }
}

#[test]
fn langevin_kernel_satisfies_detailed_balance() {
    let car = CarStructure::new(build_torus_lattice(3, 3).unwrap());
    let design = CovariateDesign::intercept_only(9, 1);
    let params = ModelParams::intercept_only(0.3, 0.1, 0.5, 0.4);
    let (panel, y0) = simulate(&car, &params, &design, SimulationSpec::new(6)).unwrap();
    let priors = PriorSpec::default();
    let problem = Problem::new(&panel, &design, &car, &priors).unwrap();
    let alpha = linear_predictor(&design, &params.beta).unwrap();
    let target = |y: &Field| log_joint(&problem, &params, y).unwrap();
    let grad = |y: &Field| -> Vec<f64> {
        g_gradient(y, &panel, &params, &alpha, &car).unwrap().as_slice().iter().map(|g| -g).collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mass: Vec<f64> = (0..9).map(|_| rng.random_range(0.2..1.0)).collect();
    let eps = 0.4;
    for _ in 0..200 {
        let noise = |rng: &mut ChaCha8Rng| -> Field {
            Field::from_time_major(9, 1, y0.as_slice().iter().map(|v| v + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
        };
        let (x, to) = (noise(&mut rng), noise(&mut rng));
        let (gx, gy) = (grad(&x), grad(&to));
        let lq_xy = mala_log_proposal(x.as_slice(), &gx, to.as_slice(), &mass, eps);
        let lq_yx = mala_log_proposal(to.as_slice(), &gy, x.as_slice(), &mass, eps);
        let (lx, ly) = (target(&x), target(&to));
        let diff = log_flow(lx, ly, lq_xy, lq_yx) - log_flow(ly, lx, lq_yx, lq_xy);
        assert!(diff.abs() < 1e-12 * lx.abs().max(1.0), "{diff}");
    }
}

#[test]
fn langevin_proposal_is_the_stated_gaussian() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..50 {
        let d = 4;
        let from: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let m: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..2.0)).collect();
        let eps: f64 = rng.random_range(0.05..1.0);
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let normal = |x: &[f64]| -> f64 {
            (0..d)
                .map(|k| {
                    let mean = from[k] + 0.5 * eps * eps * m[k] * g[k];
                    let var = eps * eps * m[k];
                    -0.5 * (x[k] - mean).powi(2) / var
                })
                .sum()
        };
        let got = mala_log_proposal(&from, &g, &a, &m, eps) - mala_log_proposal(&from, &g, &b, &m, eps);
        assert!((got - (normal(&a) - normal(&b))).abs() < 1e-10);
    }
}

#[test]
fn without_data_the_sampler_returns_the_prior() {
    let car = CarStructure::new(SpatialGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap());
    let panel = CountPanel::empty(4);
    let design = CovariateDesign::intercept_only(4, 0);
    let priors = PriorSpec::default();
    let problem = Problem::new(&panel, &design, &car, &priors).unwrap();
    let opts = McmcOptions {
        n_chains: 4,
        n_iter: 6000,
        seed: 17,
        ..McmcOptions::default()
    };
    let run = run_chains(&problem, None, opts).unwrap();
    let names = run.names();
    let b = car.zeta_bounds();
    for (name, range) in [("eta", (0.0, 1.0)), ("zeta", (b.lower, b.upper))] {
        let j = names.iter().position(|n| n == name).unwrap();
        let mut draws: Vec<f64> = run.chain_values(j).into_iter().flatten().collect();
        draws.sort_by(f64::total_cmp);
        let ess = run.diagnostics.ess[j];
        // uniform quantiles; standard error of a quantile is sqrt(p(1-p)/ess)
        for p in [0.1, 0.25, 0.5, 0.75, 0.9] {
            let q = secar::mcmc::quantile(&draws, p);
            let expect = range.0 + p * (range.1 - range.0);
            let se = (p * (1.0 - p) / ess).sqrt() * (range.1 - range.0);
            assert!((q - expect).abs() < 4.0 * se, "{name} quantile {p}: {q} vs {expect}, ess {ess}");
        }
    }
}
