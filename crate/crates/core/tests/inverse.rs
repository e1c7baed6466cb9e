use std::sync::Arc;

use figp_inverse::figp::FitSettings;
use figp_inverse::inverse::{
    posterior_g, posterior_ys, run_mcmc, InitStrategy, InverseProblem, McmcSettings, PosteriorChain, Priors, ProjectedObservation,
    SamplerHooks,
};
use figp_inverse::synthetic::{make_benchmark, SyntheticSolver};
use figp_inverse::{realize, sobol, Emulator, FitOptions, MaternKernel, PcaBasis, Smoothness};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

mod common;
use common::{dense_log_density, LN_2PI};

fn random_orthonormal(m: usize, l: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(m, l, |_, _| StandardNormal.sample(rng));
    a.qr().q()
}

#[test]
fn woodbury_likelihood_matches_dense_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut cases = 0;
    for m in [16, 64, 256] {
        for l in [1, 3, 5] {
            for _ in 0..6 {
                let u = random_orthonormal(m, l, &mut rng);
                let basis = PcaBasis::from_parts(u.clone(), vec![1.0 / l as f64; l], 0.9).unwrap();
                let s2 = 10f64.powf(rng.random_range(-6.0..0.0));
                let mean = DVector::from_fn(l, |_, _| rng.random_range(-2.0..2.0));
                let var = DVector::from_fn(l, |_, _| 10f64.powf(rng.random_range(-6.0..0.0)));
                let y = &u * DVector::from_fn(l, |_, _| rng.random_range(-2.0..2.0))
                    + DVector::from_fn(m, |_, _| 0.1 * rng.random::<f64>());
                let fast = ProjectedObservation::new(&y, &basis).unwrap().log_likelihood(&mean, &var, s2).unwrap();
                let dense = dense_log_density(&y, &u, &mean, &var, s2);
                let rel = (fast - dense).abs() / dense.abs();
                assert!(rel <= 1e-8, "m {m} L {l} σ² {s2:e}: {fast} vs {dense} ({rel:.2e})");
                cases += 1;
            }
        }
    }
    assert!(cases >= 50);
}

#[test]
fn zero_emulator_variance_gives_a_spherical_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (m, l) = (40, 3);
    let u = random_orthonormal(m, l, &mut rng);
    let basis = PcaBasis::from_parts(u.clone(), vec![0.4, 0.3, 0.3], 0.9).unwrap();
    let y = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
    let mean = DVector::from_vec(vec![0.5, -0.2, 0.1]);
    let s2 = 0.3;
    let got = ProjectedObservation::new(&y, &basis)
        .unwrap()
        .log_likelihood(&mean, &DVector::zeros(l), s2)
        .unwrap();
    let r = &y - &u * &mean;
    let expected = -0.5 * (m as f64 * (LN_2PI + s2.ln()) + r.norm_squared() / s2);
    assert!((got - expected).abs() <= 1e-10 * expected.abs());
}

/// A small fitted emulator on `n_nodes` Sobol nodes plus a benchmark observation.
fn small_problem(n_nodes: usize, mcmc: McmcSettings) -> InverseProblem {
    let solver = SyntheticSolver::new(6, 2.5, 40, 0.3).unwrap();
    let bench = make_benchmark(&solver, 3).unwrap();
    let nodes = Arc::new(sobol(2, n_nodes).unwrap());
    let inputs: Vec<_> = bench.training.iter().map(|g| realize(g, &nodes).unwrap()).collect();
    let options = FitOptions {
        settings: FitSettings {
            starts: 2,
            ..FitSettings::default()
        },
        ..FitOptions::default()
    };
    let (emulator, _) = Emulator::fit(nodes, &inputs, &bench.y_high, None, &options).unwrap();
    InverseProblem::new(bench.y_p, Arc::new(emulator), Priors::default(), mcmc).unwrap()
}

fn settings(burn_in: usize, samples: usize, thin: usize, seed: u64) -> McmcSettings {
    McmcSettings {
        burn_in,
        samples,
        thin,
        seed,
        ..McmcSettings::default()
    }
}

#[test]
fn zero_step_keeps_the_input_fixed() {
    let mut p = small_problem(10, settings(50, 100, 1, 1));
    p.mcmc.c_g = 0.0;
    let chain = run_mcmc(&p).unwrap();
    let first = chain.g.row(0).into_owned();
    for k in 0..chain.len() {
        assert_eq!(chain.g.row(k), first);
    }
    assert_eq!(chain.acceptance.g, 1.0);
}

#[test]
fn conjugate_scale_draws_match_the_inverse_gamma() {
    let mut p = small_problem(10, settings(1, 5000, 1, 5));
    p.hooks = SamplerHooks {
        flat_likelihood: true,
        freeze_g: true,
        freeze_sigma_e2: true,
        freeze_eta: true,
        freeze_tau_g2: false,
    };
    let chain = run_mcmc(&p).unwrap();
    assert_eq!(chain.len(), 5000);

    // independent Φ⁻¹ quadratic form at the frozen state
    let g = chain.g.row(0).transpose();
    let eta: Vec<f64> = chain.eta.row(0).iter().copied().collect();
    let mut phi = MaternKernel::new(eta, Smoothness::FiveHalves).unwrap().gram(&chain.nodes).unwrap();
    for i in 0..phi.nrows() {
        phi[(i, i)] += 1e-8;
    }
    let quad = g.dot(&phi.cholesky().unwrap().solve(&g));
    let shape = p.priors.a2 + 0.5 * g.len() as f64;
    let rate = p.priors.b2 + 0.5 * quad;
    let mean = rate / (shape - 1.0);
    let var = rate * rate / ((shape - 1.0).powi(2) * (shape - 2.0));

    let n = chain.len() as f64;
    let m = chain.tau_g2.iter().sum::<f64>() / n;
    let v = chain.tau_g2.iter().map(|t| (t - m).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((m - mean).abs() <= 0.05 * mean, "mean {m} vs {mean}");
    assert!((v - var).abs() <= 0.05 * var, "variance {v} vs {var}");
}

#[test]
fn flat_target_chain_samples_the_prior() {
    // with the likelihood switched off and (σ², η, τ²) frozen, the g-block is a
    // Metropolis walk whose stationary law is the GP prior N(0, τ²Φ)
    let mut p = small_problem(10, settings(2000, 100_000, 50, 11));
    p.hooks = SamplerHooks {
        flat_likelihood: true,
        freeze_g: false,
        freeze_sigma_e2: true,
        freeze_eta: true,
        freeze_tau_g2: true,
    };
    p.init = InitStrategy::Prior;
    let chain = run_mcmc(&p).unwrap();
    let tau2 = chain.tau_g2[0];
    let sd = (tau2 * (1.0 + 1e-8)).sqrt();
    let normal = Normal::new(0.0, sd).unwrap();
    let bins = 20;
    let mut counts = vec![0usize; bins];
    for k in 0..chain.len() {
        let u = normal.cdf(chain.g[(k, 0)]);
        counts[((u * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let expected = chain.len() as f64 / bins as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p_value = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(stat);
    assert!(p_value > 0.01, "χ² = {stat}, p = {p_value}, counts {counts:?}");
}

#[test]
fn chains_are_deterministic_and_positive() {
    let p = small_problem(10, settings(200, 300, 3, 21));
    let a = run_mcmc(&p).unwrap();
    let b = run_mcmc(&p).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(a.g.as_slice()), bits(b.g.as_slice()));
    assert_eq!(bits(&a.sigma_e2), bits(&b.sigma_e2));
    assert_eq!(bits(&a.tau_g2), bits(&b.tau_g2));
    assert_eq!(bits(a.eta.as_slice()), bits(b.eta.as_slice()));
    assert_eq!(a.len(), 100);
    assert!(a.sigma_e2.iter().chain(&a.tau_g2).chain(a.eta.iter()).all(|v| *v > 0.0));

    let mut q = p.clone();
    q.mcmc.seed = 22;
    let c = run_mcmc(&q).unwrap();
    assert_ne!(bits(a.g.as_slice()), bits(c.g.as_slice()));
}

fn single_draw(chain: &PosteriorChain, k: usize) -> PosteriorChain {
    let mut one = chain.clone();
    one.iterations = vec![chain.iterations[k]];
    one.g = chain.g.rows(k, 1).into_owned();
    one.sigma_e2 = vec![chain.sigma_e2[k]];
    one.tau_g2 = vec![chain.tau_g2[k]];
    one.eta = chain.eta.rows(k, 1).into_owned();
    one.score_mean = chain.score_mean.rows(k, 1).into_owned();
    one.score_var = chain.score_var.rows(k, 1).into_owned();
    one
}

#[test]
fn input_posterior_interpolates_at_nodes() {
    let p = small_problem(12, settings(100, 40, 2, 4));
    let chain = run_mcmc(&p).unwrap();
    let nodes = chain.nodes.as_flat().to_vec();

    let one = single_draw(&chain, 5);
    let f = posterior_g(&one, &nodes).unwrap();
    for i in 0..chain.nodes.count() {
        assert!((f.mean[i] - one.g[(0, i)]).abs() <= 1e-6 * one.tau_g2[0].sqrt().max(1.0));
        assert!(f.var[i] <= 1e-6 * one.tau_g2[0]);
    }

    // over the whole chain the node variance is the spread of g_N[i]
    let f = posterior_g(&chain, &nodes).unwrap();
    let s = chain.len() as f64;
    for i in 0..chain.nodes.count() {
        let col = chain.g.column(i);
        let mean = col.sum() / s;
        let spread = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / s;
        assert!((f.mean[i] - mean).abs() <= 1e-6 * mean.abs().max(1.0));
        assert!((f.var[i] - spread).abs() <= 1e-6 * spread.max(1e-3) + 1e-6 * chain.tau_g2.iter().cloned().fold(0.0, f64::max));
    }
}

#[test]
fn zero_scale_draws_have_no_variance() {
    let p = small_problem(12, settings(50, 20, 1, 8));
    let chain = run_mcmc(&p).unwrap();
    let mut flat = chain.clone();
    let row = chain.g.row(0).into_owned();
    for k in 0..flat.len() {
        flat.g.set_row(k, &row);
        flat.tau_g2[k] = 0.0;
        flat.eta.set_row(k, &chain.eta.row(0).into_owned());
    }
    let f = posterior_g(&flat, &figp_inverse::inverse::regular_grid(7)).unwrap();
    assert!(f.var.iter().all(|v| *v == 0.0));
}

#[test]
fn input_posterior_matches_dense_conditioning() {
    let p = small_problem(12, settings(50, 20, 1, 9));
    let chain = run_mcmc(&p).unwrap();
    let one = single_draw(&chain, 3);
    let eta: Vec<f64> = one.eta.row(0).iter().copied().collect();
    let tau2 = one.tau_g2[0];
    let kernel = MaternKernel::new(eta, Smoothness::FiveHalves).unwrap();
    let mut phi = kernel.gram(&one.nodes).unwrap();
    for i in 0..phi.nrows() {
        phi[(i, i)] += 1e-8;
    }
    let lu = phi.lu();
    let g = one.g.row(0).transpose();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let points: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
    let f = posterior_g(&one, &points).unwrap();
    for (j, x) in points.chunks_exact(2).enumerate() {
        let k = kernel.cross(x, &one.nodes).unwrap();
        let w = lu.solve(&k).unwrap();
        let mean = w.dot(&g);
        let var = tau2 * (1.0 - w.dot(&k)).max(0.0);
        assert!((f.mean[j] - mean).abs() <= 1e-8 * mean.abs().max(1.0), "{} vs {mean}", f.mean[j]);
        assert!((f.var[j] - var).abs() <= 1e-8 * tau2, "{} vs {var}", f.var[j]);
    }
}

#[test]
fn points_outside_the_domain_are_rejected() {
    let p = small_problem(10, settings(10, 5, 1, 2));
    let chain = run_mcmc(&p).unwrap();
    assert!(posterior_g(&chain, &[0.5, 1.2]).is_err());
    assert!(posterior_g(&chain, &[0.5, 0.5, 0.1]).is_err());
}

#[test]
fn image_posterior_matches_monte_carlo() {
    let p = small_problem(12, settings(100, 200, 2, 13));
    let chain = run_mcmc(&p).unwrap();
    let field = posterior_ys(&chain, &p.emulator).unwrap();
    let u = p.emulator.basis().components();
    let (m, l) = u.shape();

    // ten Gaussian score draws per retained state, mapped through U
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let reps = 10 * chain.len();
    let mut sum = DVector::zeros(m);
    let mut sum_sq = DVector::zeros(m);
    for r in 0..reps {
        let k = r % chain.len();
        let s = DVector::from_fn(l, |i, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            chain.score_mean[(k, i)] + chain.score_var[(k, i)].sqrt() * z
        });
        let y = u * s;
        sum_sq += y.map(|v| v * v);
        sum += y;
    }
    let n = reps as f64;
    let mc_mean = &sum / n;
    let mc_var = DVector::from_fn(m, |i, _| sum_sq[i] / n - mc_mean[i].powi(2));
    let mut within = 0;
    for i in 0..m {
        let se = (field.var[i] / n).sqrt();
        let z = (mc_mean[i] - field.mean[i]).abs() / se.max(1e-300);
        assert!(z < 5.0, "pixel {i}: {} vs {} ({z:.1} SE)", mc_mean[i], field.mean[i]);
        if z <= 3.0 {
            within += 1;
        }
        assert!((mc_var[i] - field.var[i]).abs() <= 0.2 * field.var[i] + 1e-15);
    }
    assert!(within as f64 >= 0.99 * m as f64, "{within} of {m} within 3 SE");
}

#[test]
fn single_draw_image_variance_lies_in_the_component_span() {
    let p = small_problem(12, settings(50, 20, 1, 6));
    let chain = run_mcmc(&p).unwrap();
    let one = single_draw(&chain, 0);
    let field = posterior_ys(&one, &p.emulator).unwrap();
    let u = p.emulator.basis().components();
    let v = one.score_var.row(0).transpose();
    let m_row = one.score_mean.row(0).transpose();
    let expected_var = u.map(|x| x * x) * &v;
    let expected_mean = u * &m_row;
    assert!((field.var - expected_var).amax() <= 1e-14);
    assert!((field.mean - expected_mean).amax() <= 1e-14);
}
