use std::sync::Arc;

use figp_inverse::figp::{select_kernel, FitSettings};
use figp_inverse::{sobol, FigpModel, FunctionSample, KernelVariant, NodeSet};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{input, random_inputs, refit_loocv, response};

fn nodes() -> Arc<NodeSet> {
    Arc::new(sobol(2, 64).unwrap())
}

fn dataset(seed: u64, n: usize) -> (Arc<NodeSet>, Vec<FunctionSample>, DVector<f64>) {
    let nodes = nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = random_inputs(&nodes, n, &mut rng);
    let scores = DVector::from_iterator(n, inputs.iter().map(response));
    (nodes, inputs, scores)
}

#[test]
fn closed_form_loocv_matches_refitting() {
    let settings = FitSettings::default();
    for seed in 0..4 {
        let (nodes, inputs, scores) = dataset(seed, 10);
        for variant in KernelVariant::ALL {
            let model = FigpModel::fit(&nodes, &inputs, &scores, variant, &settings).unwrap();
            let closed = model.loocv().unwrap();
            let oracle = refit_loocv(&model);
            let rel = (closed - oracle).abs() / oracle;
            assert!(rel <= 1e-6, "seed {seed} {variant:?}: {closed} vs {oracle} ({rel:.2e})");
        }
    }
}

#[test]
fn fitted_models_interpolate_training_scores() {
    let settings = FitSettings::default();
    let (nodes, inputs, scores) = dataset(11, 6);
    for variant in KernelVariant::ALL {
        let model = FigpModel::fit(&nodes, &inputs, &scores, variant, &settings).unwrap();
        for (g, &s) in inputs.iter().zip(scores.iter()) {
            let p = model.predict(g).unwrap();
            assert!((p.mean - s).abs() <= 1e-4 * s.abs().max(1.0), "{variant:?}: {} vs {s}, nugget {:e} tau2 {:e} params {:?}", p.mean, model.nugget(), model.tau2(), model.correlation_params());
        }
    }
}

#[test]
fn selection_keeps_the_smaller_leave_one_out_error() {
    let settings = FitSettings::default();
    for seed in 20..23 {
        let (nodes, inputs, scores) = dataset(seed, 10);
        let sel = select_kernel(&nodes, &inputs, &scores, &settings).unwrap();
        let expected = if sel.linear.loocv <= sel.nonlinear.loocv {
            KernelVariant::Linear
        } else {
            KernelVariant::Nonlinear
        };
        assert_eq!(sel.chosen, expected);
        assert_eq!(sel.chosen_model().variant(), expected);
    }
}

#[test]
fn prediction_beats_the_constant_mean_out_of_sample() {
    // inputs vary in three directions only, so eight runs cover the family
    let settings = FitSettings::default();
    let nodes = nodes();
    let family = |rng: &mut ChaCha8Rng, n: usize| -> Vec<FunctionSample> {
        (0..n)
            .map(|_| {
                let mut c = [0.0; 8];
                c[0] = rng.random_range(0.5..1.5);
                c[1] = rng.random_range(-0.5..0.5);
                c[3] = rng.random_range(-0.5..0.5);
                input(&nodes, c)
            })
            .collect()
    };
    let inputs = family(&mut ChaCha8Rng::seed_from_u64(5), 12);
    let scores = DVector::from_iterator(inputs.len(), inputs.iter().map(response));
    let tests = family(&mut ChaCha8Rng::seed_from_u64(99), 30);
    let model = select_kernel(&nodes, &inputs, &scores, &settings).unwrap().into_chosen();
    let mean = scores.mean();
    let (mut sse, mut sse0) = (0.0, 0.0);
    for g in &tests {
        let t = response(g);
        sse += (model.predict(g).unwrap().mean - t).powi(2);
        sse0 += (mean - t).powi(2);
    }
    assert!(sse < 0.1 * sse0, "{sse} vs {sse0}");
}

#[test]
fn more_training_data_never_increases_variance() {
    let settings = FitSettings::default();
    let (nodes, inputs, scores) = dataset(7, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tests = random_inputs(&nodes, 20, &mut rng);
    for variant in KernelVariant::ALL {
        let full = FigpModel::fit(&nodes, &inputs, &scores, variant, &settings).unwrap();
        let mut prev: Option<Vec<f64>> = None;
        for n in [3, 5, 8] {
            let m = FigpModel::from_parts(
                full.kernel().clone(),
                full.mu(),
                full.nugget(),
                inputs[..n].to_vec(),
                scores.rows(0, n).into_owned(),
            )
            .unwrap();
            let vars: Vec<f64> = tests.iter().map(|g| m.predict(g).unwrap().var).collect();
            if let Some(p) = &prev {
                for (a, b) in p.iter().zip(&vars) {
                    assert!(*b <= a + 1e-10 * full.tau2(), "{variant:?} n = {n}: {b} > {a}");
                }
            }
            prev = Some(vars);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn predictive_variance_is_bounded_by_the_prior(seed in 0u64..1000, c in prop::array::uniform8(-2.0..2.0f64),
                                                   nonlinear in any::<bool>()) {
        let (nodes, inputs, scores) = dataset(seed, 8);
        let variant = if nonlinear { KernelVariant::Nonlinear } else { KernelVariant::Linear };
        let settings = FitSettings { starts: 2, max_evals: 60, ..FitSettings::default() };
        let model = FigpModel::fit(&nodes, &inputs, &scores, variant, &settings).unwrap();
        let g = input(&nodes, c);
        let p = model.predict(&g).unwrap();
        let prior = model.kernel().eval(&g, &g).unwrap();
        prop_assert!(p.var >= 0.0);
        prop_assert!(p.var <= prior + 1e-10, "{} > {}", p.var, prior);
        prop_assert!(p.mean.is_finite());
    }
}
