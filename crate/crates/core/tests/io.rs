use std::sync::Arc;

use figp_inverse::figp::FitSettings;
use figp_inverse::inverse::Field;
use figp_inverse::io::{read_field_csv, write_grid_csv, write_image_csv, Images, InputSpec, TrainingData};
use figp_inverse::synthetic::{make_benchmark, SyntheticSolver};
use figp_inverse::{realize, sobol, Emulator, Fidelity, FitOptions, FunctionExpr, FunctionSample, NodeSet};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fitted(fidelity: Fidelity) -> Emulator {
    let solver = SyntheticSolver::new(6, 2.5, 40, 0.3).unwrap();
    let bench = make_benchmark(&solver, 1).unwrap();
    let nodes = Arc::new(sobol(2, 30).unwrap());
    let inputs: Vec<_> = bench.training.iter().map(|g| realize(g, &nodes).unwrap()).collect();
    let options = FitOptions {
        fidelity,
        settings: FitSettings {
            starts: 2,
            ..FitSettings::default()
        },
        ..FitOptions::default()
    };
    Emulator::fit(nodes, &inputs, &bench.y_high, Some(&bench.y_low), &options).unwrap().0
}

fn probes(nodes: &NodeSet) -> Vec<FunctionSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    (0..8)
        .map(|_| {
            let (a, b): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let v = nodes.iter().map(|x| 1.0 + a * x[0] - b * x[1] * x[1]).collect();
            FunctionSample::from_values(v, nodes).unwrap()
        })
        .collect()
}

#[test]
fn model_file_round_trip_preserves_predictions() {
    for fidelity in [Fidelity::Single, Fidelity::Multi] {
        let model = fitted(fidelity);
        let text = model.to_json().unwrap();
        let back = Emulator::from_json(&text).unwrap();
        assert_eq!(back.fidelity(), fidelity);
        assert_eq!(back.to_json().unwrap(), text, "{fidelity:?}: second write differs");
        let gs = probes(model.nodes());
        for g in gs.iter().chain(model.training_inputs()) {
            let (m1, v1) = model.predict_scores(g).unwrap();
            let (m2, v2) = back.predict_scores(g).unwrap();
            for (a, b) in m1.iter().zip(m2.iter()).chain(v1.iter().zip(v2.iter())) {
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{fidelity:?}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn model_files_are_saved_and_loaded() {
    let model = fitted(Fidelity::Single);
    let dir = std::env::temp_dir().join(format!("figp-io-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.json");
    model.save(&path).unwrap();
    let back = Emulator::load(&path).unwrap();
    assert_eq!(back.basis(), model.basis());
    std::fs::remove_dir_all(&dir).unwrap();

    assert!(Emulator::load(&dir.join("absent.json")).is_err());
    assert!(Emulator::from_json("{\"format\": 1}").is_err());
}

#[test]
fn training_data_accepts_expressions_and_values() {
    let nodes = sobol(2, 8).unwrap();
    let values: Vec<f64> = nodes.iter().map(|x| x[0] + x[1]).collect();
    let data = TrainingData {
        dim: 2,
        nodes_n: 8,
        inputs: vec![
            InputSpec::Expr {
                expr: FunctionExpr::parse("x1+x2").unwrap(),
            },
            InputSpec::Values { values: values.clone() },
        ],
        outputs_high: Images::from_matrix(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0])),
        outputs_low: None,
    };
    let text = serde_json::to_string(&data).unwrap();
    assert!(text.contains("\"nodes_N\":8"));
    let back: TrainingData = serde_json::from_str(&text).unwrap();
    assert_eq!(back, data);
    let r = back.resolve().unwrap();
    assert_eq!(r.inputs[0], r.inputs[1]);
    assert_eq!(r.y_high[(1, 0)], 3.0);

    let mut bad = data.clone();
    bad.inputs[1] = InputSpec::Values {
        values: values[..7].to_vec(),
    };
    assert!(bad.resolve().is_err());
}

#[test]
fn field_csv_round_trip() {
    let points = vec![0.0, 0.0, 0.0, 1.0, 1.0, 0.5];
    let field = Field {
        mean: DVector::from_vec(vec![0.1, -2.5e-7, 3.0]),
        var: DVector::from_vec(vec![1e-12, 0.0, 0.25]),
    };
    let dir = std::env::temp_dir().join(format!("figp-csv-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let grid = dir.join("grid.csv");
    write_grid_csv(std::fs::File::create(&grid).unwrap(), &points, 2, &field).unwrap();
    let (coords, back) = read_field_csv(&grid).unwrap();
    assert_eq!(back, field);
    assert_eq!(coords.concat(), points);

    let image = dir.join("image.csv");
    write_image_csv(std::fs::File::create(&image).unwrap(), &field).unwrap();
    let (_, back) = read_field_csv(&image).unwrap();
    assert_eq!(back, field);
    std::fs::remove_dir_all(&dir).unwrap();
}
