use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use figp_inverse::figp::FitSettings;
use figp_inverse::inverse::{field_metrics, posterior_g, posterior_ys, run_mcmc, Field, InverseProblem, Metrics};
use figp_inverse::io::{
    read_field_csv, read_json, write_chain_csv, write_grid_csv, write_image_csv, write_json, Images, InputSpec,
    Observation, TrainingData, Truth,
};
use figp_inverse::synthetic::{make_benchmark, SyntheticSolver};
use figp_inverse::{Emulator, Error, FitOptions, Result};
use nalgebra::DVector;
use serde::Serialize;

use crate::config::RunConfig;

const GRID_FILE: &str = "g_grid.csv";
const IMAGE_FILE: &str = "ys.csv";
const CHAIN_FILE: &str = "chain.csv";
const SUMMARY_FILE: &str = "summary.json";
const METRICS_FILE: &str = "metrics.json";
const REPORT_FILE: &str = "fit_report.json";

/// Largest evaluation grid `posterior_g` is asked for.
const MAX_GRID_POINTS: usize = 2_000_000;

fn refuse_overwrite(paths: &[&Path], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    if let Some(p) = paths.iter().find(|p| p.exists()) {
        return Err(Error::Config(format!("{} already exists; pass --force to overwrite", p.display())));
    }
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn generate(cfg: &RunConfig, force: bool) -> Result<()> {
    let dir = &cfg.paths.data;
    if !force && dir.is_dir() && fs::read_dir(dir)?.next().is_some() {
        return Err(Error::Config(format!(
            "{} is not empty; pass --force to overwrite",
            dir.display()
        )));
    }
    let b = &cfg.benchmark;
    let solver = SyntheticSolver::new(b.sensors, b.max_frequency, b.quadrature, b.beta)
        .map_err(|e| Error::Config(format!("benchmark: {e}")))?;
    let bench = make_benchmark(&solver, cfg.seed)?;

    let train = TrainingData {
        dim: 2,
        nodes_n: cfg.fit.nodes,
        inputs: bench.training.iter().map(|e| InputSpec::Expr { expr: e.clone() }).collect(),
        outputs_high: Images::from_matrix(&bench.y_high),
        outputs_low: Some(Images::from_matrix(&bench.y_low)),
    };
    ensure_dir(dir)?;
    write_json(&dir.join("train.json"), &train)?;
    write_json(&dir.join("observation.json"), &Observation { y_p: bench.y_p.iter().copied().collect() })?;
    write_json(
        &dir.join("truth.json"),
        &Truth {
            g: bench.test.clone(),
            y_s: bench.y_test.iter().copied().collect(),
        },
    )?;
    println!(
        "wrote {} training inputs, observation (m = {}) and truth to {}",
        bench.training.len(),
        solver.m(),
        dir.display()
    );
    Ok(())
}

pub fn fit(cfg: &RunConfig, force: bool) -> Result<()> {
    let model_path = cfg.paths.model();
    let report_path = cfg.paths.output.join(REPORT_FILE);
    refuse_overwrite(&[&model_path, &report_path], force)?;

    let data: TrainingData = read_json(&cfg.paths.train())?;
    let t = data.resolve()?;
    let options = FitOptions {
        threshold: cfg.fit.threshold,
        kernel: cfg.fit.kernel.forced(),
        fidelity: cfg.fit.fidelity,
        settings: FitSettings {
            starts: cfg.fit.starts,
            ..FitSettings::default()
        },
    };
    let (emulator, report) = Emulator::fit(t.nodes, &t.inputs, &t.y_high, t.y_low.as_ref(), &options)?;

    ensure_dir(&cfg.paths.output)?;
    if let Some(dir) = model_path.parent() {
        ensure_dir(dir)?;
    }
    emulator.save(&model_path)?;
    write_json(&report_path, &report)?;
    print!("{report}");
    println!("model written to {}", model_path.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct AcceptanceSummary {
    g: Option<f64>,
    sigma_e2: Option<f64>,
    eta: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Summary {
    fidelity: figp_inverse::Fidelity,
    seed: u64,
    burn_in: usize,
    samples: usize,
    thin: usize,
    retained: usize,
    paper_literal: bool,
    acceptance: AcceptanceSummary,
    /// Step sizes after adaptation, in the order g, σ², η.
    final_steps: [f64; 3],
    posterior_mean: ParameterMeans,
    runtime_seconds: f64,
}

#[derive(Debug, Serialize)]
struct ParameterMeans {
    sigma_e2: f64,
    tau_g2: f64,
    eta: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct MetricsFile {
    g_rmse: f64,
    g_score: f64,
    /// RMSE of predicting `g ≡ 0`, for reference.
    g_rmse_zero: f64,
    ys_rmse: f64,
    ys_score: f64,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `k^d` tensor grid on the unit cube including the boundary, `x1` slowest.
fn tensor_grid(k: usize, d: usize) -> Result<Vec<f64>> {
    let total = k
        .checked_pow(d as u32)
        .filter(|&t| t <= MAX_GRID_POINTS)
        .ok_or_else(|| Error::Config(format!("output.grid: {k}^{d} evaluation points is too many")))?;
    let h = 1.0 / (k - 1) as f64;
    let mut out = Vec::with_capacity(total * d);
    for idx in 0..total {
        let mut rest = idx;
        let mut point = vec![0.0; d];
        for j in (0..d).rev() {
            point[j] = (rest % k) as f64 * h;
            rest /= k;
        }
        out.extend(point);
    }
    Ok(out)
}

pub fn invert(cfg: &RunConfig, force: bool) -> Result<()> {
    let out = &cfg.paths.output;
    let files: Vec<PathBuf> = [CHAIN_FILE, SUMMARY_FILE, GRID_FILE, IMAGE_FILE, METRICS_FILE]
        .iter()
        .map(|f| out.join(f))
        .collect();
    let truth_path = cfg.paths.truth();
    let scored = truth_path.exists();
    let guarded = if scored { &files[..] } else { &files[..4] };
    refuse_overwrite(&guarded.iter().map(PathBuf::as_path).collect::<Vec<_>>(), force)?;

    let emulator = Arc::new(Emulator::load(&cfg.paths.model())?);
    let obs: Observation = read_json(&cfg.paths.observation())?;
    let problem = InverseProblem::new(
        DVector::from_vec(obs.y_p),
        emulator.clone(),
        cfg.priors.priors(),
        cfg.mcmc_settings(),
    )?;
    let dim = emulator.nodes().dim();
    let grid = tensor_grid(cfg.output.grid, dim)?;

    let started = Instant::now();
    let chain = run_mcmc(&problem)?;
    let g_field = posterior_g(&chain, &grid)?;
    let ys_field = posterior_ys(&chain, &emulator)?;
    let runtime = started.elapsed().as_secs_f64();

    ensure_dir(out)?;
    write_chain_csv(create(&files[0])?, &chain)?;
    write_grid_csv(create(&files[2])?, &grid, dim, &g_field)?;
    write_image_csv(create(&files[3])?, &ys_field)?;
    let m = &problem.mcmc;
    let summary = Summary {
        fidelity: emulator.fidelity(),
        seed: m.seed,
        burn_in: m.burn_in,
        samples: m.samples,
        thin: m.thin,
        retained: chain.len(),
        paper_literal: m.paper_literal,
        acceptance: AcceptanceSummary {
            g: finite(chain.acceptance.g),
            sigma_e2: finite(chain.acceptance.sigma_e2),
            eta: finite(chain.acceptance.eta),
        },
        final_steps: chain.steps,
        posterior_mean: ParameterMeans {
            sigma_e2: mean(&chain.sigma_e2),
            tau_g2: mean(&chain.tau_g2),
            eta: (0..dim).map(|j| chain.eta.column(j).mean()).collect(),
        },
        runtime_seconds: runtime,
    };
    write_json(&files[1], &summary)?;
    println!(
        "{} draws retained; acceptance g {:.3}, sigma_e2 {:.3}, eta {:.3}; {:.1} s",
        chain.len(),
        chain.acceptance.g,
        chain.acceptance.sigma_e2,
        chain.acceptance.eta,
        runtime
    );

    if scored {
        let truth: Truth = read_json(&truth_path)?;
        let metrics = score(&truth, &grid, dim, &g_field, &ys_field)?;
        write_metrics(&files[4], &metrics)?;
    }
    Ok(())
}

fn score(truth: &Truth, points: &[f64], dim: usize, g: &Field, ys: &Field) -> Result<MetricsFile> {
    if truth.g.arity() > dim {
        return Err(Error::Data(format!("truth expression uses x{} on a {dim}-d domain", truth.g.arity())));
    }
    let g_true = points
        .chunks_exact(dim)
        .enumerate()
        .map(|(i, x)| truth.g.eval_at(x, i))
        .collect::<Result<Vec<f64>>>()?;
    let g_true = DVector::from_vec(g_true);
    if truth.y_s.len() != ys.mean.len() {
        return Err(Error::Data(format!(
            "truth image has length {} but the posterior image has length {}",
            truth.y_s.len(),
            ys.mean.len()
        )));
    }
    let Metrics { rmse: g_rmse, score: g_score } = field_metrics(&g_true, g)?;
    let Metrics { rmse: ys_rmse, score: ys_score } = field_metrics(&DVector::from_vec(truth.y_s.clone()), ys)?;
    Ok(MetricsFile {
        g_rmse,
        g_score,
        g_rmse_zero: (g_true.norm_squared() / g_true.len() as f64).sqrt(),
        ys_rmse,
        ys_score,
    })
}

fn write_metrics(path: &Path, m: &MetricsFile) -> Result<()> {
    write_json(path, m)?;
    println!(
        "g: RMSE {:.4} (zero predictor {:.4}), score {:.3}; ys: RMSE {:.5}, score {:.3}",
        m.g_rmse, m.g_rmse_zero, m.g_score, m.ys_rmse, m.ys_score
    );
    Ok(())
}

pub fn evaluate(cfg: &RunConfig, force: bool) -> Result<()> {
    let out = &cfg.paths.output;
    let metrics_path = out.join(METRICS_FILE);
    refuse_overwrite(&[&metrics_path], force)?;
    let truth: Truth = read_json(&cfg.paths.truth())?;
    let (coords, g) = read_field_csv(&out.join(GRID_FILE))?;
    let (_, ys) = read_field_csv(&out.join(IMAGE_FILE))?;
    let dim = coords.first().map_or(0, Vec::len);
    if dim == 0 || coords.iter().any(|c| c.len() != dim) {
        return Err(Error::Data(format!("{}: malformed grid coordinates", out.join(GRID_FILE).display())));
    }
    let points: Vec<f64> = coords.concat();
    let metrics = score(&truth, &points, dim, &g, &ys)?;
    write_metrics(&metrics_path, &metrics)
}
