//! The subcommands. Each reads its inputs from `out_dir` and writes its artifacts there.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use greenfn_core::pde::{make_dataset, Dataset, PdeProblem};
use greenfn_core::spectral::{convergence_study, fit_decay_rate, mercer_eig, mercer_eig_gram, StudyTable};
use greenfn_core::stochastic::add_noise;
use greenfn_core::training::{mse, penalized_risk, rse_per_sample, solve_exact_weights, train, TrainHistory};
use greenfn_core::{FunctionSample, Grid, GreensModel, KernelSpec, RngState};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Mesh, Solver};
use crate::error::{CliError, Result};
use crate::io::{fmt_f64, read_json, read_matrix, write_json, write_matrix, write_table};

pub const TRAIN_INPUTS: &str = "train_inputs.csv";
pub const TRAIN_OUTPUTS: &str = "train_outputs.csv";
/// Noiseless training outputs, written only when `noise > 0`.
pub const TRAIN_OUTPUTS_CLEAN: &str = "train_outputs_clean.csv";
pub const TEST_INPUTS: &str = "test_inputs.csv";
pub const TEST_OUTPUTS: &str = "test_outputs.csv";
pub const DATASET: &str = "dataset.json";
pub const MODEL: &str = "model.json";
/// `W` on the training product grid, `m_x` rows by `m_y` columns.
pub const WEIGHTS_G: &str = "weights_g.csv";
/// The bias weights `w` as a single row; written only when the model has a bias kernel.
pub const WEIGHTS_B: &str = "weights_b.csv";
pub const HISTORY: &str = "history.csv";
pub const METRICS: &str = "metrics.json";
pub const EXTRAPOLATION: &str = "extrapolation.csv";
pub const SPECTRA: &str = "spectra.json";
pub const GREENS: &str = "greens.csv";
pub const BIAS: &str = "bias.csv";

/// Test sets draw from an independent seed so resizing the training set leaves them alone.
pub fn test_seed(seed: u64) -> u64 {
    seed ^ 0x5DEE_CE66_D1CE_4E5B
}

fn noise_seed(seed: u64) -> u64 {
    seed ^ 0x2545_F491_4F6C_DD1D
}

fn path(cfg: &ExperimentConfig, file: &str) -> PathBuf {
    cfg.out_dir.join(file)
}

fn ensure_out(cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| CliError::io(&cfg.out_dir, e))
}

pub fn grids(problem: &PdeProblem) -> Result<(Arc<Grid>, Arc<Grid>)> {
    Ok((Arc::new(problem.input_grid()?), Arc::new(problem.output_grid()?)))
}

/// Untrained model on the configured training grids.
pub fn build_model(cfg: &ExperimentConfig) -> Result<GreensModel> {
    let (x, y) = grids(&cfg.problem)?;
    Ok(GreensModel::with_null_spaces(
        cfg.kernel_g.clone(),
        cfg.kernel_b.clone(),
        cfg.null_g.clone(),
        cfg.null_b.clone(),
        x,
        y,
        cfg.lambda,
        cfg.rho,
    )?)
}

/// Training data (noisy if configured), its clean targets when noisy, and clean test data.
pub struct Data {
    pub train: Dataset,
    pub train_clean: Option<Dataset>,
    pub test: Dataset,
}

pub fn make_data(cfg: &ExperimentConfig) -> Result<Data> {
    let clean = make_dataset(&cfg.problem, &cfg.sampler, cfg.n_train, 0.0, &RngState::new(cfg.seed))?;
    let test = make_dataset(&cfg.problem, &cfg.sampler, cfg.n_test, 0.0, &RngState::new(test_seed(cfg.seed)))?;
    if cfg.noise == 0.0 {
        return Ok(Data {
            train: clean,
            train_clean: None,
            test,
        });
    }
    let noisy = clean
        .outputs
        .iter()
        .enumerate()
        .map(|(i, u)| add_noise(u, cfg.noise, &mut RngState::stream(noise_seed(cfg.seed), i as u64)))
        .collect::<greenfn_core::Result<Vec<FunctionSample>>>()?;
    let train = Dataset::new(clean.x_grid.clone(), clean.y_grid.clone(), clean.inputs.clone(), noisy, cfg.seed)?;
    Ok(Data {
        train,
        train_clean: Some(clean),
        test,
    })
}

/// Fit with the configured solver. The history of the exact solver has a single entry.
pub fn fit(cfg: &ExperimentConfig, model: GreensModel, data: &Dataset) -> Result<(GreensModel, TrainHistory)> {
    match cfg.solver {
        Solver::Adam => {
            let mut tc = cfg.train.clone();
            tc.seed = cfg.seed.wrapping_add(cfg.train.seed);
            Ok(train(model, data, &tc)?)
        }
        Solver::Exact => {
            let mut model = model;
            model.set_params(solve_exact_weights(&model, data)?)?;
            let (x, u) = (data.input_matrix(), data.output_matrix());
            let preds = model.assemble_training().forward_matrix(&x)?;
            let per = rse_per_sample(&preds, &u, model.y_grid())?;
            let m = mse(&preds, &u, model.y_grid())?;
            let history = TrainHistory {
                risk: vec![penalized_risk(&model, &x, &u)?],
                mse: vec![m],
                rse: vec![per.iter().sum::<f64>() / per.len() as f64],
                wall_time: 0.0,
            };
            Ok((model, history))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub n: usize,
    pub mse: f64,
    pub rse: f64,
    pub rse_per_sample: Vec<f64>,
    /// Index of the sample with the smallest relative error.
    pub best: usize,
    pub worst: usize,
}

pub fn split_metrics(preds: &DMatrix<f64>, targets: &DMatrix<f64>, y_grid: &Grid) -> Result<SplitMetrics> {
    let per = rse_per_sample(preds, targets, y_grid)?;
    let argby = |better: fn(f64, f64) -> bool| {
        per.iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if better(v, per[best]) { i } else { best })
    };
    Ok(SplitMetrics {
        n: per.len(),
        mse: mse(preds, targets, y_grid)?,
        rse: per.iter().sum::<f64>() / per.len() as f64,
        best: argby(|a, b| a < b),
        worst: argby(|a, b| a > b),
        rse_per_sample: per,
    })
}

pub fn dataset_metrics(model: &GreensModel, data: &Dataset) -> Result<SplitMetrics> {
    let preds = model.assemble_training().forward_matrix(&data.input_matrix())?;
    split_metrics(&preds, &data.output_matrix(), model.y_grid())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub name: String,
    pub seed: u64,
    pub penalty: f64,
    /// Penalized empirical risk on the (possibly noisy) training set.
    pub risk: f64,
    pub train: SplitMetrics,
    /// Training predictions against noiseless targets, present when `noise > 0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_clean: Option<SplitMetrics>,
    pub test: SplitMetrics,
}

pub fn metrics(cfg: &ExperimentConfig, model: &GreensModel, data: &Data) -> Result<Metrics> {
    Ok(Metrics {
        name: cfg.name.clone(),
        seed: cfg.seed,
        penalty: model.penalty(),
        risk: penalized_risk(model, &data.train.input_matrix(), &data.train.output_matrix())?,
        train: dataset_metrics(model, &data.train)?,
        train_clean: data.train_clean.as_ref().map(|d| dataset_metrics(model, d)).transpose()?,
        test: dataset_metrics(model, &data.test)?,
    })
}

fn matrix_of(rows: &[FunctionSample], m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m, |i, j| rows[i].values[j])
}

fn write_dataset(cfg: &ExperimentConfig, d: &Dataset, inputs: Option<&str>, outputs: &str) -> Result<()> {
    if let Some(f) = inputs {
        write_matrix(&path(cfg, f), &matrix_of(&d.inputs, d.x_grid.len()))?;
    }
    write_matrix(&path(cfg, outputs), &matrix_of(&d.outputs, d.y_grid.len()))
}

fn read_dataset(cfg: &ExperimentConfig, inputs: &str, outputs: &str, seed: u64) -> Result<Dataset> {
    let (x, y) = grids(&cfg.problem)?;
    let (fi, fo) = (path(cfg, inputs), path(cfg, outputs));
    let (rows_in, rows_out) = (read_matrix(&fi)?, read_matrix(&fo)?);
    let width = |rows: &[Vec<f64>], m: usize, p: &Path| -> Result<()> {
        match rows.iter().position(|r| r.len() != m) {
            Some(i) => Err(CliError::Malformed {
                path: p.to_path_buf(),
                message: format!("row {i} has {} values, the grid has {m} points", rows[i].len()),
            }),
            None => Ok(()),
        }
    };
    width(&rows_in, x.len(), &fi)?;
    width(&rows_out, y.len(), &fo)?;
    Ok(Dataset::from_rows(x, y, &rows_in, &rows_out, seed)?)
}

/// The datasets written by `generate`.
pub fn load_data(cfg: &ExperimentConfig) -> Result<Data> {
    let train = read_dataset(cfg, TRAIN_INPUTS, TRAIN_OUTPUTS, cfg.seed)?;
    let train_clean = if cfg.noise > 0.0 {
        Some(read_dataset(cfg, TRAIN_INPUTS, TRAIN_OUTPUTS_CLEAN, cfg.seed)?)
    } else {
        None
    };
    let test = read_dataset(cfg, TEST_INPUTS, TEST_OUTPUTS, test_seed(cfg.seed))?;
    Ok(Data {
        train,
        train_clean,
        test,
    })
}

/// Metadata half of a saved model; the weight fields live in `WEIGHTS_G` / `WEIGHTS_B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub name: String,
    pub lambda: f64,
    pub rho: f64,
    pub d: Vec<f64>,
    pub q: Vec<f64>,
}

#[derive(Serialize)]
struct ModelMeta<'a> {
    #[serde(flatten)]
    file: ModelFile,
    kernel_g: &'a KernelSpec,
    kernel_b: Option<&'a KernelSpec>,
    x_grid: &'a Grid,
    y_grid: &'a Grid,
}

fn save_model(cfg: &ExperimentConfig, model: &GreensModel) -> Result<()> {
    let p = model.params();
    let (mx, my) = (model.x_grid().len(), model.y_grid().len());
    write_matrix(&path(cfg, WEIGHTS_G), &DMatrix::from_row_slice(mx, my, &p.w_g))?;
    if !p.w_b.is_empty() {
        write_matrix(&path(cfg, WEIGHTS_B), &DMatrix::from_row_slice(1, p.w_b.len(), &p.w_b))?;
    }
    write_json(
        &path(cfg, MODEL),
        &ModelMeta {
            file: ModelFile {
                name: cfg.name.clone(),
                lambda: model.lambda,
                rho: model.rho,
                d: p.d,
                q: p.q,
            },
            kernel_g: model.kernel_g(),
            kernel_b: model.kernel_b(),
            x_grid: model.x_grid(),
            y_grid: model.y_grid(),
        },
    )
}

/// Rebuild the trained model from `model.json` and the weight CSVs.
pub fn load_model(cfg: &ExperimentConfig) -> Result<GreensModel> {
    let file: ModelFile = read_json(&path(cfg, MODEL))?;
    let mut model = build_model(cfg)?;
    let wg_path = path(cfg, WEIGHTS_G);
    let w_g: Vec<f64> = read_matrix(&wg_path)?.concat();
    let (mx, my) = (model.x_grid().len(), model.y_grid().len());
    if w_g.len() != mx * my {
        return Err(CliError::Malformed {
            path: wg_path,
            message: format!("{} weights, the training grids need {mx} x {my}", w_g.len()),
        });
    }
    let w_b = if model.kernel_b().is_some() {
        read_matrix(&path(cfg, WEIGHTS_B))?.concat()
    } else {
        Vec::new()
    };
    model.set_params(greenfn_core::estimator::Params {
        w_g,
        w_b,
        d: file.d,
        q: file.q,
    })?;
    Ok(model)
}

#[derive(Serialize)]
struct DatasetMeta<'a> {
    name: &'a str,
    seed: u64,
    test_seed: u64,
    n_train: usize,
    n_test: usize,
    noise: f64,
    problem: &'a PdeProblem,
    sampler: &'a greenfn_core::pde::SamplerSpec,
    x_grid: &'a Grid,
    y_grid: &'a Grid,
}

pub fn generate(cfg: &ExperimentConfig) -> Result<Data> {
    ensure_out(cfg)?;
    let data = make_data(cfg)?;
    write_dataset(cfg, &data.train, Some(TRAIN_INPUTS), TRAIN_OUTPUTS)?;
    if let Some(clean) = &data.train_clean {
        write_dataset(cfg, clean, None, TRAIN_OUTPUTS_CLEAN)?;
    }
    write_dataset(cfg, &data.test, Some(TEST_INPUTS), TEST_OUTPUTS)?;
    write_json(
        &path(cfg, DATASET),
        &DatasetMeta {
            name: &cfg.name,
            seed: cfg.seed,
            test_seed: test_seed(cfg.seed),
            n_train: cfg.n_train,
            n_test: cfg.n_test,
            noise: cfg.noise,
            problem: &cfg.problem,
            sampler: &cfg.sampler,
            x_grid: &data.train.x_grid,
            y_grid: &data.train.y_grid,
        },
    )?;
    fs::write(path(cfg, "config.toml"), cfg.to_toml_string()).map_err(|e| CliError::io(&path(cfg, "config.toml"), e))?;
    Ok(data)
}

pub fn train_cmd(cfg: &ExperimentConfig) -> Result<(GreensModel, TrainHistory)> {
    let data = load_data(cfg)?;
    let (model, history) = fit(cfg, build_model(cfg)?, &data.train)?;
    ensure_out(cfg)?;
    save_model(cfg, &model)?;
    let rows: Vec<Vec<String>> = (0..history.risk.len())
        .map(|e| {
            vec![
                (e + 1).to_string(),
                fmt_f64(history.risk[e]),
                fmt_f64(history.mse[e]),
                fmt_f64(history.rse[e]),
            ]
        })
        .collect();
    write_table(&path(cfg, HISTORY), &["epoch", "risk", "mse", "rse"], &rows)?;
    Ok((model, history))
}

pub fn evaluate(cfg: &ExperimentConfig) -> Result<Metrics> {
    let model = load_model(cfg)?;
    let m = metrics(cfg, &model, &load_data(cfg)?)?;
    write_json(&path(cfg, METRICS), &m)?;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationRow {
    pub resolution: usize,
    pub time_points: usize,
    pub input_points: usize,
    pub output_points: usize,
    pub mse: f64,
    pub rse: f64,
}

/// Test RSE of `model` on fresh clean data at `mesh`, with the test seed of `cfg`.
pub fn extrapolate_to(cfg: &ExperimentConfig, model: &GreensModel, mesh: &Mesh) -> Result<ExtrapolationRow> {
    let problem = cfg.problem_at(mesh);
    let data = make_dataset(&problem, &cfg.sampler, cfg.n_test, 0.0, &RngState::new(test_seed(cfg.seed)))?;
    let assembled = model.assemble(data.x_grid.clone(), data.y_grid.clone())?;
    let preds = assembled.forward_matrix(&data.input_matrix())?;
    let s = split_metrics(&preds, &data.output_matrix(), &data.y_grid)?;
    Ok(ExtrapolationRow {
        resolution: problem.resolution,
        time_points: problem.time_points,
        input_points: data.x_grid.len(),
        output_points: data.y_grid.len(),
        mse: s.mse,
        rse: s.rse,
    })
}

pub fn extrapolate(cfg: &ExperimentConfig) -> Result<Vec<ExtrapolationRow>> {
    let model = load_model(cfg)?;
    let meshes = if cfg.extrapolate.is_empty() {
        vec![Mesh {
            resolution: cfg.problem.resolution,
            time_points: None,
        }]
    } else {
        cfg.extrapolate.clone()
    };
    let rows = meshes
        .iter()
        .map(|m| extrapolate_to(cfg, &model, m))
        .collect::<Result<Vec<_>>>()?;
    ensure_out(cfg)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.resolution.to_string(),
                r.time_points.to_string(),
                r.input_points.to_string(),
                r.output_points.to_string(),
                fmt_f64(r.mse),
                fmt_f64(r.rse),
            ]
        })
        .collect();
    write_table(
        &path(cfg, EXTRAPOLATION),
        &["resolution", "time_points", "input_points", "output_points", "mse", "rse"],
        &table,
    )?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decay {
    pub rate: f64,
    pub intercept: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub file: String,
    pub points: usize,
    pub eigenvalues: usize,
    pub decay: Option<Decay>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub gamma_rate: f64,
    pub exponent: f64,
    pub slope: Option<f64>,
    pub monotone_within_two_sigma: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectra {
    pub kernel_g: SpectrumSummary,
    pub kernel_b: Option<SpectrumSummary>,
    /// Empirical covariance of the generated training inputs, if present.
    pub inputs: Option<SpectrumSummary>,
    pub study: Option<StudySummary>,
}

fn write_spectrum(cfg: &ExperimentConfig, file: &str, points: usize, eigs: &[f64]) -> Result<SpectrumSummary> {
    let rows: Vec<Vec<String>> = eigs.iter().enumerate().map(|(k, v)| vec![(k + 1).to_string(), fmt_f64(*v)]).collect();
    write_table(&path(cfg, file), &["k", "eigenvalue"], &rows)?;
    let positive: Vec<f64> = eigs.iter().copied().take_while(|v| *v > 0.0).collect();
    Ok(SpectrumSummary {
        file: file.to_string(),
        points,
        eigenvalues: eigs.len(),
        decay: fit_decay_rate(&positive).ok().map(|d| Decay {
            rate: d.rate,
            intercept: d.intercept,
            residual: d.residual,
        }),
    })
}

/// Finest version of the training problem whose grid passes `fits`.
fn coarsened(cfg: &ExperimentConfig, fits: impl Fn(&Grid, &Grid) -> bool) -> Result<(Grid, Grid)> {
    let mut res = cfg.problem.resolution;
    loop {
        let p = cfg.problem_at(&Mesh {
            resolution: res,
            time_points: None,
        });
        let (x, y) = (p.input_grid()?, p.output_grid()?);
        if res <= 3 || fits(&x, &y) {
            return Ok((x, y));
        }
        res -= 1;
    }
}

fn kernel_spectrum(cfg: &ExperimentConfig, spec: &KernelSpec, grid: &Grid, file: &str) -> Result<SpectrumSummary> {
    let r = mercer_eig(spec, grid, cfg.spectra.top_k.min(grid.len()))?;
    write_spectrum(cfg, file, grid.len(), &r.eigenvalues)
}

pub fn spectra(cfg: &ExperimentConfig) -> Result<Spectra> {
    ensure_out(cfg)?;
    let cap = cfg.spectra.max_points;
    let (x, y) = coarsened(cfg, |x, y| x.len() * y.len() <= cap)?;
    let kernel_g = kernel_spectrum(cfg, &cfg.kernel_g, &Grid::product(&x, &y), "spectrum_kernel_g.csv")?;
    let kernel_b = match &cfg.kernel_b {
        Some(kb) => {
            let (_, y) = coarsened(cfg, |_, y| y.len() <= cap)?;
            Some(kernel_spectrum(cfg, kb, &y, "spectrum_kernel_b.csv")?)
        }
        None => None,
    };
    let inputs = if path(cfg, TRAIN_INPUTS).exists() {
        let d = read_dataset(cfg, TRAIN_INPUTS, TRAIN_OUTPUTS, cfg.seed)?;
        let f = d.input_matrix();
        let n = f.nrows() as f64;
        let mean = f.row_mean();
        let centered = DMatrix::from_fn(f.nrows(), f.ncols(), |i, j| f[(i, j)] - mean[j]);
        let cov = centered.tr_mul(&centered) / n;
        let r = mercer_eig_gram(&cov, d.x_grid.weights(), cfg.spectra.top_k.min(d.x_grid.len()))?;
        Some(write_spectrum(cfg, "spectrum_inputs.csv", d.x_grid.len(), &r.eigenvalues)?)
    } else {
        None
    };
    let study = match &cfg.study {
        Some(sc) => {
            let t = convergence_study(sc, &RngState::new(cfg.seed))?;
            write_study(cfg, &t)?;
            Some(StudySummary {
                gamma_rate: t.gamma_rate,
                exponent: t.exponent,
                slope: t.slope,
                monotone_within_two_sigma: t.monotone_within_two_sigma(),
            })
        }
        None => None,
    };
    let s = Spectra {
        kernel_g,
        kernel_b,
        inputs,
        study,
    };
    write_json(&path(cfg, SPECTRA), &s)?;
    Ok(s)
}

fn write_study(cfg: &ExperimentConfig, t: &StudyTable) -> Result<()> {
    let rows: Vec<Vec<String>> = t
        .rows
        .iter()
        .map(|r| vec![r.n.to_string(), fmt_f64(r.lambda), fmt_f64(r.mean_excess), fmt_f64(r.std_error)])
        .collect();
    write_table(&path(cfg, "study.csv"), &["n", "lambda", "mean_excess", "std_error"], &rows)
}

fn write_grid(cfg: &ExperimentConfig, file: &str, g: &Grid) -> Result<()> {
    let mut header: Vec<String> = (0..g.dims()).map(|a| format!("x{a}")).collect();
    header.push("weight".into());
    let rows: Vec<Vec<String>> = (0..g.len())
        .map(|i| {
            let mut r: Vec<String> = g.point(i).iter().map(|v| fmt_f64(*v)).collect();
            r.push(fmt_f64(g.weights()[i]));
            r
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(&path(cfg, file), &header, &rows)
}

/// Assembled Green's function (`m_x` rows by `m_y` columns), bias and both grids.
pub fn export(cfg: &ExperimentConfig) -> Result<()> {
    let model = load_model(cfg)?;
    ensure_out(cfg)?;
    let a = model.assemble_training();
    write_matrix(&path(cfg, GREENS), &a.g)?;
    write_matrix(&path(cfg, BIAS), &DMatrix::from_column_slice(a.beta.len(), 1, &a.beta))?;
    write_grid(cfg, "grid_x.csv", &a.x_grid)?;
    write_grid(cfg, "grid_y.csv", &a.y_grid)
}
