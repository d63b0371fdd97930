//! The experiment drivers behind the CLI subcommands. Each cell derives its
//! own random streams from `(master seed, cell label)`, so a cell's results
//! are identical whether it runs alone, inside the full grid, or on a
//! different worker count; workers parallelize across cells only and rows
//! merge under a deterministic sort.

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;

use super::checkpoint::{arrays_into_model, load_checkpoint, model_to_arrays, save_checkpoint};
use super::config::ExperimentConfig;
use super::csv::{
    write_rows, HistogramRow, NormRow, ResultRow, HISTOGRAMS_HEADER, NORMS_HEADER, RESULTS_HEADER,
};
use super::idx::{load_idx, IdxData};
use crate::error::{Error, Result};
use crate::manifolds::{corrupt, gen_ground_truth, nmse, CorruptionMode};
use crate::models::{train, GenerativeModel, ModelKind, TrainConfig};
use crate::numkit::{DenseMatrix, RngStream};
use crate::probes::{count_nonzero_columns, sigma_z_stats};
use crate::rpca::{rpca_alm, RpcaOptions};

/// Everything one run produces, already written to disk.
pub struct RunOutputs {
    pub rows: Vec<ResultRow>,
    pub results_csv: PathBuf,
    pub histograms_csv: Option<PathBuf>,
    pub norms_csv: Option<PathBuf>,
}

fn nu_label(nu: f64) -> String {
    format!("{nu:.3}")
}

fn install_pool<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> T {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("worker pool");
    pool.install(job)
}

/// Outcome of training (or loading) one network model on one cell.
struct TrainedCell {
    model: GenerativeModel,
    wall: f64,
    from_cache: bool,
}

/// Train a model for a cell, or load it from the checkpoint cache when a
/// file from an identical configuration already exists. Fresh results are
/// saved back so later studies can reuse them.
#[allow(clippy::too_many_arguments)]
fn train_cell_model(
    cfg: &ExperimentConfig,
    cell: &RngStream,
    model_tag: &str,
    kind: ModelKind,
    latent: usize,
    train_cfg: &TrainConfig,
    x: &DenseMatrix,
    truth: Option<&DenseMatrix>,
) -> Result<TrainedCell> {
    let mut model = GenerativeModel::new(
        cfg.d,
        &cfg.hidden,
        latent,
        &cfg.hidden,
        kind,
        &cell.child(&format!("{model_tag}/init")),
    );
    let ckpt = cfg.out_dir.join("ckpt").join(format!(
        "{}_{}_{}_lat{}.ckpt",
        cell.label().replace('/', "_"),
        model_tag,
        cfg.cell_fingerprint(),
        latent
    ));
    if ckpt.is_file() {
        if let Ok(arrays) = load_checkpoint(&ckpt) {
            if arrays_into_model(&arrays, &mut model).is_ok() {
                return Ok(TrainedCell { model, wall: 0.0, from_cache: true });
            }
        }
    }
    let started = Instant::now();
    train(&mut model, x, train_cfg, truth)?;
    let wall = started.elapsed().as_secs_f64();
    save_checkpoint(&model_to_arrays(&model), &ckpt)?;
    Ok(TrainedCell { model, wall, from_cache: false })
}

fn network_row(
    cfg: &ExperimentConfig,
    experiment: &str,
    kappa: Option<usize>,
    nu: Option<f64>,
    model_tag: &str,
    rep: u64,
    trained: &TrainedCell,
    x: &DenseMatrix,
    truth: &DenseMatrix,
) -> Result<ResultRow> {
    let recon = trained.model.reconstruct_columns(x)?;
    let err = nmse(truth, &recon)?;
    let prune = count_nonzero_columns(trained.model.decoder_first_layer());
    let frac = if trained.model.kind == ModelKind::Vae {
        Some(sigma_z_stats(&trained.model, x)?.frac_below_0_1)
    } else {
        None
    };
    let _ = cfg;
    Ok(ResultRow {
        experiment: experiment.into(),
        kappa,
        nu,
        model: model_tag.into(),
        seed: rep,
        nmse: Some(err),
        nonzero_cols: Some(prune.nonzero),
        frac_var_below: frac,
        wall_clock_s: trained.wall,
        converged: true,
    })
}

fn failure_row(
    experiment: &str,
    kappa: Option<usize>,
    nu: Option<f64>,
    model_tag: &str,
    rep: u64,
    err: &Error,
) -> ResultRow {
    eprintln!("[{experiment}] cell k={kappa:?} nu={nu:?} model={model_tag} rep={rep} failed: {err}");
    ResultRow {
        experiment: experiment.into(),
        kappa,
        nu,
        model: model_tag.into(),
        seed: rep,
        nmse: None,
        nonzero_cols: None,
        frac_var_below: None,
        wall_clock_s: 0.0,
        converged: false,
    }
}

fn model_kind(tag: &str) -> Option<ModelKind> {
    match tag {
        "vae" | "vae_tau5" => Some(ModelKind::Vae),
        "ae_l2" => Some(ModelKind::AeL2),
        "ae_l1" => Some(ModelKind::AeL1),
        _ => None,
    }
}

/// One phase-transition cell: ground truth, corruption, then every
/// configured model against the same data.
fn phase_cell(cfg: &ExperimentConfig, kappa: usize, nu: f64, rep: u64) -> Vec<ResultRow> {
    let experiment = "phase";
    let root = RngStream::new(cfg.seed, experiment);
    // ground truth depends on (kappa, rep) only, so every nu reuses it
    let gt_stream = root.child(&format!("gt/k{kappa}/rep{rep}"));
    let gt = match gen_ground_truth(kappa, cfg.gen_hidden.0, cfg.gen_hidden.1, cfg.d, cfg.n, gt_stream.derive_seed()) {
        Ok(gt) => gt,
        Err(e) => {
            return cfg
                .models
                .iter()
                .map(|m| failure_row(experiment, Some(kappa), Some(nu), m, rep, &e))
                .collect()
        }
    };
    let cell = root.child(&format!("k{kappa}/nu{}/rep{rep}", nu_label(nu)));
    let corrupted = corrupt(&gt.l, nu, CorruptionMode::GaussianUnit, &cell.child("corrupt"));
    let x = &corrupted.x;

    let mut rows = Vec::new();
    for tag in &cfg.models {
        let row = match tag.as_str() {
            "rpca" => {
                let started = Instant::now();
                let opts = RpcaOptions {
                    lambda: cfg.rpca_lambda,
                    tol: cfg.rpca_tol,
                    max_iter: cfg.rpca_max_iter,
                };
                match rpca_alm(x, &opts) {
                    Ok(dec) => match nmse(&gt.l, &dec.l) {
                        Ok(err) => ResultRow {
                            experiment: experiment.into(),
                            kappa: Some(kappa),
                            nu: Some(nu),
                            model: tag.clone(),
                            seed: rep,
                            nmse: Some(err),
                            nonzero_cols: None,
                            frac_var_below: None,
                            wall_clock_s: started.elapsed().as_secs_f64(),
                            converged: dec.converged,
                        },
                        Err(e) => failure_row(experiment, Some(kappa), Some(nu), tag, rep, &e),
                    },
                    Err(e) => failure_row(experiment, Some(kappa), Some(nu), tag, rep, &e),
                }
            }
            "ae_l1" => {
                // the paper tunes this penalty per cell; do the same against
                // the known truth over the configured grid
                let mut best: Option<(f64, TrainedCell, f64)> = None;
                let mut failure: Option<Error> = None;
                for &c2 in &cfg.c2_l1_grid {
                    let mut tc = cfg.train;
                    tc.c2 = c2;
                    tc.seed = cell.child(&format!("{tag}/c2{c2}")).derive_seed();
                    match train_cell_model(cfg, &cell, &format!("{tag}_c2{c2}"), ModelKind::AeL1, cfg.latent, &tc, x, None)
                        .and_then(|t| {
                            let recon = t.model.reconstruct_columns(x)?;
                            let err = nmse(&gt.l, &recon)?;
                            Ok((err, t))
                        }) {
                        Ok((err, t)) => {
                            if best.as_ref().map_or(true, |(b, _, _)| err < *b) {
                                best = Some((err, t, c2));
                            }
                        }
                        Err(e) => failure = Some(e),
                    }
                }
                match best {
                    Some((_, trained, _)) => {
                        match network_row(cfg, experiment, Some(kappa), Some(nu), tag, rep, &trained, x, &gt.l) {
                            Ok(row) => row,
                            Err(e) => failure_row(experiment, Some(kappa), Some(nu), tag, rep, &e),
                        }
                    }
                    None => failure_row(
                        experiment,
                        Some(kappa),
                        Some(nu),
                        tag,
                        rep,
                        &failure.unwrap_or_else(|| Error::Config("empty c2_l1_grid".into())),
                    ),
                }
            }
            _ => match model_kind(tag) {
                Some(kind) => {
                    let mut tc = cfg.train;
                    if tag == "vae_tau5" {
                        tc.tau = 5;
                    }
                    tc.seed = cell.child(tag).derive_seed();
                    match train_cell_model(cfg, &cell, tag, kind, cfg.latent, &tc, x, None) {
                        Ok(trained) => {
                            match network_row(cfg, experiment, Some(kappa), Some(nu), tag, rep, &trained, x, &gt.l) {
                                Ok(row) => row,
                                Err(e) => failure_row(experiment, Some(kappa), Some(nu), tag, rep, &e),
                            }
                        }
                        Err(e) => failure_row(experiment, Some(kappa), Some(nu), tag, rep, &e),
                    }
                }
                None => failure_row(
                    experiment,
                    Some(kappa),
                    Some(nu),
                    tag,
                    rep,
                    &Error::Config(format!("unknown model {tag:?}")),
                ),
            },
        };
        rows.push(row);
    }
    rows
}

/// Fig.-1-style grid: for every `(kappa, nu, repeat)` train each model on
/// the same corrupted manifold and record reconstruction NMSE.
pub fn run_phase_transition(cfg: &ExperimentConfig) -> Result<RunOutputs> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for &kappa in &cfg.kappa_grid {
        for &nu in &cfg.nu_grid {
            for rep in 0..cfg.repeats as u64 {
                cells.push((kappa, nu, rep));
            }
        }
    }
    let mut rows: Vec<ResultRow> = install_pool(cfg.workers, || {
        cells.par_iter().flat_map(|&(k, nu, rep)| phase_cell(cfg, k, nu, rep)).collect()
    });
    rows.sort_by_key(|r| r.sort_key());
    let results_csv = cfg.out_dir.join("results.csv");
    write_rows(&results_csv, RESULTS_HEADER, &rows.iter().map(|r| r.to_csv()).collect::<Vec<_>>())?;
    Ok(RunOutputs { rows, results_csv, histograms_csv: None, norms_csv: None })
}

/// Mean nonzero-column counts over the `(encoder depth, decoder depth)`
/// grid, plus the underlying rows.
pub struct PruneStudy {
    pub outputs: RunOutputs,
    pub ne_grid: Vec<usize>,
    pub nd_grid: Vec<usize>,
    /// `(model, ne, nd) -> mean nonzero columns`.
    pub mean_counts: Vec<(String, usize, usize, f64)>,
}

fn prune_cell(
    cfg: &ExperimentConfig,
    ne: usize,
    nd: usize,
    rep: u64,
) -> (Vec<ResultRow>, Vec<NormRow>) {
    let experiment = "prune";
    let root = RngStream::new(cfg.seed, experiment);
    let gt_stream = root.child(&format!("gt/rep{rep}"));
    let gt = match gen_ground_truth(
        cfg.kappa_true,
        cfg.gen_hidden.0,
        cfg.gen_hidden.1,
        cfg.d,
        cfg.n,
        gt_stream.derive_seed(),
    ) {
        Ok(gt) => gt,
        Err(e) => {
            let rows = cfg
                .models
                .iter()
                .map(|m| {
                    failure_row(experiment, Some(cfg.kappa_true), None, &format!("{m}_ne{ne}_nd{nd}"), rep, &e)
                })
                .collect();
            return (rows, Vec::new());
        }
    };
    let cell = root.child(&format!("ne{ne}/nd{nd}/rep{rep}"));
    let width = cfg.hidden.first().copied().unwrap_or(64);
    let enc_hidden = vec![width; ne];
    let dec_hidden = vec![width; nd];

    let mut rows = Vec::new();
    let mut norm_rows = Vec::new();
    for tag in &cfg.models {
        let Some(kind) = model_kind(tag) else {
            rows.push(failure_row(
                experiment,
                Some(cfg.kappa_true),
                None,
                &format!("{tag}_ne{ne}_nd{nd}"),
                rep,
                &Error::Config(format!("{tag:?} is not a network model")),
            ));
            continue;
        };
        let mut tc = cfg.train;
        if kind != ModelKind::Vae {
            // the plain-AE baseline: no latent penalty at all
            tc.c2 = 0.0;
        }
        let model_tag = format!("{tag}_ne{ne}_nd{nd}");
        tc.seed = cell.child(&model_tag).derive_seed();

        let mut model = GenerativeModel::new(
            cfg.d,
            &enc_hidden,
            cfg.latent,
            &dec_hidden,
            kind,
            &cell.child(&format!("{model_tag}/init")),
        );
        let started = Instant::now();
        let row = match train(&mut model, &gt.l, &tc, None) {
            Ok(_) => {
                let wall = started.elapsed().as_secs_f64();
                let prune = count_nonzero_columns(model.decoder_first_layer());
                for (idx, &norm) in prune.sorted_norms.iter().enumerate() {
                    norm_rows.push(NormRow {
                        experiment: experiment.into(),
                        kappa: Some(cfg.kappa_true),
                        nu: None,
                        model: model_tag.clone(),
                        seed: rep,
                        idx,
                        value: norm,
                    });
                }
                let err = model.reconstruct_columns(&gt.l).and_then(|r| nmse(&gt.l, &r)).ok();
                let frac = (kind == ModelKind::Vae)
                    .then(|| sigma_z_stats(&model, &gt.l).map(|s| s.frac_below_0_1).ok())
                    .flatten();
                ResultRow {
                    experiment: experiment.into(),
                    kappa: Some(cfg.kappa_true),
                    nu: None,
                    model: model_tag.clone(),
                    seed: rep,
                    nmse: err,
                    nonzero_cols: Some(prune.nonzero),
                    frac_var_below: frac,
                    wall_clock_s: wall,
                    converged: true,
                }
            }
            Err(e) => failure_row(experiment, Some(cfg.kappa_true), None, &model_tag, rep, &e),
        };
        rows.push(row);
    }
    (rows, norm_rows)
}

/// Table-1-style study: vary encoder/decoder depth on clean synthetic data
/// with a known manifold dimension and count surviving first-layer decoder
/// columns.
pub fn run_pruning_study(cfg: &ExperimentConfig) -> Result<PruneStudy> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for &ne in &cfg.ne_grid {
        for &nd in &cfg.nd_grid {
            for rep in 0..cfg.repeats as u64 {
                cells.push((ne, nd, rep));
            }
        }
    }
    let outcome: Vec<(Vec<ResultRow>, Vec<NormRow>)> = install_pool(cfg.workers, || {
        cells.par_iter().map(|&(ne, nd, rep)| prune_cell(cfg, ne, nd, rep)).collect()
    });
    let mut rows: Vec<ResultRow> = outcome.iter().flat_map(|(r, _)| r.clone()).collect();
    let mut norm_rows: Vec<NormRow> = outcome.into_iter().flat_map(|(_, n)| n).collect();
    rows.sort_by_key(|r| r.sort_key());
    norm_rows.sort_by(|a, b| {
        (&a.model, a.seed, a.idx).cmp(&(&b.model, b.seed, b.idx))
    });

    let results_csv = cfg.out_dir.join("results.csv");
    write_rows(&results_csv, RESULTS_HEADER, &rows.iter().map(|r| r.to_csv()).collect::<Vec<_>>())?;
    let norms_csv = cfg.out_dir.join("norms.csv");
    write_rows(&norms_csv, NORMS_HEADER, &norm_rows.iter().map(|r| r.to_csv()).collect::<Vec<_>>())?;

    let mut mean_counts = Vec::new();
    for tag in &cfg.models {
        for &ne in &cfg.ne_grid {
            for &nd in &cfg.nd_grid {
                let model_tag = format!("{tag}_ne{ne}_nd{nd}");
                let counts: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.model == model_tag && r.converged)
                    .filter_map(|r| r.nonzero_cols.map(|c| c as f64))
                    .collect();
                if !counts.is_empty() {
                    let mean = counts.iter().sum::<f64>() / counts.len() as f64;
                    mean_counts.push((tag.clone(), ne, nd, mean));
                }
            }
        }
    }
    Ok(PruneStudy {
        outputs: RunOutputs {
            rows,
            results_csv,
            histograms_csv: None,
            norms_csv: Some(norms_csv),
        },
        ne_grid: cfg.ne_grid.clone(),
        nd_grid: cfg.nd_grid.clone(),
        mean_counts,
    })
}

fn covstats_cell(
    cfg: &ExperimentConfig,
    kappa: usize,
    nu: f64,
    rep: u64,
) -> (Vec<ResultRow>, Vec<HistogramRow>, Vec<NormRow>) {
    let experiment = "covstats";
    let root = RngStream::new(cfg.seed, experiment);
    let gt_stream = root.child(&format!("gt/k{kappa}/rep{rep}"));
    let gt = match gen_ground_truth(kappa, cfg.gen_hidden.0, cfg.gen_hidden.1, cfg.d, cfg.n, gt_stream.derive_seed()) {
        Ok(gt) => gt,
        Err(e) => {
            return (
                vec![failure_row(experiment, Some(kappa), Some(nu), "vae", rep, &e)],
                Vec::new(),
                Vec::new(),
            )
        }
    };
    let cell = root.child(&format!("k{kappa}/nu{}/rep{rep}", nu_label(nu)));
    let corrupted = corrupt(&gt.l, nu, CorruptionMode::GaussianUnit, &cell.child("corrupt"));
    let x = &corrupted.x;

    // wide latent for the histogram view, matched latent for the
    // sorted-mean-diagonal view
    let mut variants = vec![("vae".to_string(), cfg.latent)];
    if cfg.covstats_match_latent && cfg.latent != kappa {
        variants.push(("vae_klat".to_string(), kappa));
    }

    let mut rows = Vec::new();
    let mut hist_rows = Vec::new();
    let mut norm_rows = Vec::new();
    for (tag, latent) in variants {
        let mut tc = cfg.train;
        tc.seed = cell.child(&tag).derive_seed();
        match train_cell_model(cfg, &cell, &tag, ModelKind::Vae, latent, &tc, x, None) {
            Ok(trained) => {
                match sigma_z_stats(&trained.model, x) {
                    Ok(stats) => {
                        for b in 0..stats.counts.len() {
                            hist_rows.push(HistogramRow {
                                experiment: experiment.into(),
                                kappa: Some(kappa),
                                nu: Some(nu),
                                model: tag.clone(),
                                seed: rep,
                                bin_left: stats.bin_edges[b],
                                bin_right: stats.bin_edges[b + 1],
                                count: stats.counts[b],
                            });
                        }
                        for (idx, &v) in stats.sorted_mean_diag.iter().enumerate() {
                            norm_rows.push(NormRow {
                                experiment: experiment.into(),
                                kappa: Some(kappa),
                                nu: Some(nu),
                                model: format!("{tag}_sigma_diag"),
                                seed: rep,
                                idx,
                                value: v,
                            });
                        }
                        let err =
                            trained.model.reconstruct_columns(x).and_then(|r| nmse(&gt.l, &r)).ok();
                        let prune = count_nonzero_columns(trained.model.decoder_first_layer());
                        rows.push(ResultRow {
                            experiment: experiment.into(),
                            kappa: Some(kappa),
                            nu: Some(nu),
                            model: tag.clone(),
                            seed: rep,
                            nmse: err,
                            nonzero_cols: Some(prune.nonzero),
                            frac_var_below: Some(stats.frac_below_0_1),
                            wall_clock_s: trained.wall,
                            converged: true,
                        });
                        let _ = trained.from_cache;
                    }
                    Err(e) => rows.push(failure_row(experiment, Some(kappa), Some(nu), &tag, rep, &e)),
                }
            }
            Err(e) => rows.push(failure_row(experiment, Some(kappa), Some(nu), &tag, rep, &e)),
        }
    }
    (rows, hist_rows, norm_rows)
}

/// Figs.-3/4-style study: encoder variance histograms over `(kappa, nu)`
/// cells, including a matched-latent variant, reusing cached cells when the
/// phase study already trained them.
pub fn run_covariance_study(cfg: &ExperimentConfig) -> Result<RunOutputs> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for &kappa in &cfg.kappa_grid {
        for &nu in &cfg.nu_grid {
            for rep in 0..cfg.repeats as u64 {
                cells.push((kappa, nu, rep));
            }
        }
    }
    let outcome: Vec<(Vec<ResultRow>, Vec<HistogramRow>, Vec<NormRow>)> =
        install_pool(cfg.workers, || {
            cells.par_iter().map(|&(k, nu, rep)| covstats_cell(cfg, k, nu, rep)).collect()
        });
    let mut rows: Vec<ResultRow> = outcome.iter().flat_map(|(r, _, _)| r.clone()).collect();
    let mut hist_rows: Vec<HistogramRow> = outcome.iter().flat_map(|(_, h, _)| h.clone()).collect();
    let mut norm_rows: Vec<NormRow> = outcome.into_iter().flat_map(|(_, _, n)| n).collect();
    rows.sort_by_key(|r| r.sort_key());
    hist_rows.sort_by(|a, b| {
        (a.kappa, a.nu.unwrap_or(-1.0).to_bits(), &a.model, a.seed, a.bin_left.to_bits())
            .cmp(&(b.kappa, b.nu.unwrap_or(-1.0).to_bits(), &b.model, b.seed, b.bin_left.to_bits()))
    });
    norm_rows.sort_by(|a, b| {
        (a.kappa, a.nu.unwrap_or(-1.0).to_bits(), &a.model, a.seed, a.idx)
            .cmp(&(b.kappa, b.nu.unwrap_or(-1.0).to_bits(), &b.model, b.seed, b.idx))
    });

    let results_csv = cfg.out_dir.join("results.csv");
    write_rows(&results_csv, RESULTS_HEADER, &rows.iter().map(|r| r.to_csv()).collect::<Vec<_>>())?;
    let histograms_csv = cfg.out_dir.join("histograms.csv");
    write_rows(
        &histograms_csv,
        HISTOGRAMS_HEADER,
        &hist_rows.iter().map(|r| r.to_csv()).collect::<Vec<_>>(),
    )?;
    let norms_csv = cfg.out_dir.join("norms.csv");
    write_rows(&norms_csv, NORMS_HEADER, &norm_rows.iter().map(|r| r.to_csv()).collect::<Vec<_>>())?;
    Ok(RunOutputs {
        rows,
        results_csv,
        histograms_csv: Some(histograms_csv),
        norms_csv: Some(norms_csv),
    })
}

/// Load the configured MNIST images as a column-per-digit matrix scaled to
/// `[0, 1]`.
fn load_mnist_matrix(cfg: &ExperimentConfig) -> Result<DenseMatrix> {
    let path = cfg.mnist_images.as_ref().ok_or_else(|| {
        Error::Config(
            "mnist requires `mnist_images = <path>` pointing at an IDX file such as \
             train-images-idx3-ubyte (not downloaded automatically)"
                .into(),
        )
    })?;
    if !path.is_file() {
        return Err(Error::Config(format!(
            "mnist image file {path:?} not found; expected an IDX file such as \
             train-images-idx3-ubyte"
        )));
    }
    match load_idx(path)? {
        IdxData::Images { count, rows, cols, pixels } => {
            let n = cfg.mnist_subset.min(count);
            let d = rows * cols;
            let mut m = DenseMatrix::zeros(d, n);
            for i in 0..n {
                for j in 0..d {
                    m.set(j, i, pixels[i * d + j] as f64 / 255.0);
                }
            }
            Ok(m)
        }
        IdxData::Labels { .. } => Err(Error::Config(format!(
            "{path:?} holds labels; point mnist_images at the image file"
        ))),
    }
}

/// Denoising study on real digits: uniform pixel corruption, VAE with one
/// and five Monte Carlo samples, convex RPCA baseline.
pub fn run_mnist_denoise(cfg: &ExperimentConfig) -> Result<RunOutputs> {
    cfg.validate()?;
    let clean = load_mnist_matrix(cfg)?;
    let mut cfg = cfg.clone();
    cfg.d = clean.rows();
    let experiment = "mnist";
    let root = RngStream::new(cfg.seed, experiment);

    let mut cells = Vec::new();
    for &nu in &cfg.nu_grid {
        for rep in 0..cfg.repeats as u64 {
            cells.push((nu, rep));
        }
    }
    let cfg_ref = &cfg;
    let clean_ref = &clean;
    let mut rows: Vec<ResultRow> = install_pool(cfg.workers, || {
        cells
            .par_iter()
            .flat_map(|&(nu, rep)| {
                let cell = root.child(&format!("nu{}/rep{rep}", nu_label(nu)));
                let corrupted =
                    corrupt(clean_ref, nu, CorruptionMode::Uniform01, &cell.child("corrupt"));
                let x = &corrupted.x;
                let mut rows = Vec::new();
                for tag in &cfg_ref.models {
                    let row = if tag == "rpca" {
                        let started = Instant::now();
                        let opts = RpcaOptions {
                            lambda: cfg_ref.rpca_lambda,
                            tol: cfg_ref.rpca_tol.max(1e-6),
                            max_iter: cfg_ref.rpca_max_iter.min(200),
                        };
                        match rpca_alm(x, &opts).and_then(|dec| nmse(clean_ref, &dec.l)) {
                            Ok(err) => ResultRow {
                                experiment: experiment.into(),
                                kappa: None,
                                nu: Some(nu),
                                model: tag.clone(),
                                seed: rep,
                                nmse: Some(err),
                                nonzero_cols: None,
                                frac_var_below: None,
                                wall_clock_s: started.elapsed().as_secs_f64(),
                                converged: true,
                            },
                            Err(e) => failure_row(experiment, None, Some(nu), tag, rep, &e),
                        }
                    } else {
                        match model_kind(tag) {
                            Some(kind) => {
                                let mut tc = cfg_ref.train;
                                if tag == "vae_tau5" {
                                    tc.tau = 5;
                                }
                                tc.seed = cell.child(tag).derive_seed();
                                match train_cell_model(cfg_ref, &cell, tag, kind, cfg_ref.latent, &tc, x, None)
                                    .and_then(|t| {
                                        let recon = t.model.reconstruct_columns(x)?;
                                        Ok((t.wall, nmse(clean_ref, &recon)?))
                                    }) {
                                    Ok((wall, err)) => ResultRow {
                                        experiment: experiment.into(),
                                        kappa: None,
                                        nu: Some(nu),
                                        model: tag.clone(),
                                        seed: rep,
                                        nmse: Some(err),
                                        nonzero_cols: None,
                                        frac_var_below: None,
                                        wall_clock_s: wall,
                                        converged: true,
                                    },
                                    Err(e) => failure_row(experiment, None, Some(nu), tag, rep, &e),
                                }
                            }
                            None => failure_row(
                                experiment,
                                None,
                                Some(nu),
                                tag,
                                rep,
                                &Error::Config(format!("unknown model {tag:?}")),
                            ),
                        }
                    };
                    rows.push(row);
                }
                rows
            })
            .collect()
    });
    rows.sort_by_key(|r| r.sort_key());
    let results_csv = cfg.out_dir.join("results.csv");
    write_rows(&results_csv, RESULTS_HEADER, &rows.iter().map(|r| r.to_csv()).collect::<Vec<_>>())?;
    Ok(RunOutputs { rows, results_csv, histograms_csv: None, norms_csv: None })
}

/// Fast in-process smoke battery behind `vaelab selftest`: one line per
/// check, true when everything passed.
pub fn run_selftest() -> bool {
    let mut ok = true;
    let mut check = |name: &str, pass: bool| {
        println!("{}  {name}", if pass { "PASS" } else { "FAIL" });
        ok &= pass;
    };

    // svd round trip
    let stream = RngStream::new(7, "selftest");
    let m = crate::numkit::sample_gaussian(&stream.child("svd"), 20, 15);
    match crate::numkit::svd(&m) {
        Ok(dec) => check("svd 20x15 round trip <= 1e-10", dec.residual(&m) <= 1e-10),
        Err(_) => check("svd 20x15 round trip <= 1e-10", false),
    }

    // value-level spot checks
    check(
        "robust loss of a perfect fit hits the floor",
        (crate::models::robust_data_loss(&[1.0, 2.0], &[1.0, 2.0], 1e-6)
            - 2.0 * (1e-6f64).ln())
        .abs()
            < 1e-9,
    );
    check(
        "exact KL vanishes at the prior",
        crate::models::kl_diag_gaussian(&[0.0, 0.0], &[1.0, 1.0]) == 0.0,
    );

    // gradient checks on the three objectives
    let cfg = TrainConfig { alpha: 0.05, c2: 0.7, tau: 2, ..TrainConfig::default() };
    for (name, kind) in [
        ("vae gradients match finite differences", ModelKind::Vae),
        ("ae-l2 gradients match finite differences", ModelKind::AeL2),
        ("ae-l1 gradients match finite differences", ModelKind::AeL1),
    ] {
        let s = stream.child(name);
        let mut model = GenerativeModel::new(6, &[8], 3, &[8], kind, &s);
        let pass = crate::models::probe_batch(&model, &cfg, 4, &s.child("probe"))
            .and_then(|xb| crate::models::model_grad_check(&mut model, &xb, &cfg, 11, 8))
            .map(|err| err <= 1e-5)
            .unwrap_or(false);
        check(name, pass);
    }

    // small convex rpca (large enough that the default sparsity weight
    // certifies the clean rank-1 solution)
    let u = crate::numkit::sample_gaussian(&stream.child("rpca-u"), 40, 1);
    let v = crate::numkit::sample_gaussian(&stream.child("rpca-v"), 1, 50);
    let x = u.matmul(&v);
    let pass = rpca_alm(&x, &RpcaOptions::default())
        .map(|dec| dec.converged && dec.l.sub(&x).frob_norm() / x.frob_norm() < 1e-5)
        .unwrap_or(false);
    check("convex rpca recovers a clean rank-1 matrix", pass);

    // checkpoint round trip
    let pass = (|| -> Result<bool> {
        let dir = std::env::temp_dir().join(format!("vaelab-selftest-{}", std::process::id()));
        std::fs::create_dir_all(&dir)?;
        let path = dir.join("selftest.ckpt");
        let model = GenerativeModel::new(5, &[6], 2, &[6], ModelKind::Vae, &stream.child("ckpt"));
        let arrays = model_to_arrays(&model);
        save_checkpoint(&arrays, &path)?;
        let loaded = load_checkpoint(&path)?;
        std::fs::remove_dir_all(&dir).ok();
        Ok(loaded == arrays)
    })()
    .unwrap_or(false);
    check("checkpoint round trip is bitwise", pass);

    // idx parser on a synthetic buffer
    let pixels: Vec<u8> = (0..4 * 2 * 3).map(|v| v as u8).collect();
    let bytes = super::idx::encode_images(4, 2, 3, &pixels);
    let pass = matches!(
        super::idx::parse_idx(&bytes),
        Ok(IdxData::Images { count: 4, rows: 2, cols: 3, .. })
    );
    check("idx image header parses", pass);

    ok
}
