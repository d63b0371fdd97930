//! Declarative experiment configuration: per-kind desk defaults, a flat
//! `key = value` config-file overlay, and the paper-scale preset.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::models::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    Phase,
    Prune,
    Covstats,
    Mnist,
    Selftest,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Phase => "phase",
            ExperimentKind::Prune => "prune",
            ExperimentKind::Covstats => "covstats",
            ExperimentKind::Mnist => "mnist",
            ExperimentKind::Selftest => "selftest",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "phase" => Ok(Self::Phase),
            "prune" => Ok(Self::Prune),
            "covstats" => Ok(Self::Covstats),
            "mnist" => Ok(Self::Mnist),
            "selftest" => Ok(Self::Selftest),
            other => Err(Error::Config(format!("unknown experiment kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    /// Sizes chosen so the full acceptance suite stays under an hour on a
    /// small machine.
    Desk,
    /// The published sizes (millions of samples, thousand-unit layers).
    /// Provided for completeness; not exercised by the test suite.
    Paper,
}

impl Scale {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper" => Ok(Self::Paper),
            other => Err(Error::Config(format!("unknown scale {other:?} (desk|paper)"))),
        }
    }
}

/// Full declarative description of one experiment run.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub scale: Scale,
    /// Data dimension.
    pub d: usize,
    /// Sample count.
    pub n: usize,
    /// Ground-truth manifold dimensions (phase, covstats).
    pub kappa_grid: Vec<usize>,
    /// Corruption ratios.
    pub nu_grid: Vec<f64>,
    /// Encoder latent dimension.
    pub latent: usize,
    /// Hidden widths of encoder and decoder (mirrored).
    pub hidden: Vec<usize>,
    /// Ground-truth generator hidden widths.
    pub gen_hidden: (usize, usize),
    /// Encoder/decoder depth grids (prune).
    pub ne_grid: Vec<usize>,
    pub nd_grid: Vec<usize>,
    /// Ground-truth dimension for prune/covstats data.
    pub kappa_true: usize,
    /// Models to run: vae, ae_l2, ae_l1, rpca, vae_tau5.
    pub models: Vec<String>,
    pub repeats: usize,
    pub train: TrainConfig,
    /// Tuning grid for the AE-ℓ1 latent penalty.
    pub c2_l1_grid: Vec<f64>,
    /// Sparsity weight override for the convex solver.
    pub rpca_lambda: Option<f64>,
    pub rpca_tol: f64,
    pub rpca_max_iter: usize,
    /// Also run covstats with the latent matched to the true dimension.
    pub covstats_match_latent: bool,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub workers: usize,
    pub mnist_images: Option<PathBuf>,
    pub mnist_labels: Option<PathBuf>,
    pub mnist_subset: usize,
}

impl ExperimentConfig {
    /// Desk-scale defaults for an experiment kind.
    pub fn default_for(kind: ExperimentKind) -> Self {
        let base = Self {
            kind,
            scale: Scale::Desk,
            d: 30,
            n: 2000,
            kappa_grid: vec![2, 6, 10],
            nu_grid: vec![0.1, 0.3, 0.5],
            latent: 20,
            hidden: vec![64, 64],
            gen_hidden: (64, 64),
            ne_grid: vec![0, 1, 2, 3],
            nd_grid: vec![0, 1, 2, 3],
            kappa_true: 5,
            models: vec!["vae".into(), "ae_l2".into(), "ae_l1".into(), "rpca".into()],
            repeats: 1,
            train: TrainConfig { epochs: 600, lr: 1e-3, ..TrainConfig::default() },
            c2_l1_grid: vec![1.0, 10.0, 100.0, 1000.0],
            rpca_lambda: None,
            rpca_tol: 1e-7,
            rpca_max_iter: 1000,
            covstats_match_latent: true,
            out_dir: PathBuf::from("runs"),
            seed: 0,
            workers: std::thread::available_parallelism().map_or(4, |p| p.get()),
            mnist_images: None,
            mnist_labels: None,
            mnist_subset: 10_000,
        };
        match kind {
            ExperimentKind::Phase => base,
            ExperimentKind::Prune => Self {
                latent: 8,
                hidden: vec![64],
                kappa_grid: vec![],
                nu_grid: vec![],
                models: vec!["vae".into(), "ae_l2".into()],
                ..base
            },
            ExperimentKind::Covstats => Self {
                kappa_grid: vec![2],
                nu_grid: vec![0.0, 0.1, 0.45],
                kappa_true: 6,
                ..base
            },
            ExperimentKind::Mnist => Self {
                d: 784,
                latent: 30,
                hidden: vec![256, 128],
                nu_grid: vec![0.25],
                models: vec!["vae".into(), "vae_tau5".into(), "rpca".into()],
                train: TrainConfig { epochs: 40, lr: 1e-3, ..TrainConfig::default() },
                ..base
            },
            ExperimentKind::Selftest => base,
        }
    }

    /// The published experiment sizes.
    pub fn paper_scale(kind: ExperimentKind) -> Self {
        let desk = Self::default_for(kind);
        match kind {
            ExperimentKind::Phase | ExperimentKind::Covstats => Self {
                scale: Scale::Paper,
                d: 100,
                n: 1_000_000,
                kappa_grid: (1..=10).map(|k| 2 * k).collect(),
                nu_grid: (1..=10).map(|k| 0.05 * k as f64).collect(),
                latent: 50,
                hidden: vec![2000, 1000],
                gen_hidden: (2000, 1000),
                repeats: 10,
                train: TrainConfig { epochs: 200, lr: 1e-4, ..TrainConfig::default() },
                ..desk
            },
            ExperimentKind::Prune => Self {
                scale: Scale::Paper,
                d: 400,
                n: 1_000_000,
                kappa_true: 20,
                latent: 30,
                hidden: vec![200],
                gen_hidden: (200, 200),
                repeats: 10,
                train: TrainConfig { epochs: 200, lr: 1e-4, ..TrainConfig::default() },
                ..desk
            },
            ExperimentKind::Mnist => Self {
                scale: Scale::Paper,
                mnist_subset: 70_000,
                hidden: vec![1000, 500, 250],
                train: TrainConfig { epochs: 200, lr: 1e-4, ..TrainConfig::default() },
                ..desk
            },
            ExperimentKind::Selftest => desk,
        }
    }

    /// Parse `key = value` lines (`#` starts a comment) over this config.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.apply_text(&text)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got {raw:?}", lineno + 1))
            })?;
            self.apply_pair(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    fn apply_pair(&mut self, key: &str, value: &str) -> Result<()> {
        fn usize_list(v: &str) -> Result<Vec<usize>> {
            if v.is_empty() {
                return Ok(vec![]);
            }
            v.split(',')
                .map(|p| p.trim().parse::<usize>().map_err(|e| Error::Config(e.to_string())))
                .collect()
        }
        fn f64_list(v: &str) -> Result<Vec<f64>> {
            if v.is_empty() {
                return Ok(vec![]);
            }
            v.split(',')
                .map(|p| p.trim().parse::<f64>().map_err(|e| Error::Config(e.to_string())))
                .collect()
        }
        fn num<T: std::str::FromStr>(v: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            v.parse::<T>().map_err(|e| Error::Config(format!("{v:?}: {e}")))
        }

        match key {
            "experiment" => self.kind = ExperimentKind::parse(value)?,
            "scale" => self.scale = Scale::parse(value)?,
            "d" => self.d = num(value)?,
            "n" => self.n = num(value)?,
            "kappa_grid" => self.kappa_grid = usize_list(value)?,
            "nu_grid" => self.nu_grid = f64_list(value)?,
            "latent" => self.latent = num(value)?,
            "hidden" => self.hidden = usize_list(value)?,
            "gen_hidden" => {
                let list = usize_list(value)?;
                if list.len() != 2 {
                    return Err(Error::Config("gen_hidden wants exactly two widths".into()));
                }
                self.gen_hidden = (list[0], list[1]);
            }
            "ne_grid" => self.ne_grid = usize_list(value)?,
            "nd_grid" => self.nd_grid = usize_list(value)?,
            "kappa_true" => self.kappa_true = num(value)?,
            "models" => {
                self.models = value.split(',').map(|m| m.trim().to_string()).collect();
            }
            "repeats" => self.repeats = num(value)?,
            "epochs" => self.train.epochs = num(value)?,
            "batch" => self.train.batch = num(value)?,
            "lr" => self.train.lr = num(value)?,
            "tau" => self.train.tau = num(value)?,
            "alpha" => self.train.alpha = num(value)?,
            "c1" => self.train.c1 = num(value)?,
            "c2" => self.train.c2 = num(value)?,
            "c2_l1_grid" => self.c2_l1_grid = f64_list(value)?,
            "rpca_lambda" => self.rpca_lambda = Some(num(value)?),
            "rpca_tol" => self.rpca_tol = num(value)?,
            "rpca_max_iter" => self.rpca_max_iter = num(value)?,
            "covstats_match_latent" => {
                self.covstats_match_latent = match value {
                    "true" => true,
                    "false" => false,
                    other => return Err(Error::Config(format!("expected true/false, got {other:?}"))),
                }
            }
            "out" => self.out_dir = PathBuf::from(value),
            "seed" => self.seed = num(value)?,
            "workers" => self.workers = num(value)?,
            "mnist_images" => self.mnist_images = Some(PathBuf::from(value)),
            "mnist_labels" => self.mnist_labels = Some(PathBuf::from(value)),
            "mnist_subset" => self.mnist_subset = num(value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats < 1 {
            return Err(Error::Config("repeats must be >= 1".into()));
        }
        if self.workers < 1 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        match self.kind {
            ExperimentKind::Phase | ExperimentKind::Covstats => {
                if self.kappa_grid.is_empty() || self.nu_grid.is_empty() {
                    return Err(Error::Config("kappa_grid and nu_grid must be nonempty".into()));
                }
            }
            ExperimentKind::Prune => {
                if self.ne_grid.is_empty() || self.nd_grid.is_empty() {
                    return Err(Error::Config("ne_grid and nd_grid must be nonempty".into()));
                }
            }
            ExperimentKind::Mnist => {
                if self.nu_grid.is_empty() {
                    return Err(Error::Config("nu_grid must be nonempty".into()));
                }
            }
            ExperimentKind::Selftest => {}
        }
        Ok(())
    }

    /// Stable one-line fingerprint of the knobs that define a training cell,
    /// used in checkpoint file names.
    pub fn cell_fingerprint(&self) -> String {
        let t = &self.train;
        format!(
            "d{}_n{}_lat{}_h{}_e{}_b{}_lr{}_tau{}_s{}",
            self.d,
            self.n,
            self.latent,
            self.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join("x"),
            t.epochs,
            t.batch,
            t.lr,
            t.tau,
            self.seed
        )
    }
}

/// All config keys with one-line descriptions, for `--help` and the README.
pub fn config_keys() -> BTreeMap<&'static str, &'static str> {
    BTreeMap::from([
        ("experiment", "phase | prune | covstats | mnist | selftest"),
        ("scale", "desk | paper"),
        ("d", "data dimension"),
        ("n", "sample count"),
        ("kappa_grid", "comma list of manifold dimensions"),
        ("nu_grid", "comma list of corruption ratios"),
        ("latent", "encoder latent dimension"),
        ("hidden", "comma list of hidden widths (encoder mirrored in decoder)"),
        ("gen_hidden", "two widths for the ground-truth generator"),
        ("ne_grid", "encoder depth grid (prune)"),
        ("nd_grid", "decoder depth grid (prune)"),
        ("kappa_true", "ground-truth manifold dim (prune, covstats)"),
        ("models", "comma list: vae, ae_l2, ae_l1, rpca, vae_tau5"),
        ("repeats", "independent repeats per cell"),
        ("epochs", "training epochs"),
        ("batch", "minibatch size"),
        ("lr", "Adam learning rate"),
        ("tau", "Monte Carlo samples per datum (VAE)"),
        ("alpha", "variance floor"),
        ("c1", "weight decay coefficient"),
        ("c2", "latent penalty weight (AE-ℓ2)"),
        ("c2_l1_grid", "tuning grid for the AE-ℓ1 penalty"),
        ("rpca_lambda", "sparsity weight override for convex RPCA"),
        ("rpca_tol", "convex RPCA stopping tolerance"),
        ("rpca_max_iter", "convex RPCA iteration cap"),
        ("covstats_match_latent", "also run latent = kappa_true (true/false)"),
        ("out", "output directory"),
        ("seed", "master seed"),
        ("workers", "parallel cells"),
        ("mnist_images", "path to an IDX image file"),
        ("mnist_labels", "path to an IDX label file"),
        ("mnist_subset", "number of digits to use"),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_parses_and_overrides() {
        let mut cfg = ExperimentConfig::default_for(ExperimentKind::Phase);
        cfg.apply_text(
            "# comment\n\
             kappa_grid = 2, 6\n\
             nu_grid = 0.1,0.3\n\
             epochs = 11\n\
             models = vae , rpca\n\
             out = /tmp/somewhere\n\
             seed = 42\n",
        )
        .unwrap();
        assert_eq!(cfg.kappa_grid, vec![2, 6]);
        assert_eq!(cfg.nu_grid, vec![0.1, 0.3]);
        assert_eq!(cfg.train.epochs, 11);
        assert_eq!(cfg.models, vec!["vae".to_string(), "rpca".to_string()]);
        assert_eq!(cfg.seed, 42);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let mut cfg = ExperimentConfig::default_for(ExperimentKind::Phase);
        let err = cfg.apply_text("d = 10\nnot_a_key = 5\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("not_a_key"), "{msg}");
    }

    #[test]
    fn empty_grid_fails_validation() {
        let mut cfg = ExperimentConfig::default_for(ExperimentKind::Phase);
        cfg.kappa_grid.clear();
        assert!(cfg.validate().is_err());
    }
}
