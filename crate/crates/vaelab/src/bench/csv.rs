//! CSV output schemas. Headers are fixed; inapplicable fields stay empty
//! rather than zero, and rows are sorted by a deterministic key so reruns
//! with the same config and seed produce identical files (wall-clock
//! excepted).

use std::io::Write;
use std::path::Path;

use crate::error::Result;

pub const RESULTS_HEADER: &str =
    "experiment,kappa,nu,model,seed,nmse,nonzero_cols,frac_var_below_0_1,wall_clock_s,converged";
pub const HISTOGRAMS_HEADER: &str = "experiment,kappa,nu,model,seed,bin_left,bin_right,count";
pub const NORMS_HEADER: &str = "experiment,kappa,nu,model,seed,idx,value";

/// One experiment-cell outcome.
#[derive(Clone, Debug)]
pub struct ResultRow {
    pub experiment: String,
    pub kappa: Option<usize>,
    pub nu: Option<f64>,
    pub model: String,
    pub seed: u64,
    pub nmse: Option<f64>,
    pub nonzero_cols: Option<usize>,
    pub frac_var_below: Option<f64>,
    pub wall_clock_s: f64,
    pub converged: bool,
}

fn opt_usize(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl ResultRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{:.3},{}",
            self.experiment,
            opt_usize(self.kappa),
            opt_f64(self.nu),
            self.model,
            self.seed,
            opt_f64(self.nmse),
            opt_usize(self.nonzero_cols),
            opt_f64(self.frac_var_below),
            self.wall_clock_s,
            self.converged
        )
    }

    /// Deterministic merge order for rows produced by parallel workers.
    pub fn sort_key(&self) -> (String, usize, u64, String, u64) {
        (
            self.experiment.clone(),
            self.kappa.unwrap_or(0),
            self.nu.unwrap_or(-1.0).to_bits(),
            self.model.clone(),
            self.seed,
        )
    }
}

/// Histogram bins for one cell.
#[derive(Clone, Debug)]
pub struct HistogramRow {
    pub experiment: String,
    pub kappa: Option<usize>,
    pub nu: Option<f64>,
    pub model: String,
    pub seed: u64,
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: u64,
}

impl HistogramRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.experiment,
            opt_usize(self.kappa),
            opt_f64(self.nu),
            self.model,
            self.seed,
            self.bin_left,
            self.bin_right,
            self.count
        )
    }
}

/// One entry of a sorted-values curve (column norms, mean variance
/// diagonals).
#[derive(Clone, Debug)]
pub struct NormRow {
    pub experiment: String,
    pub kappa: Option<usize>,
    pub nu: Option<f64>,
    pub model: String,
    pub seed: u64,
    pub idx: usize,
    pub value: f64,
}

impl NormRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.experiment,
            opt_usize(self.kappa),
            opt_f64(self.nu),
            self.model,
            self.seed,
            self.idx,
            self.value
        )
    }
}

pub fn write_rows(path: &Path, header: &str, lines: &[String]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{header}")?;
    for line in lines {
        writeln!(f, "{line}")?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_fields_stay_empty() {
        let row = ResultRow {
            experiment: "phase".into(),
            kappa: Some(2),
            nu: None,
            model: "vae".into(),
            seed: 3,
            nmse: None,
            nonzero_cols: None,
            frac_var_below: Some(0.25),
            wall_clock_s: 1.25,
            converged: true,
        };
        assert_eq!(row.to_csv(), "phase,2,,vae,3,,,0.25,1.250,true");
    }
}
