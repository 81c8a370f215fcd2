//! CSV time series and their reader.
//!
//! Floats are written in scientific notation with 17 significant digits,
//! which round-trips every `f64` exactly. Rows are time-major, node-minor.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::analysis::EffectiveReproductionTrace;
use crate::estimator::{ErrorTrace, SweepOutcome, SweepPoint};
use crate::model::{NetworkModel, Trajectory};

/// Placeholder for a ratio with no value (zero denominator).
pub const UNDEFINED: &str = "undefined";

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Parses a float cell; `undefined` maps to `None`.
pub fn parse_cell(cell: &str) -> Result<Option<f64>, std::num::ParseFloatError> {
    if cell == UNDEFINED {
        Ok(None)
    } else {
        cell.parse().map(Some)
    }
}

pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<(), OutputError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let csv_err = |source| OutputError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Float values of a column; `undefined` cells become `None`.
    pub fn floats(&self, name: &str) -> Option<Result<Vec<Option<f64>>, std::num::ParseFloatError>> {
        let idx = self.column(name)?;
        Some(self.rows.iter().map(|r| parse_cell(&r[idx])).collect())
    }
}

pub fn read_csv(path: &Path) -> Result<Table, OutputError> {
    let csv_err = |source| OutputError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<Result<_, _>>()
        .map_err(csv_err)?;
    Ok(Table { header, rows })
}

/// Output directory with one writer per file kind. Virus indices in file
/// names are 1-based.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, OutputError> {
        std::fs::create_dir_all(root).map_err(|source| OutputError::Io {
            path: root.to_path_buf(),
            source,
        })?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf, OutputError> {
        let path = self.path(name);
        std::fs::write(&path, text).map_err(|source| OutputError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }

    /// `<prefix>_<k>.csv` with `t,node,s,x,r`.
    pub fn write_trajectory(
        &self,
        prefix: &str,
        model: &NetworkModel,
        trajectory: &Trajectory,
        k: usize,
    ) -> Result<PathBuf, OutputError> {
        let path = self.path(&format!("{prefix}_{}.csv", k + 1));
        let rows = trajectory.states.iter().flat_map(|st| {
            (0..model.nodes()).map(move |i| {
                vec![
                    st.t.to_string(),
                    model.labels()[i].clone(),
                    fmt_float(st.s[i]),
                    fmt_float(st.x[k][i]),
                    fmt_float(st.r[i]),
                ]
            })
        });
        write_csv(&path, &["t", "node", "s", "x", "r"], rows)?;
        Ok(path)
    }

    pub fn write_rho_tilde(&self, trace: &EffectiveReproductionTrace) -> Result<PathBuf, OutputError> {
        let path = self.path(&format!("rho_tilde_{}.csv", trace.virus + 1));
        let rows = trace
            .rho
            .iter()
            .enumerate()
            .map(|(t, r)| vec![t.to_string(), fmt_float(*r)]);
        write_csv(&path, &["t", "rho"], rows)?;
        Ok(path)
    }

    /// `t,virus,node,e`; after the node rows of each `t` comes one row with
    /// virus `all` and node `aggregate` holding the mean absolute error.
    pub fn write_observer_error(&self, model: &NetworkModel, trace: &ErrorTrace) -> Result<PathBuf, OutputError> {
        let path = self.path("observer_error.csv");
        let (n, m) = (model.nodes(), model.viruses());
        let mut rows = Vec::with_capacity(trace.e.len() * (m * n + 1));
        for (t, et) in trace.e.iter().enumerate() {
            for (k, ek) in et.iter().enumerate() {
                for i in 0..n {
                    rows.push(vec![
                        t.to_string(),
                        (k + 1).to_string(),
                        model.labels()[i].clone(),
                        fmt_float(ek[i]),
                    ]);
                }
            }
            rows.push(vec![
                t.to_string(),
                "all".into(),
                "aggregate".into(),
                fmt_float(trace.aggregate[t]),
            ]);
        }
        write_csv(&path, &["t", "virus", "node", "e"], rows)?;
        Ok(path)
    }

    pub fn write_lstar(&self, trace: &ErrorTrace, k: usize) -> Result<PathBuf, OutputError> {
        let path = self.path(&format!("lstar_{}.csv", k + 1));
        let rows = trace.lstar.iter().enumerate().map(|(t, lt)| {
            vec![
                t.to_string(),
                lt[k].map_or_else(|| UNDEFINED.to_string(), fmt_float),
            ]
        });
        write_csv(&path, &["t", "lstar"], rows)?;
        Ok(path)
    }

    pub fn write_gains(&self, model: &NetworkModel, gains: &[f64], k: usize) -> Result<PathBuf, OutputError> {
        let path = self.path(&format!("gains_{}.csv", k + 1));
        let rows = gains
            .iter()
            .enumerate()
            .map(|(i, g)| vec![model.labels()[i].clone(), fmt_float(*g)]);
        write_csv(&path, &["node", "gain"], rows)?;
        Ok(path)
    }

    /// `eta,outcome,t`: `t` is the settling time when converged and the
    /// divergence time when diverged.
    pub fn write_eta_sweep(&self, points: &[SweepPoint]) -> Result<PathBuf, OutputError> {
        let path = self.path("eta_sweep.csv");
        let rows = points.iter().map(|p| {
            let (outcome, t) = match p.outcome {
                SweepOutcome::Converged { t_star } => ("converged", t_star.to_string()),
                SweepOutcome::Diverged { at } => ("diverged", at.to_string()),
                SweepOutcome::NotConverged => ("not-converged", String::new()),
            };
            vec![fmt_float(p.eta), outcome.to_string(), t]
        });
        write_csv(&path, &["eta", "outcome", "t"], rows)?;
        Ok(path)
    }
}

/// Gnuplot commands for the CSV files of one run.
pub fn gnuplot_script(model: &NetworkModel) -> String {
    let mut s = String::from("set datafile separator ','\nset key autotitle columnhead\nset xlabel 't'\n");
    for k in 1..=model.viruses() {
        s.push_str(&format!("\nset title 'virus {k}: infected fraction per node'\nplot "));
        let curves: Vec<String> = model
            .labels()
            .iter()
            .map(|l| format!("'trajectory_{k}.csv' using 1:(stringcolumn(2) eq '{l}' ? $4 : 1/0) with lines title '{l}'"))
            .collect();
        s.push_str(&curves.join(", \\\n     "));
        s.push_str(&format!(
            "\npause -1\nset title 'virus {k}: effective reproduction number'\nplot 'rho_tilde_{k}.csv' using 1:2 with lines, 1 dashtype 2 notitle\npause -1\n"
        ));
    }
    s.push_str(
        "\nset title 'aggregated estimation error'\nplot 'observer_error.csv' using 1:(stringcolumn(3) eq 'aggregate' ? $4 : 1/0) with lines title 'mean |e|'\npause -1\n",
    );
    s
}
