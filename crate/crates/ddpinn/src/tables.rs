//! The benchmark tables: row definitions, scaled execution and rendering.

use std::fmt::Write as _;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use ddpinn_core::metrics::{aggregate, Summary};
use ddpinn_core::optim::AscentRates;
use ddpinn_core::problems::ProblemKind;
use ddpinn_core::train::Algorithm;

use crate::config::{PartitionRecipe, RunConfig, DEFAULT_CHECKPOINTS};
use crate::run::{run, RunRecord};

pub const TABLE_IDS: [u8; 5] = [1, 3, 4, 5, 6];

/// One (algorithm, parameter) line of a table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowSpec {
    pub algorithm: Algorithm,
    pub inner_epochs: Option<usize>,
    pub rates: AscentRates,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableSpec {
    pub id: u8,
    pub problem: ProblemKind,
    /// One block of rows per partition.
    pub partitions: Vec<PartitionRecipe>,
    pub rows: Vec<RowSpec>,
    pub checkpoints: Vec<usize>,
}

fn a2(alpha_lambda: f64, alpha_d: f64) -> RowSpec {
    RowSpec { algorithm: Algorithm::A2, inner_epochs: None, rates: AscentRates { alpha0: 0.1, alpha_lambda, alpha_d } }
}

fn a3(n_l: usize, alpha_lambda: f64, alpha_d: f64) -> RowSpec {
    RowSpec { algorithm: Algorithm::A3, inner_epochs: Some(n_l), rates: AscentRates { alpha0: 0.1, alpha_lambda, alpha_d } }
}

const A1: RowSpec = RowSpec { algorithm: Algorithm::A1, inner_epochs: None, rates: AscentRates { alpha0: 0.0, alpha_lambda: 0.0, alpha_d: 0.0 } };

pub fn table_spec(id: u8) -> anyhow::Result<TableSpec> {
    let grid = |nx, ny| PartitionRecipe::Grid { nx, ny };
    let checkpoints = DEFAULT_CHECKPOINTS.to_vec();
    let a3_rows = |params: [(usize, f64); 4]| params.map(|(n, a)| a3(n, a, 0.0));
    let spec = match id {
        1 => TableSpec {
            id,
            problem: ProblemKind::PoissonSmooth,
            partitions: vec![grid(1, 1)],
            rows: vec![A1, RowSpec { algorithm: Algorithm::A2, inner_epochs: None, rates: AscentRates { alpha0: 0.1, alpha_lambda: 0.0, alpha_d: 0.0 } }],
            checkpoints,
        },
        3 => TableSpec {
            id,
            problem: ProblemKind::PoissonSmooth,
            partitions: vec![grid(2, 1), grid(2, 2), grid(3, 3), grid(4, 4)],
            rows: [A1, a2(0.1, 0.0)].into_iter().chain(a3_rows([(100, 0.1), (200, 0.05), (500, 0.01), (1000, 0.005)])).collect(),
            checkpoints,
        },
        4 => TableSpec {
            id,
            problem: ProblemKind::DiscCoeff,
            partitions: vec![PartitionRecipe::Native],
            rows: [A1, a2(0.1, 0.0)].into_iter().chain(a3_rows([(100, 0.05), (200, 0.01), (500, 0.002), (1000, 0.001)])).collect(),
            checkpoints,
        },
        5 => TableSpec {
            id,
            problem: ProblemKind::PoissonInterface,
            partitions: vec![PartitionRecipe::Native],
            rows: [A1, a2(0.1, 0.0)].into_iter().chain(a3_rows([(100, 0.005), (200, 0.003), (500, 0.001), (1000, 0.0005)])).collect(),
            checkpoints,
        },
        6 => TableSpec {
            id,
            problem: ProblemKind::StokesInterface,
            partitions: vec![PartitionRecipe::Native],
            rows: vec![A1, a2(0.1, 0.1), a3(100, 0.02, 0.2), a3(200, 0.001, 0.1), a3(500, 0.0, 0.05), a3(1000, 0.0, 0.01)],
            checkpoints,
        },
        _ => bail!("unknown table {id}; expected one of {TABLE_IDS:?}"),
    };
    Ok(spec)
}

/// Checkpoints multiplied by `scale`. Each must land on a whole epoch.
pub fn scale_checkpoints(checkpoints: &[usize], scale: f64) -> anyhow::Result<Vec<usize>> {
    if !(scale > 0.0 && scale.is_finite()) {
        bail!("scale must be positive, got {scale}");
    }
    checkpoints
        .iter()
        .map(|&c| {
            let s = c as f64 * scale;
            let r = s.round();
            if r < 1.0 || (s - r).abs() > 1e-9 * s.max(1.0) {
                bail!("scale {scale} turns checkpoint {c} into {s}, not a positive whole epoch count");
            }
            Ok(r as usize)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableOptions {
    pub scale: f64,
    pub seeds: Vec<u64>,
    pub workers: usize,
    pub grid_points: usize,
    pub trace_stride: usize,
}

impl Default for TableOptions {
    fn default() -> Self {
        Self { scale: 1.0, seeds: (0..5).collect(), workers: 1, grid_points: 501, trace_stride: 1000 }
    }
}

impl TableSpec {
    /// The run configurations of the table in display order.
    pub fn configs(&self, options: &TableOptions) -> anyhow::Result<Vec<RunConfig>> {
        let checkpoints = scale_checkpoints(&self.checkpoints, options.scale)?;
        let epochs = *checkpoints.last().context("table without checkpoints")?;
        let mut out = Vec::new();
        for &partition in &self.partitions {
            for row in &self.rows {
                let mut c = RunConfig::new(self.problem, row.algorithm, epochs);
                c.partition = partition;
                c.inner_epochs = row.inner_epochs;
                c.rates = row.rates;
                c.checkpoints = Some(checkpoints.clone());
                c.seeds = options.seeds.clone();
                c.workers = options.workers;
                c.grid_points = options.grid_points;
                c.trace_stride = options.trace_stride;
                c.validate().with_context(|| format!("table {} row {}", self.id, row_label(self.id, &c)))?;
                out.push(c);
            }
        }
        Ok(out)
    }
}

/// Runs every row of table `id`, calling `progress` after each row.
pub fn reproduce_table(id: u8, options: &TableOptions, mut progress: impl FnMut(&RunRecord)) -> anyhow::Result<Vec<RunRecord>> {
    let spec = table_spec(id)?;
    let mut records = Vec::new();
    for c in spec.configs(options)? {
        let r = run(&c)?;
        progress(&r);
        records.push(r);
    }
    Ok(records)
}

/// Plain decimal with six significant digits.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0.00000".into();
    }
    // the exponent after rounding to six digits, so 9.999996 counts as 10
    let exp: i32 = format!("{x:.5e}").rsplit('e').next().and_then(|e| e.parse().ok()).unwrap_or(0);
    format!("{:.*}", (5 - exp).max(0) as usize, x)
}

fn summary_text(s: &Summary) -> String {
    match s.std {
        Some(sd) => format!("{} ({})", sig6(s.mean), sig6(sd)),
        None => format!("{} (-)", sig6(s.mean)),
    }
}

/// Label of the algorithm column; Table 1 names the losses.
pub fn algorithm_label(table: u8, c: &RunConfig) -> String {
    match (table, c.algorithm) {
        (1, Algorithm::A1) => "J1".into(),
        (1, _) => "J2".into(),
        (_, a) => a.name().to_uppercase(),
    }
}

/// The parameter column: only the knobs that matter for the row.
pub fn row_label(table: u8, c: &RunConfig) -> String {
    let stokes = c.problem == ProblemKind::StokesInterface.name();
    let mut parts = Vec::new();
    if c.algorithm != Algorithm::A1 {
        if let Some(n) = c.inner_epochs.filter(|_| c.algorithm == Algorithm::A3) {
            parts.push(format!("N_l={n}"));
        }
        if table == 1 {
            parts.push(format!("alpha_0={}", c.rates.alpha0));
        } else {
            parts.push(format!("alpha_lambda={}", c.rates.alpha_lambda));
        }
        if stokes && c.with_divergence {
            parts.push(format!("alpha_d={}", c.rates.alpha_d));
        }
    }
    parts.join(" ")
}

/// Aggregated cell of one record at one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub epsilon_u: Summary,
    pub epsilon_p: Option<Summary>,
    pub communications: usize,
}

pub fn cell(record: &RunRecord, checkpoint: usize) -> anyhow::Result<Cell> {
    let mut u = Vec::new();
    let mut p = Vec::new();
    let mut comms = None;
    for r in &record.results {
        let cp = r.checkpoints.iter().find(|c| c.epoch == checkpoint).with_context(|| format!("seed {} has no checkpoint {checkpoint}", r.seed))?;
        u.push(cp.errors.epsilon_u);
        p.extend(cp.errors.epsilon_p);
        match comms {
            None => comms = Some(cp.communications),
            Some(c) if c != cp.communications => bail!("seeds disagree on communications at epoch {checkpoint}"),
            _ => {}
        }
    }
    Ok(Cell {
        epsilon_u: aggregate(&u)?,
        epsilon_p: if p.is_empty() { None } else { Some(aggregate(&p)?) },
        communications: comms.context("record without seeds")?,
    })
}

/// Layout shared by the CSV and Markdown renderings.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// One row per record (partition, algorithm, parameters) and one column per checkpoint.
pub fn render(table: u8, records: &[RunRecord]) -> anyhow::Result<Rendered> {
    let checkpoints = records.first().map(RunRecord::checkpoint_epochs).unwrap_or_default();
    let mut header: Vec<String> = ["partition", "algorithm", "parameters"].map(String::from).to_vec();
    header.extend(checkpoints.iter().map(|c| format!("{c} epochs")));
    let mut rows = Vec::new();
    for rec in records {
        if rec.checkpoint_epochs() != checkpoints {
            bail!("records have different checkpoints");
        }
        let mut row = vec![rec.config.partition.to_string(), algorithm_label(table, &rec.config), row_label(table, &rec.config)];
        for &cp in &checkpoints {
            let c = cell(rec, cp)?;
            let text = match &c.epsilon_p {
                Some(p) => format!("u: {}; p: {} [{}]", summary_text(&c.epsilon_u), summary_text(p), c.communications),
                None => format!("{} [{}]", summary_text(&c.epsilon_u), c.communications),
            };
            row.push(text);
        }
        rows.push(row);
    }
    Ok(Rendered { header, rows })
}

impl Rendered {
    pub fn to_csv(&self) -> anyhow::Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "| {} |", self.header.join(" | "));
        let _ = writeln!(s, "|{}", "---|".repeat(self.header.len()));
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|c| c.replace('|', "\\|")).collect();
            let _ = writeln!(s, "| {} |", cells.join(" | "));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig6_is_plain_decimal() {
        assert_eq!(sig6(0.00129), "0.00129000");
        assert_eq!(sig6(3.17e-4), "0.000317000");
        assert_eq!(sig6(1.0), "1.00000");
        assert_eq!(sig6(123456.7), "123457");
        assert_eq!(sig6(9.999996), "10.0000");
        assert_eq!(sig6(0.0999999996), "0.100000");
        assert_eq!(sig6(-0.5), "-0.500000");
        assert_eq!(sig6(0.0), "0.00000");
    }

    #[test]
    fn scale_arithmetic() {
        assert_eq!(scale_checkpoints(&DEFAULT_CHECKPOINTS, 0.1).unwrap(), vec![1000, 2000, 5000, 10_000]);
        assert!(scale_checkpoints(&DEFAULT_CHECKPOINTS, 0.00001).is_err());
        assert!(scale_checkpoints(&DEFAULT_CHECKPOINTS, 0.0).is_err());
    }

    #[test]
    fn every_table_validates_at_full_scale() {
        for id in TABLE_IDS {
            let t = table_spec(id).unwrap();
            let configs = t.configs(&TableOptions::default()).unwrap();
            assert_eq!(configs.len(), t.rows.len() * t.partitions.len());
            for c in &configs {
                assert_eq!(c.epochs, 100_000);
                let tc = c.train_config();
                assert_eq!(tc.expected_communications(), 100_000 / tc.inner_epochs);
            }
        }
        assert!(table_spec(2).is_err());
    }

    #[test]
    fn row_labels() {
        let t = table_spec(6).unwrap();
        let c = &t.configs(&TableOptions::default()).unwrap()[2];
        assert_eq!(row_label(6, c), "N_l=100 alpha_lambda=0.02 alpha_d=0.2");
        let t = table_spec(1).unwrap();
        let c = t.configs(&TableOptions::default()).unwrap();
        assert_eq!((algorithm_label(1, &c[0]).as_str(), row_label(1, &c[0]).as_str()), ("J1", ""));
        assert_eq!((algorithm_label(1, &c[1]).as_str(), row_label(1, &c[1]).as_str()), ("J2", "alpha_0=0.1"));
    }

    #[test]
    fn a3_row_rejects_scale_below_its_inner_epochs() {
        let t = table_spec(3).unwrap();
        let opts = TableOptions { scale: 0.001, ..Default::default() };
        assert!(t.configs(&opts).is_err());
    }
}
