//! Accuracy tables and curve data from training runs.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::{Path, PathBuf};

use crate::data::Split;
use crate::error::Result;
use crate::instrument::{read_metrics, MetricsRecord};
use crate::model::{Arch, DatasetKind, ModelKind, Variant};
use crate::train::{TrainConfig, CONFIG_FILE, METRICS_FILE};

#[derive(Debug, Clone)]
pub struct Run {
    pub source: PathBuf,
    pub config: Option<TrainConfig>,
    pub records: Vec<MetricsRecord>,
}

impl Run {
    /// Accepts a run directory or a metrics file; a `config.json` next to
    /// the metrics is picked up when present.
    pub fn load(path: &Path) -> Result<Run> {
        let metrics = if path.is_dir() {
            path.join(METRICS_FILE)
        } else {
            path.to_path_buf()
        };
        let config_path = metrics.parent().map(|p| p.join(CONFIG_FILE));
        let config = match config_path.filter(|p| p.exists()) {
            Some(p) => Some(TrainConfig::read_json(&p)?),
            None => None,
        };
        Ok(Run {
            records: order_records(read_metrics(&metrics)?),
            source: metrics,
            config,
        })
    }

    pub fn kind(&self) -> Option<ModelKind> {
        self.config.as_ref().map(TrainConfig::kind)
    }

    pub fn final_test(&self) -> Option<&MetricsRecord> {
        self.records.iter().rev().find(|r| r.split == Split::Test)
    }
}

/// Sorts by iteration (train before test at equal iterations). When a
/// resumed run repeats an `(iteration, split)` pair, the later line wins.
pub fn order_records(records: Vec<MetricsRecord>) -> Vec<MetricsRecord> {
    let mut latest: BTreeMap<(u64, u8), MetricsRecord> = BTreeMap::new();
    for r in records {
        let split_key = match r.split {
            Split::Train => 0,
            Split::Test => 1,
        };
        latest.insert((r.iteration, split_key), r);
    }
    latest.into_values().collect()
}

/// Comma-separated curve data, one row per record, accuracy in percent.
pub fn curve_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from("iteration,split,loss,accuracy_pct,mults,adds,seconds\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.2},{},{},{:.3}",
            r.iteration,
            r.split,
            r.loss,
            r.percent(),
            r.mults,
            r.adds,
            r.seconds
        );
    }
    out
}

fn column_label(d: DatasetKind, a: Arch) -> String {
    let ds = match d {
        DatasetKind::Mnist => "MNIST",
        DatasetKind::Cifar10 => "CIFAR-10",
    };
    let arch = match a {
        Arch::ConvPool => "ConvPool",
        Arch::AllCnn => "All-CNN",
    };
    format!("{ds} {arch}")
}

/// Variant × (dataset, architecture) grid of final test accuracies in
/// percent. Columns with no runs are omitted; missing cells print `-`.
pub fn accuracy_table(runs: &[Run]) -> String {
    let mut cells: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let columns: Vec<(DatasetKind, Arch)> = DatasetKind::ALL
        .iter()
        .flat_map(|&d| Arch::ALL.iter().map(move |&a| (d, a)))
        .collect();
    for run in runs {
        let (Some(k), Some(rec)) = (run.kind(), run.final_test()) else {
            continue;
        };
        let col = columns
            .iter()
            .position(|&c| c == (k.dataset, k.arch))
            .expect("all columns listed");
        let row = Variant::ALL
            .iter()
            .position(|&v| v == k.variant)
            .expect("all variants listed");
        cells.insert((row, col), rec.percent());
    }
    let used: Vec<usize> = (0..columns.len())
        .filter(|c| cells.keys().any(|(_, cc)| cc == c))
        .collect();

    let mut out = String::from("| Method |");
    for &c in &used {
        let _ = write!(out, " {} |", column_label(columns[c].0, columns[c].1));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(used.len()));
    out.push('\n');
    for (row, v) in Variant::ALL.iter().enumerate() {
        if !used.iter().any(|&c| cells.contains_key(&(row, c))) {
            continue;
        }
        let _ = write!(out, "| {} |", v.report_label());
        for &c in &used {
            match cells.get(&(row, c)) {
                Some(p) => {
                    let _ = write!(out, " {p:.2} |");
                }
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    out
}
