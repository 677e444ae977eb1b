//! JSON and CSV renderings of evaluation reports.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::evaluation::EvalReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format {other:?} (json|csv)")),
        }
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("json encoding: {e}")))?;
    s.push('\n');
    Ok(s)
}

#[derive(Serialize)]
struct CsvRow<'a> {
    mean_accuracy: f64,
    ci95: f64,
    runs: u64,
    seed: u64,
    ways: usize,
    shots: usize,
    queries: usize,
    sampling: &'a str,
    pool_per_class: String,
    q1: Option<usize>,
    k: usize,
    kappa: u32,
    alpha: f64,
    epochs: usize,
    learning_rate: f64,
    weight_decay: f64,
    mean_epochs_run: f64,
    episodes_digest: &'a str,
    features: &'a str,
}

/// One header line plus one row per report.
pub fn reports_to_csv<'a>(reports: impl IntoIterator<Item = &'a EvalReport>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(CsvRow {
            mean_accuracy: r.mean_accuracy,
            ci95: r.ci95,
            runs: r.runs,
            seed: r.seed,
            ways: r.ways,
            shots: r.shots,
            queries: r.queries,
            sampling: &r.sampling,
            pool_per_class: r.pool_per_class.to_string(),
            q1: r.q1,
            k: r.k,
            kappa: r.kappa,
            alpha: r.alpha,
            epochs: r.epochs,
            learning_rate: r.learning_rate,
            weight_decay: r.weight_decay,
            mean_epochs_run: r.mean_epochs_run,
            episodes_digest: &r.episodes_digest,
            features: &r.features,
        })
        .map_err(|e| Error::Format(format!("csv encoding: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Format(format!("csv encoding: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}
