use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "run_id,phase,step,metric,value";

/// One event: `step` is an epoch or a layer index depending on the phase.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub run_id: String,
    pub phase: String,
    pub step: usize,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    pub fn new(run_id: &str, phase: &str, step: usize, metric: &str, value: f64) -> Self {
        Self {
            run_id: run_id.into(),
            phase: phase.into(),
            step,
            metric: metric.into(),
            value,
        }
    }

    fn encode(&self) -> Result<String> {
        for field in [&self.run_id, &self.phase, &self.metric] {
            if field.contains([',', '\n']) {
                return Err(Error::Config(format!("metrics field {field:?} contains ',' or newline")));
            }
        }
        Ok(format!(
            "{},{},{},{},{}",
            self.run_id, self.phase, self.step, self.metric, self.value
        ))
    }

    fn decode(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Parse(format!("bad metrics row {line:?}"));
        if f.len() != 5 {
            return Err(bad());
        }
        Ok(Self {
            run_id: f[0].into(),
            phase: f[1].into(),
            step: f[2].parse().map_err(|_| bad())?,
            metric: f[3].into(),
            value: f[4].parse().map_err(|_| bad())?,
        })
    }
}

/// Append-only CSV log. The header is written when the file is created.
#[derive(Clone, Debug)]
pub struct MetricsLog {
    path: PathBuf,
}

impl MetricsLog {
    pub fn open(path: &Path) -> Result<Self> {
        let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        if fresh {
            fs::write(path, format!("{METRICS_HEADER}\n"))?;
        } else {
            let text = fs::read_to_string(path)?;
            if text.lines().next() != Some(METRICS_HEADER) {
                return Err(Error::Parse(format!("{} is not a metrics log", path.display())));
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, row: &MetricRow) -> Result<()> {
        self.append_all(std::slice::from_ref(row))
    }

    pub fn append_all(&self, rows: &[MetricRow]) -> Result<()> {
        let mut text = String::new();
        for r in rows {
            text.push_str(&r.encode()?);
            text.push('\n');
        }
        let mut f = OpenOptions::new().append(true).open(&self.path)?;
        f.write_all(text.as_bytes())?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Parse(format!("{} is not a metrics log", path.display())));
    }
    lines.filter(|l| !l.is_empty()).map(MetricRow::decode).collect()
}
