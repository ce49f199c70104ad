//! Reading and writing `region,period,value` files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use drm_core::{FusedData, Sample, TiltSpec};

use crate::error::{CliError, Result};

pub const HEADER: [&str; 3] = ["region", "period", "value"];

#[derive(Debug, Clone, PartialEq)]
pub struct RecordRow {
    pub region: String,
    pub period: String,
    pub value: f64,
}

/// Which periods enter the analysis. Pooling is never implicit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PeriodFilter {
    All,
    Only(Vec<String>),
}

impl PeriodFilter {
    pub fn admits(&self, period: &str) -> bool {
        match self {
            PeriodFilter::All => true,
            PeriodFilter::Only(labels) => labels.iter().any(|l| l == period),
        }
    }
}

impl FromStr for PeriodFilter {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") {
            return Ok(PeriodFilter::All);
        }
        let labels: Vec<String> = s
            .split(',')
            .map(|p| p.trim().to_string())
            .filter(|p| !p.is_empty())
            .collect();
        if labels.is_empty() {
            return Err(CliError::Config("--periods needs `all` or a list of period labels".into()));
        }
        Ok(PeriodFilter::Only(labels))
    }
}

/// Samples selected from a records file, reference first.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub reference: Sample,
    pub neighbors: Vec<Sample>,
    /// Rows dropped for `value <= 0`, per selected region.
    pub rejected: BTreeMap<String, usize>,
}

impl Ingested {
    /// Fuses the samples under the given per-neighbor tilts.
    pub fn fuse(&self, tilts: Vec<TiltSpec>) -> Result<FusedData> {
        let mut samples = Vec::with_capacity(1 + self.neighbors.len());
        samples.push(self.reference.clone());
        samples.extend(self.neighbors.iter().cloned());
        Ok(drm_core::validate(samples, tilts)?)
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        std::iter::once(&self.reference).chain(&self.neighbors)
    }

    pub fn rejected_total(&self) -> usize {
        self.rejected.values().sum()
    }
}

/// Parses every row of a records file. Values are not filtered here.
pub fn read_records<R: Read>(reader: R) -> Result<Vec<RecordRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.to_ascii_lowercase()).collect();
    if header != HEADER {
        return Err(CliError::Parse {
            line: 1,
            message: format!("expected header `region,period,value`, found `{}`", header.join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let value: f64 = rec[2].parse().map_err(|_| CliError::Parse {
            line,
            message: format!("value `{}` is not a number", &rec[2]),
        })?;
        if !value.is_finite() {
            return Err(CliError::Parse {
                line,
                message: format!("value `{}` is not finite", &rec[2]),
            });
        }
        if rec[0].is_empty() || rec[1].is_empty() {
            return Err(CliError::Parse {
                line,
                message: "empty region or period".into(),
            });
        }
        rows.push(RecordRow {
            region: rec[0].to_string(),
            period: rec[1].to_string(),
            value,
        });
    }
    Ok(rows)
}

/// Selects the reference and neighbor samples from parsed rows.
pub fn select(
    rows: &[RecordRow],
    reference: &str,
    neighbors: &[String],
    periods: &PeriodFilter,
) -> Result<Ingested> {
    let regions: BTreeSet<&str> = rows.iter().map(|r| r.region.as_str()).collect();
    let wanted: Vec<&str> = std::iter::once(reference)
        .chain(neighbors.iter().map(String::as_str))
        .collect();
    for (i, w) in wanted.iter().enumerate() {
        if !regions.contains(w) {
            return Err(CliError::UnknownRegion(w.to_string()));
        }
        if wanted[..i].contains(w) {
            return Err(CliError::Config(format!("region `{w}` is selected twice")));
        }
    }
    if let PeriodFilter::Only(labels) = periods {
        let known: BTreeSet<&str> = rows.iter().map(|r| r.period.as_str()).collect();
        if let Some(l) = labels.iter().find(|l| !known.contains(l.as_str())) {
            return Err(CliError::UnknownPeriod(l.clone()));
        }
    }

    let mut values: Vec<Vec<f64>> = vec![Vec::new(); wanted.len()];
    let mut rejected: BTreeMap<String, usize> = wanted.iter().map(|w| (w.to_string(), 0)).collect();
    for row in rows.iter().filter(|r| periods.admits(&r.period)) {
        let Some(k) = wanted.iter().position(|w| *w == row.region) else {
            continue;
        };
        if row.value > 0.0 {
            values[k].push(row.value);
        } else {
            *rejected.get_mut(&row.region).unwrap() += 1;
        }
    }

    let mut samples = Vec::with_capacity(wanted.len());
    for (k, (label, v)) in wanted.iter().zip(values).enumerate() {
        if v.is_empty() {
            return Err(CliError::EmptyAfterFilter(label.to_string()));
        }
        samples.push(if k == 0 {
            Sample::reference(*label, v)?
        } else {
            Sample::neighbor(*label, v)?
        });
    }
    let mut it = samples.into_iter();
    Ok(Ingested {
        reference: it.next().unwrap(),
        neighbors: it.collect(),
        rejected,
    })
}

/// Reads `path` and selects the requested samples.
pub fn ingest(
    path: &Path,
    reference: &str,
    neighbors: &[String],
    periods: &PeriodFilter,
) -> Result<Ingested> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::FileNotFound(path.to_path_buf()),
        _ => CliError::Io(e),
    })?;
    let rows = read_records(file)?;
    select(&rows, reference, neighbors, periods)
}

pub fn write_records<W: Write>(writer: W, rows: &[RecordRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record([r.region.as_str(), r.period.as_str(), &r.value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Flattens samples into rows under one period label, in sample order.
pub fn rows_from_samples<'a>(samples: impl IntoIterator<Item = &'a Sample>, period: &str) -> Vec<RecordRow> {
    samples
        .into_iter()
        .flat_map(|s| {
            s.values().iter().map(move |&value| RecordRow {
                region: s.label().to_string(),
                period: period.to_string(),
                value,
            })
        })
        .collect()
}

/// Writes the samples of `data` so that [`ingest`] recovers them.
pub fn write_fused<W: Write>(writer: W, data: &FusedData, period: &str) -> Result<()> {
    let samples = std::iter::once(data.reference()).chain(data.neighbors().iter().map(|(s, _)| s));
    write_records(writer, &rows_from_samples(samples, period))
}
