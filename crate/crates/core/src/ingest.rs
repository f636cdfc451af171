//! CSV panels in and out.
//!
//! Input files have a header row, a leading `YYYY-MM` date column and one
//! numeric column per series. Transforms come from the `[transforms]`
//! section of the config; if any series is differenced, the first row is
//! dropped from every series so the panel stays rectangular.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::config::{Config, Transform};
use crate::error::{Error, Result};
use crate::model::Panel;

/// Untransformed numeric table.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub dates: Vec<String>,
    pub names: Vec<String>,
    /// One vector per column.
    pub columns: Vec<Vec<f64>>,
}

fn parse_month(s: &str) -> Option<(i32, u32)> {
    let (y, m) = s.trim().split_once('-')?;
    if y.len() != 4 || m.len() != 2 {
        return None;
    }
    let month: u32 = m.parse().ok()?;
    ((1..=12).contains(&month)).then_some((y.parse().ok()?, month))
}

/// Reads the table, checking dates and reporting every missing cell.
pub fn read_table<R: Read>(reader: R) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        return Err(Error::Data("need a date column and at least one series".into()));
    }
    let names: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut dates = Vec::new();
    let mut columns = vec![Vec::new(); names.len()];
    let mut missing = Vec::new();
    let mut previous: Option<(i32, u32)> = None;
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let date = record.get(0).unwrap_or("").trim().to_string();
        let Some(ym) = parse_month(&date) else {
            return Err(Error::Data(format!("row {}: bad date {date:?}, expected YYYY-MM", row + 1)));
        };
        if previous.is_some_and(|p| p >= ym) {
            return Err(Error::Data(format!("row {}: date {date} is not after the previous row", row + 1)));
        }
        previous = Some(ym);
        dates.push(date);
        for (c, name) in names.iter().enumerate() {
            let cell = record.get(c + 1).unwrap_or("").trim();
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => columns[c].push(v),
                _ => {
                    missing.push(format!("({}, {name})", row + 1));
                    columns[c].push(f64::NAN);
                }
            }
        }
    }
    if !missing.is_empty() {
        let shown = missing.iter().take(20).cloned().collect::<Vec<_>>().join(", ");
        let more = if missing.len() > 20 {
            format!(" and {} more", missing.len() - 20)
        } else {
            String::new()
        };
        return Err(Error::Data(format!("missing values at {shown}{more}")));
    }
    if dates.is_empty() {
        return Err(Error::Data("no data rows".into()));
    }
    Ok(RawTable { dates, names, columns })
}

/// Applies `transform` to one column. Log transforms are multiplied by
/// `log_scale`; differenced columns are one shorter.
pub fn apply_transform(name: &str, values: &[f64], transform: Transform, log_scale: f64) -> Result<Vec<f64>> {
    let mut v = values.to_vec();
    if transform.is_log() {
        if let Some((row, x)) = v.iter().enumerate().find(|(_, x)| **x <= 0.0) {
            return Err(Error::Data(format!(
                "log of nonpositive value {x} at ({}, {name})",
                row + 1
            )));
        }
        v.iter_mut().for_each(|x| *x = log_scale * x.ln());
    }
    if transform.differences() {
        v = v.windows(2).map(|w| w[1] - w[0]).collect();
    }
    Ok(v)
}

/// Builds a panel from a raw table under the config's transforms, groups and
/// exogenous list.
pub fn panel_from_table(table: &RawTable, config: &Config) -> Result<Panel> {
    for name in config.transforms.series.keys().chain(&config.data.exogenous) {
        if !table.names.contains(name) {
            return Err(Error::Config(format!("unknown series {name:?}")));
        }
    }
    let transforms: Vec<Transform> = table.names.iter().map(|n| config.transforms.of(n)).collect();
    let drop = usize::from(transforms.iter().any(|t| t.differences()));
    let n = table.dates.len();
    if n <= drop {
        return Err(Error::Data("too few rows to difference".into()));
    }
    let mut series = Vec::new();
    let mut exog = Vec::new();
    for ((name, col), &t) in table.names.iter().zip(&table.columns).zip(&transforms) {
        let out = apply_transform(name, col, t, config.transforms.log_scale)?;
        // align columns that were not differenced with those that were
        let out = out[out.len() - (n - drop)..].to_vec();
        if config.data.exogenous.contains(name) {
            exog.push((name.clone(), out));
        } else {
            series.push((name.clone(), t, out));
        }
    }
    if series.is_empty() {
        return Err(Error::Data("every column is exogenous".into()));
    }
    let rows = n - drop;
    if config.data.demean || config.data.standardize {
        for (_, _, v) in &mut series {
            let mean = v.iter().sum::<f64>() / rows as f64;
            v.iter_mut().for_each(|x| *x -= mean);
            if config.data.standardize {
                let sd = (v.iter().map(|x| x * x).sum::<f64>() / (rows as f64 - 1.0)).sqrt();
                if sd > 0.0 {
                    v.iter_mut().for_each(|x| *x /= sd);
                }
            }
        }
    }
    let values = DMatrix::from_fn(rows, series.len(), |r, c| series[c].2[r]);
    let names: Vec<String> = series.iter().map(|s| s.0.clone()).collect();
    let mut panel = Panel::new(values, names.clone())?;
    panel.groups = config.groups_for(&names);
    panel.transform_log = series.iter().map(|s| s.1.is_log()).collect();
    panel.dates = table.dates[drop..].to_vec();
    if !exog.is_empty() {
        panel.exogenous = Some(DMatrix::from_fn(rows, exog.len(), |r, c| exog[c].1[r]));
        panel.exogenous_names = exog.into_iter().map(|e| e.0).collect();
    }
    panel.validate()?;
    Ok(panel)
}

pub fn read_panel<R: Read>(reader: R, config: &Config) -> Result<Panel> {
    panel_from_table(&read_table(reader)?, config)
}

/// Reads the file named by `config.data.path`, or `path` if given.
pub fn ingest(path: Option<&Path>, config: &Config) -> Result<Panel> {
    let path = match (path, &config.data.path) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => p.into(),
        (None, None) => return Err(Error::Config("no data path given".into())),
    };
    let file = std::fs::File::open(&path).map_err(|e| {
        std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))
    })?;
    read_panel(file, config)
}

/// Writes `date, series..., exogenous...` with full-precision floats.
pub fn write_panel<W: Write>(panel: &Panel, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["date".to_string()];
    header.extend(panel.names.iter().cloned());
    header.extend(panel.exogenous_names.iter().cloned());
    out.write_record(&header)?;
    for t in 0..panel.len() {
        let mut rec = vec![panel.dates[t].clone()];
        rec.extend(panel.values.row(t).iter().map(|v| v.to_string()));
        if let Some(x) = &panel.exogenous {
            rec.extend(x.row(t).iter().map(|v| v.to_string()));
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Monthly labels `start, start + 1, ...` for synthetic panels.
pub fn monthly_dates(start_year: i32, n: usize) -> Vec<String> {
    (0..n)
        .map(|i| format!("{:04}-{:02}", start_year + (i / 12) as i32, i % 12 + 1))
        .collect()
}
