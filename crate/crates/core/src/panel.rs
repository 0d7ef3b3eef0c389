//! Panel (cross-sectional time-series) data: ingestion, alignment on
//! intervention dates, smoothing, normalization and pre/post splitting.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One treated unit and `N − 1` control units observed over `T` periods.
///
/// `t0` counts the pre-intervention periods, so indices `0..t0` are the
/// pre-period and `t0..T` the post-period.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    controls: DMatrix<f64>,
    treated: DVector<f64>,
    t0: usize,
    unit_labels: Vec<String>,
    time_labels: Vec<String>,
}

impl PanelData {
    /// `unit_labels` lists the treated unit first, then the control rows in order.
    pub fn new(
        controls: DMatrix<f64>,
        treated: DVector<f64>,
        t0: usize,
        unit_labels: Vec<String>,
        time_labels: Vec<String>,
    ) -> Result<Self> {
        let t_total = treated.len();
        if controls.nrows() == 0 {
            return Err(Error::Shape("panel needs at least one control unit".into()));
        }
        if controls.ncols() != t_total {
            return Err(Error::Shape(format!(
                "controls have {} periods, treated has {}",
                controls.ncols(),
                t_total
            )));
        }
        if unit_labels.len() != controls.nrows() + 1 {
            return Err(Error::Shape(format!(
                "expected {} unit labels, got {}",
                controls.nrows() + 1,
                unit_labels.len()
            )));
        }
        if time_labels.len() != t_total {
            return Err(Error::Shape(format!(
                "expected {} time labels, got {}",
                t_total,
                time_labels.len()
            )));
        }
        if t0 < 1 || t0 >= t_total {
            return Err(Error::BadT0 { t0, t_total });
        }
        if let Some(pos) = controls.iter().position(|v| !v.is_finite()) {
            let (row, col) = (pos % controls.nrows(), pos / controls.nrows());
            return Err(Error::MissingValue {
                unit: unit_labels[row + 1].clone(),
                time: time_labels[col].clone(),
            });
        }
        if let Some(col) = treated.iter().position(|v| !v.is_finite()) {
            return Err(Error::MissingValue {
                unit: unit_labels[0].clone(),
                time: time_labels[col].clone(),
            });
        }
        Ok(Self {
            controls,
            treated,
            t0,
            unit_labels,
            time_labels,
        })
    }

    /// Builds a panel with generated labels (`treated`, `control_1`, … and `1..=T`).
    pub fn from_parts(controls: DMatrix<f64>, treated: DVector<f64>, t0: usize) -> Result<Self> {
        let units = std::iter::once("treated".to_string())
            .chain((1..=controls.nrows()).map(|i| format!("control_{i}")))
            .collect();
        let times = (1..=treated.len()).map(|t| t.to_string()).collect();
        Self::new(controls, treated, t0, units, times)
    }

    pub fn controls(&self) -> &DMatrix<f64> {
        &self.controls
    }

    pub fn treated(&self) -> &DVector<f64> {
        &self.treated
    }

    pub fn t0(&self) -> usize {
        self.t0
    }

    /// Total number of units `N`, treated included.
    pub fn n_units(&self) -> usize {
        self.controls.nrows() + 1
    }

    pub fn n_controls(&self) -> usize {
        self.controls.nrows()
    }

    pub fn t_total(&self) -> usize {
        self.treated.len()
    }

    pub fn unit_labels(&self) -> &[String] {
        &self.unit_labels
    }

    pub fn treated_label(&self) -> &str {
        &self.unit_labels[0]
    }

    pub fn time_labels(&self) -> &[String] {
        &self.time_labels
    }

    /// Largest absolute treated value over the pre-period.
    pub fn pre_scale(&self) -> f64 {
        self.treated.rows(0, self.t0).amax()
    }

    pub fn with_treated(&self, treated: DVector<f64>) -> Result<Self> {
        Self::new(
            self.controls.clone(),
            treated,
            self.t0,
            self.unit_labels.clone(),
            self.time_labels.clone(),
        )
    }

    pub fn with_t0(&self, t0: usize) -> Result<Self> {
        Self::new(
            self.controls.clone(),
            self.treated.clone(),
            t0,
            self.unit_labels.clone(),
            self.time_labels.clone(),
        )
    }

    /// Panel restricted to the first `t_total` periods with intervention index `t0`.
    pub fn truncated(&self, t_total: usize, t0: usize) -> Result<Self> {
        if t_total > self.t_total() {
            return Err(Error::Shape(format!(
                "cannot truncate {} periods to {t_total}",
                self.t_total()
            )));
        }
        Self::new(
            self.controls.columns(0, t_total).into_owned(),
            self.treated.rows(0, t_total).into_owned(),
            t0,
            self.unit_labels.clone(),
            self.time_labels[..t_total].to_vec(),
        )
    }

    /// Casts control row `control` as the treated unit; the original treated
    /// unit is dropped from the donor pool.
    pub fn placebo(&self, control: usize) -> Result<Self> {
        let n = self.n_controls();
        if control >= n {
            return Err(Error::InvalidArgument(format!("control index {control} out of range")));
        }
        if n < 2 {
            return Err(Error::Shape("placebo needs at least two control units".into()));
        }
        let treated = self.controls.row(control).transpose();
        let controls = self.controls.clone().remove_row(control);
        let mut units = Vec::with_capacity(n);
        units.push(self.unit_labels[control + 1].clone());
        units.extend(
            self.unit_labels[1..]
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != control)
                .map(|(_, l)| l.clone()),
        );
        Self::new(controls, treated, self.t0, units, self.time_labels.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Long,
    Wide,
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "long" => Ok(Layout::Long),
            "wide" => Ok(Layout::Wide),
            other => Err(Error::InvalidArgument(format!("unknown layout `{other}`"))),
        }
    }
}

/// Raw unit-by-time table before the treated unit is chosen.
#[derive(Debug, Clone)]
struct UnitTable {
    units: Vec<String>,
    times: Vec<String>,
    values: Vec<Vec<f64>>,
}

impl UnitTable {
    fn into_panel(self, treated_label: &str, t0: usize) -> Result<PanelData> {
        let t_total = self.times.len();
        if t0 < 1 || t0 >= t_total {
            return Err(Error::BadT0 { t0, t_total });
        }
        let treated_idx = self
            .units
            .iter()
            .position(|u| u == treated_label)
            .ok_or_else(|| Error::UnknownTreated(treated_label.to_string()))?;
        let n_controls = self.units.len() - 1;
        if n_controls == 0 {
            return Err(Error::Shape("panel needs at least one control unit".into()));
        }
        let mut controls = DMatrix::zeros(n_controls, t_total);
        let mut labels = vec![self.units[treated_idx].clone()];
        let mut row = 0;
        for (i, series) in self.values.iter().enumerate() {
            if i == treated_idx {
                continue;
            }
            for (t, v) in series.iter().enumerate() {
                controls[(row, t)] = *v;
            }
            labels.push(self.units[i].clone());
            row += 1;
        }
        let treated = DVector::from_vec(self.values[treated_idx].clone());
        PanelData::new(controls, treated, t0, labels, self.times)
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Picks `\t`, `;` or `,` from the first non-comment line.
fn sniff_delimiter(text: &str) -> u8 {
    let header = text
        .lines()
        .find(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty())
        .unwrap_or("");
    if header.contains('\t') {
        b'\t'
    } else if header.contains(';') && !header.contains(',') {
        b';'
    } else {
        b','
    }
}

fn parse_value(raw: &str) -> Option<f64> {
    let raw = raw.trim();
    if raw.is_empty() {
        return None;
    }
    match raw.to_ascii_lowercase().as_str() {
        "na" | "nan" | "null" | "none" => None,
        _ => raw.parse::<f64>().ok().filter(|v| v.is_finite()),
    }
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .delimiter(sniff_delimiter(text))
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_reader(text.as_bytes())
}

fn parse_wide(text: &str, path: &Path) -> Result<UnitTable> {
    let mut rdr = csv_reader(text);
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "wide header needs a unit column and at least one time label".into(),
        });
    }
    let times: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut units = Vec::new();
    let mut values = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let unit = record.get(0).unwrap_or("").to_string();
        if units.contains(&unit) {
            return Err(Error::DuplicateObservation {
                unit,
                time: "*".into(),
            });
        }
        if record.len() != header.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let mut row = Vec::with_capacity(times.len());
        for (t, raw) in record.iter().skip(1).enumerate() {
            match parse_value(raw) {
                Some(v) => row.push(v),
                None => {
                    return Err(Error::MissingValue {
                        unit,
                        time: times[t].clone(),
                    })
                }
            }
        }
        units.push(unit);
        values.push(row);
    }
    Ok(UnitTable {
        units,
        times,
        values,
    })
}

fn parse_long(text: &str, path: &Path) -> Result<UnitTable> {
    let mut rdr = csv_reader(text);
    let header = rdr.headers()?.clone();
    let column = |name: &str| {
        header
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("long header must contain `unit,time,value`; `{name}` missing"),
            })
    };
    let (ui, ti, vi) = (column("unit")?, column("time")?, column("value")?);

    let mut units: Vec<String> = Vec::new();
    let mut unit_index: HashMap<String, usize> = HashMap::new();
    let mut times: Vec<String> = Vec::new();
    let mut time_index: HashMap<String, usize> = HashMap::new();
    let mut cells: HashMap<(usize, usize), Option<f64>> = HashMap::new();
    for record in rdr.records() {
        let record = record?;
        let unit = record.get(ui).unwrap_or("").to_string();
        let time = record.get(ti).unwrap_or("").to_string();
        let value = parse_value(record.get(vi).unwrap_or(""));
        let u = *unit_index.entry(unit.clone()).or_insert_with(|| {
            units.push(unit.clone());
            units.len() - 1
        });
        let t = *time_index.entry(time.clone()).or_insert_with(|| {
            times.push(time.clone());
            times.len() - 1
        });
        if cells.insert((u, t), value).is_some() {
            return Err(Error::DuplicateObservation { unit, time });
        }
    }
    let mut values = vec![vec![0.0; times.len()]; units.len()];
    for (u, unit) in units.iter().enumerate() {
        for (t, time) in times.iter().enumerate() {
            match cells.get(&(u, t)) {
                Some(Some(v)) => values[u][t] = *v,
                _ => {
                    return Err(Error::MissingValue {
                        unit: unit.clone(),
                        time: time.clone(),
                    })
                }
            }
        }
    }
    Ok(UnitTable {
        units,
        times,
        values,
    })
}

/// Reads a panel from a delimiter-separated file.
///
/// Wide files carry one row per unit under a header of time labels; long
/// files carry `unit,time,value` rows. Units and times keep their order of
/// first appearance. Lines starting with `#` are ignored.
pub fn load_panel(path: &Path, layout: Layout, treated_label: &str, t0: usize) -> Result<PanelData> {
    let mut text = String::new();
    open(path)?
        .read_to_string(&mut text)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
    parse_panel(&text, path, layout, treated_label, t0)
}

/// Same as [`load_panel`] on in-memory text; `origin` is used in error messages.
pub fn parse_panel(
    text: &str,
    origin: &Path,
    layout: Layout,
    treated_label: &str,
    t0: usize,
) -> Result<PanelData> {
    let table = match layout {
        Layout::Wide => parse_wide(text, origin)?,
        Layout::Long => parse_long(text, origin)?,
    };
    table.into_panel(treated_label, t0)
}

/// Writes the panel in wide layout, treated unit first.
pub fn write_wide<W: Write>(panel: &PanelData, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["unit".to_string()];
    header.extend(panel.time_labels().iter().cloned());
    w.write_record(&header)?;
    let mut write_row = |label: &str, row: &mut dyn Iterator<Item = f64>| -> Result<()> {
        let mut rec = vec![label.to_string()];
        rec.extend(row.map(format_value));
        w.write_record(&rec)?;
        Ok(())
    };
    write_row(panel.treated_label(), &mut panel.treated().iter().cloned())?;
    for i in 0..panel.n_controls() {
        write_row(&panel.unit_labels()[i + 1], &mut panel.controls().row(i).iter().cloned())?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// Writes the panel in long layout, treated unit first.
pub fn write_long<W: Write>(panel: &PanelData, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["unit", "time", "value"])?;
    for (t, time) in panel.time_labels().iter().enumerate() {
        w.write_record([panel.treated_label(), time, &format_value(panel.treated()[t])])?;
    }
    for i in 0..panel.n_controls() {
        for (t, time) in panel.time_labels().iter().enumerate() {
            w.write_record([
                panel.unit_labels()[i + 1].as_str(),
                time,
                &format_value(panel.controls()[(i, t)]),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v:?}")
}

/// Raw per-unit daily series together with each unit's intervention date.
#[derive(Debug, Clone)]
pub struct AlignmentSpec {
    treated: String,
    units: Vec<UnitRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitRecord {
    pub label: String,
    pub intervention: NaiveDate,
    pub observations: BTreeMap<NaiveDate, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignmentWindow {
    pub pre_days: usize,
    pub post_days: usize,
}

impl AlignmentSpec {
    pub fn new(treated: impl Into<String>, units: Vec<UnitRecord>) -> Result<Self> {
        let treated = treated.into();
        if !units.iter().any(|u| u.label == treated) {
            return Err(Error::UnknownTreated(treated));
        }
        for unit in &units {
            let first = unit.observations.keys().next();
            let last = unit.observations.keys().next_back();
            match (first, last) {
                (Some(&a), Some(&b)) if a <= unit.intervention && unit.intervention <= b => {}
                _ => {
                    return Err(Error::InterventionOutOfRange {
                        unit: unit.label.clone(),
                        date: unit.intervention.to_string(),
                    })
                }
            }
        }
        Ok(Self { treated, units })
    }

    /// Reads a long `unit,time,value` file with ISO-8601 dates and a
    /// `unit,intervention_date` file. Units without a date are dropped.
    pub fn from_files(series: &Path, dates: &Path, treated: &str) -> Result<Self> {
        let date_text = read_text(dates)?;
        let mut rdr = csv_reader(&date_text);
        let header = rdr.headers()?.clone();
        let unit_col = header.iter().position(|h| h.eq_ignore_ascii_case("unit"));
        let date_col = header
            .iter()
            .position(|h| h.eq_ignore_ascii_case("intervention_date"));
        let (unit_col, date_col) = match (unit_col, date_col) {
            (Some(u), Some(d)) => (u, d),
            _ => {
                return Err(Error::Parse {
                    path: dates.to_path_buf(),
                    line: 1,
                    message: "header must be `unit,intervention_date`".into(),
                })
            }
        };
        let mut order = Vec::new();
        let mut interventions = HashMap::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
            let unit = record.get(unit_col).unwrap_or("").to_string();
            let date = parse_date(record.get(date_col).unwrap_or(""), dates, line)?;
            if interventions.insert(unit.clone(), date).is_some() {
                return Err(Error::DuplicateObservation {
                    unit,
                    time: "intervention_date".into(),
                });
            }
            order.push(unit);
        }

        let series_text = read_text(series)?;
        let mut rdr = csv_reader(&series_text);
        let header = rdr.headers()?.clone();
        let col = |name: &str| {
            header
                .iter()
                .position(|h| h.eq_ignore_ascii_case(name))
                .ok_or_else(|| Error::Parse {
                    path: series.to_path_buf(),
                    line: 1,
                    message: format!("header must contain `unit,time,value`; `{name}` missing"),
                })
        };
        let (ui, ti, vi) = (col("unit")?, col("time")?, col("value")?);
        let mut observations: HashMap<String, BTreeMap<NaiveDate, f64>> = HashMap::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
            let unit = record.get(ui).unwrap_or("").to_string();
            if !interventions.contains_key(&unit) {
                continue;
            }
            let raw_time = record.get(ti).unwrap_or("");
            let date = parse_date(raw_time, series, line)?;
            let Some(value) = parse_value(record.get(vi).unwrap_or("")) else {
                return Err(Error::MissingValue {
                    unit,
                    time: raw_time.to_string(),
                });
            };
            if observations.entry(unit.clone()).or_default().insert(date, value).is_some() {
                return Err(Error::DuplicateObservation {
                    unit,
                    time: raw_time.to_string(),
                });
            }
        }
        let units = order
            .into_iter()
            .map(|label| UnitRecord {
                intervention: interventions[&label],
                observations: observations.remove(&label).unwrap_or_default(),
                label,
            })
            .collect();
        Self::new(treated, units)
    }

    pub fn units(&self) -> &[UnitRecord] {
        &self.units
    }

    pub fn treated(&self) -> &str {
        &self.treated
    }

    /// Applies `f` to each unit's date-ordered values.
    pub fn map_series(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let units = self
            .units
            .iter()
            .map(|u| {
                let values: Vec<f64> = u.observations.values().cloned().collect();
                let mapped = f(&values);
                UnitRecord {
                    label: u.label.clone(),
                    intervention: u.intervention,
                    observations: u.observations.keys().cloned().zip(mapped).collect(),
                }
            })
            .collect();
        Self {
            treated: self.treated.clone(),
            units,
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    let mut text = String::new();
    for line in open(path)?.lines() {
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        text.push_str(&line);
        text.push('\n');
    }
    Ok(text)
}

fn parse_date(raw: &str, path: &Path, line: usize) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(raw.trim(), "%Y-%m-%d").map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("bad date `{raw}`: {e}"),
    })
}

/// Re-indexes every unit to days relative to its own intervention date.
///
/// The output covers offsets `-pre_days ..= post_days - 1`, day 0 being the
/// unit's intervention date, so `t0 = pre_days` for all units.
pub fn align_by_intervention(spec: &AlignmentSpec, window: AlignmentWindow) -> Result<PanelData> {
    let AlignmentWindow { pre_days, post_days } = window;
    if pre_days == 0 || post_days == 0 {
        return Err(Error::InvalidArgument(
            "alignment window needs at least one pre and one post day".into(),
        ));
    }
    let t_total = pre_days + post_days;
    let offsets: Vec<i64> = (-(pre_days as i64)..post_days as i64).collect();
    let mut rows: Vec<(String, Vec<f64>)> = Vec::with_capacity(spec.units.len());
    for unit in &spec.units {
        let mut row = Vec::with_capacity(t_total);
        for &offset in &offsets {
            let date = unit.intervention + Duration::days(offset);
            match unit.observations.get(&date) {
                Some(v) => row.push(*v),
                None => {
                    let before = unit.observations.range(..unit.intervention).count();
                    let after = unit.observations.range(unit.intervention..).count();
                    return Err(Error::InsufficientHistory {
                        unit: unit.label.clone(),
                        detail: format!(
                            "no value at offset {offset} ({date}); {before} days before and {after} from intervention, window needs {pre_days}/{post_days}"
                        ),
                    });
                }
            }
        }
        rows.push((unit.label.clone(), row));
    }
    let treated_pos = rows
        .iter()
        .position(|(l, _)| *l == spec.treated)
        .ok_or_else(|| Error::UnknownTreated(spec.treated.clone()))?;
    let (treated_label, treated) = rows.remove(treated_pos);
    let mut controls = DMatrix::zeros(rows.len(), t_total);
    for (i, (_, row)) in rows.iter().enumerate() {
        for (t, v) in row.iter().enumerate() {
            controls[(i, t)] = *v;
        }
    }
    let mut labels = vec![treated_label];
    labels.extend(rows.into_iter().map(|(l, _)| l));
    let times = offsets.iter().map(|o| o.to_string()).collect();
    PanelData::new(controls, DVector::from_vec(treated), pre_days, labels, times)
}

/// Trailing moving average: element `t` is the mean of
/// `series[max(0, t + 1 - window) ..= t]`.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..series.len())
        .map(|t| {
            let w = &series[(t + 1).saturating_sub(window)..=t];
            w.iter().sum::<f64>() / w.len() as f64
        })
        .collect()
}

/// First differences with the first element kept, turning cumulative counts
/// into per-period increments.
pub fn differences(series: &[f64]) -> Vec<f64> {
    series
        .iter()
        .enumerate()
        .map(|(t, &v)| if t == 0 { v } else { v - series[t - 1] })
        .collect()
}

/// Column-wise partition of a panel at `t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSplit {
    pub s_pre: DMatrix<f64>,
    pub s_post: DMatrix<f64>,
    pub s1_pre: DVector<f64>,
    pub s1_post: DVector<f64>,
}

impl PanelSplit {
    /// Inverse of [`split`]: returns `(controls, treated)`.
    pub fn concat(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.s_pre.nrows();
        let (a, b) = (self.s_pre.ncols(), self.s_post.ncols());
        let mut controls = DMatrix::zeros(n, a + b);
        controls.columns_mut(0, a).copy_from(&self.s_pre);
        controls.columns_mut(a, b).copy_from(&self.s_post);
        let mut treated = DVector::zeros(a + b);
        treated.rows_mut(0, a).copy_from(&self.s1_pre);
        treated.rows_mut(a, b).copy_from(&self.s1_post);
        (controls, treated)
    }
}

pub fn split(panel: &PanelData) -> PanelSplit {
    let (t0, t) = (panel.t0(), panel.t_total());
    PanelSplit {
        s_pre: panel.controls().columns(0, t0).into_owned(),
        s_post: panel.controls().columns(t0, t - t0).into_owned(),
        s1_pre: panel.treated().rows(0, t0).into_owned(),
        s1_post: panel.treated().rows(t0, t - t0).into_owned(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationScheme {
    None,
    TreatedPreMax,
    Zscore,
}

impl NormalizationScheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::TreatedPreMax => "treated_pre_max",
            Self::Zscore => "zscore",
        }
    }
}

impl std::str::FromStr for NormalizationScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "treated_pre_max" => Ok(Self::TreatedPreMax),
            "zscore" => Ok(Self::Zscore),
            other => Err(Error::InvalidArgument(format!("unknown normalization `{other}`"))),
        }
    }
}

/// Affine map `x ↦ (x − offset) / scale` applied to every value of a panel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub scheme: NormalizationScheme,
    pub offset: f64,
    pub scale: f64,
}

impl NormalizationRecord {
    pub fn identity() -> Self {
        Self {
            scheme: NormalizationScheme::None,
            offset: 0.0,
            scale: 1.0,
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.offset) / self.scale
    }

    pub fn invert(&self, x: f64) -> f64 {
        x * self.scale + self.offset
    }

    pub fn invert_series(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.invert(x)).collect()
    }

    /// Differences and band half-widths only scale; the offset cancels.
    pub fn invert_difference(&self, dx: f64) -> f64 {
        dx * self.scale
    }

    pub fn denormalize(&self, panel: &PanelData) -> Result<PanelData> {
        self.map_panel(panel, |x| self.invert(x))
    }

    fn map_panel(&self, panel: &PanelData, f: impl Fn(f64) -> f64) -> Result<PanelData> {
        PanelData::new(
            panel.controls().map(&f),
            panel.treated().map(&f),
            panel.t0(),
            panel.unit_labels().to_vec(),
            panel.time_labels().to_vec(),
        )
    }
}

pub fn normalize(panel: &PanelData, scheme: NormalizationScheme) -> Result<(PanelData, NormalizationRecord)> {
    let record = match scheme {
        NormalizationScheme::None => NormalizationRecord::identity(),
        NormalizationScheme::TreatedPreMax => {
            let scale = panel.pre_scale();
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(Error::DegenerateScale);
            }
            NormalizationRecord {
                scheme,
                offset: 0.0,
                scale,
            }
        }
        NormalizationScheme::Zscore => {
            let t0 = panel.t0();
            let pooled: Vec<f64> = panel
                .treated()
                .rows(0, t0)
                .iter()
                .chain(panel.controls().columns(0, t0).iter())
                .cloned()
                .collect();
            let n = pooled.len() as f64;
            let mean = pooled.iter().sum::<f64>() / n;
            let var = pooled.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            if !(std > 0.0 && std.is_finite()) {
                return Err(Error::DegenerateScale);
            }
            NormalizationRecord {
                scheme,
                offset: mean,
                scale: std,
            }
        }
    };
    let out = if scheme == NormalizationScheme::None {
        panel.clone()
    } else {
        record.map_panel(panel, |x| record.apply(x))?
    };
    Ok((out, record))
}
