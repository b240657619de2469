//! Data model shared by every other module: time series, log transforms,
//! returns, time grids and volatility paths.
//!
//! Time is measured in years. Observations live on a uniform grid whose first
//! point is `dt`, not 0 — the Brownian kernel is degenerate at the origin, so
//! grid times must stay strictly positive. Daily financial data uses
//! `dt = 1/252` (252 trading days per year); regularly sampled sensor data
//! uses the sampling interval converted to years.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Result, VoltError};

/// Trading-day convention for annualizing daily data.
pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;
/// dt for daily financial data.
pub const DAILY_DT: f64 = 1.0 / TRADING_DAYS_PER_YEAR;

/// Uniform grid of strictly positive times `dt, 2 dt, ..., n dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    n: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(n: usize, dt: f64) -> Result<Self> {
        if dt <= 0.0 || !dt.is_finite() {
            return Err(VoltError::NonPositive {
                context: "grid step dt",
                value: dt,
            });
        }
        Ok(TimeGrid { n, dt })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Time of grid point `i` (0-based): `(i + 1) * dt`.
    pub fn time(&self, i: usize) -> f64 {
        (i as f64 + 1.0) * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.time(i)).collect()
    }

    /// Grid extended by `h` further steps.
    pub fn extended(&self, h: usize) -> TimeGrid {
        TimeGrid {
            n: self.n + h,
            dt: self.dt,
        }
    }

    /// Times of the `h` steps following this grid.
    pub fn future_times(&self, h: usize) -> Vec<f64> {
        (0..h).map(|i| (self.n + i + 1) as f64 * self.dt).collect()
    }
}

/// Grid times `[dt, 2 dt, ..., n dt]`.
pub fn make_grid(n: usize, dt: f64) -> Result<TimeGrid> {
    TimeGrid::new(n, dt)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub label: String,
    /// Stored values are `log(raw + shift)`.
    pub log_applied: bool,
    pub shift: f64,
}

/// Timestamped scalar path (price, wind speed, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    times: Vec<f64>,
    values: Vec<f64>,
    pub meta: SeriesMeta,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>, meta: SeriesMeta) -> Result<Self> {
        if times.len() != values.len() {
            return Err(VoltError::DimensionMismatch {
                context: "time series",
                expected: times.len(),
                got: values.len(),
            });
        }
        if times.is_empty() {
            return Err(VoltError::SeriesTooShort { len: 0, min: 1 });
        }
        for (i, w) in times.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(VoltError::NonMonotoneTimestamp { row: i + 1 });
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(VoltError::NonFinite("series values"));
        }
        Ok(TimeSeries { times, values, meta })
    }

    /// Series on a uniform grid.
    pub fn from_grid(grid: &TimeGrid, values: Vec<f64>, meta: SeriesMeta) -> Result<Self> {
        Self::new(grid.times(), values, meta)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Uniform step inferred from the time stamps.
    pub fn dt(&self) -> Result<f64> {
        if self.len() < 2 {
            return Err(VoltError::SeriesTooShort {
                len: self.len(),
                min: 2,
            });
        }
        let dt = self.times[1] - self.times[0];
        self.check_uniform(dt)?;
        Ok(dt)
    }

    fn check_uniform(&self, dt: f64) -> Result<()> {
        for (i, w) in self.times.windows(2).enumerate() {
            let step = w[1] - w[0];
            if (step - dt).abs() > 1e-9 * dt.abs().max(1.0) {
                return Err(VoltError::NonUniformSpacing {
                    row: i + 1,
                    expected: dt,
                    got: step,
                });
            }
        }
        Ok(())
    }

    /// The grid this series lives on (requires uniform spacing starting at dt).
    pub fn grid(&self) -> Result<TimeGrid> {
        let dt = if self.len() >= 2 {
            self.dt()?
        } else {
            self.times[0]
        };
        if (self.times[0] - dt).abs() > 1e-9 * dt {
            return Err(VoltError::Invalid(format!(
                "series does not start at dt: first time {}, dt {}",
                self.times[0], dt
            )));
        }
        TimeGrid::new(self.len(), dt)
    }
}

/// Replace values by `log(raw + shift)`. The wind-speed convention adds 1 so
/// that calm (0 m/s) observations map to log 1 = 0.
pub fn to_log(series: &TimeSeries, shift: f64) -> Result<TimeSeries> {
    if shift < 0.0 {
        return Err(VoltError::NonPositive {
            context: "log shift",
            value: shift,
        });
    }
    if series.meta.log_applied {
        return Err(VoltError::Invalid("series is already in log space".into()));
    }
    let mut values = Vec::with_capacity(series.len());
    for &v in series.values() {
        let shifted = v + shift;
        if shifted <= 0.0 {
            return Err(VoltError::NonPositive {
                context: "shifted value for log transform",
                value: shifted,
            });
        }
        values.push(shifted.ln());
    }
    Ok(TimeSeries {
        times: series.times.clone(),
        values,
        meta: SeriesMeta {
            label: series.meta.label.clone(),
            log_applied: true,
            shift,
        },
    })
}

/// Invert [`to_log`]: values become `exp(stored) - shift`.
pub fn to_raw(series: &TimeSeries) -> Result<TimeSeries> {
    if !series.meta.log_applied {
        return Err(VoltError::Invalid("series is not in log space".into()));
    }
    let values = series.values().iter().map(|v| v.exp() - series.meta.shift).collect();
    Ok(TimeSeries {
        times: series.times.clone(),
        values,
        meta: SeriesMeta {
            label: series.meta.label.clone(),
            log_applied: false,
            shift: 0.0,
        },
    })
}

/// Log returns `w[i] = log S(t_{i+1}) - log S(t_i)` of a raw-space series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    /// Right endpoint of each return interval.
    pub times: Vec<f64>,
    pub returns: Vec<f64>,
    pub dt: f64,
}

impl ReturnSeries {
    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }
}

pub fn log_returns(series: &TimeSeries) -> Result<ReturnSeries> {
    if series.meta.log_applied {
        return Err(VoltError::Invalid(
            "log_returns expects a raw-space series".into(),
        ));
    }
    if series.len() < 2 {
        return Err(VoltError::SeriesTooShort {
            len: series.len(),
            min: 2,
        });
    }
    let dt = series.dt()?;
    let mut times = Vec::with_capacity(series.len() - 1);
    let mut returns = Vec::with_capacity(series.len() - 1);
    for i in 0..series.len() - 1 {
        let (a, b) = (series.values()[i], series.values()[i + 1]);
        if a <= 0.0 || b <= 0.0 {
            return Err(VoltError::NonPositive {
                context: "raw value for log return",
                value: a.min(b),
            });
        }
        times.push(series.times()[i + 1]);
        returns.push(b.ln() - a.ln());
    }
    Ok(ReturnSeries { times, returns, dt })
}

/// Volatility time unit: raw per-step standard deviation of log returns, or
/// annualized (per-step scaled by `1/sqrt(dt)`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VolUnit {
    PerStep,
    Annualized,
}

/// Strictly positive volatility estimate over a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolatilityPath {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    pub unit: VolUnit,
    /// Posterior samples averaged to form the estimate, when applicable.
    pub samples_averaged: usize,
}

impl VolatilityPath {
    pub fn new(grid: TimeGrid, values: Vec<f64>, unit: VolUnit, samples_averaged: usize) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(VoltError::DimensionMismatch {
                context: "volatility path",
                expected: grid.len(),
                got: values.len(),
            });
        }
        for &v in &values {
            if v <= 0.0 || !v.is_finite() {
                return Err(VoltError::NonPositive {
                    context: "volatility value",
                    value: v,
                });
            }
        }
        Ok(VolatilityPath { grid, values, unit, samples_averaged })
    }
}

/// Column selection for CSV ingestion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadSpec {
    pub time_column: String,
    pub value_column: String,
    /// Grid step in years assigned to consecutive rows.
    pub dt: f64,
    pub label: String,
}

impl LoadSpec {
    pub fn new(time_column: impl Into<String>, value_column: impl Into<String>, dt: f64) -> Self {
        LoadSpec {
            time_column: time_column.into(),
            value_column: value_column.into(),
            dt,
            label: String::new(),
        }
    }
}

/// Days from civil date, Howard Hinnant's algorithm. Used to order and
/// deduplicate ISO-8601 timestamps without a date-time dependency.
fn days_from_civil(y: i64, m: u32, d: u32) -> i64 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400;
    let mp = (m as i64 + 9) % 12;
    let doy = (153 * mp + 2) / 5 + d as i64 - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

/// A timestamp cell: either a real number or an ISO-8601 date / datetime.
fn parse_time_cell(cell: &str) -> Option<f64> {
    let cell = cell.trim();
    if let Ok(v) = cell.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    // ISO-8601: YYYY-MM-DD with optional time suffix.
    let (date, time) = match cell.split_once(['T', ' ']) {
        Some((d, t)) => (d, Some(t)),
        None => (cell, None),
    };
    let mut parts = date.split('-');
    let y: i64 = parts.next()?.parse().ok()?;
    let m: u32 = parts.next()?.parse().ok()?;
    let d: u32 = parts.next()?.parse().ok()?;
    if parts.next().is_some() || !(1..=12).contains(&m) || !(1..=31).contains(&d) {
        return None;
    }
    let mut stamp = days_from_civil(y, m, d) as f64 * 86_400.0;
    if let Some(t) = time {
        let t = t.trim_end_matches('Z');
        let mut hms = t.split(':');
        let h: f64 = hms.next()?.parse().ok()?;
        let mi: f64 = hms.next().unwrap_or("0").parse().ok()?;
        let s: f64 = hms.next().unwrap_or("0").parse().ok()?;
        stamp += h * 3600.0 + mi * 60.0 + s;
    }
    Some(stamp)
}

/// Load a series from a CSV file.
///
/// The header row is required. Timestamps (numeric or ISO-8601) are checked
/// for monotonicity and duplicates, then rows are mapped onto the uniform
/// grid `dt, 2 dt, ...` — for trading-day data the calendar stamps only order
/// the rows. Numeric timestamps must in addition be evenly spaced; gaps are
/// rejected rather than imputed.
pub fn load_series(path: impl AsRef<Path>, spec: &LoadSpec) -> Result<TimeSeries> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| VoltError::MissingColumn(name.to_string()))
    };
    let time_idx = find(&spec.time_column)?;
    let value_idx = find(&spec.value_column)?;

    let mut stamps: Vec<f64> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let tcell = record.get(time_idx).unwrap_or("");
        let vcell = record.get(value_idx).unwrap_or("");
        let stamp = parse_time_cell(tcell).ok_or_else(|| VoltError::UnparsableCell {
            row,
            column: spec.time_column.clone(),
            value: tcell.to_string(),
        })?;
        let value: f64 = vcell.trim().parse().map_err(|_| VoltError::UnparsableCell {
            row,
            column: spec.value_column.clone(),
            value: vcell.to_string(),
        })?;
        if !value.is_finite() {
            return Err(VoltError::UnparsableCell {
                row,
                column: spec.value_column.clone(),
                value: vcell.to_string(),
            });
        }
        stamps.push(stamp);
        values.push(value);
    }
    if stamps.is_empty() {
        return Err(VoltError::SeriesTooShort { len: 0, min: 1 });
    }
    let numeric_times = stamps.len() >= 2 && {
        // ISO dates map to second counts >= 1e8 in magnitude; treat small
        // magnitudes as raw numeric time columns that must be uniform.
        stamps.iter().all(|s| s.abs() < 1e8)
    };
    for i in 1..stamps.len() {
        if stamps[i] == stamps[i - 1] {
            return Err(VoltError::DuplicateTimestamp { row: i });
        }
        if stamps[i] < stamps[i - 1] {
            return Err(VoltError::NonMonotoneTimestamp { row: i });
        }
    }
    if numeric_times {
        let step = stamps[1] - stamps[0];
        for (i, w) in stamps.windows(2).enumerate() {
            let s = w[1] - w[0];
            if (s - step).abs() > 1e-6 * step.abs().max(1.0) {
                return Err(VoltError::NonUniformSpacing {
                    row: i + 1,
                    expected: step,
                    got: s,
                });
            }
        }
    }
    let grid = TimeGrid::new(values.len(), spec.dt)?;
    TimeSeries::from_grid(
        &grid,
        values,
        SeriesMeta {
            label: if spec.label.is_empty() {
                spec.value_column.clone()
            } else {
                spec.label.clone()
            },
            log_applied: false,
            shift: 0.0,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_three_rows() {
        let f = write_csv("date,close\n2021-01-04,10.0\n2021-01-05,10.5\n2021-01-06,10.2\n");
        let s = load_series(f.path(), &LoadSpec::new("date", "close", DAILY_DT)).unwrap();
        assert_eq!(s.len(), 3);
        assert_relative_eq!(s.times()[0], DAILY_DT);
        assert_relative_eq!(s.times()[2], 3.0 * DAILY_DT);
        assert_eq!(s.values(), &[10.0, 10.5, 10.2]);
    }

    #[test]
    fn load_rejects_bad_cells() {
        let f = write_csv("date,close\n2021-01-04,10.0\n2021-01-05,\n");
        let err = load_series(f.path(), &LoadSpec::new("date", "close", DAILY_DT)).unwrap_err();
        assert!(matches!(err, VoltError::UnparsableCell { row: 1, .. }), "{err}");

        let f = write_csv("date,close\n2021-01-04,10.0\n2021-01-04,11.0\n");
        let err = load_series(f.path(), &LoadSpec::new("date", "close", DAILY_DT)).unwrap_err();
        assert!(matches!(err, VoltError::DuplicateTimestamp { row: 1 }), "{err}");

        let f = write_csv("date,close\n2021-01-05,10.0\n2021-01-04,11.0\n");
        let err = load_series(f.path(), &LoadSpec::new("date", "close", DAILY_DT)).unwrap_err();
        assert!(matches!(err, VoltError::NonMonotoneTimestamp { row: 1 }), "{err}");

        let f = write_csv("t,y\n1,10.0\n2,11.0\n4,12.0\n");
        let err = load_series(f.path(), &LoadSpec::new("t", "y", DAILY_DT)).unwrap_err();
        assert!(matches!(err, VoltError::NonUniformSpacing { .. }), "{err}");

        let f = write_csv("t,y\n1,10.0\n2,11.0\n");
        let err = load_series(f.path(), &LoadSpec::new("t", "missing", DAILY_DT)).unwrap_err();
        assert!(matches!(err, VoltError::MissingColumn(_)), "{err}");
    }

    #[test]
    fn load_missing_file() {
        let err = load_series("/nonexistent/file.csv", &LoadSpec::new("t", "y", 1.0)).unwrap_err();
        assert!(matches!(err, VoltError::Csv(_) | VoltError::Io(_)));
    }

    #[test]
    fn log_identities() {
        let grid = make_grid(2, 0.5).unwrap();
        let s = TimeSeries::from_grid(&grid, vec![1.0, std::f64::consts::E], SeriesMeta::default())
            .unwrap();
        let logged = to_log(&s, 0.0).unwrap();
        assert_relative_eq!(logged.values()[0], 0.0);
        assert_relative_eq!(logged.values()[1], 1.0);
        assert!(logged.meta.log_applied);

        // wind convention: zeros shift to log(1) = 0
        let s = TimeSeries::from_grid(&grid, vec![0.0, 0.0], SeriesMeta::default()).unwrap();
        let logged = to_log(&s, 1.0).unwrap();
        assert_eq!(logged.values(), &[0.0, 0.0]);

        let s = TimeSeries::from_grid(&grid, vec![-2.0, 1.0], SeriesMeta::default()).unwrap();
        assert!(to_log(&s, 0.0).is_err());
    }

    #[test]
    fn log_roundtrip_recovers_raw() {
        let grid = make_grid(4, 0.25).unwrap();
        let raw = vec![0.0, 1.5, 3.25, 0.125];
        let s = TimeSeries::from_grid(&grid, raw.clone(), SeriesMeta::default()).unwrap();
        let back = to_raw(&to_log(&s, 1.0).unwrap()).unwrap();
        for (a, b) in back.values().iter().zip(&raw) {
            assert_relative_eq!(a, b, max_relative = 1e-12, epsilon = 1e-12);
        }
    }

    #[test]
    fn returns_log_identities() {
        let grid = make_grid(3, DAILY_DT).unwrap();
        let e = std::f64::consts::E;
        let s = TimeSeries::from_grid(&grid, vec![1.0, e, e], SeriesMeta::default()).unwrap();
        let r = log_returns(&s).unwrap();
        assert_eq!(r.len(), 2);
        assert_relative_eq!(r.returns[0], 1.0);
        assert_relative_eq!(r.returns[1], 0.0);
        assert_relative_eq!(r.times[0], grid.time(1));

        let grid2 = make_grid(2, DAILY_DT).unwrap();
        let s = TimeSeries::from_grid(&grid2, vec![2.0, 4.0], SeriesMeta::default()).unwrap();
        let r = log_returns(&s).unwrap();
        assert_relative_eq!(r.returns[0], 2.0_f64.ln());

        let grid1 = make_grid(1, DAILY_DT).unwrap();
        let s = TimeSeries::from_grid(&grid1, vec![1.0], SeriesMeta::default()).unwrap();
        assert!(matches!(
            log_returns(&s),
            Err(VoltError::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn returns_telescope() {
        let grid = make_grid(6, DAILY_DT).unwrap();
        let vals = vec![3.0, 2.5, 2.9, 3.3, 3.1, 3.7];
        let s = TimeSeries::from_grid(&grid, vals.clone(), SeriesMeta::default()).unwrap();
        let r = log_returns(&s).unwrap();
        let total: f64 = r.returns.iter().sum();
        assert_relative_eq!(vals[0].ln() + total, vals[5].ln(), epsilon = 1e-14);
    }

    #[test]
    fn grid_basics() {
        let g = make_grid(3, 0.5).unwrap();
        assert_eq!(g.times(), vec![0.5, 1.0, 1.5]);
        assert!(make_grid(0, 1.0).unwrap().is_empty());
        assert!(make_grid(3, -1.0).is_err());
        assert!(g.times().iter().all(|&t| t > 0.0));
        assert_eq!(g.future_times(2), vec![2.0, 2.5]);
    }

    #[test]
    fn iso_datetime_parsing() {
        assert!(parse_time_cell("2021-01-04").is_some());
        assert!(parse_time_cell("2021-01-04T09:30:00").is_some());
        assert!(parse_time_cell("2021-01-04 09:35").unwrap() > parse_time_cell("2021-01-04 09:30").unwrap());
        assert!(parse_time_cell("not-a-date").is_none());
        assert_relative_eq!(parse_time_cell("12.5").unwrap(), 12.5);
    }
}
