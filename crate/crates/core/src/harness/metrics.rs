use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::scenario::Scenario;

pub const CSV_HEADER: [&str; 10] = [
    "time_s",
    "conn_id",
    "subflow_id",
    "goodput_bps",
    "rtt_ms",
    "cwnd",
    "loss_events",
    "reward",
    "loss_value",
    "epsilon",
];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("unexpected csv header {0:?}")]
    Header(Vec<String>),
    #[error("row {0} is earlier than the row before it")]
    Order(usize),
    #[error("fairness needs at least one non-zero rate")]
    NoRates,
    #[error("negative rate {0}")]
    NegativeRate(f64),
}

/// One subflow over one interval, ending at `time_s`. The interval starts
/// at the previous row of the same connection and subflow; the first row
/// of each series is an anchor at the connection's start and carries no
/// traffic. All subflows of a connection share time stamps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub time_s: f64,
    pub conn_id: u32,
    pub subflow_id: u32,
    pub goodput_bps: f64,
    /// Mean RTT sample in the interval; empty without samples.
    pub rtt_ms: Option<f64>,
    pub cwnd: f64,
    pub loss_events: u64,
    pub reward: Option<f64>,
    /// Latest training loss.
    pub loss_value: Option<f64>,
    pub epsilon: Option<f64>,
}

impl MetricRow {
    pub fn anchor(time_s: f64, conn_id: u32, subflow_id: u32, cwnd: f64) -> Self {
        MetricRow {
            time_s,
            conn_id,
            subflow_id,
            goodput_bps: 0.0,
            rtt_ms: None,
            cwnd,
            loss_events: 0,
            reward: None,
            loss_value: None,
            epsilon: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricLog {
    rows: Vec<MetricRow>,
}

impl MetricLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a log, ordering rows by time, connection and subflow.
    pub fn from_rows(mut rows: Vec<MetricRow>) -> Self {
        rows.sort_by(|a, b| {
            a.time_s
                .total_cmp(&b.time_s)
                .then(a.conn_id.cmp(&b.conn_id))
                .then(a.subflow_id.cmp(&b.subflow_id))
        });
        MetricLog { rows }
    }

    pub fn rows(&self) -> &[MetricRow] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Appends a row; it must not be earlier than the last one.
    pub fn push(&mut self, row: MetricRow) {
        if let Some(last) = self.rows.last() {
            assert!(row.time_s >= last.time_s, "rows must be time-ordered");
        }
        self.rows.push(row);
    }

    pub fn end_time(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.time_s)
    }

    pub fn conn_ids(&self) -> Vec<u32> {
        let ids: BTreeSet<u32> = self.rows.iter().map(|r| r.conn_id).collect();
        ids.into_iter().collect()
    }

    /// Rows of one connection, grouped by time stamp.
    fn instants(&self, conn: u32) -> Vec<(f64, Vec<&MetricRow>)> {
        let mut out: Vec<(f64, Vec<&MetricRow>)> = Vec::new();
        for r in self.rows.iter().filter(|r| r.conn_id == conn) {
            match out.last_mut() {
                Some((t, v)) if *t == r.time_s => v.push(r),
                _ => out.push((r.time_s, vec![r])),
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record(CSV_HEADER).expect("in-memory write");
        }
        for r in &self.rows {
            w.serialize(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    pub fn from_csv(text: &str) -> Result<Self, MetricsError> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
        if header != CSV_HEADER {
            return Err(MetricsError::Header(header));
        }
        let mut rows: Vec<MetricRow> = Vec::new();
        for (i, r) in rd.deserialize().enumerate() {
            let r: MetricRow = r?;
            if rows.last().is_some_and(|l| r.time_s < l.time_s) {
                return Err(MetricsError::Order(i + 1));
            }
            rows.push(r);
        }
        Ok(MetricLog { rows })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), MetricsError> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, MetricsError> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// Time a connection's series begin.
pub fn start_time(log: &MetricLog, conn: u32) -> Option<f64> {
    log.rows.iter().find(|r| r.conn_id == conn).map(|r| r.time_s)
}

/// Mean application goodput of `conn` over `[from, to]`, bits per second,
/// summed over subflows. Rates are taken as constant within each row's
/// interval.
pub fn goodput(log: &MetricLog, conn: u32, from: f64, to: f64) -> f64 {
    assert!(to > from, "empty interval");
    let mut prev: BTreeMap<u32, f64> = BTreeMap::new();
    let mut bits = 0.0;
    for r in log.rows.iter().filter(|r| r.conn_id == conn) {
        if let Some(a) = prev.insert(r.subflow_id, r.time_s) {
            let overlap = r.time_s.min(to) - a.max(from);
            if overlap > 0.0 {
                bits += r.goodput_bps * overlap;
            }
        }
    }
    bits / (to - from)
}

/// Aggregate rate of `conn` at each time stamp in `(from, to]`.
pub fn goodput_series(log: &MetricLog, conn: u32, from: f64, to: f64) -> Vec<f64> {
    log.instants(conn)
        .into_iter()
        .skip(1)
        .filter(|(t, _)| *t > from && *t <= to)
        .map(|(_, rows)| rows.iter().map(|r| r.goodput_bps).sum())
        .collect()
}

/// Seconds of RTT above each subflow's tolerance `taus[subflow]`, summed
/// over rows and subflows.
pub fn latency_violation(log: &MetricLog, conn: u32, taus: &[f64]) -> f64 {
    log.rows
        .iter()
        .filter(|r| r.conn_id == conn)
        .filter_map(|r| {
            let rtt = r.rtt_ms? / 1e3;
            Some((rtt - taus[r.subflow_id as usize]).max(0.0))
        })
        .sum()
}

/// Seconds from the connection's first row until `bytes` have been
/// delivered, interpolating within the crossing interval. `None` if the
/// log never gets there.
pub fn fct(log: &MetricLog, conn: u32, bytes: u64) -> Option<f64> {
    let target = bytes as f64 * 8.0;
    let inst = log.instants(conn);
    let (t0, _) = *inst.first()?;
    let mut cum = 0.0;
    let mut prev = t0;
    for (t, rows) in inst.iter().skip(1) {
        let rate: f64 = rows.iter().map(|r| r.goodput_bps).sum();
        let got = rate * (t - prev);
        if cum + got >= target * (1.0 - 1e-9) {
            let dt = if rate > 0.0 {
                ((target - cum) / rate).max(0.0)
            } else {
                0.0
            };
            return Some((prev + dt).min(*t) - t0);
        }
        cum += got;
        prev = *t;
    }
    None
}

/// `(Σx)² / (n·Σx²)`.
pub fn jain_index(rates: &[f64]) -> Result<f64, MetricsError> {
    if let Some(&x) = rates.iter().find(|x| !(**x >= 0.0)) {
        return Err(MetricsError::NegativeRate(x));
    }
    let sum: f64 = rates.iter().sum();
    if sum == 0.0 {
        return Err(MetricsError::NoRates);
    }
    if rates.iter().all(|&x| x == rates[0]) {
        // Rounding would otherwise leave 1 − ulp.
        return Ok(1.0);
    }
    let sq: f64 = rates.iter().map(|x| x * x).sum();
    Ok((sum * sum / (rates.len() as f64 * sq)).min(1.0))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTime {
    pub bytes: u64,
    pub fct_s: Option<f64>,
}

/// Per-run summary, computed from the log and the scenario alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Goodput of connection 0 after warmup.
    pub goodput_mean_bps: f64,
    /// Spread of connection 0's per-interval goodput.
    pub goodput_std_bps: f64,
    pub rtt_mean_ms: f64,
    pub rtt_std_ms: f64,
    /// Goodput of every connection over its own post-warmup lifetime.
    pub conn_goodput_bps: Vec<f64>,
    /// Across connections, when more than one carried traffic.
    pub jfi: Option<f64>,
    pub fct: Vec<FlowTime>,
}

pub fn summarize(log: &MetricLog, sc: &Scenario) -> Summary {
    let end = log.end_time();
    let window = |c: u32| {
        let from = start_time(log, c).unwrap_or(0.0).max(sc.warmup);
        let to = log.rows.iter().rev().find(|r| r.conn_id == c).map_or(end, |r| r.time_s);
        (from, to)
    };
    let rate = |c: u32| {
        let (from, to) = window(c);
        if to > from {
            goodput(log, c, from, to)
        } else {
            0.0
        }
    };
    let (from, to) = window(0);
    let series = goodput_series(log, 0, from, to);
    let rtts: Vec<f64> = log
        .rows
        .iter()
        .filter(|r| r.conn_id == 0 && r.time_s > from)
        .filter_map(|r| r.rtt_ms)
        .collect();
    let (rtt_mean_ms, rtt_std_ms) = mean_std(&rtts);
    let conn_goodput_bps: Vec<f64> = log.conn_ids().into_iter().map(rate).collect();
    let jfi = if sc.flow_sizes.is_empty() && conn_goodput_bps.len() > 1 {
        jain_index(&conn_goodput_bps).ok()
    } else {
        None
    };
    Summary {
        goodput_mean_bps: rate(0),
        goodput_std_bps: mean_std(&series).1,
        rtt_mean_ms,
        rtt_std_ms,
        conn_goodput_bps,
        jfi,
        fct: sc
            .flow_sizes
            .iter()
            .enumerate()
            .map(|(k, &bytes)| FlowTime {
                bytes,
                fct_s: fct(log, k as u32, bytes),
            })
            .collect(),
    }
}

/// Mean and standard deviation of a statistic over runs.
pub fn across_runs(values: &[f64]) -> (f64, f64) {
    mean_std(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: f64, conn: u32, sub: u32, bps: f64) -> MetricRow {
        MetricRow {
            goodput_bps: bps,
            ..MetricRow::anchor(t, conn, sub, 10.0)
        }
    }

    fn steady(conn: u32, subs: u32, bps: f64, dt: f64, n: usize) -> Vec<MetricRow> {
        let mut v = Vec::new();
        for s in 0..subs {
            v.push(MetricRow::anchor(0.0, conn, s, 10.0));
            for i in 1..=n {
                v.push(row(i as f64 * dt, conn, s, bps));
            }
        }
        v
    }

    #[test]
    fn one_gigabyte_in_ten_seconds() {
        let log = MetricLog::from_rows(vec![MetricRow::anchor(0.0, 0, 0, 1.0), row(10.0, 0, 0, 8e8)]);
        assert_eq!(goodput(&log, 0, 0.0, 10.0), 0.8e9);
    }

    #[test]
    fn subflows_add_up() {
        let log = MetricLog::from_rows(steady(0, 2, 400e6, 0.1, 10));
        assert!((goodput(&log, 0, 0.0, 1.0) - 800e6).abs() < 1e-3);
        assert!(goodput_series(&log, 0, 0.0, 1.0).iter().all(|&g| g == 800e6));
    }

    #[test]
    fn partial_windows_are_prorated() {
        let log = MetricLog::from_rows(vec![
            MetricRow::anchor(0.0, 0, 0, 1.0),
            row(1.0, 0, 0, 100.0),
            row(2.0, 0, 0, 300.0),
        ]);
        assert_eq!(goodput(&log, 0, 0.5, 1.5), 200.0);
    }

    #[test]
    fn latency_violation_hinge() {
        let mut rows = steady(0, 2, 1.0, 0.1, 3);
        for r in rows.iter_mut() {
            r.rtt_ms = Some(10.0);
        }
        let log = MetricLog::from_rows(rows.clone());
        assert_eq!(latency_violation(&log, 0, &[0.01, 0.01]), 0.0);
        rows[1].rtt_ms = Some(12.0);
        let log = MetricLog::from_rows(rows.clone());
        assert!((latency_violation(&log, 0, &[0.01, 0.01]) - 0.002).abs() < 1e-15);
        rows[5].rtt_ms = Some(13.0);
        let log = MetricLog::from_rows(rows);
        assert!((latency_violation(&log, 0, &[0.01, 0.01]) - 0.005).abs() < 1e-15);
    }

    #[test]
    fn one_megabyte_at_100_mbps() {
        let log = MetricLog::from_rows(steady(0, 1, 100e6, 0.01, 20));
        let t = fct(&log, 0, 1_000_000).unwrap();
        assert!((t - 0.08).abs() < 1e-12, "{t}");
        assert_eq!(fct(&log, 0, 10_000_000), None);
    }

    #[test]
    fn fct_is_nondecreasing_in_size() {
        let log = MetricLog::from_rows(steady(0, 2, 37e6, 0.007, 100));
        let times: Vec<f64> = (1..40).map(|k| fct(&log, 0, k * 20_000).unwrap()).collect();
        assert!(times.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn jain_values() {
        assert_eq!(jain_index(&[5.0; 7]).unwrap(), 1.0);
        assert_eq!(jain_index(&[3.0, 1.0]).unwrap(), 0.8);
        assert_eq!(jain_index(&[2.0, 0.0]).unwrap(), 0.5);
        assert!(matches!(jain_index(&[0.0, 0.0]), Err(MetricsError::NoRates)));
        assert!(matches!(jain_index(&[]), Err(MetricsError::NoRates)));
        assert!(jain_index(&[1.0, -1.0]).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut rows = steady(0, 2, 1.0 / 3.0, 0.02, 5);
        rows[3].rtt_ms = Some(std::f64::consts::PI);
        rows[4].reward = Some(-0.1);
        rows[4].epsilon = Some(0.05);
        let log = MetricLog::from_rows(rows);
        let text = log.to_csv();
        assert!(text.starts_with(&CSV_HEADER.join(",")));
        assert_eq!(MetricLog::from_csv(&text).unwrap(), log);
    }

    #[test]
    fn empty_log_still_has_header() {
        let text = MetricLog::new().to_csv();
        assert_eq!(text.trim(), CSV_HEADER.join(","));
        assert!(MetricLog::from_csv(&text).unwrap().is_empty());
    }

    #[test]
    fn bad_header_and_order_are_rejected() {
        assert!(matches!(
            MetricLog::from_csv("time,conn\n1,2\n"),
            Err(MetricsError::Header(_))
        ));
        let text = format!("{}\n2,0,0,1,,1,0,,,\n1,0,0,1,,1,0,,,\n", CSV_HEADER.join(","));
        assert!(matches!(MetricLog::from_csv(&text), Err(MetricsError::Order(2))));
    }
}
