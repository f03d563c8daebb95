//! Sideslip KPIs, comparison tables and error histograms. All values are in
//! degrees; the non-linear subset is `|a_y| ≥ 4 m/s²` on the noise-free
//! lateral acceleration.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NONLINEAR_AY: f64 = 4.0;
pub const HISTOGRAM_BIN_WIDTH: f64 = 0.25;
/// Printed in tables in place of a KPI with no qualifying samples.
pub const UNDEFINED: &str = "undefined";

fn check(est: &[f64], truth: &[f64]) -> Result<()> {
    if est.len() != truth.len() {
        return Err(Error::LengthMismatch(est.len(), truth.len()));
    }
    if est.is_empty() {
        return Err(Error::Empty("KPI inputs"));
    }
    Ok(())
}

pub fn rmse(est: &[f64], truth: &[f64]) -> Result<f64> {
    check(est, truth)?;
    let ss: f64 = est.iter().zip(truth).map(|(e, t)| (e - t).powi(2)).sum();
    Ok((ss / est.len() as f64).sqrt())
}

pub fn max_error(est: &[f64], truth: &[f64]) -> Result<f64> {
    check(est, truth)?;
    Ok(est.iter().zip(truth).map(|(e, t)| (e - t).abs()).fold(0.0, f64::max))
}

pub fn nonlinear_mask(ay: &[f64]) -> Vec<bool> {
    ay.iter().map(|a| a.abs() >= NONLINEAR_AY).collect()
}

fn masked(est: &[f64], truth: &[f64], ay: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check(est, truth)?;
    if ay.len() != est.len() {
        return Err(Error::LengthMismatch(est.len(), ay.len()));
    }
    Ok(est
        .iter()
        .zip(truth)
        .zip(nonlinear_mask(ay))
        .filter(|(_, keep)| *keep)
        .map(|((e, t), _)| (*e, *t))
        .unzip())
}

/// RMSE over the non-linear samples; `None` when there are none.
pub fn rmse_nl(est: &[f64], truth: &[f64], ay: &[f64]) -> Result<Option<f64>> {
    let (e, t) = masked(est, truth, ay)?;
    if e.is_empty() {
        return Ok(None);
    }
    rmse(&e, &t).map(Some)
}

pub fn max_error_nl(est: &[f64], truth: &[f64], ay: &[f64]) -> Result<Option<f64>> {
    let (e, t) = masked(est, truth, ay)?;
    if e.is_empty() {
        return Ok(None);
    }
    max_error(&e, &t).map(Some)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KpiSet {
    pub rmse: f64,
    pub rmse_nl: Option<f64>,
    pub me: f64,
    pub me_nl: Option<f64>,
    pub samples: usize,
    pub samples_nl: usize,
}

impl KpiSet {
    pub fn compute(est: &[f64], truth: &[f64], ay: &[f64]) -> Result<Self> {
        Ok(Self {
            rmse: rmse(est, truth)?,
            rmse_nl: rmse_nl(est, truth, ay)?,
            me: max_error(est, truth)?,
            me_nl: max_error_nl(est, truth, ay)?,
            samples: est.len(),
            samples_nl: nonlinear_mask(ay).iter().filter(|m| **m).count(),
        })
    }

    pub fn get(&self, kpi: Kpi) -> Option<f64> {
        match kpi {
            Kpi::Rmse => Some(self.rmse),
            Kpi::RmseNl => self.rmse_nl,
            Kpi::Me => Some(self.me),
            Kpi::MeNl => self.me_nl,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kpi {
    Rmse,
    RmseNl,
    Me,
    MeNl,
}

impl Kpi {
    pub const ALL: [Kpi; 4] = [Kpi::Rmse, Kpi::RmseNl, Kpi::Me, Kpi::MeNl];

    pub fn label(self) -> &'static str {
        match self {
            Kpi::Rmse => "RMSE",
            Kpi::RmseNl => "RMSE_nl",
            Kpi::Me => "ME",
            Kpi::MeNl => "ME_nl",
        }
    }
}

/// One estimator's output on one manoeuvre, degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub manoeuvre: String,
    pub beta_hat: Vec<f64>,
    pub beta_true: Vec<f64>,
    pub ay_true: Vec<f64>,
}

impl Trace {
    pub fn errors(&self) -> impl Iterator<Item = f64> + '_ {
        self.beta_hat.iter().zip(&self.beta_true).map(|(e, t)| e - t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiReport {
    pub estimator: String,
    /// KPIs over all test samples pooled together.
    pub pooled: KpiSet,
    pub per_manoeuvre: Vec<(String, KpiSet)>,
}

impl KpiReport {
    pub fn from_traces(estimator: &str, traces: &[Trace]) -> Result<Self> {
        if traces.is_empty() {
            return Err(Error::Empty("estimator traces"));
        }
        let mut all = (Vec::new(), Vec::new(), Vec::new());
        let mut per_manoeuvre = Vec::with_capacity(traces.len());
        for t in traces {
            per_manoeuvre.push((t.manoeuvre.clone(), KpiSet::compute(&t.beta_hat, &t.beta_true, &t.ay_true)?));
            all.0.extend_from_slice(&t.beta_hat);
            all.1.extend_from_slice(&t.beta_true);
            all.2.extend_from_slice(&t.ay_true);
        }
        Ok(Self { estimator: estimator.to_string(), pooled: KpiSet::compute(&all.0, &all.1, &all.2)?, per_manoeuvre })
    }

    /// Per-manoeuvre rows followed by a `pooled` row, full precision.
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| UNDEFINED.to_string(), |x| x.to_string());
        let mut out = String::from("manoeuvre,samples,samples_nl,rmse,rmse_nl,me,me_nl\n");
        let rows = self.per_manoeuvre.iter().map(|(id, k)| (id.as_str(), k)).chain([("pooled", &self.pooled)]);
        for (id, k) in rows {
            let _ = writeln!(
                out,
                "{id},{},{},{},{},{},{}",
                k.samples,
                k.samples_nl,
                k.rmse,
                cell(k.rmse_nl),
                k.me,
                cell(k.me_nl)
            );
        }
        out
    }

    pub fn write_csv(&self, dir: &Path, run_id: &str) -> Result<std::path::PathBuf> {
        let path = dir.join(format!("{run_id}_{}_kpi.csv", self.estimator));
        std::fs::write(&path, self.to_csv()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// KPI rows by estimator columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub columns: Vec<String>,
    /// `(kpi label, one cell per column)`
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

pub fn comparison_table(reports: &[KpiReport]) -> Result<ComparisonTable> {
    if reports.is_empty() {
        return Err(Error::Empty("KPI reports"));
    }
    Ok(ComparisonTable {
        columns: reports.iter().map(|r| r.estimator.clone()).collect(),
        rows: Kpi::ALL
            .iter()
            .map(|k| (k.label().to_string(), reports.iter().map(|r| r.pooled.get(*k)).collect()))
            .collect(),
    })
}

impl ComparisonTable {
    fn cell(v: Option<f64>) -> String {
        v.map_or_else(|| UNDEFINED.to_string(), |x| format!("{x:.3}"))
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("KPI [deg],{}\n", self.columns.join(","));
        for (label, cells) in &self.rows {
            let cells: Vec<String> = cells.iter().map(|c| Self::cell(*c)).collect();
            let _ = writeln!(out, "{label},{}", cells.join(","));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut grid = vec![std::iter::once("KPI [deg]".to_string()).chain(self.columns.iter().cloned()).collect::<Vec<_>>()];
        for (label, cells) in &self.rows {
            grid.push(std::iter::once(label.clone()).chain(cells.iter().map(|c| Self::cell(*c))).collect());
        }
        let widths: Vec<usize> =
            (0..grid[0].len()).map(|j| grid.iter().map(|r| r[j].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for row in &grid {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (c, w))| if j == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }
}

/// The model-based and data-driven reference tables from the original
/// experimental study, in the same layout as generated tables.
pub fn reference_tables() -> [ComparisonTable; 2] {
    let table = |cols: [&str; 4], rows: [[f64; 4]; 4]| ComparisonTable {
        columns: cols.iter().map(|c| c.to_string()).collect(),
        rows: Kpi::ALL.iter().zip(rows).map(|(k, r)| (k.label().to_string(), r.iter().map(|v| Some(*v)).collect())).collect(),
    };
    [
        table(
            ["EKF", "EKF Tyre", "UKF", "UKF Tyre"],
            [
                [0.421, 0.391, 0.394, 0.370],
                [0.563, 0.488, 0.490, 0.448],
                [1.368, 1.257, 1.180, 1.113],
                [1.271, 1.169, 1.068, 0.994],
            ],
        ),
        table(
            ["FFNN", "FFNN Tyre", "RNN", "RNN Tyre"],
            [
                [0.379, 0.209, 0.392, 0.225],
                [0.645, 0.206, 0.560, 0.234],
                [1.635, 0.784, 1.649, 0.783],
                [1.509, 0.592, 1.495, 0.643],
            ],
        ),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorHistogram {
    pub bin_width: f64,
    /// `counts.len() + 1` edges; bin `i` is `[edges[i], edges[i+1])`.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub log_scale: bool,
}

/// Bins on the grid `k·width`, symmetric about zero, spanning the data.
pub fn error_histogram(errors: &[f64], bin_width: f64) -> Result<ErrorHistogram> {
    if errors.is_empty() {
        return Err(Error::Empty("histogram input"));
    }
    if !(bin_width > 0.0) || errors.iter().any(|e| !e.is_finite()) {
        return Err(Error::Config("histogram needs a positive width and finite errors".into()));
    }
    let bin = |e: f64| (e / bin_width).floor() as i64;
    let reach = errors.iter().map(|&e| bin(e).max(-bin(e) - 1)).max().unwrap_or(0);
    let (lo, hi) = (-reach - 1, reach + 1);
    let mut counts = vec![0u64; (hi - lo) as usize];
    for &e in errors {
        counts[(bin(e) - lo) as usize] += 1;
    }
    let edges = (lo..=hi).map(|k| k as f64 * bin_width).collect();
    Ok(ErrorHistogram { bin_width, edges, counts, log_scale: true })
}

impl ErrorHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Overlaid step outlines of several histograms on a log-count axis.
pub fn histogram_svg(title: &str, series: &[(String, ErrorHistogram)]) -> String {
    let (w, h, m) = (640.0, 400.0, 50.0);
    let lo = series.iter().filter_map(|(_, s)| s.edges.first()).fold(0.0f64, |a, &b| a.min(b));
    let hi = series.iter().filter_map(|(_, s)| s.edges.last()).fold(0.0f64, |a, &b| a.max(b));
    let top = series.iter().flat_map(|(_, s)| s.counts.iter()).copied().max().unwrap_or(1).max(1) as f64;
    let decades = top.log10().ceil().max(1.0);
    let x = |v: f64| m + (v - lo) / (hi - lo).max(1e-12) * (w - 2.0 * m);
    let y = |c: u64| {
        let v = if c == 0 { 0.0 } else { (c as f64).log10() + 1.0 };
        h - m - v / (decades + 1.0) * (h - 2.0 * m)
    };
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        svg,
        r#"<path d="M{m} {m} V{} H{}" fill="none" stroke="black"/>"#,
        h - m,
        w - m
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">sideslip error [deg]</text>"#, w / 2.0, h - 12.0);
    let _ = writeln!(svg, r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">count (log)</text>"#, h / 2.0, h / 2.0);
    for d in 0..=decades as i32 {
        let yy = y(10u64.pow(d as u32));
        let _ = writeln!(svg, r#"<text x="{}" y="{:.1}" text-anchor="end">1e{d}</text>"#, m - 4.0, yy + 4.0);
    }
    let ticks = ((hi - lo) / 1.0).ceil() as i64;
    for k in 0..=ticks {
        let v = lo.ceil() + k as f64;
        if v > hi {
            break;
        }
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{}" text-anchor="middle">{v}</text>"#, x(v), h - m + 16.0);
    }
    for (i, (name, hist)) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let mut d = format!("M{:.1} {:.1}", x(hist.edges[0]), y(0));
        for (k, &c) in hist.counts.iter().enumerate() {
            let _ = write!(d, " V{:.1} H{:.1}", y(c), x(hist.edges[k + 1]));
        }
        let _ = write!(d, " V{:.1}", y(0));
        let _ = writeln!(svg, r#"<path d="{d}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#);
        let ly = m + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly:.1}" fill="{colour}" text-anchor="end">{}</text>"#,
            w - m,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[1.5, -0.5], &[1.0, -1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!((rmse(&[0.3, -0.4], &[0.0, 0.0]).unwrap() - 0.125f64.sqrt()).abs() < 1e-15);
        assert!((rmse(&[0.3, -0.4], &[0.0, 0.0]).unwrap() - 0.353553).abs() < 1e-6);
        assert!(matches!(rmse(&[1.0], &[]), Err(Error::LengthMismatch(1, 0))));
    }

    #[test]
    fn nonlinear_subset() {
        let (e, t) = ([1.0, 2.0, 3.0, 4.0], [0.0; 4]);
        assert_eq!(rmse_nl(&e, &t, &[0.0, 3.9, -1.0, 2.0]).unwrap(), None);
        assert_eq!(max_error_nl(&e, &t, &[0.0; 4]).unwrap(), None);
        let all = [4.0, -5.0, 6.0, -4.0];
        assert_eq!(rmse_nl(&e, &t, &all).unwrap(), Some(rmse(&e, &t).unwrap()));
        let mixed = [0.0, -4.5, 1.0, 4.0];
        assert_eq!(rmse_nl(&e, &t, &mixed).unwrap(), Some(rmse(&[2.0, 4.0], &[0.0, 0.0]).unwrap()));
        assert_eq!(max_error_nl(&e, &t, &mixed).unwrap(), Some(4.0));
    }

    #[test]
    fn spike_sets_max_error() {
        let mut e = vec![0.0; 50];
        e[17] = -1.2;
        assert_eq!(max_error(&e, &[0.0; 50]).unwrap(), 1.2);
    }

    proptest! {
        #[test]
        fn max_error_dominates_rmse(errs in proptest::collection::vec(-5.0f64..5.0, 1..200)) {
            let zero = vec![0.0; errs.len()];
            prop_assert!(max_error(&errs, &zero).unwrap() >= rmse(&errs, &zero).unwrap() - 1e-12);
        }

        #[test]
        fn kpis_ignore_joint_permutation(pairs in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..100), seed in 0u64..1000) {
            let (e, t): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let mut idx: Vec<usize> = (0..e.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..idx.len()).rev() {
                idx.swap(i, rng.random_range(0..=i));
            }
            let pe: Vec<f64> = idx.iter().map(|&i| e[i]).collect();
            let pt: Vec<f64> = idx.iter().map(|&i| t[i]).collect();
            prop_assert!((rmse(&e, &t).unwrap() - rmse(&pe, &pt).unwrap()).abs() < 1e-12);
            prop_assert_eq!(max_error(&e, &t).unwrap(), max_error(&pe, &pt).unwrap());
        }

        #[test]
        fn histogram_conserves_counts(errs in proptest::collection::vec(-20.0f64..20.0, 1..500)) {
            let h = error_histogram(&errs, HISTOGRAM_BIN_WIDTH).unwrap();
            prop_assert_eq!(h.total(), errs.len() as u64);
            prop_assert_eq!(h.edges.len(), h.counts.len() + 1);
            prop_assert!((h.edges[0] + h.edges[h.edges.len() - 1]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_errors_fill_the_bin_starting_at_zero() {
        let h = error_histogram(&[0.0; 10], 0.25).unwrap();
        let nonzero: Vec<usize> = (0..h.counts.len()).filter(|&i| h.counts[i] > 0).collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(h.edges[nonzero[0]], 0.0);
        assert_eq!(h.counts[nonzero[0]], 10);
    }

    #[test]
    fn uniform_errors_spread_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 1_000_000;
        let errs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = error_histogram(&errs, 0.25).unwrap();
        let filled: Vec<u64> = h.counts.iter().copied().filter(|c| *c > 0).collect();
        assert_eq!(filled.len(), 8);
        for c in filled {
            assert!((c as f64 - n as f64 / 8.0).abs() < 0.02 * n as f64 / 8.0);
        }
    }

    fn trace(id: &str, err: f64, ay: f64, n: usize) -> Trace {
        Trace { manoeuvre: id.into(), beta_hat: vec![err; n], beta_true: vec![0.0; n], ay_true: vec![ay; n] }
    }

    #[test]
    fn report_pools_and_breaks_down() {
        let r = KpiReport::from_traces("ekf-imu", &[trace("a", 0.3, 1.0, 10), trace("b", -0.6, 5.0, 30)]).unwrap();
        assert_eq!(r.per_manoeuvre.len(), 2);
        assert_eq!(r.per_manoeuvre[0].1.rmse_nl, None);
        assert_eq!((r.pooled.samples, r.pooled.samples_nl), (40, 30));
        let expected = ((10.0 * 0.09 + 30.0 * 0.36) / 40.0f64).sqrt();
        assert!((r.pooled.rmse - expected).abs() < 1e-12);
        assert_eq!(r.pooled.me_nl, Some(0.6));
        let csv = r.to_csv();
        assert!(csv.starts_with("manoeuvre,samples,samples_nl,rmse,rmse_nl,me,me_nl\na,10,0,"));
        assert!(csv.contains(",undefined,"));
        assert_eq!(csv, r.to_csv());
    }

    #[test]
    fn single_estimator_table_is_four_by_one() {
        let r = KpiReport::from_traces("ukf-tyre", &[trace("a", 0.3, 1.0, 10)]).unwrap();
        let t = comparison_table(&[r]).unwrap();
        assert_eq!(t.columns.len(), 1);
        assert_eq!(t.rows.len(), 4);
        assert_eq!(t.to_csv(), "KPI [deg],ukf-tyre\nRMSE,0.300\nRMSE_nl,undefined\nME,0.300\nME_nl,undefined\n");
        assert!(t.to_text().lines().all(|l| !l.ends_with(' ')));
    }

    #[test]
    fn reference_tables_have_published_cells() {
        let [model, data] = reference_tables();
        let csv = model.to_csv();
        assert!(csv.starts_with("KPI [deg],EKF,EKF Tyre,UKF,UKF Tyre\nRMSE,0.421,0.391,0.394,0.370\n"));
        assert_eq!(data.rows[0].1[1], Some(0.209));
        assert_eq!(model.rows[0].1[3], Some(0.370));
        let text = data.to_text();
        assert!(text.lines().nth(1).unwrap().starts_with("RMSE     "));
    }

    #[test]
    fn svg_is_well_formed_and_deterministic() {
        let h = error_histogram(&[0.1, -0.3, 0.2, 1.4], 0.25).unwrap();
        let svg = histogram_svg("a < b", &[("ekf".into(), h.clone()), ("ukf".into(), h)]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b"));
        assert_eq!(svg.matches("<path").count(), 3);
    }
}
