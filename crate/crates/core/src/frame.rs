//! 100 Hz measurement frames and the on-disk manoeuvre format.
//!
//! A manoeuvre file is CSV (header mandatory) or JSON-lines with the columns
//!
//! ```text
//! t, vx, ax, ay, yaw_rate, delta,
//! fx_fl, fx_fr, fx_rl, fx_rr, fy_fl, fy_fr, fy_rl, fy_rr, fz_fl, fz_fr, fz_rl, fz_rr,
//! beta_true, ay_true
//! ```
//!
//! in SI units (angles in rad). The twelve wheel-force columns may be absent for
//! IMU-only recordings. `ay_true` is the plant's noise-free lateral
//! acceleration, kept for the non-linear KPI mask.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample period of every recording, s.
pub const SAMPLE_PERIOD: f64 = 0.01;
pub const SAMPLE_RATE_HZ: f64 = 100.0;

/// Wheel order used by every per-wheel array.
pub const WHEELS: [&str; 4] = ["fl", "fr", "rl", "rr"];

pub const IMU_COLUMNS: [&str; 6] = ["t", "vx", "ax", "ay", "yaw_rate", "delta"];

pub const FORCE_COLUMNS: [&str; 12] = [
    "fx_fl", "fx_fr", "fx_rl", "fx_rr", "fy_fl", "fy_fr", "fy_rl", "fy_rr", "fz_fl", "fz_fr",
    "fz_rl", "fz_rr",
];

/// Wheel-frame forces from the force transducers, N, ordered fl, fr, rl, rr.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WheelForces {
    pub fx: [f64; 4],
    pub fy: [f64; 4],
    pub fz: [f64; 4],
}

impl WheelForces {
    pub fn front_lateral(&self) -> f64 {
        self.fy[0] + self.fy[1]
    }

    pub fn rear_lateral(&self) -> f64 {
        self.fy[2] + self.fy[3]
    }

    /// The twelve channels in file column order.
    pub fn channels(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        out[..4].copy_from_slice(&self.fx);
        out[4..8].copy_from_slice(&self.fy);
        out[8..].copy_from_slice(&self.fz);
        out
    }

    pub fn from_channels(c: &[f64]) -> Self {
        let mut w = WheelForces::default();
        w.fx.copy_from_slice(&c[..4]);
        w.fy.copy_from_slice(&c[4..8]);
        w.fz.copy_from_slice(&c[8..12]);
        w
    }
}

/// One sensor sample plus the plant's ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeasurementFrame {
    pub t: f64,
    pub vx: f64,
    pub ax: f64,
    pub ay: f64,
    pub yaw_rate: f64,
    pub delta: f64,
    pub wheels: Option<WheelForces>,
    /// rad, never corrupted by sensor noise
    pub beta_true: f64,
    /// m/s², noise-free
    pub ay_true: f64,
}

impl MeasurementFrame {
    pub fn wheels(&self) -> Result<&WheelForces> {
        self.wheels.as_ref().ok_or_else(|| Error::MissingChannel(FORCE_COLUMNS[0].to_string()))
    }

    fn row(&self) -> Vec<f64> {
        let mut row = vec![self.t, self.vx, self.ax, self.ay, self.yaw_rate, self.delta];
        if let Some(w) = &self.wheels {
            row.extend_from_slice(&w.channels());
        }
        row.push(self.beta_true);
        row.push(self.ay_true);
        row
    }
}

/// Column header for a manoeuvre file.
pub fn header(with_forces: bool) -> Vec<&'static str> {
    let mut h: Vec<&str> = IMU_COLUMNS.to_vec();
    if with_forces {
        h.extend_from_slice(&FORCE_COLUMNS);
    }
    h.push("beta_true");
    h.push("ay_true");
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    #[default]
    Csv,
    Jsonl,
}

impl FileFormat {
    pub fn extension(self) -> &'static str {
        match self {
            FileFormat::Csv => "csv",
            FileFormat::Jsonl => "jsonl",
        }
    }

    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(FileFormat::Csv),
            "jsonl" => Some(FileFormat::Jsonl),
            _ => None,
        }
    }
}

pub fn write_frames(path: &Path, frames: &[MeasurementFrame], format: FileFormat) -> Result<()> {
    let with_forces = frames.first().is_some_and(|f| f.wheels.is_some());
    if frames.iter().any(|f| f.wheels.is_some() != with_forces) {
        return Err(Error::format(path, "frames mix recordings with and without wheel forces"));
    }
    let cols = header(with_forces);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    match format {
        FileFormat::Csv => {
            writeln!(out, "{}", cols.join(",")).map_err(io)?;
            for f in frames {
                let line: Vec<String> = f.row().iter().map(|v| v.to_string()).collect();
                writeln!(out, "{}", line.join(",")).map_err(io)?;
            }
        }
        FileFormat::Jsonl => {
            for f in frames {
                let mut obj = serde_json::Map::new();
                for (k, v) in cols.iter().zip(f.row()) {
                    obj.insert((*k).to_string(), serde_json::json!(v));
                }
                let line = serde_json::to_string(&obj).map_err(|e| Error::format(path, e))?;
                writeln!(out, "{line}").map_err(io)?;
            }
        }
    }
    out.flush().map_err(io)
}

struct ColumnMap {
    imu: [usize; 6],
    forces: Option<[usize; 12]>,
    beta_true: usize,
    ay_true: usize,
}

impl ColumnMap {
    fn new(names: &[String], path: &Path) -> Result<Self> {
        let find = |name: &str| names.iter().position(|n| n == name);
        let require = |name: &str| {
            find(name).ok_or_else(|| Error::format(path, format!("missing column `{name}`")))
        };
        let mut imu = [0; 6];
        for (slot, name) in imu.iter_mut().zip(IMU_COLUMNS) {
            *slot = require(name)?;
        }
        let present: Vec<Option<usize>> = FORCE_COLUMNS.iter().map(|c| find(c)).collect();
        let forces = if present.iter().all(Option::is_none) {
            None
        } else {
            let mut idx = [0; 12];
            for (i, p) in present.iter().enumerate() {
                idx[i] = p.ok_or_else(|| Error::MissingChannel(FORCE_COLUMNS[i].to_string()))?;
            }
            Some(idx)
        };
        Ok(Self { imu, forces, beta_true: require("beta_true")?, ay_true: require("ay_true")? })
    }

    fn frame(&self, values: &[f64]) -> MeasurementFrame {
        let g = |i: usize| values[i];
        MeasurementFrame {
            t: g(self.imu[0]),
            vx: g(self.imu[1]),
            ax: g(self.imu[2]),
            ay: g(self.imu[3]),
            yaw_rate: g(self.imu[4]),
            delta: g(self.imu[5]),
            wheels: self.forces.map(|idx| {
                let c: Vec<f64> = idx.iter().map(|&i| g(i)).collect();
                WheelForces::from_channels(&c)
            }),
            beta_true: g(self.beta_true),
            ay_true: g(self.ay_true),
        }
    }
}

pub fn read_frames(path: &Path) -> Result<Vec<MeasurementFrame>> {
    let format = FileFormat::from_path(path)
        .ok_or_else(|| Error::format(path, "expected a .csv or .jsonl file"))?;
    match format {
        FileFormat::Csv => {
            let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
            let names: Vec<String> = reader
                .headers()
                .map_err(|e| Error::format(path, e))?
                .iter()
                .map(|s| s.trim().to_string())
                .collect();
            let map = ColumnMap::new(&names, path)?;
            let mut frames = Vec::new();
            for (line, record) in reader.records().enumerate() {
                let record = record.map_err(|e| Error::format(path, e))?;
                let values = record
                    .iter()
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::format(path, format!("row {}: {e}", line + 2)))?;
                frames.push(map.frame(&values));
            }
            Ok(frames)
        }
        FileFormat::Jsonl => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let mut frames = Vec::new();
            let mut map = None;
            let mut names = Vec::new();
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let obj: serde_json::Map<String, serde_json::Value> =
                    serde_json::from_str(&line).map_err(|e| Error::format(path, e))?;
                if map.is_none() {
                    names = obj.keys().cloned().collect();
                    map = Some(ColumnMap::new(&names, path)?);
                }
                let values = names
                    .iter()
                    .map(|k| obj.get(k).and_then(|v| v.as_f64()))
                    .collect::<Option<Vec<f64>>>()
                    .ok_or_else(|| Error::format(path, format!("line {}: bad record", n + 1)))?;
                frames.push(map.as_ref().unwrap().frame(&values));
            }
            Ok(frames)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(seed: f64, forces: bool) -> MeasurementFrame {
        MeasurementFrame {
            t: seed * 0.01,
            vx: 20.0 + seed,
            ax: -0.1 * seed,
            ay: 1.0 / (seed + 3.0),
            yaw_rate: 0.123_456_789_012_345 * seed,
            delta: -0.01,
            wheels: forces.then(|| WheelForces::from_channels(&[seed * 7.3; 12])),
            beta_true: 1e-17 * seed,
            ay_true: 0.9 / (seed + 3.0),
        }
    }

    #[test]
    fn header_order_is_fixed() {
        let h = header(true);
        assert_eq!(h.len(), 20);
        assert_eq!(&h[..6], &IMU_COLUMNS);
        assert_eq!(h[6], "fx_fl");
        assert_eq!(h[17], "fz_rr");
        assert_eq!(h[18], "beta_true");
        assert_eq!(header(false).len(), 8);
    }

    #[test]
    fn csv_has_header_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_frames(&p, &[frame(1.0, true)], FileFormat::Csv).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("t,vx,ax,ay,yaw_rate,delta,fx_fl,"));
    }

    #[test]
    fn imu_only_file_has_no_wheels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_frames(&p, &[frame(1.0, false), frame(2.0, false)], FileFormat::Csv).unwrap();
        let back = read_frames(&p).unwrap();
        assert!(back.iter().all(|f| f.wheels.is_none()));
        assert!(matches!(back[0].wheels(), Err(Error::MissingChannel(_))));
    }

    #[test]
    fn partial_force_columns_name_the_missing_channel() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "t,vx,ax,ay,yaw_rate,delta,fx_fl,beta_true,ay_true\n0,1,0,0,0,0,0,0,0\n")
            .unwrap();
        match read_frames(&p) {
            Err(Error::MissingChannel(c)) => assert_eq!(c, "fx_fr"),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn files_round_trip_bit_exact(seeds in proptest::collection::vec(-50.0f64..50.0, 1..20), jsonl: bool, forces: bool) {
            let dir = tempfile::tempdir().unwrap();
            let format = if jsonl { FileFormat::Jsonl } else { FileFormat::Csv };
            let p = dir.path().join(format!("m.{}", format.extension()));
            let frames: Vec<_> = seeds.iter().map(|&s| frame(s, forces)).collect();
            write_frames(&p, &frames, format).unwrap();
            prop_assert_eq!(read_frames(&p).unwrap(), frames);
        }
    }
}
