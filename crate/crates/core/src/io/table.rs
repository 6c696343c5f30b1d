use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{create, open, IoError};
use crate::conductivity::FiberParams;

/// One activation-time sample of one map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub map_id: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub time_ms: f64,
}

/// Loss terms at one training iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iteration: usize,
    #[serde(rename = "L_data")]
    pub data: f64,
    #[serde(rename = "L_eiko")]
    pub eikonal: f64,
    #[serde(rename = "L_cv")]
    pub speed_tv: f64,
    #[serde(rename = "L_ang")]
    pub angle_tv: f64,
    pub total: f64,
}

/// Fiber parameters at one vertex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberRecord {
    pub vertex: usize,
    pub a: f64,
    pub e1: f64,
    pub e2: f64,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn write_samples(path: &Path, rows: &[SampleRecord]) -> Result<(), IoError> {
    write_csv(path, rows)
}

/// Reads samples and checks that every time is finite.
pub fn read_samples(path: &Path) -> Result<Vec<SampleRecord>, IoError> {
    let rows: Vec<SampleRecord> = read_csv(path)?;
    if let Some((i, _)) = rows
        .iter()
        .enumerate()
        .find(|(_, r)| !(r.time_ms.is_finite() && r.x.is_finite() && r.y.is_finite() && r.z.is_finite()))
    {
        return Err(IoError::parse(i + 2, "non-finite sample"));
    }
    Ok(rows)
}

pub fn write_fiber_params(path: &Path, params: &[FiberParams]) -> Result<(), IoError> {
    let rows: Vec<FiberRecord> = params
        .iter()
        .enumerate()
        .map(|(vertex, p)| FiberRecord { vertex, a: p.a, e1: p.e1, e2: p.e2 })
        .collect();
    write_csv(path, &rows)
}

/// Reads per-vertex parameters; rows must list vertices `0..n` in order.
pub fn read_fiber_params(path: &Path) -> Result<Vec<FiberParams>, IoError> {
    let rows: Vec<FiberRecord> = read_csv(path)?;
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            if r.vertex != i {
                return Err(IoError::parse(i + 2, format!("expected vertex {i}, found {}", r.vertex)));
            }
            Ok(FiberParams { a: r.a, e1: r.e1, e2: r.e2 })
        })
        .collect()
}
