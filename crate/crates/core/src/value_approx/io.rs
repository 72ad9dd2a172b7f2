//! Weight-schedule persistence.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! ```text
//! magic    8 bytes  "RNQGWSCH"
//! version  u32      (1)
//! n        u32      state dimension
//! count    u32      basis terms
//! degree   u32
//! terms    count·n u32 exponents, term-major
//! horizon  u64
//! eta      u64
//! seed     u64
//! mode     u8       0 = drift-only, 1 = greedy
//! conv     u8       converged flag
//! dt       f64
//! domain   n·2 f64  (lo, hi) per state
//! weights  (horizon+1)·count f64, W_N first
//! changes  horizon f64
//! ```
//!
//! The JSON sidecar carries the same fields except the weight history, plus
//! W₀, for inspection.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BasisSpec, TrainMode, WeightSchedule};

pub const MAGIC: &[u8; 8] = b"RNQGWSCH";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScheduleIoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a weight schedule file (bad magic)")]
    BadMagic,
    #[error("unsupported schedule version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated or malformed schedule: {0}")]
    Malformed(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub fn to_bytes(s: &WeightSchedule) -> Vec<u8> {
    let count = s.basis.count();
    let mut out = Vec::with_capacity(64 + 8 * (s.horizon + 1) * count);
    out.extend_from_slice(MAGIC);
    for v in [VERSION, s.basis.n as u32, count as u32, s.basis.degree] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for t in &s.basis.terms {
        for e in t {
            out.extend_from_slice(&e.to_le_bytes());
        }
    }
    for v in [s.horizon as u64, s.eta as u64, s.seed] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(match s.mode {
        TrainMode::DriftOnly => 0,
        TrainMode::Greedy => 1,
    });
    out.push(u8::from(s.converged));
    out.extend_from_slice(&s.dt.to_le_bytes());
    for (lo, hi) in &s.domain {
        out.extend_from_slice(&lo.to_le_bytes());
        out.extend_from_slice(&hi.to_le_bytes());
    }
    for w in &s.weights_by_step {
        for v in w {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in &s.step_changes {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8], ScheduleIoError> {
        let end = self.pos.checked_add(k).filter(|e| *e <= self.buf.len());
        let end = end.ok_or_else(|| ScheduleIoError::Malformed(format!("need {k} bytes at offset {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, ScheduleIoError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, ScheduleIoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, ScheduleIoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, ScheduleIoError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<WeightSchedule, ScheduleIoError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(ScheduleIoError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(ScheduleIoError::UnsupportedVersion(version));
    }
    let n = r.u32()? as usize;
    let count = r.u32()? as usize;
    let _degree = r.u32()?;
    if n.checked_mul(count).is_none_or(|c| c > buf.len()) {
        return Err(ScheduleIoError::Malformed("implausible basis size".into()));
    }
    let mut terms = Vec::with_capacity(count);
    for _ in 0..count {
        terms.push((0..n).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?);
    }
    let basis = BasisSpec::from_terms(n, terms).map_err(|e| ScheduleIoError::Malformed(e.to_string()))?;
    let horizon = r.u64()? as usize;
    let eta = r.u64()? as usize;
    let seed = r.u64()?;
    let mode = match r.u8()? {
        0 => TrainMode::DriftOnly,
        1 => TrainMode::Greedy,
        m => return Err(ScheduleIoError::Malformed(format!("unknown mode byte {m}"))),
    };
    let converged = r.u8()? != 0;
    let dt = r.f64()?;
    let domain = (0..n).map(|_| Ok((r.f64()?, r.f64()?))).collect::<Result<Vec<_>, ScheduleIoError>>()?;
    let steps = horizon.checked_add(1).filter(|s| s.saturating_mul(count).saturating_mul(8) <= buf.len());
    let steps = steps.ok_or_else(|| ScheduleIoError::Malformed("implausible horizon".into()))?;
    let mut weights_by_step = Vec::with_capacity(steps);
    for _ in 0..steps {
        weights_by_step.push((0..count).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?);
    }
    let step_changes = (0..horizon).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    if r.pos != buf.len() {
        return Err(ScheduleIoError::Malformed(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(WeightSchedule { basis, weights_by_step, horizon, domain, eta, seed, mode, dt, converged, step_changes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSidecar {
    pub format_version: u32,
    pub basis: BasisSpec,
    pub domain: Vec<(f64, f64)>,
    pub seed: u64,
    pub horizon: usize,
    pub eta: usize,
    pub mode: TrainMode,
    pub dt: f64,
    pub converged: bool,
    pub final_weights: Vec<f64>,
    pub last_step_change: Option<f64>,
}

pub fn sidecar(s: &WeightSchedule) -> ScheduleSidecar {
    ScheduleSidecar {
        format_version: VERSION,
        basis: s.basis.clone(),
        domain: s.domain.clone(),
        seed: s.seed,
        horizon: s.horizon,
        eta: s.eta,
        mode: s.mode,
        dt: s.dt,
        converged: s.converged,
        final_weights: s.final_weights().to_vec(),
        last_step_change: s.step_changes.last().copied(),
    }
}

/// Writes `path` (binary) and `path` with extension `.json` (sidecar).
pub fn save(s: &WeightSchedule, path: &Path) -> Result<(), ScheduleIoError> {
    fs::write(path, to_bytes(s))?;
    let json = serde_json::to_string_pretty(&sidecar(s))?;
    fs::write(path.with_extension("json"), json + "\n")?;
    Ok(())
}

pub fn load(path: &Path) -> Result<WeightSchedule, ScheduleIoError> {
    from_bytes(&fs::read(path)?)
}
