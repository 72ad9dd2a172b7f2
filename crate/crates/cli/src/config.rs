//! Run configuration file.
//!
//! One JSON object with optional sections `plant`, `weights`, `noise`, `sim`
//! and `train`. Every section and field has a default, unknown keys are
//! rejected. Angles (the state vector `x0` and training-domain bounds) are
//! numbers in radians or strings with a `deg` / `rad` suffix, optionally
//! followed by `/s` for rates: `"20deg"`, `"0.01rad/s"`.

use std::fmt;
use std::path::Path;

use rnqg::pendulum::PendulumParams;
use rnqg::simulate::{DisturbanceProfile, Integrator};
use rnqg::value_approx::TrainMode;
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Angle(pub f64);

pub fn parse_angle(text: &str) -> Result<f64, String> {
    let t = text.trim();
    let t = t.strip_suffix("/s").unwrap_or(t).trim_end();
    let (num, scale) = if let Some(n) = t.strip_suffix("deg") {
        (n, std::f64::consts::PI / 180.0)
    } else if let Some(n) = t.strip_suffix("rad") {
        (n, 1.0)
    } else {
        (t, 1.0)
    };
    let v: f64 = num.trim().parse().map_err(|_| format!("cannot read {text:?} as an angle"))?;
    if !v.is_finite() {
        return Err(format!("angle {text:?} is not finite"));
    }
    Ok(v * scale)
}

/// Comma-separated state, each entry an angle literal.
pub fn parse_state(text: &str) -> Result<Vec<f64>, String> {
    if text.trim().is_empty() {
        return Err("empty state".into());
    }
    text.split(',').map(parse_angle).collect()
}

impl<'de> Deserialize<'de> for Angle {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Angle;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number in radians or a string like \"20deg\" / \"0.3rad\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Angle, E> {
                Ok(Angle(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Angle, E> {
                Ok(Angle(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Angle, E> {
                Ok(Angle(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Angle, E> {
                parse_angle(v).map(Angle).map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

impl Serialize for Angle {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub plant: PlantSection,
    pub weights: WeightsSection,
    pub noise: NoiseSection,
    pub sim: SimSection,
    pub train: TrainSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantSection {
    pub pendulum: PendulumParams,
}

/// Q(x) = diag(1 + xᵢ²) is fixed; R = r, S = s_scale·I.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsSection {
    pub gamma1: f64,
    pub gamma2: f64,
    pub r: f64,
    pub s_scale: f64,
}

impl Default for WeightsSection {
    fn default() -> Self {
        Self { gamma1: 5.0, gamma2: 5.0, r: 1.0, s_scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// L = B·sigma_l.
    pub sigma_l: f64,
    /// H = h_level·𝟙.
    pub h_level: f64,
    /// Overrides the case preset when set.
    pub state_noise_std: Option<f64>,
    pub measurement_noise_std: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self { sigma_l: 0.01, h_level: 0.01, state_noise_std: None, measurement_noise_std: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub dt: f64,
    pub t_end: f64,
    pub integrator: Integrator,
    pub x0: Option<[Angle; 4]>,
    /// Overrides the case preset when set.
    pub disturbance: Option<DisturbanceProfile>,
    pub resolve_every: usize,
    pub substeps: usize,
    /// `null` disables adaptive substepping.
    pub stiffness_target: Option<f64>,
    pub noise_into_plant: bool,
    pub record_gains: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            dt: 0.01,
            t_end: 20.0,
            integrator: Integrator::Rk4,
            x0: None,
            disturbance: None,
            resolve_every: 1,
            substeps: 1,
            stiffness_target: Some(rnqg::simulate::cases::DEFAULT_STIFFNESS_TARGET),
            noise_into_plant: false,
            record_gains: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub horizon: usize,
    /// Defaults to 40 × basis count.
    pub eta: Option<usize>,
    pub degree: u32,
    pub dt: f64,
    pub domain: Option<Vec<[Angle; 2]>>,
    pub mode: TrainMode,
    pub resample_each_step: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            horizon: rnqg::simulate::cases::DEFAULT_TRAIN_HORIZON,
            eta: None,
            degree: 2,
            dt: rnqg::simulate::cases::DEFAULT_TRAIN_DT,
            domain: None,
            mode: TrainMode::Greedy,
            resample_each_step: false,
        }
    }
}

/// Parsed config plus the bytes it was read from (for hashing).
pub struct Loaded {
    pub config: Config,
    pub raw: Vec<u8>,
}

pub fn load(path: Option<&Path>) -> Result<Loaded, String> {
    let Some(path) = path else {
        let config = Config::default();
        let raw = serde_json::to_vec(&config).expect("default config serializes");
        return Ok(Loaded { config, raw });
    };
    let raw = std::fs::read(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let config: Config =
        serde_json::from_slice(&raw).map_err(|e| format!("config {}: {e}", path.display()))?;
    config.validate()?;
    Ok(Loaded { config, raw })
}

impl Config {
    pub fn validate(&self) -> Result<(), String> {
        self.plant.pendulum.validate().map_err(|e| format!("plant.pendulum: {e}"))?;
        let w = &self.weights;
        for (name, v) in [("weights.gamma1", w.gamma1), ("weights.gamma2", w.gamma2), ("weights.r", w.r)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if !(w.s_scale.is_finite() && w.s_scale >= 0.0) {
            return Err(format!("weights.s_scale must be nonnegative, got {}", w.s_scale));
        }
        let n = &self.noise;
        for (name, v) in [
            ("noise.sigma_l", n.sigma_l),
            ("noise.h_level", n.h_level),
            ("noise.measurement_noise_std", n.measurement_noise_std),
            ("noise.state_noise_std", n.state_noise_std.unwrap_or(0.0)),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be nonnegative, got {v}"));
            }
        }
        let t = &self.train;
        if t.horizon == 0 {
            return Err("train.horizon must be at least 1".into());
        }
        if !(t.dt.is_finite() && t.dt > 0.0) {
            return Err(format!("train.dt must be positive, got {}", t.dt));
        }
        if let Some(d) = &t.domain {
            if d.len() != 4 {
                return Err(format!("train.domain needs 4 [lo, hi] pairs, got {}", d.len()));
            }
        }
        Ok(())
    }
}
