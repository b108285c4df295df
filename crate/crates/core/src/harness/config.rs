//! Experiment configuration: defaults, the flat TOML file format and
//! validation.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kalman::{Algorithm, KalmanConfig, DEFAULT_INITIAL_COVARIANCE};
use crate::linalg::Vec3;
use crate::scene::{DEFAULT_SPEED_OF_SOUND, DEFAULT_WALL_REFLECTION};

/// Every tunable of an experiment run. Field names double as config-file
/// keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub room: [f64; 3],
    pub source: [f64; 3],
    pub trajectory_start: [f64; 3],
    pub trajectory_end: [f64; 3],
    pub fs: f64,
    pub mic_velocity: f64,
    pub speed_of_sound: f64,
    pub wall_reflection: f64,
    pub omega: usize,
    pub max_order: u32,
    /// Measurement SNR; absent means a noiseless observation.
    pub snr_db: Option<f64>,
    /// `2 eps / Ts`.
    pub epsilon_samples: u32,
    pub taps: usize,
    /// RIR length of experiment 4, whose second-order arrivals run later.
    pub exp4_taps: usize,
    pub excitation_db: f64,
    pub process_noise_db: f64,
    pub initial_covariance: f64,
    pub alpha: f64,
    pub seed: u64,
    /// Number of realizations (`seed`, `seed + 1`, ...) averaged in dB.
    pub seeds: usize,
    pub algorithms: Vec<String>,
    /// Fraction of the trajectory used, measured from its start.
    pub scale: f64,
    pub snr_list: Vec<f64>,
    pub omega_list: Vec<usize>,
    /// Fill empty rows of the LI-A matrix with ones on the diagonal.
    pub li_fill_identity: bool,
    pub dtw_min_segment_len: usize,
    pub dtw_rel_threshold: f64,
    /// `squared` or `absolute` local DTW cost.
    pub dtw_cost: String,
    /// Write `h_hat(l)` every this many locations; 0 disables snapshots.
    pub snapshot_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            room: [4.5, 5.8, 2.9],
            source: [1.05, 2.98, 1.17],
            trajectory_start: [1.94, 3.10, 1.09],
            trajectory_end: [1.99, 2.95, 0.37],
            fs: 16000.0,
            mic_velocity: 0.25,
            speed_of_sound: DEFAULT_SPEED_OF_SOUND,
            wall_reflection: DEFAULT_WALL_REFLECTION,
            omega: 1,
            max_order: 1,
            snr_db: None,
            epsilon_samples: 20,
            taps: 480,
            exp4_taps: 560,
            excitation_db: -20.0,
            process_noise_db: -30.0,
            initial_covariance: DEFAULT_INITIAL_COVARIANCE,
            alpha: 1.0,
            seed: 0,
            seeds: 1,
            algorithms: Algorithm::ALL.iter().map(|a| a.name().to_string()).collect(),
            scale: 1.0,
            snr_list: vec![6.0, 0.0, -6.0],
            omega_list: vec![2, 8, 32],
            li_fill_identity: false,
            dtw_min_segment_len: 3,
            dtw_rel_threshold: 0.05,
            dtw_cost: "squared".into(),
            snapshot_every: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// 64-bit hash of the serialized config.
    pub fn hash_hex(&self) -> String {
        let mut h = DefaultHasher::new();
        self.to_toml_string().hash(&mut h);
        format!("{:016x}", h.finish())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return bad(format!("fs must be positive, got {}", self.fs));
        }
        if !(self.mic_velocity > 0.0 && self.mic_velocity.is_finite()) {
            return bad(format!("mic_velocity must be positive, got {}", self.mic_velocity));
        }
        if self.omega == 0 || self.omega_list.contains(&0) {
            return bad("omega must be >= 1".into());
        }
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return bad(format!("scale must lie in (0, 1], got {}", self.scale));
        }
        if self.taps == 0 || self.exp4_taps == 0 {
            return bad("taps must be >= 1".into());
        }
        if self.seeds == 0 {
            return bad("seeds must be >= 1".into());
        }
        if self.epsilon_samples == 0 {
            return bad("epsilon_samples must be >= 1".into());
        }
        if self.initial_covariance < 0.0 {
            return bad("initial_covariance must be non-negative".into());
        }
        if self.trajectory_start == self.trajectory_end {
            return bad("trajectory endpoints coincide".into());
        }
        self.algorithm_list()?;
        self.dtw_cost.parse::<crate::dtw::LocalCost>()?;
        Ok(())
    }

    pub fn algorithm_list(&self) -> Result<Vec<Algorithm>> {
        if self.algorithms.is_empty() {
            return Err(Error::Config("algorithms must not be empty".into()));
        }
        let mut out = Vec::new();
        for name in &self.algorithms {
            let a: Algorithm = name.parse()?;
            if out.contains(&a) {
                return Err(Error::Config(format!("algorithm {a} listed twice")));
            }
            out.push(a);
        }
        Ok(out)
    }

    pub fn ts(&self) -> f64 {
        1.0 / self.fs
    }

    pub fn eps(&self) -> f64 {
        0.5 * self.epsilon_samples as f64 * self.ts()
    }

    pub fn room_dims(&self) -> Vec3 {
        Vec3(self.room)
    }

    pub fn source_position(&self) -> Vec3 {
        Vec3(self.source)
    }

    pub fn start(&self) -> Vec3 {
        Vec3(self.trajectory_start)
    }

    /// Endpoint after applying `scale`.
    pub fn scaled_end(&self) -> Vec3 {
        let s = self.start();
        s + (Vec3(self.trajectory_end) - s) * self.scale
    }

    pub fn kalman(&self, measurement_noise: f64) -> KalmanConfig {
        KalmanConfig {
            process_noise: 10f64.powf(self.process_noise_db / 10.0),
            measurement_noise,
            initial_covariance: self.initial_covariance,
            alpha: self.alpha,
        }
    }

    pub fn excitation_variance(&self) -> f64 {
        10f64.powf(self.excitation_db / 10.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(c.algorithm_list().unwrap(), Algorithm::ALL.to_vec());
        assert!((c.eps() * c.fs - 10.0).abs() < 1e-12);
    }

    #[test]
    fn file_values_override_defaults() {
        let c = ExperimentConfig::from_toml_str("omega = 8\nsnr_db = -6\nscale = 0.5\n").unwrap();
        assert_eq!(c.omega, 8);
        assert_eq!(c.snr_db, Some(-6.0));
        assert_eq!(c.taps, 480);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("omgea = 8\n").is_err());
        assert!(ExperimentConfig::from_toml_str("scale = 0\n").is_err());
        assert!(ExperimentConfig::from_toml_str("scale = 1.5\n").is_err());
        assert!(ExperimentConfig::from_toml_str("fs = -1\n").is_err());
        assert!(ExperimentConfig::from_toml_str("omega = 0\n").is_err());
        assert!(ExperimentConfig::from_toml_str("algorithms = [\"NLMS\"]\n").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let c = ExperimentConfig {
            snr_db: Some(0.0),
            algorithms: vec!["KF-A".into()],
            ..ExperimentConfig::default()
        };
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash_hex(), c.hash_hex());
    }

    #[test]
    fn scaled_end_lies_on_the_segment() {
        let c = ExperimentConfig {
            scale: 0.5,
            ..ExperimentConfig::default()
        };
        let full = Vec3(c.trajectory_end).distance(c.start());
        assert!((c.scaled_end().distance(c.start()) - 0.5 * full).abs() < 1e-12);
    }
}
