//! Excitation, moving-microphone observation and measurement noise.
//!
//! Random streams come from ChaCha8 seeded with `seed_from_u64`. The
//! excitation uses stream 0 and measurement noise stream 1, so a single
//! seed drives both without the two sequences overlapping.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_len, Error, Result};
use crate::linalg::dot;
use crate::scene::Rir;

const EXCITATION_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

fn gaussian(len: usize, variance: f64, seed: u64, stream: u64) -> Vec<f64> {
    if variance == 0.0 {
        return vec![0.0; len];
    }
    let sd = variance.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sd * z
        })
        .collect()
}

/// I.i.d. zero-mean Gaussian samples with the given variance.
pub fn white_noise(len: usize, variance: f64, seed: u64) -> Vec<f64> {
    assert!(variance >= 0.0, "variance must be non-negative");
    gaussian(len, variance, seed, EXCITATION_STREAM)
}

/// Source signal `x(k)`, `k >= 0`. Samples before `k = 0` read as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Excitation {
    samples: Vec<f64>,
    variance: f64,
    seed: u64,
}

impl Excitation {
    /// White Gaussian excitation of `len` samples.
    pub fn white(len: usize, variance: f64, seed: u64) -> Self {
        Self {
            samples: white_noise(len, variance, seed),
            variance,
            seed,
        }
    }

    /// Wraps explicit samples. `variance` is the nominal power.
    pub fn from_samples(samples: Vec<f64>, variance: f64) -> Self {
        Self {
            samples,
            variance,
            seed: 0,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `x(k)`, zero for negative `k`.
    pub fn at(&self, k: i64) -> f64 {
        if k < 0 {
            0.0
        } else {
            self.samples
                .get(k as usize)
                .copied()
                .unwrap_or_else(|| panic!("excitation has {} samples, index {k} requested", self.samples.len()))
        }
    }

    /// `(x(l Omega), x(l Omega - 1), ..., x(l Omega - N + 1))`.
    pub fn regressor(&self, l: usize, omega: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        self.regressor_into(l, omega, &mut out);
        out
    }

    pub fn regressor_into(&self, l: usize, omega: usize, out: &mut [f64]) {
        let k = (l * omega) as i64;
        for (i, v) in out.iter_mut().enumerate() {
            *v = self.at(k - i as i64);
        }
    }
}

/// Free-function form of [`Excitation::regressor`].
pub fn regressor(x: &Excitation, l: usize, omega: usize, n: usize) -> Vec<f64> {
    x.regressor(l, omega, n)
}

/// Sub-sampled microphone signal, `y[l] = y(l Omega)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y: Vec<f64>,
    pub omega: usize,
    pub noise_variance: f64,
}

impl Observation {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Noise-free observation `x_Omega(l)^T h(l)` for `l = 0..num_locations`,
/// with the RIR at each location supplied by `rir_at`.
pub fn clean_observation<F>(
    x: &Excitation,
    num_locations: usize,
    omega: usize,
    taps: usize,
    mut rir_at: F,
) -> Result<Vec<f64>>
where
    F: FnMut(usize) -> Result<Vec<f64>>,
{
    if omega == 0 {
        return Err(Error::Domain("spatial downsampling factor must be >= 1".into()));
    }
    let mut reg = vec![0.0; taps];
    (0..num_locations)
        .map(|l| {
            let h = rir_at(l)?;
            check_len(taps, h.len())?;
            x.regressor_into(l, omega, &mut reg);
            Ok(dot(&reg, &h))
        })
        .collect()
}

/// Adds i.i.d. Gaussian measurement noise to a clean observation.
pub fn add_noise(clean: Vec<f64>, omega: usize, noise_variance: f64, seed: u64) -> Observation {
    assert!(noise_variance >= 0.0, "noise variance must be non-negative");
    let noise = gaussian(clean.len(), noise_variance, seed, NOISE_STREAM);
    let y = clean.iter().zip(&noise).map(|(c, v)| c + v).collect();
    Observation {
        y,
        omega,
        noise_variance,
    }
}

/// `y[l] = x_Omega(l)^T h(l) + v(l)` over a precomputed RIR set.
pub fn observe(x: &Excitation, rirs: &[Rir], omega: usize, noise_variance: f64, seed: u64) -> Result<Observation> {
    let first = rirs
        .first()
        .ok_or_else(|| Error::Domain("observation needs at least one RIR".into()))?;
    let taps = first.len();
    for r in rirs {
        check_len(taps, r.len())?;
        if r.fs != first.fs {
            return Err(Error::Domain("RIRs disagree on sampling rate".into()));
        }
    }
    let clean = clean_observation(x, rirs.len(), omega, taps, |l| Ok(rirs[l].samples.clone()))?;
    Ok(add_noise(clean, omega, noise_variance, seed))
}

/// Noise variance that puts `y_clean` at `snr_db` above the noise.
pub fn snr_to_noise_variance(snr_db: f64, y_clean: &[f64]) -> Result<f64> {
    if y_clean.is_empty() {
        return Err(Error::Domain("clean signal is empty".into()));
    }
    let power = y_clean.iter().map(|v| v * v).sum::<f64>() / y_clean.len() as f64;
    if power == 0.0 {
        return Err(Error::Domain("clean signal has zero power".into()));
    }
    Ok(power / 10f64.powf(snr_db / 10.0))
}
