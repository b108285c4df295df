//! Shoebox room geometry, image sources and band-limited RIR synthesis.

use std::cmp::Ordering;
use std::f64::consts::PI;

use log::warn;

use crate::error::{Error, Result};
use crate::linalg::Vec3;

pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;
pub const DEFAULT_WALL_REFLECTION: f64 = 0.9;

/// Axis-aligned box `[0, Lx] x [0, Ly] x [0, Lz]` with a frequency-independent
/// wall reflection coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct Room {
    dims: Vec3,
    wall_reflection: f64,
    speed_of_sound: f64,
}

impl Room {
    pub fn new(dims: Vec3, wall_reflection: f64, speed_of_sound: f64) -> Result<Self> {
        if dims.0.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::Domain(format!("room dimensions must be positive, got {dims:?}")));
        }
        if !(wall_reflection > 0.0 && wall_reflection <= 1.0) {
            return Err(Error::Domain(format!(
                "wall reflection must lie in (0, 1], got {wall_reflection}"
            )));
        }
        if !(speed_of_sound.is_finite() && speed_of_sound > 0.0) {
            return Err(Error::Domain(format!(
                "speed of sound must be positive, got {speed_of_sound}"
            )));
        }
        Ok(Self {
            dims,
            wall_reflection,
            speed_of_sound,
        })
    }

    pub fn dims(&self) -> Vec3 {
        self.dims
    }

    pub fn wall_reflection(&self) -> f64 {
        self.wall_reflection
    }

    pub fn speed_of_sound(&self) -> f64 {
        self.speed_of_sound
    }

    /// True when `p` lies strictly inside the box.
    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|i| p[i] > 0.0 && p[i] < self.dims[i])
    }
}

/// A mirrored copy of the source. Order 0 is the source itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageSource {
    pub position: Vec3,
    pub order: u32,
    /// `wall_reflection^order`
    pub base_amplitude: f64,
}

/// Lists every lattice image of `src` whose reflection order is at most
/// `max_order`, sorted by order and then lexicographically by position.
pub fn enumerate_image_sources(room: &Room, src: Vec3, max_order: u32) -> Result<Vec<ImageSource>> {
    if !room.contains(src) {
        return Err(Error::Domain(format!("source {src:?} is not inside the room")));
    }
    let k = max_order as i64;
    // Per axis: images at 2mL + s (order 2|m|) and 2mL - s (order |2m - 1|).
    let axis = |i: usize| -> Vec<(f64, u32)> {
        let len = room.dims[i];
        let s = src[i];
        let mut out = Vec::new();
        for m in -k..=k {
            let even = (2 * m).unsigned_abs() as u32;
            if even <= max_order {
                out.push((2.0 * m as f64 * len + s, even));
            }
            let odd = (2 * m - 1).unsigned_abs() as u32;
            if odd <= max_order {
                out.push((2.0 * m as f64 * len - s, odd));
            }
        }
        out
    };
    let (ax, ay, az) = (axis(0), axis(1), axis(2));
    let mut images = Vec::new();
    for &(x, ox) in &ax {
        for &(y, oy) in &ay {
            if ox + oy > max_order {
                continue;
            }
            for &(z, oz) in &az {
                let order = ox + oy + oz;
                if order <= max_order {
                    images.push(ImageSource {
                        position: Vec3::new(x, y, z),
                        order,
                        base_amplitude: room.wall_reflection.powi(order as i32),
                    });
                }
            }
        }
    }
    images.sort_by(|a, b| {
        a.order.cmp(&b.order).then_with(|| {
            (0..3)
                .map(|i| a.position[i].total_cmp(&b.position[i]))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
    });
    Ok(images)
}

fn distance_checked(img: &ImageSource, mic: Vec3) -> Result<f64> {
    let d = img.position.distance(mic);
    if d > 0.0 {
        Ok(d)
    } else {
        Err(Error::Domain("image source coincides with the microphone".into()))
    }
}

/// Time of arrival in seconds.
pub fn toa(img: &ImageSource, mic: Vec3, speed_of_sound: f64) -> Result<f64> {
    if !(speed_of_sound > 0.0) {
        return Err(Error::Domain(format!(
            "speed of sound must be positive, got {speed_of_sound}"
        )));
    }
    Ok(distance_checked(img, mic)? / speed_of_sound)
}

/// Gain with 1/r spherical spreading.
pub fn amplitude(img: &ImageSource, mic: Vec3) -> Result<f64> {
    Ok(img.base_amplitude / distance_checked(img, mic)?)
}

/// Early RIR at one microphone position: length-`N` samples at rate `fs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    pub samples: Vec<f64>,
    pub fs: f64,
    pub location_index: usize,
}

impl Rir {
    pub fn new(samples: Vec<f64>, fs: f64, location_index: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Domain("an RIR needs at least one sample".into()));
        }
        if let Some(bad) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("RIR sample {bad} is not finite")));
        }
        if !(fs > 0.0) {
            return Err(Error::Domain(format!("sampling rate must be positive, got {fs}")));
        }
        Ok(Self {
            samples,
            fs,
            location_index,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Writes `sum_r a_r sinc(n - tau_r fs)` for `n = 0..out.len()`.
///
/// Uses `sin(pi (n - f)) = -(-1)^n sin(pi f)` so each arrival costs a single
/// `sin` evaluation.
pub fn add_arrivals(arrivals: &[(f64, f64)], fs: f64, out: &mut [f64]) {
    for &(tau, a) in arrivals {
        let f = tau * fs;
        let s = -(PI * f).sin();
        let mut sign = 1.0;
        for (n, v) in out.iter_mut().enumerate() {
            let x = n as f64 - f;
            *v += if x.abs() < 1e-12 { a } else { a * sign * s / (PI * x) };
            sign = -sign;
        }
    }
}

/// Arrival times and gains of every image at `mic`.
pub fn arrivals(images: &[ImageSource], mic: Vec3, speed_of_sound: f64) -> Result<Vec<(f64, f64)>> {
    images
        .iter()
        .map(|img| Ok((toa(img, mic, speed_of_sound)?, amplitude(img, mic)?)))
        .collect()
}

/// Band-limited ISM synthesis with untruncated sinc kernels over the
/// `n`-sample window.
pub fn synthesize_rir(
    images: &[ImageSource],
    mic: Vec3,
    speed_of_sound: f64,
    fs: f64,
    n: usize,
    location_index: usize,
) -> Result<Rir> {
    let arr = arrivals(images, mic, speed_of_sound)?;
    let latest = arr.iter().map(|a| a.0).fold(0.0, f64::max);
    if latest * fs >= n as f64 {
        warn!(
            "latest arrival at sample {:.1} falls outside the {n}-sample window",
            latest * fs
        );
    }
    let mut samples = vec![0.0; n];
    add_arrivals(&arr, fs, &mut samples);
    Rir::new(samples, fs, location_index)
}

/// Straight microphone path sampled at `L` equidistant locations.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    start: Vec3,
    end: Vec3,
    num_locations: usize,
}

impl Trajectory {
    pub fn new(start: Vec3, end: Vec3, num_locations: usize) -> Result<Self> {
        if num_locations < 2 {
            return Err(Error::Domain(format!(
                "a trajectory needs at least two locations, got {num_locations}"
            )));
        }
        Ok(Self {
            start,
            end,
            num_locations,
        })
    }

    pub fn start(&self) -> Vec3 {
        self.start
    }

    pub fn end(&self) -> Vec3 {
        self.end
    }

    pub fn num_locations(&self) -> usize {
        self.num_locations
    }

    pub fn length(&self) -> f64 {
        self.start.distance(self.end)
    }

    /// Distance between neighbouring locations.
    pub fn spacing(&self) -> f64 {
        self.length() / (self.num_locations - 1) as f64
    }

    pub fn position(&self, l: usize) -> Result<Vec3> {
        if l >= self.num_locations {
            return Err(Error::Index {
                index: l,
                len: self.num_locations,
            });
        }
        if l == self.num_locations - 1 {
            return Ok(self.end);
        }
        let t = l as f64 / (self.num_locations - 1) as f64;
        Ok(self.start + (self.end - self.start) * t)
    }
}
