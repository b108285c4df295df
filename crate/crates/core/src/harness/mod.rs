//! Simulation experiments: ground truth along the trajectory, observations,
//! the four estimators and per-location misalignment curves.

pub mod config;
pub mod io;

use std::path::Path;

use log::{info, warn};

use crate::dtw::{self, DtwEstimate, DtwOptions};
use crate::error::{check_len, Error, Result};
use crate::kalman::{run_filter, Algorithm};
use crate::linalg::{norm2, Vec3};
use crate::scene::{enumerate_image_sources, synthesize_rir, toa, ImageSource, Room, Trajectory};
use crate::signal::{add_noise, clean_observation, snr_to_noise_variance, Excitation, Observation};
use crate::transition::{
    build_invariant_matrix, fill_identity_rows, overlap_check, separate_overlaps, tracks_from_images, ReflectionTrack,
    TransitionMatrix,
};

pub use config::ExperimentConfig;
pub use io::RirSet;

/// Lower clamp of the misalignment, reached when the estimate is exact.
pub const MISALIGNMENT_FLOOR_DB: f64 = -120.0;

/// `20 log10(|h_hat - h| / |h|)`, clamped below at
/// [`MISALIGNMENT_FLOOR_DB`].
pub fn misalignment(h_hat: &[f64], h_true: &[f64]) -> Result<f64> {
    check_len(h_true.len(), h_hat.len())?;
    let reference = norm2(h_true);
    if reference == 0.0 {
        return Err(Error::Domain("ground-truth RIR is zero".into()));
    }
    let err = h_hat
        .iter()
        .zip(h_true)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if err == 0.0 {
        return Ok(MISALIGNMENT_FLOOR_DB);
    }
    Ok((20.0 * (err / reference).log10()).max(MISALIGNMENT_FLOOR_DB))
}

/// Number of locations on a path of `length` metres when the microphone
/// advances `omega * velocity / fs` between them.
pub fn derive_num_locations(length: f64, velocity: f64, fs: f64, omega: usize) -> Result<usize> {
    if !(length >= 0.0 && velocity > 0.0 && fs > 0.0 && omega >= 1) {
        return Err(Error::Domain(format!(
            "invalid trajectory parameters: length {length}, velocity {velocity}, fs {fs}, omega {omega}"
        )));
    }
    let step = omega as f64 * velocity / fs;
    Ok(((length / step) * (1.0 + 1e-12)).floor() as usize + 1)
}

/// Mean over the middle 80% of the locations.
pub fn interior_mean(values: &[f64]) -> f64 {
    let cut = values.len() / 10;
    let mid = &values[cut..values.len() - cut];
    if mid.is_empty() {
        return f64::NAN;
    }
    mid.iter().sum::<f64>() / mid.len() as f64
}

/// Room, images and the sampled trajectory of one parameter point.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub room: Room,
    /// Images up to the simulated order.
    pub images: Vec<ImageSource>,
    pub trajectory: Trajectory,
    pub omega: usize,
    /// Distance between neighbouring locations.
    pub step: f64,
    pub fs: f64,
    pub taps: usize,
    pub eps: f64,
}

impl Scenario {
    pub fn new(cfg: &ExperimentConfig, omega: usize, max_order: u32) -> Result<Self> {
        cfg.validate()?;
        let room = Room::new(cfg.room_dims(), cfg.wall_reflection, cfg.speed_of_sound)?;
        let images = enumerate_image_sources(&room, cfg.source_position(), max_order)?;
        let start = cfg.start();
        if !room.contains(start) || !room.contains(Vec3(cfg.trajectory_end)) {
            return Err(Error::Config("trajectory must lie inside the room".into()));
        }
        let end = cfg.scaled_end();
        let length = start.distance(end);
        let num = derive_num_locations(length, cfg.mic_velocity, cfg.fs, omega)?;
        if num < 2 {
            return Err(Error::Config(format!(
                "trajectory of {length} m is shorter than one spatial step"
            )));
        }
        let step = omega as f64 * cfg.mic_velocity / cfg.fs;
        let dir = (end - start) * (1.0 / length);
        let last = start + dir * ((num - 1) as f64 * step);
        let trajectory = Trajectory::new(start, last, num)?;
        let scenario = Self {
            room,
            images,
            trajectory,
            omega,
            step,
            fs: cfg.fs,
            taps: cfg.taps,
            eps: cfg.eps(),
        };
        scenario.check_window()?;
        Ok(scenario)
    }

    /// TOAs peak at an endpoint of a straight path, so both ends suffice.
    fn check_window(&self) -> Result<()> {
        let c = self.room.speed_of_sound();
        let ends = [self.trajectory.start(), self.trajectory.end()];
        for img in &self.images {
            for p in ends {
                let n = toa(img, p, c)? * self.fs;
                if n > (self.taps - 1) as f64 {
                    return Err(Error::Config(format!(
                        "an order-{} arrival lands at sample {n:.1}, beyond the {}-tap window",
                        img.order, self.taps
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_locations(&self) -> usize {
        self.trajectory.num_locations()
    }

    pub fn ts(&self) -> f64 {
        1.0 / self.fs
    }

    /// Distance of location `l` from the trajectory start.
    pub fn position_m(&self, l: usize) -> f64 {
        l as f64 * self.step
    }

    pub fn rir(&self, l: usize) -> Result<Vec<f64>> {
        let p = self.trajectory.position(l)?;
        Ok(synthesize_rir(&self.images, p, self.room.speed_of_sound(), self.fs, self.taps, l)?.samples)
    }

    pub fn rir_set(&self) -> Result<RirSet> {
        let rirs = (0..self.num_locations())
            .map(|l| self.rir(l))
            .collect::<Result<Vec<_>>>()?;
        RirSet::new(self.fs, self.taps, rirs)
    }

    fn images_up_to(&self, order: u32) -> Vec<ImageSource> {
        self.images.iter().filter(|i| i.order <= order).cloned().collect()
    }

    /// Whether the source-side intervals of every simulated image are
    /// pairwise disjoint.
    pub fn overlap_passed(&self) -> Result<bool> {
        let tracks = tracks_from_images(&self.images, &self.trajectory, self.room.speed_of_sound())?;
        Ok(overlap_check(&tracks, self.eps, self.num_locations()).passed())
    }

    /// Tracks of the exact first-order TOAs, with overlapping intervals
    /// split at their midpoint.
    pub fn analytical_tracks(&self) -> Result<Vec<ReflectionTrack>> {
        let images = self.images_up_to(1);
        let tracks = tracks_from_images(&images, &self.trajectory, self.room.speed_of_sound())?;
        let report = overlap_check(&tracks, self.eps, self.num_locations());
        if report.passed() {
            return Ok(tracks);
        }
        info!(
            "first-order intervals overlap for pairs {:?}; splitting at midpoints",
            report.pairs
        );
        Ok(separate_overlaps(&tracks, self.eps, self.ts(), self.num_locations()))
    }

    /// Location-invariant matrix from the exact first-order TOAs.
    pub fn analytical_matrix(&self, fill_identity: bool) -> Result<TransitionMatrix> {
        let tracks = self.analytical_tracks()?;
        let a = build_invariant_matrix(&tracks, self.eps, self.ts(), self.taps, self.num_locations());
        Ok(if fill_identity { fill_identity_rows(&a) } else { a })
    }

    pub fn dtw(&self, opts: DtwOptions) -> Result<DtwEstimate> {
        let h0 = self.rir(0)?;
        let h_end = self.rir(self.num_locations() - 1)?;
        dtw::estimate(&h0, &h_end, self.num_locations(), self.eps, self.ts(), opts)
    }

    /// Excitation long enough for the last location.
    pub fn excitation(&self, variance: f64, seed: u64) -> Excitation {
        Excitation::white((self.num_locations() - 1) * self.omega + 1, variance, seed)
    }

    pub fn observation(&self, x: &Excitation, snr_db: Option<f64>, seed: u64) -> Result<Observation> {
        let clean = clean_observation(x, self.num_locations(), self.omega, self.taps, |l| self.rir(l))?;
        let var = match snr_db {
            Some(snr) => snr_to_noise_variance(snr, &clean)?,
            None => 0.0,
        };
        Ok(add_noise(clean, self.omega, var, seed))
    }
}

/// One experiment parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSpec {
    /// File stem of the outputs, e.g. `exp2_snr-6`.
    pub name: String,
    pub omega: usize,
    pub snr_db: Option<f64>,
    pub max_order: u32,
    pub taps: usize,
    /// Fill empty rows of the analytical matrix used by KF-A.
    pub fill_identity: bool,
}

/// Per-location misalignment of one algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct MisalignmentCurve {
    pub algorithm: Algorithm,
    pub values: Vec<f64>,
}

impl MisalignmentCurve {
    pub fn interior_mean(&self) -> f64 {
        interior_mean(&self.values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub spec: PointSpec,
    pub num_locations: usize,
    pub positions: Vec<f64>,
    pub curves: Vec<MisalignmentCurve>,
    /// Overlap check over all simulated images.
    pub overlap_passed: bool,
    pub seed: u64,
    pub seeds: usize,
    pub config_hash: String,
}

impl PointResult {
    pub fn curve(&self, a: Algorithm) -> Option<&MisalignmentCurve> {
        self.curves.iter().find(|c| c.algorithm == a)
    }

    pub fn interior_mean(&self, a: Algorithm) -> Option<f64> {
        self.curve(a).map(MisalignmentCurve::interior_mean)
    }
}

fn format_param(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{}", v as i64)
    } else {
        v.to_string()
    }
}

/// Parameter points of experiment `id`.
pub fn experiment_points(id: u8, cfg: &ExperimentConfig) -> Result<Vec<PointSpec>> {
    let base = |name: String| PointSpec {
        name,
        omega: cfg.omega,
        snr_db: cfg.snr_db,
        max_order: cfg.max_order.min(1),
        taps: cfg.taps,
        fill_identity: false,
    };
    match id {
        1 => Ok(vec![base("exp1".into())]),
        2 => {
            if cfg.snr_list.is_empty() {
                return Err(Error::Config("experiment 2 needs a non-empty snr_list".into()));
            }
            Ok(cfg
                .snr_list
                .iter()
                .map(|&snr| PointSpec {
                    snr_db: Some(snr),
                    ..base(format!("exp2_snr{}", format_param(snr)))
                })
                .collect())
        }
        3 => {
            if cfg.omega_list.is_empty() {
                return Err(Error::Config("experiment 3 needs a non-empty omega_list".into()));
            }
            Ok(cfg
                .omega_list
                .iter()
                .map(|&omega| PointSpec {
                    omega,
                    ..base(format!("exp3_omega{omega}"))
                })
                .collect())
        }
        4 => Ok(vec![PointSpec {
            max_order: 2,
            taps: cfg.exp4_taps,
            fill_identity: true,
            ..base("exp4".into())
        }]),
        other => Err(Error::Config(format!(
            "unknown experiment {other}; expected 1, 2, 3 or 4"
        ))),
    }
}

struct Matrices {
    analytical: Option<TransitionMatrix>,
    interpolation: Option<TransitionMatrix>,
    dtw: Option<TransitionMatrix>,
}

impl Matrices {
    fn for_algorithm(&self, a: Algorithm) -> Option<&TransitionMatrix> {
        match a {
            Algorithm::LiA => self.interpolation.as_ref(),
            Algorithm::KfAlpha => None,
            Algorithm::KfA => self.analytical.as_ref(),
            Algorithm::KfDtw => self.dtw.as_ref(),
        }
    }
}

type RunOutput = (Vec<f64>, Vec<(usize, Vec<f64>)>);

#[allow(clippy::too_many_arguments)]
fn run_one(
    scenario: &Scenario,
    algorithm: Algorithm,
    matrix: Option<&TransitionMatrix>,
    obs: &Observation,
    x: &Excitation,
    cfg: &ExperimentConfig,
    h0: &[f64],
    snapshot_every: usize,
) -> Result<RunOutput> {
    let kcfg = cfg.kalman(obs.noise_variance);
    let mut curve = Vec::with_capacity(obs.len());
    let mut snaps = Vec::new();
    let last = obs.len() - 1;
    run_filter(algorithm, matrix, obs, x, &kcfg, h0, |l, h| {
        let truth = if l == 0 { h0.to_vec() } else { scenario.rir(l)? };
        curve.push(misalignment(h, &truth)?);
        if snapshot_every > 0 && (l % snapshot_every == 0 || l == last) {
            snaps.push((l, h.to_vec()));
        }
        Ok(())
    })?;
    Ok((curve, snaps))
}

/// Simulates one parameter point, runs every configured algorithm and, when
/// `out` is given, writes `<name>.csv` and `<name>.meta.txt` there.
pub fn run_point(cfg: &ExperimentConfig, spec: &PointSpec, out: Option<&Path>) -> Result<PointResult> {
    let algorithms = cfg.algorithm_list()?;
    let point_cfg = ExperimentConfig {
        taps: spec.taps,
        ..cfg.clone()
    };
    let scenario = Scenario::new(&point_cfg, spec.omega, spec.max_order)?;
    let num = scenario.num_locations();
    info!(
        "{}: L = {num}, omega = {}, {} images",
        spec.name,
        spec.omega,
        scenario.images.len()
    );

    let overlap_passed = scenario.overlap_passed()?;
    if !overlap_passed && spec.max_order > 1 {
        warn!(
            "{}: reflection intervals overlap once order-{} images are included; the analytical matrix uses first-order TOAs only",
            spec.name, spec.max_order
        );
    }

    let wants = |a: Algorithm| algorithms.contains(&a);
    let analytical = if wants(Algorithm::KfA) || wants(Algorithm::LiA) {
        Some(scenario.analytical_matrix(spec.fill_identity)?)
    } else {
        None
    };
    let interpolation = if !wants(Algorithm::LiA) {
        None
    } else if cfg.li_fill_identity && !spec.fill_identity {
        Some(scenario.analytical_matrix(true)?)
    } else {
        analytical.clone()
    };
    let dtw = if wants(Algorithm::KfDtw) {
        let est = scenario.dtw(DtwOptions {
            min_segment_len: cfg.dtw_min_segment_len,
            rel_threshold: cfg.dtw_rel_threshold,
            local_cost: cfg.dtw_cost.parse()?,
        })?;
        info!("{}: DTW found {} reflection tracks", spec.name, est.tracks.len());
        Some(est.matrix)
    } else {
        None
    };
    let matrices = Matrices {
        analytical,
        interpolation,
        dtw,
    };

    let h0 = scenario.rir(0)?;
    let mut sums = vec![vec![0.0; num]; algorithms.len()];
    let mut snapshots: Vec<Vec<(usize, Vec<f64>)>> = vec![Vec::new(); algorithms.len()];
    let mut noise_variances = Vec::new();
    for k in 0..cfg.seeds {
        let seed = cfg.seed.wrapping_add(k as u64);
        let x = scenario.excitation(cfg.excitation_variance(), seed);
        let obs = scenario.observation(&x, spec.snr_db, seed)?;
        noise_variances.push(obs.noise_variance);
        let snap_every = if k == 0 { cfg.snapshot_every } else { 0 };
        let results: Vec<Result<RunOutput>> = std::thread::scope(|s| {
            let handles: Vec<_> = algorithms
                .iter()
                .map(|&a| {
                    let (scenario, matrices, obs, x, h0) = (&scenario, &matrices, &obs, &x, &h0);
                    s.spawn(move || run_one(scenario, a, matrices.for_algorithm(a), obs, x, cfg, h0, snap_every))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("filter thread panicked"))
                .collect()
        });
        for (i, r) in results.into_iter().enumerate() {
            let (curve, snaps) = r?;
            for (acc, v) in sums[i].iter_mut().zip(&curve) {
                *acc += v;
            }
            if k == 0 {
                snapshots[i] = snaps;
            }
        }
    }
    let scale = 1.0 / cfg.seeds as f64;
    let curves: Vec<MisalignmentCurve> = algorithms
        .iter()
        .zip(sums)
        .map(|(&algorithm, s)| MisalignmentCurve {
            algorithm,
            values: if cfg.seeds == 1 {
                s
            } else {
                s.into_iter().map(|v| v * scale).collect()
            },
        })
        .collect();
    let positions: Vec<f64> = (0..num).map(|l| scenario.position_m(l)).collect();
    let result = PointResult {
        spec: spec.clone(),
        num_locations: num,
        positions,
        curves,
        overlap_passed,
        seed: cfg.seed,
        seeds: cfg.seeds,
        config_hash: cfg.hash_hex(),
    };

    if let Some(dir) = out {
        let names: Vec<&str> = result.curves.iter().map(|c| c.algorithm.name()).collect();
        let series: Vec<Vec<f64>> = result.curves.iter().map(|c| c.values.clone()).collect();
        io::write_curves_csv(
            &dir.join(format!("{}.csv", spec.name)),
            &result.positions,
            &names,
            &series,
        )?;
        let meta = metadata(cfg, &result, &scenario, &noise_variances);
        io::write_atomic(&dir.join(format!("{}.meta.txt", spec.name)), meta.as_bytes())?;
        for (a, snaps) in algorithms.iter().zip(&snapshots) {
            if !snaps.is_empty() {
                io::write_snapshots_csv(&dir.join(format!("{}_{}_snapshots.csv", spec.name, a.name())), snaps)?;
            }
        }
    }
    Ok(result)
}

fn metadata(cfg: &ExperimentConfig, r: &PointResult, scenario: &Scenario, noise_variances: &[f64]) -> String {
    let mut s = String::new();
    s.push_str(&format!("tvrir {}\n", env!("CARGO_PKG_VERSION")));
    s.push_str(&format!("point = {}\n", r.spec.name));
    s.push_str(&format!("seed = {}\nseeds = {}\n", r.seed, r.seeds));
    s.push_str(&format!("omega = {}\n", r.spec.omega));
    s.push_str(&format!(
        "snr_db = {}\n",
        r.spec.snr_db.map_or_else(|| "none".to_string(), |v| v.to_string())
    ));
    s.push_str(&format!("max_order = {}\n", r.spec.max_order));
    s.push_str(&format!("images = {}\n", scenario.images.len()));
    s.push_str(&format!("num_locations = {}\n", r.num_locations));
    s.push_str(&format!("step_m = {}\n", scenario.step));
    let nv: Vec<String> = noise_variances.iter().map(|v| v.to_string()).collect();
    s.push_str(&format!("noise_variance = [{}]\n", nv.join(", ")));
    s.push_str(&format!(
        "overlap_check = {}\n",
        if r.overlap_passed { "passed" } else { "failed" }
    ));
    s.push_str(&format!("analytical_fill_identity = {}\n", r.spec.fill_identity));
    for c in &r.curves {
        s.push_str(&format!("interior_mean_db.{} = {}\n", c.algorithm, c.interior_mean()));
    }
    s.push_str(&format!("config_hash = {}\n\n[config]\n", r.config_hash));
    s.push_str(&cfg.to_toml_string());
    s
}

/// Runs every parameter point of experiment `id`, writing results to `out`.
pub fn run_experiment(id: u8, cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PointResult>> {
    cfg.validate()?;
    experiment_points(id, cfg)?
        .iter()
        .map(|p| run_point(cfg, p, Some(out)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn misalignment_cases() {
        let h = vec![0.5, -1.0, 0.25];
        assert_eq!(misalignment(&h, &h).unwrap(), MISALIGNMENT_FLOOR_DB);
        assert_eq!(misalignment(&[0.0; 3], &h).unwrap(), 0.0);
        let twice: Vec<f64> = h.iter().map(|v| 2.0 * v).collect();
        assert!(misalignment(&twice, &h).unwrap().abs() < 1e-12);
        let tenth: Vec<f64> = h.iter().map(|v| 1.1 * v).collect();
        assert!((misalignment(&tenth, &h).unwrap() + 20.0).abs() < 1e-9);
        assert!(matches!(misalignment(&h, &[0.0; 3]), Err(Error::Domain(_))));
        assert!(matches!(misalignment(&h, &[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn location_counts() {
        assert_eq!(derive_num_locations(0.7372, 0.25, 16000.0, 1).unwrap(), 47181);
        assert_eq!(derive_num_locations(0.7372, 0.25, 16000.0, 32).unwrap(), 1475);
        let step = 8.0 * 0.25 / 16000.0;
        assert_eq!(derive_num_locations(step, 0.25, 16000.0, 8).unwrap(), 2);
        assert_eq!(derive_num_locations(0.0, 0.25, 16000.0, 1).unwrap(), 1);
        assert!(derive_num_locations(1.0, 0.0, 16000.0, 1).is_err());
    }

    #[test]
    fn interior_mean_drops_the_ends() {
        let mut v = vec![100.0; 20];
        for x in &mut v[2..18] {
            *x = -1.0;
        }
        assert_eq!(interior_mean(&v), -1.0);
    }

    #[test]
    fn point_names() {
        let cfg = ExperimentConfig::default();
        let names: Vec<String> = experiment_points(2, &cfg)
            .unwrap()
            .into_iter()
            .map(|p| p.name)
            .collect();
        assert_eq!(names, ["exp2_snr6", "exp2_snr0", "exp2_snr-6"]);
        let p3 = experiment_points(3, &cfg).unwrap();
        assert_eq!(p3.iter().map(|p| p.omega).collect::<Vec<_>>(), [2, 8, 32]);
        let p4 = &experiment_points(4, &cfg).unwrap()[0];
        assert_eq!((p4.max_order, p4.fill_identity), (2, true));
        assert!(experiment_points(5, &cfg).is_err());
    }

    #[test]
    fn default_geometry_fits_the_window() {
        let cfg = ExperimentConfig::default();
        assert!(matches!(Scenario::new(&cfg, 32, 2), Err(Error::Config(_))));
        let wide = ExperimentConfig {
            taps: cfg.exp4_taps,
            ..cfg
        };
        let s = Scenario::new(&wide, 32, 2).unwrap();
        assert_eq!(s.images.len(), 25);
        assert_eq!(s.num_locations(), 1475);
        assert!((s.trajectory.spacing() - s.step).abs() < 1e-12);
    }

    #[test]
    fn short_window_is_a_config_error() {
        let cfg = ExperimentConfig {
            taps: 40,
            ..ExperimentConfig::default()
        };
        assert!(matches!(Scenario::new(&cfg, 32, 1), Err(Error::Config(_))));
    }

    #[test]
    fn tiny_run_writes_one_row_per_location() {
        let cfg = ExperimentConfig {
            scale: 0.01,
            omega: 4,
            ..ExperimentConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let r = run_experiment(1, &cfg, dir.path()).unwrap();
        let (names, series) = io::read_curves_csv(&dir.path().join("exp1.csv")).unwrap();
        assert_eq!(names, ["LI-A", "KF-alpha", "KF-A", "KF-A_dtw"]);
        assert!(series.iter().all(|s| s.len() == r[0].num_locations));
        assert!(series.iter().all(|s| s[0] == MISALIGNMENT_FLOOR_DB));
        assert!(dir.path().join("exp1.meta.txt").exists());
    }
}
