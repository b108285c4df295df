//! State-space recursion over trajectory locations.
//!
//! State: the `N`-tap RIR. State equation `h(l) = A h(l-1) + w(l)` with
//! `Q = sigma_w^2 I`; observation `y(l) = x(l Omega)^T h(l) + v(l)` with
//! variance `R`.

use std::fmt;
use std::str::FromStr;

use log::warn;

use crate::error::{check_len, Error, Result};
use crate::linalg::{axpy, dot, SquareMatrix};
use crate::signal::{Excitation, Observation};
use crate::transition::TransitionMatrix;

pub const DEFAULT_INITIAL_COVARIANCE: f64 = 1e-6;

/// The four compared estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    /// Prediction only with the analytical matrix: `h(l) = A^l h(0)`.
    LiA,
    /// Full recursion with a scalar transition factor.
    KfAlpha,
    /// Full recursion with the analytical matrix.
    KfA,
    /// Full recursion with the DTW-estimated matrix.
    KfDtw,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::LiA, Algorithm::KfAlpha, Algorithm::KfA, Algorithm::KfDtw];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::LiA => "LI-A",
            Algorithm::KfAlpha => "KF-alpha",
            Algorithm::KfA => "KF-A",
            Algorithm::KfDtw => "KF-A_dtw",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "li-a" | "lia" => Ok(Algorithm::LiA),
            "kf-alpha" | "kf-α" => Ok(Algorithm::KfAlpha),
            "kf-a" => Ok(Algorithm::KfA),
            "kf-a-dtw" | "kf-dtw" => Ok(Algorithm::KfDtw),
            other => Err(Error::Config(format!(
                "unknown algorithm {other:?} (expected LI-A, KF-alpha, KF-A or KF-A_dtw)"
            ))),
        }
    }
}

/// Noise levels and initial covariance of the recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanConfig {
    /// `sigma_w^2`, `Q = sigma_w^2 I`.
    pub process_noise: f64,
    /// `R`, the measurement noise variance.
    pub measurement_noise: f64,
    /// `P+(0) = initial_covariance * I`.
    pub initial_covariance: f64,
    /// Transition factor of the scalar model.
    pub alpha: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self {
            process_noise: 1e-3,
            measurement_noise: 0.0,
            initial_covariance: DEFAULT_INITIAL_COVARIANCE,
            alpha: 1.0,
        }
    }
}

impl KalmanConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("process noise", self.process_noise),
            ("measurement noise", self.measurement_noise),
            ("initial covariance", self.initial_covariance),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// How the prior is propagated.
#[derive(Debug, Clone, Copy)]
pub enum Transition<'a> {
    Matrix(&'a TransitionMatrix),
    Scalar(f64),
}

/// Estimate and error covariance after processing location `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub h_hat: Vec<f64>,
    pub p: SquareMatrix,
    pub l: usize,
}

/// `h_hat = h0`, `P = p0_scale I`, `l = 0`.
pub fn init(h0: &[f64], p0_scale: f64) -> KalmanState {
    KalmanState {
        h_hat: h0.to_vec(),
        p: SquareMatrix::scaled_identity(h0.len(), p0_scale),
        l: 0,
    }
}

/// Prediction step: `h = A h+`, `P = A P+ A^T + Q`.
pub fn predict(state: &KalmanState, transition: Transition<'_>, q: f64) -> KalmanState {
    let mut f = Filter::new(state.clone());
    f.predict(transition, q);
    f.state
}

/// Update step with regressor `x` and scalar observation `y`.
pub fn update(prior: &KalmanState, x: &[f64], y: f64, r: f64) -> Result<KalmanState> {
    let mut f = Filter::new(prior.clone());
    f.update(x, y, r)?;
    Ok(f.state)
}

/// In-place filter with reusable scratch space.
#[derive(Debug, Clone)]
pub struct Filter {
    state: KalmanState,
    scratch: SquareMatrix,
    swap: SquareMatrix,
    px: Vec<f64>,
}

impl Filter {
    pub fn new(state: KalmanState) -> Self {
        let n = state.h_hat.len();
        Self {
            state,
            scratch: SquareMatrix::zeros(n),
            swap: SquareMatrix::zeros(n),
            px: vec![0.0; n],
        }
    }

    pub fn state(&self) -> &KalmanState {
        &self.state
    }

    pub fn into_state(self) -> KalmanState {
        self.state
    }

    pub fn predict(&mut self, transition: Transition<'_>, q: f64) {
        match transition {
            Transition::Matrix(a) => {
                assert_eq!(a.dim(), self.state.h_hat.len(), "transition matrix size");
                self.state.h_hat = a.apply(&self.state.h_hat);
                a.sandwich(&self.state.p, &mut self.swap, &mut self.scratch);
                std::mem::swap(&mut self.state.p, &mut self.swap);
            }
            Transition::Scalar(alpha) => {
                if alpha != 1.0 {
                    self.state.h_hat.iter_mut().for_each(|v| *v *= alpha);
                    let a2 = alpha * alpha;
                    for i in 0..self.state.p.dim() {
                        self.state.p.row_mut(i).iter_mut().for_each(|v| *v *= a2);
                    }
                }
            }
        }
        self.state.p.add_diagonal(q);
        self.state.l += 1;
    }

    /// Returns the normalised innovation `e^2 / (x^T P x + R)`, or `None`
    /// when `x = 0` carries no information.
    pub fn update(&mut self, x: &[f64], y: f64, r: f64) -> Result<Option<f64>> {
        let n = self.state.h_hat.len();
        check_len(n, x.len())?;
        if x.iter().all(|v| *v == 0.0) {
            return Ok(None);
        }
        let p = &mut self.state.p;
        for i in 0..n {
            self.px[i] = dot(p.row(i), x);
        }
        let s = dot(x, &self.px) + r;
        if !(s > 0.0) {
            return Err(Error::DegenerateGain);
        }
        let innovation = y - dot(x, &self.state.h_hat);
        let g = innovation / s;
        axpy(g, &self.px, &mut self.state.h_hat);
        for i in 0..n {
            let c = -self.px[i] / s;
            axpy(c, &self.px, p.row_mut(i));
        }
        p.symmetrize();
        Ok(Some(innovation * innovation / s))
    }
}

/// Runs one algorithm over every location and hands `(l, h_hat+(l))` to
/// `visit`, starting with the initial state at `l = 0`.
///
/// `matrix` is required for every algorithm except KF-alpha.
pub fn run_filter<F>(
    algorithm: Algorithm,
    matrix: Option<&TransitionMatrix>,
    obs: &Observation,
    x: &Excitation,
    cfg: &KalmanConfig,
    h0: &[f64],
    mut visit: F,
) -> Result<()>
where
    F: FnMut(usize, &[f64]) -> Result<()>,
{
    cfg.validate()?;
    let n = h0.len();
    let num_locations = obs.len();
    if let Some(a) = matrix {
        check_len(n, a.dim())?;
    }
    let need_matrix = || matrix.ok_or_else(|| Error::Config(format!("{algorithm} needs a transition matrix")));
    visit(0, h0)?;
    match algorithm {
        Algorithm::LiA => {
            let a = need_matrix()?;
            let mut h = h0.to_vec();
            for l in 1..num_locations {
                h = a.apply(&h);
                visit(l, &h)?;
            }
        }
        Algorithm::KfAlpha | Algorithm::KfA | Algorithm::KfDtw => {
            let transition = match algorithm {
                Algorithm::KfAlpha => Transition::Scalar(cfg.alpha),
                _ => Transition::Matrix(need_matrix()?),
            };
            let mut filter = Filter::new(init(h0, cfg.initial_covariance));
            let mut reg = vec![0.0; n];
            let mut warned = false;
            for l in 1..num_locations {
                filter.predict(transition, cfg.process_noise);
                x.regressor_into(l, obs.omega, &mut reg);
                filter.update(&reg, obs.y[l], cfg.measurement_noise)?;
                let h = &filter.state().h_hat;
                if !warned && h.iter().any(|v| !v.is_finite()) {
                    warn!("{algorithm} diverged at location {l}");
                    warned = true;
                }
                visit(l, h)?;
            }
        }
    }
    Ok(())
}

/// [`run_filter`] collecting every estimate.
pub fn run_filter_collect(
    algorithm: Algorithm,
    matrix: Option<&TransitionMatrix>,
    obs: &Observation,
    x: &Excitation,
    cfg: &KalmanConfig,
    h0: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(obs.len());
    run_filter(algorithm, matrix, obs, x, cfg, h0, |_, h| {
        out.push(h.to_vec());
        Ok(())
    })?;
    Ok(out)
}
