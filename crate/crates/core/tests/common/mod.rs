//! Independent reference computations shared by the integration tests.
//!
//! Nothing here calls into the library's numerical paths; each oracle is a
//! direct, slow evaluation of the quantity it checks.
#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};

use tvrir::linalg::Vec3;
use tvrir::transition::ReflectionTrack;

pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let p = std::f64::consts::PI * x;
        p.sin() / p
    }
}

/// Image positions reachable by at most `max_order` wall mirrorings,
/// found breadth-first. Keyed by the position rounded to 1e-9 m.
pub fn ism_bfs(dims: [f64; 3], src: [f64; 3], max_order: u32) -> BTreeMap<[i64; 3], u32> {
    let key = |p: [f64; 3]| p.map(|v| (v * 1e9).round() as i64);
    let mut seen = BTreeMap::new();
    let mut queue = VecDeque::new();
    seen.insert(key(src), 0);
    queue.push_back((src, 0u32));
    while let Some((p, order)) = queue.pop_front() {
        if order == max_order {
            continue;
        }
        for axis in 0..3 {
            for wall in [0.0, dims[axis]] {
                let mut q = p;
                q[axis] = 2.0 * wall - p[axis];
                if let std::collections::btree_map::Entry::Vacant(slot) = seen.entry(key(q)) {
                    slot.insert(order + 1);
                    queue.push_back((q, order + 1));
                }
            }
        }
    }
    seen
}

/// Arrival time and amplitude `(d / c, g^order / d)` of a point image.
pub fn arrival(image: [f64; 3], order: u32, mic: Vec3, c: f64, g: f64) -> (f64, f64) {
    let d = Vec3(image).distance(mic);
    (d / c, g.powi(order as i32) / d)
}

/// `sum_r a_r sinc(n - tau_r fs)`, evaluated term by term.
pub fn rir(arrivals: &[(f64, f64)], fs: f64, taps: usize) -> Vec<f64> {
    (0..taps)
        .map(|n| arrivals.iter().map(|&(t, a)| a * sinc(n as f64 - t * fs)).sum())
        .collect()
}

/// Half-width of the `n'` window used for the infinite sums below.
pub const SUM_HALF_WIDTH: i64 = 20_000;

/// Neglected cross-reflection term of the location-variant model at
/// location `l`, evaluated for every `n in 0..taps` by explicit summation
/// over `n'`.
///
/// `prev` and `cur` hold `(tau, a)` of each reflection at `l - 1` and `l`;
/// reflection `r` is active at `n` when `|n ts - tau_r(l)| <= eps`.
pub fn cross_term_variant(prev: &[(f64, f64)], cur: &[(f64, f64)], eps: f64, ts: f64, taps: usize) -> Vec<f64> {
    (0..taps)
        .map(|n| {
            let nf = n as f64;
            let mut e = 0.0;
            for (r, (&(tp, ap), &(tc, ac))) in prev.iter().zip(cur).enumerate() {
                if (nf * ts - tc).abs() > eps + 1e-12 * ts {
                    continue;
                }
                let shift = (tc - tp) / ts;
                let gain = ac / ap;
                for (rp, &(tq, aq)) in prev.iter().enumerate() {
                    if rp == r {
                        continue;
                    }
                    e += gain * aq * window_sum(nf - shift, tq / ts);
                }
            }
            e
        })
        .collect()
}

/// Cross term of the location-invariant model at one location: reflection
/// `r` is active at `n` when `n ts` lies in `active[r]`, and the per-step
/// delay is `tdoa[r]`.
pub fn cross_term_invariant(
    prev: &[(f64, f64)],
    active: &[(f64, f64)],
    tdoa: &[f64],
    ts: f64,
    taps: usize,
) -> Vec<f64> {
    (0..taps)
        .map(|n| {
            let nf = n as f64;
            let mut e = 0.0;
            for r in 0..prev.len() {
                let (lo, hi) = active[r];
                if nf * ts < lo - 1e-12 * ts || nf * ts > hi + 1e-12 * ts {
                    continue;
                }
                for (rp, &(tq, aq)) in prev.iter().enumerate() {
                    if rp != r {
                        e += aq * window_sum(nf - tdoa[r] / ts, tq / ts);
                    }
                }
            }
            e
        })
        .collect()
}

/// `sum_{n'} sinc(u - n') sinc(n' - v)` over a wide finite window.
fn window_sum(u: f64, v: f64) -> f64 {
    let c = ((u + v) * 0.5).round() as i64;
    (c - SUM_HALF_WIDTH..=c + SUM_HALF_WIDTH)
        .map(|m| {
            let m = m as f64;
            sinc(u - m) * sinc(m - v)
        })
        .sum()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimum total local cost over every monotone path from `(0, 0)` to
/// `(N-1, N-1)`, by exhaustive enumeration.
pub fn dtw_brute_force(h_end: &[f64], h_start: &[f64], local: impl Fn(f64, f64) -> f64 + Copy) -> f64 {
    fn walk(n: usize, m: usize, a: &[f64], b: &[f64], local: impl Fn(f64, f64) -> f64 + Copy) -> f64 {
        let here = local(a[n], b[m]);
        let last = a.len() - 1;
        if n == last && m == last {
            return here;
        }
        let mut best = f64::INFINITY;
        if n < last && m < last {
            best = best.min(walk(n + 1, m + 1, a, b, local));
        }
        if n < last {
            best = best.min(walk(n + 1, m, a, b, local));
        }
        if m < last {
            best = best.min(walk(n, m + 1, a, b, local));
        }
        here + best
    }
    walk(0, 0, h_end, h_start, local)
}

pub type Dense = Vec<Vec<f64>>;

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let n = a.len();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            for j in 0..n {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

pub fn max_diff(a: &Dense, b: &Dense) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

pub fn dense_of(a: &tvrir::transition::TransitionMatrix) -> Dense {
    (0..a.dim()).map(|i| a.dense().row(i).to_vec()).collect()
}

/// Sample rate, step, tracks and impulse heights of the small hand-made
/// problem: three reflections over three locations at integer sample
/// positions, one moving later, one earlier and one static.
pub const TOY_TS: f64 = 1.0;
pub const TOY_EPS: f64 = 1.5;
pub const TOY_TAPS: usize = 20;
pub const TOY_START: [f64; 3] = [3.0, 10.0, 15.0];
pub const TOY_END: [f64; 3] = [5.0, 8.0, 15.0];
pub const TOY_GAINS: [f64; 3] = [1.0, -0.7, 0.5];

pub fn toy_tracks(num_locations: usize) -> Vec<ReflectionTrack> {
    TOY_START
        .iter()
        .zip(TOY_END)
        .map(|(&a, b)| ReflectionTrack::from_endpoints(a, b, num_locations))
        .collect()
}

/// Impulse train with the toy reflections at location `l` of 3.
pub fn toy_rir(l: usize) -> Vec<f64> {
    let mut h = vec![0.0; TOY_TAPS];
    for r in 0..3 {
        let pos = TOY_START[r] + (TOY_END[r] - TOY_START[r]) * l as f64 / 2.0;
        h[pos as usize] += TOY_GAINS[r];
    }
    h
}
