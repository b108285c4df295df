//! Estimating the location-invariant transition matrix from the RIRs at the
//! two trajectory endpoints with dynamic time warping.
//!
//! Rows of the cost matrix index the end-point RIR (`n`), columns the
//! start-point RIR (`n'`). A reflection whose arrival moves by `d` samples
//! over the trajectory shows up as a diagonal run of the warp path at offset
//! `n - n' = d`.

use log::warn;

use crate::error::{check_len, Result};
use crate::linalg::SquareMatrix;
use crate::transition::{
    build_invariant_matrix, overlap_check, separate_overlaps, ReflectionTrack, ToaInterval, TransitionMatrix,
};

/// Accumulated alignment cost, `(N+1) x (N+1)` with an initialisation row
/// and column. Entry `(n+1, n'+1)` holds the cost of the best path ending at
/// sample pair `(n, n')`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    taps: usize,
    d: Vec<f64>,
}

impl CostMatrix {
    pub fn taps(&self) -> usize {
        self.taps
    }

    /// Raw entry including the initialisation row/column (index 0).
    pub fn raw(&self, i: usize, j: usize) -> f64 {
        self.d[i * (self.taps + 1) + j]
    }

    /// Accumulated cost at sample pair `(n, n')`.
    pub fn at(&self, n: usize, n_prime: usize) -> f64 {
        self.raw(n + 1, n_prime + 1)
    }

    /// Cost at the terminal corner `(N-1, N-1)`.
    pub fn total(&self) -> f64 {
        self.at(self.taps - 1, self.taps - 1)
    }
}

/// Local cost between two samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LocalCost {
    /// `|a - b|`
    Absolute,
    /// `(a - b)^2`; penalises peak mismatches over sinc-tail mismatches.
    #[default]
    Squared,
}

impl LocalCost {
    #[inline]
    pub fn eval(self, a: f64, b: f64) -> f64 {
        match self {
            LocalCost::Absolute => (a - b).abs(),
            LocalCost::Squared => (a - b) * (a - b),
        }
    }
}

impl std::str::FromStr for LocalCost {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "absolute" => Ok(LocalCost::Absolute),
            "squared" => Ok(LocalCost::Squared),
            other => Err(crate::Error::Config(format!(
                "unknown DTW cost {other:?} (expected absolute or squared)"
            ))),
        }
    }
}

/// Builds the accumulated cost with local cost `|h_end(n) - h_start(n')|`.
pub fn accumulated_cost(h_end: &[f64], h_start: &[f64]) -> Result<CostMatrix> {
    accumulated_cost_with(h_end, h_start, LocalCost::Absolute)
}

pub fn accumulated_cost_with(h_end: &[f64], h_start: &[f64], local: LocalCost) -> Result<CostMatrix> {
    check_len(h_start.len(), h_end.len())?;
    let taps = h_end.len();
    let w = taps + 1;
    let mut d = vec![f64::INFINITY; w * w];
    d[0] = 0.0;
    for n in 0..taps {
        for m in 0..taps {
            let cost = local.eval(h_end[n], h_start[m]);
            let best = d[n * w + m].min(d[n * w + m + 1]).min(d[(n + 1) * w + m]);
            d[(n + 1) * w + m + 1] = cost + best;
        }
    }
    Ok(CostMatrix { taps, d })
}

/// Monotone alignment from `(0, 0)` to `(N-1, N-1)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WarpPath {
    pub pairs: Vec<(usize, usize)>,
}

/// Greedy backtrack from the terminal corner. Ties prefer the diagonal
/// predecessor, then the vertical one (`n - 1`), then the horizontal one.
pub fn warp_path(cost: &CostMatrix) -> WarpPath {
    let mut n = cost.taps() - 1;
    let mut m = cost.taps() - 1;
    let mut pairs = vec![(n, m)];
    while n > 0 || m > 0 {
        // raw indices of the current cell are (n + 1, m + 1)
        let diag = cost.raw(n, m);
        let up = cost.raw(n, m + 1);
        let left = cost.raw(n + 1, m);
        let (dn, dm) = if diag <= up && diag <= left {
            (1, 1)
        } else if up <= left {
            (1, 0)
        } else {
            (0, 1)
        };
        n -= dn;
        m -= dm;
        pairs.push((n, m));
    }
    pairs.reverse();
    WarpPath { pairs }
}

/// 0/1 matrix with ones at the warp-path pairs.
pub fn warp_matrix(path: &WarpPath, taps: usize) -> SquareMatrix {
    let mut w = SquareMatrix::zeros(taps);
    for &(n, m) in &path.pairs {
        w[(n, m)] = 1.0;
    }
    w
}

/// A run of consecutive diagonal warp steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiagonalSegment {
    pub start: (usize, usize),
    pub end: (usize, usize),
    pub offset: i64,
    pub length: usize,
}

impl DiagonalSegment {
    fn from_points(start: (usize, usize), end: (usize, usize)) -> Self {
        Self {
            start,
            end,
            offset: start.0 as i64 - start.1 as i64,
            length: end.0 - start.0 + 1,
        }
    }

    pub fn points(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.length).map(move |i| (self.start.0 + i, self.start.1 + i))
    }
}

/// Maximal diagonal runs of the path with at least `min_len` points.
pub fn extract_segments(path: &WarpPath, min_len: usize) -> Vec<DiagonalSegment> {
    let mut out = Vec::new();
    let pts = &path.pairs;
    if pts.is_empty() {
        return out;
    }
    let mut run_start = 0;
    for i in 1..=pts.len() {
        let diagonal = i < pts.len() && pts[i].0 == pts[i - 1].0 + 1 && pts[i].1 == pts[i - 1].1 + 1;
        if !diagonal {
            let seg = DiagonalSegment::from_points(pts[run_start], pts[i - 1]);
            if seg.length >= min_len.max(1) {
                out.push(seg);
            }
            run_start = i;
        }
    }
    out
}

/// Narrows each diagonal run to the reflections it actually aligns.
///
/// Along a run the salience of a pair is `min(|h_end(n)|, |h_start(n')|)`.
/// Pairs above `rel_threshold` times the largest salience are grouped into
/// clusters (gaps wider than `2 half_width` split clusters); each cluster
/// yields a segment of `2 half_width + 1` points centred on its most salient
/// pair. Candidates whose centres lie within `2 half_width` of a more salient
/// candidate on both axes are dropped.
pub fn locate_reflections(
    runs: &[DiagonalSegment],
    h_end: &[f64],
    h_start: &[f64],
    half_width: usize,
    rel_threshold: f64,
) -> Vec<DiagonalSegment> {
    let taps = h_end.len();
    let salience = |(n, m): (usize, usize)| h_end[n].abs().min(h_start[m].abs());
    let peak = runs.iter().flat_map(|r| r.points()).map(salience).fold(0.0, f64::max);
    if peak == 0.0 {
        return Vec::new();
    }
    let floor = rel_threshold * peak;

    // (salience, centre)
    let mut candidates: Vec<(f64, (usize, usize), i64)> = Vec::new();
    for run in runs {
        let mut best: Option<(f64, (usize, usize))> = None;
        let mut last_hit: Option<usize> = None;
        for (i, p) in run.points().enumerate() {
            let s = salience(p);
            if s < floor {
                continue;
            }
            if let Some(prev) = last_hit {
                if i - prev > 2 * half_width {
                    if let Some((bs, bp)) = best.take() {
                        candidates.push((bs, bp, run.offset));
                    }
                }
            }
            last_hit = Some(i);
            if best.is_none_or(|(bs, _)| s > bs) {
                best = Some((s, p));
            }
        }
        if let Some((bs, bp)) = best {
            candidates.push((bs, bp, run.offset));
        }
    }

    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let hw = half_width as i64;
    let mut kept: Vec<((usize, usize), i64)> = Vec::new();
    for (_, c, offset) in candidates {
        let clash = kept
            .iter()
            .any(|(k, _)| (c.0 as i64 - k.0 as i64).abs() <= 2 * hw && (c.1 as i64 - k.1 as i64).abs() <= 2 * hw);
        if !clash {
            kept.push((c, offset));
        }
    }

    let mut out: Vec<DiagonalSegment> = kept
        .into_iter()
        .map(|((n, m), _)| {
            // clip the centred window so both coordinates stay in range
            let back = half_width.min(n).min(m);
            let fwd = half_width.min(taps - 1 - n).min(taps - 1 - m);
            let start = (n - back, m - back);
            let end = (n + fwd, m + fwd);
            DiagonalSegment::from_points(start, end)
        })
        .collect();
    out.sort_by_key(|s| s.start);
    out
}

/// Turns located segments into reflection tracks with estimated TDOAs and
/// occupied intervals, then shrinks overlapping source-side intervals to the
/// midpoint of their overlap. Segments are attributed to reflections in
/// order of their start row.
pub fn estimate_tracks(segments: &[DiagonalSegment], num_locations: usize, ts: f64) -> Vec<ReflectionTrack> {
    assert!(num_locations >= 2);
    let steps = (num_locations - 1) as f64;
    let mut segs = segments.to_vec();
    segs.sort_by_key(|s| s.start);
    let tracks: Vec<ReflectionTrack> = segs
        .iter()
        .map(|s| {
            let shift = s.offset as f64 / steps; // per-step delay in samples
            let (n_st, m_st) = (s.start.0 as f64, s.start.1 as f64);
            let (n_en, m_en) = (s.end.0 as f64, s.end.1 as f64);
            let lo = ts * (m_st + shift).min(n_st);
            let hi = ts * n_en.max(m_en + shift);
            let toa_start = ts * 0.5 * (m_st + m_en);
            ReflectionTrack {
                toa_start,
                toa_end: toa_start + s.offset as f64 * ts,
                tdoa: shift * ts,
                gain_ratio: 1.0,
                span: Some(ToaInterval { lo, hi }),
            }
        })
        .collect();
    // Spans are explicit, so eps plays no part here.
    separate_overlaps(&tracks, 0.0, ts, num_locations)
}

/// Knobs of the DTW estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtwOptions {
    pub min_segment_len: usize,
    /// Salience threshold relative to the strongest aligned pair.
    pub rel_threshold: f64,
    pub local_cost: LocalCost,
}

impl Default for DtwOptions {
    fn default() -> Self {
        Self {
            min_segment_len: 3,
            rel_threshold: 0.05,
            local_cost: LocalCost::Squared,
        }
    }
}

/// Everything the estimator produced, for inspection and debugging dumps.
#[derive(Debug, Clone)]
pub struct DtwEstimate {
    pub cost: CostMatrix,
    pub path: WarpPath,
    pub runs: Vec<DiagonalSegment>,
    pub segments: Vec<DiagonalSegment>,
    pub tracks: Vec<ReflectionTrack>,
    pub matrix: TransitionMatrix,
}

/// Full pipeline: cost, path, diagonal runs, located reflections, tracks and
/// the location-invariant matrix. Falls back to the identity when no
/// reflection is found.
pub fn estimate(
    h_start: &[f64],
    h_end: &[f64],
    num_locations: usize,
    eps: f64,
    ts: f64,
    opts: DtwOptions,
) -> Result<DtwEstimate> {
    let cost = accumulated_cost_with(h_end, h_start, opts.local_cost)?;
    let path = warp_path(&cost);
    let runs = extract_segments(&path, opts.min_segment_len);
    let half_width = (eps / ts + 1e-9).floor() as usize;
    let segments = locate_reflections(&runs, h_end, h_start, half_width, opts.rel_threshold);
    let taps = h_start.len();
    let tracks = estimate_tracks(&segments, num_locations, ts);
    let matrix = if tracks.is_empty() {
        warn!("DTW found no diagonal segments; using the identity transition");
        TransitionMatrix::identity(taps)
    } else {
        debug_assert!(overlap_check(&tracks, eps, num_locations).passed());
        build_invariant_matrix(&tracks, eps, ts, taps, num_locations)
    };
    Ok(DtwEstimate {
        cost,
        path,
        runs,
        segments,
        tracks,
        matrix,
    })
}

/// `A_dtw` from the start- and end-point RIRs with default options.
pub fn build_dtw_matrix(
    h_start: &[f64],
    h_end: &[f64],
    num_locations: usize,
    eps: f64,
    ts: f64,
) -> Result<TransitionMatrix> {
    Ok(estimate(h_start, h_end, num_locations, eps, ts, DtwOptions::default())?.matrix)
}
