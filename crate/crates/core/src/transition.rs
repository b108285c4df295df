//! Transition matrices mapping the RIR at one trajectory location onto the
//! next.
//!
//! Every reflection contributes a Toeplitz block of sampled sinc functions
//! implementing a fractional delay of `tdoa`. Block rows cover the interval
//! the reflection occupies on the destination side; block columns cover the
//! same interval shifted back by `tdoa`. Rows outside every interval are zero
//! unless [`fill_identity_rows`] turns them into pass-through rows.

use std::fmt::Write as _;
use std::ops::Range;

use log::warn;

use crate::error::{Error, Result};
use crate::linalg::{axpy, SquareMatrix};
use crate::scene::{toa, ImageSource, Trajectory};
use crate::sinc;

/// Slack used when deciding whether an integer sample index lies on a closed
/// interval boundary expressed in fractional samples.
pub const SAMPLE_TOL: f64 = 1e-9;

/// Closed time interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToaInterval {
    pub lo: f64,
    pub hi: f64,
}

impl ToaInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo <= hi {
            Ok(Self { lo, hi })
        } else {
            Err(Error::Domain(format!(
                "interval lower bound {lo} exceeds upper bound {hi}"
            )))
        }
    }

    /// `[center - half_width, center + half_width]`
    pub fn around(center: f64, half_width: f64) -> Self {
        Self {
            lo: center - half_width,
            hi: center + half_width,
        }
    }

    pub fn shifted(self, by: f64) -> Self {
        Self {
            lo: self.lo + by,
            hi: self.hi + by,
        }
    }

    pub fn intersects(&self, other: &ToaInterval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    /// Whether sample `n` lies in `[lo/ts, hi/ts]`.
    pub fn contains_sample(&self, n: usize, ts: f64) -> bool {
        let x = n as f64;
        x >= self.lo / ts - SAMPLE_TOL && x <= self.hi / ts + SAMPLE_TOL
    }

    /// Sample indices in `[lo/ts, hi/ts]`, clipped to `0..len`.
    pub fn sample_range(&self, ts: f64, len: usize) -> Range<usize> {
        let lo = (self.lo / ts - SAMPLE_TOL).ceil().max(0.0);
        let hi = (self.hi / ts + SAMPLE_TOL).floor();
        if hi < 0.0 || lo >= len as f64 || lo > hi {
            return 0..0;
        }
        (lo as usize)..((hi as usize + 1).min(len))
    }
}

/// Per-reflection arrival times at the two trajectory endpoints and the
/// derived per-step TDOA.
///
/// `span` overrides the occupied interval when it comes from an estimate
/// rather than from exact TOAs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectionTrack {
    pub toa_start: f64,
    pub toa_end: f64,
    pub tdoa: f64,
    pub gain_ratio: f64,
    pub span: Option<ToaInterval>,
}

impl ReflectionTrack {
    /// Linear TOA model between the endpoints of an `L`-location trajectory.
    pub fn from_endpoints(toa_start: f64, toa_end: f64, num_locations: usize) -> Self {
        assert!(num_locations >= 2, "a track needs at least two locations");
        Self {
            toa_start,
            toa_end,
            tdoa: (toa_end - toa_start) / (num_locations - 1) as f64,
            gain_ratio: 1.0,
            span: None,
        }
    }

    /// `tau(l) = tau(0) + l * tdoa`
    pub fn toa_at(&self, l: usize) -> f64 {
        self.toa_start + l as f64 * self.tdoa
    }

    /// Interval of width `2 eps` around `tau(l)`.
    pub fn variant_interval(&self, l: usize, eps: f64) -> ToaInterval {
        ToaInterval::around(self.toa_at(l), eps)
    }

    /// Interval occupied over locations `1..L-1`, padded by `eps`.
    pub fn invariant_interval(&self, eps: f64, num_locations: usize) -> ToaInterval {
        if let Some(span) = self.span {
            return span;
        }
        let a = self.toa_at(1);
        let b = self.toa_at(num_locations - 1);
        ToaInterval {
            lo: a.min(b) - eps,
            hi: a.max(b) + eps,
        }
    }

    /// Source-side interval: the occupied interval moved back by one step.
    pub fn shifted_interval(&self, eps: f64, num_locations: usize) -> ToaInterval {
        self.invariant_interval(eps, num_locations).shifted(-self.tdoa)
    }
}

/// One track per image, with exact TOAs at both trajectory endpoints and
/// unit gain ratio.
pub fn tracks_from_images(
    images: &[ImageSource],
    traj: &Trajectory,
    speed_of_sound: f64,
) -> Result<Vec<ReflectionTrack>> {
    if images.is_empty() {
        return Err(Error::Domain("no image sources given".into()));
    }
    let first = traj.position(0)?;
    let last = traj.position(traj.num_locations() - 1)?;
    images
        .iter()
        .map(|img| {
            Ok(ReflectionTrack::from_endpoints(
                toa(img, first, speed_of_sound)?,
                toa(img, last, speed_of_sound)?,
                traj.num_locations(),
            ))
        })
        .collect()
}

/// Reflections whose location-`l` interval contains sample `n`.
pub fn active_set_variant(tracks: &[ReflectionTrack], l: usize, n: usize, eps: f64, ts: f64) -> Vec<usize> {
    (0..tracks.len())
        .filter(|&r| tracks[r].variant_interval(l, eps).contains_sample(n, ts))
        .collect()
}

/// Reflections whose trajectory-wide interval contains sample `n`.
pub fn active_set_invariant(
    tracks: &[ReflectionTrack],
    n: usize,
    eps: f64,
    ts: f64,
    num_locations: usize,
) -> Vec<usize> {
    (0..tracks.len())
        .filter(|&r| tracks[r].invariant_interval(eps, num_locations).contains_sample(n, ts))
        .collect()
}

/// Offending pairs of an interval-disjointness check.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OverlapReport {
    pub pairs: Vec<(usize, usize)>,
}

impl OverlapReport {
    pub fn passed(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn pairwise_overlaps(intervals: &[ToaInterval]) -> OverlapReport {
    let mut pairs = Vec::new();
    for i in 0..intervals.len() {
        for j in (i + 1)..intervals.len() {
            if intervals[i].intersects(&intervals[j]) {
                pairs.push((i, j));
            }
        }
    }
    OverlapReport { pairs }
}

/// Checks that the source-side intervals of all tracks are pairwise
/// disjoint, the condition under which a single matrix is valid along the
/// whole trajectory.
pub fn overlap_check(tracks: &[ReflectionTrack], eps: f64, num_locations: usize) -> OverlapReport {
    let iv: Vec<ToaInterval> = tracks.iter().map(|t| t.shifted_interval(eps, num_locations)).collect();
    pairwise_overlaps(&iv)
}

/// Splits every overlap of source-side intervals at its midpoint so the
/// result passes [`overlap_check`]. Tracks are taken in order of interval
/// centre; one squeezed out entirely keeps a single point. Every returned
/// track carries an explicit span.
pub fn separate_overlaps(tracks: &[ReflectionTrack], eps: f64, ts: f64, num_locations: usize) -> Vec<ReflectionTrack> {
    const GAP: f64 = 1e-6; // samples
    let src: Vec<(f64, f64)> = tracks
        .iter()
        .map(|t| {
            let iv = t.shifted_interval(eps, num_locations);
            (iv.lo / ts, iv.hi / ts)
        })
        .collect();
    let mut order: Vec<usize> = (0..tracks.len()).collect();
    order.sort_by(|&a, &b| {
        let ca = src[a].0 + src[a].1;
        let cb = src[b].0 + src[b].1;
        ca.total_cmp(&cb).then(src[a].0.total_cmp(&src[b].0))
    });
    let mut out = Vec::with_capacity(tracks.len());
    let mut floor = f64::NEG_INFINITY;
    for (k, &r) in order.iter().enumerate() {
        let lo = src[r].0.max(floor);
        let mut hi = src[r].1.max(lo);
        if let Some(&next) = order.get(k + 1) {
            let next_lo = src[next].0.max(lo);
            if next_lo <= hi {
                let cut = 0.5 * (next_lo + hi.min(src[next].1.max(next_lo)));
                hi = cut.max(lo);
            }
        }
        floor = hi + GAP;
        let t = tracks[r];
        out.push(ReflectionTrack {
            span: Some(ToaInterval {
                lo: lo * ts + t.tdoa,
                hi: hi * ts + t.tdoa,
            }),
            ..t
        });
    }
    out
}

/// Disjointness of the location-`l-1` intervals, required by `A(l)`.
pub fn overlap_check_variant(tracks: &[ReflectionTrack], l: usize, eps: f64) -> OverlapReport {
    let iv: Vec<ToaInterval> = tracks.iter().map(|t| t.variant_interval(l - 1, eps)).collect();
    pairwise_overlaps(&iv)
}

/// Sinc block of one reflection.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub reflection: usize,
    pub rows: Range<usize>,
    pub cols: Range<usize>,
    /// Row-major `rows.len() x cols.len()`.
    pub values: Vec<f64>,
}

/// Compressed sparse rows of the assembled matrix.
#[derive(Debug, Clone, PartialEq, Default)]
struct SparseRows {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    nonzero_rows: Vec<usize>,
}

impl SparseRows {
    fn from_dense(m: &SquareMatrix) -> Self {
        let n = m.dim();
        let mut s = SparseRows {
            row_ptr: Vec::with_capacity(n + 1),
            ..Default::default()
        };
        s.row_ptr.push(0);
        for i in 0..n {
            for (j, &v) in m.row(i).iter().enumerate() {
                if v != 0.0 {
                    s.cols.push(j);
                    s.vals.push(v);
                }
            }
            if s.cols.len() > *s.row_ptr.last().unwrap() {
                s.nonzero_rows.push(i);
            }
            s.row_ptr.push(s.cols.len());
        }
        s
    }

    #[inline]
    fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }
}

/// `N x N` transition matrix: dense entries plus the per-reflection block
/// layout and any pass-through rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    dense: SquareMatrix,
    blocks: Vec<Block>,
    pass_through: Vec<usize>,
    sparse: SparseRows,
}

/// Rows interval, per-step delay and gain of one block before sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockSpec {
    pub reflection: usize,
    pub rows: ToaInterval,
    pub tdoa: f64,
    pub gain: f64,
}

impl TransitionMatrix {
    pub fn identity(n: usize) -> Self {
        Self::assemble(n, Vec::new(), (0..n).collect())
    }

    /// Samples `gain * sinc(n - tdoa/ts - n')` over each spec's rows and the
    /// rows shifted back by `tdoa`.
    pub fn from_blocks(n: usize, specs: &[BlockSpec], ts: f64) -> Self {
        let blocks = specs
            .iter()
            .filter_map(|s| {
                let rows = s.rows.sample_range(ts, n);
                let cols = s.rows.shifted(-s.tdoa).sample_range(ts, n);
                if rows.is_empty() || cols.is_empty() {
                    return None;
                }
                let shift = s.tdoa / ts;
                let mut values = Vec::with_capacity(rows.len() * cols.len());
                for i in rows.clone() {
                    for j in cols.clone() {
                        values.push(s.gain * sinc(i as f64 - shift - j as f64));
                    }
                }
                Some(Block {
                    reflection: s.reflection,
                    rows,
                    cols,
                    values,
                })
            })
            .collect();
        Self::assemble(n, blocks, Vec::new())
    }

    /// Rebuilds a matrix from `(row, col, value)` entries. The layout
    /// collapses to one block over the bounding box of the entries.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        if triplets.is_empty() {
            return Ok(Self::assemble(n, Vec::new(), Vec::new()));
        }
        let mut r = (usize::MAX, 0);
        let mut c = (usize::MAX, 0);
        for &(i, j, _) in triplets {
            if i >= n || j >= n {
                return Err(Error::Index {
                    index: i.max(j),
                    len: n,
                });
            }
            r = (r.0.min(i), r.1.max(i + 1));
            c = (c.0.min(j), c.1.max(j + 1));
        }
        let w = c.1 - c.0;
        let mut values = vec![0.0; (r.1 - r.0) * w];
        for &(i, j, v) in triplets {
            values[(i - r.0) * w + (j - c.0)] += v;
        }
        let block = Block {
            reflection: 0,
            rows: r.0..r.1,
            cols: c.0..c.1,
            values,
        };
        Ok(Self::assemble(n, vec![block], Vec::new()))
    }

    fn assemble(n: usize, blocks: Vec<Block>, pass_through: Vec<usize>) -> Self {
        let mut dense = SquareMatrix::zeros(n);
        for b in &blocks {
            let w = b.cols.len();
            for (bi, i) in b.rows.clone().enumerate() {
                let row = &mut dense.row_mut(i)[b.cols.clone()];
                for (v, add) in row.iter_mut().zip(&b.values[bi * w..(bi + 1) * w]) {
                    *v += add;
                }
            }
        }
        for &i in &pass_through {
            dense[(i, i)] += 1.0;
        }
        let sparse = SparseRows::from_dense(&dense);
        Self {
            dense,
            blocks,
            pass_through,
            sparse,
        }
    }

    pub fn dim(&self) -> usize {
        self.dense.dim()
    }

    pub fn dense(&self) -> &SquareMatrix {
        &self.dense
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn pass_through_rows(&self) -> &[usize] {
        &self.pass_through
    }

    pub fn nnz(&self) -> usize {
        self.sparse.vals.len()
    }

    /// Rows containing at least one nonzero entry.
    pub fn active_rows(&self) -> &[usize] {
        &self.sparse.nonzero_rows
    }

    pub fn is_zero_row(&self, i: usize) -> bool {
        self.sparse.row_ptr[i] == self.sparse.row_ptr[i + 1]
    }

    /// `A x` through the block layout.
    pub fn apply_blocks(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim());
        let mut y = vec![0.0; x.len()];
        for b in &self.blocks {
            let w = b.cols.len();
            let xs = &x[b.cols.clone()];
            for (bi, i) in b.rows.clone().enumerate() {
                y[i] += crate::linalg::dot(&b.values[bi * w..(bi + 1) * w], xs);
            }
        }
        for &i in &self.pass_through {
            y[i] += x[i];
        }
        y
    }

    /// `A x` through the dense entries.
    pub fn apply_dense(&self, x: &[f64]) -> Vec<f64> {
        self.dense.mul_vec(x)
    }

    /// `A x` through the compressed rows; this is the path the filter uses.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim());
        let mut y = vec![0.0; x.len()];
        for &i in &self.sparse.nonzero_rows {
            let (cols, vals) = self.sparse.row(i);
            y[i] = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        }
        y
    }

    /// `A P A^T` for symmetric `P`, written into `out`. `scratch` receives
    /// `A P`. The result is exactly symmetric.
    pub fn sandwich(&self, p: &SquareMatrix, out: &mut SquareMatrix, scratch: &mut SquareMatrix) {
        let n = self.dim();
        assert_eq!(p.dim(), n);
        let rows = &self.sparse.nonzero_rows;
        for &i in rows {
            let s = scratch.row_mut(i);
            s.fill(0.0);
            let (cols, vals) = self.sparse.row(i);
            for (&k, &a) in cols.iter().zip(vals) {
                axpy(a, p.row(k), s);
            }
        }
        *out = SquareMatrix::zeros(n);
        for (ii, &i) in rows.iter().enumerate() {
            let s = scratch.row(i);
            for &j in &rows[ii..] {
                let (cols, vals) = self.sparse.row(j);
                let v: f64 = cols.iter().zip(vals).map(|(&k, &a)| a * s[k]).sum();
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
    }

    /// Nonzero `(row, col, value)` entries in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.sparse.nonzero_rows.iter().flat_map(move |&i| {
            let (cols, vals) = self.sparse.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    /// Human-readable block layout.
    pub fn block_summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "dim={} nnz={} blocks={} pass_through_rows={} zero_rows={}",
            self.dim(),
            self.nnz(),
            self.blocks.len(),
            self.pass_through.len(),
            self.dim() - self.sparse.nonzero_rows.len()
        );
        for b in &self.blocks {
            let _ = writeln!(
                s,
                "reflection={} rows={}..{} cols={}..{}",
                b.reflection, b.rows.start, b.rows.end, b.cols.start, b.cols.end
            );
        }
        s
    }
}

/// Location-variant `A(l)`, `1 <= l <= L-1`, under the linear TOA model.
pub fn build_variant_matrix(tracks: &[ReflectionTrack], l: usize, eps: f64, ts: f64, n: usize) -> TransitionMatrix {
    assert!(l >= 1, "A(l) is defined for l >= 1");
    let report = overlap_check_variant(tracks, l, eps);
    if !report.passed() {
        warn!(
            "A({l}): reflection intervals overlap at location {}: {:?}",
            l - 1,
            report.pairs
        );
    }
    let specs: Vec<BlockSpec> = tracks
        .iter()
        .enumerate()
        .map(|(r, t)| BlockSpec {
            reflection: r,
            rows: t.variant_interval(l, eps),
            tdoa: t.tdoa,
            gain: t.gain_ratio,
        })
        .collect();
    TransitionMatrix::from_blocks(n, &specs, ts)
}

/// Location-invariant `A` valid over the whole trajectory.
pub fn build_invariant_matrix(
    tracks: &[ReflectionTrack],
    eps: f64,
    ts: f64,
    n: usize,
    num_locations: usize,
) -> TransitionMatrix {
    let report = overlap_check(tracks, eps, num_locations);
    if !report.passed() {
        warn!("source-side reflection intervals overlap: {:?}", report.pairs);
    }
    let specs: Vec<BlockSpec> = tracks
        .iter()
        .enumerate()
        .map(|(r, t)| BlockSpec {
            reflection: r,
            rows: t.invariant_interval(eps, num_locations),
            tdoa: t.tdoa,
            gain: t.gain_ratio,
        })
        .collect();
    TransitionMatrix::from_blocks(n, &specs, ts)
}

/// Puts a one on the diagonal of every all-zero row.
pub fn fill_identity_rows(a: &TransitionMatrix) -> TransitionMatrix {
    let mut pass = a.pass_through.clone();
    pass.extend((0..a.dim()).filter(|&i| a.is_zero_row(i)));
    pass.sort_unstable();
    TransitionMatrix::assemble(a.dim(), a.blocks.clone(), pass)
}
