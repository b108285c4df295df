//! File formats: RIR sets (CSV and raw f64), signals, matrices and
//! result curves. Every float is written with Rust's shortest round-trip
//! formatting.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::dtw::{CostMatrix, WarpPath};
use crate::error::{Error, Result};
use crate::signal::{Excitation, Observation};
use crate::transition::TransitionMatrix;

/// RIRs of all locations of one trajectory, sharing `fs` and length.
#[derive(Debug, Clone, PartialEq)]
pub struct RirSet {
    pub fs: f64,
    pub taps: usize,
    pub rirs: Vec<Vec<f64>>,
}

impl RirSet {
    pub fn new(fs: f64, taps: usize, rirs: Vec<Vec<f64>>) -> Result<Self> {
        for r in &rirs {
            crate::error::check_len(taps, r.len())?;
        }
        Ok(Self { fs, taps, rirs })
    }

    pub fn num_locations(&self) -> usize {
        self.rirs.len()
    }

    pub fn first(&self) -> Option<&[f64]> {
        self.rirs.first().map(Vec::as_slice)
    }

    pub fn last(&self) -> Option<&[f64]> {
        self.rirs.last().map(Vec::as_slice)
    }
}

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn csv_bytes<F>(fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<()>,
{
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    fill(&mut w)?;
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn fmt_all(values: &[f64]) -> Vec<String> {
    values.iter().map(|v| v.to_string()).collect()
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn parse_f64(path: &Path, s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| format_err(path, format!("not a number: {s:?}")))
}

/// Line 1 `fs,N,L`, line 2 their values, then one line of `N` samples per
/// location.
pub fn write_rir_csv(path: &Path, set: &RirSet) -> Result<()> {
    let bytes = csv_bytes(|w| {
        w.write_record(["fs", "N", "L"])?;
        w.write_record([
            set.fs.to_string(),
            set.taps.to_string(),
            set.num_locations().to_string(),
        ])?;
        for r in &set.rirs {
            w.write_record(fmt_all(r))?;
        }
        Ok(())
    })?;
    write_atomic(path, &bytes)
}

pub fn read_rir_csv(path: &Path) -> Result<RirSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let mut records = rdr.records();
    let header = records.next().ok_or_else(|| format_err(path, "empty file"))??;
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != ["fs", "N", "L"] {
        return Err(format_err(path, "first line must be `fs,N,L`"));
    }
    let meta = records
        .next()
        .ok_or_else(|| format_err(path, "missing fs,N,L values"))??;
    if meta.len() != 3 {
        return Err(format_err(path, "second line must hold three values"));
    }
    let fs = parse_f64(path, &meta[0])?;
    let taps: usize = meta[1]
        .trim()
        .parse()
        .map_err(|_| format_err(path, "N is not an integer"))?;
    let num: usize = meta[2]
        .trim()
        .parse()
        .map_err(|_| format_err(path, "L is not an integer"))?;
    let mut rirs = Vec::with_capacity(num);
    for rec in records {
        let rec = rec?;
        if rec.len() != taps {
            return Err(format_err(
                path,
                format!("row {} has {} values, expected {taps}", rirs.len(), rec.len()),
            ));
        }
        rirs.push(rec.iter().map(|s| parse_f64(path, s)).collect::<Result<Vec<_>>>()?);
    }
    if rirs.len() != num {
        return Err(format_err(path, format!("expected {num} rows, found {}", rirs.len())));
    }
    RirSet::new(fs, taps, rirs)
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".hdr");
    PathBuf::from(s)
}

/// Location-major little-endian f64 samples plus a `<path>.hdr` text
/// header with `fs`, `N` and `L`.
pub fn write_rir_raw(path: &Path, set: &RirSet) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 * set.taps * set.num_locations());
    for r in &set.rirs {
        for v in r {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &bytes)?;
    let hdr = format!(
        "format = f64le\nlayout = location-major\nfs = {}\nN = {}\nL = {}\n",
        set.fs,
        set.taps,
        set.num_locations()
    );
    write_atomic(&sidecar(path), hdr.as_bytes())
}

pub fn read_rir_raw(path: &Path) -> Result<RirSet> {
    let hdr_path = sidecar(path);
    let hdr = fs::read_to_string(&hdr_path)?;
    let mut fs_val = None;
    let mut taps = None;
    let mut num = None;
    for line in hdr.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format_err(&hdr_path, format!("bad line {line:?}")))?;
        let v = v.trim();
        match k.trim() {
            "fs" => fs_val = Some(parse_f64(&hdr_path, v)?),
            "N" => taps = v.parse::<usize>().ok(),
            "L" => num = v.parse::<usize>().ok(),
            "format" if v != "f64le" => return Err(format_err(&hdr_path, "unsupported format")),
            _ => {}
        }
    }
    let (fs_val, taps, num) = match (fs_val, taps, num) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(format_err(&hdr_path, "header needs fs, N and L")),
    };
    let bytes = fs::read(path)?;
    if bytes.len() != 8 * taps * num {
        return Err(format_err(
            path,
            format!("expected {} bytes, found {}", 8 * taps * num, bytes.len()),
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let rirs = if taps == 0 {
        vec![Vec::new(); num]
    } else {
        values.chunks(taps).map(<[f64]>::to_vec).collect()
    };
    RirSet::new(fs_val, taps, rirs)
}

/// Columns `l,k,y` with `k = l Omega`.
pub fn write_observation_csv(path: &Path, obs: &Observation) -> Result<()> {
    let bytes = csv_bytes(|w| {
        w.write_record(["l", "k", "y"])?;
        for (l, y) in obs.y.iter().enumerate() {
            w.write_record([l.to_string(), (l * obs.omega).to_string(), y.to_string()])?;
        }
        Ok(())
    })?;
    write_atomic(path, &bytes)
}

/// Returns `(omega, y)`; `omega` is inferred from the `k` column.
pub fn read_observation_csv(path: &Path) -> Result<(usize, Vec<f64>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut y = Vec::new();
    let mut omega = None;
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(format_err(path, "expected columns l,k,y"));
        }
        let l: usize = rec[0].trim().parse().map_err(|_| format_err(path, "bad l"))?;
        let k: usize = rec[1].trim().parse().map_err(|_| format_err(path, "bad k"))?;
        if l != y.len() {
            return Err(format_err(path, format!("rows out of order at l = {l}")));
        }
        if l == 1 {
            omega = Some(k);
        }
        y.push(parse_f64(path, &rec[2])?);
    }
    let omega = omega.unwrap_or(1);
    if omega == 0 {
        return Err(format_err(path, "k must grow with l"));
    }
    Ok((omega, y))
}

/// Columns `k,x`.
pub fn write_excitation_csv(path: &Path, x: &Excitation) -> Result<()> {
    let bytes = csv_bytes(|w| {
        w.write_record(["k", "x"])?;
        for (k, v) in x.samples().iter().enumerate() {
            w.write_record([k.to_string(), v.to_string()])?;
        }
        Ok(())
    })?;
    write_atomic(path, &bytes)
}

pub fn read_excitation_csv(path: &Path) -> Result<Excitation> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut xs = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(format_err(path, "expected columns k,x"));
        }
        xs.push(parse_f64(path, &rec[1])?);
    }
    let var = xs.iter().map(|v| v * v).sum::<f64>() / xs.len().max(1) as f64;
    Ok(Excitation::from_samples(xs, var))
}

/// Nonzero entries as `row,col,value`.
pub fn write_matrix_triplets(path: &Path, a: &TransitionMatrix) -> Result<()> {
    let bytes = csv_bytes(|w| {
        w.write_record(["row", "col", "value"])?;
        for (i, j, v) in a.triplets() {
            w.write_record([i.to_string(), j.to_string(), v.to_string()])?;
        }
        Ok(())
    })?;
    write_atomic(path, &bytes)
}

/// Reads `row,col,value` triplets.
pub fn read_matrix_triplets(path: &Path) -> Result<Vec<(usize, usize, f64)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(format_err(path, "expected columns row,col,value"));
        }
        let i: usize = rec[0].trim().parse().map_err(|_| format_err(path, "bad row"))?;
        let j: usize = rec[1].trim().parse().map_err(|_| format_err(path, "bad col"))?;
        out.push((i, j, parse_f64(path, &rec[2])?));
    }
    Ok(out)
}

/// Accumulated cost `D(n, n')` without the padding row and column; row `n`
/// indexes the end-point RIR.
pub fn write_cost_csv(path: &Path, d: &CostMatrix) -> Result<()> {
    let n = d.taps();
    let bytes = csv_bytes(|w| {
        for i in 0..n {
            let row: Vec<String> = (0..n).map(|j| d.at(i, j).to_string()).collect();
            w.write_record(row)?;
        }
        Ok(())
    })?;
    write_atomic(path, &bytes)
}

/// Warping path as pairs `n,n_prime`.
pub fn write_path_csv(path: &Path, p: &WarpPath) -> Result<()> {
    let bytes = csv_bytes(|w| {
        w.write_record(["n", "n_prime"])?;
        for (i, j) in &p.pairs {
            w.write_record([i.to_string(), j.to_string()])?;
        }
        Ok(())
    })?;
    write_atomic(path, &bytes)
}

/// Per-location misalignment table: `l,position_m,<one column per series>`.
pub fn write_curves_csv(path: &Path, positions: &[f64], names: &[&str], series: &[Vec<f64>]) -> Result<()> {
    for s in series {
        crate::error::check_len(positions.len(), s.len())?;
    }
    let bytes = csv_bytes(|w| {
        let mut header = vec!["l".to_string(), "position_m".to_string()];
        header.extend(names.iter().map(|s| s.to_string()));
        w.write_record(&header)?;
        for (l, p) in positions.iter().enumerate() {
            let mut row = vec![l.to_string(), p.to_string()];
            row.extend(series.iter().map(|s| s[l].to_string()));
            w.write_record(&row)?;
        }
        Ok(())
    })?;
    write_atomic(path, &bytes)
}

/// Reads a table written by [`write_curves_csv`]; returns column names and
/// the series after `l` and `position_m`.
pub fn read_curves_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let names: Vec<String> = rdr.headers()?.iter().skip(2).map(str::to_string).collect();
    let mut series = vec![Vec::new(); names.len()];
    for rec in rdr.records() {
        let rec = rec?;
        for (k, s) in series.iter_mut().enumerate() {
            s.push(parse_f64(path, &rec[k + 2])?);
        }
    }
    Ok((names, series))
}

/// Estimates at selected locations: `l` then the `N` taps.
pub fn write_snapshots_csv(path: &Path, rows: &[(usize, Vec<f64>)]) -> Result<()> {
    let bytes = csv_bytes(|w| {
        for (l, h) in rows {
            let mut row = vec![l.to_string()];
            row.extend(fmt_all(h));
            w.write_record(&row)?;
        }
        Ok(())
    })?;
    write_atomic(path, &bytes)
}
