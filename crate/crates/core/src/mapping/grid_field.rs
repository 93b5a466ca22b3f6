//! Mappings given by samples on a tensor grid.
//!
//! File layout: a header giving the number of components followed by the
//! number of points per axis, then one record of components per grid point in
//! row-major order (last axis fastest). CSV files carry the header as their
//! first record; binary files start with the magic `LABGRID\0`, then `u32`
//! header fields and little-endian `f64` values.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{LabError, Result};

const MAGIC: &[u8; 8] = b"LABGRID\0";

#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Points per axis.
    pub counts: Vec<usize>,
    /// Interpolation order, 1 (multilinear) or 3 (tensor cubic).
    pub order: usize,
    /// `dim` components per point; point index is first-axis-fastest.
    values: Vec<f64>,
}

impl GridField {
    pub fn new(
        lo: Vec<f64>,
        hi: Vec<f64>,
        counts: Vec<usize>,
        order: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        let dim = lo.len();
        if hi.len() != dim || counts.len() != dim || dim < 2 {
            return Err(LabError::validation(
                "map.counts",
                "lo, hi and counts must share the dimension (≥ 2)",
            ));
        }
        if order != 1 && order != 3 {
            return Err(LabError::validation(
                "map.order",
                "interpolation order must be 1 or 3",
            ));
        }
        let min_pts = if order == 3 { 4 } else { 2 };
        if counts.iter().any(|&c| c < min_pts) {
            return Err(LabError::validation(
                "map.counts",
                format!("order {order} needs at least {min_pts} points per axis"),
            ));
        }
        if lo
            .iter()
            .zip(&hi)
            .any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite())
        {
            return Err(LabError::validation(
                "map.hi",
                "field box must have positive finite extent",
            ));
        }
        let expected = counts.iter().product::<usize>() * dim;
        if values.len() != expected {
            return Err(LabError::validation(
                "map.samples",
                format!("expected {expected} values, found {}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LabError::validation(
                "map.samples",
                "samples must be finite",
            ));
        }
        Ok(GridField {
            lo,
            hi,
            counts,
            order,
            values,
        })
    }

    /// Samples `f` at the grid points.
    pub fn from_fn(
        lo: Vec<f64>,
        hi: Vec<f64>,
        counts: Vec<usize>,
        order: usize,
        f: impl Fn(&[f64]) -> Vec<f64>,
    ) -> Result<Self> {
        let dim = lo.len();
        let total: usize = counts.iter().product();
        let mut values = Vec::with_capacity(total * dim);
        let mut x = vec![0.0; dim];
        for idx in 0..total {
            let mut rem = idx;
            for k in 0..dim {
                let i = rem % counts[k];
                rem /= counts[k];
                x[k] = lo[k] + (hi[k] - lo[k]) * i as f64 / (counts[k] - 1) as f64;
            }
            values.extend(f(&x));
        }
        GridField::new(lo, hi, counts, order, values)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    fn spacing(&self, k: usize) -> f64 {
        (self.hi[k] - self.lo[k]) / (self.counts[k] - 1) as f64
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(k, &v)| {
            let slack = 1e-12 * (self.hi[k] - self.lo[k]);
            v >= self.lo[k] - slack && v <= self.hi[k] + slack
        })
    }

    fn point_value(&self, multi: &[usize], comp: usize) -> f64 {
        let mut idx = 0;
        for k in (0..self.dim()).rev() {
            idx = idx * self.counts[k] + multi[k];
        }
        self.values[idx * self.dim() + comp]
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        let dim = self.dim();
        if x.len() != dim || !self.contains(x) {
            return Err(LabError::OutsideDomain { point: x.to_vec() });
        }
        let width = self.order + 1;
        // per axis: first stencil node and interpolation weights
        let mut starts = Vec::with_capacity(dim);
        let mut weights = Vec::with_capacity(dim);
        for k in 0..dim {
            let m = self.counts[k];
            let t = ((x[k] - self.lo[k]) / self.spacing(k)).clamp(0.0, (m - 1) as f64);
            let cell = (t.floor() as usize).min(m - 2);
            let start = if self.order == 1 {
                cell
            } else {
                cell.saturating_sub(1).min(m - 4)
            };
            let nodes: Vec<f64> = (0..width).map(|j| (start + j) as f64).collect();
            let w: Vec<f64> = (0..width)
                .map(|j| {
                    (0..width)
                        .filter(|&i| i != j)
                        .map(|i| (t - nodes[i]) / (nodes[j] - nodes[i]))
                        .product()
                })
                .collect();
            starts.push(start);
            weights.push(w);
        }
        let mut out = vec![0.0; dim];
        let stencil = width.pow(dim as u32);
        let mut multi = vec![0usize; dim];
        for s in 0..stencil {
            let mut rem = s;
            let mut w = 1.0;
            for k in 0..dim {
                let j = rem % width;
                rem /= width;
                multi[k] = starts[k] + j;
                w *= weights[k][j];
            }
            for (c, o) in out.iter_mut().enumerate() {
                *o += w * self.point_value(&multi, c);
            }
        }
        Ok(out)
    }

    pub fn load(path: &Path, lo: Vec<f64>, hi: Vec<f64>, order: usize) -> Result<Self> {
        let name = path.display().to_string();
        let is_csv = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        let (header, row_major) = if is_csv {
            read_csv(path)?
        } else {
            let mut bytes = Vec::new();
            std::fs::File::open(path)
                .and_then(|mut f| f.read_to_end(&mut bytes))
                .map_err(|e| LabError::io(&name, e))?;
            read_binary(&bytes, &name)?
        };
        let dim = lo.len();
        if header.len() != dim + 1 || header[0] != dim {
            return Err(LabError::validation(
                "map.path",
                format!("{name}: header {header:?} does not describe a {dim}-component field on a {dim}-d grid"),
            ));
        }
        let counts = header[1..].to_vec();
        let values = reorder(&row_major, &counts, dim, true);
        GridField::new(lo, hi, counts, order, values)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let name = path.display().to_string();
        let mut w = csv::WriterBuilder::new().flexible(true).from_path(path)?;
        let mut header = vec![self.dim().to_string()];
        header.extend(self.counts.iter().map(|c| c.to_string()));
        w.write_record(&header)?;
        let rm = reorder(&self.values, &self.counts, self.dim(), false);
        for rec in rm.chunks(self.dim()) {
            w.write_record(rec.iter().map(|v| format!("{v:e}")))?;
        }
        w.flush().map_err(|e| LabError::io(name, e))
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let name = path.display().to_string();
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for &c in &self.counts {
            buf.extend_from_slice(&(c as u32).to_le_bytes());
        }
        for v in reorder(&self.values, &self.counts, self.dim(), false) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(|e| LabError::io(name, e))
    }
}

/// Converts between row-major (last axis fastest) and first-axis-fastest
/// point orderings.
fn reorder(values: &[f64], counts: &[usize], comps: usize, from_row_major: bool) -> Vec<f64> {
    let total: usize = counts.iter().product();
    if values.len() != total * comps {
        return values.to_vec();
    }
    let dim = counts.len();
    let mut out = vec![0.0; values.len()];
    for idx in 0..total {
        // idx is first-axis-fastest
        let mut rem = idx;
        let mut multi = vec![0; dim];
        for k in 0..dim {
            multi[k] = rem % counts[k];
            rem /= counts[k];
        }
        let rm = multi
            .iter()
            .zip(counts)
            .fold(0, |acc, (&i, &c)| acc * c + i);
        let (src, dst) = if from_row_major { (rm, idx) } else { (idx, rm) };
        out[dst * comps..(dst + 1) * comps]
            .copy_from_slice(&values[src * comps..(src + 1) * comps]);
    }
    out
}

fn read_csv(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let name = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut records = rdr.records();
    let header = records
        .next()
        .ok_or_else(|| LabError::validation("map.path", format!("{name}: empty file")))??;
    let header: Vec<usize> = header
        .iter()
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| {
            LabError::validation("map.path", format!("{name}: header must be integers"))
        })?;
    let mut values = Vec::new();
    for (line, rec) in records.enumerate() {
        let rec = rec?;
        for field in rec.iter() {
            let v: f64 = field.parse().map_err(|_| {
                LabError::validation(
                    "map.path",
                    format!("{name}: record {} has non-numeric `{field}`", line + 2),
                )
            })?;
            values.push(v);
        }
    }
    Ok((header, values))
}

fn read_binary(bytes: &[u8], name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
    let bad = |m: &str| LabError::validation("map.path", format!("{name}: {m}"));
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("missing LABGRID header"));
    }
    let word = |i: usize| -> Result<usize> {
        bytes
            .get(i..i + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
            .ok_or_else(|| bad("truncated header"))
    };
    let comps = word(8)?;
    let mut header = vec![comps];
    for k in 0..comps {
        header.push(word(12 + 4 * k)?);
    }
    let start = 12 + 4 * comps;
    let body = &bytes[start..];
    if !body.len().is_multiple_of(8) {
        return Err(bad("payload is not a whole number of f64 values"));
    }
    let values = body
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((header, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(x: &[f64]) -> Vec<f64> {
        vec![x[0] * x[0] + 0.5 * x[1], x[0] * x[1] - x[1]]
    }

    #[test]
    fn multilinear_reproduces_bilinear_functions() {
        let f = |x: &[f64]| vec![2.0 * x[0] + x[0] * x[1], 3.0 - x[1]];
        let g = GridField::from_fn(vec![0.0, 0.0], vec![1.0, 2.0], vec![5, 7], 1, f).unwrap();
        let x = [0.37, 1.41];
        let v = g.evaluate(&x).unwrap();
        let e = f(&x);
        assert!((v[0] - e[0]).abs() < 1e-14 && (v[1] - e[1]).abs() < 1e-14);
    }

    #[test]
    fn cubic_reproduces_quadratics() {
        let g =
            GridField::from_fn(vec![-1.0, 0.0], vec![1.0, 1.0], vec![6, 5], 3, quadratic).unwrap();
        for x in [[0.93, 0.02], [-0.41, 0.77], [-1.0, 1.0]] {
            let v = g.evaluate(&x).unwrap();
            let e = quadratic(&x);
            assert!((v[0] - e[0]).abs() < 1e-13 && (v[1] - e[1]).abs() < 1e-13);
        }
        assert!(matches!(
            g.evaluate(&[1.5, 0.5]),
            Err(LabError::OutsideDomain { .. })
        ));
    }

    #[test]
    fn csv_and_binary_round_trip() {
        let g =
            GridField::from_fn(vec![0.0, 0.0], vec![1.0, 1.0], vec![4, 3], 1, quadratic).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let c = dir.path().join("f.csv");
        let b = dir.path().join("f.bin");
        g.write_csv(&c).unwrap();
        g.write_binary(&b).unwrap();
        let gc = GridField::load(&c, g.lo.clone(), g.hi.clone(), 1).unwrap();
        let gb = GridField::load(&b, g.lo.clone(), g.hi.clone(), 1).unwrap();
        assert_eq!(gb, g);
        for (a, e) in gc.values.iter().zip(&g.values) {
            assert!((a - e).abs() <= 1e-15 * e.abs().max(1.0));
        }
        let text = std::fs::read_to_string(&c).unwrap();
        // row-major: second record is point (0,0), third is (0, 0.5)
        let third: Vec<f64> = text
            .lines()
            .nth(2)
            .unwrap()
            .split(',')
            .map(|s| s.parse().unwrap())
            .collect();
        assert_eq!(third, quadratic(&[0.0, 0.5]));
    }

    #[test]
    fn rejects_non_finite_samples() {
        let err = GridField::new(
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![2, 2],
            1,
            vec![f64::NAN; 8],
        )
        .unwrap_err();
        assert!(err.to_string().contains("finite"));
    }
}
