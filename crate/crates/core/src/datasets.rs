//! Synthetic benchmark shapes, nonlinear liftings into higher dimension,
//! matrix file formats and preprocessing.
//!
//! The three shape generators are statistical stand-ins for the Tetra,
//! Chainlink and Lsun problems: sizes and cluster counts match the originals,
//! the geometry constants below are our own.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{row_l2_normalize, DenseMatrix};
use crate::rng::SeededRng;

/// Tetra: per-axis standard deviation of each blob; vertices sit at (±1, ±1, ±1).
pub const TETRA_SPREAD: f64 = 0.35;
/// Chainlink: radius of both rings and per-axis Gaussian jitter.
pub const CHAINLINK_RADIUS: f64 = 1.0;
pub const CHAINLINK_JITTER: f64 = 0.06;
/// Lsun: arm length and thickness of the L, and the two blobs (center, spread).
pub const LSUN_ARM: f64 = 2.0;
pub const LSUN_THICKNESS: f64 = 0.4;
pub const LSUN_BLOBS: [([f64; 2], f64); 2] = [([1.5, 1.5], 0.15), ([3.2, 1.1], 0.25)];

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub x: DenseMatrix,
    pub labels: Option<Vec<usize>>,
    pub k_true: Option<usize>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, x: DenseMatrix, labels: Option<Vec<usize>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != x.rows() {
                return Err(Error::dim("Dataset::new", format!("{} labels", x.rows()), l.len()));
            }
        }
        let k_true = labels.as_ref().map(|l| l.iter().max().map_or(0, |m| m + 1));
        Ok(Self {
            name: name.into(),
            x,
            labels,
            k_true,
        })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn with_x(&self, x: DenseMatrix) -> Self {
        Self { x, ..self.clone() }
    }
}

fn labelled(name: &str, rows: Vec<Vec<f64>>, labels: Vec<usize>) -> Dataset {
    let x = DenseMatrix::from_rows(&rows).expect("generated points are finite");
    Dataset::new(name, x, Some(labels)).expect("one label per point")
}

/// 400 points in 3-D: four Gaussian blobs of 100 at the vertices of a regular
/// tetrahedron, close enough to nearly touch.
pub fn gen_tetra(seed: u64) -> Dataset {
    let mut rng = SeededRng::new(seed).derive(1).rng();
    let noise = Normal::new(0.0, TETRA_SPREAD).unwrap();
    let vertices = [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]];
    let mut rows = Vec::with_capacity(400);
    let mut labels = Vec::with_capacity(400);
    for (c, v) in vertices.iter().enumerate() {
        for _ in 0..100 {
            rows.push(v.iter().map(|&x| x + noise.sample(&mut rng)).collect());
            labels.push(c);
        }
    }
    labelled("tetra", rows, labels)
}

/// 1000 points in 3-D: two interlocked rings of 500, one in the xy-plane and
/// one in the xz-plane passing through the first ring's center.
pub fn gen_chainlink(seed: u64) -> Dataset {
    let mut rng = SeededRng::new(seed).derive(2).rng();
    let noise = Normal::new(0.0, CHAINLINK_JITTER).unwrap();
    let r = CHAINLINK_RADIUS;
    let mut rows = Vec::with_capacity(1000);
    let mut labels = Vec::with_capacity(1000);
    for ring in 0..2 {
        for _ in 0..500 {
            let t = rng.random_range(0.0..std::f64::consts::TAU);
            let p = if ring == 0 {
                [r * t.cos() - 0.5 * r, r * t.sin(), 0.0]
            } else {
                [r * t.cos() + 0.5 * r, 0.0, r * t.sin()]
            };
            rows.push(p.iter().map(|&x| x + noise.sample(&mut rng)).collect());
            labels.push(ring);
        }
    }
    labelled("chainlink", rows, labels)
}

/// 400 points in 2-D: a uniformly filled L of 200 points and two Gaussian
/// blobs of 100 with different spreads.
pub fn gen_lsun(seed: u64) -> Dataset {
    let mut rng = SeededRng::new(seed).derive(3).rng();
    let (arm, thick) = (LSUN_ARM, LSUN_THICKNESS);
    let mut rows = Vec::with_capacity(400);
    let mut labels = Vec::with_capacity(400);
    // rejection-free: pick the horizontal or vertical arm in proportion to area
    let horizontal_area = arm * thick;
    let vertical_area = (arm - thick) * thick;
    for _ in 0..200 {
        let pick = rng.random::<f64>() * (horizontal_area + vertical_area);
        let p = if pick < horizontal_area {
            vec![rng.random_range(0.0..arm), rng.random_range(0.0..thick)]
        } else {
            vec![rng.random_range(0.0..thick), rng.random_range(thick..arm)]
        };
        rows.push(p);
        labels.push(0);
    }
    for (c, (center, spread)) in LSUN_BLOBS.iter().enumerate() {
        let noise = Normal::new(0.0, *spread).unwrap();
        for _ in 0..100 {
            rows.push(vec![center[0] + noise.sample(&mut rng), center[1] + noise.sample(&mut rng)]);
            labels.push(c + 1);
        }
    }
    // center the shape near the origin
    for r in &mut rows {
        r[0] -= 1.5;
        r[1] -= 1.0;
    }
    labelled("lsun", rows, labels)
}

/// Generator lookup by name (`tetra`, `chainlink`, `lsun`, `digits`).
pub fn generate(name: &str, seed: u64) -> Result<Dataset> {
    match name {
        "tetra" => Ok(gen_tetra(seed)),
        "chainlink" => Ok(gen_chainlink(seed)),
        "lsun" => Ok(gen_lsun(seed)),
        "digits" => Ok(gen_digit_surrogate(seed)),
        other => Err(Error::Config(format!("unknown dataset generator '{other}'"))),
    }
}

/// 2000 points in 100-D: ten Gaussian classes of 200 in 10-D, pushed through
/// a random two-layer sigmoid map. A small stand-in for digit images.
pub fn gen_digit_surrogate(seed: u64) -> Dataset {
    let base = SeededRng::new(seed).derive(4);
    let mut rng = base.derive(0).rng();
    let dim = 10;
    let spread = Normal::new(0.0, 0.8).unwrap();
    let centers: Vec<Vec<f64>> = (0..10)
        .map(|_| (0..dim).map(|_| spread.sample(&mut rng)).collect())
        .collect();
    let noise = Normal::new(0.0, 0.35).unwrap();
    let mut rows = Vec::with_capacity(2000);
    let mut labels = Vec::with_capacity(2000);
    for (c, ctr) in centers.iter().enumerate() {
        for _ in 0..200 {
            rows.push(ctr.iter().map(|&m| m + noise.sample(&mut rng)).collect::<Vec<f64>>());
            labels.push(c);
        }
    }
    let h = DenseMatrix::from_rows(&rows).unwrap();
    let mut trng = base.derive(1).rng();
    let w = gaussian_matrix(10, dim, &mut trng);
    let u = gaussian_matrix(100, 10, &mut trng);
    let x = sigmoid_stack(&h, &w, &u);
    Dataset::new("digits", x, Some(labels)).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiftKind {
    /// `σ(U σ(W h))`, 100 outputs.
    SigmoidStack,
    /// `σ(σ(W h))²`, 10 outputs.
    SigmoidSquared,
    /// `tan(σ(W h))`, 10 outputs.
    TanSigmoid,
}

/// Random nonlinear map from 2-D or 3-D points to a higher dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftingTransform {
    pub kind: LiftKind,
    /// 10 × d_low, i.i.d. standard normal.
    pub w: DenseMatrix,
    /// 100 × 10, i.i.d. standard normal.
    pub u: DenseMatrix,
}

fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

impl LiftingTransform {
    pub fn sample(kind: LiftKind, d_low: usize, rng: SeededRng) -> Result<Self> {
        if !(2..=3).contains(&d_low) {
            return Err(Error::invalid(format!("lifting expects 2-D or 3-D input, got {d_low}")));
        }
        let mut g = rng.rng();
        let w = gaussian_matrix(10, d_low, &mut g);
        let u = gaussian_matrix(100, 10, &mut g);
        Ok(Self { kind, w, u })
    }

    pub fn output_dim(&self) -> usize {
        match self.kind {
            LiftKind::SigmoidStack => self.u.rows(),
            _ => self.w.rows(),
        }
    }
}

#[inline]
pub(crate) fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn sigmoid_stack(h: &DenseMatrix, w: &DenseMatrix, u: &DenseMatrix) -> DenseMatrix {
    let inner = h.matmul_t(w).unwrap().map(sigmoid);
    inner.matmul_t(u).unwrap().map(sigmoid)
}

/// Apply a lifting transform to every row of `h`.
pub fn lift(h: &DenseMatrix, t: &LiftingTransform) -> Result<DenseMatrix> {
    if h.cols() != t.w.cols() {
        return Err(Error::dim("lift", t.w.cols(), h.cols()));
    }
    Ok(match t.kind {
        LiftKind::SigmoidStack => sigmoid_stack(h, &t.w, &t.u),
        LiftKind::SigmoidSquared => h.matmul_t(&t.w)?.map(|v| sigmoid(sigmoid(v)).powi(2)),
        LiftKind::TanSigmoid => h.matmul_t(&t.w)?.map(|v| sigmoid(v).tan()),
    })
}

/// Divide every entry by `divisor` (e.g. 255 for 8-bit pixels).
pub fn rescale_unit(m: &DenseMatrix, divisor: f64) -> Result<DenseMatrix> {
    if !(divisor > 0.0) || !divisor.is_finite() {
        return Err(Error::invalid(format!("divisor must be positive, got {divisor}")));
    }
    if divisor == 1.0 {
        return Ok(m.clone());
    }
    Ok(m.map(|v| v / divisor))
}

/// Rescale, then optionally L2-normalize rows.
pub fn preprocess(m: &DenseMatrix, divisor: f64, l2: bool) -> Result<DenseMatrix> {
    let scaled = rescale_unit(m, divisor)?;
    Ok(if l2 { row_l2_normalize(&scaled) } else { scaled })
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned())
}

/// CSV with header `x0,...,x{d-1}[,label]`.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty CSV file".into()))??;
    let names: Vec<&str> = header.trim_end_matches('\r').split(',').map(str::trim).collect();
    let has_labels = names.last() == Some(&"label");
    let d = names.len() - has_labels as usize;
    for (j, name) in names[..d].iter().enumerate() {
        if *name != format!("x{j}") {
            return Err(Error::Parse {
                row: 1,
                column: j + 1,
                message: format!("expected header field 'x{j}', found '{name}'"),
            });
        }
    }
    if d == 0 {
        return Err(Error::Format("CSV header declares no feature columns".into()));
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut n = 0;
    for (idx, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let row = idx + 2;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != names.len() {
            return Err(Error::Parse {
                row,
                column: fields.len().min(names.len()),
                message: format!("expected {} fields, found {}", names.len(), fields.len()),
            });
        }
        for (j, f) in fields[..d].iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                row,
                column: j + 1,
                message: format!("'{f}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: j + 1,
                    message: "non-finite value".into(),
                });
            }
            values.push(v);
        }
        if has_labels {
            let f = fields[d];
            let l: usize = f.parse().map_err(|_| Error::Parse {
                row,
                column: d + 1,
                message: format!("'{f}' is not a nonnegative integer label"),
            })?;
            labels.push(l);
        }
        n += 1;
    }
    Dataset::new(stem(path), DenseMatrix::new(n, d, values)?, has_labels.then_some(labels))
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut header: Vec<String> = (0..ds.x.cols()).map(|j| format!("x{j}")).collect();
    if ds.labels.is_some() {
        header.push("label".into());
    }
    writeln!(w, "{}", header.join(","))?;
    for (i, r) in ds.x.row_iter().enumerate() {
        let mut fields: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
        if let Some(l) = &ds.labels {
            fields.push(l[i].to_string());
        }
        writeln!(w, "{}", fields.join(","))?;
    }
    w.flush()?;
    Ok(())
}

const BINARY_MAGIC: &[u8; 4] = b"SCE1";

/// Binary layout: `SCE1`, rows (u64 LE), cols (u64 LE), label flag (u8),
/// rows×cols f64 LE row-major, then rows i32 LE labels when flagged.
pub fn write_binary<W: Write>(mut w: W, x: &DenseMatrix, labels: Option<&[usize]>) -> Result<()> {
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&(x.rows() as u64).to_le_bytes())?;
    w.write_all(&(x.cols() as u64).to_le_bytes())?;
    w.write_all(&[labels.is_some() as u8])?;
    for v in x.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    if let Some(l) = labels {
        for &v in l {
            let v = i32::try_from(v).map_err(|_| Error::invalid(format!("label {v} does not fit in i32")))?;
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<(DenseMatrix, Option<Vec<usize>>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Format("truncated header".into()))?;
    if &magic != BINARY_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut u = [0u8; 8];
    r.read_exact(&mut u).map_err(|_| Error::Format("truncated header".into()))?;
    let rows = u64::from_le_bytes(u) as usize;
    r.read_exact(&mut u).map_err(|_| Error::Format("truncated header".into()))?;
    let cols = u64::from_le_bytes(u) as usize;
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag).map_err(|_| Error::Format("truncated header".into()))?;
    if flag[0] > 1 {
        return Err(Error::Format(format!("label flag must be 0 or 1, got {}", flag[0])));
    }
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("matrix size overflows".into()))?;
    let mut values = Vec::with_capacity(count.min(1 << 24));
    for idx in 0..count {
        r.read_exact(&mut u).map_err(|_| Error::Format(format!("truncated data at value {idx}")))?;
        let v = f64::from_le_bytes(u);
        if !v.is_finite() {
            return Err(Error::Parse {
                row: idx / cols.max(1),
                column: idx % cols.max(1),
                message: "non-finite value".into(),
            });
        }
        values.push(v);
    }
    let labels = if flag[0] == 1 {
        let mut b = [0u8; 4];
        let mut out = Vec::with_capacity(rows);
        for i in 0..rows {
            r.read_exact(&mut b).map_err(|_| Error::Format(format!("truncated labels at row {i}")))?;
            let l = i32::from_le_bytes(b);
            let l = usize::try_from(l).map_err(|_| Error::Parse {
                row: i,
                column: cols,
                message: format!("negative label {l}"),
            })?;
            out.push(l);
        }
        Some(out)
    } else {
        None
    };
    Ok((DenseMatrix::new(rows, cols, values)?, labels))
}

pub fn save_binary(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_binary(&mut w, &ds.x, ds.labels.as_deref())?;
    w.flush()?;
    Ok(())
}

pub fn load_binary(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let (x, labels) = read_binary(BufReader::new(File::open(path)?))?;
    Dataset::new(stem(path), x, labels)
}

/// Load by extension: `.csv` as CSV, anything else as the binary format.
pub fn load_any(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        load_csv(path)
    } else {
        load_binary(path)
    }
}

/// Labels from a `.csv` file (the `label` column, or the only column) or
/// from a labelled binary file.
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    if !path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        return load_binary(path)?
            .labels
            .ok_or_else(|| Error::Format(format!("{} carries no labels", path.display())));
    }
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty CSV file".into()))??;
    let names: Vec<&str> = header.trim_end_matches('\r').split(',').map(str::trim).collect();
    let col = match names.iter().position(|n| *n == "label") {
        Some(c) => c,
        None if names.len() == 1 => 0,
        None => return Err(Error::Format("label file needs a 'label' column".into())),
    };
    let mut out = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let row = idx + 2;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != names.len() {
            return Err(Error::Parse {
                row,
                column: fields.len().min(names.len()),
                message: format!("expected {} fields, found {}", names.len(), fields.len()),
            });
        }
        out.push(fields[col].parse().map_err(|_| Error::Parse {
            row,
            column: col + 1,
            message: format!("'{}' is not a nonnegative integer label", fields[col]),
        })?);
    }
    Ok(out)
}

/// One `label` column.
pub fn save_labels(labels: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "label")?;
    for l in labels {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}
