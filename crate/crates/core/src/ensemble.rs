//! Jointly sparse signal ensembles, Gaussian sensing matrices and noisy
//! JSM-2 measurements `y^s = F^s x^s + n^s`.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{stream, Role};

/// Sorted set of `K` column indices drawn from `{0, .., N-1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SupportSet {
    indices: Vec<usize>,
    ambient_dim: usize,
}

impl SupportSet {
    pub fn new(mut indices: Vec<usize>, ambient_dim: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidDimension("support must be non-empty".into()));
        }
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidDimension(format!(
                "support indices must be distinct: {indices:?}"
            )));
        }
        if let Some(&last) = indices.last() {
            if last >= ambient_dim {
                return Err(Error::InvalidDimension(format!(
                    "support index {last} out of range for N = {ambient_dim}"
                )));
            }
        }
        Ok(Self {
            indices,
            ambient_dim,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    /// Indices of `self` that are not in `other` (`I \ J`).
    pub fn difference<'a>(&'a self, other: &'a SupportSet) -> impl Iterator<Item = usize> + 'a {
        self.indices.iter().copied().filter(move |&i| !other.contains(i))
    }
}

impl std::fmt::Display for SupportSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.indices.iter().map(|i| i.to_string()).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

/// Distribution of on-support amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum AmplitudeMode {
    /// Every on-support entry is `±x_min` with a random sign.
    #[default]
    Fixed,
    /// Magnitudes uniform on `[x_min, x_max]` with a random sign.
    Uniform { x_max: f64 },
}

/// `S` vectors of length `N` sharing one support.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseEnsemble {
    pub vectors: Vec<DVector<f64>>,
    pub support: SupportSet,
    /// Smallest squared on-support magnitude over all vectors.
    pub x_min_sq: f64,
}

impl SparseEnsemble {
    pub fn from_vectors(vectors: Vec<DVector<f64>>, support: SupportSet) -> Result<Self> {
        let n = support.ambient_dim();
        if vectors.is_empty() {
            return Err(Error::InvalidDimension("ensemble needs S >= 1 vectors".into()));
        }
        let mut x_min_sq = f64::INFINITY;
        for (s, v) in vectors.iter().enumerate() {
            if v.len() != n {
                return Err(Error::InvalidDimension(format!(
                    "vector {s} has length {} but N = {n}",
                    v.len()
                )));
            }
            for (i, &val) in v.iter().enumerate() {
                if support.contains(i) {
                    if val == 0.0 {
                        return Err(Error::InvalidParameter(format!(
                            "vector {s} vanishes at support index {i}"
                        )));
                    }
                    x_min_sq = x_min_sq.min(val * val);
                } else if val != 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "vector {s} is nonzero off support at {i}"
                    )));
                }
            }
        }
        Ok(Self {
            vectors,
            support,
            x_min_sq,
        })
    }

    pub fn count(&self) -> usize {
        self.vectors.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.support.ambient_dim()
    }
}

/// `S` independent `M×N` standard Gaussian matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingEnsemble {
    pub matrices: Vec<DMatrix<f64>>,
}

impl SensingEnsemble {
    pub fn new(matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = matrices
            .first()
            .ok_or_else(|| Error::InvalidDimension("sensing ensemble needs S >= 1".into()))?;
        let shape = first.shape();
        if matrices.iter().any(|m| m.shape() != shape) {
            return Err(Error::InvalidDimension(
                "all sensing matrices must share one shape".into(),
            ));
        }
        Ok(Self { matrices })
    }

    pub fn rows(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrices[0].ncols()
    }

    pub fn count(&self) -> usize {
        self.matrices.len()
    }

    /// Column `j` of matrix `s` as a contiguous slice.
    #[inline]
    pub fn column(&self, s: usize, j: usize) -> &[f64] {
        let m = self.rows();
        &self.matrices[s].as_slice()[j * m..(j + 1) * m]
    }
}

/// Measurement vectors together with the noise variance that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementEnsemble {
    pub measurements: Vec<DVector<f64>>,
    pub noise_var: f64,
}

impl MeasurementEnsemble {
    pub fn count(&self) -> usize {
        self.measurements.len()
    }

    pub fn rows(&self) -> usize {
        self.measurements.first().map_or(0, |y| y.len())
    }
}

/// Parameter point shared by the decoder, the bounds and the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub s: usize,
    pub noise_var: f64,
    pub x_min_sq: f64,
    pub rho: f64,
    /// Explicit typicality threshold; replaces `ρ⁻¹(1 − K/M)x_min²` when set.
    pub delta_override: Option<f64>,
}

impl ProblemParams {
    pub const DEFAULT_RHO: f64 = 2.0;

    pub fn new(n: usize, k: usize, m: usize, s: usize, noise_var: f64, x_min_sq: f64) -> Result<Self> {
        let p = Self {
            n,
            k,
            m,
            s,
            noise_var,
            x_min_sq,
            rho: Self::DEFAULT_RHO,
            delta_override: None,
        };
        p.validate()?;
        Ok(p)
    }

    /// Unit noise variance with `x_min² = snr`.
    pub fn from_snr(n: usize, k: usize, m: usize, s: usize, snr: f64) -> Result<Self> {
        Self::new(n, k, m, s, 1.0, snr)
    }

    pub fn with_rho(mut self, rho: f64) -> Result<Self> {
        self.rho = rho;
        self.validate()?;
        Ok(self)
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        self.delta_override = Some(delta);
        self.validate()?;
        Ok(self)
    }

    pub fn with_m(mut self, m: usize) -> Result<Self> {
        self.m = m;
        self.validate()?;
        Ok(self)
    }

    pub fn with_s(mut self, s: usize) -> Result<Self> {
        self.s = s;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.s == 0 {
            return Err(Error::InvalidParameter("K and S must be positive".into()));
        }
        if self.m <= self.k {
            return Err(Error::InvalidParameter(format!(
                "requires M > K (got M = {}, K = {})",
                self.m, self.k
            )));
        }
        if self.m > self.n {
            return Err(Error::InvalidParameter(format!(
                "requires M <= N (got M = {}, N = {})",
                self.m, self.n
            )));
        }
        if !(self.noise_var > 0.0 && self.noise_var.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "requires noise variance > 0 (got {})",
                self.noise_var
            )));
        }
        if !(self.x_min_sq > 0.0 && self.x_min_sq.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "requires x_min^2 > 0 (got {})",
                self.x_min_sq
            )));
        }
        if !(self.rho > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "requires rho > 1 (got {})",
                self.rho
            )));
        }
        if let Some(d) = self.delta_override {
            if !(d > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "requires delta > 0 (got {d})"
                )));
            }
        }
        Ok(())
    }

    pub fn snr_min(&self) -> f64 {
        self.x_min_sq / self.noise_var
    }

    /// The threshold `δ` in force: the override if present, else the ρ rule.
    pub fn delta(&self) -> f64 {
        self.delta_override
            .unwrap_or_else(|| rho_delta(self.k, self.m, self.x_min_sq, self.rho))
    }
}

pub(crate) fn rho_delta(k: usize, m: usize, x_min_sq: f64, rho: f64) -> f64 {
    (1.0 - k as f64 / m as f64) * x_min_sq / rho
}

/// Uniform `K`-subset of `{0..N}`.
pub fn sample_support(n: usize, k: usize, seed: u64) -> Result<SupportSet> {
    if k == 0 || k > n {
        return Err(Error::InvalidDimension(format!(
            "requires 1 <= K <= N (got K = {k}, N = {n})"
        )));
    }
    let mut rng = stream(seed, Role::Support, 0, 0);
    let picked = index::sample(&mut rng, n, k).into_vec();
    SupportSet::new(picked, n)
}

pub fn sample_sparse_ensemble(
    support: &SupportSet,
    count: usize,
    x_min: f64,
    mode: AmplitudeMode,
    seed: u64,
) -> Result<SparseEnsemble> {
    if !(x_min > 0.0 && x_min.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "requires x_min > 0 (got {x_min})"
        )));
    }
    if count == 0 {
        return Err(Error::InvalidDimension("requires S >= 1".into()));
    }
    if let AmplitudeMode::Uniform { x_max } = mode {
        if !(x_max >= x_min) || !x_max.is_finite() {
            return Err(Error::InvalidRange(format!(
                "uniform amplitudes need x_max >= x_min (got x_max = {x_max}, x_min = {x_min})"
            )));
        }
    }
    let n = support.ambient_dim();
    let vectors = (0..count)
        .map(|s| {
            let mut rng = stream(seed, Role::Signal, s as u64, 0);
            let mut v = DVector::zeros(n);
            for &i in support.indices() {
                let magnitude = match mode {
                    AmplitudeMode::Fixed => x_min,
                    AmplitudeMode::Uniform { x_max } => rng.random_range(x_min..=x_max),
                };
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                v[i] = sign * magnitude;
            }
            v
        })
        .collect();
    SparseEnsemble::from_vectors(vectors, support.clone())
}

pub fn sample_sensing(m: usize, n: usize, count: usize, seed: u64) -> Result<SensingEnsemble> {
    if m == 0 || n == 0 || count == 0 {
        return Err(Error::InvalidDimension(format!(
            "requires M, N, S >= 1 (got M = {m}, N = {n}, S = {count})"
        )));
    }
    let matrices = (0..count)
        .map(|s| {
            let mut rng = stream(seed, Role::Sensing, s as u64, 0);
            DMatrix::from_fn(m, n, |_, _| StandardNormal.sample(&mut rng))
        })
        .collect();
    SensingEnsemble::new(matrices)
}

pub fn measure(
    x: &SparseEnsemble,
    f: &SensingEnsemble,
    noise_var: f64,
    seed: u64,
) -> Result<MeasurementEnsemble> {
    if !(noise_var >= 0.0 && noise_var.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise variance must be >= 0 (got {noise_var})"
        )));
    }
    if x.count() != f.count() || x.ambient_dim() != f.cols() {
        return Err(Error::InvalidDimension(format!(
            "signal ensemble is {}x{} but sensing ensemble is {}x{}x{}",
            x.count(),
            x.ambient_dim(),
            f.count(),
            f.rows(),
            f.cols()
        )));
    }
    let sigma = noise_var.sqrt();
    let m = f.rows();
    let measurements = x
        .vectors
        .iter()
        .zip(&f.matrices)
        .enumerate()
        .map(|(s, (xs, fs))| {
            let mut y = DVector::zeros(m);
            for &j in x.support.indices() {
                y.axpy(xs[j], &fs.column(j), 1.0);
            }
            if noise_var > 0.0 {
                let mut rng = stream(seed, Role::Noise, s as u64, 0);
                for v in y.iter_mut() {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    *v += sigma * g;
                }
            }
            y
        })
        .collect();
    Ok(MeasurementEnsemble {
        measurements,
        noise_var,
    })
}

/// `min_s ||x^s_{I \ J}||²`.
pub fn min_residual_energy(x: &SparseEnsemble, j: &SupportSet) -> Result<f64> {
    if j.len() != x.support.len() || j.ambient_dim() != x.ambient_dim() {
        return Err(Error::InvalidDimension(format!(
            "candidate support {j} does not match |I| = {} in N = {}",
            x.support.len(),
            x.ambient_dim()
        )));
    }
    let missing: Vec<usize> = x.support.difference(j).collect();
    Ok(x.vectors
        .iter()
        .map(|v| missing.iter().map(|&i| v[i] * v[i]).sum::<f64>())
        .fold(f64::INFINITY, f64::min))
}

/// Manifest of an on-disk ensemble snapshot. Indices are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotManifest {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub s: usize,
    pub noise_var: f64,
    pub seed: u64,
    pub support: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Triplet {
    s: usize,
    row: usize,
    col: usize,
    value: f64,
}

pub const SNAPSHOT_MANIFEST: &str = "manifest.json";
pub const SNAPSHOT_SENSING: &str = "sensing.csv";
pub const SNAPSHOT_SIGNALS: &str = "signals.csv";
pub const SNAPSHOT_MEASUREMENTS: &str = "measurements.csv";

fn write_triplets<'a, I>(path: &std::path::Path, items: I) -> Result<()>
where
    I: IntoIterator<Item = &'a DMatrix<f64>>,
{
    let mut w = csv::Writer::from_path(path)?;
    for (s, mat) in items.into_iter().enumerate() {
        for col in 0..mat.ncols() {
            for row in 0..mat.nrows() {
                w.serialize(Triplet { s, row, col, value: mat[(row, col)] })?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_triplets(path: &std::path::Path, count: usize, rows: usize, cols: usize) -> Result<Vec<DMatrix<f64>>> {
    let mut out = vec![DMatrix::zeros(rows, cols); count];
    let mut seen = 0usize;
    for rec in csv::Reader::from_path(path)?.deserialize() {
        let t: Triplet = rec?;
        if t.s >= count || t.row >= rows || t.col >= cols {
            return Err(Error::InvalidDimension(format!(
                "{}: entry ({}, {}, {}) outside {count}x{rows}x{cols}",
                path.display(),
                t.s,
                t.row,
                t.col
            )));
        }
        out[t.s][(t.row, t.col)] = t.value;
        seen += 1;
    }
    if seen != count * rows * cols {
        return Err(Error::InvalidDimension(format!(
            "{}: expected {} entries, found {seen}",
            path.display(),
            count * rows * cols
        )));
    }
    Ok(out)
}

/// Writes signals, sensing matrices and measurements as `(s, row, col,
/// value)` CSV triplets next to a JSON manifest. Vectors are stored as
/// single-column matrices.
pub fn write_snapshot(
    dir: &std::path::Path,
    seed: u64,
    x: &SparseEnsemble,
    f: &SensingEnsemble,
    y: &MeasurementEnsemble,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = SnapshotManifest {
        n: f.cols(),
        k: x.support.len(),
        m: f.rows(),
        s: f.count(),
        noise_var: y.noise_var,
        seed,
        support: x.support.indices().to_vec(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(dir.join(SNAPSHOT_MANIFEST), json)?;
    let as_cols = |vs: &[DVector<f64>]| -> Vec<DMatrix<f64>> {
        vs.iter().map(|v| DMatrix::from_column_slice(v.len(), 1, v.as_slice())).collect()
    };
    write_triplets(&dir.join(SNAPSHOT_SENSING), &f.matrices)?;
    write_triplets(&dir.join(SNAPSHOT_SIGNALS), &as_cols(&x.vectors))?;
    write_triplets(&dir.join(SNAPSHOT_MEASUREMENTS), &as_cols(&y.measurements))?;
    Ok(())
}

pub fn read_snapshot(
    dir: &std::path::Path,
) -> Result<(SnapshotManifest, SparseEnsemble, SensingEnsemble, MeasurementEnsemble)> {
    let text = std::fs::read_to_string(dir.join(SNAPSHOT_MANIFEST))?;
    let man: SnapshotManifest = serde_json::from_str(&text).map_err(|e| Error::Io(e.to_string()))?;
    let to_vecs = |ms: Vec<DMatrix<f64>>| -> Vec<DVector<f64>> {
        ms.into_iter().map(|m| DVector::from_column_slice(m.as_slice())).collect()
    };
    let f = SensingEnsemble::new(read_triplets(&dir.join(SNAPSHOT_SENSING), man.s, man.m, man.n)?)?;
    let support = SupportSet::new(man.support.clone(), man.n)?;
    let x = SparseEnsemble::from_vectors(
        to_vecs(read_triplets(&dir.join(SNAPSHOT_SIGNALS), man.s, man.n, 1)?),
        support,
    )?;
    let y = MeasurementEnsemble {
        measurements: to_vecs(read_triplets(&dir.join(SNAPSHOT_MEASUREMENTS), man.s, man.m, 1)?),
        noise_var: man.noise_var,
    };
    Ok((man, x, f, y))
}
