//! Proper orthogonal decomposition of snapshot fields, autoregressive
//! windowing of the modal coefficients, and snapshot I/O.
//!
//! Snapshots are stored as an `N_m × T` matrix whose columns are the field
//! at successive time points.

use crate::error::{dim_err, Error, Result};
use crate::numerics::{DenseMatrix, RngStream};
use crate::scalar::Real;
use std::io::{Read, Write};
use std::path::Path;

/// Look-back window used to turn coefficient series into regression pairs.
pub const DEFAULT_WINDOW: usize = 10;

/// Magic bytes opening a binary snapshot file.
pub const SNAPSHOT_MAGIC: &[u8; 8] = b"MTGPSNAP";

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix<T> {
    values: DenseMatrix<T>,
}

impl<T: Real> SnapshotMatrix<T> {
    pub fn new(values: DenseMatrix<T>) -> Result<Self> {
        if values.cols() < 2 {
            return Err(Error::SizeMismatch(format!("need at least 2 snapshots, got {}", values.cols())));
        }
        if values.rows() == 0 {
            return Err(Error::SizeMismatch("snapshots have no mesh nodes".into()));
        }
        if !values.is_finite() {
            return Err(Error::SchemaMismatch("non-finite snapshot entry".into()));
        }
        Ok(Self { values })
    }

    pub fn n_mesh(&self) -> usize {
        self.values.rows()
    }

    pub fn n_time(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &DenseMatrix<T> {
        &self.values
    }

    /// Field at time index `t`.
    pub fn snapshot(&self, t: usize) -> Vec<T> {
        self.values.column(t)
    }

    /// Snapshots `range` as a new matrix.
    pub fn time_slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let n = self.n_mesh();
        let w = range.len();
        Self::new(DenseMatrix::from_fn(n, w, |i, j| self.values[(i, range.start + j)]))
    }
}

/// Truncated decomposition: `values ≈ center·1ᵀ + modes · coeffsᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis<T> {
    /// `N_m × R`, orthonormal columns.
    pub modes: DenseMatrix<T>,
    /// `T × R`; row `t` holds the coefficients of snapshot `t`.
    pub coeffs: DenseMatrix<T>,
    /// Leading `R` singular values, nonincreasing.
    pub singular_values: Vec<T>,
    /// Mean field removed before decomposing, if centering was requested.
    pub center: Option<Vec<T>>,
}

impl<T: Real> PodBasis<T> {
    pub fn rank(&self) -> usize {
        self.modes.cols()
    }

    /// Coefficients of an arbitrary field in this basis.
    pub fn project(&self, field: &[T]) -> Result<Vec<T>> {
        if field.len() != self.modes.rows() {
            return Err(dim_err(format!("field of length {}, basis has {} nodes", field.len(), self.modes.rows())));
        }
        let centered: Vec<T> = match &self.center {
            Some(c) => field.iter().zip(c).map(|(&u, &m)| u - m).collect(),
            None => field.to_vec(),
        };
        Ok((0..self.rank())
            .map(|k| (0..centered.len()).map(|i| self.modes[(i, k)] * centered[i]).sum())
            .collect())
    }

    /// `T × R` coefficients of every snapshot of `s` in this basis.
    pub fn project_all(&self, s: &SnapshotMatrix<T>) -> Result<DenseMatrix<T>> {
        let rows = (0..s.n_time()).map(|t| self.project(&s.snapshot(t))).collect::<Result<Vec<_>>>()?;
        DenseMatrix::from_rows(&rows)
    }
}

/// Rank-`r` POD without centering.
pub fn pod_decompose<T: Real>(s: &SnapshotMatrix<T>, r: usize) -> Result<PodBasis<T>> {
    pod_decompose_with(s, r, false)
}

/// Rank-`r` POD, optionally removing the temporal mean field first.
///
/// Each mode's sign is fixed so that its largest-magnitude entry is
/// positive, which makes the result deterministic.
pub fn pod_decompose_with<T: Real>(s: &SnapshotMatrix<T>, r: usize, center: bool) -> Result<PodBasis<T>> {
    let (n, t) = (s.n_mesh(), s.n_time());
    let max = n.min(t);
    if r == 0 || r > max {
        return Err(Error::RankTooLarge { rank: r, max });
    }
    let mean: Option<Vec<T>> = center.then(|| {
        (0..n).map(|i| s.values.row(i).iter().copied().sum::<T>() / T::lit(t as f64)).collect()
    });
    let a = nalgebra::DMatrix::from_fn(n, t, |i, j| {
        let v = s.values[(i, j)].as_f64();
        match &mean {
            Some(m) => v - m[i].as_f64(),
            None => v,
        }
    });
    let svd = a.svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));

    let mut modes = DenseMatrix::zeros(n, r);
    let mut coeffs = DenseMatrix::zeros(t, r);
    let mut sv = Vec::with_capacity(r);
    for (k, &idx) in order.iter().take(r).enumerate() {
        let col = u.column(idx);
        let pivot = col.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        let sigma = svd.singular_values[idx];
        for i in 0..n {
            modes[(i, k)] = T::lit(sign * col[i]);
        }
        for j in 0..t {
            coeffs[(j, k)] = T::lit(sign * sigma * v_t[(idx, j)]);
        }
        sv.push(T::lit(sigma));
    }
    Ok(PodBasis { modes, coeffs, singular_values: sv, center: mean })
}

/// Field `Σ_k coeffs_row[k]·mode_k` (plus the stored center, if any).
pub fn pod_reconstruct<T: Real>(basis: &PodBasis<T>, coeffs_row: &[T]) -> Result<Vec<T>> {
    if coeffs_row.len() != basis.rank() {
        return Err(dim_err(format!("{} coefficients for a rank-{} basis", coeffs_row.len(), basis.rank())));
    }
    let n = basis.modes.rows();
    Ok((0..n)
        .map(|i| {
            let base = basis.center.as_ref().map_or(T::zero(), |c| c[i]);
            base + coeffs_row.iter().enumerate().map(|(k, &a)| a * basis.modes[(i, k)]).sum::<T>()
        })
        .collect())
}

/// Rank-R approximation of every training snapshot, `N_m × T`.
pub fn pod_reconstruct_all<T: Real>(basis: &PodBasis<T>) -> Result<DenseMatrix<T>> {
    let cols = (0..basis.coeffs.rows())
        .map(|t| pod_reconstruct(basis, basis.coeffs.row(t)))
        .collect::<Result<Vec<_>>>()?;
    Ok(DenseMatrix::from_rows(&cols)?.transpose())
}

/// One-step-ahead supervised pairs: input row `i` is `series[i..i+window]`,
/// target `i` is `series[i+window]`.
pub fn ar_windowing<T: Real>(series: &[T], window: usize) -> Result<(DenseMatrix<T>, Vec<T>)> {
    if window == 0 || series.len() <= window {
        return Err(Error::SeriesTooShort { len: series.len(), window });
    }
    let n = series.len() - window;
    let x = DenseMatrix::from_fn(n, window, |i, j| series[i + j]);
    let y = series[window..].to_vec();
    Ok((x, y))
}

/// Snapshot CSV: one row per mesh node, one column per time point, no header.
pub fn write_snapshots_csv<T: Real>(s: &SnapshotMatrix<T>, path: &Path) -> Result<()> {
    let mut out = String::new();
    for i in 0..s.n_mesh() {
        let row: Vec<String> = s.values.row(i).iter().map(|v| format!("{}", v.as_f64())).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_snapshots_csv<T: Real>(path: &Path) -> Result<SnapshotMatrix<T>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<T>> = Vec::new();
    for (ln, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map(T::lit)
                    .map_err(|_| Error::SchemaMismatch(format!("line {}: bad number `{}`", ln + 1, f.trim())))
            })
            .collect::<Result<Vec<T>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::SchemaMismatch(format!(
                    "line {}: {} columns, expected {}",
                    ln + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::SchemaMismatch("empty snapshot file".into()));
    }
    SnapshotMatrix::new(DenseMatrix::from_rows(&rows)?)
}

/// Binary layout: magic, `u64` N_m, `u64` T (little endian), then the
/// values column by column as little-endian `f64`.
pub fn write_snapshots_bin<T: Real>(s: &SnapshotMatrix<T>, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + 8 * s.values.len());
    buf.extend_from_slice(SNAPSHOT_MAGIC);
    buf.extend_from_slice(&(s.n_mesh() as u64).to_le_bytes());
    buf.extend_from_slice(&(s.n_time() as u64).to_le_bytes());
    for t in 0..s.n_time() {
        for i in 0..s.n_mesh() {
            buf.extend_from_slice(&s.values[(i, t)].as_f64().to_le_bytes());
        }
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_snapshots_bin<T: Real>(path: &Path) -> Result<SnapshotMatrix<T>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 24 || &buf[..8] != SNAPSHOT_MAGIC {
        return Err(Error::SchemaMismatch("not a snapshot file (bad magic)".into()));
    }
    let word = |k: usize| u64::from_le_bytes(buf[k..k + 8].try_into().expect("8 bytes"));
    let (n, t) = (word(8) as usize, word(16) as usize);
    let expected = n.checked_mul(t).and_then(|v| v.checked_mul(8)).and_then(|v| v.checked_add(24));
    if expected != Some(buf.len()) {
        return Err(Error::SchemaMismatch(format!("header says {n}×{t} but file has {} bytes", buf.len())));
    }
    let mut values = DenseMatrix::zeros(n, t);
    for j in 0..t {
        for i in 0..n {
            let k = 24 + 8 * (j * n + i);
            values[(i, j)] = T::lit(f64::from_le_bytes(buf[k..k + 8].try_into().expect("8 bytes")));
        }
    }
    SnapshotMatrix::new(values)
}

/// Settings of the synthetic two-case snapshot generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSnapshots {
    pub n_mesh: usize,
    pub n_time: usize,
    pub rank: usize,
    pub noise_sd: f64,
}

impl Default for SyntheticSnapshots {
    fn default() -> Self {
        Self { n_mesh: 200, n_time: 200, rank: 5, noise_sd: 0.01 }
    }
}

/// Two related snapshot sets sharing spatial modes and temporal dynamics.
///
/// Mode `k` completes `k + 2` whole cycles over the record, so the temporal
/// coefficients are orthogonal and POD of the first case recovers the
/// generating modes. Amplitudes decay with `k`. The second case uses the
/// same frequencies with slightly smaller amplitudes and shifted phases,
/// then both get iid Gaussian noise.
pub fn synthetic_two_cases<T: Real>(
    cfg: &SyntheticSnapshots,
    seed: u64,
) -> Result<(SnapshotMatrix<T>, SnapshotMatrix<T>)> {
    let (n, t, r) = (cfg.n_mesh, cfg.n_time, cfg.rank);
    if r == 0 || r > n {
        return Err(Error::RankTooLarge { rank: r, max: n });
    }
    let mut rng = RngStream::new(seed, 0x90d);
    // orthonormal spatial modes by Gram–Schmidt on Gaussian columns
    let mut modes: Vec<Vec<f64>> = Vec::with_capacity(r);
    while modes.len() < r {
        let mut v: Vec<f64> = rng.normal_vec(n);
        for m in &modes {
            let d: f64 = v.iter().zip(m).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(m).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            modes.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    let freqs: Vec<f64> = (0..r).map(|k| std::f64::consts::TAU * (k + 2) as f64 / t as f64).collect();
    let amps: Vec<f64> = (0..r).map(|k| (r - k) as f64).collect();
    let phase_1: Vec<f64> = (0..r).map(|_| rng.uniform(0.0, std::f64::consts::TAU)).collect();
    let phase_2: Vec<f64> = phase_1.iter().map(|p| p + rng.uniform::<f64>(-0.5, 0.5)).collect();
    let scale_2: Vec<f64> = (0..r).map(|_| rng.uniform(0.8, 0.95)).collect();

    let mut build = |amp_scale: &[f64], phase: &[f64]| -> Result<SnapshotMatrix<T>> {
        let mut v = DenseMatrix::zeros(n, t);
        for j in 0..t {
            for k in 0..r {
                let a = amp_scale[k] * amps[k] * (freqs[k] * j as f64 + phase[k]).sin();
                for i in 0..n {
                    v[(i, j)] += T::lit(a * modes[k][i]);
                }
            }
            for i in 0..n {
                v[(i, j)] += T::lit(cfg.noise_sd * rng.normal::<f64>());
            }
        }
        SnapshotMatrix::new(v)
    };
    let first = build(&vec![1.0; r], &phase_1)?;
    let second = build(&scale_2, &phase_2)?;
    Ok((first, second))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(n: usize, t: usize, seed: u64) -> SnapshotMatrix<f64> {
        SnapshotMatrix::new(RngStream::new(seed, 0).normal_matrix(n, t)).unwrap()
    }

    fn frob(a: &DenseMatrix<f64>, b: &DenseMatrix<f64>) -> f64 {
        a.sub(b).frobenius_norm()
    }

    #[test]
    fn rank_one_recovered() {
        let mut rng = RngStream::new(1, 0);
        let phi: Vec<f64> = rng.normal_vec(6);
        let norm = phi.iter().map(|v| v * v).sum::<f64>().sqrt();
        let phi: Vec<f64> = phi.iter().map(|v| v / norm).collect();
        let a: Vec<f64> = rng.normal_vec(4);
        let s = SnapshotMatrix::new(DenseMatrix::from_fn(6, 4, |i, j| phi[i] * a[j])).unwrap();
        let b = pod_decompose(&s, 1).unwrap();
        let sign = b.modes[(0, 0)].signum() * phi[0].signum();
        for i in 0..6 {
            assert!((b.modes[(i, 0)] - sign * phi[i]).abs() < 1e-10);
        }
        assert!(frob(&pod_reconstruct_all(&b).unwrap(), s.values()) < 1e-10);
    }

    #[test]
    fn full_rank_is_exact() {
        let s = random(7, 5, 2);
        let b = pod_decompose(&s, 5).unwrap();
        let rel = frob(&pod_reconstruct_all(&b).unwrap(), s.values()) / s.values().frobenius_norm();
        assert!(rel < 1e-8);
    }

    #[test]
    fn truncation_error_is_tail_singular_values() {
        let s = random(20, 10, 3);
        let full = pod_decompose(&s, 10).unwrap();
        for r in 1..=10 {
            let b = pod_decompose(&s, r).unwrap();
            let err = frob(&pod_reconstruct_all(&b).unwrap(), s.values());
            let tail: f64 = full.singular_values[r..].iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((err - tail).abs() < 1e-9, "r={r}: {err} vs {tail}");
        }
    }

    #[test]
    fn modes_orthonormal_and_sorted() {
        let b = pod_decompose(&random(12, 9, 4), 6).unwrap();
        let g = b.modes.t_matmul(&b.modes);
        assert!(g.max_abs_diff(&DenseMatrix::identity(6)) < 1e-10);
        assert!(b.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn sign_convention_and_determinism() {
        let s = random(10, 8, 5);
        let a = pod_decompose(&s, 4).unwrap();
        let neg = SnapshotMatrix::new(s.values().scale(-1.0)).unwrap();
        let b = pod_decompose(&neg, 4).unwrap();
        for k in 0..4 {
            let col = a.modes.column(k);
            let big = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(big > 0.0);
        }
        // flipping the data flips the coefficients, never the modes
        assert!(a.modes.max_abs_diff(&b.modes) < 1e-10);
        assert!(a.coeffs.max_abs_diff(&b.coeffs.scale(-1.0)) < 1e-10);
    }

    #[test]
    fn projection_reproduces_coefficients() {
        let s = random(9, 6, 6);
        for center in [false, true] {
            let b = pod_decompose_with(&s, 3, center).unwrap();
            let p = b.project_all(&s).unwrap();
            assert!(p.max_abs_diff(&b.coeffs) < 1e-10);
        }
    }

    #[test]
    fn reconstruct_edge_cases() {
        let b = pod_decompose(&random(5, 4, 7), 2).unwrap();
        assert!(pod_reconstruct(&b, &[0.0, 0.0]).unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(pod_reconstruct(&b, &[1.0, 0.0]).unwrap(), b.modes.column(0));
        assert!(pod_reconstruct(&b, &[1.0]).is_err());
    }

    #[test]
    fn rank_errors() {
        let s = random(4, 3, 8);
        assert!(matches!(pod_decompose(&s, 4), Err(Error::RankTooLarge { rank: 4, max: 3 })));
        assert!(pod_decompose(&s, 0).is_err());
    }

    #[test]
    fn windowing_counts() {
        let series: Vec<f64> = (0..2000).map(|v| v as f64).collect();
        let (x, y) = ar_windowing(&series, DEFAULT_WINDOW).unwrap();
        assert_eq!((x.rows(), x.cols(), y.len()), (1990, 10, 1990));
        assert_eq!(x.row(3), &series[3..13]);
        assert_eq!(y[3], 13.0);
        assert_eq!(ar_windowing(&series[..30], 10).unwrap().1.len(), 20);
        assert_eq!(ar_windowing(&series[..20], 10).unwrap().1.len(), 10);
        let (_, yc) = ar_windowing(&[2.5; 15], 10).unwrap();
        assert!(yc.iter().all(|&v| v == 2.5));
        assert!(matches!(ar_windowing(&series[..10], 10), Err(Error::SeriesTooShort { .. })));
    }

    #[test]
    fn csv_and_binary_round_trip() {
        let dir = std::env::temp_dir().join(format!("mtgp-pod-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let s = random(4, 3, 9);
        write_snapshots_csv(&s, &dir.join("s.csv")).unwrap();
        assert_eq!(read_snapshots_csv::<f64>(&dir.join("s.csv")).unwrap(), s);
        write_snapshots_bin(&s, &dir.join("s.bin")).unwrap();
        assert_eq!(read_snapshots_bin::<f64>(&dir.join("s.bin")).unwrap(), s);
        std::fs::write(dir.join("bad.bin"), b"NOTSNAPS0000000000000000").unwrap();
        assert!(matches!(read_snapshots_bin::<f64>(&dir.join("bad.bin")), Err(Error::SchemaMismatch(_))));
        assert!(matches!(read_snapshots_csv::<f64>(&dir.join("none.csv")), Err(Error::MissingFile(_))));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn synthetic_cases_are_low_rank() {
        let cfg = SyntheticSnapshots { n_mesh: 40, n_time: 60, rank: 5, noise_sd: 0.01 };
        let (a, b) = synthetic_two_cases::<f64>(&cfg, 0).unwrap();
        assert_eq!((a.n_mesh(), a.n_time()), (40, 60));
        let basis = pod_decompose(&a, 8).unwrap();
        // weakest mode carries about sqrt(60 / 2) ~ 5.5; the noise floor is
        // about 0.01 * (sqrt(40) + sqrt(60)) ~ 0.14
        let (weak, floor) = (basis.singular_values[4], basis.singular_values[5]);
        assert!(weak > 3.0 && floor < 0.2 && weak > 20.0 * floor, "{weak} {floor}");
        assert_eq!(synthetic_two_cases::<f64>(&cfg, 0).unwrap().1, b);
    }
}
