//! Planted instances: the low-rank ground truth, the per-column Gaussian
//! sketches split into labeled batches, and the node column partition.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{gaussian_matrix, sym_eig, thin_qr, vec_norm, Matrix, RngStream};

/// A planted rank-r matrix together with the quantities the algorithms and
/// the theory refer to. `kappa` and `mu` are measured from the realized
/// instance, never assumed.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub n: usize,
    pub q: usize,
    pub r: usize,
    /// n x r orthonormal column basis.
    pub u_star: Matrix,
    /// r x q coefficient matrix (singular values included).
    pub b_star: Matrix,
    /// n x q planted matrix, equal to `u_star * b_star`.
    pub x_star: Matrix,
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub kappa: f64,
    pub mu: f64,
}

/// Generate a planted instance: the basis comes from orthonormalizing an
/// n x r Gaussian matrix, the coefficients are i.i.d. standard Gaussian.
///
/// Substream 0 of `stream` feeds the basis, substream 1 the coefficients.
pub fn generate_ground_truth(
    n: usize,
    q: usize,
    r: usize,
    stream: RngStream,
) -> Result<GroundTruth> {
    if r == 0 || r > n.min(q) {
        return Err(Error::InvalidDimensions(format!(
            "rank {r} not in 1..=min({n}, {q})"
        )));
    }
    let (u_star, _) = thin_qr(&gaussian_matrix(n, r, stream.substream(0)))
        .map_err(|_| Error::InvalidDimensions("degenerate Gaussian draw".into()))?;
    let b_star = gaussian_matrix(r, q, stream.substream(1));
    let x_star = u_star.mul(&b_star);

    // Singular values of b_star equal those of x_star; r x r Gram keeps
    // this cheap.
    let gram = b_star.mul(&b_star.transpose());
    let (eigs, _) = sym_eig(&gram)?;
    let sigma_max = eigs[0].max(0.0).sqrt();
    let sigma_min = eigs[r - 1].max(0.0).sqrt();
    let kappa = if sigma_min > 0.0 { sigma_max / sigma_min } else { f64::INFINITY };

    let mut gt = GroundTruth {
        n,
        q,
        r,
        u_star,
        b_star,
        x_star,
        sigma_max,
        sigma_min,
        kappa,
        mu: 1.0,
    };
    gt.mu = incoherence_mu(&gt);
    Ok(gt)
}

/// Smallest `mu` for which the column-energy bound
/// `max_k ||b*_k||^2 <= mu^2 r sigma_max^2 / q` holds with equality at the
/// maximizing column.
pub fn incoherence_mu(gt: &GroundTruth) -> f64 {
    let max_col_sq = (0..gt.q)
        .map(|k| {
            let col = gt.b_star.column(k);
            col.iter().map(|x| x * x).sum::<f64>()
        })
        .fold(0.0, f64::max);
    (gt.q as f64 * max_col_sq / (gt.r as f64 * gt.sigma_max * gt.sigma_max)).sqrt()
}

/// Disjoint contiguous column blocks covering `0..q`, one per node. The
/// first `q mod l` nodes take the extra column.
#[derive(Debug, Clone)]
pub struct ColumnPartition {
    pub sets: Vec<Vec<usize>>,
}

impl ColumnPartition {
    pub fn num_nodes(&self) -> usize {
        self.sets.len()
    }
}

pub fn partition_columns(q: usize, l: usize) -> Result<ColumnPartition> {
    if l == 0 || l > q {
        return Err(Error::TooManyNodes { q, l });
    }
    let base = q / l;
    let extra = q % l;
    let mut sets = Vec::with_capacity(l);
    let mut next = 0usize;
    for g in 0..l {
        let len = base + usize::from(g < extra);
        sets.push((next..next + len).collect());
        next += len;
    }
    debug_assert_eq!(next, q);
    Ok(ColumnPartition { sets })
}

/// Which measurement batch an algorithm step consumes.
///
/// `Threshold` and `Spectral` feed the initialization; `Gd(t)` with
/// `t in 1..=2T` feed the descent iterations (minimization uses `Gd(t)`,
/// the gradient uses `Gd(T + t)` when sample splitting is on).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchLabel {
    Threshold,
    Spectral,
    Gd(usize),
}

impl BatchLabel {
    fn index(self) -> usize {
        match self {
            BatchLabel::Threshold => 0,
            BatchLabel::Spectral => 1,
            BatchLabel::Gd(t) => {
                assert!(t >= 1, "GD batches are 1-based");
                t + 1
            }
        }
    }
}

/// One batch: per column `k`, the m x n sketch `a[k]` and the m-vector
/// `y[k] = a[k] * x*_k`.
#[derive(Debug)]
pub struct Batch {
    pub a: Vec<Matrix>,
    pub y: Vec<Vec<f64>>,
}

/// How batches are held in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoragePolicy {
    /// All `2T + 2` batches generated up front.
    Materialize,
    /// Batches re-derived from their substreams on every access.
    OnDemand,
    /// Materialize when the total footprint stays under ~256 MB.
    Auto,
}

/// The full measurement structure: `2T + 2` labeled batches of per-column
/// Gaussian sketches. Batches are derived from disjoint substreams of one
/// root stream, so the on-demand and materialized representations are
/// bit-identical.
pub struct MeasurementSet {
    pub m: usize,
    pub t_max: usize,
    n: usize,
    q: usize,
    stream: RngStream,
    x_star: Arc<Matrix>,
    cache: Option<Vec<Arc<Batch>>>,
}

impl MeasurementSet {
    pub fn num_batches(&self) -> usize {
        2 * self.t_max + 2
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Fetch a batch, regenerating it when not cached.
    pub fn batch(&self, label: BatchLabel) -> Arc<Batch> {
        let idx = label.index();
        assert!(idx < self.num_batches(), "batch label out of range");
        match &self.cache {
            Some(batches) => Arc::clone(&batches[idx]),
            None => Arc::new(generate_batch(self.stream, idx, &self.x_star, self.m)),
        }
    }
}

fn generate_batch(root: RngStream, index: usize, x_star: &Matrix, m: usize) -> Batch {
    let (n, q) = (x_star.rows(), x_star.cols());
    let mut a = Vec::with_capacity(q);
    let mut y = Vec::with_capacity(q);
    for k in 0..q {
        let sub = root.substream((index * q + k) as u64);
        let ak = gaussian_matrix(m, n, sub);
        let yk = ak.mul_vec(&x_star.column(k));
        a.push(ak);
        y.push(yk);
    }
    Batch { a, y }
}

/// Draw `2T + 2` batches of fresh i.i.d. Gaussian sketches of `gt`.
pub fn generate_measurements(
    gt: &GroundTruth,
    m: usize,
    t_max: usize,
    stream: RngStream,
    policy: StoragePolicy,
) -> MeasurementSet {
    assert!(m >= 1 && t_max >= 1);
    let batches = 2 * t_max + 2;
    let floats = batches * gt.q * m * (gt.n + 1);
    let materialize = match policy {
        StoragePolicy::Materialize => true,
        StoragePolicy::OnDemand => false,
        StoragePolicy::Auto => floats <= 32_000_000,
    };
    let x_star = Arc::new(gt.x_star.clone());
    let cache = materialize.then(|| {
        (0..batches)
            .map(|idx| Arc::new(generate_batch(stream, idx, &x_star, m)))
            .collect()
    });
    MeasurementSet { m, t_max, n: gt.n, q: gt.q, stream, x_star, cache }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::subspace_distance;
    use crate::numerics::spectral_norm;

    #[test]
    fn scalar_instance() {
        let gt = generate_ground_truth(1, 1, 1, RngStream::new(1, 0)).unwrap();
        assert_eq!(gt.x_star.rows(), 1);
        assert_eq!(gt.x_star.cols(), 1);
        assert!((gt.kappa - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_by_construction() {
        let gt = generate_ground_truth(50, 50, 2, RngStream::new(7, 0)).unwrap();
        // third singular value of x_star is zero up to rounding
        let g = gt.x_star.t_mul(&gt.x_star);
        let (eigs, _) = sym_eig(&g).unwrap();
        let s3 = eigs[2].max(0.0).sqrt();
        assert!(s3 <= 1e-10 * gt.sigma_max, "third singular value {s3}");
        // factorization and orthonormality invariants
        assert!(
            gt.x_star.sub(&gt.u_star.mul(&gt.b_star)).frobenius_norm()
                <= 1e-10 * gt.x_star.frobenius_norm()
        );
        gt.u_star.check_orthonormal(1e-10).unwrap();
    }

    #[test]
    fn kappa_mu_match_full_svd_oracle() {
        let gt = generate_ground_truth(100, 100, 2, RngStream::new(42, 0)).unwrap();
        // Oracle: eigen-decompose the q x q Gram of x_star directly.
        let g = gt.x_star.t_mul(&gt.x_star);
        let (eigs, _) = sym_eig(&g).unwrap();
        let smax = eigs[0].max(0.0).sqrt();
        let smin = eigs[1].max(0.0).sqrt();
        assert!((gt.sigma_max - smax).abs() < 1e-8 * smax);
        assert!((gt.kappa - smax / smin).abs() < 1e-8 * gt.kappa);
        // mu oracle from column norms of x_star (== column norms of b_star)
        let max_col = (0..gt.q)
            .map(|k| vec_norm(&gt.x_star.column(k)).powi(2))
            .fold(0.0, f64::max);
        let mu_oracle = (gt.q as f64 * max_col / (gt.r as f64 * smax * smax)).sqrt();
        assert!((gt.mu - mu_oracle).abs() < 1e-8 * mu_oracle);
    }

    #[test]
    fn mu_is_at_least_one() {
        for seed in 0..5 {
            let gt = generate_ground_truth(30, 40, 3, RngStream::new(seed, 0)).unwrap();
            assert!(gt.mu >= 1.0 - 1e-12);
        }
    }

    #[test]
    fn mu_flat_energy_and_spike() {
        // all columns equal norm, sigma_max^2 = q ||col||^2 / r  => mu = 1
        let q = 4;
        let mut b = Matrix::zeros(2, q);
        for k in 0..q {
            b.set(k % 2, k, 1.0);
        }
        let gt = synthetic_gt(b);
        assert!((incoherence_mu(&gt) - 1.0).abs() < 1e-12);

        // single nonzero column: mu = sqrt(q / r)
        let mut b = Matrix::zeros(2, 4);
        b.set(0, 0, 3.0);
        let gt = synthetic_gt(b);
        assert!((incoherence_mu(&gt) - (4.0f64 / 2.0).sqrt()).abs() < 1e-12);
    }

    fn synthetic_gt(b_star: Matrix) -> GroundTruth {
        let (r, q) = (b_star.rows(), b_star.cols());
        let n = r;
        let u_star = Matrix::identity(n);
        let x_star = u_star.mul(&b_star);
        let gram = b_star.mul(&b_star.transpose());
        let (eigs, _) = sym_eig(&gram).unwrap();
        GroundTruth {
            n,
            q,
            r,
            u_star,
            b_star,
            x_star,
            sigma_max: eigs[0].max(0.0).sqrt(),
            sigma_min: eigs[r - 1].max(0.0).sqrt(),
            kappa: (eigs[0] / eigs[r - 1]).sqrt(),
            mu: 1.0,
        }
    }

    #[test]
    fn partition_examples() {
        let p = partition_columns(6, 3).unwrap();
        assert_eq!(p.sets, vec![vec![0, 1], vec![2, 3], vec![4, 5]]);
        let p = partition_columns(7, 3).unwrap();
        assert_eq!(p.sets.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 2, 2]);
        let p = partition_columns(600, 20).unwrap();
        assert!(p.sets.iter().all(|s| s.len() == 30));
        assert!(partition_columns(3, 4).is_err());
    }

    #[test]
    fn planted_basis_spans_x_star() {
        let gt = generate_ground_truth(40, 30, 3, RngStream::new(3, 0)).unwrap();
        // Any r independent columns of x_star span the planted subspace.
        let mut first = Matrix::zeros(gt.n, gt.r);
        for j in 0..gt.r {
            for i in 0..gt.n {
                first.set(i, j, gt.x_star.get(i, j));
            }
        }
        let (qx, _) = thin_qr(&first).unwrap();
        assert!(subspace_distance(&qx, &gt.u_star).unwrap() <= 1e-10);
    }

    #[test]
    fn measurements_are_definitional_and_reproducible() {
        let gt = generate_ground_truth(12, 9, 2, RngStream::new(5, 0)).unwrap();
        let ms = generate_measurements(&gt, 6, 2, RngStream::new(5, 1), StoragePolicy::Materialize);
        assert_eq!(ms.num_batches(), 6);
        for label in [BatchLabel::Threshold, BatchLabel::Spectral, BatchLabel::Gd(1), BatchLabel::Gd(4)] {
            let b = ms.batch(label);
            for k in 0..gt.q {
                let resid: f64 = b.y[k]
                    .iter()
                    .zip(b.a[k].mul_vec(&gt.x_star.column(k)))
                    .map(|(y, ax)| (y - ax) * (y - ax))
                    .sum();
                assert!(resid.sqrt() <= 1e-10);
            }
        }
        // on-demand equals materialized bit for bit
        let od = generate_measurements(&gt, 6, 2, RngStream::new(5, 1), StoragePolicy::OnDemand);
        let b1 = ms.batch(BatchLabel::Gd(3));
        let b2 = od.batch(BatchLabel::Gd(3));
        for k in 0..gt.q {
            assert_eq!(b1.a[k].as_slice(), b2.a[k].as_slice());
            assert_eq!(b1.y[k], b2.y[k]);
        }
        // distinct labels use distinct substreams
        let t = ms.batch(BatchLabel::Threshold);
        let s = ms.batch(BatchLabel::Spectral);
        assert_ne!(t.a[0].as_slice(), s.a[0].as_slice());
    }

    #[test]
    fn zero_column_gives_zero_measurement() {
        let mut gt = generate_ground_truth(8, 4, 2, RngStream::new(6, 0)).unwrap();
        for i in 0..gt.n {
            gt.x_star.set(i, 0, 0.0);
        }
        let ms = generate_measurements(&gt, 5, 1, RngStream::new(6, 1), StoragePolicy::Materialize);
        let b = ms.batch(BatchLabel::Spectral);
        assert!(b.y[0].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sketch_energy_matches_gaussian_isometry() {
        // E ||y_k||^2 = m ||x*_k||^2; check the empirical mean over many
        // redraws of a single column.
        let gt = generate_ground_truth(100, 1, 1, RngStream::new(8, 0)).unwrap();
        let x = gt.x_star.column(0);
        let x_sq = crate::numerics::dot(&x, &x);
        let m = 50;
        let mut total = 0.0;
        let redraws = 1000;
        for i in 0..redraws {
            let a = gaussian_matrix(m, gt.n, RngStream::new(8, 2).substream(i));
            let y = a.mul_vec(&x);
            total += crate::numerics::dot(&y, &y);
        }
        let mean = total / redraws as f64;
        let expected = m as f64 * x_sq;
        assert!(
            (mean - expected).abs() <= 0.05 * expected,
            "mean {mean} vs {expected}"
        );
    }

    #[test]
    fn spectral_norm_of_planted_matches_sigma_max() {
        let gt = generate_ground_truth(60, 45, 3, RngStream::new(10, 0)).unwrap();
        assert!((spectral_norm(&gt.x_star) - gt.sigma_max).abs() < 1e-8 * gt.sigma_max);
    }
}
