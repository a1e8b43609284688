//! Multivariate Gaussian feature statistics, the Fréchet distance between
//! two of them, and the Inception Score. The matrix square root runs on a
//! hand-rolled cyclic Jacobi eigensolver; feature dimensions here are small
//! (tens), so the O(n^3)-per-sweep cost is irrelevant.

use super::masks::MetricsError;

/// Dense symmetric eigendecomposition by cyclic Jacobi rotations.
/// Returns (eigenvalues, eigenvectors) with eigenvector j stored in column j
/// of the row-major matrix v.
pub fn jacobi_eigh(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let off = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    s += m[p * n + q] * m[p * n + q];
                }
            }
        }
        s
    };
    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().max(1e-300);
    for _sweep in 0..100 {
        if off(&m) <= 1e-24 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eig: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    (eig, v)
}

fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    c
}

/// Symmetric PSD square root via eigendecomposition; eigenvalues below zero
/// (numerical noise) are clamped.
fn sqrtm_psd(a: &[f64], n: usize) -> Vec<f64> {
    let (eig, v) = jacobi_eigh(a, n);
    let mut out = vec![0.0; n * n];
    for (j, &l) in eig.iter().enumerate() {
        let r = l.max(0.0).sqrt();
        if r == 0.0 {
            continue;
        }
        for p in 0..n {
            let vp = v[p * n + j];
            if vp == 0.0 {
                continue;
            }
            for q in 0..n {
                out[p * n + q] += r * vp * v[q * n + j];
            }
        }
    }
    out
}

/// Mean, covariance (sample, n-1 denominator) and count of a feature set.
#[derive(Debug, Clone)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// Row-major d x d, symmetric.
    pub cov: Vec<f64>,
    pub count: usize,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn from_samples(samples: &[Vec<f64>]) -> Result<GaussianStats, MetricsError> {
        if samples.len() < 2 {
            return Err(MetricsError::Empty("need at least 2 samples for covariance".into()));
        }
        let d = samples[0].len();
        if samples.iter().any(|s| s.len() != d) {
            return Err(MetricsError::ShapeMismatch("ragged feature vectors".into()));
        }
        let n = samples.len() as f64;
        let mut mean = vec![0.0; d];
        for s in samples {
            for (m, &x) in mean.iter_mut().zip(s) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut cov = vec![0.0; d * d];
        for s in samples {
            for i in 0..d {
                let di = s[i] - mean[i];
                for j in i..d {
                    cov[i * d + j] += di * (s[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = cov[i * d + j] / (n - 1.0);
                cov[i * d + j] = v;
                cov[j * d + i] = v;
            }
        }
        Ok(GaussianStats { mean, cov, count: samples.len() })
    }
}

/// ||mu_a - mu_b||^2 + Tr(Ca + Cb - 2 (Ca^1/2 Cb Ca^1/2)^1/2).
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64, MetricsError> {
    let d = a.dim();
    if b.dim() != d {
        return Err(MetricsError::Dimension(d, b.dim()));
    }
    // Reject covariances that are indefinite beyond numerical noise.
    for (label, g) in [("a", a), ("b", b)] {
        let (eig, _) = jacobi_eigh(&g.cov, d);
        let lmax = eig.iter().cloned().fold(0.0f64, f64::max).max(1.0);
        let lmin = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        if lmin < -1e-6 * lmax {
            let _ = label;
            return Err(MetricsError::NonPsd(lmin));
        }
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let sa = sqrtm_psd(&a.cov, d);
    let inner = matmul(&matmul(&sa, &b.cov, d), &sa, d);
    // Symmetrize against accumulation noise before the eigensolve.
    let mut sym = inner.clone();
    for i in 0..d {
        for j in 0..d {
            sym[i * d + j] = 0.5 * (inner[i * d + j] + inner[j * d + i]);
        }
    }
    let (eig, _) = jacobi_eigh(&sym, d);
    let tr_sqrt: f64 = eig.iter().map(|&l| l.max(0.0).sqrt()).sum();
    let tr_a: f64 = (0..d).map(|i| a.cov[i * d + i]).sum();
    let tr_b: f64 = (0..d).map(|i| b.cov[i * d + i]).sum();
    Ok((mean_term + tr_a + tr_b - 2.0 * tr_sqrt).max(0.0))
}

/// exp of the mean KL divergence between each conditional distribution and
/// the marginal over all of them.
pub fn inception_score(frame_probabilities: &[Vec<f64>]) -> Result<f64, MetricsError> {
    if frame_probabilities.is_empty() {
        return Err(MetricsError::Empty("inception score over zero frames".into()));
    }
    let k = frame_probabilities[0].len();
    for (i, p) in frame_probabilities.iter().enumerate() {
        if p.len() != k {
            return Err(MetricsError::ShapeMismatch(format!("probability vector {i}")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || p.iter().any(|&v| v < 0.0) {
            return Err(MetricsError::BadProbs(format!("vector {i} sums to {sum}")));
        }
    }
    let n = frame_probabilities.len() as f64;
    let mut marginal = vec![0.0; k];
    for p in frame_probabilities {
        for (m, &v) in marginal.iter_mut().zip(p) {
            *m += v;
        }
    }
    for m in &mut marginal {
        *m /= n;
    }
    let mut mean_kl = 0.0;
    for p in frame_probabilities {
        let mut kl = 0.0;
        for (j, &v) in p.iter().enumerate() {
            if v > 0.0 {
                kl += v * (v / marginal[j]).ln();
            }
        }
        mean_kl += kl;
    }
    mean_kl /= n;
    Ok(mean_kl.exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Lcg(u64);

    impl Lcg {
        fn next_f64(&mut self) -> f64 {
            self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((self.0 >> 11) as f64) / ((1u64 << 53) as f64)
        }
    }

    #[test]
    fn jacobi_reconstructs_a_random_symmetric_matrix() {
        let n = 5;
        let mut rng = Lcg(3);
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = rng.next_f64() * 2.0 - 1.0;
                a[i * n + j] = v;
                a[j * n + i] = v;
            }
        }
        let (eig, v) = jacobi_eigh(&a, n);
        // V diag(eig) V^T == A.
        let mut vd = vec![0.0; n * n];
        for p in 0..n {
            for j in 0..n {
                vd[p * n + j] = v[p * n + j] * eig[j];
            }
        }
        let mut vt = vec![0.0; n * n];
        for p in 0..n {
            for q in 0..n {
                vt[p * n + q] = v[q * n + p];
            }
        }
        let rec = matmul(&vd, &vt, n);
        for i in 0..n * n {
            assert!((rec[i] - a[i]).abs() < 1e-9, "entry {i}");
        }
        // Columns orthonormal.
        for c1 in 0..n {
            for c2 in 0..n {
                let dot: f64 = (0..n).map(|r| v[r * n + c1] * v[r * n + c2]).sum();
                let expect = if c1 == c2 { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn frechet_identical_gaussians_is_zero() {
        let g = GaussianStats {
            mean: vec![0.3, -1.0, 2.0],
            cov: vec![2.0, 0.3, 0.1, 0.3, 1.0, 0.0, 0.1, 0.0, 0.5],
            count: 10,
        };
        let d = frechet_distance(&g, &g).unwrap();
        assert!(d.abs() < 1e-6, "{d}");
    }

    #[test]
    fn frechet_matches_one_dimensional_closed_form() {
        let a = GaussianStats { mean: vec![0.0], cov: vec![1.0], count: 10 };
        let b = GaussianStats { mean: vec![1.0], cov: vec![1.0], count: 10 };
        let d = frechet_distance(&a, &b).unwrap();
        assert!((d - 1.0).abs() < 1e-8, "{d}");
        // (mu1-mu2)^2 + (s1-s2)^2 with s = sqrt variance.
        let c = GaussianStats { mean: vec![2.0], cov: vec![4.0], count: 10 };
        let expect = (2.0f64 - 0.0).powi(2) + (2.0f64 - 1.0).powi(2);
        assert!((frechet_distance(&a, &c).unwrap() - expect).abs() < 1e-8);
    }

    #[test]
    fn frechet_diagonal_case_matches_per_dimension_sum() {
        let mut rng = Lcg(17);
        let d = 4;
        let mut ma = vec![0.0; d];
        let mut mb = vec![0.0; d];
        let mut ca = vec![0.0; d * d];
        let mut cb = vec![0.0; d * d];
        let mut expect = 0.0;
        for i in 0..d {
            ma[i] = rng.next_f64() * 4.0 - 2.0;
            mb[i] = rng.next_f64() * 4.0 - 2.0;
            let va = rng.next_f64() * 2.0 + 0.1;
            let vb = rng.next_f64() * 2.0 + 0.1;
            ca[i * d + i] = va;
            cb[i * d + i] = vb;
            expect += (ma[i] - mb[i]).powi(2) + (va.sqrt() - vb.sqrt()).powi(2);
        }
        let a = GaussianStats { mean: ma, cov: ca, count: 5 };
        let b = GaussianStats { mean: mb, cov: cb, count: 5 };
        let d1 = frechet_distance(&a, &b).unwrap();
        let d2 = frechet_distance(&b, &a).unwrap();
        assert!((d1 - expect).abs() < 1e-8, "{d1} vs {expect}");
        assert!((d1 - d2).abs() < 1e-8);
    }

    #[test]
    fn frechet_rejects_indefinite_covariance_and_bad_dims() {
        let a = GaussianStats { mean: vec![0.0, 0.0], cov: vec![1.0, 0.0, 0.0, -0.5], count: 4 };
        let b = GaussianStats { mean: vec![0.0, 0.0], cov: vec![1.0, 0.0, 0.0, 1.0], count: 4 };
        assert!(matches!(frechet_distance(&a, &b), Err(MetricsError::NonPsd(_))));
        let c = GaussianStats { mean: vec![0.0], cov: vec![1.0], count: 4 };
        assert!(matches!(frechet_distance(&b, &c), Err(MetricsError::Dimension(..))));
    }

    #[test]
    fn sample_statistics_use_the_unbiased_covariance() {
        let samples = vec![vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 4.0]];
        let g = GaussianStats::from_samples(&samples).unwrap();
        assert_eq!(g.mean, vec![3.0, 4.0]);
        // Hand-computed with denominator n-1 = 2.
        assert!((g.cov[0] - 4.0).abs() < 1e-12);
        assert!((g.cov[3] - 4.0).abs() < 1e-12);
        assert!((g.cov[1] - 2.0).abs() < 1e-12);
        assert_eq!(g.cov[1], g.cov[2]);
        assert_eq!(g.count, 3);
    }

    #[test]
    fn inception_score_boundary_values() {
        let uniform = vec![vec![0.25; 4]; 10];
        assert!((inception_score(&uniform).unwrap() - 1.0).abs() < 1e-9);

        // One-hot vectors uniformly covering K classes score exactly K.
        let k = 5;
        let mut onehots = Vec::new();
        for rep in 0..3 {
            for c in 0..k {
                let mut p = vec![0.0; k];
                p[c] = 1.0;
                onehots.push(p);
                let _ = rep;
            }
        }
        assert!((inception_score(&onehots).unwrap() - k as f64).abs() < 1e-6);

        assert!(inception_score(&[]).is_err());
        assert!(inception_score(&[vec![0.5, 0.6]]).is_err());
    }
}
