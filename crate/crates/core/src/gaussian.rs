//! Dense multivariate-normal utilities.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

const SYMMETRY_TOL: f64 = 1e-12;
const MAX_CONDITION: f64 = 1e12;

/// Cholesky factorization; on failure retries once with `1e-10 * trace / dim`
/// added to the diagonal.
pub fn robust_cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let n = m.nrows().max(1);
    let jitter = 1e-10 * m.trace().abs() / n as f64;
    let mut jittered = m.clone();
    for i in 0..m.nrows() {
        jittered[(i, i)] += jitter;
    }
    Cholesky::new(jittered)
        .ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))
}

/// Symmetric positive-definite covariance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct CovMatrix {
    m: DMatrix<f64>,
}

impl CovMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::Numerical("covariance must be a non-empty square matrix".into()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("covariance has non-finite entries".into()));
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        for i in 0..m.nrows() {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::Numerical(format!(
                        "covariance is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        robust_cholesky(&m)?;
        // Store the exactly symmetric version.
        let sym = (&m + m.transpose()) * 0.5;
        Ok(Self { m: sym })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            m: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn cholesky(&self) -> Cholesky<f64, Dyn> {
        robust_cholesky(&self.m).expect("validated at construction")
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }
}

impl TryFrom<Vec<Vec<f64>>> for CovMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Numerical("covariance rows have unequal length".into()));
        }
        CovMatrix::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }
}

impl From<CovMatrix> for Vec<Vec<f64>> {
    fn from(c: CovMatrix) -> Self {
        c.m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

/// Gaussian with a positive semi-definite covariance and a cached square-root
/// factor for sampling.
#[derive(Debug, Clone)]
pub struct ConditionalGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl ConditionalGaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || !cov.is_square() {
            return Err(Error::Numerical("mean/covariance dimension mismatch".into()));
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        let factor = psd_sqrt(&cov)?;
        Ok(Self { mean, cov, factor })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Lower factor `F` with `F F^T = cov`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }
}

/// Square-root factor of a PSD matrix: Cholesky when possible, otherwise a
/// clamped eigen decomposition.
pub(crate) fn psd_sqrt(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if cov.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if let Some(c) = Cholesky::new(cov.clone()) {
        return Ok(c.l());
    }
    let eig = cov.clone().symmetric_eigen();
    let largest = eig.eigenvalues.amax();
    if eig.eigenvalues.iter().any(|&l| l < -1e-10 * largest.max(f64::MIN_POSITIVE)) {
        return Err(Error::Numerical("covariance is not positive semi-definite".into()));
    }
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt))
}

/// First-order spatial power covariance: `cor(t_i, t_j) = rho^{|t_i - t_j| / 4}`.
pub fn spatial_power_cov(variances: &[f64], times: &[f64], rho: f64) -> Result<CovMatrix> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidArgument(format!("rho must lie in (0, 1), got {rho}")));
    }
    if variances.len() != times.len() || variances.is_empty() {
        return Err(Error::InvalidArgument("variances and times must have equal, non-zero length".into()));
    }
    if variances.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument("variances must be positive".into()));
    }
    let n = variances.len();
    let m = DMatrix::from_fn(n, n, |i, j| {
        rho.powf((times[i] - times[j]).abs() / 4.0) * (variances[i] * variances[j]).sqrt()
    });
    CovMatrix::new(m)
}

fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Distribution of the unobserved components given `obs_idx = obs_vals`.
/// Components of the result follow increasing index order.
pub fn mvn_condition(
    mean: &DVector<f64>,
    cov: &CovMatrix,
    obs_idx: &[usize],
    obs_vals: &DVector<f64>,
) -> Result<ConditionalGaussian> {
    let n = mean.len();
    if cov.dim() != n {
        return Err(Error::InvalidArgument("mean/covariance dimension mismatch".into()));
    }
    if obs_idx.len() != obs_vals.len() {
        return Err(Error::InvalidArgument("observed index/value length mismatch".into()));
    }
    let mut seen = vec![false; n];
    for &i in obs_idx {
        if i >= n || seen[i] {
            return Err(Error::InvalidArgument(format!("invalid observed index {i}")));
        }
        seen[i] = true;
    }
    if obs_idx.is_empty() || obs_idx.len() == n {
        return Err(Error::InvalidArgument(
            "observed set must be a non-empty proper subset".into(),
        ));
    }
    let unobs: Vec<usize> = (0..n).filter(|i| !seen[*i]).collect();
    let s = cov.matrix();
    let s_oo = select(s, obs_idx, obs_idx);
    let eig = s_oo.clone().symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 0.0) || hi / lo > MAX_CONDITION {
        return Err(Error::Numerical(format!(
            "observed covariance block is singular (condition number {:.3e})",
            hi / lo
        )));
    }
    let chol = robust_cholesky(&s_oo)?;
    let s_uo = select(s, &unobs, obs_idx);
    // B = S_uo S_oo^{-1}
    let b = chol.solve(&s_uo.transpose()).transpose();
    let mu_o = DVector::from_iterator(obs_idx.len(), obs_idx.iter().map(|&i| mean[i]));
    let mu_u = DVector::from_iterator(unobs.len(), unobs.iter().map(|&i| mean[i]));
    let cmean = mu_u + &b * (obs_vals - mu_o);
    let ccov = select(s, &unobs, &unobs) - &b * s_uo.transpose();
    ConditionalGaussian::new(cmean, ccov)
}

pub fn mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &CovMatrix) -> Result<f64> {
    if x.len() != mean.len() || cov.dim() != x.len() {
        return Err(Error::InvalidArgument("dimension mismatch in mvn_logpdf".into()));
    }
    let chol = Cholesky::new(cov.matrix().clone())
        .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
    Ok(logpdf_with(&chol, &(x - mean)))
}

pub(crate) fn logpdf_with(chol: &Cholesky<f64, Dyn>, resid: &DVector<f64>) -> f64 {
    let l = chol.l_dirty();
    let d = resid.len();
    let log_det: f64 = (0..d).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    let z = l
        .view((0, 0), (d, d))
        .solve_lower_triangular(resid)
        .expect("cholesky diagonal is positive");
    -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + z.norm_squared())
}

pub fn mvn_sample(g: &ConditionalGaussian, rng: &mut Stream) -> DVector<f64> {
    let z = DVector::from_fn(g.dim(), |_, _| StandardNormal.sample(rng));
    &g.mean + g.factor() * z
}
