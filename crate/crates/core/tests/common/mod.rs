//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use refbcm::data::{Arm, PatientRecord, TrialDataset, VisitSchedule};
use refbcm::inference::{Layout, PriorSpec};
use refbcm::rng::stream;
use statrs::distribution::{Continuous, Normal};

/// Conditional moments from the joint precision `Q`: the unobserved block
/// has covariance `Q_uu^{-1}` and mean `mu_u - Q_uu^{-1} Q_uo (y_o - mu_o)`.
pub fn precision_oracle(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    obs: &[usize],
    y_obs: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = mean.len();
    let q = cov.clone().try_inverse().unwrap();
    let unobs: Vec<usize> = (0..n).filter(|i| !obs.contains(i)).collect();
    let quu = DMatrix::from_fn(unobs.len(), unobs.len(), |a, b| q[(unobs[a], unobs[b])]);
    let quo = DMatrix::from_fn(unobs.len(), obs.len(), |a, b| q[(unobs[a], obs[b])]);
    let cov_u = quu.try_inverse().unwrap();
    let resid = DVector::from_fn(obs.len(), |a, _| y_obs[a] - mean[obs[a]]);
    let mu_u = DVector::from_fn(unobs.len(), |a, _| mean[unobs[a]]);
    (mu_u - &cov_u * quo * resid, cov_u)
}

pub fn spd(entries: &[f64], n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_row_slice(n, n, &entries[..n * n]);
    &a * a.transpose() + DMatrix::identity(n, n) * 0.5
}

pub const J: usize = 3;

/// Twenty patients covering every likelihood pattern: complete and
/// intermittently missing controls, active completers, active discontinuers
/// with observed and with missing post-ICE blocks.
pub fn toy() -> TrialDataset {
    let mut rng = stream(11);
    let mut patients = Vec::new();
    let layouts: [(Arm, usize, &[usize]); 10] = [
        (Arm::Control, 3, &[]),
        (Arm::Control, 3, &[1]),
        (Arm::Control, 3, &[2]),
        (Arm::Control, 1, &[1, 2]),
        (Arm::Control, 2, &[]),
        (Arm::Active, 3, &[]),
        (Arm::Active, 1, &[]),
        (Arm::Active, 2, &[]),
        (Arm::Active, 1, &[1, 2]),
        (Arm::Active, 2, &[2]),
    ];
    for k in 0..20 {
        let (arm, d, missing) = layouts[k % 10];
        let baseline = 7.5 + rng.random::<f64>();
        let y = (0..J)
            .map(|v| (!missing.contains(&v)).then(|| 7.0 + 0.4 * baseline - 0.2 * v as f64 + rng.random::<f64>()))
            .collect();
        patients.push(PatientRecord {
            id: format!("p{k}"),
            arm,
            baseline,
            y,
            d,
        });
    }
    TrialDataset::new(VisitSchedule::new(vec![0.0, 4.0, 8.0, 12.0]).unwrap(), patients).unwrap()
}

pub fn point(layout: &Layout, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed);
    let mut v = vec![0.0; layout.dim()];
    for i in layout.mu_active().chain(layout.mu_control()) {
        v[i] = 3.0 + rng.random::<f64>();
    }
    for i in layout.alpha() {
        v[i] = 0.3 + 0.2 * rng.random::<f64>();
    }
    if let Some(i) = layout.k0() {
        v[i] = rng.random::<f64>() * 2.0 - 0.5;
    }
    for i in layout.log_sd() {
        v[i] = rng.random::<f64>() - 0.5;
    }
    for i in layout.corr() {
        v[i] = 2.0 * rng.random::<f64>() - 1.0;
    }
    v
}

pub fn corr_from(z: &[f64]) -> DMatrix<f64> {
    let mut l = DMatrix::<f64>::zeros(J, J);
    l[(0, 0)] = 1.0;
    let mut k = 0;
    for i in 1..J {
        let mut used: f64 = 0.0;
        for c in 0..i {
            l[(i, c)] = z[k].tanh() * (1.0 - used).sqrt();
            used += l[(i, c)] * l[(i, c)];
            k += 1;
        }
        l[(i, i)] = (1.0 - used).sqrt();
    }
    &l * l.transpose()
}

pub fn off_diagonal(r: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 1..J {
        for c in 0..i {
            out.push(r[(i, c)]);
        }
    }
    out
}

/// log |det d(offdiag R)/dz| by central differences.
pub fn corr_log_jacobian(z: &[f64]) -> f64 {
    let m = z.len();
    let h = 1e-6;
    let jac = DMatrix::from_fn(m, m, |row, col| {
        let mut up = z.to_vec();
        let mut down = z.to_vec();
        up[col] += h;
        down[col] -= h;
        (off_diagonal(&corr_from(&up))[row] - off_diagonal(&corr_from(&down))[row]) / (2.0 * h)
    });
    jac.determinant().abs().ln()
}

pub fn gauss_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let r = x - mean;
    let q = cov.clone().try_inverse().unwrap();
    -0.5 * (x.len() as f64 * (2.0 * std::f64::consts::PI).ln() + cov.determinant().ln() + (r.transpose() * q * &r)[(0, 0)])
}

pub fn sub(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| m[(rows[a], cols[b])])
}

pub fn pick(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |a, _| v[idx[a]])
}

pub fn oracle(v: &[f64], layout: &Layout, ds: &TrialDataset, prior: &PriorSpec, include_post_ice: bool) -> f64 {
    let mu_a = &v[layout.mu_active()];
    let mu_c = &v[layout.mu_control()];
    let alpha = &v[layout.alpha()];
    let k0 = layout.k0().map(|i| v[i]).or(layout.k0_fixed).unwrap();
    let sd: Vec<f64> = v[layout.log_sd()].iter().map(|x| x.exp()).collect();
    let z = &v[layout.corr()];
    let r = corr_from(z);
    let sigma = DMatrix::from_fn(J, J, |a, b| sd[a] * sd[b] * r[(a, b)]);

    let mut ll = 0.0;
    for p in ds.patients() {
        let x = p.baseline;
        let treated = DVector::from_fn(J, |i, _| mu_a[i] + alpha[i] * x);
        let control = DVector::from_fn(J, |i, _| mu_c[i] + alpha[i] * x);
        let y = DVector::from_fn(J, |i, _| p.y[i].unwrap_or(f64::NAN));
        match p.arm {
            Arm::Control => {
                let obs = p.observed_indices();
                ll += gauss_logpdf(&pick(&y, &obs), &pick(&control, &obs), &sub(&sigma, &obs, &obs));
            }
            Arm::Active => {
                let pre: Vec<usize> = (0..p.d).collect();
                ll += gauss_logpdf(&pick(&y, &pre), &pick(&treated, &pre), &sub(&sigma, &pre, &pre));
                if include_post_ice && p.has_ice() && p.post_ice_observed() {
                    // post-ICE given pre-ICE
                    let post: Vec<usize> = (p.d..J).collect();
                    let shift = k0 * (mu_a[p.d - 1] - mu_c[p.d - 1]);
                    let marginal = pick(&control, &post).add_scalar(shift);
                    let coef = sub(&sigma, &post, &pre) * sub(&sigma, &pre, &pre).try_inverse().unwrap();
                    let mean = marginal + &coef * (pick(&y, &pre) - pick(&treated, &pre));
                    let cov = sub(&sigma, &post, &post) - &coef * sub(&sigma, &pre, &post);
                    ll += gauss_logpdf(&pick(&y, &post), &mean, &cov);
                }
            }
        }
    }

    let normal = |sd: f64| Normal::new(0.0, sd).unwrap();
    let mut lp = ll;
    for i in 0..J {
        lp += normal(prior.mu_sd).ln_pdf(mu_a[i]) + normal(prior.mu_sd).ln_pdf(mu_c[i]);
        lp += normal(prior.alpha_sd).ln_pdf(alpha[i]);
    }
    if layout.k0().is_some() {
        lp += Normal::new(prior.k0_mean, prior.k0_sd).unwrap().ln_pdf(k0);
    }
    // half-normal SDs (unnormalized) with the log-scale Jacobian
    for (i, s) in sd.iter().enumerate() {
        lp += -0.5 * (s / prior.sd_scale).powi(2) + v[layout.log_sd().start + i];
    }
    // LKJ (unnormalized) on R with the Jacobian of z -> R
    lp += (prior.corr_eta - 1.0) * r.determinant().ln() + corr_log_jacobian(z);
    lp
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

pub struct LongHand {
    pub estimate: f64,
    pub within: f64,
    pub between: f64,
    pub total: f64,
    pub df: f64,
}

pub fn long_hand(q: &[f64], u: &[f64], nu_com: f64) -> LongHand {
    let m = q.len() as f64;
    let estimate = q.iter().sum::<f64>() / m;
    let within = u.iter().sum::<f64>() / m;
    let mut pairs = 0.0;
    for i in 0..q.len() {
        for k in 0..i {
            pairs += (q[i] - q[k]).powi(2);
        }
    }
    let between = pairs / (m * (m - 1.0));
    // relative increase in variance due to nonresponse
    let r = (1.0 + 1.0 / m) * between / within;
    let total = within * (1.0 + r);
    let gamma = r / (1.0 + r);
    let nu_old = (m - 1.0) * (1.0 + 1.0 / r).powi(2);
    let nu_obs = nu_com * (nu_com + 1.0) * (1.0 - gamma) / (nu_com + 3.0);
    LongHand {
        estimate,
        within,
        between,
        total,
        df: 1.0 / (1.0 / nu_old + 1.0 / nu_obs),
    }
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

