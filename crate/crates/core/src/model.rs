//! Single-parameter reference-based causal model.
//!
//! Post-baseline outcomes follow an MMRM with arm-specific intercepts, a
//! shared baseline slope per visit and a covariance shared by both arms and
//! all discontinuation times. After discontinuation at visit `d` an active
//! patient's mean at every later visit is the control mean plus `k0` times
//! the treatment effect at visit `d`; conditional on the observed on-treatment
//! history the post-ICE block is Gaussian with the usual regression
//! adjustment and the Schur complement covariance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Arm;
use crate::error::{Error, Result};
use crate::gaussian::{psd_sqrt, robust_cholesky, ConditionalGaussian, CovMatrix};
use crate::rng::Stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalParams {
    /// On-treatment intercepts per visit, active arm.
    pub mu_active: Vec<f64>,
    /// Intercepts per visit, control arm.
    pub mu_control: Vec<f64>,
    /// Baseline slope per visit, shared by both arms.
    pub alpha: Vec<f64>,
    pub sigma: CovMatrix,
    pub k0: f64,
    /// Probability of discontinuing after visit d = 1..=j_max (last entry: completers).
    pub pi: Vec<f64>,
}

impl CausalParams {
    pub fn new(
        mu_active: Vec<f64>,
        mu_control: Vec<f64>,
        alpha: Vec<f64>,
        sigma: CovMatrix,
        k0: f64,
        pi: Vec<f64>,
    ) -> Result<Self> {
        let p = Self {
            mu_active,
            mu_control,
            alpha,
            sigma,
            k0,
            pi,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.n_visits();
        if j == 0
            || self.mu_control.len() != j
            || self.alpha.len() != j
            || self.sigma.dim() != j
            || self.pi.len() != j
        {
            return Err(Error::InvalidArgument(
                "causal parameters have inconsistent dimensions".into(),
            ));
        }
        if self.pi.iter().any(|&p| !(p >= 0.0)) || (self.pi.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(
                "pi must be non-negative and sum to one".into(),
            ));
        }
        if !self.k0.is_finite() {
            return Err(Error::InvalidArgument("k0 must be finite".into()));
        }
        Ok(())
    }

    pub fn n_visits(&self) -> usize {
        self.mu_active.len()
    }

    /// Treatment effect on the intercept scale at visit `d` (1-based).
    pub fn delta(&self, d: usize) -> f64 {
        self.mu_active[d - 1] - self.mu_control[d - 1]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("parameters serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        p.validate()?;
        Ok(p)
    }
}

/// Baseline-adjusted mean profiles for one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientMeans {
    pub active: DVector<f64>,
    pub control: DVector<f64>,
}

pub fn patient_means(p: &CausalParams, baseline: f64) -> PatientMeans {
    let j = p.n_visits();
    PatientMeans {
        active: DVector::from_fn(j, |v, _| p.mu_active[v] + p.alpha[v] * baseline),
        control: DVector::from_fn(j, |v, _| p.mu_control[v] + p.alpha[v] * baseline),
    }
}

/// Joint mean of a patient's outcome vector under the causal model: the
/// control profile for the control arm; for the active arm the treated
/// profile up to `d` and the shifted control profile afterwards.
pub fn template_mean(p: &CausalParams, arm: Arm, baseline: f64, d: usize) -> DVector<f64> {
    let means = patient_means(p, baseline);
    match arm {
        Arm::Control => means.control,
        Arm::Active => {
            let j = p.n_visits();
            if d >= j {
                return means.active;
            }
            let shift = p.k0 * p.delta(d);
            DVector::from_fn(j, |v, _| {
                if v < d {
                    means.active[v]
                } else {
                    means.control[v] + shift
                }
            })
        }
    }
}

/// Regression of the unobserved components on the observed ones for a fixed
/// covariance: `B = S_uo S_oo^{-1}` and the Schur complement.
#[derive(Debug, Clone)]
pub struct ConditioningPlan {
    pub observed: Vec<usize>,
    pub unobserved: Vec<usize>,
    pub coef: DMatrix<f64>,
    pub cov: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl ConditioningPlan {
    pub fn new(sigma: &CovMatrix, observed: &[usize]) -> Result<Self> {
        let n = sigma.dim();
        let unobserved: Vec<usize> = (0..n).filter(|i| !observed.contains(i)).collect();
        let s = sigma.matrix();
        let pick = |r: &[usize], c: &[usize]| DMatrix::from_fn(r.len(), c.len(), |i, j| s[(r[i], c[j])]);
        let s_uu = pick(&unobserved, &unobserved);
        let (coef, cov) = if observed.is_empty() {
            (DMatrix::zeros(unobserved.len(), 0), s_uu)
        } else {
            let s_uo = pick(&unobserved, observed);
            let chol = robust_cholesky(&pick(observed, observed))?;
            let coef = chol.solve(&s_uo.transpose()).transpose();
            let cov = s_uu - &coef * s_uo.transpose();
            (coef, (&cov + cov.transpose()) * 0.5)
        };
        let factor = psd_sqrt(&cov)?;
        Ok(Self {
            observed: observed.to_vec(),
            unobserved,
            coef,
            cov,
            factor,
        })
    }

    /// Conditional mean of the unobserved block given a joint mean and the
    /// observed values (in `observed` order).
    pub fn mean(&self, joint_mean: &DVector<f64>, y_obs: &[f64]) -> DVector<f64> {
        let resid = DVector::from_iterator(
            self.observed.len(),
            self.observed.iter().zip(y_obs).map(|(&i, &y)| y - joint_mean[i]),
        );
        let base = DVector::from_iterator(
            self.unobserved.len(),
            self.unobserved.iter().map(|&i| joint_mean[i]),
        );
        base + &self.coef * resid
    }

    pub fn sample(&self, mean: &DVector<f64>, rng: &mut Stream) -> DVector<f64> {
        use rand_distr::{Distribution, StandardNormal};
        let z = DVector::from_fn(mean.len(), |_, _| StandardNormal.sample(rng));
        mean + &self.factor * z
    }

    pub fn distribution(&self, mean: DVector<f64>) -> Result<ConditionalGaussian> {
        ConditionalGaussian::new(mean, self.cov.clone())
    }
}

/// Distribution of the post-ICE block `Y_{>d}` given the on-treatment history
/// `Y_{<=d}` for an active patient who discontinued after visit `d`.
pub fn post_ice_conditional(
    p: &CausalParams,
    baseline: f64,
    y_pre: &[f64],
    d: usize,
) -> Result<ConditionalGaussian> {
    let j = p.n_visits();
    if d < 1 || d >= j {
        return Err(Error::InvalidArgument(format!(
            "discontinuation visit {d} must lie in 1..{j}"
        )));
    }
    if y_pre.len() != d {
        return Err(Error::InvalidArgument(format!(
            "expected {d} pre-ICE outcomes, got {}",
            y_pre.len()
        )));
    }
    let plan = ConditioningPlan::new(&p.sigma, &(0..d).collect::<Vec<_>>())?;
    let mean = plan.mean(&template_mean(p, Arm::Active, baseline, d), y_pre);
    plan.distribution(mean)
}

/// Expected post-ICE outcomes after discontinuing at `d`, averaging over the
/// on-treatment history: control profile shifted by `k0 * delta_d`.
pub fn marginal_post_ice_mean(p: &CausalParams, baseline: f64, d: usize) -> Result<DVector<f64>> {
    let j = p.n_visits();
    if d < 1 || d >= j {
        return Err(Error::InvalidArgument(format!(
            "discontinuation visit {d} must lie in 1..{j}"
        )));
    }
    let t = template_mean(p, Arm::Active, baseline, d);
    Ok(t.rows(d, j - d).into_owned())
}

/// Treatment-policy effect at the final visit:
/// `pi_J * delta_J + sum_{d<J} pi_d * k0 * delta_d`.
///
/// The baseline slope is shared between arms and cancels, so the value does
/// not depend on `mean_baseline`.
pub fn policy_effect(p: &CausalParams, mean_baseline: f64) -> f64 {
    let means = patient_means(p, mean_baseline);
    let j = p.n_visits();
    let delta = |d: usize| means.active[d - 1] - means.control[d - 1];
    let completers = p.pi[j - 1] * delta(j);
    let discontinuers: f64 = (1..j).map(|d| p.pi[d - 1] * p.k0 * delta(d)).sum();
    completers + discontinuers
}
