//! Posterior inference for the causal model: log density, MAP, NUTS sampling,
//! conjugate draws of the discontinuation proportions and chain diagnostics.

mod density;
mod diagnostics;
mod nuts;
mod optimize;
mod posterior;
mod transform;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use density::{log_posterior, Posterior};
pub use diagnostics::{diagnostics, ess_bulk, split_rhat, ChainDiagnostics};
pub use nuts::{NutsSettings, NutsStats};
pub use optimize::{fit_map, fit_map_fixed, refit_map, MapFit};
pub use posterior::{
    estimate_effect_bcm, posterior_mean_k0, sample_pi, sample_posterior, sample_posterior_fixed,
    PosteriorDraws, SamplerSettings,
};
pub use transform::{Layout, UnconstrainedVector};

/// A `k0` prior SD above this counts as non-informative when deciding whether
/// `k0` is identified without post-ICE observations.
pub const DIFFUSE_K0_SD: f64 = 10.0;

/// Dirichlet concentration for the discontinuation proportions: either one
/// value shared by every visit or a full vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Concentration {
    Shared(f64),
    PerVisit(Vec<f64>),
}

impl Concentration {
    pub fn values(&self, n_visits: usize) -> Result<Vec<f64>> {
        let v = match self {
            Concentration::Shared(a) => vec![*a; n_visits],
            Concentration::PerVisit(v) if v.len() == n_visits => v.clone(),
            Concentration::PerVisit(v) => {
                return Err(Error::InvalidArgument(format!(
                    "dirichlet_alpha has {} entries for {n_visits} visits",
                    v.len()
                )))
            }
        };
        if v.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidArgument("dirichlet_alpha must be positive".into()));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSpec {
    pub k0_mean: f64,
    pub k0_sd: f64,
    pub mu_sd: f64,
    pub alpha_sd: f64,
    pub dirichlet_alpha: Concentration,
    /// Scale of the half-normal prior on each marginal SD.
    pub sd_scale: f64,
    /// LKJ shape; 1 is uniform over correlation matrices.
    pub corr_eta: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            k0_mean: 0.0,
            k0_sd: 100.0,
            mu_sd: 100.0,
            alpha_sd: 100.0,
            dirichlet_alpha: Concentration::Shared(1.0),
            sd_scale: 5.0,
            corr_eta: 1.0,
        }
    }
}

impl PriorSpec {
    pub fn with_k0(k0_mean: f64, k0_sd: f64) -> Self {
        Self {
            k0_mean,
            k0_sd,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k0_sd", self.k0_sd),
            ("mu_sd", self.mu_sd),
            ("alpha_sd", self.alpha_sd),
            ("sd_scale", self.sd_scale),
        ];
        for (name, x) in positive {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {x}")));
            }
        }
        if !self.k0_mean.is_finite() {
            return Err(Error::InvalidArgument("k0_mean must be finite".into()));
        }
        if !(self.corr_eta >= 1.0 && self.corr_eta.is_finite()) {
            return Err(Error::InvalidArgument("corr_eta must be at least 1".into()));
        }
        let n = match &self.dirichlet_alpha {
            Concentration::Shared(_) => 1,
            Concentration::PerVisit(v) => v.len(),
        };
        self.dirichlet_alpha.values(n)?;
        Ok(())
    }
}

/// Rejects a free `k0` that neither data nor prior can pin down.
pub(crate) fn check_identifiable(post: &Posterior) -> Result<()> {
    if post.layout().k0().is_some()
        && !post.has_post_ice_information()
        && post.prior().k0_sd > DIFFUSE_K0_SD
    {
        return Err(Error::Identifiability(format!(
            "no observed post-ICE outcomes inform k0 and its prior SD {} is diffuse",
            post.prior().k0_sd
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_validation() {
        assert!(PriorSpec::default().validate().is_ok());
        let mut p = PriorSpec::default();
        p.corr_eta = 0.5;
        assert!(p.validate().is_err());
        p = PriorSpec::with_k0(0.0, 0.0);
        assert!(p.validate().is_err());
        p = PriorSpec::default();
        p.dirichlet_alpha = Concentration::PerVisit(vec![1.0, 0.0]);
        assert!(p.validate().is_err());
    }

    #[test]
    fn prior_from_toml() {
        let p: PriorSpec = toml::from_str("k0_sd = 0.5\ndirichlet_alpha = [1, 2, 3]").unwrap();
        assert_eq!(p.k0_sd, 0.5);
        assert_eq!(p.mu_sd, 100.0);
        assert_eq!(p.dirichlet_alpha.values(3).unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(toml::from_str::<PriorSpec>("k0_sdd = 1").is_err());
    }
}
