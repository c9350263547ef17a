//! Rubin's combining rules with Barnard–Rubin degrees of freedom.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PooledResult {
    pub estimate: f64,
    pub within_var: f64,
    pub between_var: f64,
    pub total_var: f64,
    pub df: f64,
    pub m: usize,
}

impl PooledResult {
    pub fn se(&self) -> f64 {
        self.total_var.sqrt()
    }
}

/// Pools `M >= 2` point estimates and their variances. `complete_df` is the
/// complete-data residual df; the small-sample df blends it with the
/// large-sample `(M - 1) / lambda^2`.
pub fn rubins_rules(points: &[f64], variances: &[f64], complete_df: f64) -> Result<PooledResult> {
    let m = points.len();
    if m < 2 || variances.len() != m {
        return Err(Error::InvalidArgument(format!(
            "Rubin's rules need at least 2 paired estimates, got {m} points and {} variances",
            variances.len()
        )));
    }
    let mf = m as f64;
    let estimate = points.iter().sum::<f64>() / mf;
    let within_var = variances.iter().sum::<f64>() / mf;
    let between_var = points.iter().map(|q| (q - estimate).powi(2)).sum::<f64>() / (mf - 1.0);
    let total_var = within_var + (1.0 + 1.0 / mf) * between_var;
    let lambda = if total_var > 0.0 {
        (1.0 + 1.0 / mf) * between_var / total_var
    } else {
        0.0
    };
    let nu_obs = (complete_df + 1.0) / (complete_df + 3.0) * complete_df * (1.0 - lambda);
    let df = if lambda > 0.0 {
        let nu_old = (mf - 1.0) / (lambda * lambda);
        nu_old * nu_obs / (nu_old + nu_obs)
    } else {
        nu_obs
    };
    Ok(PooledResult {
        estimate,
        within_var,
        between_var,
        total_var,
        df,
        m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_arithmetic() {
        let r = rubins_rules(&[0.0, 2.0], &[1.0, 1.0], 100.0).unwrap();
        assert_eq!(r.estimate, 1.0);
        assert_eq!(r.between_var, 2.0);
        assert_eq!(r.total_var, 4.0);
    }

    #[test]
    fn identical_points() {
        let r = rubins_rules(&[0.3; 5], &[0.01; 5], 997.0).unwrap();
        assert_eq!(r.between_var, 0.0);
        assert_eq!(r.total_var, r.within_var);
        assert!((r.df - 997.0).abs() / 997.0 < 0.005, "df {}", r.df);
    }

    #[test]
    fn needs_two() {
        assert!(rubins_rules(&[1.0], &[1.0], 10.0).is_err());
    }
}
