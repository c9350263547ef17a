//! Final-visit ANCOVA, interval construction and coverage.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{Arm, TrialDataset};
use crate::error::{Error, Result};

/// 97.5% standard normal quantile.
pub const Z_975: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_rhat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_ess: Option<f64>,
    /// `point ± 1.96 SE`, reported alongside quantile intervals.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normal_interval: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resamples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub imputations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: String,
    pub point: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    #[serde(default)]
    pub aux: Diagnostics,
}

impl EstimateReport {
    /// Report with a symmetric interval from `interval`.
    pub fn symmetric(method: impl Into<String>, point: f64, se: f64, df: Option<f64>) -> Self {
        let (ci_low, ci_high) = interval(point, se, df);
        Self {
            method: method.into(),
            point,
            se,
            ci_low,
            ci_high,
            aux: Diagnostics {
                df,
                ..Diagnostics::default()
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeKind {
    Classical,
    /// Heteroskedasticity-consistent (HC0) sandwich.
    Robust,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ancova {
    pub estimate: f64,
    pub se: f64,
    pub robust_se: f64,
    pub df: f64,
}

impl Ancova {
    pub fn se_of(&self, kind: SeKind) -> f64 {
        match kind {
            SeKind::Classical => self.se,
            SeKind::Robust => self.robust_se,
        }
    }
}

/// OLS of the final-visit outcome on intercept, baseline and treatment.
pub fn ancova(ds: &TrialDataset) -> Result<Ancova> {
    let j = ds.n_visits();
    let mut x = Vec::with_capacity(ds.len());
    let mut t = Vec::with_capacity(ds.len());
    let mut y = Vec::with_capacity(ds.len());
    for p in ds.patients() {
        let v = p.y[j - 1].ok_or_else(|| Error::Validation {
            patient: p.id.clone(),
            message: "final-visit outcome is missing".into(),
        })?;
        x.push(p.baseline);
        t.push(p.arm.indicator());
        y.push(v);
    }
    ancova_arrays(&x, &t, &y)
}

/// ANCOVA on parallel arrays of baseline, treatment indicator and outcome.
pub fn ancova_arrays(baseline: &[f64], treat: &[f64], y: &[f64]) -> Result<Ancova> {
    let n = y.len();
    if n < 4 {
        return Err(Error::Numerical("ANCOVA needs at least 4 patients".into()));
    }
    // centred columns keep the normal equations well conditioned
    let xm = baseline.iter().sum::<f64>() / n as f64;
    let tm = treat.iter().sum::<f64>() / n as f64;
    let ym = y.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut sxt, mut stt, mut sxy, mut sty) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        let (a, b, c) = (baseline[i] - xm, treat[i] - tm, y[i] - ym);
        sxx += a * a;
        sxt += a * b;
        stt += b * b;
        sxy += a * c;
        sty += b * c;
    }
    let det = sxx * stt - sxt * sxt;
    if !(det > 1e-12 * (sxx * stt).max(f64::MIN_POSITIVE)) {
        return Err(Error::Numerical("ANCOVA design is rank deficient".into()));
    }
    let b_x = (stt * sxy - sxt * sty) / det;
    let b_t = (sxx * sty - sxt * sxy) / det;
    let b0 = ym - b_x * xm - b_t * tm;
    let df = (n - 3) as f64;
    let mut rss = 0.0;
    let mut meat = Matrix3::zeros();
    for i in 0..n {
        let r = y[i] - b0 - b_x * baseline[i] - b_t * treat[i];
        rss += r * r;
        let row = Vector3::new(1.0, baseline[i], treat[i]);
        meat += row * row.transpose() * (r * r);
    }
    let sigma2 = rss / df;
    // (X'X)^{-1}[t, t] from the centred 2x2 block
    let var_t = sxx / det;
    let mut xtx = Matrix3::zeros();
    for i in 0..n {
        let row = Vector3::new(1.0, baseline[i], treat[i]);
        xtx += row * row.transpose();
    }
    let robust_var = xtx
        .try_inverse()
        .map(|inv| (inv * meat * inv)[(2, 2)])
        .unwrap_or(f64::NAN);
    Ok(Ancova {
        estimate: b_t,
        se: (sigma2 * var_t).sqrt(),
        robust_se: robust_var.sqrt(),
        df,
    })
}

/// Two-sided 95% interval, `t` with `df` degrees of freedom or normal when
/// `df` is `None` or infinite.
pub fn interval(point: f64, se: f64, df: Option<f64>) -> (f64, f64) {
    let q = quantile_975(df);
    (point - q * se, point + q * se)
}

pub fn quantile_975(df: Option<f64>) -> f64 {
    match df {
        Some(v) if v.is_finite() && v > 0.0 => StudentsT::new(0.0, 1.0, v)
            .map(|t| t.inverse_cdf(0.975))
            .unwrap_or(Z_975),
        _ => Z_975,
    }
}

/// Linear-interpolation quantile of sorted values.
pub fn empirical_quantile(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Closed-interval coverage check.
pub fn covered(report: &EstimateReport, truth: f64) -> bool {
    report.ci_low <= truth && truth <= report.ci_high
}

/// Arm means of the final-visit outcome (control, active), ignoring missing values.
pub fn final_visit_means(ds: &TrialDataset) -> (f64, f64) {
    let mean = |arm| {
        let v: Vec<f64> = ds.arm(arm).filter_map(|p| p.final_outcome()).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    (mean(Arm::Control), mean(Arm::Active))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn interval_examples() {
        assert_eq!(interval(1.5, 0.0, Some(10.0)), (1.5, 1.5));
        let (lo, hi) = interval(0.0, 1.0, None);
        assert_relative_eq!(hi, 1.959_96, epsilon = 1e-5);
        assert_relative_eq!(lo, -hi);
        let (_, hi10) = interval(0.0, 1.0, Some(10.0));
        assert!(hi10 > hi);
        assert_relative_eq!(hi10, 2.228_138_851_986_274, epsilon = 1e-9);
        assert_eq!(interval(0.0, 1.0, Some(f64::INFINITY)), (lo, hi));
    }

    #[test]
    fn coverage_is_closed() {
        let r = EstimateReport::symmetric("x", 1.0, 0.0, None);
        assert!(covered(&r, 1.0));
        assert!(!covered(&r, 1.0 + 1e-12));
        let r = EstimateReport::symmetric("x", 0.0, 1.0, None);
        assert!(covered(&r, 0.0));
        assert!(!covered(&r, 3.0));
    }

    #[test]
    fn identical_arms_give_zero() {
        let x = [1.0, 2.0, 3.0, 1.0, 2.0, 3.0];
        let t = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let y = [0.5, 0.9, 2.0, 0.5, 0.9, 2.0];
        let a = ancova_arrays(&x, &t, &y).unwrap();
        assert!(a.estimate.abs() < 1e-14);
        assert_eq!(a.df, 3.0);
    }

    #[test]
    fn rank_deficient_design() {
        let x = [1.0, 1.0, 2.0, 2.0];
        let t = [0.0, 0.0, 1.0, 1.0];
        assert!(ancova_arrays(&x, &t, &[1.0, 2.0, 3.0, 4.0]).is_err());
    }
}
