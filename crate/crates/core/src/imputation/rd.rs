//! Retrieved-dropout sequential regression imputation.
//!
//! Visit by visit, missing outcomes are drawn from a normal linear
//! regression fitted to everyone observed at that visit (both arms):
//! intercept, treatment, weeks since discontinuation, baseline and all
//! earlier (observed or already imputed) outcomes. Parameters are drawn from
//! their posterior under the usual noninformative prior before each
//! imputation.
//!
//! By default the weeks-since-discontinuation slope differs by arm. With a
//! single pooled slope the control arm's retrieved dropouts, whose outcomes do
//! not move after stopping, dilute the rebound seen in the active arm and the
//! imputations keep most of the on-treatment benefit.

use nalgebra::{DMatrix, DVector};
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use super::{CompletedDataset, Provenance};
use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::rng::{fork, substream, Stream};

/// Condition-number threshold (on X'X) above which a design is treated as
/// rank deficient.
const MAX_CONDITION: f64 = 1e12;

/// How time since discontinuation enters each visit's regression.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffTreatmentTerm {
    /// Separate slope per arm (treatment by weeks-off interaction).
    #[default]
    ByArm,
    /// One slope shared by both arms.
    Pooled,
    /// No off-treatment term: plain sequential MAR imputation.
    Omitted,
}

pub fn rd_impute(ds: &TrialDataset, m: usize, rng: &mut Stream) -> Result<Vec<CompletedDataset>> {
    rd_impute_with(ds, m, OffTreatmentTerm::default(), rng)
}

pub fn rd_impute_with(
    ds: &TrialDataset,
    m: usize,
    term: OffTreatmentTerm,
    rng: &mut Stream,
) -> Result<Vec<CompletedDataset>> {
    let seed = fork(rng);
    (0..m)
        .map(|k| rd_once(ds, term, &mut substream(seed, &[k as u64])))
        .collect()
}

/// Weeks since discontinuation at post-baseline visit `visit` (0-based),
/// zero while on treatment.
fn weeks_off(ds: &TrialDataset, d: usize, visit: usize) -> f64 {
    if visit + 1 > d {
        ds.schedule().week(visit + 1) - ds.schedule().week(d)
    } else {
        0.0
    }
}

fn rd_once(ds: &TrialDataset, term: OffTreatmentTerm, rng: &mut Stream) -> Result<CompletedDataset> {
    let j = ds.n_visits();
    let pats = ds.patients();
    let mut y: Vec<Vec<Option<f64>>> = pats.iter().map(|p| p.y.clone()).collect();
    for v in 0..j {
        let missing: Vec<usize> = (0..pats.len()).filter(|&i| pats[i].y[v].is_none()).collect();
        if missing.is_empty() {
            continue;
        }
        let fit: Vec<usize> = (0..pats.len()).filter(|&i| pats[i].y[v].is_some()).collect();
        // off-treatment columns that are zero for every patient are dropped
        let off_cols: Vec<bool> = match term {
            OffTreatmentTerm::Omitted => vec![],
            OffTreatmentTerm::Pooled => vec![false],
            OffTreatmentTerm::ByArm => vec![false, true],
        }
        .into_iter()
        .filter(|&active_only| {
            pats.iter()
                .any(|p| weeks_off(ds, p.d, v) != 0.0 && (!active_only || p.arm.indicator() == 1.0))
        })
        .collect();
        let row = |i: usize, y: &[Vec<Option<f64>>]| -> Vec<f64> {
            let p = &pats[i];
            let mut r = vec![1.0, p.arm.indicator()];
            for &active_only in &off_cols {
                let w = weeks_off(ds, p.d, v);
                r.push(if active_only { w * p.arm.indicator() } else { w });
            }
            r.push(p.baseline);
            r.extend(y[i][..v].iter().map(|c| c.expect("earlier visits are complete")));
            r
        };
        let k = 3 + off_cols.len() + v;
        let non_estimable = |reason: String| Error::NonEstimable { visit: v + 1, reason };
        if fit.len() < k + 2 {
            return Err(non_estimable(format!(
                "{} observed rows for {k} regression coefficients",
                fit.len()
            )));
        }
        let rows: Vec<Vec<f64>> = fit.iter().map(|&i| row(i, &y)).collect();
        let x = DMatrix::from_fn(fit.len(), k, |r, c| rows[r][c]);
        let target = DVector::from_iterator(fit.len(), fit.iter().map(|&i| y[i][v].expect("observed")));
        let xtx = x.tr_mul(&x);
        let eig = xtx.clone().symmetric_eigen().eigenvalues;
        let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &e| (a.min(e), b.max(e.abs())));
        if !(lo > hi / MAX_CONDITION) {
            let first_off = 2;
            let unsupported = (first_off..first_off + off_cols.len()).any(|c| rows.iter().all(|r| r[c] == 0.0));
            let reason = if unsupported {
                "no observed post-discontinuation outcomes to estimate the off-treatment term".to_string()
            } else {
                "regression design is rank deficient".to_string()
            };
            return Err(non_estimable(reason));
        }
        let chol = xtx.cholesky().ok_or_else(|| non_estimable("X'X not positive definite".into()))?;
        let beta_hat = chol.solve(&x.tr_mul(&target));
        let resid = &target - &x * &beta_hat;
        let dof = (fit.len() - k) as f64;
        let chi: f64 = ChiSquared::new(dof).expect("positive df").sample(rng);
        let sigma = (resid.norm_squared() / chi).sqrt();
        // beta* = beta_hat + sigma * L^{-T} z, with X'X = L L'
        let z = DVector::from_fn(k, |_, _| StandardNormal.sample(rng));
        let shift = chol
            .l()
            .tr_solve_lower_triangular(&z)
            .expect("triangular factor is invertible");
        let beta = beta_hat + shift * sigma;
        for &i in &missing {
            let r = DVector::from_vec(row(i, &y));
            let e: f64 = StandardNormal.sample(rng);
            y[i][v] = Some(r.dot(&beta) + sigma * e);
        }
    }
    let patients = pats
        .iter()
        .zip(y)
        .map(|(p, y)| {
            let mut q = p.clone();
            q.y = y;
            q
        })
        .collect();
    Ok(CompletedDataset::new(ds.with_patients(patients)?, Provenance::Rd))
}
