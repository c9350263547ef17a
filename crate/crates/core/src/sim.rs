//! Trial simulator: on-treatment MVN outcomes, a logistic discontinuation
//! hazard, post-discontinuation outcomes from the causal model and MCAR loss
//! of whole post-ICE blocks.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Arm, PatientRecord, TrialDataset, VisitSchedule};
use crate::error::{Error, Result};
use crate::gaussian::{spatial_power_cov, CovMatrix};
use crate::model::{template_mean, CausalParams, ConditioningPlan};
use crate::rng::{substream, Stream};

/// Per-visit logistic discontinuation hazard. At hazard week `weeks[h]` the
/// log-odds are `intercept + base[h] * Y0 + prev[h] * Y_prev`, where `Y_prev`
/// is the outcome at the visit before that week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hazard {
    pub weeks: Vec<f64>,
    pub beta_base_active: Vec<f64>,
    pub beta_prev_active: Vec<f64>,
    pub beta_base_control: Vec<f64>,
    pub beta_prev_control: Vec<f64>,
    pub intercept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimScenario {
    #[serde(default)]
    pub name: String,
    /// Visit weeks, baseline first.
    pub weeks: Vec<f64>,
    /// On-treatment means at every visit including baseline.
    pub mu_active: Vec<f64>,
    pub mu_control: Vec<f64>,
    pub variances: Vec<f64>,
    pub rho: f64,
    pub n_per_arm: usize,
    pub hazard: Hazard,
    pub true_k0: f64,
    /// Probability that a discontinuer's whole post-ICE block is missing.
    pub miss_prob: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SimScenario {
    /// Diabetes-trial design: weeks 0-26, spatial-power covariance and the
    /// high (`high_discontinuation`) or low hazard intercept.
    pub fn diabetes(high_discontinuation: bool, miss_prob: f64, true_k0: f64) -> Self {
        Self {
            name: format!(
                "{}-{} k0={true_k0}",
                if high_discontinuation { "HD" } else { "LD" },
                if miss_prob > 0.5 { "HM" } else { "LM" }
            ),
            weeks: vec![0.0, 4.0, 8.0, 14.0, 20.0, 26.0],
            mu_active: vec![7.92, 7.55, 7.20, 7.10, 7.05, 7.05],
            mu_control: vec![7.92, 7.82, 7.80, 7.80, 7.78, 7.78],
            variances: vec![0.48, 0.80, 1.10, 1.40, 1.23, 1.48],
            rho: 0.8,
            n_per_arm: 500,
            hazard: Hazard {
                weeks: vec![8.0, 14.0, 20.0, 26.0],
                beta_base_active: vec![0.30, 0.10, 0.05, 0.00],
                beta_prev_active: vec![1.14, 1.47, 1.48, 1.40],
                beta_base_control: vec![0.30, 0.10, 0.05, 0.00],
                beta_prev_control: vec![1.14, 1.33, 1.51, 1.46],
                intercept: if high_discontinuation { -13.0 } else { -15.0 },
            },
            true_k0,
            miss_prob,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        let n = self.weeks.len();
        VisitSchedule::new(self.weeks.clone()).map_err(|e| Error::config(e.to_string()))?;
        if self.mu_active.len() != n || self.mu_control.len() != n || self.variances.len() != n {
            return bad(format!("means and variances must have one entry per visit ({n})"));
        }
        if self.variances.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad("variances must be positive".into());
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad(format!("rho must lie in (0, 1), got {}", self.rho));
        }
        if !(0.0..=1.0).contains(&self.miss_prob) {
            return bad(format!("miss_prob must lie in [0, 1], got {}", self.miss_prob));
        }
        if self.n_per_arm == 0 {
            return bad("n_per_arm must be positive".into());
        }
        if !self.true_k0.is_finite() || !self.hazard.intercept.is_finite() {
            return bad("true_k0 and hazard intercept must be finite".into());
        }
        let h = &self.hazard;
        let m = h.weeks.len();
        if [&h.beta_base_active, &h.beta_prev_active, &h.beta_base_control, &h.beta_prev_control]
            .iter()
            .any(|b| b.len() != m)
        {
            return bad("hazard coefficients must have one entry per hazard week".into());
        }
        let mut last = 1;
        for w in &h.weeks {
            match self.weeks.iter().position(|x| x == w) {
                Some(i) if i >= 2 && i > last => last = i,
                _ => {
                    return bad(format!(
                        "hazard week {w} must be a visit after the first follow-up, in increasing order"
                    ))
                }
            }
        }
        Ok(())
    }

    /// Post-baseline model implied by the generator: conditioning on the
    /// baseline gives per-visit slopes, adjusted intercepts and the Schur
    /// complement covariance.
    pub fn causal_params(&self) -> Result<CausalParams> {
        let full = spatial_power_cov(&self.variances, &self.weeks, self.rho)?;
        let s = full.matrix();
        let j = self.weeks.len() - 1;
        let s00 = s[(0, 0)];
        let alpha: Vec<f64> = (1..=j).map(|v| s[(v, 0)] / s00).collect();
        let sigma = DMatrix::from_fn(j, j, |a, b| s[(a + 1, b + 1)] - s[(a + 1, 0)] * s[(0, b + 1)] / s00);
        let m0 = self.mu_active[0];
        if self.mu_control[0] != m0 {
            return Err(Error::config("baseline means must match between arms"));
        }
        Ok(CausalParams {
            mu_active: (1..=j).map(|v| self.mu_active[v] - alpha[v - 1] * m0).collect(),
            mu_control: (1..=j).map(|v| self.mu_control[v] - alpha[v - 1] * m0).collect(),
            alpha,
            sigma: CovMatrix::new(sigma)?,
            k0: self.true_k0,
            pi: vec![1.0 / j as f64; j],
        })
    }
}

/// Precomputed pieces shared by every simulated patient.
struct Generator {
    j: usize,
    chol: DMatrix<f64>,
    mu_active: DVector<f64>,
    mu_control: DVector<f64>,
    params: CausalParams,
    /// Conditioning plans for discontinuation after visit d = 1..j-1.
    plans: Vec<ConditioningPlan>,
    /// Schedule index of each hazard week.
    hazard_visits: Vec<usize>,
    hazard: Hazard,
}

struct SimPatient {
    baseline: f64,
    y: Vec<f64>,
    d: usize,
}

impl Generator {
    fn new(sc: &SimScenario) -> Result<Self> {
        sc.validate()?;
        let full = spatial_power_cov(&sc.variances, &sc.weeks, sc.rho)?;
        let j = sc.weeks.len() - 1;
        let params = sc.causal_params()?;
        let plans = (1..j)
            .map(|d| ConditioningPlan::new(&params.sigma, &(0..d).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        let hazard_visits = sc
            .hazard
            .weeks
            .iter()
            .map(|w| sc.weeks.iter().position(|x| x == w).expect("validated"))
            .collect();
        Ok(Self {
            j,
            chol: full.cholesky().l(),
            mu_active: DVector::from_column_slice(&sc.mu_active),
            mu_control: DVector::from_column_slice(&sc.mu_control),
            params,
            plans,
            hazard_visits,
            hazard: sc.hazard.clone(),
        })
    }

    fn patient(&self, arm: Arm, rng: &mut Stream) -> SimPatient {
        let z = DVector::from_fn(self.j + 1, |_, _| StandardNormal.sample(rng));
        let mu = match arm {
            Arm::Active => &self.mu_active,
            Arm::Control => &self.mu_control,
        };
        let full = mu + &self.chol * z;
        let baseline = full[0];
        let mut y: Vec<f64> = full.iter().skip(1).copied().collect();
        let (base, prev) = match arm {
            Arm::Active => (&self.hazard.beta_base_active, &self.hazard.beta_prev_active),
            Arm::Control => (&self.hazard.beta_base_control, &self.hazard.beta_prev_control),
        };
        let mut d = self.j;
        for (h, &visit) in self.hazard_visits.iter().enumerate() {
            let eta = self.hazard.intercept + base[h] * baseline + prev[h] * full[visit - 1];
            let p = 1.0 / (1.0 + (-eta).exp());
            if rng.random::<f64>() < p {
                // `visit` is the first post-ICE visit; d counts post-baseline visits before it
                d = visit - 1;
                break;
            }
        }
        if arm == Arm::Active && d < self.j {
            let plan = &self.plans[d - 1];
            let joint = template_mean(&self.params, Arm::Active, baseline, d);
            let mean = plan.mean(&joint, &y[..d]);
            let post = plan.sample(&mean, rng);
            y[d..].copy_from_slice(post.as_slice());
        }
        SimPatient { baseline, y, d }
    }
}

/// Simulated dataset before and after masking post-ICE blocks. The masking
/// draws come from their own stream, so the complete data do not depend on
/// `miss_prob`.
pub fn simulate_trial_pair(sc: &SimScenario, rep_seed: u64) -> Result<(TrialDataset, TrialDataset)> {
    let gen = Generator::new(sc)?;
    let schedule = VisitSchedule::new(sc.weeks.clone())?;
    let mut outcome_rng = substream(rep_seed, &[0]);
    let mut miss_rng = substream(rep_seed, &[1]);
    let width = sc.n_per_arm.to_string().len();
    let mut complete = Vec::with_capacity(2 * sc.n_per_arm);
    let mut masked = Vec::with_capacity(2 * sc.n_per_arm);
    for arm in [Arm::Control, Arm::Active] {
        let tag = if arm == Arm::Control { "c" } else { "a" };
        for i in 1..=sc.n_per_arm {
            let p = gen.patient(arm, &mut outcome_rng);
            let rec = PatientRecord {
                id: format!("{tag}{i:0width$}"),
                arm,
                baseline: p.baseline,
                y: p.y.iter().map(|&v| Some(v)).collect(),
                d: p.d,
            };
            let mut m = rec.clone();
            if p.d < gen.j && miss_rng.random::<f64>() < sc.miss_prob {
                for v in &mut m.y[p.d..] {
                    *v = None;
                }
            }
            complete.push(rec);
            masked.push(m);
        }
    }
    Ok((
        TrialDataset::new(schedule.clone(), complete)?,
        TrialDataset::new(schedule, masked)?,
    ))
}

pub fn simulate_trial(sc: &SimScenario, rep_seed: u64) -> Result<TrialDataset> {
    simulate_trial_pair(sc, rep_seed).map(|(_, masked)| masked)
}

const MC_CHUNK: usize = 50_000;

/// Monte Carlo treatment-policy effect: difference of final-visit means over
/// `n_mc` generated patients per arm, without missingness.
pub fn true_policy_effect(sc: &SimScenario, n_mc: usize) -> Result<f64> {
    let gen = Generator::new(sc)?;
    let n_chunks = n_mc.div_ceil(MC_CHUNK);
    let sums: Vec<(f64, f64)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let n = MC_CHUNK.min(n_mc - c * MC_CHUNK);
            let mut out = (0.0, 0.0);
            for (k, arm) in [Arm::Control, Arm::Active].into_iter().enumerate() {
                let mut rng = substream(sc.seed, &[u64::MAX, c as u64, k as u64]);
                let s: f64 = (0..n).map(|_| gen.patient(arm, &mut rng).y[gen.j - 1]).sum();
                if arm == Arm::Control {
                    out.0 = s;
                } else {
                    out.1 = s;
                }
            }
            out
        })
        .collect();
    let (c, a) = sums.iter().fold((0.0, 0.0), |acc, s| (acc.0 + s.0, acc.1 + s.1));
    Ok((a - c) / n_mc as f64)
}

/// Realized discontinuation proportions (control, active).
pub fn discontinuation_rates(ds: &TrialDataset) -> (f64, f64) {
    let rate = |arm| {
        let n = ds.arm_size(arm) as f64;
        ds.arm(arm).filter(|p| p.has_ice()).count() as f64 / n
    };
    (rate(Arm::Control), rate(Arm::Active))
}
