//! Imputation estimators: conditional-mean and stochastic imputation from the
//! causal model, retrieved-dropout sequential regression, reference-based
//! imputation and Rubin's rules.

mod estimators;
mod rd;
mod rubin;

use std::collections::HashMap;
use std::ops::Deref;
use std::path::Path;

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{write_csv_tagged, TrialDataset};
use crate::error::Result;
use crate::model::{template_mean, CausalParams, ConditioningPlan};
use crate::rng::Stream;

pub use estimators::{
    bcm_cmi, bcm_mi_bootstrap, estimate_rbi, estimate_rd, rbi_impute, stratified_resample, RbiVariant,
    SeMethod,
};
pub use rd::{rd_impute, rd_impute_with, OffTreatmentTerm};
pub use rubin::{rubins_rules, PooledResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ConditionalMean,
    StochasticDraw,
    Rd,
    RbiJ2r,
    RbiCir,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::ConditionalMean => "conditional_mean",
            Provenance::StochasticDraw => "stochastic_draw",
            Provenance::Rd => "rd",
            Provenance::RbiJ2r => "rbi_j2r",
            Provenance::RbiCir => "rbi_cir",
        }
    }
}

/// A dataset with every cell filled, tagged with how the gaps were filled.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletedDataset {
    data: TrialDataset,
    pub provenance: Provenance,
}

impl CompletedDataset {
    pub(crate) fn new(data: TrialDataset, provenance: Provenance) -> Self {
        debug_assert_eq!(data.n_missing(), 0);
        Self { data, provenance }
    }

    pub fn dataset(&self) -> &TrialDataset {
        &self.data
    }

    pub fn into_dataset(self) -> TrialDataset {
        self.data
    }

    /// CSV with a provenance comment line.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv_tagged(&self.data, path, Some(self.provenance.as_str()))
    }
}

impl Deref for CompletedDataset {
    type Target = TrialDataset;

    fn deref(&self) -> &TrialDataset {
        &self.data
    }
}

/// Conditional distribution of one patient's missing cells.
struct Block {
    patient: usize,
    plan: usize,
    mean: DVector<f64>,
}

/// Conditional distributions of all missing cells under one parameter set.
/// Each patient's joint mean is its causal template (control profile, or
/// the active profile switching at `d`); conditioning is on every observed
/// cell of that patient.
pub(crate) struct Imputer<'a> {
    ds: &'a TrialDataset,
    plans: Vec<ConditioningPlan>,
    blocks: Vec<Block>,
}

impl<'a> Imputer<'a> {
    pub fn new(ds: &'a TrialDataset, params: &CausalParams) -> Result<Self> {
        let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut plans = Vec::new();
        let mut blocks = Vec::new();
        for (i, p) in ds.patients().iter().enumerate() {
            if p.y.iter().all(Option::is_some) {
                continue;
            }
            let observed = p.observed_indices();
            let plan = match index.get(&observed) {
                Some(&k) => k,
                None => {
                    plans.push(ConditioningPlan::new(&params.sigma, &observed)?);
                    index.insert(observed.clone(), plans.len() - 1);
                    plans.len() - 1
                }
            };
            let joint = template_mean(params, p.arm, p.baseline, p.d);
            let y_obs: Vec<f64> = observed.iter().map(|&v| p.y[v].expect("observed")).collect();
            blocks.push(Block {
                patient: i,
                mean: plans[plan].mean(&joint, &y_obs),
                plan,
            });
        }
        Ok(Self { ds, plans, blocks })
    }

    fn fill(&self, mut values: impl FnMut(&Block) -> DVector<f64>) -> TrialDataset {
        let mut patients = self.ds.patients().to_vec();
        for b in &self.blocks {
            let v = values(b);
            for (k, &cell) in self.plans[b.plan].unobserved.iter().enumerate() {
                patients[b.patient].y[cell] = Some(v[k]);
            }
        }
        self.ds.with_patients(patients).expect("imputed dataset stays valid")
    }

    pub fn conditional_mean(&self) -> TrialDataset {
        self.fill(|b| b.mean.clone())
    }

    pub fn draw(&self, rng: &mut Stream) -> TrialDataset {
        self.fill(|b| self.plans[b.plan].sample(&b.mean, rng))
    }

    /// Final-visit outcomes with missing values replaced by their conditional
    /// means (`rng` = None) or by draws from their conditional marginals.
    pub fn final_outcomes(&self, rng: Option<&mut Stream>) -> Vec<f64> {
        let last = self.ds.n_visits() - 1;
        let mut y: Vec<f64> = self.ds.patients().iter().map(|p| p.y[last].unwrap_or(f64::NAN)).collect();
        let mut rng = rng;
        for b in &self.blocks {
            let plan = &self.plans[b.plan];
            let Some(k) = plan.unobserved.iter().position(|&c| c == last) else {
                continue;
            };
            let mut v = b.mean[k];
            if let Some(r) = rng.as_deref_mut() {
                let z: f64 = StandardNormal.sample(r);
                v += plan.cov[(k, k)].max(0.0).sqrt() * z;
            }
            y[b.patient] = v;
        }
        y
    }
}

/// Fill every missing cell with its conditional mean under `params`.
pub fn conditional_mean_impute(ds: &TrialDataset, params: &CausalParams) -> Result<CompletedDataset> {
    let imp = Imputer::new(ds, params)?;
    Ok(CompletedDataset::new(imp.conditional_mean(), Provenance::ConditionalMean))
}

/// Fill every missing cell with a draw from its conditional distribution.
pub fn draw_imputation(ds: &TrialDataset, params: &CausalParams, rng: &mut Stream) -> Result<CompletedDataset> {
    let imp = Imputer::new(ds, params)?;
    Ok(CompletedDataset::new(imp.draw(rng), Provenance::StochasticDraw))
}
