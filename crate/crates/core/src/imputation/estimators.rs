//! Estimators built on imputation: conditional-mean imputation with
//! jackknife or bootstrap SEs, multiple imputation within a bootstrap,
//! retrieved-dropout and reference-based imputation pooled by Rubin's rules.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rd::rd_impute;
use super::rubin::rubins_rules;
use super::{CompletedDataset, Imputer, Provenance};
use crate::analysis::{ancova, ancova_arrays, EstimateReport};
use crate::data::{Arm, TrialDataset};
use crate::error::{Error, Result};
use crate::inference::{fit_map, refit_map, sample_posterior_fixed, MapFit, PriorSpec, SamplerSettings};
use crate::model::CausalParams;
use crate::rng::{fork, substream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeMethod {
    Jackknife,
    Bootstrap,
}

/// Reference-based imputation: jump to reference (`k0 = 0`) or copy
/// increments in reference (`k0 = 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RbiVariant {
    J2r,
    Cir,
}

impl RbiVariant {
    pub fn k0(self) -> f64 {
        match self {
            RbiVariant::J2r => 0.0,
            RbiVariant::Cir => 1.0,
        }
    }

    fn provenance(self) -> Provenance {
        match self {
            RbiVariant::J2r => Provenance::RbiJ2r,
            RbiVariant::Cir => Provenance::RbiCir,
        }
    }

    pub fn method_id(self) -> &'static str {
        match self {
            RbiVariant::J2r => "rbi-j2r",
            RbiVariant::Cir => "rbi-cir",
        }
    }
}

/// Bootstrap resample drawn within each arm, so arm sizes are preserved.
pub fn stratified_resample(ds: &TrialDataset, rng: &mut Stream) -> Result<TrialDataset> {
    let mut indices = Vec::with_capacity(ds.len());
    for arm in [Arm::Control, Arm::Active] {
        let members: Vec<usize> = (0..ds.len()).filter(|&i| ds.patients()[i].arm == arm).collect();
        for _ in 0..members.len() {
            indices.push(members[rng.random_range(0..members.len())]);
        }
    }
    ds.resample(&indices)
}

fn design(ds: &TrialDataset) -> (Vec<f64>, Vec<f64>) {
    ds.patients().iter().map(|p| (p.baseline, p.arm.indicator())).unzip()
}

/// Conditional-mean imputation fitted by MAP. A dataset without missing
/// cells is analysed as is.
fn cmi_estimate(ds: &TrialDataset, prior: &PriorSpec, warm: Option<&MapFit>) -> Result<f64> {
    if ds.n_missing() == 0 {
        return Ok(ancova(ds)?.estimate);
    }
    let fit = match warm {
        Some(w) => refit_map(ds, prior, true, w)?,
        None => fit_map(ds, prior, true)?,
    };
    let y = Imputer::new(ds, &fit.params)?.final_outcomes(None);
    let (x, t) = design(ds);
    Ok(ancova_arrays(&x, &t, &y)?.estimate)
}

/// Average ANCOVA estimate over `m` stochastic imputations.
fn mi_estimate(ds: &TrialDataset, params: &CausalParams, m: usize, rng: &mut Stream) -> Result<f64> {
    let imp = Imputer::new(ds, params)?;
    let (x, t) = design(ds);
    let mut total = 0.0;
    for _ in 0..m {
        let y = imp.final_outcomes(Some(rng));
        total += ancova_arrays(&x, &t, &y)?.estimate;
    }
    Ok(total / m as f64)
}

/// MAP fit followed by `mi_estimate`; a dataset without missing cells is
/// analysed as is.
fn fit_and_mi(
    ds: &TrialDataset,
    prior: &PriorSpec,
    warm: Option<&MapFit>,
    m: usize,
    rng: &mut Stream,
) -> Result<f64> {
    if ds.n_missing() == 0 {
        return Ok(ancova(ds)?.estimate);
    }
    let fit = match warm {
        Some(w) => refit_map(ds, prior, true, w)?,
        None => fit_map(ds, prior, true)?,
    };
    mi_estimate(ds, &fit.params, m, rng)
}

fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// ANCOVA after conditional-mean imputation from the MAP fit, with a
/// leave-one-patient-out jackknife or a stratified bootstrap SE and a
/// normal interval.
pub fn bcm_cmi(
    ds: &TrialDataset,
    prior: &PriorSpec,
    se_method: SeMethod,
    n_boot: usize,
    rng: &mut Stream,
) -> Result<EstimateReport> {
    let map = if ds.n_missing() > 0 {
        Some(fit_map(ds, prior, true)?)
    } else {
        None
    };
    let point = cmi_estimate(ds, prior, map.as_ref())?;
    let (method, se, resamples) = match se_method {
        SeMethod::Jackknife => {
            let n = ds.len();
            let estimates = (0..n)
                .map(|i| cmi_estimate(&ds.without(i)?, prior, map.as_ref()))
                .collect::<Result<Vec<f64>>>()?;
            let mean = estimates.iter().sum::<f64>() / n as f64;
            let ss: f64 = estimates.iter().map(|e| (e - mean).powi(2)).sum();
            ("bcm-cmi-jk", ((n as f64 - 1.0) / n as f64 * ss).sqrt(), n)
        }
        SeMethod::Bootstrap => {
            if n_boot < 2 {
                return Err(Error::InvalidArgument("bootstrap needs at least 2 resamples".into()));
            }
            let seed = fork(rng);
            let estimates = (0..n_boot)
                .map(|r| {
                    let rs = stratified_resample(ds, &mut substream(seed, &[r as u64]))?;
                    cmi_estimate(&rs, prior, map.as_ref())
                })
                .collect::<Result<Vec<f64>>>()?;
            ("bcm-cmi-bs", sample_sd(&estimates), n_boot)
        }
    };
    let mut report = EstimateReport::symmetric(method, point, se, None);
    report.aux.resamples = Some(resamples);
    Ok(report)
}

/// Multiple imputation from the MAP fit inside a stratified bootstrap: the
/// point estimate applies the procedure to the original data, the SE is the
/// SD of the bootstrap estimates and the interval is normal. A resample
/// whose fit fails is redrawn once.
pub fn bcm_mi_bootstrap(
    ds: &TrialDataset,
    prior: &PriorSpec,
    n_boot: usize,
    m: usize,
    rng: &mut Stream,
) -> Result<EstimateReport> {
    if n_boot < 2 || m == 0 {
        return Err(Error::InvalidArgument(
            "need at least 2 bootstrap resamples and 1 imputation".into(),
        ));
    }
    let seed = fork(rng);
    let map = if ds.n_missing() > 0 {
        Some(fit_map(ds, prior, true)?)
    } else {
        None
    };
    let point = match &map {
        Some(fit) => mi_estimate(ds, &fit.params, m, &mut substream(seed, &[0]))?,
        None => ancova(ds)?.estimate,
    };
    let estimates = (0..n_boot)
        .map(|r| {
            let r = r as u64;
            let mut last = None;
            for attempt in 0..2u64 {
                let rs = stratified_resample(ds, &mut substream(seed, &[1, r, attempt]))?;
                match fit_and_mi(&rs, prior, map.as_ref(), m, &mut substream(seed, &[2, r, attempt])) {
                    Ok(e) => return Ok(e),
                    Err(e @ (Error::Optimization(_) | Error::Numerical(_) | Error::NonFinite { .. })) => {
                        last = Some(e)
                    }
                    Err(e) => return Err(e),
                }
            }
            Err(last.expect("two failed attempts"))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut report = EstimateReport::symmetric("bcm-mi-bs", point, sample_sd(&estimates), None);
    report.aux.resamples = Some(n_boot);
    report.aux.imputations = Some(m);
    Ok(report)
}

/// Posterior draws of the imputation model for reference-based imputation:
/// `k0` fixed by the variant, active-arm post-discontinuation outcomes left
/// out of the fit. Returns `m` parameter sets (thinned draws) and the
/// convergence summary.
fn rbi_draws(
    ds: &TrialDataset,
    variant: RbiVariant,
    m: usize,
    settings: &SamplerSettings,
    seed: u64,
) -> Result<(Vec<CausalParams>, (f64, f64))> {
    if m == 0 || settings.chains == 0 {
        return Err(Error::InvalidArgument("need at least one imputation and one chain".into()));
    }
    let mut settings = settings.clone();
    settings.keep = m.div_ceil(settings.chains);
    let (draws, _) = sample_posterior_fixed(ds, &PriorSpec::default(), false, Some(variant.k0()), &settings, seed)?;
    let summary = draws.key_summary();
    let mut params = draws.draws;
    params.truncate(m);
    Ok((params, summary))
}

/// `m` completed datasets by reference-based imputation. Each retained
/// posterior draw fills every missing cell from the patient's conditional
/// distribution given all of its observed cells.
pub fn rbi_impute(
    ds: &TrialDataset,
    variant: RbiVariant,
    m: usize,
    settings: &SamplerSettings,
    rng: &mut Stream,
) -> Result<Vec<CompletedDataset>> {
    let seed = fork(rng);
    let (params, _) = rbi_draws(ds, variant, m, settings, seed)?;
    params
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let imp = Imputer::new(ds, p)?;
            Ok(CompletedDataset::new(
                imp.draw(&mut substream(seed, &[1, k as u64])),
                variant.provenance(),
            ))
        })
        .collect()
}

/// Reference-based imputation analysed by ANCOVA and pooled by Rubin's rules
/// with a t interval.
pub fn estimate_rbi(
    ds: &TrialDataset,
    variant: RbiVariant,
    m: usize,
    settings: &SamplerSettings,
    rng: &mut Stream,
) -> Result<EstimateReport> {
    if m < 2 {
        return Err(Error::InvalidArgument("Rubin's rules need at least 2 imputations".into()));
    }
    let seed = fork(rng);
    let (params, (rhat, ess)) = rbi_draws(ds, variant, m, settings, seed)?;
    let (x, t) = design(ds);
    let mut points = Vec::with_capacity(m);
    let mut vars = Vec::with_capacity(m);
    for (k, p) in params.iter().enumerate() {
        let y = Imputer::new(ds, p)?.final_outcomes(Some(&mut substream(seed, &[1, k as u64])));
        let fit = ancova_arrays(&x, &t, &y)?;
        points.push(fit.estimate);
        vars.push(fit.se * fit.se);
    }
    let pooled = rubins_rules(&points, &vars, ds.len() as f64 - 3.0)?;
    let mut report = EstimateReport::symmetric(variant.method_id(), pooled.estimate, pooled.se(), Some(pooled.df));
    report.aux.imputations = Some(m);
    report.aux.max_rhat = Some(rhat);
    report.aux.min_ess = Some(ess);
    Ok(report)
}

/// Retrieved-dropout imputation analysed by ANCOVA and pooled by Rubin's
/// rules with a t interval.
pub fn estimate_rd(ds: &TrialDataset, m: usize, rng: &mut Stream) -> Result<EstimateReport> {
    if m < 2 {
        return Err(Error::InvalidArgument("Rubin's rules need at least 2 imputations".into()));
    }
    let completed = rd_impute(ds, m, rng)?;
    let mut points = Vec::with_capacity(m);
    let mut vars = Vec::with_capacity(m);
    for c in &completed {
        let fit = ancova(c)?;
        points.push(fit.estimate);
        vars.push(fit.se * fit.se);
    }
    let pooled = rubins_rules(&points, &vars, ds.len() as f64 - 3.0)?;
    let mut report = EstimateReport::symmetric("rd", pooled.estimate, pooled.se(), Some(pooled.df));
    report.aux.imputations = Some(m);
    Ok(report)
}
