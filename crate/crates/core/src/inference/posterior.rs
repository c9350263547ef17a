//! Posterior sampling around the MAP, conjugate draws of the discontinuation
//! proportions and the treatment-policy estimate.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::density::Posterior;
use super::diagnostics::{diagnostics, ChainDiagnostics};
use super::nuts::{run_chain, NutsSettings, NutsStats, Target};
use super::optimize::{fit_map_fixed, MapFit};
use super::transform::{Layout, UnconstrainedVector};
use super::PriorSpec;
use crate::analysis::{empirical_quantile, Diagnostics, EstimateReport, Z_975};
use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::model::{policy_effect, CausalParams};
use crate::rng::{substream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSettings {
    pub chains: usize,
    pub warmup: usize,
    pub keep: usize,
    /// Transitions per retained draw.
    pub thin: usize,
    pub nuts: NutsSettings,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            chains: 2,
            warmup: 300,
            keep: 1000,
            thin: 1,
            nuts: NutsSettings::default(),
        }
    }
}

/// Convergence contract for `k0` and the mean intercepts.
pub const RHAT_LIMIT: f64 = 1.01;
pub const ESS_LIMIT: f64 = 400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawMeta {
    pub chains: usize,
    pub warmup: usize,
    pub keep: usize,
    pub thin: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    /// Chain-major; `pi` of each draw holds the empirical proportions.
    pub draws: Vec<CausalParams>,
    /// Unconstrained draws, chain × draw × coordinate.
    pub raw: Vec<Vec<Vec<f64>>>,
    pub layout: Layout,
    pub diagnostics: Vec<ChainDiagnostics>,
    pub stats: Vec<NutsStats>,
    pub meta: DrawMeta,
    /// Set when the convergence contract is not met.
    pub warning: Option<String>,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.layout.names()
    }

    /// Largest R̂ and smallest ESS over `k0` and the mean intercepts.
    pub fn key_summary(&self) -> (f64, f64) {
        let idx = self.layout.key_parameters();
        let rhat = idx.iter().map(|&i| self.diagnostics[i].rhat).fold(f64::NEG_INFINITY, f64::max);
        let ess = idx.iter().map(|&i| self.diagnostics[i].ess).fold(f64::INFINITY, f64::min);
        (rhat, ess)
    }

    /// One row per draw: chain, iteration, then the constrained parameters
    /// with the lower triangle of the covariance.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let j = self.layout.n_visits;
        let mut header = vec!["chain".to_string(), "draw".into()];
        header.extend((1..=j).map(|v| format!("mu_active[{v}]")));
        header.extend((1..=j).map(|v| format!("mu_control[{v}]")));
        header.extend((1..=j).map(|v| format!("alpha[{v}]")));
        header.push("k0".into());
        for r in 0..j {
            for c in 0..=r {
                header.push(format!("sigma[{},{}]", r + 1, c + 1));
            }
        }
        let io = |e: csv::Error| match e.into_kind() {
            csv::ErrorKind::Io(e) => Error::io(path, e),
            other => Error::Numerical(format!("{other:?}")),
        };
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(&header).map_err(io)?;
        let per_chain = self.meta.keep;
        for (i, d) in self.draws.iter().enumerate() {
            let mut row = vec![(i / per_chain + 1).to_string(), (i % per_chain + 1).to_string()];
            row.extend(d.mu_active.iter().chain(&d.mu_control).chain(&d.alpha).map(|v| v.to_string()));
            row.push(d.k0.to_string());
            for r in 0..j {
                for c in 0..=r {
                    row.push(d.sigma.get(r, c).to_string());
                }
            }
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Target in whitened coordinates `x = center + A theta` with `A A^T` the
/// inverse negative Hessian at the mode.
struct Whitened<'a> {
    post: &'a Posterior,
    center: DVector<f64>,
    a: DMatrix<f64>,
}

impl Whitened<'_> {
    fn new<'a>(post: &'a Posterior, map: &MapFit) -> Whitened<'a> {
        let n = map.point.values.len();
        let a = match map.neg_hessian.clone().cholesky() {
            Some(ch) => ch
                .l()
                .solve_lower_triangular(&DMatrix::identity(n, n))
                .map(|inv| inv.transpose())
                .unwrap_or_else(|| DMatrix::identity(n, n)),
            None => DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| {
                1.0 / map.neg_hessian[(i, i)].abs().max(1e-8).sqrt()
            })),
        };
        Whitened {
            post,
            center: DVector::from_column_slice(&map.point.values),
            a,
        }
    }

    fn to_x(&self, theta: &[f64]) -> Vec<f64> {
        (&self.center + &self.a * DVector::from_column_slice(theta)).as_slice().to_vec()
    }
}

impl Target for Whitened<'_> {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let x = self.to_x(theta);
        let mut gx = vec![0.0; x.len()];
        let lp = self.post.log_density_grad(&x, &mut gx);
        let g = self.a.tr_mul(&DVector::from_vec(gx));
        grad.copy_from_slice(g.as_slice());
        lp
    }
}

/// MCMC over the unconstrained parameters (`pi` excluded).
pub fn sample_posterior(
    ds: &TrialDataset,
    prior: &PriorSpec,
    include_post_ice: bool,
    settings: &SamplerSettings,
    seed: u64,
) -> Result<PosteriorDraws> {
    sample_posterior_fixed(ds, prior, include_post_ice, None, settings, seed).map(|(d, _)| d)
}

/// As `sample_posterior`, optionally with `k0` fixed; also returns the MAP
/// used to initialize and precondition the chains.
pub fn sample_posterior_fixed(
    ds: &TrialDataset,
    prior: &PriorSpec,
    include_post_ice: bool,
    k0_fixed: Option<f64>,
    settings: &SamplerSettings,
    seed: u64,
) -> Result<(PosteriorDraws, MapFit)> {
    let map = fit_map_fixed(ds, prior, include_post_ice, k0_fixed)?;
    let post = Posterior::new(ds, prior, include_post_ice, k0_fixed)?;
    let draws = sample_with_map(&post, &map, settings, seed)?;
    Ok((draws, map))
}

pub(crate) fn sample_with_map(
    post: &Posterior,
    map: &MapFit,
    settings: &SamplerSettings,
    seed: u64,
) -> Result<PosteriorDraws> {
    if settings.chains == 0 || settings.keep == 0 {
        return Err(Error::InvalidArgument("need at least one chain and one retained draw".into()));
    }
    let target = Whitened::new(post, map);
    let n = target.dim();
    let mut raw = Vec::with_capacity(settings.chains);
    let mut stats = Vec::with_capacity(settings.chains);
    for c in 0..settings.chains {
        let mut rng = substream(seed, &[c as u64]);
        let theta0: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (thetas, st) = run_chain(&target, theta0, settings.warmup, settings.keep, settings.thin, &settings.nuts, &mut rng);
        raw.push(thetas.iter().map(|t| target.to_x(t)).collect::<Vec<_>>());
        stats.push(st);
    }
    let pi = map.params.pi.clone();
    let mut draws = Vec::with_capacity(settings.chains * settings.keep);
    for chain in &raw {
        for x in chain {
            let v = UnconstrainedVector::new(map.point.layout, x.clone())?;
            draws.push(v.to_params(pi.clone())?);
        }
    }
    let diagnostics = if settings.keep >= 4 {
        diagnostics(&raw)?
    } else {
        vec![
            ChainDiagnostics {
                rhat: f64::NAN,
                ess: f64::NAN,
            };
            n
        ]
    };
    let mut out = PosteriorDraws {
        draws,
        raw,
        layout: map.point.layout,
        diagnostics,
        stats,
        meta: DrawMeta {
            chains: settings.chains,
            warmup: settings.warmup,
            keep: settings.keep,
            thin: settings.thin,
            seed,
        },
        warning: None,
    };
    let (rhat, ess) = out.key_summary();
    let divergences: usize = out.stats.iter().map(|s| s.divergences).sum();
    let mut problems = Vec::new();
    if !(rhat < RHAT_LIMIT) {
        problems.push(format!("max split-Rhat {rhat:.4} >= {RHAT_LIMIT}"));
    }
    if !(ess >= ESS_LIMIT) {
        problems.push(format!("min ESS {ess:.0} < {ESS_LIMIT}"));
    }
    if divergences > 0 {
        problems.push(format!("{divergences} divergent transitions"));
    }
    if !problems.is_empty() {
        out.warning = Some(problems.join("; "));
    }
    Ok(out)
}

/// Conjugate Dirichlet draws of the discontinuation proportions from the
/// active-arm counts.
pub fn sample_pi(ds: &TrialDataset, dirichlet_alpha: &[f64], n_draws: usize, rng: &mut Stream) -> Result<Vec<Vec<f64>>> {
    let counts = ds.discontinuation_counts();
    if dirichlet_alpha.len() != counts.len() {
        return Err(Error::InvalidArgument(format!(
            "dirichlet_alpha has {} entries for {} visits",
            dirichlet_alpha.len(),
            counts.len()
        )));
    }
    let gammas = dirichlet_alpha
        .iter()
        .zip(&counts)
        .map(|(&a, &c)| {
            Gamma::new(a + c as f64, 1.0).map_err(|e| Error::InvalidArgument(format!("dirichlet_alpha: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..n_draws)
        .map(|_| {
            let g: Vec<f64> = gammas.iter().map(|d| d.sample(rng)).collect();
            let total: f64 = g.iter().sum();
            g.iter().map(|v| v / total).collect()
        })
        .collect())
}

/// Treatment-policy effect over paired parameter and proportion draws: mean,
/// SD and equal-tailed 95% quantile interval.
pub fn estimate_effect_bcm(draws: &PosteriorDraws, pi_draws: &[Vec<f64>], mean_baseline: f64) -> Result<EstimateReport> {
    if draws.is_empty() || draws.len() != pi_draws.len() {
        return Err(Error::InvalidArgument(format!(
            "{} parameter draws but {} proportion draws",
            draws.len(),
            pi_draws.len()
        )));
    }
    let mut effects = Vec::with_capacity(draws.len());
    for (p, pi) in draws.draws.iter().zip(pi_draws) {
        let mut q = p.clone();
        q.pi = pi.clone();
        effects.push(policy_effect(&q, mean_baseline));
    }
    let mut report = summarize_effects("bcm", &effects);
    let (rhat, ess) = draws.key_summary();
    report.aux.max_rhat = Some(rhat);
    report.aux.min_ess = Some(ess);
    report.aux.warning = draws.warning.clone();
    Ok(report)
}

pub(crate) fn summarize_effects(method: &str, effects: &[f64]) -> EstimateReport {
    let n = effects.len() as f64;
    let point = effects.iter().sum::<f64>() / n;
    let se = if effects.len() > 1 {
        (effects.iter().map(|e| (e - point).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = effects.to_vec();
    sorted.sort_by(f64::total_cmp);
    EstimateReport {
        method: method.into(),
        point,
        se,
        ci_low: empirical_quantile(&sorted, 0.025),
        ci_high: empirical_quantile(&sorted, 0.975),
        aux: Diagnostics {
            normal_interval: Some((point - Z_975 * se, point + Z_975 * se)),
            ..Diagnostics::default()
        },
    }
}

/// Posterior mean and SD of `k0`.
pub fn posterior_mean_k0(draws: &PosteriorDraws) -> (f64, f64) {
    let k: Vec<f64> = draws.draws.iter().map(|d| d.k0).collect();
    let n = k.len() as f64;
    let m = k.iter().sum::<f64>() / n;
    let sd = (k.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    (m, sd)
}
