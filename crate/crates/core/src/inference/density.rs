//! Log posterior of the causal model with analytic gradient.
//!
//! Every likelihood factor is a multivariate normal on some subset of visits
//! whose mean is linear in the baseline. For an active patient with an
//! observed post-ICE block, the product of the on-treatment marginal and the
//! post-ICE conditional is the joint density under the causal template mean,
//! so all contributions reduce to per-group sufficient statistics keyed by
//! (mean template, observed visits).

use std::collections::HashMap;

use nalgebra::DMatrix;

use super::transform::{Layout, Unpacked, UnconstrainedVector};
use super::PriorSpec;
use crate::data::{Arm, PatientRecord, TrialDataset};
use crate::error::{Error, Result};
use crate::gaussian::{mvn_logpdf, CovMatrix};
use crate::model::template_mean;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Template {
    Control,
    Active,
    /// Active patient with discontinuation after visit `d` and the full
    /// post-ICE block in the likelihood.
    ActivePost(usize),
}

#[derive(Debug, Clone)]
struct Group {
    template: Template,
    obs: Vec<usize>,
    prefix: bool,
    n: f64,
    sx: f64,
    sxx: f64,
    sy: Vec<f64>,
    syx: Vec<f64>,
    syy: Vec<f64>,
}

impl Group {
    fn new(template: Template, obs: Vec<usize>) -> Self {
        let k = obs.len();
        let prefix = obs.iter().enumerate().all(|(i, &o)| i == o);
        Self {
            template,
            obs,
            prefix,
            n: 0.0,
            sx: 0.0,
            sxx: 0.0,
            sy: vec![0.0; k],
            syx: vec![0.0; k],
            syy: vec![0.0; k * k],
        }
    }

    fn add(&mut self, x: f64, y: &[f64]) {
        let k = self.obs.len();
        self.n += 1.0;
        self.sx += x;
        self.sxx += x * x;
        for a in 0..k {
            self.sy[a] += y[a];
            self.syx[a] += y[a] * x;
            for b in 0..k {
                self.syy[a * k + b] += y[a] * y[b];
            }
        }
    }
}

/// Likelihood sufficient statistics for one dataset.
#[derive(Debug, Clone)]
struct SuffStats {
    groups: Vec<Group>,
}

impl SuffStats {
    fn new(ds: &TrialDataset, include_post_ice: bool) -> Self {
        let mut index: HashMap<(Template, Vec<usize>), usize> = HashMap::new();
        let mut groups: Vec<Group> = Vec::new();
        for p in ds.patients() {
            let (template, obs) = likelihood_block(p, include_post_ice);
            if obs.is_empty() {
                continue;
            }
            let y: Vec<f64> = obs.iter().map(|&v| p.y[v].expect("observed")).collect();
            let gi = *index.entry((template, obs.clone())).or_insert_with(|| {
                groups.push(Group::new(template, obs));
                groups.len() - 1
            });
            groups[gi].add(p.baseline, &y);
        }
        Self { groups }
    }
}

/// Template and visit set a patient contributes to the likelihood.
fn likelihood_block(p: &PatientRecord, include_post_ice: bool) -> (Template, Vec<usize>) {
    match p.arm {
        Arm::Control => (Template::Control, p.observed_indices()),
        Arm::Active => {
            if p.has_ice() && include_post_ice && p.post_ice_observed() {
                (Template::ActivePost(p.d), (0..p.n_visits()).collect())
            } else {
                (Template::Active, (0..p.d).collect())
            }
        }
    }
}

/// Log posterior density over the unconstrained parameterization.
#[derive(Debug, Clone)]
pub struct Posterior {
    layout: Layout,
    prior: PriorSpec,
    include_post_ice: bool,
    stats: SuffStats,
}

impl Posterior {
    /// `k0_fixed` removes `k0` from the free parameters.
    pub fn new(
        ds: &TrialDataset,
        prior: &PriorSpec,
        include_post_ice: bool,
        k0_fixed: Option<f64>,
    ) -> Result<Self> {
        prior.validate()?;
        let j = ds.n_visits();
        let layout = Layout {
            n_visits: j,
            k0_fixed,
        };
        Ok(Self {
            layout,
            prior: prior.clone(),
            include_post_ice,
            stats: SuffStats::new(ds, include_post_ice),
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn include_post_ice(&self) -> bool {
        self.include_post_ice
    }

    /// Whether any active post-ICE block enters the likelihood.
    pub fn has_post_ice_information(&self) -> bool {
        self.stats
            .groups
            .iter()
            .any(|g| matches!(g.template, Template::ActivePost(_)))
    }

    pub fn log_density(&self, v: &[f64]) -> f64 {
        self.evaluate(v, None)
    }

    /// Log density; the gradient is written into `grad`.
    pub fn log_density_grad(&self, v: &[f64], grad: &mut [f64]) -> f64 {
        self.evaluate(v, Some(grad))
    }

    fn evaluate(&self, v: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let layout = &self.layout;
        let j = layout.n_visits;
        let u = Unpacked::new(layout, v);
        let want_grad = grad.is_some();
        let mut g_local = vec![0.0; if want_grad { v.len() } else { 0 }];

        let c = &u.chol;
        let mut logdiag = Vec::with_capacity(j);
        for i in 0..j {
            if !(c[(i, i)] > 0.0) || !c[(i, i)].is_finite() {
                return f64::NEG_INFINITY;
            }
            logdiag.push(c[(i, i)].ln());
        }
        let w = match c.clone().solve_lower_triangular(&DMatrix::identity(j, j)) {
            Some(w) => w,
            None => return f64::NEG_INFINITY,
        };
        let sigma = if self.stats.groups.iter().all(|g| g.prefix) {
            None
        } else {
            Some(u.sigma())
        };
        let deltas: Vec<f64> = (0..j).map(|i| u.mu_active[i] - u.mu_control[i]).collect();
        let mut g_sigma = DMatrix::<f64>::zeros(j, j);
        let mut ll = 0.0;

        for g in &self.stats.groups {
            let k = g.obs.len();
            let (prec, logdet) = if g.prefix {
                let wk = w.view((0, 0), (k, k));
                (wk.transpose() * wk, 2.0 * logdiag[..k].iter().sum::<f64>())
            } else {
                let s = sigma.as_ref().expect("full covariance");
                let sub = DMatrix::from_fn(k, k, |a, b| s[(g.obs[a], g.obs[b])]);
                let Some(ch) = sub.cholesky() else {
                    return f64::NEG_INFINITY;
                };
                let ld = 2.0 * ch.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
                (ch.inverse(), ld)
            };
            let m: Vec<f64> = g
                .obs
                .iter()
                .map(|&vis| match g.template {
                    Template::Control => u.mu_control[vis],
                    Template::Active => u.mu_active[vis],
                    Template::ActivePost(d) if vis < d => u.mu_active[vis],
                    Template::ActivePost(d) => u.mu_control[vis] + u.k0 * deltas[d - 1],
                })
                .collect();
            let a: Vec<f64> = g.obs.iter().map(|&vis| u.alpha[vis]).collect();
            // centered scatter S = sum (y - m - a x)(y - m - a x)^T
            let s = DMatrix::from_fn(k, k, |r, q| {
                g.syy[r * k + q] - g.sy[r] * m[q] - m[r] * g.sy[q] - g.syx[r] * a[q] - a[r] * g.syx[q]
                    + g.n * m[r] * m[q]
                    + g.sx * (m[r] * a[q] + a[r] * m[q])
                    + g.sxx * a[r] * a[q]
            });
            let ps = &prec * &s;
            ll += -0.5 * (g.n * k as f64 * LN_2PI + g.n * logdet + ps.trace());
            if !want_grad {
                continue;
            }
            let gm: Vec<f64> = (0..k)
                .map(|r| {
                    (0..k)
                        .map(|q| prec[(r, q)] * (g.sy[q] - g.n * m[q] - g.sx * a[q]))
                        .sum()
                })
                .collect();
            for (r, &vis) in g.obs.iter().enumerate() {
                let ga: f64 = (0..k)
                    .map(|q| prec[(r, q)] * (g.syx[q] - g.sx * m[q] - g.sxx * a[q]))
                    .sum();
                g_local[layout.alpha().start + vis] += ga;
                match g.template {
                    Template::Control => g_local[layout.mu_control().start + vis] += gm[r],
                    Template::Active => g_local[layout.mu_active().start + vis] += gm[r],
                    Template::ActivePost(d) if vis < d => g_local[layout.mu_active().start + vis] += gm[r],
                    Template::ActivePost(d) => {
                        g_local[layout.mu_control().start + vis] += gm[r];
                        g_local[layout.mu_active().start + d - 1] += gm[r] * u.k0;
                        g_local[layout.mu_control().start + d - 1] -= gm[r] * u.k0;
                        if let Some(ki) = layout.k0() {
                            g_local[ki] += gm[r] * deltas[d - 1];
                        }
                    }
                }
            }
            let psp = &ps * &prec;
            for r in 0..k {
                for q in 0..k {
                    g_sigma[(g.obs[r], g.obs[q])] += -0.5 * (g.n * prec[(r, q)] - psp[(r, q)]);
                }
            }
        }

        // normal priors on intercepts, slopes and k0
        let pr = &self.prior;
        let normal = |x: f64, mean: f64, sd: f64| -0.5 * ((x - mean) / sd).powi(2) - sd.ln() - 0.5 * LN_2PI;
        let mut lp = ll;
        for i in 0..j {
            lp += normal(u.mu_active[i], 0.0, pr.mu_sd)
                + normal(u.mu_control[i], 0.0, pr.mu_sd)
                + normal(u.alpha[i], 0.0, pr.alpha_sd);
        }
        if layout.k0().is_some() {
            lp += normal(u.k0, pr.k0_mean, pr.k0_sd);
        }

        if let Some(grad) = grad {
            for i in 0..j {
                g_local[layout.mu_active().start + i] -= u.mu_active[i] / pr.mu_sd.powi(2);
                g_local[layout.mu_control().start + i] -= u.mu_control[i] / pr.mu_sd.powi(2);
                g_local[layout.alpha().start + i] -= u.alpha[i] / pr.alpha_sd.powi(2);
            }
            if let Some(ki) = layout.k0() {
                g_local[ki] -= (u.k0 - pr.k0_mean) / pr.k0_sd.powi(2);
            }
            let g_chol = (&g_sigma * c) * 2.0;
            lp += u.covariance_terms(layout, v, pr.sd_scale, pr.corr_eta, Some(&g_chol), Some(&mut g_local));
            grad.copy_from_slice(&g_local);
        } else {
            lp += u.covariance_terms(layout, v, pr.sd_scale, pr.corr_eta, None, None);
        }
        lp
    }
}

/// Log posterior at `v`, with the offending patient reported when the value
/// is not finite.
pub fn log_posterior(
    v: &UnconstrainedVector,
    ds: &TrialDataset,
    prior: &PriorSpec,
    include_post_ice: bool,
) -> Result<f64> {
    let post = Posterior::new(ds, prior, include_post_ice, v.layout.k0_fixed)?;
    if v.layout.n_visits != ds.n_visits() {
        return Err(Error::InvalidArgument("parameter dimension does not match dataset".into()));
    }
    let lp = post.log_density(&v.values);
    if lp.is_finite() {
        return Ok(lp);
    }
    Err(Error::NonFinite {
        patient: offending_patient(v, ds, include_post_ice).unwrap_or_else(|| "<prior>".into()),
    })
}

/// First patient whose likelihood contribution is not finite.
fn offending_patient(v: &UnconstrainedVector, ds: &TrialDataset, include_post_ice: bool) -> Option<String> {
    let j = ds.n_visits();
    let Ok(params) = v.to_params(vec![1.0 / j as f64; j]) else {
        return ds.patients().first().map(|p| p.id.clone());
    };
    for p in ds.patients() {
        let (template, obs) = likelihood_block(p, include_post_ice);
        if obs.is_empty() {
            continue;
        }
        let mean = match template {
            Template::Control => template_mean(&params, Arm::Control, p.baseline, j),
            Template::Active => template_mean(&params, Arm::Active, p.baseline, j),
            Template::ActivePost(d) => template_mean(&params, Arm::Active, p.baseline, d),
        };
        let s = params.sigma.matrix();
        let sub = DMatrix::from_fn(obs.len(), obs.len(), |a, b| s[(obs[a], obs[b])]);
        let ok = CovMatrix::new(sub).and_then(|cov| {
            let x = nalgebra::DVector::from_iterator(obs.len(), obs.iter().map(|&o| p.y[o].unwrap()));
            let m = nalgebra::DVector::from_iterator(obs.len(), obs.iter().map(|&o| mean[o]));
            mvn_logpdf(&x, &m, &cov)
        });
        if !matches!(ok, Ok(x) if x.is_finite()) {
            return Some(p.id.clone());
        }
    }
    None
}
