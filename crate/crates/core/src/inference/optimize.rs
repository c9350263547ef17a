//! MAP estimation: L-BFGS from several deterministic starts followed by a
//! Newton polish on a finite-difference Hessian.

use nalgebra::{DMatrix, DVector};

use super::density::Posterior;
use super::transform::{Layout, UnconstrainedVector};
use super::{check_identifiable, PriorSpec};
use crate::data::{Arm, TrialDataset};
use crate::error::{Error, Result};
use crate::model::CausalParams;

const GRAD_TOL: f64 = 1e-6;
/// Newton decrement (expected log-posterior gain) treated as converged.
const DECREMENT_TOL: f64 = 1e-10;
const MAX_ITER: usize = 500;
const HISTORY: usize = 10;

#[derive(Debug, Clone)]
pub struct MapFit {
    /// MAP parameters; `pi` holds the empirical discontinuation proportions.
    pub params: CausalParams,
    pub point: UnconstrainedVector,
    pub log_posterior: f64,
    pub grad_sup_norm: f64,
    pub iterations: usize,
    /// Negative Hessian of the log posterior at the mode.
    pub neg_hessian: DMatrix<f64>,
}

pub fn fit_map(ds: &TrialDataset, prior: &PriorSpec, include_post_ice: bool) -> Result<MapFit> {
    fit_map_fixed(ds, prior, include_post_ice, None)
}

/// MAP with `k0` optionally held fixed.
pub fn fit_map_fixed(
    ds: &TrialDataset,
    prior: &PriorSpec,
    include_post_ice: bool,
    k0_fixed: Option<f64>,
) -> Result<MapFit> {
    let post = Posterior::new(ds, prior, include_post_ice, k0_fixed)?;
    check_identifiable(&post)?;
    let starts = initial_points(ds, post.layout(), prior);
    let mut best: Option<Polished> = None;
    let mut failures = Vec::new();
    for (name, x0) in starts {
        match minimize(&post, x0).and_then(|x| polish(&post, x, None)) {
            Ok(run) => {
                if best.as_ref().is_none_or(|b| run.lp > b.lp) {
                    best = Some(run);
                }
            }
            Err(e) => failures.push(format!("{name} start: {e}")),
        }
    }
    let best = best.ok_or_else(|| Error::Optimization(failures.join("; ")))?;
    finish(ds, &post, best)
}

/// Re-fit on a perturbed dataset (bootstrap or jackknife sample) starting
/// from an existing fit and reusing its curvature. Falls back to a full
/// multi-start fit when the warm start does not converge. The returned
/// `neg_hessian` may be the warm fit's, not one evaluated at the new mode.
pub fn refit_map(
    ds: &TrialDataset,
    prior: &PriorSpec,
    include_post_ice: bool,
    warm: &MapFit,
) -> Result<MapFit> {
    let k0_fixed = warm.point.layout.k0_fixed;
    let post = Posterior::new(ds, prior, include_post_ice, k0_fixed)?;
    check_identifiable(&post)?;
    if let Ok(run) = polish(&post, warm.point.values.clone(), Some(&warm.neg_hessian)) {
        return finish(ds, &post, run);
    }
    if let Ok(run) = minimize(&post, warm.point.values.clone()).and_then(|x| polish(&post, x, None)) {
        return finish(ds, &post, run);
    }
    fit_map_fixed(ds, prior, include_post_ice, k0_fixed)
}

struct Polished {
    x: Vec<f64>,
    lp: f64,
    sup: f64,
    iterations: usize,
    neg_hessian: DMatrix<f64>,
}

fn finish(ds: &TrialDataset, post: &Posterior, run: Polished) -> Result<MapFit> {
    let counts = ds.discontinuation_counts();
    let n: usize = counts.iter().sum();
    let pi = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let point = UnconstrainedVector::new(*post.layout(), run.x)?;
    Ok(MapFit {
        params: point.to_params(pi)?,
        point,
        log_posterior: run.lp,
        grad_sup_norm: run.sup,
        iterations: run.iterations,
        neg_hessian: run.neg_hessian,
    })
}

fn sup_norm(g: &[f64]) -> f64 {
    g.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Objective to minimize: negative log posterior and its gradient.
fn objective(post: &Posterior, x: &[f64], g: &mut [f64]) -> f64 {
    let lp = post.log_density_grad(x, g);
    for gi in g.iter_mut() {
        *gi = -*gi;
    }
    if lp.is_finite() && g.iter().all(|v| v.is_finite()) {
        -lp
    } else {
        f64::INFINITY
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct LineResult {
    step: f64,
    f: f64,
    g: Vec<f64>,
}

/// Strong-Wolfe line search along `p` (bracketing then zoom).
fn line_search(post: &Posterior, x: &[f64], f0: f64, g0: &[f64], p: &[f64], init: f64) -> Option<LineResult> {
    let d0 = dot(g0, p);
    if !(d0 < 0.0) {
        return None;
    }
    let search = Search { post, x, p, f0, d0 };
    let mut prev = Trial {
        a: 0.0,
        f: f0,
        d: d0,
        g: g0.to_vec(),
    };
    let mut a = init;
    for i in 0..40 {
        let t = search.eval(a);
        if !t.f.is_finite() || t.f > f0 + C1 * a * d0 || (i > 0 && t.f >= prev.f) {
            return search.zoom(prev, t.a, t.f);
        }
        if t.d.abs() <= -C2 * d0 {
            return Some(t.into());
        }
        if t.d >= 0.0 {
            let (a_hi, f_hi) = (prev.a, prev.f);
            return search.zoom(t, a_hi, f_hi);
        }
        prev = t;
        a *= 2.0;
    }
    None
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;

struct Trial {
    a: f64,
    f: f64,
    d: f64,
    g: Vec<f64>,
}

impl From<Trial> for LineResult {
    fn from(t: Trial) -> Self {
        LineResult {
            step: t.a,
            f: t.f,
            g: t.g,
        }
    }
}

struct Search<'a> {
    post: &'a Posterior,
    x: &'a [f64],
    p: &'a [f64],
    f0: f64,
    d0: f64,
}

impl Search<'_> {
    fn eval(&self, a: f64) -> Trial {
        let xt: Vec<f64> = self.x.iter().zip(self.p).map(|(xi, pi)| xi + a * pi).collect();
        let mut g = vec![0.0; xt.len()];
        let f = objective(self.post, &xt, &mut g);
        let d = dot(&g, self.p);
        Trial { a, f, d, g }
    }

    /// Zoom between `lo` (satisfies sufficient decrease) and `a_hi`.
    fn zoom(&self, mut lo: Trial, mut a_hi: f64, mut f_hi: f64) -> Option<LineResult> {
        for _ in 0..40 {
            let w = a_hi - lo.a;
            let denom = 2.0 * (f_hi - lo.f - lo.d * w);
            let mut a = if f_hi.is_finite() && denom > 0.0 {
                lo.a - lo.d * w * w / denom
            } else {
                lo.a + 0.5 * w
            };
            let (l, u) = if lo.a < a_hi { (lo.a, a_hi) } else { (a_hi, lo.a) };
            if u - l <= 1e-14 * u.abs().max(1e-300) {
                break;
            }
            let margin = 0.1 * (u - l);
            if !(a > l + margin && a < u - margin) {
                a = 0.5 * (l + u);
            }
            let t = self.eval(a);
            if !t.f.is_finite() || t.f > self.f0 + C1 * a * self.d0 || t.f >= lo.f {
                a_hi = a;
                f_hi = t.f;
            } else {
                if t.d.abs() <= -C2 * self.d0 {
                    return Some(t.into());
                }
                if t.d * (a_hi - lo.a) >= 0.0 {
                    a_hi = lo.a;
                    f_hi = lo.f;
                }
                lo = t;
            }
        }
        (lo.a > 0.0 && lo.f < self.f0).then(|| lo.into())
    }
}

/// L-BFGS minimization of the negative log posterior. Returns the last
/// iterate, which may still need polishing.
fn minimize(post: &Posterior, x0: Vec<f64>) -> Result<Vec<f64>> {
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut f = objective(post, &x, &mut g);
    if !f.is_finite() {
        return Err(Error::Optimization("log posterior not finite at the start".into()));
    }
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut stalls = 0;
    for it in 0..MAX_ITER {
        if sup_norm(&g) < GRAD_TOL {
            break;
        }
        // two-loop recursion
        let mut q = g.clone();
        let k = s_hist.len();
        let mut alphas = vec![0.0; k];
        for i in (0..k).rev() {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            alphas[i] = rho * dot(&s_hist[i], &q);
            for (qj, yj) in q.iter_mut().zip(&y_hist[i]) {
                *qj -= alphas[i] * yj;
            }
        }
        let gamma = if k > 0 {
            dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1])
        } else {
            1.0 / sup_norm(&g).max(1.0)
        };
        for qj in q.iter_mut() {
            *qj *= gamma;
        }
        for i in 0..k {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            let beta = rho * dot(&y_hist[i], &q);
            for (qj, sj) in q.iter_mut().zip(&s_hist[i]) {
                *qj += (alphas[i] - beta) * sj;
            }
        }
        let p: Vec<f64> = q.iter().map(|v| -v).collect();
        let Some(ls) = line_search(post, &x, f, &g, &p, 1.0) else {
            if s_hist.is_empty() || it == 0 {
                return Err(Error::Optimization(format!(
                    "line search failed at iteration {it} (gradient sup-norm {:.3e})",
                    sup_norm(&g)
                )));
            }
            // restart from steepest descent once before giving up
            s_hist.clear();
            y_hist.clear();
            stalls += 1;
            if stalls > 2 {
                break;
            }
            continue;
        };
        let s: Vec<f64> = p.iter().map(|v| v * ls.step).collect();
        let y: Vec<f64> = ls.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi += si;
        }
        let rel = (f - ls.f).abs() / f.abs().max(1.0);
        f = ls.f;
        g = ls.g;
        if dot(&s, &y) > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if s_hist.len() == HISTORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }
        if rel < 1e-15 {
            stalls += 1;
            if stalls > 3 {
                break;
            }
        }
    }
    Ok(x)
}

/// Central-difference Hessian of the log posterior from analytic gradients.
fn fd_hessian(post: &Posterior, x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    let mut gp = vec![0.0; n];
    let mut gm = vec![0.0; n];
    let mut xt = x.to_vec();
    for i in 0..n {
        let step = 1e-5 * x[i].abs().max(1.0);
        xt[i] = x[i] + step;
        post.log_density_grad(&xt, &mut gp);
        xt[i] = x[i] - step;
        post.log_density_grad(&xt, &mut gm);
        xt[i] = x[i];
        for r in 0..n {
            h[(r, i)] = (gp[r] - gm[r]) / (2.0 * step);
        }
    }
    (&h + h.transpose()) * 0.5
}

/// Newton iterations on the negative log posterior until the gradient
/// sup-norm drops below tolerance. With `curvature` the given negative
/// Hessian is reused (chord Newton) until a step has to be cut back;
/// otherwise it is re-evaluated after every step.
fn polish(post: &Posterior, x0: Vec<f64>, curvature: Option<&DMatrix<f64>>) -> Result<Polished> {
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut lp = post.log_density_grad(&x, &mut g);
    if !lp.is_finite() {
        return Err(Error::Optimization("log posterior not finite".into()));
    }
    let mut neg_h = match curvature {
        Some(h) => h.clone(),
        None => -fd_hessian(post, &x),
    };
    let full_newton = curvature.is_none();
    let mut fresh = full_newton;
    let mut iterations = 0;
    let max_iter = if curvature.is_some() { 40 } else { 20 };
    while sup_norm(&g) >= GRAD_TOL {
        if iterations >= max_iter {
            return Err(Error::Optimization(format!(
                "Newton polish stalled with gradient sup-norm {:.3e}",
                sup_norm(&g)
            )));
        }
        let step = newton_step(&neg_h, &g)?;
        // On a ridge the gradient can stay above tolerance while the
        // predicted gain of a full step is already negligible.
        if fresh && dot(&g, &step) < DECREMENT_TOL {
            break;
        }
        iterations += 1;
        let mut t = 1.0;
        let mut accepted = false;
        let mut gt = vec![0.0; n];
        for _ in 0..30 {
            let xt: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + t * b).collect();
            let lpt = post.log_density_grad(&xt, &mut gt);
            if lpt.is_finite() && (lpt >= lp - 1e-12 * lp.abs() || sup_norm(&gt) < sup_norm(&g)) {
                x = xt;
                lp = lpt;
                std::mem::swap(&mut g, &mut gt);
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            if fresh {
                return Err(Error::Optimization(format!(
                    "Newton polish could not improve at gradient sup-norm {:.3e}",
                    sup_norm(&g)
                )));
            }
            neg_h = -fd_hessian(post, &x);
            fresh = true;
        } else if full_newton || t < 0.5 {
            neg_h = -fd_hessian(post, &x);
            fresh = true;
        } else {
            fresh = false;
        }
    }
    Ok(Polished {
        sup: sup_norm(&g),
        x,
        lp,
        iterations,
        neg_hessian: neg_h,
    })
}

/// Solves `neg_h * step = g`, regularizing when `neg_h` is not positive definite.
fn newton_step(neg_h: &DMatrix<f64>, g: &[f64]) -> Result<Vec<f64>> {
    let n = g.len();
    let rhs = DVector::from_column_slice(g);
    let scale = neg_h.diagonal().abs().max().max(1.0);
    let mut shift = 0.0;
    for _ in 0..20 {
        let m = neg_h + DMatrix::identity(n, n) * shift;
        if let Some(ch) = m.cholesky() {
            return Ok(ch.solve(&rhs).iter().copied().collect());
        }
        shift = if shift == 0.0 { 1e-8 * scale } else { shift * 10.0 };
    }
    Err(Error::Optimization("curvature matrix could not be regularized".into()))
}

/// Moment-based, zero-effect and perturbed starting points.
fn initial_points(ds: &TrialDataset, layout: &Layout, prior: &PriorSpec) -> Vec<(&'static str, Vec<f64>)> {
    let j = layout.n_visits;
    let mut mu_a = vec![0.0; j];
    let mut mu_c = vec![0.0; j];
    let mut alpha = vec![0.0; j];
    let mut pooled_mu = vec![0.0; j];
    let mut pooled_alpha = vec![0.0; j];
    let mut var = vec![1.0; j];
    // on-treatment rows at each visit: (arm indicator, baseline, y)
    let rows = |v: usize| -> Vec<(f64, f64, f64)> {
        ds.patients()
            .iter()
            .filter(|p| p.arm == Arm::Control || v < p.d)
            .filter_map(|p| p.y[v].map(|y| (p.arm.indicator(), p.baseline, y)))
            .collect()
    };
    let mut resid: Vec<Vec<Option<f64>>> = vec![vec![None; j]; ds.len()];
    for v in 0..j {
        let r = rows(v);
        if let Some((b, s2)) = ols(&r, true) {
            mu_c[v] = b[0];
            mu_a[v] = b[0] + b[1];
            alpha[v] = b[2];
            var[v] = s2;
        } else if let Some((b, s2)) = ols(&r, false) {
            mu_c[v] = b[0];
            mu_a[v] = b[0];
            alpha[v] = b[2];
            var[v] = s2;
        }
        if let Some((b, _)) = ols(&r, false) {
            pooled_mu[v] = b[0];
            pooled_alpha[v] = b[2];
        }
        for (i, p) in ds.patients().iter().enumerate() {
            if p.arm == Arm::Control || v < p.d {
                if let Some(y) = p.y[v] {
                    let m = if p.arm == Arm::Active { mu_a[v] } else { mu_c[v] };
                    resid[i][v] = Some(y - m - alpha[v] * p.baseline);
                }
            }
        }
    }
    // pairwise residual correlations, kept only when positive definite
    let mut corr = DMatrix::identity(j, j);
    for a in 0..j {
        for b in 0..a {
            let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
            for r in &resid {
                if let (Some(x), Some(y)) = (r[a], r[b]) {
                    sab += x * y;
                    saa += x * x;
                    sbb += y * y;
                }
            }
            let c = if saa > 0.0 && sbb > 0.0 { sab / (saa * sbb).sqrt() } else { 0.0 };
            corr[(a, b)] = c.clamp(-0.95, 0.95);
            corr[(b, a)] = corr[(a, b)];
        }
    }
    if corr.clone().cholesky().is_none() {
        corr = DMatrix::identity(j, j);
    }
    let sd: Vec<f64> = var.iter().map(|v| v.max(1e-6).sqrt()).collect();
    let sigma = DMatrix::from_fn(j, j, |a, b| corr[(a, b)] * sd[a] * sd[b]);
    let cov_coords = covariance_coordinates(layout, &sigma);

    let build = |mu_a: &[f64], mu_c: &[f64], alpha: &[f64], k0: f64, cov: &[f64]| {
        let mut v = Vec::with_capacity(layout.dim());
        v.extend(mu_a);
        v.extend(mu_c);
        v.extend(alpha);
        if layout.k0().is_some() {
            v.push(k0);
        }
        v.extend(cov);
        v
    };
    let k0 = prior.k0_mean;
    let moment = build(&mu_a, &mu_c, &alpha, k0, &cov_coords);
    let zero = build(&pooled_mu, &pooled_mu, &pooled_alpha, 0.0, &cov_coords);
    let bumped: Vec<f64> = mu_a
        .iter()
        .enumerate()
        .map(|(i, m)| m + if i % 2 == 0 { 0.1 } else { -0.1 })
        .collect();
    let mut cov_bumped = cov_coords.clone();
    for (i, c) in cov_bumped.iter_mut().enumerate() {
        *c += if i < j { 0.1 } else { 0.05 };
    }
    let perturbed = build(&bumped, &mu_c, &alpha, k0 + 0.5, &cov_bumped);
    vec![("moment-based", moment), ("zero-effect", zero), ("perturbed", perturbed)]
}

/// Log SDs followed by correlation coordinates for a covariance matrix.
fn covariance_coordinates(layout: &Layout, sigma: &DMatrix<f64>) -> Vec<f64> {
    let j = layout.n_visits;
    let probe = CausalParams {
        mu_active: vec![0.0; j],
        mu_control: vec![0.0; j],
        alpha: vec![0.0; j],
        sigma: match crate::gaussian::CovMatrix::new(sigma.clone()) {
            Ok(s) => s,
            Err(_) => crate::gaussian::CovMatrix::identity(j),
        },
        k0: 0.0,
        pi: vec![1.0 / j as f64; j],
    };
    let full = Layout::with_fixed_k0(j, 0.0);
    match UnconstrainedVector::from_params(&probe, full) {
        Ok(u) => u.values[full.log_sd().start..].to_vec(),
        Err(_) => vec![0.0; j + j * (j - 1) / 2],
    }
}

/// OLS of y on [1, T, x] (`with_arm`) or [1, x]; returns coefficients as
/// [intercept, arm effect (0 when absent), slope] and the residual variance.
fn ols(rows: &[(f64, f64, f64)], with_arm: bool) -> Option<([f64; 3], f64)> {
    let p = if with_arm { 3 } else { 2 };
    if rows.len() < p + 1 {
        return None;
    }
    let x = DMatrix::from_fn(rows.len(), p, |i, c| match (c, with_arm) {
        (0, _) => 1.0,
        (1, true) => rows[i].0,
        _ => rows[i].1,
    });
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.2));
    let xtx = x.transpose() * &x;
    let ch = xtx.cholesky()?;
    let b = ch.solve(&(x.transpose() * &y));
    let r = &y - &x * &b;
    let s2 = r.norm_squared() / (rows.len() - p) as f64;
    if !b.iter().all(|v| v.is_finite()) || !(s2 > 0.0) {
        return None;
    }
    Some(if with_arm {
        ([b[0], b[1], b[2]], s2)
    } else {
        ([b[0], 0.0, b[1]], s2)
    })
}
