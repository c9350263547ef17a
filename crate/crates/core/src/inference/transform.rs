//! Unconstrained parameterization of the causal model (without `pi`).
//!
//! Layout: active intercepts, control intercepts, baseline slopes, `k0`
//! (absent when fixed), log marginal SDs, then the strictly lower triangle of
//! the correlation Cholesky factor in canonical-partial-correlation form
//! (`tanh` of each coordinate, row by row).

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::CovMatrix;
use crate::model::CausalParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub n_visits: usize,
    /// When set, `k0` is not a free coordinate.
    pub k0_fixed: Option<f64>,
}

impl Layout {
    pub fn new(n_visits: usize) -> Self {
        Self {
            n_visits,
            k0_fixed: None,
        }
    }

    pub fn with_fixed_k0(n_visits: usize, k0: f64) -> Self {
        Self {
            n_visits,
            k0_fixed: Some(k0),
        }
    }

    pub fn mu_active(&self) -> Range<usize> {
        0..self.n_visits
    }

    pub fn mu_control(&self) -> Range<usize> {
        self.n_visits..2 * self.n_visits
    }

    pub fn alpha(&self) -> Range<usize> {
        2 * self.n_visits..3 * self.n_visits
    }

    pub fn k0(&self) -> Option<usize> {
        self.k0_fixed.is_none().then_some(3 * self.n_visits)
    }

    pub fn log_sd(&self) -> Range<usize> {
        let start = 3 * self.n_visits + usize::from(self.k0_fixed.is_none());
        start..start + self.n_visits
    }

    pub fn corr(&self) -> Range<usize> {
        let start = self.log_sd().end;
        start..start + self.n_visits * (self.n_visits - 1) / 2
    }

    pub fn dim(&self) -> usize {
        self.corr().end
    }

    pub fn names(&self) -> Vec<String> {
        let j = self.n_visits;
        let mut names: Vec<String> = (1..=j).map(|v| format!("mu_active[{v}]")).collect();
        names.extend((1..=j).map(|v| format!("mu_control[{v}]")));
        names.extend((1..=j).map(|v| format!("alpha[{v}]")));
        if self.k0_fixed.is_none() {
            names.push("k0".into());
        }
        names.extend((1..=j).map(|v| format!("log_sd[{v}]")));
        for i in 1..j {
            for k in 0..i {
                names.push(format!("corr_z[{},{}]", i + 1, k + 1));
            }
        }
        names
    }

    /// Indices of `k0` and all mean intercepts, the parameters covered by the
    /// sampler's convergence contract.
    pub fn key_parameters(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = self.mu_active().chain(self.mu_control()).collect();
        idx.extend(self.k0());
        idx
    }
}

/// A point in the unconstrained space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnconstrainedVector {
    pub layout: Layout,
    pub values: Vec<f64>,
}

/// `ln(1 - tanh(z)^2)` without cancellation.
pub(crate) fn log_sech2(z: f64) -> f64 {
    let a = z.abs();
    2.0 * (std::f64::consts::LN_2 - a - (-2.0 * a).exp().ln_1p())
}

/// Constrained quantities derived from an unconstrained vector.
#[derive(Debug, Clone)]
pub(crate) struct Unpacked {
    pub mu_active: Vec<f64>,
    pub mu_control: Vec<f64>,
    pub alpha: Vec<f64>,
    pub k0: f64,
    pub sd: Vec<f64>,
    /// Tanh of the correlation coordinates, row-major lower triangle.
    w: Vec<f64>,
    /// Cholesky factor of the correlation matrix.
    pub corr_chol: DMatrix<f64>,
    /// Cholesky factor of the covariance, `diag(sd) * corr_chol`.
    pub chol: DMatrix<f64>,
}

impl Unpacked {
    pub fn new(layout: &Layout, v: &[f64]) -> Self {
        let j = layout.n_visits;
        let k0 = match layout.k0() {
            Some(i) => v[i],
            None => layout.k0_fixed.expect("fixed k0"),
        };
        let sd: Vec<f64> = v[layout.log_sd()].iter().map(|u| u.exp()).collect();
        let w: Vec<f64> = v[layout.corr()].iter().map(|z| z.tanh()).collect();
        let mut l = DMatrix::zeros(j, j);
        l[(0, 0)] = 1.0;
        let mut k = 0;
        for i in 1..j {
            let mut s: f64 = 0.0;
            for c in 0..i {
                let val = w[k] * (1.0 - s).max(0.0).sqrt();
                l[(i, c)] = val;
                s += val * val;
                k += 1;
            }
            l[(i, i)] = (1.0 - s).max(0.0).sqrt();
        }
        let chol = DMatrix::from_fn(j, j, |r, c| sd[r] * l[(r, c)]);
        Self {
            mu_active: v[layout.mu_active()].to_vec(),
            mu_control: v[layout.mu_control()].to_vec(),
            alpha: v[layout.alpha()].to_vec(),
            k0,
            sd,
            w,
            corr_chol: l,
            chol,
        }
    }

    pub fn sigma(&self) -> DMatrix<f64> {
        &self.chol * self.chol.transpose()
    }

    /// Log prior of the covariance parameters (half-normal marginal SDs, LKJ
    /// correlation) plus the log-Jacobian of the transform. When `grad` is
    /// given, `g_chol` (the adjoint of the covariance Cholesky factor from
    /// the likelihood) is chained through and all covariance-coordinate
    /// gradients are accumulated into `grad`.
    pub fn covariance_terms(
        &self,
        layout: &Layout,
        v: &[f64],
        sd_scale: f64,
        eta: f64,
        g_chol: Option<&DMatrix<f64>>,
        grad: Option<&mut [f64]>,
    ) -> f64 {
        let j = layout.n_visits;
        let l = &self.corr_chol;
        let mut lp = 0.0;
        // half-normal on sd with log-transform Jacobian
        for (i, &s) in self.sd.iter().enumerate() {
            lp += -0.5 * (s / sd_scale).powi(2) + v[layout.log_sd().start + i];
        }
        // LKJ on the correlation Cholesky factor
        for k in 1..j {
            let coef = (j - k - 1) as f64 + 2.0 * (eta - 1.0);
            lp += coef * l[(k, k)].ln();
        }
        // CPC and tanh Jacobians
        let mut k = 0;
        for i in 1..j {
            let mut s: f64 = 0.0;
            for c in 0..i {
                lp += 0.5 * (1.0 - s).ln() + log_sech2(v[layout.corr().start + k]);
                s += l[(i, c)] * l[(i, c)];
                k += 1;
            }
        }
        let Some(grad) = grad else {
            return lp;
        };

        // adjoint of the correlation factor and of log sd
        let mut g_l = DMatrix::zeros(j, j);
        let sd_off = layout.log_sd().start;
        for i in 0..j {
            let mut g_u = -(self.sd[i] / sd_scale).powi(2) + 1.0;
            if let Some(gc) = g_chol {
                for c in 0..=i {
                    g_u += gc[(i, c)] * self.chol[(i, c)];
                    g_l[(i, c)] = gc[(i, c)] * self.sd[i];
                }
            }
            grad[sd_off + i] += g_u;
        }
        for k in 1..j {
            let coef = (j - k - 1) as f64 + 2.0 * (eta - 1.0);
            g_l[(k, k)] += coef / l[(k, k)];
        }
        // reverse pass through each row of the CPC recursion
        let corr_off = layout.corr().start;
        let mut row_start = 0;
        for i in 1..j {
            let mut s_before = vec![0.0; i];
            let mut s: f64 = 0.0;
            for c in 0..i {
                s_before[c] = s;
                s += l[(i, c)] * l[(i, c)];
            }
            let mut g_s = g_l[(i, i)] * (-0.5 / l[(i, i)]);
            for c in (0..i).rev() {
                let lic = l[(i, c)];
                let gl = g_l[(i, c)] + g_s * 2.0 * lic;
                let wv = self.w[row_start + c];
                let f = (1.0 - s_before[c]).sqrt();
                let g_w = gl * f;
                g_s += gl * wv * (-0.5 / f) - 0.5 / (1.0 - s_before[c]);
                grad[corr_off + row_start + c] += g_w * (1.0 - wv * wv) - 2.0 * wv;
            }
            row_start += i;
        }
        lp
    }
}

impl UnconstrainedVector {
    pub fn new(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.dim() {
            return Err(Error::InvalidArgument(format!(
                "expected {} unconstrained values, got {}",
                layout.dim(),
                values.len()
            )));
        }
        Ok(Self { layout, values })
    }

    /// Inverse transform of `p` (ignoring `pi`).
    pub fn from_params(p: &CausalParams, layout: Layout) -> Result<Self> {
        let j = layout.n_visits;
        if p.n_visits() != j {
            return Err(Error::InvalidArgument("parameter dimension mismatch".into()));
        }
        let mut values = Vec::with_capacity(layout.dim());
        values.extend(&p.mu_active);
        values.extend(&p.mu_control);
        values.extend(&p.alpha);
        if layout.k0_fixed.is_none() {
            values.push(p.k0);
        }
        let s = p.sigma.matrix();
        let sd: Vec<f64> = (0..j).map(|i| s[(i, i)].sqrt()).collect();
        values.extend(sd.iter().map(|x| x.ln()));
        let corr = DMatrix::from_fn(j, j, |r, c| s[(r, c)] / (sd[r] * sd[c]));
        let l = crate::gaussian::robust_cholesky(&corr)?.l();
        for i in 1..j {
            let mut ss: f64 = 0.0;
            for c in 0..i {
                let w = l[(i, c)] / (1.0 - ss).sqrt();
                values.push(w.clamp(-1.0 + 1e-15, 1.0 - 1e-15).atanh());
                ss += l[(i, c)] * l[(i, c)];
            }
        }
        Self::new(layout, values)
    }

    /// Forward transform; `pi` is supplied separately.
    pub fn to_params(&self, pi: Vec<f64>) -> Result<CausalParams> {
        let u = Unpacked::new(&self.layout, &self.values);
        CausalParams::new(
            u.mu_active.clone(),
            u.mu_control.clone(),
            u.alpha.clone(),
            CovMatrix::new(u.sigma())?,
            u.k0,
            pi,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_ranges() {
        let l = Layout::new(5);
        assert_eq!(l.dim(), 5 * 3 + 1 + 5 + 10);
        assert_eq!(l.names().len(), l.dim());
        let f = Layout::with_fixed_k0(5, 0.0);
        assert_eq!(f.dim(), l.dim() - 1);
        assert_eq!(f.k0(), None);
        assert_eq!(l.key_parameters().len(), 11);
    }

    #[test]
    fn log_sech2_stable() {
        for z in [-30.0f64, -2.0, 0.0, 0.3, 5.0, 400.0] {
            let direct = (1.0 - z.tanh().powi(2)).ln();
            if direct.is_finite() && z.abs() < 10.0 {
                assert!((log_sech2(z) - direct).abs() < 1e-12);
            }
            assert!(log_sech2(z).is_finite());
        }
    }

    #[test]
    fn covariance_term_gradient_matches_finite_differences() {
        let layout = Layout::new(4);
        let v: Vec<f64> = (0..layout.dim()).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let f = |x: &[f64]| Unpacked::new(&layout, x).covariance_terms(&layout, x, 1.7, 1.6, None, None);
        // include a likelihood-like adjoint on the Cholesky factor: h(C) = sum_ij a_ij C_ij
        let a = DMatrix::from_fn(4, 4, |r, c| if c <= r { 0.3 * (r as f64) - 0.2 * (c as f64) + 0.1 } else { 0.0 });
        let total = |x: &[f64]| {
            let u = Unpacked::new(&layout, x);
            f(x) + u.chol.component_mul(&a).sum()
        };
        let mut grad = vec![0.0; layout.dim()];
        let u = Unpacked::new(&layout, &v);
        u.covariance_terms(&layout, &v, 1.7, 1.6, Some(&a), Some(&mut grad));
        for i in layout.log_sd().start..layout.dim() {
            let h = 1e-6;
            let mut up = v.clone();
            up[i] += h;
            let mut dn = v.clone();
            dn[i] -= h;
            let fd = (total(&up) - total(&dn)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-6 * (1.0 + fd.abs()), "coord {i}: fd {fd} vs {}", grad[i]);
        }
    }

    proptest! {
        #[test]
        fn transform_round_trip(vals in proptest::collection::vec(-1.5f64..1.5, 31)) {
            let layout = Layout::new(5);
            let v = UnconstrainedVector::new(layout, vals.clone()).unwrap();
            let p = v.to_params(vec![0.2; 5]).unwrap();
            let back = UnconstrainedVector::from_params(&p, layout).unwrap();
            for (a, b) in back.values.iter().zip(&vals) {
                prop_assert!((a - b).abs() < 1e-8, "{} vs {}", a, b);
            }
        }
    }
}
