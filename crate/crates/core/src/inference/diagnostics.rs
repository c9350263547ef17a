//! Split-R̂ and rank-normalized bulk effective sample size.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    /// NaN when every chain is constant.
    pub rhat: f64,
    pub ess: f64,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

/// Each chain cut into two halves (the middle draw of an odd-length chain
/// is dropped).
fn split(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(&c[..half]);
        out.push(&c[c.len() - half..]);
    }
    out
}

fn check(chains: &[Vec<f64>]) -> Result<usize> {
    let n = chains.first().map_or(0, Vec::len);
    if chains.is_empty() || n < 4 || chains.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidArgument(
            "diagnostics need equal-length chains of at least 4 draws".into(),
        ));
    }
    Ok(n)
}

pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    check(chains)?;
    let parts = split(chains);
    let n = parts[0].len() as f64;
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let w = mean(&parts.iter().map(|p| var(p)).collect::<Vec<_>>());
    let b = n * var(&means);
    if !(w > 0.0) {
        return Ok(f64::NAN);
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    Ok((var_plus / w).sqrt())
}

/// Bulk ESS: ranks of the pooled draws mapped to normal scores, then the
/// multi-chain autocorrelation estimate with Geyer's initial monotone
/// sequence on the split chains.
pub fn ess_bulk(chains: &[Vec<f64>]) -> Result<f64> {
    check(chains)?;
    let z = rank_normalize(chains);
    Ok(ess_raw(&split(&z).iter().map(|c| c.to_vec()).collect::<Vec<_>>()))
}

fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut all: Vec<(f64, usize, usize)> = Vec::new();
    for (c, chain) in chains.iter().enumerate() {
        all.extend(chain.iter().enumerate().map(|(i, &v)| (v, c, i)));
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = all.len() as f64;
    let normal = Normal::standard();
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut i = 0;
    while i < all.len() {
        // average rank over ties
        let mut k = i;
        while k + 1 < all.len() && all[k + 1].0 == all[i].0 {
            k += 1;
        }
        let rank = (i + k) as f64 / 2.0 + 1.0;
        let score = normal.inverse_cdf((rank - 0.375) / (s + 0.25));
        for item in &all[i..=k] {
            out[item.1][item.2] = score;
        }
        i = k + 1;
    }
    out
}

fn ess_raw(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov = |t: usize| -> f64 {
        let mut total = 0.0;
        for (c, mu) in chains.iter().zip(&means) {
            let s: f64 = (0..n - t).map(|i| (c[i] - mu) * (c[i + t] - mu)).sum();
            total += s / n as f64;
        }
        total / m as f64
    };
    let acov0 = acov(0);
    let mean_var = acov0 * n as f64 / (n as f64 - 1.0);
    let mut var_plus = mean_var * (n as f64 - 1.0) / n as f64;
    if m > 1 {
        var_plus += var(&means);
    }
    if !(var_plus > 0.0) {
        return f64::NAN;
    }
    let rho = |t: usize| 1.0 - (mean_var - acov(t)) / var_plus;
    let mut rho_hat = vec![0.0; n];
    rho_hat[0] = 1.0;
    let mut even = 1.0;
    let mut odd = rho(1);
    rho_hat[1] = odd;
    let mut t = 1;
    while t + 4 < n && even + odd > 0.0 {
        even = rho(t + 1);
        odd = rho(t + 2);
        if even + odd >= 0.0 {
            rho_hat[t + 1] = even;
            rho_hat[t + 2] = odd;
        }
        t += 2;
    }
    let max_t = t;
    if even > 0.0 && max_t + 1 < n {
        rho_hat[max_t + 1] = even;
    }
    // enforce a monotone sequence of pair sums
    let mut t = 1;
    while t + 2 <= max_t {
        let prev = rho_hat[t - 1] + rho_hat[t];
        if rho_hat[t + 1] + rho_hat[t + 2] > prev {
            rho_hat[t + 1] = prev / 2.0;
            rho_hat[t + 2] = prev / 2.0;
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let tail = if max_t + 1 < n { rho_hat[max_t + 1] } else { 0.0 };
    let tau = (-1.0 + 2.0 * rho_hat[..max_t].iter().sum::<f64>() + tail).max(1.0 / total.log10());
    total / tau
}

/// Per-parameter diagnostics for draws laid out as chain × draw × parameter.
pub fn diagnostics(chains: &[Vec<Vec<f64>>]) -> Result<Vec<ChainDiagnostics>> {
    let dim = chains.first().and_then(|c| c.first()).map_or(0, Vec::len);
    (0..dim)
        .map(|k| {
            let series: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|d| d[k]).collect()).collect();
            Ok(ChainDiagnostics {
                rhat: split_rhat(&series)?,
                ess: ess_bulk(&series)?,
            })
        })
        .collect()
}
