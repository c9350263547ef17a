//! Multinomial no-U-turn sampler with an identity metric and dual-averaging
//! step-size adaptation. Callers whiten the target beforehand.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NutsSettings {
    pub max_depth: usize,
    pub target_accept: f64,
}

impl Default for NutsSettings {
    fn default() -> Self {
        Self {
            max_depth: 10,
            target_accept: 0.8,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NutsStats {
    pub step_size: f64,
    pub divergences: usize,
    pub mean_tree_depth: f64,
    pub mean_accept: f64,
    pub gradient_evals: usize,
}

/// Log density with gradient.
pub(crate) trait Target {
    fn dim(&self) -> usize;
    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Clone)]
struct Point {
    q: Vec<f64>,
    p: Vec<f64>,
    g: Vec<f64>,
    logp: f64,
}

impl Point {
    fn energy(&self) -> f64 {
        -self.logp + 0.5 * self.p.iter().map(|v| v * v).sum::<f64>()
    }
}

struct Subtree {
    left: Point,
    right: Point,
    proposal: Point,
    rho: Vec<f64>,
    log_weight: f64,
    accept_sum: f64,
    n_steps: usize,
    invalid: bool,
    divergent: bool,
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// No U-turn across the span with momentum sum `rho` and end momenta.
fn no_u_turn(rho: &[f64], p_left: &[f64], p_right: &[f64]) -> bool {
    dot(rho, p_left) > 0.0 && dot(rho, p_right) > 0.0
}

struct Sampler<'a, T: Target> {
    target: &'a T,
    evals: usize,
}

const MAX_ENERGY_ERROR: f64 = 1000.0;

impl<T: Target> Sampler<'_, T> {
    fn leapfrog(&mut self, from: &Point, eps: f64) -> Point {
        let n = from.q.len();
        let mut p: Vec<f64> = (0..n).map(|i| from.p[i] + 0.5 * eps * from.g[i]).collect();
        let q: Vec<f64> = (0..n).map(|i| from.q[i] + eps * p[i]).collect();
        let mut g = vec![0.0; n];
        let logp = self.target.log_density_grad(&q, &mut g);
        self.evals += 1;
        let logp = if logp.is_finite() && g.iter().all(|v| v.is_finite()) {
            logp
        } else {
            f64::NEG_INFINITY
        };
        for i in 0..n {
            p[i] += 0.5 * eps * g[i];
        }
        Point { q, p, g, logp }
    }

    fn build(&mut self, from: &Point, depth: usize, eps: f64, h0: f64, rng: &mut Stream) -> Subtree {
        if depth == 0 {
            let next = self.leapfrog(from, eps);
            let h = next.energy();
            let err = if h.is_finite() { h - h0 } else { f64::INFINITY };
            let divergent = err > MAX_ENERGY_ERROR;
            return Subtree {
                left: next.clone(),
                right: next.clone(),
                rho: next.p.clone(),
                proposal: next,
                log_weight: -err,
                accept_sum: (-err).exp().min(1.0),
                n_steps: 1,
                invalid: divergent,
                divergent,
            };
        }
        let first = self.build(from, depth - 1, eps, h0, rng);
        if first.invalid {
            return first;
        }
        let second = self.build(&first.right, depth - 1, eps, h0, rng);
        let sum = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<f64>>();
        // extra checks across the junction of the two halves
        let ok = second.invalid
            || no_u_turn(&sum(&first.rho, &second.left.p), &first.left.p, &second.left.p)
                && no_u_turn(&sum(&second.rho, &first.right.p), &first.right.p, &second.right.p);
        let mut merged = Subtree {
            left: first.left,
            right: second.right,
            rho: sum(&first.rho, &second.rho),
            proposal: first.proposal,
            log_weight: log_add_exp(first.log_weight, second.log_weight),
            accept_sum: first.accept_sum + second.accept_sum,
            n_steps: first.n_steps + second.n_steps,
            invalid: second.invalid,
            divergent: second.divergent,
        };
        if second.invalid {
            return merged;
        }
        // uniform (multinomial) choice within the subtree
        if rng.random::<f64>() < (second.log_weight - merged.log_weight).exp() {
            merged.proposal = second.proposal;
        }
        let ok = ok && no_u_turn(&merged.rho, &merged.left.p, &merged.right.p);
        merged.invalid = !ok;
        merged
    }

    /// One NUTS transition from `current`.
    fn transition(&mut self, current: &Point, eps: f64, max_depth: usize, rng: &mut Stream) -> (Point, f64, usize, bool) {
        let n = current.q.len();
        let mut start = current.clone();
        start.p = (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let h0 = start.energy();
        let mut left = start.clone();
        let mut right = start.clone();
        let mut rho = start.p.clone();
        let mut log_weight = 0.0;
        let mut sample = start.clone();
        let mut accept_sum = 0.0;
        let mut n_steps = 0;
        let mut divergent = false;
        let mut depth = 0;
        while depth < max_depth {
            let forward = rng.random::<bool>();
            let sub = if forward {
                self.build(&right, depth, eps, h0, rng)
            } else {
                let mut edge = left.clone();
                edge.p.iter_mut().for_each(|v| *v = -*v);
                edge.g = left.g.clone();
                let mut s = self.build(&edge, depth, eps, h0, rng);
                for pt in [&mut s.left, &mut s.right, &mut s.proposal] {
                    pt.p.iter_mut().for_each(|v| *v = -*v);
                }
                s.rho.iter_mut().for_each(|v| *v = -*v);
                std::mem::swap(&mut s.left, &mut s.right);
                s
            };
            depth += 1;
            accept_sum += sub.accept_sum;
            n_steps += sub.n_steps;
            if sub.invalid {
                divergent = sub.divergent;
                break;
            }
            // biased progressive sampling favours the new subtree
            if rng.random::<f64>() < (sub.log_weight - log_weight).exp() {
                sample = sub.proposal.clone();
            }
            log_weight = log_add_exp(log_weight, sub.log_weight);
            rho = rho.iter().zip(&sub.rho).map(|(a, b)| a + b).collect();
            if forward {
                right = sub.right;
            } else {
                left = sub.left;
            }
            if !no_u_turn(&rho, &left.p, &right.p) {
                break;
            }
        }
        let accept = if n_steps > 0 { accept_sum / n_steps as f64 } else { 0.0 };
        (sample, accept, depth, divergent)
    }
}

/// Runs one chain from `x0`: `warmup` adaptation iterations, then `keep`
/// retained draws, each separated by `thin` transitions.
pub(crate) fn run_chain<T: Target>(
    target: &T,
    x0: Vec<f64>,
    warmup: usize,
    keep: usize,
    thin: usize,
    settings: &NutsSettings,
    rng: &mut Stream,
) -> (Vec<Vec<f64>>, NutsStats) {
    let n = target.dim();
    let mut sampler = Sampler { target, evals: 0 };
    let mut g = vec![0.0; n];
    let logp = target.log_density_grad(&x0, &mut g);
    let mut current = Point {
        q: x0,
        p: vec![0.0; n],
        g,
        logp,
    };

    let mut eps = initial_step(&mut sampler, &current, rng);
    // dual averaging
    let mu = (10.0 * eps).ln();
    let (gamma, t0, kappa) = (0.05, 10.0, 0.75);
    let mut h_bar = 0.0;
    let mut log_eps_bar = 0.0;
    for m in 1..=warmup {
        let (next, accept, _, _) = sampler.transition(&current, eps, settings.max_depth, rng);
        current = next;
        let m = m as f64;
        let w = 1.0 / (m + t0);
        h_bar = (1.0 - w) * h_bar + w * (settings.target_accept - accept);
        let log_eps = mu - m.sqrt() / gamma * h_bar;
        let eta = m.powf(-kappa);
        log_eps_bar = eta * log_eps + (1.0 - eta) * log_eps_bar;
        eps = log_eps.exp();
    }
    if warmup > 0 {
        eps = log_eps_bar.exp();
    }

    let mut stats = NutsStats {
        step_size: eps,
        ..NutsStats::default()
    };
    let mut draws = Vec::with_capacity(keep);
    let mut transitions = 0usize;
    let mut depth_sum = 0usize;
    let mut accept_total = 0.0;
    let evals_before = sampler.evals;
    for _ in 0..keep {
        for _ in 0..thin.max(1) {
            let (next, accept, depth, divergent) = sampler.transition(&current, eps, settings.max_depth, rng);
            current = next;
            transitions += 1;
            depth_sum += depth;
            accept_total += accept;
            stats.divergences += usize::from(divergent);
        }
        draws.push(current.q.clone());
    }
    if transitions > 0 {
        stats.mean_tree_depth = depth_sum as f64 / transitions as f64;
        stats.mean_accept = accept_total / transitions as f64;
    }
    stats.gradient_evals = sampler.evals - evals_before;
    (draws, stats)
}

/// Step size at which a single leapfrog step has acceptance near one half.
fn initial_step<T: Target>(sampler: &mut Sampler<'_, T>, start: &Point, rng: &mut Stream) -> f64 {
    let n = start.q.len();
    let mut eps = 1.0;
    let mut probe = start.clone();
    probe.p = (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
    let h0 = probe.energy();
    let log_ratio = |s: &mut Sampler<'_, T>, e: f64| {
        let next = s.leapfrog(&probe, e);
        let h = next.energy();
        if h.is_finite() {
            h0 - h
        } else {
            f64::NEG_INFINITY
        }
    };
    let up = log_ratio(sampler, eps) > 0.5f64.ln();
    for _ in 0..50 {
        let r = log_ratio(sampler, eps);
        if up != (r > 0.5f64.ln()) {
            break;
        }
        eps = if up { eps * 2.0 } else { eps * 0.5 };
    }
    eps
}
