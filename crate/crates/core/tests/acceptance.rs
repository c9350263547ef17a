//! Acceptance run: one PASS/FAIL line per criterion. Failures are reported
//! but only turn into a failing exit status with REFBCM_ACCEPTANCE_STRICT=1.
//! Criterion 8 needs REFBCM_ANTIDEPRESSANT_CSV and is skipped without it. Benchmark logs are kept under the cargo target tmp
//! directory, so an interrupted run resumes where it stopped.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use refbcm::data::{read_csv, Arm};
use refbcm::gaussian::{mvn_condition, CovMatrix};
use refbcm::harness::{
    run_benchmark, run_method, BenchmarkOptions, BenchmarkTable, HarnessConfig, Method, MethodSettings, MethodSpec,
};
use refbcm::imputation::{rd_impute, rubins_rules};
use refbcm::inference::{
    fit_map_fixed, log_posterior, posterior_mean_k0, sample_posterior, Layout, Posterior, PriorSpec,
    SamplerSettings, UnconstrainedVector,
};
use refbcm::rng::{derive_seed, stream};
use refbcm::sim::{simulate_trial, simulate_trial_pair, true_policy_effect, SimScenario};

struct Outcome {
    id: &'static str,
    pass: Option<bool>,
    detail: String,
}

impl Outcome {
    fn new(id: &'static str, pass: bool, detail: String) -> Self {
        let o = Self {
            id,
            pass: Some(pass),
            detail,
        };
        o.print();
        o
    }

    fn skip(id: &'static str, detail: String) -> Self {
        let o = Self { id, pass: None, detail };
        o.print();
        o
    }

    fn print(&self) {
        let tag = match self.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        println!("{tag} [{}] {}", self.id, self.detail);
    }
}

fn main() {
    let mut out = Vec::new();
    out.extend(truth_values());
    out.extend(oracles());
    out.push(k0_recovery());
    out.extend(degenerate_data());
    out.push(determinism());
    out.extend(table4());
    out.push(antidepressant());

    let failed: Vec<&str> = out.iter().filter(|o| o.pass == Some(false)).map(|o| o.id).collect();
    println!();
    println!("summary");
    for o in &out {
        o.print();
    }
    if !failed.is_empty() {
        println!("{} criteria failed: {}", failed.len(), failed.join(", "));
        if std::env::var("REFBCM_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}

// 1. true effects at n_mc = 2e6, within 0.005, under a minute each
fn truth_values() -> Vec<Outcome> {
    let cases = [
        ("1 HD k0=0", true, 0.0, -0.388),
        ("1 HD k0=1", true, 1.0, -0.628),
        ("1 LD k0=0", false, 0.0, -0.625),
        ("1 LD k0=1", false, 1.0, -0.707),
    ];
    cases
        .iter()
        .map(|&(id, high, k0, paper)| {
            let start = Instant::now();
            let truth = true_policy_effect(&SimScenario::diabetes(high, 0.0, k0), 2_000_000).unwrap();
            let secs = start.elapsed().as_secs_f64();
            Outcome::new(
                id,
                (truth - paper).abs() <= 0.005 && secs < 60.0,
                format!("truth {truth:.4} vs {paper} (tol 0.005), {secs:.1} s (limit 60 s)"),
            )
        })
        .collect()
}

// 4. oracle equivalences
fn oracles() -> Vec<Outcome> {
    let start = Instant::now();
    let mut out = Vec::new();

    let mut rng = stream(41);
    let mut worst: f64 = 0.0;
    for case in 0..500 {
        let n = 2 + case % 6;
        let entries: Vec<f64> = (0..n * n).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        let cov = common::spd(&entries, n);
        let mean = DVector::from_fn(n, |_, _| 3.0 * rng.random::<f64>());
        let obs: Vec<usize> = (0..n).filter(|i| i % 2 == 0 || *i == case % n).collect();
        if obs.len() == n {
            continue;
        }
        let y = DVector::from_fn(obs.len(), |_, _| rng.random::<f64>());
        let g = mvn_condition(&mean, &CovMatrix::new(cov.clone()).unwrap(), &obs, &y).unwrap();
        let (m, c) = common::precision_oracle(&mean, &cov, &obs, &y);
        worst = worst.max((&g.mean - m).amax()).max((&g.cov - c).amax());
    }
    out.push(Outcome::new("4 conditioning", worst <= 1e-8, format!("max abs diff {worst:.2e} (tol 1e-8)")));

    let ds = common::toy();
    let mut worst_lp: f64 = 0.0;
    let mut worst_grad: f64 = 0.0;
    for (prior, k0_fixed) in [
        (PriorSpec::default(), None),
        (PriorSpec::with_k0(0.5, 0.7), None),
        (PriorSpec::with_k0(1.0, 0.5), Some(0.4)),
    ] {
        let layout = match k0_fixed {
            Some(k) => Layout::with_fixed_k0(common::J, k),
            None => Layout::new(common::J),
        };
        for include in [true, false] {
            let post = Posterior::new(&ds, &prior, include, k0_fixed).unwrap();
            for seed in 0..5 {
                let x = common::point(&layout, seed);
                let v = UnconstrainedVector::new(layout, x.clone()).unwrap();
                let lp = log_posterior(&v, &ds, &prior, include).unwrap();
                let want = common::oracle(&x, &layout, &ds, &prior, include);
                worst_lp = worst_lp.max((lp - want).abs() / lp.abs().max(1.0));
                let mut g = vec![0.0; x.len()];
                post.log_density_grad(&x, &mut g);
                for i in 0..x.len() {
                    let h = 1e-5;
                    let (mut up, mut down) = (x.clone(), x.clone());
                    up[i] += h;
                    down[i] -= h;
                    let fd = (post.log_density(&up) - post.log_density(&down)) / (2.0 * h);
                    worst_grad = worst_grad.max((g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1.0));
                }
            }
        }
    }
    out.push(Outcome::new("4 log posterior", worst_lp <= 1e-8, format!("max rel diff {worst_lp:.2e} (tol 1e-8)")));
    out.push(Outcome::new("4 gradient", worst_grad <= 1e-5, format!("max rel diff {worst_grad:.2e} (tol 1e-5)")));

    // complete data without discontinuation: mode = per-visit least squares
    let mut sc = SimScenario::diabetes(false, 0.0, 0.0);
    sc.n_per_arm = 300;
    sc.hazard.intercept = -200.0;
    let (full, _) = simulate_trial_pair(&sc, 5).unwrap();
    let fit = fit_map_fixed(&full, &PriorSpec::default(), true, Some(0.0)).unwrap();
    let n = full.len();
    let x = DMatrix::from_fn(n, 3, |i, c| {
        let p = &full.patients()[i];
        [(p.arm == Arm::Active) as u8 as f64, (p.arm == Arm::Control) as u8 as f64, p.baseline][c]
    });
    let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
    let mut worst_gls: f64 = 0.0;
    for v in 0..full.n_visits() {
        let y = DVector::from_fn(n, |i, _| full.patients()[i].y[v].unwrap());
        let beta = &xtx_inv * x.transpose() * y;
        worst_gls = worst_gls
            .max((fit.params.mu_active[v] - beta[0]).abs())
            .max((fit.params.mu_control[v] - beta[1]).abs())
            .max((fit.params.alpha[v] - beta[2]).abs());
    }
    out.push(Outcome::new("4 MAP vs GLS", worst_gls <= 1e-3, format!("max abs diff {worst_gls:.2e} (tol 1e-3)")));

    let mut rng = stream(3);
    let q: Vec<f64> = (0..100).map(|_| -0.4 + 0.05 * (rng.random::<f64>() - 0.5)).collect();
    let u: Vec<f64> = (0..100).map(|_| 0.006 + 0.001 * rng.random::<f64>()).collect();
    let got = rubins_rules(&q, &u, 997.0).unwrap();
    let want = common::long_hand(&q, &u, 997.0);
    let worst_rubin = [
        common::rel(got.estimate, want.estimate),
        common::rel(got.total_var, want.total),
        common::rel(got.df, want.df),
    ]
    .into_iter()
    .fold(0.0f64, f64::max);
    out.push(Outcome::new("4 Rubin", worst_rubin <= 1e-12, format!("max rel diff {worst_rubin:.2e} (tol 1e-12)")));

    let secs = start.elapsed().as_secs_f64();
    out.push(Outcome::new("4 runtime", secs < 300.0, format!("{secs:.1} s (limit 300 s)")));
    out
}

// 5. k0 recovery over 50 LD-LM replicates with true k0 = 1
fn k0_recovery() -> Outcome {
    let sc = SimScenario::diabetes(false, 0.2, 1.0);
    let settings = SamplerSettings::default();
    let mut hits = 0;
    for rep in 0..50u64 {
        let ds = simulate_trial(&sc, derive_seed(500, &[rep])).unwrap();
        let draws = sample_posterior(&ds, &PriorSpec::default(), true, &settings, derive_seed(501, &[rep])).unwrap();
        let (mean, sd) = posterior_mean_k0(&draws);
        hits += ((mean - 1.0).abs() <= 3.0 * sd) as usize;
    }
    Outcome::new("5 k0 recovery", hits >= 47, format!("{hits}/50 posterior means within 3 SD of 1 (need 47)"))
}

// 6. no observed post-ICE data: posterior = prior for k0; RD not estimable
fn degenerate_data() -> Vec<Outcome> {
    let sc = SimScenario::diabetes(true, 1.0, 0.0);
    let ds = simulate_trial(&sc, 6).unwrap();
    let draws = sample_posterior(&ds, &PriorSpec::with_k0(0.0, 1.0), true, &SamplerSettings::default(), 7).unwrap();
    let (mean, sd) = posterior_mean_k0(&draws);
    let rd = rd_impute(&ds, 5, &mut stream(8));
    let code = rd.as_ref().err().map(|e| e.exit_code());
    vec![
        Outcome::new(
            "6 prior only",
            mean.abs() <= 0.05 && (sd - 1.0).abs() <= 0.1,
            format!("k0 mean {mean:.4} (tol 0.05), SD {sd:.4} (tol 10%)"),
        ),
        Outcome::new(
            "6 rd non-estimable",
            code == Some(4),
            match rd {
                Err(e) => format!("exit code {} ({e})", e.exit_code()),
                Ok(_) => "RD imputed data without post-discontinuation outcomes".into(),
            },
        ),
    ]
}

// 7. same master seed, byte-identical table
fn determinism() -> Outcome {
    let mut cfg = HarnessConfig::preset("hd-hm-k0-0").unwrap();
    cfg.scenario.n_per_arm = 150;
    cfg.n_reps = 50;
    cfg.methods = [Method::Bcm, Method::BcmCmiBs, Method::BcmMiBs, Method::Rd, Method::RbiJ2r]
        .iter()
        .map(|&m| MethodSpec::new(m, PriorSpec::with_k0(0.0, 0.5)))
        .collect();
    let a = run_benchmark(&cfg, &BenchmarkOptions { jobs: 0, log: None }).unwrap().to_csv();
    let b = run_benchmark(&cfg, &BenchmarkOptions { jobs: 1, log: None }).unwrap().to_csv();
    Outcome::new("7 determinism", a == b, format!("{} bytes, identical: {}", a.len(), a == b))
}

fn log_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(preset: &str, specs: &[(Method, f64)]) -> BenchmarkTable {
    let mut cfg = HarnessConfig::preset(preset).unwrap();
    cfg.methods = specs.iter().map(|&(m, sd)| MethodSpec::new(m, PriorSpec::with_k0(0.0, sd))).collect();
    cfg.settings = MethodSettings::default();
    let start = Instant::now();
    let log = log_dir().join(format!("{preset}.csv"));
    let table = run_benchmark(&cfg, &BenchmarkOptions { jobs: 0, log: Some(log) }).unwrap();
    println!("{preset}, {} replications, {:.0} s", cfg.n_reps, start.elapsed().as_secs_f64());
    print!("{table}");
    table
}

fn label(method: Method, sd: f64) -> String {
    MethodSpec::new(method, PriorSpec::with_k0(0.0, sd)).prior_label()
}

// 2 and 3. Table 4 cells at desk scale
fn table4() -> Vec<Outcome> {
    let lm = run("hd-lm-k0-0", &[(Method::Bcm, 100.0), (Method::Bcm, 0.5)]);
    let hm = run(
        "hd-hm-k0-0",
        &[
            (Method::Bcm, 100.0),
            (Method::Bcm, 0.5),
            (Method::BcmCmiJk, 100.0),
            (Method::BcmMiBs, 0.5),
            (Method::Rd, 100.0),
            (Method::RbiJ2r, 100.0),
        ],
    );
    let row = |t: &BenchmarkTable, m: Method, sd: f64| t.row(m.as_str(), &label(m, sd)).unwrap().clone();

    // (table, method, prior SD, mean, Est.SE, coverage)
    let cells = [
        ("2 BCM s100 20%", &lm, Method::Bcm, 100.0, -0.383, 0.067, 93.6),
        ("2 BCM s100 90%", &hm, Method::Bcm, 100.0, -0.380, 0.101, 94.2),
        ("2 CMI-JK s100 90%", &hm, Method::BcmCmiJk, 100.0, -0.390, 0.109, 96.4),
        ("2 MI-BS s0.5 90%", &hm, Method::BcmMiBs, 0.5, -0.390, 0.088, 94.8),
        ("2 RD 90%", &hm, Method::Rd, 100.0, -0.418, 0.164, 92.2),
        ("2 J2R 90%", &hm, Method::RbiJ2r, 100.0, -0.410, 0.093, 99.3),
    ];
    let mut out = Vec::new();
    for (id, table, m, sd, mean, est, cov) in cells {
        let r = row(table, m, sd);
        let se_rel = (r.est_se / est - 1.0).abs();
        let pass = (r.mean - mean).abs() <= 0.02 && se_rel <= 0.15 && (r.coverage - cov).abs() <= 3.0;
        out.push(Outcome::new(
            id,
            pass,
            format!(
                "mean {:.3} vs {mean} (tol 0.02), Est.SE {:.3} vs {est} ({:.1}%, tol 15%), coverage {:.1} vs {cov} (tol 3), {} reps, {} failures",
                r.mean,
                r.est_se,
                100.0 * se_rel,
                r.coverage,
                r.n_reps,
                r.failures
            ),
        ));
    }

    let bcm100 = row(&hm, Method::Bcm, 100.0);
    let bcm05 = row(&hm, Method::Bcm, 0.5);
    let rd = row(&hm, Method::Rd, 100.0);
    let j2r = row(&hm, Method::RbiJ2r, 100.0);
    out.push(Outcome::new(
        "3a RD vs BCM Est.SE",
        rd.est_se >= 1.4 * bcm100.est_se,
        format!("{:.3} vs 1.4 x {:.3}", rd.est_se, bcm100.est_se),
    ));
    out.push(Outcome::new(
        "3b J2R Est.SE > Emp.SE",
        j2r.est_se > j2r.emp_se,
        format!("{:.3} vs {:.3}", j2r.est_se, j2r.emp_se),
    ));
    let cells_c = [
        ("20% s100", row(&lm, Method::Bcm, 100.0)),
        ("20% s0.5", row(&lm, Method::Bcm, 0.5)),
        ("90% s100", bcm100.clone()),
        ("90% s0.5", bcm05.clone()),
    ];
    let gaps: Vec<String> = cells_c
        .iter()
        .map(|(name, r)| format!("{name} {:.3}/{:.3}", r.emp_se, r.est_se))
        .collect();
    let ok = cells_c.iter().all(|(_, r)| (r.emp_se / r.est_se - 1.0).abs() <= 0.10);
    out.push(Outcome::new("3c BCM Emp.SE ~ Est.SE", ok, format!("{} (tol 10%)", gaps.join(", "))));
    out.push(Outcome::new(
        "3d tight prior narrows",
        bcm05.est_se < bcm100.est_se,
        format!("{:.3} vs {:.3}", bcm05.est_se, bcm100.est_se),
    ));
    out
}

// 8. optional external dataset
fn antidepressant() -> Outcome {
    let Ok(path) = std::env::var("REFBCM_ANTIDEPRESSANT_CSV") else {
        return Outcome::skip("8 antidepressant", "REFBCM_ANTIDEPRESSANT_CSV not set".into());
    };
    let result = read_csv(std::path::Path::new(&path)).and_then(|ds| {
        let spec = MethodSpec::new(Method::Bcm, PriorSpec::default());
        run_method(&spec, &MethodSettings::default(), &ds, None, &mut stream(1))
    });
    match result {
        Ok(r) => Outcome::new(
            "8 antidepressant",
            (-2.45..=-2.10).contains(&r.point) && (0.70..=1.00).contains(&r.se),
            format!("estimate {:.3} in [-2.45, -2.10], SE {:.3} in [0.70, 1.00]", r.point, r.se),
        ),
        Err(e) => Outcome::new("8 antidepressant", false, format!("analysis failed: {e}")),
    }
}
