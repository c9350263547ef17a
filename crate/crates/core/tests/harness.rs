use std::collections::BTreeMap;

use refbcm::harness::{run_benchmark, BenchmarkOptions, HarnessConfig, Method, MethodSpec};
use refbcm::Error;

fn preset_text() -> String {
    std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/presets/hd_hm_k0_0.toml")).unwrap()
}

fn quick(methods: &[Method], miss: f64, reps: usize) -> HarnessConfig {
    let mut cfg = HarnessConfig::preset("hd-hm-k0-0").unwrap();
    cfg.scenario.miss_prob = miss;
    cfg.scenario.n_per_arm = 150;
    cfg.methods = methods.iter().map(|&m| MethodSpec::new(m, cfg.prior.clone())).collect();
    cfg.n_reps = reps;
    cfg.truth_draws = 100_000;
    cfg
}

fn config_line(e: Error) -> Option<usize> {
    match e {
        Error::Config { line, .. } => line,
        e => panic!("expected a config error, got {e}"),
    }
}

#[test]
fn presets_parse() {
    for name in HarnessConfig::preset_names() {
        let cfg = HarnessConfig::preset(name).unwrap();
        assert_eq!(cfg.methods.len(), 11, "{name}");
        assert_eq!(cfg.n_reps, 500);
    }
    assert!(HarnessConfig::resolve("no-such-preset-or-file").is_err());
}

#[test]
fn config_errors_point_at_the_line() {
    let text = preset_text();
    let line = |needle: &str| text.lines().position(|l| l.starts_with(needle)).unwrap() + 1;

    let bad_rho = text.replace("rho = 0.8", "rho = 1.5");
    let e = HarnessConfig::parse(&bad_rho).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    assert_eq!(config_line(e), Some(line("rho")));

    let bad_prior = text.replace("k0_sd = 100.0", "k0_sd = -1.0");
    assert_eq!(config_line(HarnessConfig::parse(&bad_prior).unwrap_err()), Some(line("k0_sd = 100.0")));

    let unknown = text.replace("rho = 0.8", "rho = 0.8\nrhoo = 0.8");
    assert_eq!(config_line(HarnessConfig::parse(&unknown).unwrap_err()), Some(line("rho") + 1));

    let bad_method = text.replace("\"rd\"", "\"mmrm\"");
    let e = HarnessConfig::parse(&bad_method).unwrap_err();
    assert!(e.to_string().contains("mmrm"), "{e}");
}

#[test]
fn complete_data_ancova_covers_nominally() {
    let mut cfg = quick(&[Method::AncovaComplete], 0.0, 500);
    cfg.scenario.n_per_arm = 200;
    let table = run_benchmark(&cfg, &BenchmarkOptions { jobs: 1, log: None }).unwrap();
    let row = &table.rows[0];
    assert_eq!(row.n_reps, 500);
    assert!((row.coverage - 95.0).abs() <= 2.5, "coverage {}", row.coverage);
    assert!((row.mean - row.truth).abs() < 3.0 * row.mcse_mean + 0.005);
}

#[test]
fn too_few_replications_is_rejected() {
    let cfg = quick(&[Method::AncovaComplete], 0.2, 10);
    assert!(run_benchmark(&cfg, &BenchmarkOptions::default()).is_err());
}

/// Row statistics recomputed from the raw log text.
fn independent_summary(log: &str) -> BTreeMap<(String, String), (f64, f64, f64, f64, usize, usize)> {
    let mut reader = csv::Reader::from_reader(log.as_bytes());
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (m, p, pt, se, lo, hi, tr, err) =
        (col("method"), col("prior"), col("point"), col("se"), col("ci_low"), col("ci_high"), col("truth"), col("error"));
    let mut acc: BTreeMap<(String, String), (f64, f64, f64, usize, usize, usize)> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.unwrap();
        let e = acc.entry((rec[m].to_string(), rec[p].to_string())).or_default();
        if !rec[err].is_empty() {
            e.5 += 1;
            continue;
        }
        let x: f64 = rec[pt].parse().unwrap();
        let truth: f64 = rec[tr].parse().unwrap();
        e.0 += x;
        e.1 += x * x;
        e.2 += rec[se].parse::<f64>().unwrap();
        e.3 += 1;
        e.4 += (rec[lo].parse::<f64>().unwrap() <= truth && truth <= rec[hi].parse::<f64>().unwrap()) as usize;
    }
    acc.into_iter()
        .map(|(k, (s, ss, se, n, hits, fails))| {
            let nf = n as f64;
            let mean = s / nf;
            let emp = ((ss - nf * mean * mean) / (nf - 1.0)).sqrt();
            (k, (mean, emp, se / nf, 100.0 * hits as f64 / nf, n, fails))
        })
        .collect()
}

#[test]
fn log_recomputation_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(&[Method::AncovaComplete, Method::Rd], 0.5, 50);
    let log = dir.path().join("log.csv");
    let table = run_benchmark(&cfg, &BenchmarkOptions { jobs: 2, log: Some(log.clone()) }).unwrap();

    let text = std::fs::read_to_string(&log).unwrap();
    let independent = independent_summary(&text);
    assert_eq!(independent.len(), table.rows.len());
    for row in &table.rows {
        let (mean, emp, est, cov, n, fails) = independent[&(row.method.clone(), row.prior.clone())];
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
        assert!(close(row.mean, mean) && close(row.est_se, est), "{}", row.method);
        assert!((row.emp_se - emp).abs() < 1e-9, "{}", row.method);
        assert_eq!((row.coverage, row.n_reps, row.failures), (cov, n, fails));
    }

    let again = run_benchmark(&cfg, &BenchmarkOptions { jobs: 1, log: None }).unwrap();
    assert_eq!(table.to_csv(), again.to_csv());
    assert_eq!(format!("{table}"), format!("{again}"));

    // resuming from a truncated log gives the same table
    let keep: Vec<&str> = text.lines().take(1 + 2 * 20).collect();
    std::fs::write(&log, keep.join("\n") + "\n").unwrap();
    let resumed = run_benchmark(&cfg, &BenchmarkOptions { jobs: 1, log: Some(log.clone()) }).unwrap();
    assert_eq!(resumed.to_csv(), table.to_csv());

    // a different configuration refuses the old log
    let mut other = cfg.clone();
    other.seed += 1;
    assert!(run_benchmark(&other, &BenchmarkOptions { jobs: 1, log: Some(log) }).is_err());
}

#[test]
fn a_failing_method_does_not_disturb_the_others() {
    // with every post-discontinuation block missing RD is not estimable
    let alone = run_benchmark(&quick(&[Method::AncovaComplete], 1.0, 50), &BenchmarkOptions::default()).unwrap();
    let both = run_benchmark(&quick(&[Method::Rd, Method::AncovaComplete], 1.0, 50), &BenchmarkOptions::default()).unwrap();
    let rd = both.row("rd", "").unwrap();
    assert_eq!((rd.n_reps, rd.failures), (0, 50));
    assert_eq!(both.row("ancova-complete", "").unwrap(), &alone.rows[0]);
}
