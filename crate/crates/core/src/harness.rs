//! Scenario configuration, method dispatch and the replication runner that
//! produces benchmark tables (mean, empirical SE, average estimated SE,
//! coverage).

use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{ancova, covered, EstimateReport};
use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::imputation::{bcm_cmi, bcm_mi_bootstrap, estimate_rbi, estimate_rd, RbiVariant, SeMethod};
use crate::inference::{estimate_effect_bcm, sample_pi, sample_posterior, PriorSpec, SamplerSettings};
use crate::rng::{derive_seed, fork, substream, Stream};
use crate::sim::{simulate_trial_pair, true_policy_effect, SimScenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "bcm")]
    Bcm,
    #[serde(rename = "bcm-cmi-jk")]
    BcmCmiJk,
    #[serde(rename = "bcm-cmi-bs")]
    BcmCmiBs,
    #[serde(rename = "bcm-mi-bs")]
    BcmMiBs,
    #[serde(rename = "rd")]
    Rd,
    #[serde(rename = "rbi-j2r")]
    RbiJ2r,
    #[serde(rename = "rbi-cir")]
    RbiCir,
    #[serde(rename = "ancova-complete")]
    AncovaComplete,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Bcm,
        Method::BcmCmiJk,
        Method::BcmCmiBs,
        Method::BcmMiBs,
        Method::Rd,
        Method::RbiJ2r,
        Method::RbiCir,
        Method::AncovaComplete,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Bcm => "bcm",
            Method::BcmCmiJk => "bcm-cmi-jk",
            Method::BcmCmiBs => "bcm-cmi-bs",
            Method::BcmMiBs => "bcm-mi-bs",
            Method::Rd => "rd",
            Method::RbiJ2r => "rbi-j2r",
            Method::RbiCir => "rbi-cir",
            Method::AncovaComplete => "ancova-complete",
        }
    }

    /// Whether the k0 prior affects the estimator.
    pub fn uses_prior(self) -> bool {
        matches!(self, Method::Bcm | Method::BcmCmiJk | Method::BcmCmiBs | Method::BcmMiBs)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            let known: Vec<&str> = Method::ALL.iter().map(|m| m.as_str()).collect();
            Error::InvalidArgument(format!("unknown method '{s}' (expected one of {})", known.join(", ")))
        })
    }
}

/// Sampler, resampling and imputation sizes shared by all methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodSettings {
    pub sampler: SamplerSettings,
    pub rbi_sampler: SamplerSettings,
    pub bootstrap: usize,
    pub mi_imputations: usize,
    pub rd_imputations: usize,
    pub rbi_imputations: usize,
}

impl Default for MethodSettings {
    fn default() -> Self {
        Self {
            sampler: SamplerSettings::default(),
            rbi_sampler: SamplerSettings {
                chains: 1,
                warmup: 200,
                thin: 50,
                ..SamplerSettings::default()
            },
            bootstrap: 100,
            mi_imputations: 25,
            rd_imputations: 50,
            rbi_imputations: 50,
        }
    }
}

impl MethodSettings {
    /// Settings at the sizes of the original simulation study.
    pub fn paper_scale() -> Self {
        let mut s = Self::default();
        s.sampler.keep = 5000;
        s.bootstrap = 200;
        s.mi_imputations = 50;
        s.rd_imputations = 100;
        s.rbi_imputations = 100;
        s
    }
}

/// A method together with the prior it runs under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub method: Method,
    pub prior: PriorSpec,
}

impl MethodSpec {
    pub fn new(method: Method, prior: PriorSpec) -> Self {
        Self { method, prior }
    }

    /// Prior label such as `N(0,100)`, empty for methods that ignore it.
    pub fn prior_label(&self) -> String {
        if self.method.uses_prior() {
            format!("N({},{})", self.prior.k0_mean, self.prior.k0_sd)
        } else {
            String::new()
        }
    }

    pub fn label(&self) -> String {
        match self.prior_label() {
            p if p.is_empty() => self.method.to_string(),
            p => format!("{} {p}", self.method),
        }
    }
}

/// Runs one estimator. `complete` is the dataset before masking, used only
/// by `ancova-complete`; without it that method analyses `ds` directly.
pub fn run_method(
    spec: &MethodSpec,
    settings: &MethodSettings,
    ds: &TrialDataset,
    complete: Option<&TrialDataset>,
    rng: &mut Stream,
) -> Result<EstimateReport> {
    let prior = &spec.prior;
    prior.validate()?;
    match spec.method {
        Method::Bcm => {
            let draws = sample_posterior(ds, prior, true, &settings.sampler, fork(rng))?;
            let alpha = prior.dirichlet_alpha.values(ds.n_visits())?;
            let pis = sample_pi(ds, &alpha, draws.len(), rng)?;
            estimate_effect_bcm(&draws, &pis, ds.mean_baseline())
        }
        Method::BcmCmiJk => bcm_cmi(ds, prior, SeMethod::Jackknife, 0, rng),
        Method::BcmCmiBs => bcm_cmi(ds, prior, SeMethod::Bootstrap, settings.bootstrap, rng),
        Method::BcmMiBs => bcm_mi_bootstrap(ds, prior, settings.bootstrap, settings.mi_imputations, rng),
        Method::Rd => estimate_rd(ds, settings.rd_imputations, rng),
        Method::RbiJ2r => estimate_rbi(ds, RbiVariant::J2r, settings.rbi_imputations, &settings.rbi_sampler, rng),
        Method::RbiCir => estimate_rbi(ds, RbiVariant::Cir, settings.rbi_imputations, &settings.rbi_sampler, rng),
        Method::AncovaComplete => {
            let fit = ancova(complete.unwrap_or(ds))?;
            Ok(EstimateReport::symmetric(
                Method::AncovaComplete.as_str(),
                fit.estimate,
                fit.se,
                Some(fit.df),
            ))
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct MethodsSection {
    run: Vec<String>,
    custom: Vec<CustomMethod>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct CustomMethod {
    method: String,
    k0_mean: Option<f64>,
    k0_sd: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BenchmarkSection {
    n_reps: usize,
    seed: u64,
    truth_draws: usize,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        Self {
            n_reps: 500,
            seed: 1,
            truth_draws: 2_000_000,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    scenario: SimScenario,
    #[serde(default)]
    prior: PriorSpec,
    #[serde(default)]
    methods: MethodsSection,
    #[serde(default)]
    settings: MethodSettings,
    #[serde(default)]
    benchmark: BenchmarkSection,
}

/// Everything a benchmark run needs, read from one TOML file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarnessConfig {
    pub scenario: SimScenario,
    pub prior: PriorSpec,
    pub methods: Vec<MethodSpec>,
    pub settings: MethodSettings,
    pub n_reps: usize,
    /// Master seed for replications; the scenario seed drives the truth.
    pub seed: u64,
    /// Monte Carlo patients per arm for the true effect.
    pub truth_draws: usize,
}

const PRESETS: [(&str, &str); 8] = [
    ("ld-lm-k0-0", include_str!("../presets/ld_lm_k0_0.toml")),
    ("ld-lm-k0-1", include_str!("../presets/ld_lm_k0_1.toml")),
    ("ld-hm-k0-0", include_str!("../presets/ld_hm_k0_0.toml")),
    ("ld-hm-k0-1", include_str!("../presets/ld_hm_k0_1.toml")),
    ("hd-lm-k0-0", include_str!("../presets/hd_lm_k0_0.toml")),
    ("hd-lm-k0-1", include_str!("../presets/hd_lm_k0_1.toml")),
    ("hd-hm-k0-0", include_str!("../presets/hd_hm_k0_0.toml")),
    ("hd-hm-k0-1", include_str!("../presets/hd_hm_k0_1.toml")),
];

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of the first `key = ...` assignment, for pointing at a bad value.
fn line_of_key(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        l.trim_start()
            .strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

/// Attach the line of the offending key, taken as the first word of the
/// message, to a semantic configuration error.
fn locate(text: &str, e: Error) -> Error {
    let message = e.to_string();
    let message = match e {
        Error::Config { message, .. } | Error::InvalidArgument(message) => message,
        _ => message,
    };
    let key = message.split_whitespace().next().unwrap_or("");
    Error::Config {
        line: line_of_key(text, key),
        message,
    }
}

impl HarnessConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let raw: ConfigFile = toml::from_str(text).map_err(|e| Error::Config {
            line: e.span().map(|s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        raw.scenario.validate().map_err(|e| locate(text, e))?;
        raw.prior.validate().map_err(|e| locate(text, e))?;
        let mut methods = Vec::new();
        for name in &raw.methods.run {
            let method = name.parse().map_err(|e| locate(text, e))?;
            methods.push(MethodSpec::new(method, raw.prior.clone()));
        }
        for c in &raw.methods.custom {
            let method = c.method.parse().map_err(|e| locate(text, e))?;
            let mut prior = raw.prior.clone();
            prior.k0_mean = c.k0_mean.unwrap_or(prior.k0_mean);
            prior.k0_sd = c.k0_sd.unwrap_or(prior.k0_sd);
            prior.validate().map_err(|e| locate(text, e))?;
            methods.push(MethodSpec::new(method, prior));
        }
        let mut labels: Vec<String> = methods.iter().map(MethodSpec::label).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("the same method and prior are listed twice"));
        }
        Ok(Self {
            scenario: raw.scenario,
            prior: raw.prior,
            methods,
            settings: raw.settings,
            n_reps: raw.benchmark.n_reps,
            seed: raw.benchmark.seed,
            truth_draws: raw.benchmark.truth_draws,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn preset_names() -> Vec<&'static str> {
        PRESETS.iter().map(|(n, _)| *n).collect()
    }

    /// Bundled scenario such as `hd-hm-k0-0` (high discontinuation, high
    /// missingness, true k0 = 0).
    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "unknown preset '{name}' (expected one of {})",
                Self::preset_names().join(", ")
            ))
        })?;
        Self::parse(text)
    }

    /// A preset name or a path to a TOML file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if PRESETS.iter().any(|(n, _)| *n == name_or_path) {
            Self::preset(name_or_path)
        } else {
            Self::load(Path::new(name_or_path))
        }
    }
}

/// One method's result on one replication, as streamed to the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub method: String,
    pub prior: String,
    pub missing_pct: f64,
    pub truth: f64,
    pub point: Option<f64>,
    pub se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub df: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub method: String,
    pub prior: String,
    pub missing_pct: f64,
    pub truth: f64,
    pub mean: f64,
    pub emp_se: f64,
    pub est_se: f64,
    /// Percent of intervals containing the truth.
    pub coverage: f64,
    pub mcse_mean: f64,
    pub n_reps: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkTable {
    pub fn row(&self, method: &str, prior: &str) -> Option<&BenchmarkRow> {
        self.rows.iter().find(|r| r.method == method && r.prior == prior)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("in-memory CSV");
        }
        String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("CSV is UTF-8")
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

impl fmt::Display for BenchmarkTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<16} {:<10} {:>5} {:>8} {:>8} {:>8} {:>8} {:>6} {:>7} {:>5} {:>5}",
            "method", "prior", "miss%", "truth", "mean", "emp_se", "est_se", "cov%", "mcse", "reps", "fail"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<16} {:<10} {:>5.0} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>6.1} {:>7.4} {:>5} {:>5}",
                r.method, r.prior, r.missing_pct, r.truth, r.mean, r.emp_se, r.est_se, r.coverage, r.mcse_mean,
                r.n_reps, r.failures
            )?;
        }
        Ok(())
    }
}

/// Reduces per-replication records to table rows, one per (method, prior,
/// missingness) in order of first appearance after sorting by replication.
pub fn aggregate(records: &[RepRecord]) -> BenchmarkTable {
    let mut sorted: Vec<&RepRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.rep);
    let mut order: Vec<(String, String, u64)> = Vec::new();
    let mut groups: HashMap<(String, String, u64), Vec<&RepRecord>> = HashMap::new();
    for r in sorted {
        let key = (r.method.clone(), r.prior.clone(), r.missing_pct.to_bits());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    let rows = order
        .into_iter()
        .map(|key| {
            let recs = &groups[&key];
            let ok: Vec<&&RepRecord> = recs.iter().filter(|r| r.error.is_none() && r.point.is_some()).collect();
            let n = ok.len();
            let nf = n as f64;
            let points: Vec<f64> = ok.iter().map(|r| r.point.unwrap()).collect();
            let mean = points.iter().sum::<f64>() / nf;
            let emp_se = if n > 1 {
                (points.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt()
            } else {
                f64::NAN
            };
            let est_se = ok.iter().map(|r| r.se.unwrap_or(f64::NAN)).sum::<f64>() / nf;
            let hits = ok
                .iter()
                .filter(|r| {
                    let rep = EstimateReport {
                        method: String::new(),
                        point: r.point.unwrap(),
                        se: r.se.unwrap_or(f64::NAN),
                        ci_low: r.ci_low.unwrap_or(f64::NAN),
                        ci_high: r.ci_high.unwrap_or(f64::NAN),
                        aux: Default::default(),
                    };
                    covered(&rep, r.truth)
                })
                .count();
            BenchmarkRow {
                method: key.0.clone(),
                prior: key.1.clone(),
                missing_pct: f64::from_bits(key.2),
                truth: recs[0].truth,
                mean,
                emp_se,
                est_se,
                coverage: 100.0 * hits as f64 / nf,
                mcse_mean: emp_se / nf.sqrt(),
                n_reps: n,
                failures: recs.len() - n,
            }
        })
        .collect();
    BenchmarkTable { rows }
}

pub fn read_log(path: &Path) -> Result<Vec<RepRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    reader
        .deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Parse {
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Summarize a per-replication log into a table.
pub fn summarize_log(path: &Path) -> Result<BenchmarkTable> {
    Ok(aggregate(&read_log(path)?))
}

/// Stable 64-bit FNV-1a, used to give each method label its own stream.
fn label_hash(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn truth_cache() -> &'static Mutex<HashMap<String, f64>> {
    static CACHE: OnceLock<Mutex<HashMap<String, f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// True policy effect of a scenario, memoized per process. The truth does
/// not depend on missingness or sample size, so those are not part of the key.
pub fn cached_truth(sc: &SimScenario, n_mc: usize) -> Result<f64> {
    let mut key_sc = sc.clone();
    key_sc.name.clear();
    key_sc.miss_prob = 0.0;
    key_sc.n_per_arm = 1;
    let key = format!("{}|{n_mc}", serde_json::to_string(&key_sc).expect("scenario serializes"));
    if let Some(&t) = truth_cache().lock().expect("truth cache").get(&key) {
        return Ok(t);
    }
    let t = true_policy_effect(sc, n_mc)?;
    truth_cache().lock().expect("truth cache").insert(key, t);
    Ok(t)
}

pub const MIN_REPS: usize = 50;

#[derive(Debug, Clone, Default)]
pub struct BenchmarkOptions {
    /// Worker threads; 0 uses rayon's default.
    pub jobs: usize,
    /// Per-replication log. Existing rows for the same configuration are
    /// kept and their replications skipped.
    pub log: Option<PathBuf>,
}

/// All methods on replication `rep`. Each method draws from its own stream,
/// so a failure in one never changes the others.
pub fn run_replication(cfg: &HarnessConfig, truth: f64, rep: usize) -> Result<Vec<RepRecord>> {
    let rep_seed = derive_seed(cfg.seed, &[rep as u64]);
    let (complete, masked) = simulate_trial_pair(&cfg.scenario, rep_seed)?;
    Ok(cfg
        .methods
        .iter()
        .map(|spec| {
            let mut rng = substream(rep_seed, &[2, label_hash(&spec.label())]);
            let result = run_method(spec, &cfg.settings, &masked, Some(&complete), &mut rng);
            let mut rec = RepRecord {
                rep,
                method: spec.method.to_string(),
                prior: spec.prior_label(),
                missing_pct: 100.0 * cfg.scenario.miss_prob,
                truth,
                point: None,
                se: None,
                ci_low: None,
                ci_high: None,
                df: None,
                error: None,
            };
            match result {
                Ok(r) if r.point.is_finite() && r.se.is_finite() => {
                    rec.point = Some(r.point);
                    rec.se = Some(r.se);
                    rec.ci_low = Some(r.ci_low);
                    rec.ci_high = Some(r.ci_high);
                    rec.df = r.aux.df;
                }
                Ok(r) => rec.error = Some(format!("non-finite estimate {} (SE {})", r.point, r.se)),
                Err(e) => rec.error = Some(e.to_string()),
            }
            rec
        })
        .collect())
}

fn fingerprint(cfg: &HarnessConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("config serializes")
}

fn meta_path(log: &Path) -> PathBuf {
    let mut name = log.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".config.json");
    log.with_file_name(name)
}

/// Simulate `n_reps` trials, run every configured method on each and
/// aggregate. Replications run on a worker pool; the table is reduced in
/// replication order so it does not depend on scheduling.
pub fn run_benchmark(cfg: &HarnessConfig, opts: &BenchmarkOptions) -> Result<BenchmarkTable> {
    if cfg.n_reps < MIN_REPS {
        return Err(Error::InvalidArgument(format!(
            "a benchmark needs at least {MIN_REPS} replications, got {}",
            cfg.n_reps
        )));
    }
    if cfg.methods.is_empty() {
        return Err(Error::config("no methods to run"));
    }
    let truth = cached_truth(&cfg.scenario, cfg.truth_draws)?;
    let mut records = Vec::new();
    let mut writer = None;
    if let Some(log) = &opts.log {
        let meta = meta_path(log);
        let fp = fingerprint(cfg);
        let resume = log.exists() && meta.exists();
        if resume {
            let old = std::fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
            if old != fp {
                return Err(Error::config(format!(
                    "{} was written for a different configuration",
                    log.display()
                )));
            }
            records = read_log(log)?;
            // keep only replications that finished every method
            let mut counts: HashMap<usize, usize> = HashMap::new();
            for r in &records {
                *counts.entry(r.rep).or_default() += 1;
            }
            records.retain(|r| counts[&r.rep] == cfg.methods.len() && r.rep < cfg.n_reps);
        } else {
            std::fs::write(&meta, &fp).map_err(|e| Error::io(&meta, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(log)
            .map_err(|e| Error::io(log, e))?;
        let mut w = csv::Writer::from_writer(file);
        for r in &records {
            w.serialize(r).map_err(|e| Error::Dataset(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(log, e))?;
        writer = Some(Mutex::new(w));
    }
    let done: std::collections::HashSet<usize> = records.iter().map(|r| r.rep).collect();
    let pending: Vec<usize> = (0..cfg.n_reps).filter(|r| !done.contains(r)).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let fresh: Vec<Vec<RepRecord>> = pool.install(|| {
        pending
            .par_iter()
            .map(|&rep| {
                let recs = run_replication(cfg, truth, rep)?;
                if let Some(w) = &writer {
                    let mut w = w.lock().expect("log writer");
                    for r in &recs {
                        w.serialize(r).map_err(|e| Error::Dataset(e.to_string()))?;
                    }
                    w.flush().map_err(|e| Error::io(opts.log.as_ref().expect("log path"), e))?;
                }
                Ok(recs)
            })
            .collect::<Result<_>>()
    })?;
    records.extend(fresh.into_iter().flatten());
    Ok(aggregate(&records))
}
