//! Longitudinal two-arm trial data: patient records, validation, wide CSV
//! input/output and pre/post-ICE frequency summaries.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Control,
    Active,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Control => "control",
            Arm::Active => "active",
        }
    }

    /// Treatment indicator used in regressions.
    pub fn indicator(self) -> f64 {
        match self {
            Arm::Control => 0.0,
            Arm::Active => 1.0,
        }
    }
}

impl std::str::FromStr for Arm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "control" => Ok(Arm::Control),
            "active" => Ok(Arm::Active),
            other => Err(format!("unknown arm '{other}' (expected control or active)")),
        }
    }
}

/// Visit times in weeks, baseline first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitSchedule {
    weeks: Vec<f64>,
}

impl VisitSchedule {
    pub fn new(weeks: Vec<f64>) -> Result<Self> {
        if weeks.len() < 2 {
            return Err(Error::Dataset(
                "visit schedule needs a baseline and at least one follow-up visit".into(),
            ));
        }
        if weeks[0] != 0.0 {
            return Err(Error::Dataset("visit schedule must start at week 0".into()));
        }
        if weeks.windows(2).any(|w| !(w[1] > w[0])) || weeks.iter().any(|w| !w.is_finite()) {
            return Err(Error::Dataset(
                "visit weeks must be finite and strictly increasing".into(),
            ));
        }
        Ok(Self { weeks })
    }

    /// Unit-spaced schedule 0, 1, ..., `n_visits`.
    pub fn unit(n_visits: usize) -> Result<Self> {
        Self::new((0..=n_visits).map(|v| v as f64).collect())
    }

    /// All visit weeks including baseline.
    pub fn weeks(&self) -> &[f64] {
        &self.weeks
    }

    /// Number of post-baseline visits (j_max).
    pub fn n_visits(&self) -> usize {
        self.weeks.len() - 1
    }

    /// Week of post-baseline visit `visit` (1-based; 0 is baseline).
    pub fn week(&self, visit: usize) -> f64 {
        self.weeks[visit]
    }

    fn companion_path(csv: &Path) -> PathBuf {
        let stem = csv
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        csv.with_file_name(format!("{stem}.schedule.json"))
    }

    /// Load a schedule from JSON or TOML (`weeks = [...]`).
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_toml = path.extension().is_some_and(|e| e == "toml");
        let parsed: VisitSchedule = if is_toml {
            toml::from_str(&text).map_err(|e| Error::Parse {
                line: toml_line(&text, &e),
                message: e.message().to_string(),
            })?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                line: e.line(),
                message: e.to_string(),
            })?
        };
        Self::new(parsed.weeks)
    }
}

fn toml_line(text: &str, e: &toml::de::Error) -> usize {
    e.span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub arm: Arm,
    pub baseline: f64,
    /// Post-baseline outcomes, visits 1..=j_max.
    pub y: Vec<Option<f64>>,
    /// Last visit on randomized treatment; `j_max` means no ICE.
    pub d: usize,
}

impl PatientRecord {
    pub fn n_visits(&self) -> usize {
        self.y.len()
    }

    pub fn has_ice(&self) -> bool {
        self.d < self.y.len()
    }

    /// Post-ICE visits exist and are all observed.
    pub fn post_ice_observed(&self) -> bool {
        self.has_ice() && self.y[self.d..].iter().all(Option::is_some)
    }

    /// Post-ICE visits exist and are all missing.
    pub fn post_ice_missing(&self) -> bool {
        self.has_ice() && self.y[self.d..].iter().all(Option::is_none)
    }

    pub fn is_complete(&self) -> bool {
        self.y.iter().all(Option::is_some)
    }

    pub fn final_outcome(&self) -> Option<f64> {
        *self.y.last().expect("record has at least one visit")
    }

    /// Indices (0-based) of observed post-baseline visits.
    pub fn observed_indices(&self) -> Vec<usize> {
        self.y
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|_| i))
            .collect()
    }

    fn validate(&self, n_visits: usize) -> Result<()> {
        let fail = |message: String| Error::Validation {
            patient: self.id.clone(),
            message,
        };
        if self.y.len() != n_visits {
            return Err(fail(format!(
                "expected {n_visits} post-baseline outcomes, found {}",
                self.y.len()
            )));
        }
        if self.d < 1 || self.d > n_visits {
            return Err(fail(format!(
                "discontinuation visit {} outside 1..={n_visits}",
                self.d
            )));
        }
        if !self.baseline.is_finite() {
            return Err(fail("baseline must be observed and finite".into()));
        }
        if self.y.iter().flatten().any(|v| !v.is_finite()) {
            return Err(fail("outcomes must be finite".into()));
        }
        if self.arm == Arm::Active {
            if let Some(v) = self.y[..self.d].iter().position(Option::is_none) {
                return Err(fail(format!(
                    "pre-ICE visit {} is missing; on-treatment visits must be observed",
                    v + 1
                )));
            }
            if self.has_ice() && !self.post_ice_observed() && !self.post_ice_missing() {
                return Err(fail(
                    "post-ICE block is partially observed; it must be all observed or all missing"
                        .into(),
                ));
            }
        }
        Ok(())
    }
}

/// Immutable validated trial dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDataset {
    schedule: VisitSchedule,
    patients: Vec<PatientRecord>,
}

impl TrialDataset {
    pub fn new(schedule: VisitSchedule, patients: Vec<PatientRecord>) -> Result<Self> {
        let j = schedule.n_visits();
        for p in &patients {
            p.validate(j)?;
        }
        for arm in [Arm::Control, Arm::Active] {
            if !patients.iter().any(|p| p.arm == arm) {
                return Err(Error::Dataset(format!(
                    "dataset has no {} patients",
                    arm.as_str()
                )));
            }
        }
        Ok(Self { schedule, patients })
    }

    pub fn schedule(&self) -> &VisitSchedule {
        &self.schedule
    }

    pub fn patients(&self) -> &[PatientRecord] {
        &self.patients
    }

    pub fn n_visits(&self) -> usize {
        self.schedule.n_visits()
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn arm(&self, arm: Arm) -> impl Iterator<Item = &PatientRecord> {
        self.patients.iter().filter(move |p| p.arm == arm)
    }

    pub fn arm_size(&self, arm: Arm) -> usize {
        self.arm(arm).count()
    }

    pub fn mean_baseline(&self) -> f64 {
        self.patients.iter().map(|p| p.baseline).sum::<f64>() / self.len() as f64
    }

    pub fn n_missing(&self) -> usize {
        self.patients
            .iter()
            .map(|p| p.y.iter().filter(|v| v.is_none()).count())
            .sum()
    }

    /// Active patients with an observed post-ICE block.
    pub fn n_observed_post_ice_active(&self) -> usize {
        self.arm(Arm::Active).filter(|p| p.post_ice_observed()).count()
    }

    /// Counts of discontinuation visit d (index d-1) in the active arm.
    pub fn discontinuation_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_visits()];
        for p in self.arm(Arm::Active) {
            counts[p.d - 1] += 1;
        }
        counts
    }

    /// Dataset made of the given patient indices (with repetition), ids
    /// suffixed to stay unique.
    pub fn resample(&self, indices: &[usize]) -> Result<Self> {
        let patients = indices
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                let mut p = self.patients[i].clone();
                p.id = format!("{}#{k}", p.id);
                p
            })
            .collect();
        Self::new(self.schedule.clone(), patients)
    }

    pub fn without(&self, index: usize) -> Result<Self> {
        let patients = self
            .patients
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != index)
            .map(|(_, p)| p.clone())
            .collect();
        Self::new(self.schedule.clone(), patients)
    }

    /// Replace patient records, keeping the schedule. Used by imputation.
    pub(crate) fn with_patients(&self, patients: Vec<PatientRecord>) -> Result<Self> {
        Self::new(self.schedule.clone(), patients)
    }
}

fn format_value(v: f64) -> String {
    // Shortest representation that parses back to the same bits.
    format!("{v}")
}

fn header(n_visits: usize) -> Vec<String> {
    let mut h = vec!["id".to_string(), "arm".into(), "base".into()];
    h.extend((1..=n_visits).map(|j| format!("y{j}")));
    h.push("d".into());
    h
}

/// Read a wide-format CSV. Visit weeks come from the companion
/// `<stem>.schedule.json` when present, otherwise unit spacing is used.
pub fn read_csv(path: &Path) -> Result<TrialDataset> {
    let companion = VisitSchedule::companion_path(path);
    let schedule = if companion.exists() {
        Some(VisitSchedule::load(&companion)?)
    } else {
        None
    };
    read_csv_with_schedule(path, schedule)
}

pub fn read_csv_with_schedule(path: &Path, schedule: Option<VisitSchedule>) -> Result<TrialDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, schedule)
}

pub fn parse_csv(text: &str, schedule: Option<VisitSchedule>) -> Result<TrialDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let header_line = reader.position().line().max(1) as usize;
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 5 {
        return Err(Error::Parse {
            line: header_line,
            message: "expected header id,arm,base,y1..yJ,d".into(),
        });
    }
    let n_visits = cols.len() - 4;
    let expected = header(n_visits);
    if cols
        .iter()
        .zip(&expected)
        .any(|(a, b)| !a.eq_ignore_ascii_case(b))
    {
        return Err(Error::Parse {
            line: header_line,
            message: format!("header must be {}", expected.join(",")),
        });
    }
    let schedule = match schedule {
        Some(s) if s.n_visits() != n_visits => {
            return Err(Error::Dataset(format!(
                "schedule has {} follow-up visits but CSV has {n_visits}",
                s.n_visits()
            )))
        }
        Some(s) => s,
        None => VisitSchedule::unit(n_visits)?,
    };

    let mut patients = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let perr = |message: String| Error::Parse { line, message };
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| perr(format!("{what}: cannot parse '{s}' as a number")))
        };
        let id = record[0].to_string();
        let arm: Arm = record[1].parse().map_err(perr)?;
        if record[2].is_empty() {
            return Err(perr("baseline value is missing".into()));
        }
        let baseline = num(&record[2], "base")?;
        let mut y = Vec::with_capacity(n_visits);
        for j in 0..n_visits {
            let cell = &record[3 + j];
            y.push(if cell.is_empty() {
                None
            } else {
                Some(num(cell, &format!("y{}", j + 1))?)
            });
        }
        let dcell = &record[3 + n_visits];
        let d = if dcell.eq_ignore_ascii_case("none") {
            n_visits
        } else {
            dcell
                .parse::<usize>()
                .map_err(|_| perr(format!("d: expected an integer or 'none', found '{dcell}'")))?
        };
        patients.push(PatientRecord {
            id,
            arm,
            baseline,
            y,
            d,
        });
    }
    TrialDataset::new(schedule, patients)
}

pub fn write_csv(ds: &TrialDataset, path: &Path) -> Result<()> {
    write_csv_tagged(ds, path, None)
}

/// Write the wide CSV plus its schedule companion; `tag` is emitted as a
/// leading `# provenance:` comment line.
pub fn write_csv_tagged(ds: &TrialDataset, path: &Path, tag: Option<&str>) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::Dataset("refusing to write an empty dataset".into()));
    }
    let mut out = String::new();
    if let Some(tag) = tag {
        out.push_str(&format!("# provenance: {tag}\n"));
    }
    out.push_str(&header(ds.n_visits()).join(","));
    out.push('\n');
    for p in ds.patients() {
        let mut row = vec![p.id.clone(), p.arm.as_str().into(), format_value(p.baseline)];
        row.extend(p.y.iter().map(|v| v.map(format_value).unwrap_or_default()));
        row.push(if p.has_ice() {
            p.d.to_string()
        } else {
            "none".into()
        });
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    let companion = VisitSchedule::companion_path(path);
    let json = serde_json::to_string_pretty(ds.schedule()).expect("schedule serializes");
    fs::write(&companion, json).map_err(|e| Error::io(&companion, e))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct VisitCounts {
    /// On treatment at this visit.
    pub pre: usize,
    /// Subset of `pre` with a missing outcome (control arm only).
    pub pre_missing: usize,
    /// Post-ICE and observed.
    pub obs: usize,
    /// Post-ICE and missing.
    pub miss: usize,
}

impl VisitCounts {
    pub fn total(&self) -> usize {
        self.pre + self.obs + self.miss
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub control: Vec<VisitCounts>,
    pub active: Vec<VisitCounts>,
    pub n_control: usize,
    pub n_active: usize,
}

impl Summary {
    pub fn arm(&self, arm: Arm) -> &[VisitCounts] {
        match arm {
            Arm::Control => &self.control,
            Arm::Active => &self.active,
        }
    }
}

pub fn summarize(ds: &TrialDataset) -> Summary {
    let j = ds.n_visits();
    let count = |arm: Arm| {
        let mut counts = vec![VisitCounts::default(); j];
        for p in ds.arm(arm) {
            for (v, c) in counts.iter_mut().enumerate() {
                let observed = p.y[v].is_some();
                if v < p.d {
                    c.pre += 1;
                    if !observed {
                        c.pre_missing += 1;
                    }
                } else if observed {
                    c.obs += 1;
                } else {
                    c.miss += 1;
                }
            }
        }
        counts
    };
    Summary {
        control: count(Arm::Control),
        active: count(Arm::Active),
        n_control: ds.arm_size(Arm::Control),
        n_active: ds.arm_size(Arm::Active),
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>5} | {:>13} | {:>13}",
            "visit",
            format!("control n={}", self.n_control),
            format!("active n={}", self.n_active)
        )?;
        writeln!(f, "{:>5} | {:>4}{:>5}{:>5} | {:>4}{:>5}{:>5}", "", "Pre", "Obs", "Miss", "Pre", "Obs", "Miss")?;
        for (v, (c, a)) in self.control.iter().zip(&self.active).enumerate() {
            writeln!(
                f,
                "{:>5} | {:>4}{:>5}{:>5} | {:>4}{:>5}{:>5}",
                v + 1,
                c.pre,
                c.obs,
                c.miss,
                a.pre,
                a.obs,
                a.miss
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "id,arm,base,y1,y2,y3,y4,y5,d\n";

    fn parse(rows: &str) -> Result<TrialDataset> {
        parse_csv(
            &format!("{HEADER}c1,control,7.9,7.8,7.7,7.6,7.5,7.4,none\n{rows}"),
            None,
        )
    }

    #[test]
    fn discontinuer_with_missing_post_block() {
        let ds = parse("p1,active,7.9,7.5,7.2,,,,2\n").unwrap();
        let p = &ds.patients()[1];
        assert_eq!(p.d, 2);
        assert_eq!(p.y, vec![Some(7.5), Some(7.2), None, None, None]);
        assert!(p.post_ice_missing());
    }

    #[test]
    fn completer_row() {
        let ds = parse("p1,active,7.9,7.5,7.2,7.1,7.0,7.0,5\n").unwrap();
        let p = &ds.patients()[1];
        assert_eq!(p.d, 5);
        assert!(!p.has_ice());
        assert!(p.is_complete());
    }

    #[test]
    fn partial_post_block_rejected() {
        let err = parse("p9,active,7.9,7.5,7.2,7.0,,7.1,2\n").unwrap_err();
        match err {
            Error::Validation { patient, .. } => assert_eq!(patient, "p9"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn control_may_have_intermittent_gaps() {
        let ds = parse("c2,control,7.9,7.5,,7.0,,7.1,2\np1,active,7.9,7.5,7.2,,,,2\n").unwrap();
        assert_eq!(ds.patients()[1].y[1], None);
        assert_eq!(ds.n_missing(), 5);
    }

    #[test]
    fn malformed_number_names_line() {
        let err = parse("p1,active,7.9,abc,7.2,,,,2\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_arm_rejected() {
        let err = parse_csv(&format!("{HEADER}c1,control,7,7,7,7,7,7,none\n"), None).unwrap_err();
        assert!(matches!(err, Error::Dataset(_)));
    }

    #[test]
    fn empty_dataset_write_fails() {
        let ds = TrialDataset {
            schedule: VisitSchedule::unit(2).unwrap(),
            patients: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        assert!(write_csv(&ds, &dir.path().join("x.csv")).is_err());
    }

    #[test]
    fn round_trip_with_missing_cells() {
        let ds = parse("p1,active,7.9,0.1,0.30000000000000004,,,,2\n").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trial.csv");
        write_csv_tagged(&ds, &path, Some("conditional_mean")).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# provenance: conditional_mean\n"));
        assert!(text.contains(",,,2\n"));
        assert_eq!(read_csv(&path).unwrap(), ds);
    }

    #[test]
    fn schedule_validation() {
        assert!(VisitSchedule::new(vec![0.0]).is_err());
        assert!(VisitSchedule::new(vec![1.0, 2.0]).is_err());
        assert!(VisitSchedule::new(vec![0.0, 4.0, 4.0]).is_err());
        assert_eq!(VisitSchedule::new(vec![0.0, 4.0, 8.0]).unwrap().n_visits(), 2);
    }

    #[test]
    fn summary_completer_and_observed_post() {
        let ds = parse("p1,active,7.9,7.5,7.2,7.1,7.0,7.0,none\np2,active,7.9,7.5,7.2,7.1,7.0,7.0,2\n")
            .unwrap();
        let s = summarize(&ds);
        assert_eq!(s.active[0].pre, 2);
        assert_eq!(s.active[1].pre, 2);
        for v in 2..5 {
            assert_eq!(s.active[v], VisitCounts { pre: 1, pre_missing: 0, obs: 1, miss: 0 });
        }
        for arm in [Arm::Control, Arm::Active] {
            let n = ds.arm_size(arm);
            assert!(s.arm(arm).iter().all(|c| c.total() == n));
        }
    }
}
