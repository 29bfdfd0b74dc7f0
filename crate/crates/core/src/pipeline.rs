//! Batch analyses driven by a JSON config: ingestion, rate series,
//! confounding diagnostics and nesting checks, with byte-stable outputs.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use num_rational::BigRational;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{check_eq12, check_eq13, check_eq14, check_eq8, confounding_demo, percent_diff, ConfoundingDemo, ConfoundingVerdict};
use crate::dist::EmpiricalJoint;
use crate::error::{Error, RateError, Result};
use crate::io::{self, DataSchema, IngestStats, RowFilter, FORMAT_VERSION};
use crate::nesting::{projection_checks, sca_pseudo_recurse, scc_recurse, table_gap, NestingPair, ProjectionReport, IDENTITY_TOL};
use crate::operators::{rate_table, EmptyStratumPolicy, Method, RateTable, StandardizationSpec};
use crate::scalar::{format_fixed, rational_from_u64};
use crate::schema::Factorization;
use crate::weights::WeightMeasure;

/// Rates are emitted per this many persons.
pub const RATE_SCALE: u64 = 100_000;
/// Fractional digits of every emitted rate and percentage.
pub const EMIT_DECIMALS: usize = 6;
/// Marker for undefined entries in emitted tables.
pub const NA: &str = "NA";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Microdata,
    Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRef {
    pub period: String,
    pub file: PathBuf,
    pub format: DataFormat,
}

/// Where the standardization weight P*(E) comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum WeightSource {
    /// A weight CSV.
    File { path: PathBuf },
    /// The covariate distribution of one of the configured periods.
    Empirical { period: String },
    /// Equal mass on every risk-factor stratum.
    Uniform,
}

impl WeightSource {
    pub fn label(&self) -> String {
        match self {
            WeightSource::File { path } => format!("file:{}", path.display()),
            WeightSource::Empirical { period } => format!("empirical:{period}"),
            WeightSource::Uniform => "uniform".to_string(),
        }
    }
}

/// One rate series: crude, SCA, SCC and percent difference per E1 group and
/// period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesRequest {
    pub name: String,
    pub e1: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "lowercase", deny_unknown_fields)]
pub enum DiagnosticRequest {
    /// Equal P(E2 | E1) in both periods ([`check_eq8`]).
    Eq8 { periods: [String; 2], e1: Vec<String> },
    /// Equal P(E2a | E1a, a) in both periods ([`check_eq12`]).
    Eq12 { periods: [String; 2], e1: Vec<String> },
    /// Equal P(Ea | a) in both periods ([`check_eq13`]).
    Eq13 { periods: [String; 2] },
    /// SCA equals SCC under the configured weight ([`check_eq14`]).
    Eq14 { period: String },
    /// SCA and SCC differences side by side ([`confounding_demo`]).
    Demo { periods: [String; 2], e1: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NestingRequest {
    pub period: String,
    pub outer: Vec<String>,
    pub inner: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub format_version: u32,
    /// Schema JSON, relative to the config file.
    pub schema: PathBuf,
    pub datasets: Vec<DatasetRef>,
    #[serde(default)]
    pub filters: Vec<RowFilter>,
    pub weight: WeightSource,
    #[serde(default)]
    pub policy: EmptyStratumPolicy,
    /// The age covariate used by SCA and the age-based diagnostics.
    #[serde(default)]
    pub age: Option<String>,
    #[serde(default)]
    pub series: Vec<SeriesRequest>,
    #[serde(default)]
    pub diagnostics: Vec<DiagnosticRequest>,
    #[serde(default)]
    pub nesting: Vec<NestingRequest>,
    /// Periods on which to run the projection-property checks.
    #[serde(default)]
    pub projection: Vec<String>,
    /// Tolerance of the diagnostics (0 means exact equality).
    #[serde(default)]
    pub tol: f64,
    /// Seed of the generator that produced synthetic inputs, if any.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Directory that relative file references are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl AnalysisConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        if config.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported format_version {}", config.format_version)));
        }
        Ok(config)
    }

    /// Loads a config; its relative file references resolve against the
    /// config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut config = Self::from_json(&io::read_text(path)?).map_err(|e| e.in_stage(format!("config {}", path.display())))?;
        config.base_dir = path.parent().unwrap_or(Path::new("")).to_path_buf();
        Ok(config)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.base_dir.join(path)
    }

    /// Structural checks that need no file access.
    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::Config("dataset list is empty".into()));
        }
        let mut periods = HashSet::new();
        for d in &self.datasets {
            if !periods.insert(d.period.as_str()) {
                return Err(Error::Config(format!("period `{}` is listed twice", d.period)));
            }
        }
        let known = |p: &str| -> Result<()> {
            if periods.contains(p) {
                Ok(())
            } else {
                Err(Error::Config(format!("unknown period `{p}`")))
            }
        };
        if let WeightSource::Empirical { period } = &self.weight {
            known(period)?;
        }
        for d in &self.diagnostics {
            match d {
                DiagnosticRequest::Eq8 { periods, .. }
                | DiagnosticRequest::Eq12 { periods, .. }
                | DiagnosticRequest::Eq13 { periods }
                | DiagnosticRequest::Demo { periods, .. } => periods.iter().try_for_each(|p| known(p))?,
                DiagnosticRequest::Eq14 { period } => known(period)?,
            }
        }
        for n in &self.nesting {
            known(&n.period)?;
        }
        for p in &self.projection {
            known(p)?;
        }
        let mut names = HashSet::new();
        for s in &self.series {
            if !crate::schema::valid_token(&s.name) || !names.insert(s.name.as_str()) {
                return Err(Error::Config(format!("series name `{}` is invalid or repeated", s.name)));
            }
        }
        if !(self.tol >= 0.0 && self.tol < 1.0) {
            return Err(Error::Config(format!("tol {} must lie in [0, 1)", self.tol)));
        }
        Ok(())
    }
}

/// Orders periods numerically when every label is an integer, otherwise
/// lexicographically.
pub fn sort_periods(periods: &mut [String]) {
    if periods.iter().all(|p| p.parse::<i64>().is_ok()) {
        periods.sort_by_key(|p| p.parse::<i64>().expect("checked"));
    } else {
        periods.sort();
    }
}

/// Inputs of an analysis after ingestion.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub config: AnalysisConfig,
    /// Schema after row filters.
    pub schema: DataSchema,
    /// One joint per period, in ascending period order.
    pub joints: Vec<EmpiricalJoint>,
    pub ingest: Vec<(String, IngestStats)>,
    pub weight: WeightMeasure,
    pub age: Option<usize>,
}

impl Analysis {
    pub fn prepare(config: AnalysisConfig) -> Result<Self> {
        config.validate().map_err(|e| e.in_stage("config"))?;
        let source = DataSchema::load(&config.resolve(&config.schema))?;
        let schema = source.restrict(&config.filters).map_err(|e| e.in_stage("filters"))?;
        let age = match &config.age {
            Some(name) => Some(schema.schema.factor(name).map_err(|e| e.in_stage("config"))?),
            None => None,
        };
        let mut order: Vec<String> = config.datasets.iter().map(|d| d.period.clone()).collect();
        sort_periods(&mut order);
        let mut joints = Vec::new();
        let mut ingest = Vec::new();
        for period in &order {
            let d = config.datasets.iter().find(|d| &d.period == period).expect("listed");
            let stage = || format!("ingest {} ({})", d.period, d.file.display());
            let file = config.resolve(&d.file);
            let (joint, stats) = match d.format {
                DataFormat::Microdata => io::load_microdata(&file, &source, &config.filters, &d.period),
                DataFormat::Counts => io::load_counts(&file, &source, &config.filters, &d.period),
            }
            .map_err(|e| e.in_stage(stage()))?;
            joints.push(joint);
            ingest.push((d.period.clone(), stats));
        }
        let weight = match &config.weight {
            WeightSource::File { path } => io::load_weight(&config.resolve(path), &source, &config.filters),
            WeightSource::Empirical { period } => {
                WeightMeasure::empirical(joints.iter().find(|j| j.period() == period).expect("validated"))
            }
            WeightSource::Uniform => Ok(WeightMeasure::uniform(schema.schema.clone(), schema.schema.all_factors())),
        }
        .map_err(|e| e.in_stage("weight"))?;
        Ok(Self { config, schema, joints, ingest, weight, age })
    }

    pub fn joint(&self, period: &str) -> Result<&EmpiricalJoint> {
        self.joints
            .iter()
            .find(|j| j.period() == period)
            .ok_or_else(|| Error::Config(format!("unknown period `{period}`")))
    }

    pub fn policy(&self) -> EmptyStratumPolicy {
        self.config.policy
    }

    fn require_age(&self, what: &str) -> Result<usize> {
        self.age.ok_or_else(|| Error::Config(format!("{what} needs `age` in the config")))
    }

    pub fn metadata(&self) -> SeriesMetadata {
        let hash = Sha256::digest(self.schema.canonical_json().as_bytes());
        SeriesMetadata {
            schema_hash: format!("sha256:{hash:x}"),
            weight_source: self.config.weight.label(),
            policy: self.config.policy,
            seed: self.config.seed,
        }
    }

    pub fn series(&self, request: &SeriesRequest) -> Result<SeriesOutput> {
        let stage = format!("series {}", request.name);
        self.series_inner(request).map_err(|e| e.in_stage(stage))
    }

    fn series_inner(&self, request: &SeriesRequest) -> Result<SeriesOutput> {
        let schema = &self.schema.schema;
        let e1 = schema.vars(&request.e1)?;
        let fact = Factorization::new(schema, e1)?;
        let policy = self.policy();
        let table = |d: &EmpiricalJoint, method: Method| -> Result<RateTable<BigRational>> {
            rate_table(d, &StandardizationSpec::new(fact, method, policy))
        };
        let sca_age = self.age.filter(|a| !e1.contains(*a));
        let mut per_period = Vec::new();
        for d in &self.joints {
            let crude = table(d, Method::Crude)?;
            let scc = table(d, Method::Scc { weight: self.weight.clone() })?;
            let sca = match sca_age {
                Some(age) => Some(table(d, Method::Sca { age, weight: self.weight.clone() })?),
                None => None,
            };
            per_period.push((d.period(), crude, scc, sca));
        }
        let value = |t: &RateTable<BigRational>, i: usize, period: &str| -> Result<Option<BigRational>> {
            match &t.entries[i].result {
                Ok(s) => Ok(Some(s.rate.clone())),
                Err(RateError::EmptyStratum { stratum }) if policy == EmptyStratumPolicy::Strict => Err(Error::Spec(format!(
                    "period {period}, group {}: weight on empty stratum {stratum} under the strict policy",
                    schema.describe(&t.entries[i].key)
                ))),
                Err(_) => Ok(None),
            }
        };
        let mut rows = Vec::new();
        for i in 0..schema.sub_cells(e1) {
            let key = schema.key_at(e1, i);
            for (period, crude, scc, sca) in &per_period {
                let crude = value(crude, i, period)?;
                let scc = value(scc, i, period)?;
                let sca = match sca {
                    Some(t) => value(t, i, period)?,
                    None => None,
                };
                let pct_diff = match (&sca, &crude) {
                    (Some(s), Some(c)) if !s.is_zero() => percent_diff(s.clone(), c.clone()).ok(),
                    _ => None,
                };
                rows.push(SeriesRow { period: period.to_string(), group: schema.key_levels(&key), crude, sca, scc, pct_diff });
            }
        }
        Ok(SeriesOutput {
            name: request.name.clone(),
            group_columns: e1.iter().map(|f| schema.factor_name(f).to_string()).collect(),
            metadata: self.metadata(),
            rows,
        })
    }

    pub fn diagnostic(&self, request: &DiagnosticRequest) -> Result<DiagnosticResult> {
        let schema = &self.schema.schema;
        let tol = self.config.tol;
        let fact = |e1: &[String]| Factorization::new(schema, schema.vars(e1)?);
        let pair = |p: &[String; 2]| -> Result<(&EmpiricalJoint, &EmpiricalJoint)> { Ok((self.joint(&p[0])?, self.joint(&p[1])?)) };
        let run = || -> Result<DiagnosticResult> {
            Ok(match request {
                DiagnosticRequest::Eq8 { periods, e1 } => {
                    let (a, b) = pair(periods)?;
                    DiagnosticResult::Verdict(check_eq8(a, b, fact(e1)?, tol)?)
                }
                DiagnosticRequest::Eq12 { periods, e1 } => {
                    let (a, b) = pair(periods)?;
                    DiagnosticResult::Verdict(check_eq12(a, b, fact(e1)?, self.require_age("eq12")?, tol)?)
                }
                DiagnosticRequest::Eq13 { periods } => {
                    let (a, b) = pair(periods)?;
                    DiagnosticResult::Verdict(check_eq13(a, b, self.require_age("eq13")?, tol)?)
                }
                DiagnosticRequest::Eq14 { period } => {
                    DiagnosticResult::Verdict(check_eq14(self.joint(period)?, &self.weight, self.require_age("eq14")?, tol)?)
                }
                DiagnosticRequest::Demo { periods, e1 } => {
                    let (a, b) = pair(periods)?;
                    DiagnosticResult::Demo(Box::new(confounding_demo(a, b, fact(e1)?, self.require_age("demo")?, &self.weight)?))
                }
            })
        };
        run().map_err(|e| e.in_stage(format!("diagnostic {}", request.label())))
    }

    pub fn nesting(&self, request: &NestingRequest) -> Result<NestingResult> {
        let run = || -> Result<NestingResult> {
            let dist = self.joint(&request.period)?;
            let pair = NestingPair::from_names(&self.schema.schema, &request.outer, &request.inner)?;
            let (direct, recursed) = scc_recurse::<f64>(dist, &self.weight, pair, self.policy())?;
            let (scc_max_gap, scc_same_support) = table_gap(&direct, &recursed);
            let sca_pseudo_gap = match self.age {
                Some(age) if !pair.outer().contains(age) => {
                    Some(sca_pseudo_recurse(dist, &self.weight, age, pair, self.policy())?.max_gap)
                }
                _ => None,
            };
            Ok(NestingResult {
                period: request.period.clone(),
                outer: request.outer.clone(),
                inner: request.inner.clone(),
                scc_max_gap,
                scc_same_support,
                scc_identity_holds: scc_same_support && scc_max_gap <= IDENTITY_TOL,
                sca_pseudo_gap,
            })
        };
        run().map_err(|e| e.in_stage(format!("nesting {} {:?} > {:?}", request.period, request.outer, request.inner)))
    }

    pub fn projection(&self, period: &str) -> Result<ProjectionReport> {
        projection_checks(self.joint(period)?, &self.weight, IDENTITY_TOL).map_err(|e| e.in_stage(format!("projection {period}")))
    }
}

impl DiagnosticRequest {
    pub fn label(&self) -> String {
        match self {
            DiagnosticRequest::Eq8 { periods, e1 } => format!("eq8 {} vs {} e1={:?}", periods[0], periods[1], e1),
            DiagnosticRequest::Eq12 { periods, e1 } => format!("eq12 {} vs {} e1={:?}", periods[0], periods[1], e1),
            DiagnosticRequest::Eq13 { periods } => format!("eq13 {} vs {}", periods[0], periods[1]),
            DiagnosticRequest::Eq14 { period } => format!("eq14 {period}"),
            DiagnosticRequest::Demo { periods, e1 } => format!("demo {} vs {} e1={:?}", periods[0], periods[1], e1),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum DiagnosticResult {
    Verdict(ConfoundingVerdict),
    Demo(Box<ConfoundingDemo>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NestingResult {
    pub period: String,
    pub outer: Vec<String>,
    pub inner: Vec<String>,
    pub scc_max_gap: f64,
    pub scc_same_support: bool,
    pub scc_identity_holds: bool,
    /// Gap of the SCA pseudo-recursion, when the outer set excludes age.
    pub sca_pseudo_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesMetadata {
    pub schema_hash: String,
    pub weight_source: String,
    pub policy: EmptyStratumPolicy,
    pub seed: Option<u64>,
}

/// Internal [0, 1] rates; scaling happens in the emitters.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRow {
    pub period: String,
    pub group: Vec<String>,
    pub crude: Option<BigRational>,
    pub sca: Option<BigRational>,
    pub scc: Option<BigRational>,
    pub pct_diff: Option<BigRational>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesOutput {
    pub name: String,
    pub group_columns: Vec<String>,
    pub metadata: SeriesMetadata,
    pub rows: Vec<SeriesRow>,
}

fn emit_rate(r: &Option<BigRational>) -> String {
    match r {
        Some(r) => format_fixed(&(r * rational_from_u64(RATE_SCALE, 1)), EMIT_DECIMALS),
        None => NA.to_string(),
    }
}

fn emit_pct(r: &Option<BigRational>) -> String {
    match r {
        Some(r) => format_fixed(r, EMIT_DECIMALS),
        None => NA.to_string(),
    }
}

impl SeriesOutput {
    /// `period,<group columns>,crude,sca,scc,pct_diff`; rates per 100,000,
    /// percent difference in percent.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("period,");
        for c in &self.group_columns {
            out.push_str(c);
            out.push(',');
        }
        out.push_str("crude,sca,scc,pct_diff\n");
        for row in &self.rows {
            let mut fields = vec![row.period.clone()];
            fields.extend(row.group.iter().cloned());
            fields.extend([emit_rate(&row.crude), emit_rate(&row.sca), emit_rate(&row.scc), emit_pct(&row.pct_diff)]);
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    /// JSON mirror of the CSV. Values are the emitted decimal strings, or
    /// `null` where the CSV has `NA`.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Units {
            rates: String,
            pct_diff: &'static str,
        }
        #[derive(Serialize)]
        struct Row<'a> {
            period: &'a str,
            group: &'a [String],
            crude: Option<String>,
            sca: Option<String>,
            scc: Option<String>,
            pct_diff: Option<String>,
        }
        #[derive(Serialize)]
        struct File<'a> {
            format_version: u32,
            series: &'a str,
            group_columns: &'a [String],
            units: Units,
            metadata: &'a SeriesMetadata,
            rows: Vec<Row<'a>>,
        }
        let rate = |r: &Option<BigRational>| r.as_ref().map(|_| emit_rate(r));
        let pct = |r: &Option<BigRational>| r.as_ref().map(|_| emit_pct(r));
        let file = File {
            format_version: FORMAT_VERSION,
            series: &self.name,
            group_columns: &self.group_columns,
            units: Units { rates: format!("per {RATE_SCALE}"), pct_diff: "percent" },
            metadata: &self.metadata,
            rows: self
                .rows
                .iter()
                .map(|r| Row {
                    period: &r.period,
                    group: &r.group,
                    crude: rate(&r.crude),
                    sca: rate(&r.sca),
                    scc: rate(&r.scc),
                    pct_diff: pct(&r.pct_diff),
                })
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&file).expect("series serializes");
        text.push('\n');
        text
    }
}

/// Writes `series_<name>.csv` and `series_<name>.json` into `out_dir`.
pub fn emit_series(series: &SeriesOutput, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let csv = out_dir.join(format!("series_{}.csv", series.name));
    let json = out_dir.join(format!("series_{}.json", series.name));
    io::write_text(&csv, &series.to_csv())?;
    io::write_text(&json, &series.to_json())?;
    Ok(vec![csv, json])
}

/// Which parts of a config to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stages {
    pub ingest: bool,
    pub series: bool,
    pub diagnostics: bool,
    pub nesting: bool,
}

impl Stages {
    /// Every analysis stage; count tables are only written by `ingest`.
    pub const ANALYSES: Stages = Stages { ingest: false, series: true, diagnostics: true, nesting: true };
}

/// Command-line overrides of config fields.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub policy: Option<EmptyStratumPolicy>,
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub artifacts: Vec<PathBuf>,
    pub series: Vec<SeriesOutput>,
    pub diagnostics: Vec<(String, DiagnosticResult)>,
    pub nesting: Vec<NestingResult>,
    pub projection: Vec<(String, ProjectionReport)>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    io::write_text(path, &text)
}

/// Runs the requested stages of `config` and writes their outputs to
/// `out_dir`. Output bytes depend only on the config and its input files.
pub fn run_pipeline(mut config: AnalysisConfig, out_dir: &Path, overrides: Overrides, stages: Stages) -> Result<RunReport> {
    if let Some(p) = overrides.policy {
        config.policy = p;
    }
    if let Some(t) = overrides.tol {
        config.tol = t;
    }
    let analysis = Analysis::prepare(config)?;
    let mut report = RunReport::default();
    if stages.ingest {
        for j in &analysis.joints {
            let path = out_dir.join(format!("counts_{}.csv", j.period()));
            io::write_text(&path, &io::write_counts(j))?;
            report.artifacts.push(path);
        }
    }
    if stages.series {
        for request in &analysis.config.series {
            let series = analysis.series(request)?;
            report.artifacts.extend(emit_series(&series, out_dir)?);
            report.series.push(series);
        }
    }
    if stages.diagnostics && !analysis.config.diagnostics.is_empty() {
        for request in &analysis.config.diagnostics {
            report.diagnostics.push((request.label(), analysis.diagnostic(request)?));
        }
        #[derive(Serialize)]
        struct Entry<'a> {
            request: &'a DiagnosticRequest,
            result: &'a DiagnosticResult,
        }
        #[derive(Serialize)]
        struct File<'a> {
            format_version: u32,
            tol: f64,
            results: Vec<Entry<'a>>,
        }
        let file = File {
            format_version: FORMAT_VERSION,
            tol: analysis.config.tol,
            results: analysis.config.diagnostics.iter().zip(&report.diagnostics).map(|(request, (_, result))| Entry { request, result }).collect(),
        };
        let path = out_dir.join("diagnostics.json");
        write_json(&path, &file)?;
        report.artifacts.push(path);
    }
    if stages.nesting && (!analysis.config.nesting.is_empty() || !analysis.config.projection.is_empty()) {
        for request in &analysis.config.nesting {
            report.nesting.push(analysis.nesting(request)?);
        }
        for period in &analysis.config.projection {
            report.projection.push((period.clone(), analysis.projection(period)?));
        }
        #[derive(Serialize)]
        struct File<'a> {
            format_version: u32,
            recursion: &'a [NestingResult],
            projection: Vec<ProjectionEntry<'a>>,
        }
        #[derive(Serialize)]
        struct ProjectionEntry<'a> {
            period: &'a str,
            report: &'a ProjectionReport,
        }
        let file = File {
            format_version: FORMAT_VERSION,
            recursion: &report.nesting,
            projection: report.projection.iter().map(|(period, report)| ProjectionEntry { period, report }).collect(),
        };
        let path = out_dir.join("nesting.json");
        write_json(&path, &file)?;
        report.artifacts.push(path);
    }
    Ok(report)
}

/// Plain-text table of diagnostic verdicts.
pub fn render_diagnostics(results: &[(String, DiagnosticResult)]) -> String {
    let mut out = format!("{:<44} {:<28} {:<6} {:>14}  {}\n", "request", "condition", "holds", "discrepancy", "witness");
    let line = |out: &mut String, label: &str, v: &ConfoundingVerdict| {
        out.push_str(&format!(
            "{:<44} {:<28} {:<6} {:>14.6e}  {}\n",
            label,
            v.condition.code(),
            v.holds,
            v.max_discrepancy,
            v.witness.as_deref().unwrap_or("-")
        ));
    };
    for (label, result) in results {
        match result {
            DiagnosticResult::Verdict(v) => line(&mut out, label, v),
            DiagnosticResult::Demo(d) => {
                line(&mut out, label, &d.eq8);
                line(&mut out, label, &d.eq12);
                line(&mut out, label, &d.eq13);
                out.push_str(&format!("  {}\n", d.summary));
            }
        }
    }
    out
}
