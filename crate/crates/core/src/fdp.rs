//! Fundamental disease probability models with one unmeasured covariate U:
//! marginalization to finest-crude rates, synthetic registry generation,
//! marginal SCC rates and the falsification logic for the identical disease
//! probability (IDP) and comparable confounding (CC) assumptions.

use std::sync::Arc;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::EmpiricalJoint;
use crate::error::{Error, Result};
use crate::operators::{scc, EmptyStratumPolicy, RateEntry, RateTable, Standardized};
use crate::scalar::{parse_rational, rational_to_f64, round_half_even};
use crate::schema::{Column, CovariateSchema, StratumKey};
use crate::weights::WeightMeasure;

/// Name of the sampling generator recorded in emitted metadata. Sampling is
/// ChaCha8 seeded with `seed_from_u64(seed)`, one stream per full-E stratum
/// (stream number = stratum index), drawing U then D per person from
/// uniform f64 values in [0, 1).
pub const GENERATOR_NAME: &str = "chacha8-v1";

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Conditional tables must sum to one within this tolerance before exact
/// renormalization.
pub const MODEL_NORMALIZATION_TOL: f64 = 1e-12;

/// The three probability tables of one period, indexed by full-E cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FdpPeriod {
    /// P^y(E)
    pub cov_dist: Vec<BigRational>,
    /// P^y(U | e), one row per cell.
    pub u_given_e: Vec<Vec<BigRational>>,
    /// P^y(D = 1 | e, u), one row per cell.
    pub d_given_eu: Vec<Vec<BigRational>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdpModel {
    schema: Arc<CovariateSchema>,
    u_levels: Vec<String>,
    periods: Vec<(String, FdpPeriod)>,
}

fn normalize_row(row: &mut [BigRational], what: &str) -> Result<()> {
    if row.iter().any(|p| p.is_negative()) {
        return Err(Error::Model(format!("{what} has a negative probability")));
    }
    let total: BigRational = row.iter().cloned().sum();
    if (rational_to_f64(&total) - 1.0).abs() > MODEL_NORMALIZATION_TOL || total.is_zero() {
        return Err(Error::Model(format!("{what} sums to {}, not 1", rational_to_f64(&total))));
    }
    for p in row.iter_mut() {
        *p = &*p / &total;
    }
    Ok(())
}

impl FdpModel {
    /// Validates the tables against the schema and renormalizes each
    /// conditional exactly.
    pub fn new(schema: Arc<CovariateSchema>, u_levels: Vec<String>, periods: Vec<(String, FdpPeriod)>) -> Result<Self> {
        if u_levels.is_empty() {
            return Err(Error::Model("U needs at least one level".into()));
        }
        if periods.is_empty() {
            return Err(Error::Model("model declares no periods".into()));
        }
        let n = schema.n_cells();
        let k = u_levels.len();
        let all = schema.all_factors();
        let mut validated = Vec::with_capacity(periods.len());
        for (name, mut p) in periods {
            if validated.iter().any(|(v, _): &(String, FdpPeriod)| *v == name) {
                return Err(Error::Model(format!("duplicate period `{name}`")));
            }
            if p.cov_dist.len() != n || p.u_given_e.len() != n || p.d_given_eu.len() != n {
                return Err(Error::Model(format!("period `{name}`: tables must have {n} strata")));
            }
            normalize_row(&mut p.cov_dist, &format!("period `{name}` cov_dist"))?;
            for cell in 0..n {
                let at = || format!("period `{name}` stratum {}", schema.describe(&schema.key_at(all, cell)));
                if p.u_given_e[cell].len() != k || p.d_given_eu[cell].len() != k {
                    return Err(Error::Model(format!("{}: expected {k} U levels", at())));
                }
                normalize_row(&mut p.u_given_e[cell], &format!("{} u_given_e", at()))?;
                if p.d_given_eu[cell].iter().any(|d| d.is_negative() || *d > BigRational::one()) {
                    return Err(Error::Model(format!("{}: d_given_eu outside [0, 1]", at())));
                }
            }
            validated.push((name, p));
        }
        Ok(Self { schema, u_levels, periods: validated })
    }

    pub fn schema(&self) -> &Arc<CovariateSchema> {
        &self.schema
    }

    pub fn u_levels(&self) -> &[String] {
        &self.u_levels
    }

    pub fn period_names(&self) -> impl Iterator<Item = &str> {
        self.periods.iter().map(|(n, _)| n.as_str())
    }

    pub fn period(&self, name: &str) -> Result<&FdpPeriod> {
        self.periods
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p)
            .ok_or_else(|| Error::Model(format!("unknown period `{name}`")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Model(format!("unsupported format_version {}", file.format_version)));
        }
        let names: Vec<String> = file.columns.iter().map(|c| c.name.clone()).collect();
        let schema = Arc::new(CovariateSchema::new(file.columns, &names)?);
        let all = schema.all_factors();
        let n = schema.n_cells();
        let mut periods = Vec::new();
        for p in file.periods {
            let mut seen = vec![false; n];
            let mut cov = vec![BigRational::zero(); n];
            let mut u = vec![Vec::new(); n];
            let mut d = vec![Vec::new(); n];
            for cell in p.cells {
                let pairs: Vec<(&str, &str)> =
                    names.iter().map(String::as_str).zip(cell.levels.iter().map(String::as_str)).collect();
                if cell.levels.len() != names.len() {
                    return Err(Error::Model(format!("period `{}`: stratum {:?} needs {} levels", p.period, cell.levels, names.len())));
                }
                let key = schema.key(&pairs)?;
                let idx = schema.sub_index(all, &key);
                if std::mem::replace(&mut seen[idx], true) {
                    return Err(Error::DuplicateStratum(schema.describe(&key)));
                }
                cov[idx] = cell.cov.0;
                u[idx] = cell.u_given_e.into_iter().map(|x| x.0).collect();
                d[idx] = cell.d_given_eu.into_iter().map(|x| x.0).collect();
            }
            if let Some(missing) = seen.iter().position(|s| !s) {
                return Err(Error::Model(format!(
                    "period `{}`: stratum {} is missing",
                    p.period,
                    schema.describe(&schema.key_at(all, missing))
                )));
            }
            periods.push((p.period, FdpPeriod { cov_dist: cov, u_given_e: u, d_given_eu: d }));
        }
        Self::new(schema, file.u_levels, periods)
    }

    /// Canonical JSON form with exact rationals written as `"p/q"` strings.
    pub fn to_json(&self) -> String {
        let all = self.schema.all_factors();
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            columns: self.schema.columns().to_vec(),
            u_levels: self.u_levels.clone(),
            periods: self
                .periods
                .iter()
                .map(|(name, p)| PeriodFile {
                    period: name.clone(),
                    cells: (0..self.schema.n_cells())
                        .map(|cell| CellFile {
                            levels: self.schema.key_levels(&self.schema.key_at(all, cell)),
                            cov: Prob(p.cov_dist[cell].clone()),
                            u_given_e: p.u_given_e[cell].iter().cloned().map(Prob).collect(),
                            d_given_eu: p.d_given_eu[cell].iter().cloned().map(Prob).collect(),
                        })
                        .collect(),
                })
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&file).expect("model serializes");
        text.push('\n');
        text
    }
}

/// A probability written either as a JSON number or as a string such as
/// `"1/3"` or `"0.25"`. Numbers are read through their shortest decimal
/// form, so `0.1` means exactly 1/10.
#[derive(Debug, Clone)]
struct Prob(BigRational);

impl Serialize for Prob {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.0.to_string())
    }
}

impl<'de> Deserialize<'de> for Prob {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(d)?;
        let text = match &value {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Number(n) => n.to_string(),
            other => return Err(serde::de::Error::custom(format!("expected a probability, got {other}"))),
        };
        parse_rational(&text)
            .map(Prob)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid probability `{text}`")))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    columns: Vec<Column>,
    u_levels: Vec<String>,
    periods: Vec<PeriodFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PeriodFile {
    period: String,
    cells: Vec<CellFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CellFile {
    levels: Vec<String>,
    cov: Prob,
    u_given_e: Vec<Prob>,
    d_given_eu: Vec<Prob>,
}

fn mixture(u: &[BigRational], d: &[BigRational]) -> BigRational {
    u.iter().zip(d).map(|(p, q)| p * q).sum()
}

/// Exact finest-crude rates P^y(D | e) = Σ_u P^y(D | e, u) P^y(u | e).
pub fn fdp_marginalize(model: &FdpModel, period: &str) -> Result<RateTable<BigRational>> {
    let p = model.period(period)?;
    let schema = &model.schema;
    let all = schema.all_factors();
    let entries = (0..schema.n_cells())
        .map(|cell| RateEntry {
            key: schema.key_at(all, cell),
            result: Ok(Standardized {
                rate: mixture(&p.u_given_e[cell], &p.d_given_eu[cell]),
                affected_mass: BigRational::zero(),
            }),
        })
        .collect();
    Ok(RateTable { e1: all, entries })
}

/// Population sizes proportional to `cov_dist`: round-half-even of
/// `total · P^y(e)`, raised to 1 where the covariate mass is positive.
pub fn sizes_from_cov(model: &FdpModel, period: &str, total: u64) -> Result<Vec<u64>> {
    let p = model.period(period)?;
    p.cov_dist
        .iter()
        .map(|c| {
            if c.is_zero() {
                return Ok(0);
            }
            let n = round_half_even(&(c * BigRational::from_integer(BigInt::from(total))));
            n.to_u64().map(|n| n.max(1)).ok_or_else(|| Error::Overflow("sizing strata".into()))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenerationMode {
    Expected,
    Sampled { seed: u64 },
}

/// Exact expected case counts n_total · P^y(D | e) per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedCounts {
    pub cases: Vec<BigRational>,
    pub totals: Vec<u64>,
}

impl ExpectedCounts {
    /// CSV of the exact expectations: risk-factor columns, then n_cases as
    /// a reduced fraction and n_total, one row per cell in schema order.
    pub fn to_csv(&self, schema: &CovariateSchema) -> String {
        let mut out = schema.risk_factor_names().join(",");
        out.push_str(",n_cases,n_total\n");
        for (cell, (cases, total)) in self.cases.iter().zip(&self.totals).enumerate() {
            for (f, level) in schema.cell_levels(cell).into_iter().enumerate() {
                out.push_str(&schema.factor_levels(f)[level as usize]);
                out.push(',');
            }
            out.push_str(&format!("{cases},{total}\n"));
        }
        out
    }

    /// An integer joint holding the expected counts scaled by the least
    /// common multiple L of their denominators. Every stratum rate and every
    /// covariate proportion equals the exact expectation. Returns the joint
    /// and L.
    pub fn scaled_joint(&self, schema: &Arc<CovariateSchema>, period: &str) -> Result<(EmpiricalJoint, u64)> {
        let l = self.cases.iter().fold(BigInt::one(), |acc, c| acc.lcm(c.denom()));
        let overflow = || Error::Overflow("scaling expected counts".into());
        let l64 = l.to_u64().ok_or_else(overflow)?;
        let cases = self
            .cases
            .iter()
            .map(|c| (c * BigRational::from_integer(l.clone())).to_integer().to_u64().ok_or_else(overflow))
            .collect::<Result<Vec<u64>>>()?;
        let totals = self.totals.iter().map(|&n| n.checked_mul(l64).ok_or_else(overflow)).collect::<Result<Vec<u64>>>()?;
        Ok((EmpiricalJoint::from_cells(schema.clone(), period, cases, totals)?, l64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationMetadata {
    pub format_version: u32,
    pub model_period: String,
    pub mode: &'static str,
    pub generator: Option<&'static str>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    /// Integer counts: rounded expectations or sampled draws.
    pub joint: EmpiricalJoint,
    /// Present in expected mode.
    pub expected: Option<ExpectedCounts>,
    pub metadata: GenerationMetadata,
}

/// Index of the first cumulative bound above `x`; the last level absorbs
/// any rounding shortfall of the cumulative sum.
fn draw_level(cumulative: &[f64], x: f64) -> usize {
    cumulative.iter().position(|&c| x < c).unwrap_or(cumulative.len() - 1)
}

/// Synthetic counts for one period. `sizes` gives n_total per full-E
/// stratum and must be positive exactly where P^y(e) is positive.
pub fn fdp_generate(model: &FdpModel, period: &str, sizes: &[u64], mode: GenerationMode) -> Result<Generated> {
    let p = model.period(period)?;
    let schema = &model.schema;
    let all = schema.all_factors();
    if sizes.len() != schema.n_cells() {
        return Err(Error::Model(format!("expected {} population sizes, got {}", schema.n_cells(), sizes.len())));
    }
    for (cell, (&n, c)) in sizes.iter().zip(&p.cov_dist).enumerate() {
        if (n == 0) != c.is_zero() {
            return Err(Error::Model(format!(
                "population size {n} at stratum {} does not match covariate mass {}",
                schema.describe(&schema.key_at(all, cell)),
                c
            )));
        }
    }
    let rates = fdp_marginalize(model, period)?;
    let mut metadata = GenerationMetadata {
        format_version: MODEL_FORMAT_VERSION,
        model_period: period.to_string(),
        mode: "EXPECTED",
        generator: None,
        seed: None,
    };
    match mode {
        GenerationMode::Expected => {
            let expected: Vec<BigRational> = rates
                .entries
                .iter()
                .zip(sizes)
                .map(|(e, &n)| e.rate().expect("model rates are defined") * BigRational::from_integer(BigInt::from(n)))
                .collect();
            let cases = expected
                .iter()
                .map(|x| round_half_even(x).to_u64().ok_or_else(|| Error::Overflow("rounding cases".into())))
                .collect::<Result<Vec<u64>>>()?;
            let joint = EmpiricalJoint::from_cells(schema.clone(), period, cases, sizes.to_vec())?;
            Ok(Generated { joint, expected: Some(ExpectedCounts { cases: expected, totals: sizes.to_vec() }), metadata })
        }
        GenerationMode::Sampled { seed } => {
            let mut cases = vec![0u64; schema.n_cells()];
            for (cell, &n) in sizes.iter().enumerate() {
                if n == 0 {
                    continue;
                }
                let mut cumulative: Vec<f64> = Vec::with_capacity(model.u_levels.len());
                let mut acc = BigRational::zero();
                for pu in &p.u_given_e[cell] {
                    acc += pu;
                    cumulative.push(rational_to_f64(&acc));
                }
                let d: Vec<f64> = p.d_given_eu[cell].iter().map(rational_to_f64).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(cell as u64);
                for _ in 0..n {
                    let u = draw_level(&cumulative, rng.gen::<f64>());
                    if rng.gen::<f64>() < d[u] {
                        cases[cell] += 1;
                    }
                }
            }
            metadata.mode = "SAMPLED";
            metadata.generator = Some(GENERATOR_NAME);
            metadata.seed = Some(seed);
            let joint = EmpiricalJoint::from_cells(schema.clone(), period, cases, sizes.to_vec())?;
            Ok(Generated { joint, expected: None, metadata })
        }
    }
}

fn require_model_weight(schema: &CovariateSchema, weight: &WeightMeasure) -> Result<()> {
    if **weight.schema() != *schema {
        return Err(Error::SchemaMismatch("weight was built for a different schema".into()));
    }
    weight.require_full("the marginal SCC rate")
}

/// Marginal SCC rate ∫ P^y(D | e) dP*(e) with P^y(D | e) from the model.
pub fn scc_marginal_fdp(model: &FdpModel, period: &str, weight: &WeightMeasure) -> Result<BigRational> {
    require_model_weight(&model.schema, weight)?;
    let rates = fdp_marginalize(model, period)?;
    Ok(rates
        .entries
        .iter()
        .zip(weight.masses())
        .filter(|(_, w)| !w.is_zero())
        .map(|(e, w)| e.rate().expect("model rates are defined") * w)
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TriState {
    True,
    False,
    Unknown,
}

impl From<bool> for TriState {
    fn from(b: bool) -> Self {
        if b {
            TriState::True
        } else {
            TriState::False
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Inference {
    NoFalsification,
    IdpOrCcFalse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FalsifyMode {
    Model,
    Data,
}

/// Outcome of comparing marginal SCC rates of two periods.
///
/// In data mode both tri-states are `Unknown`: a difference can only show
/// that at least one assumption fails, and no difference confirms neither.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionVerdict {
    pub mode: FalsifyMode,
    pub periods: [String; 2],
    /// s_A − s_B, the difference of marginal SCC rates.
    pub difference: f64,
    pub tol: f64,
    pub idp_holds: TriState,
    pub cc_holds: TriState,
    pub inference: Inference,
    /// The inference agrees with the directly evaluated assumptions: a
    /// falsification is never reported while both hold, and both holding
    /// forces a zero difference.
    pub consistent: bool,
    #[serde(skip)]
    pub exact_difference: BigRational,
}

fn tolerance(tol: f64) -> Result<BigRational> {
    if !(tol >= 0.0 && tol.is_finite()) {
        return Err(Error::Spec(format!("tolerance {tol} must be finite and non-negative")));
    }
    Ok(BigRational::from_float(tol).expect("finite"))
}

fn infer(difference: &BigRational, tol: &BigRational) -> Inference {
    if difference.abs() > *tol {
        Inference::IdpOrCcFalse
    } else {
        Inference::NoFalsification
    }
}

/// Model mode: compares the marginal SCC rates of `a` and `b` and evaluates
/// IDP (equal P(D | e, u) on every cell) and CC (equal P(U | e) on every
/// stratum) directly on the tables.
pub fn falsify_models(
    a: (&FdpModel, &str),
    b: (&FdpModel, &str),
    weight: &WeightMeasure,
    tol: f64,
) -> Result<AssumptionVerdict> {
    let (ma, pa) = a;
    let (mb, pb) = b;
    if ma.schema != mb.schema || ma.u_levels != mb.u_levels {
        return Err(Error::SchemaMismatch("models differ in schema or U levels".into()));
    }
    let tol_q = tolerance(tol)?;
    let difference = scc_marginal_fdp(ma, pa, weight)? - scc_marginal_fdp(mb, pb, weight)?;
    let (ta, tb) = (ma.period(pa)?, mb.period(pb)?);
    let idp = ta.d_given_eu == tb.d_given_eu;
    let cc = ta.u_given_e == tb.u_given_e;
    let inference = infer(&difference, &tol_q);
    let consistent = !(idp && cc) || (difference.is_zero() && inference == Inference::NoFalsification);
    Ok(AssumptionVerdict {
        mode: FalsifyMode::Model,
        periods: [pa.to_string(), pb.to_string()],
        difference: rational_to_f64(&difference),
        tol,
        idp_holds: idp.into(),
        cc_holds: cc.into(),
        inference,
        consistent,
        exact_difference: difference,
    })
}

/// Data mode: compares marginal SCC rates of two observed periods. `tol`
/// has no default here because sampled data needs an explicit threshold.
pub fn falsify_data(
    a: &EmpiricalJoint,
    b: &EmpiricalJoint,
    weight: &WeightMeasure,
    tol: f64,
    policy: EmptyStratumPolicy,
) -> Result<AssumptionVerdict> {
    if **a.schema() != **b.schema() {
        return Err(Error::SchemaMismatch(format!("periods `{}` and `{}` use different schemas", a.period(), b.period())));
    }
    require_model_weight(a.schema(), weight)?;
    let tol_q = tolerance(tol)?;
    let marginal = |d: &EmpiricalJoint| -> Result<BigRational> {
        Ok(scc::<BigRational>(d, weight, &StratumKey::empty(), policy)
            .map_err(|e| e.in_stage(format!("period {}", d.period())))?
            .rate)
    };
    let difference = marginal(a)? - marginal(b)?;
    Ok(AssumptionVerdict {
        mode: FalsifyMode::Data,
        periods: [a.period().to_string(), b.period().to_string()],
        difference: rational_to_f64(&difference),
        tol,
        idp_holds: TriState::Unknown,
        cc_holds: TriState::Unknown,
        inference: infer(&difference, &tol_q),
        consistent: true,
        exact_difference: difference,
    })
}
