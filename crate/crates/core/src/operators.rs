//! Standardization operators: general (weighted over E2†), SCA, SCC and
//! SONC families.
//!
//! Each operator is evaluated for a whole E1 cross-product in one pass over
//! the cell grid ([`rate_table`]); the single-stratum functions pick one entry
//! from that table.

use serde::{Deserialize, Serialize};

use crate::dist::EmpiricalJoint;
use crate::error::{Error, RateError, Result};
use crate::scalar::Scalar;
use crate::schema::{CovariateSchema, Factorization, StratumKey, VarSet};
use crate::weights::{SoncFamily, WeightMeasure};

/// What to do when a weight puts positive mass on a stratum with no
/// individuals in the period being standardized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmptyStratumPolicy {
    /// Fail with [`RateError::EmptyStratum`].
    #[default]
    Strict,
    /// Drop empty strata and renormalize the remaining weight.
    Renormalize,
    /// Treat the rate of an empty stratum as zero.
    Zero,
}

impl std::str::FromStr for EmptyStratumPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "strict" => Ok(Self::Strict),
            "renormalize" => Ok(Self::Renormalize),
            "zero" => Ok(Self::Zero),
            other => Err(Error::Spec(format!("unknown empty-stratum policy `{other}`"))),
        }
    }
}

impl std::fmt::Display for EmptyStratumPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Strict => "strict",
            Self::Renormalize => "renormalize",
            Self::Zero => "zero",
        })
    }
}

/// A standardized rate plus the share of weight that fell on empty strata
/// (dropped under `Renormalize`, zero-filled under `Zero`, always zero under
/// `Strict`).
#[derive(Debug, Clone, PartialEq)]
pub struct Standardized<S> {
    pub rate: S,
    pub affected_mass: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateEntry<S> {
    pub key: StratumKey,
    pub result: Result<Standardized<S>, RateError>,
}

impl<S> RateEntry<S> {
    pub fn rate(&self) -> Option<&S> {
        self.result.as_ref().ok().map(|s| &s.rate)
    }

    pub fn is_defined(&self) -> bool {
        self.result.is_ok()
    }
}

/// Rates for every stratum of the E1 cross-product, in schema level order.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable<S = f64> {
    pub e1: VarSet,
    pub entries: Vec<RateEntry<S>>,
}

impl<S: Scalar> RateTable<S> {
    pub fn get(&self, schema: &CovariateSchema, key: &StratumKey) -> Option<&RateEntry<S>> {
        if key.vars() != self.e1 {
            return None;
        }
        self.entries.get(schema.sub_index(self.e1, key))
    }

    pub fn rate_at(&self, index: usize) -> Option<&S> {
        self.entries.get(index).and_then(|e| e.rate())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_f64(&self) -> RateTable<f64> {
        RateTable {
            e1: self.e1,
            entries: self
                .entries
                .iter()
                .map(|e| RateEntry {
                    key: e.key.clone(),
                    result: e.result.as_ref().map_err(Clone::clone).map(|s| Standardized {
                        rate: s.rate.as_f64(),
                        affected_mass: s.affected_mass.as_f64(),
                    }),
                })
                .collect(),
        }
    }
}

/// Operator choice for [`rate_table`].
#[derive(Debug, Clone)]
pub enum Method {
    /// Crude rates P^y(D | e1).
    Crude,
    /// Integrate P^y(D | e1, E2†) against an explicit measure over E2†.
    General { e2_dagger: WeightMeasure },
    /// Direct age standardization with P*(A), the age marginal of `weight`.
    Sca { age: usize, weight: WeightMeasure },
    /// SCA evaluated through the finest-crude rates (nested form).
    ScaExpanded { age: usize, weight: WeightMeasure },
    /// Finest-crude rates integrated against P*(E2 | E1) from a full P*(E).
    Scc { weight: WeightMeasure },
    /// Finest-crude rates integrated against a measure family F*(E1, E2).
    Sonc { family: SoncFamily },
}

#[derive(Debug, Clone)]
pub struct StandardizationSpec {
    pub factorization: Factorization,
    pub method: Method,
    pub policy: EmptyStratumPolicy,
}

impl StandardizationSpec {
    pub fn new(factorization: Factorization, method: Method, policy: EmptyStratumPolicy) -> Self {
        Self { factorization, method, policy }
    }
}

struct Accum<S> {
    num: S,
    mass: S,
    empty_mass: S,
    first_empty: Option<StratumKey>,
}

impl<S: Scalar> Accum<S> {
    fn new() -> Self {
        Self { num: S::zero(), mass: S::zero(), empty_mass: S::zero(), first_empty: None }
    }

    fn add(&mut self, rate: Option<S>, weight: S, stratum: impl FnOnce() -> StratumKey) {
        if weight.is_zero() {
            return;
        }
        match rate {
            Some(r) => {
                self.num = self.num.clone() + r * weight.clone();
                self.mass = self.mass.clone() + weight;
            }
            None => {
                self.empty_mass = self.empty_mass.clone() + weight;
                if self.first_empty.is_none() {
                    self.first_empty = Some(stratum());
                }
            }
        }
    }

    fn finish(
        self,
        policy: EmptyStratumPolicy,
        schema: &CovariateSchema,
        condition: &StratumKey,
    ) -> Result<Standardized<S>, RateError> {
        let total = self.mass.clone() + self.empty_mass.clone();
        if total.is_zero() {
            return Err(RateError::ZeroWeightMass { condition: schema.describe(condition) });
        }
        let empty_error = |k: &Option<StratumKey>| RateError::EmptyStratum {
            stratum: schema.describe(k.as_ref().unwrap_or(condition)),
        };
        match policy {
            EmptyStratumPolicy::Strict => {
                if self.first_empty.is_some() {
                    return Err(empty_error(&self.first_empty));
                }
                Ok(Standardized { rate: self.num / total, affected_mass: S::zero() })
            }
            EmptyStratumPolicy::Renormalize => {
                if self.mass.is_zero() {
                    return Err(empty_error(&self.first_empty));
                }
                Ok(Standardized { rate: self.num / self.mass, affected_mass: self.empty_mass / total })
            }
            EmptyStratumPolicy::Zero => {
                Ok(Standardized { rate: self.num / total.clone(), affected_mass: self.empty_mass / total })
            }
        }
    }
}

fn check_schema(dist: &EmpiricalJoint, other: &CovariateSchema, what: &str) -> Result<()> {
    if **dist.schema() != *other {
        return Err(Error::SchemaMismatch(format!("{what} was built for a different schema")));
    }
    Ok(())
}

fn finish_all<S: Scalar>(
    schema: &CovariateSchema,
    e1: VarSet,
    accums: Vec<Accum<S>>,
    policy: EmptyStratumPolicy,
) -> RateTable<S> {
    let entries = accums
        .into_iter()
        .enumerate()
        .map(|(i, acc)| {
            let key = schema.key_at(e1, i);
            let result = acc.finish(policy, schema, &key);
            RateEntry { key, result }
        })
        .collect();
    RateTable { e1, entries }
}

fn crude_table<S: Scalar>(dist: &EmpiricalJoint, e1: VarSet) -> RateTable<S> {
    let schema = dist.schema();
    let margin = dist.margin(e1);
    let entries = (0..margin.totals.len())
        .map(|i| {
            let key = schema.key_at(e1, i);
            let result = if margin.totals[i] == 0 {
                Err(RateError::UndefinedRate { condition: schema.describe(&key) })
            } else {
                Ok(Standardized { rate: S::ratio(margin.cases[i], margin.totals[i]), affected_mass: S::zero() })
            };
            RateEntry { key, result }
        })
        .collect();
    RateTable { e1, entries }
}

/// Σ_{e2†} P^y(D | e1, e2†) · P*(e2†) for every e1.
fn general_table<S: Scalar>(
    dist: &EmpiricalJoint,
    e1: VarSet,
    e2_dagger: &WeightMeasure,
    policy: EmptyStratumPolicy,
) -> Result<RateTable<S>> {
    check_schema(dist, e2_dagger.schema(), "E2† weight")?;
    let scope = e2_dagger.scope();
    if !scope.intersection(e1).is_empty() {
        return Err(Error::Spec("E2† overlaps the conditioning set".into()));
    }
    let schema = dist.schema();
    let joint = e1.union(scope);
    let margin = dist.margin(joint);
    let mut accums: Vec<Accum<S>> = (0..schema.sub_cells(e1)).map(|_| Accum::new()).collect();
    for (j, (&c, &n)) in margin.cases.iter().zip(&margin.totals).enumerate() {
        let key = schema.key_at(joint, j);
        let w_idx = schema.sub_index(scope, &key);
        let weight = S::from_mass(&e2_dagger.masses()[w_idx], e2_dagger.approx()[w_idx]);
        let rate = (n > 0).then(|| S::ratio(c, n));
        accums[schema.sub_index(e1, &key)].add(rate, weight, || key.clone());
    }
    Ok(finish_all(schema, e1, accums, policy))
}

fn age_marginal(age: usize, weight: &WeightMeasure, e1: VarSet) -> Result<WeightMeasure> {
    if e1.contains(age) {
        return Err(Error::Spec("SCA conditions on E1 \\ A; the age covariate must not be in E1".into()));
    }
    if !weight.scope().contains(age) {
        return Err(Error::Weight("SCA weight does not cover the age covariate".into()));
    }
    weight.marginal(VarSet::single(age))
}

/// Σ_a P*(a) Σ_{e2a} P^y(D | e1a, e2a, a) · P^y(e2a | e1a, a): SCA written
/// through finest-crude rates.
fn sca_expanded_table<S: Scalar>(
    dist: &EmpiricalJoint,
    e1: VarSet,
    age: usize,
    weight: &WeightMeasure,
    policy: EmptyStratumPolicy,
) -> Result<RateTable<S>> {
    check_schema(dist, weight.schema(), "SCA weight")?;
    let p_age = age_marginal(age, weight, e1)?;
    let schema = dist.schema();
    let outer = e1.with(age);
    let outer_margin = dist.margin(outer);
    let proj = schema.projection(outer);
    // inner[e1a, a] = Σ_{e2a} P(D | cell) · P(e2a | e1a, a)
    let mut inner: Vec<S> = vec![S::zero(); outer_margin.totals.len()];
    for (cell, &o) in proj.iter().enumerate() {
        let n = dist.totals()[cell];
        if n == 0 {
            continue;
        }
        let finest = S::ratio(dist.cases()[cell], n);
        let cond = S::ratio(n, outer_margin.totals[o]);
        inner[o] = inner[o].clone() + finest * cond;
    }
    let mut accums: Vec<Accum<S>> = (0..schema.sub_cells(e1)).map(|_| Accum::new()).collect();
    for (o, value) in inner.into_iter().enumerate() {
        let key = schema.key_at(outer, o);
        let a = key.level(age).expect("outer contains age") as usize;
        let weight = S::from_mass(&p_age.masses()[a], p_age.approx()[a]);
        let rate = (outer_margin.totals[o] > 0).then_some(value);
        accums[schema.sub_index(e1, &key)].add(rate, weight, || key.clone());
    }
    Ok(finish_all(schema, e1, accums, policy))
}

/// Σ_{e2} P^y(D | e1, e2) · P*(e2 | e1), with the conditional taken from a
/// full P*(E).
fn scc_table<S: Scalar>(
    dist: &EmpiricalJoint,
    e1: VarSet,
    weight: &WeightMeasure,
    policy: EmptyStratumPolicy,
) -> Result<RateTable<S>> {
    check_schema(dist, weight.schema(), "SCC weight")?;
    weight.require_full("SCC")?;
    let schema = dist.schema();
    let proj = schema.projection(e1);
    let all = schema.all_factors();
    let mut accums: Vec<Accum<S>> = (0..schema.sub_cells(e1)).map(|_| Accum::new()).collect();
    for cell in 0..schema.n_cells() {
        let w = S::from_mass(&weight.masses()[cell], weight.approx()[cell]);
        accums[proj[cell]].add(dist.cell_rate(cell), w, || schema.cell_key(cell, all));
    }
    Ok(finish_all(schema, e1, accums, policy))
}

fn sonc_table<S: Scalar>(
    dist: &EmpiricalJoint,
    family: &SoncFamily,
    factorization: Factorization,
    policy: EmptyStratumPolicy,
) -> Result<RateTable<S>> {
    check_schema(dist, family.schema(), "SONC family")?;
    if family.factorization() != factorization {
        return Err(Error::Spec("SONC family was built for a different factorization".into()));
    }
    let schema = dist.schema();
    let (e1, e2) = (factorization.e1(), factorization.e2());
    let p1 = schema.projection(e1);
    let p2 = schema.projection(e2);
    let all = schema.all_factors();
    let mut accums: Vec<Accum<S>> = (0..schema.sub_cells(e1)).map(|_| Accum::new()).collect();
    for cell in 0..schema.n_cells() {
        let (i, j) = (p1[cell], p2[cell]);
        let (Some(exact), Some(approx)) = (family.measure(i), family.measure_approx(i)) else {
            continue;
        };
        let w = S::from_mass(&exact[j], approx[j]);
        accums[i].add(dist.cell_rate(cell), w, || schema.cell_key(cell, all));
    }
    Ok(finish_all(schema, e1, accums, policy))
}

/// Applies the chosen operator to every stratum of the E1 cross-product.
/// Undefined entries carry their error; none are skipped.
pub fn rate_table<S: Scalar>(dist: &EmpiricalJoint, spec: &StandardizationSpec) -> Result<RateTable<S>> {
    let e1 = spec.factorization.e1();
    match &spec.method {
        Method::Crude => Ok(crude_table(dist, e1)),
        Method::General { e2_dagger } => general_table(dist, e1, e2_dagger, spec.policy),
        Method::Sca { age, weight } => {
            check_schema(dist, weight.schema(), "SCA weight")?;
            let p_age = age_marginal(*age, weight, e1)?;
            general_table(dist, e1, &p_age, spec.policy)
        }
        Method::ScaExpanded { age, weight } => sca_expanded_table(dist, e1, *age, weight, spec.policy),
        Method::Scc { weight } => scc_table(dist, e1, weight, spec.policy),
        Method::Sonc { family } => sonc_table(dist, family, spec.factorization, spec.policy),
    }
}

fn single<S: Scalar>(table: RateTable<S>, schema: &CovariateSchema, key: &StratumKey) -> Result<Standardized<S>> {
    let idx = schema.sub_index(table.e1, key);
    let entry = table.entries.into_iter().nth(idx).expect("key inside the E1 grid");
    Ok(entry.result?)
}

/// Standardized rate for stratum `e1` with an explicit measure over E2†.
/// With an empty E2† this is the crude rate of `e1`.
pub fn standardize_general<S: Scalar>(
    dist: &EmpiricalJoint,
    e1: &StratumKey,
    e2_dagger: &WeightMeasure,
    policy: EmptyStratumPolicy,
) -> Result<Standardized<S>> {
    let table = general_table(dist, e1.vars(), e2_dagger, policy)?;
    single(table, dist.schema(), e1)
}

/// Direct age standardization: Σ_a P^y(D | e1a, a) · P*(a).
pub fn sca<S: Scalar>(
    dist: &EmpiricalJoint,
    age: usize,
    weight: &WeightMeasure,
    e1a: &StratumKey,
    policy: EmptyStratumPolicy,
) -> Result<Standardized<S>> {
    check_schema(dist, weight.schema(), "SCA weight")?;
    let p_age = age_marginal(age, weight, e1a.vars())?;
    let table = general_table(dist, e1a.vars(), &p_age, policy)?;
    single(table, dist.schema(), e1a)
}

/// SCA evaluated as a double integral over finest-crude rates. Equal to
/// [`sca`] on every input; kept as an independent evaluation route.
pub fn sca_expanded<S: Scalar>(
    dist: &EmpiricalJoint,
    age: usize,
    weight: &WeightMeasure,
    e1a: &StratumKey,
    policy: EmptyStratumPolicy,
) -> Result<Standardized<S>> {
    let table = sca_expanded_table(dist, e1a.vars(), age, weight, policy)?;
    single(table, dist.schema(), e1a)
}

/// Standardization controlling for covariates: finest-crude rates averaged
/// over P*(E2 | e1). The factorization is implied by `e1`'s covariates.
pub fn scc<S: Scalar>(
    dist: &EmpiricalJoint,
    weight: &WeightMeasure,
    e1: &StratumKey,
    policy: EmptyStratumPolicy,
) -> Result<Standardized<S>> {
    let table = scc_table(dist, e1.vars(), weight, policy)?;
    single(table, dist.schema(), e1)
}

pub fn sonc_apply<S: Scalar>(
    dist: &EmpiricalJoint,
    family: &SoncFamily,
    e1: &StratumKey,
    policy: EmptyStratumPolicy,
) -> Result<Standardized<S>> {
    let factorization = family.factorization();
    if e1.vars() != factorization.e1() {
        return Err(Error::Spec("stratum does not match the family's E1".into()));
    }
    let table = sonc_table(dist, family, factorization, policy)?;
    single(table, dist.schema(), e1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::build_from_counts;
    use crate::scalar::parse_rational;
    use crate::schema::Column;
    use num_rational::BigRational;
    use std::sync::Arc;

    fn schema() -> Arc<CovariateSchema> {
        CovariateSchema::risk_factors_only(vec![
            Column { name: "sex".into(), levels: vec!["M".into(), "F".into()] },
            Column { name: "age".into(), levels: vec!["young".into(), "old".into()] },
        ])
        .unwrap()
    }

    fn table(s: &Arc<CovariateSchema>, counts: [(u64, u64); 4]) -> EmpiricalJoint {
        let rows = counts.iter().enumerate().map(|(cell, &(c, n))| (s.key_at(s.all_factors(), cell), c, n));
        build_from_counts(rows, s.clone(), "y").unwrap()
    }

    /// {(M,young):(10,100),(M,old):(30,100),(F,young):(10,200),(F,old):(20,100)}
    fn toy() -> EmpiricalJoint {
        table(&schema(), [(10, 100), (30, 100), (10, 200), (20, 100)])
    }

    fn q(s: &str) -> BigRational {
        parse_rational(s).unwrap()
    }

    fn age_weight(s: &Arc<CovariateSchema>, young: &str, old: &str) -> WeightMeasure {
        WeightMeasure::from_masses(s.clone(), s.vars(&["age"]).unwrap(), vec![q(young), q(old)]).unwrap()
    }

    const STRICT: EmptyStratumPolicy = EmptyStratumPolicy::Strict;

    #[test]
    fn general_with_empty_dagger_is_crude() {
        let d = toy();
        let s = d.schema().clone();
        let m = s.key(&[("sex", "M")]).unwrap();
        let w = WeightMeasure::uniform(s.clone(), VarSet::EMPTY);
        let r: f64 = standardize_general(&d, &m, &w, STRICT).unwrap().rate;
        assert_eq!(r, d.crude_rate(&m).unwrap());
    }

    #[test]
    fn general_weighted_sum() {
        let d = toy();
        let s = d.schema().clone();
        let m = s.key(&[("sex", "M")]).unwrap();
        let r: BigRational = standardize_general(&d, &m, &age_weight(&s, "0.75", "0.25"), STRICT).unwrap().rate;
        assert_eq!(r, q("0.15"));
        let r: BigRational = standardize_general(&d, &m, &age_weight(&s, "0.5", "0.5"), STRICT).unwrap().rate;
        assert_eq!(r, q("0.20"));
    }

    #[test]
    fn sca_hand_values() {
        let d = toy();
        let s = d.schema().clone();
        let age = s.factor("age").unwrap();
        let w = age_weight(&s, "0.5", "0.5");
        let m = s.key(&[("sex", "M")]).unwrap();
        let f = s.key(&[("sex", "F")]).unwrap();
        assert_eq!(sca::<BigRational>(&d, age, &w, &m, STRICT).unwrap().rate, q("0.20"));
        assert_eq!(sca::<BigRational>(&d, age, &w, &f, STRICT).unwrap().rate, q("0.125"));
        assert_eq!(sca_expanded::<BigRational>(&d, age, &w, &f, STRICT).unwrap().rate, q("0.125"));
    }

    #[test]
    fn sca_point_mass_is_crude_cell() {
        let d = toy();
        let s = d.schema().clone();
        let age = s.factor("age").unwrap();
        let old = s.key(&[("age", "old")]).unwrap();
        let w = WeightMeasure::point_mass(s.clone(), &old);
        let f = s.key(&[("sex", "F")]).unwrap();
        let r: f64 = sca(&d, age, &w, &f, STRICT).unwrap().rate;
        assert_eq!(r, d.crude_rate(&f.join(&old)).unwrap());
    }

    #[test]
    fn sca_rejects_age_in_e1() {
        let d = toy();
        let s = d.schema().clone();
        let age = s.factor("age").unwrap();
        let k = s.key(&[("age", "old")]).unwrap();
        assert!(sca::<f64>(&d, age, &age_weight(&s, "0.5", "0.5"), &k, STRICT).is_err());
    }

    #[test]
    fn scc_self_weighting_and_external_weight() {
        let d = toy();
        let s = d.schema().clone();
        let emp = WeightMeasure::empirical(&d).unwrap();
        for fact in Factorization::all(&s) {
            for i in 0..s.sub_cells(fact.e1()) {
                let key = s.key_at(fact.e1(), i);
                let r: BigRational = scc(&d, &emp, &key, STRICT).unwrap().rate;
                assert_eq!(r, d.crude_rate_in::<BigRational>(&key).unwrap());
            }
        }
        // P*(age | M) = (0.25, 0.75)
        let other = table(&s, [(0, 25), (0, 75), (0, 50), (0, 50)]);
        let w = WeightMeasure::empirical(&other).unwrap();
        let m = s.key(&[("sex", "M")]).unwrap();
        assert_eq!(scc::<BigRational>(&d, &w, &m, STRICT).unwrap().rate, q("0.25"));
        // E1 = ∅: Σ_e P(D|e) P*(e)
        let all: BigRational = scc(&d, &w, &StratumKey::empty(), STRICT).unwrap().rate;
        let expected = q("0.10") * q("0.125") + q("0.30") * q("0.375") + q("0.05") * q("0.25") + q("0.20") * q("0.25");
        assert_eq!(all, expected);
    }

    #[test]
    fn scc_zero_weight_on_condition() {
        let d = toy();
        let s = d.schema().clone();
        let w = WeightMeasure::empirical(&table(&s, [(0, 1), (0, 1), (0, 0), (0, 0)])).unwrap();
        let f = s.key(&[("sex", "F")]).unwrap();
        let err = scc::<f64>(&d, &w, &f, STRICT).unwrap_err();
        assert!(matches!(err, Error::Rate(RateError::ZeroWeightMass { .. })), "{err}");
    }

    #[test]
    fn empty_stratum_policies() {
        let s = schema();
        // (F, old) empty in the data.
        let d = table(&s, [(10, 100), (30, 100), (10, 200), (0, 0)]);
        let w = WeightMeasure::uniform(s.clone(), s.all_factors());
        let f = s.key(&[("sex", "F")]).unwrap();
        let strict = scc::<BigRational>(&d, &w, &f, EmptyStratumPolicy::Strict).unwrap_err();
        assert!(strict.to_string().contains("sex=F,age=old"), "{strict}");
        let renorm = scc::<BigRational>(&d, &w, &f, EmptyStratumPolicy::Renormalize).unwrap();
        assert_eq!(renorm.rate, q("0.05"));
        assert_eq!(renorm.affected_mass, q("0.5"));
        let zero = scc::<BigRational>(&d, &w, &f, EmptyStratumPolicy::Zero).unwrap();
        assert_eq!(zero.rate, q("0.025"));
        assert_eq!(zero.affected_mass, q("0.5"));
        // Zero weight on the empty stratum is not an error.
        let w2 = WeightMeasure::empirical(&d).unwrap();
        assert!(scc::<f64>(&d, &w2, &f, EmptyStratumPolicy::Strict).is_ok());
    }

    #[test]
    fn sonc_family_matches_scc_and_crude() {
        let d = toy();
        let s = d.schema().clone();
        let fact = Factorization::from_names(&s, &["sex"]).unwrap();
        let other = table(&s, [(0, 25), (0, 75), (0, 50), (0, 50)]);
        let w = WeightMeasure::empirical(&other).unwrap();
        let induced = SoncFamily::induced(&w, fact).unwrap();
        let emp = SoncFamily::empirical_conditional(&d, fact).unwrap();
        for i in 0..2 {
            let key = s.key_at(fact.e1(), i);
            let a: BigRational = sonc_apply(&d, &induced, &key, STRICT).unwrap().rate;
            let b: BigRational = scc(&d, &w, &key, STRICT).unwrap().rate;
            assert_eq!(a, b);
            let c: BigRational = sonc_apply(&d, &emp, &key, STRICT).unwrap().rate;
            assert_eq!(c, d.crude_rate_in(&key).unwrap());
        }
        // Non-product family: M -> (0.9, 0.1), F -> (0.2, 0.8)
        let fam = SoncFamily::new(
            s.clone(),
            fact,
            vec![Some(vec![q("0.9"), q("0.1")]), Some(vec![q("0.2"), q("0.8")])],
        )
        .unwrap();
        let m: BigRational = sonc_apply(&d, &fam, &s.key(&[("sex", "M")]).unwrap(), STRICT).unwrap().rate;
        let f: BigRational = sonc_apply(&d, &fam, &s.key(&[("sex", "F")]).unwrap(), STRICT).unwrap().rate;
        assert_eq!(m, q("0.9") * q("0.1") + q("0.1") * q("0.3"));
        assert_eq!(f, q("0.2") * q("0.05") + q("0.8") * q("0.2"));
    }

    #[test]
    fn rate_table_shapes() {
        let d = toy();
        let s = d.schema().clone();
        let emp = WeightMeasure::empirical(&d).unwrap();
        let spec = |names: &[&str]| {
            StandardizationSpec::new(
                Factorization::from_names(&s, names).unwrap(),
                Method::Scc { weight: emp.clone() },
                STRICT,
            )
        };
        let by_sex: RateTable = rate_table(&d, &spec(&["sex"])).unwrap();
        assert_eq!(by_sex.len(), 2);
        assert_eq!(by_sex.entries[0].key, s.key(&[("sex", "M")]).unwrap());
        let m: f64 = scc(&d, &emp, &s.key(&[("sex", "M")]).unwrap(), STRICT).unwrap().rate;
        assert_eq!(by_sex.rate_at(0), Some(&m));
        let marginal: RateTable = rate_table(&d, &spec(&[])).unwrap();
        assert_eq!(marginal.len(), 1);
        let finest: RateTable<BigRational> = rate_table(&d, &spec(&["sex", "age"])).unwrap();
        for cell in 0..4 {
            assert_eq!(finest.rate_at(cell), d.cell_rate::<BigRational>(cell).as_ref());
        }
    }

    #[test]
    fn rate_table_marks_undefined_entries() {
        let s = schema();
        let d = table(&s, [(10, 100), (30, 100), (0, 0), (0, 0)]);
        let spec = StandardizationSpec::new(Factorization::from_names(&s, &["sex"]).unwrap(), Method::Crude, STRICT);
        let t: RateTable = rate_table(&d, &spec).unwrap();
        assert!(t.entries[0].is_defined());
        assert_eq!(
            t.entries[1].result,
            Err(RateError::UndefinedRate { condition: "sex=F".into() })
        );
    }
}
