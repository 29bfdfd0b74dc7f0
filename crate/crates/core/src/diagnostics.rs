//! Between-period confounding conditions, SCA distortion and an end-to-end
//! confounding demonstration.
//!
//! Conditionals are compared as exact rationals. A tolerance of zero means
//! exact equality of the empirical distributions.

use num_rational::BigRational;
use num_traits::{Signed, Zero};
use serde::Serialize;

use crate::dist::EmpiricalJoint;
use crate::error::{Error, RateError, Result};
use crate::operators::{rate_table, EmptyStratumPolicy, Method, StandardizationSpec};
use crate::scalar::{rational_from_u64, rational_to_f64, Scalar};
use crate::schema::{CovariateSchema, Factorization, StratumKey, VarSet};
use crate::weights::WeightMeasure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Condition {
    /// P^{y1}(E2 | E1) = P^{y2}(E2 | E1)
    #[serde(rename = "EQ8_NO_E2_CONFOUNDING")]
    NoE2Confounding,
    /// P^{y1}(E2a | E1a, a) = P^{y2}(E2a | E1a, a)
    #[serde(rename = "EQ12_SCA_UNCONFOUNDED")]
    ScaUnconfounded,
    /// P^{y1}(Ea | a) = P^{y2}(Ea | a)
    #[serde(rename = "EQ13_SCA_ALL_FACTORIZATIONS")]
    ScaAllFactorizations,
    /// P*(Ea | A) = P^y(Ea | A) and P^y(Ea | A) = P^y(Ea)
    #[serde(rename = "EQ14_SCA_EQUALS_SCC")]
    ScaEqualsScc,
}

impl Condition {
    pub fn code(self) -> &'static str {
        match self {
            Condition::NoE2Confounding => "EQ8_NO_E2_CONFOUNDING",
            Condition::ScaUnconfounded => "EQ12_SCA_UNCONFOUNDED",
            Condition::ScaAllFactorizations => "EQ13_SCA_ALL_FACTORIZATIONS",
            Condition::ScaEqualsScc => "EQ14_SCA_EQUALS_SCC",
        }
    }
}

/// Outcome of one condition check.
///
/// `holds` is true exactly when `max_discrepancy <= tol`. A conditioning
/// stratum that is populated on one side only is listed in
/// `undefined_strata` and counts as a discrepancy of 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfoundingVerdict {
    pub condition: Condition,
    pub holds: bool,
    pub max_discrepancy: f64,
    pub witness: Option<String>,
    pub undefined_strata: Vec<String>,
    /// Realized max |SCA − SCC|, reported by the SCA = SCC check only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sca_scc_gap: Option<f64>,
    #[serde(skip)]
    pub exact_discrepancy: BigRational,
}

/// Conditional distribution P(target | cond) from full-grid masses, indexed
/// by the cond sub-grid; `None` where the conditioning stratum has no mass.
fn conditional_table(
    schema: &CovariateSchema,
    masses: &[BigRational],
    cond: VarSet,
    target: VarSet,
) -> Vec<Option<Vec<BigRational>>> {
    let pc = schema.projection(cond);
    let pt = schema.projection(target);
    let nt = schema.sub_cells(target);
    let mut joint = vec![vec![BigRational::zero(); nt]; schema.sub_cells(cond)];
    for (cell, m) in masses.iter().enumerate() {
        if !m.is_zero() {
            joint[pc[cell]][pt[cell]] += m;
        }
    }
    joint
        .into_iter()
        .map(|mut row| {
            let total: BigRational = row.iter().cloned().sum();
            if total.is_zero() {
                None
            } else {
                row.iter_mut().for_each(|x| *x = &*x / &total);
                Some(row)
            }
        })
        .collect()
}

fn count_masses(dist: &EmpiricalJoint) -> Vec<BigRational> {
    dist.totals().iter().map(|&n| rational_from_u64(n, 1)).collect()
}

#[derive(Default)]
struct Tracker {
    max: BigRational,
    witness: Option<StratumKey>,
    undefined: Vec<StratumKey>,
}

impl Tracker {
    fn observe(&mut self, gap: BigRational, at: impl FnOnce() -> StratumKey) {
        if gap > self.max {
            self.max = gap;
            self.witness = Some(at());
        }
    }

    fn undefined(&mut self, key: StratumKey) {
        self.observe(rational_from_u64(1, 1), || key.clone());
        self.undefined.push(key);
    }

    /// Compares two conditional tables row by row. `row_b` maps a row of the
    /// first table to the row of the second it is compared with.
    fn compare_tables(
        &mut self,
        schema: &CovariateSchema,
        cond: VarSet,
        target: VarSet,
        a: &[Option<Vec<BigRational>>],
        b: &[Option<Vec<BigRational>>],
        row_b: impl Fn(usize) -> usize,
    ) {
        for (i, row_a) in a.iter().enumerate() {
            let cond_key = schema.key_at(cond, i);
            match (row_a, &b[row_b(i)]) {
                (None, None) => {}
                (Some(_), None) | (None, Some(_)) => self.undefined(cond_key),
                (Some(ra), Some(rb)) => {
                    for (j, (x, y)) in ra.iter().zip(rb).enumerate() {
                        let gap = (x - y).abs();
                        self.observe(gap, || cond_key.join(&schema.key_at(target, j)));
                    }
                }
            }
        }
    }

    fn verdict(self, schema: &CovariateSchema, condition: Condition, tol: &BigRational) -> ConfoundingVerdict {
        let holds = self.undefined.is_empty() && self.max <= *tol;
        ConfoundingVerdict {
            condition,
            holds,
            max_discrepancy: rational_to_f64(&self.max),
            witness: self.witness.as_ref().map(|k| schema.describe(k)),
            undefined_strata: self.undefined.iter().map(|k| schema.describe(k)).collect(),
            sca_scc_gap: None,
            exact_discrepancy: self.max,
        }
    }
}

fn tolerance(tol: f64) -> Result<BigRational> {
    if !(0.0..1.0).contains(&tol) {
        return Err(Error::Spec(format!("tolerance {tol} must lie in [0, 1)")));
    }
    BigRational::from_float(tol).ok_or_else(|| Error::Spec("tolerance is not finite".into()))
}

fn same_schema(a: &EmpiricalJoint, b: &EmpiricalJoint) -> Result<()> {
    if **a.schema() != **b.schema() {
        return Err(Error::SchemaMismatch(format!(
            "periods `{}` and `{}` use different schemas",
            a.period(),
            b.period()
        )));
    }
    Ok(())
}

fn compare_periods(
    a: &EmpiricalJoint,
    b: &EmpiricalJoint,
    cond: VarSet,
    target: VarSet,
    condition: Condition,
    tol: f64,
) -> Result<ConfoundingVerdict> {
    same_schema(a, b)?;
    let tol = tolerance(tol)?;
    let schema = a.schema();
    let mut tracker = Tracker::default();
    if !target.is_empty() {
        let ta = conditional_table(schema, &count_masses(a), cond, target);
        let tb = conditional_table(schema, &count_masses(b), cond, target);
        tracker.compare_tables(schema, cond, target, &ta, &tb, |i| i);
    }
    Ok(tracker.verdict(schema, condition, &tol))
}

/// No E2 confounding of E1 crude-rate differences between two periods.
pub fn check_eq8(a: &EmpiricalJoint, b: &EmpiricalJoint, factorization: Factorization, tol: f64) -> Result<ConfoundingVerdict> {
    compare_periods(a, b, factorization.e1(), factorization.e2(), Condition::NoE2Confounding, tol)
}

/// SCA differences for this factorization are unconfounded.
pub fn check_eq12(
    a: &EmpiricalJoint,
    b: &EmpiricalJoint,
    factorization: Factorization,
    age: usize,
    tol: f64,
) -> Result<ConfoundingVerdict> {
    let cond = factorization.e1().with(age);
    let target = factorization.e2().without(age);
    compare_periods(a, b, cond, target, Condition::ScaUnconfounded, tol)
}

/// SCA differences are unconfounded for every factorization.
pub fn check_eq13(a: &EmpiricalJoint, b: &EmpiricalJoint, age: usize, tol: f64) -> Result<ConfoundingVerdict> {
    let all = a.schema().all_factors();
    compare_periods(a, b, VarSet::single(age), all.without(age), Condition::ScaAllFactorizations, tol)
}

/// Largest |SCA − SCC| over every E1a ⊆ E \ A and every stratum where both
/// are defined.
pub fn max_sca_scc_gap(dist: &EmpiricalJoint, weight: &WeightMeasure, age: usize) -> Result<Option<f64>> {
    let schema = dist.schema();
    let rest = schema.all_factors().without(age);
    let mut gap: Option<f64> = None;
    for e1 in rest.subsets() {
        let fact = Factorization::new(schema, e1)?;
        let sca = rate_table::<f64>(
            dist,
            &StandardizationSpec::new(fact, Method::Sca { age, weight: weight.clone() }, EmptyStratumPolicy::Strict),
        )?;
        let scc = rate_table::<f64>(
            dist,
            &StandardizationSpec::new(fact, Method::Scc { weight: weight.clone() }, EmptyStratumPolicy::Strict),
        )?;
        for (x, y) in sca.entries.iter().zip(&scc.entries) {
            if let (Some(x), Some(y)) = (x.rate(), y.rate()) {
                let g = (x - y).abs();
                gap = Some(gap.map_or(g, |m: f64| m.max(g)));
            }
        }
    }
    Ok(gap)
}

/// Conditions under which SCA and SCC produce identical rates on `dist`.
pub fn check_eq14(dist: &EmpiricalJoint, weight: &WeightMeasure, age: usize, tol: f64) -> Result<ConfoundingVerdict> {
    if **dist.schema() != **weight.schema() {
        return Err(Error::SchemaMismatch("weight was built for a different schema".into()));
    }
    weight.require_full("the SCA/SCC equality check")?;
    let tol_q = tolerance(tol)?;
    let schema = dist.schema();
    let age_set = VarSet::single(age);
    let rest = schema.all_factors().without(age);
    let mut tracker = Tracker::default();
    if !rest.is_empty() {
        let data_given_age = conditional_table(schema, &count_masses(dist), age_set, rest);
        let star_given_age = conditional_table(schema, weight.masses(), age_set, rest);
        // P*(Ea | A) against P^y(Ea | A)
        tracker.compare_tables(schema, age_set, rest, &star_given_age, &data_given_age, |i| i);
        // P^y(Ea | A) against P^y(Ea)
        let data_marginal = conditional_table(schema, &count_masses(dist), VarSet::EMPTY, rest);
        for (a, row) in data_given_age.iter().enumerate() {
            if let (Some(row), Some(marg)) = (row, &data_marginal[0]) {
                let key = schema.key_at(age_set, a);
                for (j, (x, y)) in row.iter().zip(marg).enumerate() {
                    tracker.observe((x - y).abs(), || key.join(&schema.key_at(rest, j)));
                }
            }
        }
    }
    let mut verdict = tracker.verdict(schema, Condition::ScaEqualsScc, &tol_q);
    verdict.sca_scc_gap = max_sca_scc_gap(dist, weight, age)?;
    Ok(verdict)
}

/// |standardized − crude| / standardized × 100.
pub fn percent_diff<S: Scalar>(standardized: S, crude: S) -> Result<S, RateError> {
    if standardized.is_zero() {
        return Err(RateError::ZeroStandardizedRate);
    }
    let hundred = S::ratio(100, 1);
    Ok((standardized.clone() - crude).abs() / standardized * hundred)
}

/// One E1 stratum of a [`ConfoundingDemo`]. Differences are period A minus
/// period B.
#[derive(Debug, Clone, Serialize)]
pub struct DemoRow {
    pub stratum: String,
    pub crude: [Option<f64>; 2],
    pub scc: [Option<f64>; 2],
    pub sca: [Option<f64>; 2],
    pub crude_diff: Option<f64>,
    pub scc_diff: Option<f64>,
    pub sca_diff: Option<f64>,
    /// SCC difference equals the crude difference as exact rationals.
    pub scc_diff_equals_crude_diff: Option<bool>,
    pub sca_diff_equals_crude_diff: Option<bool>,
    /// (SCA_A − SCA_B) − (crude_A − crude_B)
    pub sca_diff_of_diffs: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfoundingDemo {
    pub periods: [String; 2],
    pub e1: String,
    pub eq8: ConfoundingVerdict,
    pub eq12: ConfoundingVerdict,
    pub eq13: ConfoundingVerdict,
    /// The no-E2-confounding condition holds and the SCA condition fails:
    /// the pair demonstrates SCA introducing
    /// confounding where crude differences are unconfounded.
    pub preconditions_met: bool,
    pub sca_unconfounded: bool,
    pub summary: String,
    pub rows: Vec<DemoRow>,
}

/// Crude, SCC and SCA differences between two periods for one
/// factorization, alongside the confounding verdicts.
pub fn confounding_demo(
    a: &EmpiricalJoint,
    b: &EmpiricalJoint,
    factorization: Factorization,
    age: usize,
    weight: &WeightMeasure,
) -> Result<ConfoundingDemo> {
    same_schema(a, b)?;
    let schema = a.schema();
    if factorization.e1().contains(age) {
        return Err(Error::Spec("confounding demo requires the age covariate outside E1".into()));
    }
    let eq8 = check_eq8(a, b, factorization, 0.0)?;
    let eq12 = check_eq12(a, b, factorization, age, 0.0)?;
    let eq13 = check_eq13(a, b, age, 0.0)?;
    let policy = EmptyStratumPolicy::Strict;
    let table = |d: &EmpiricalJoint, method: Method| {
        rate_table::<BigRational>(d, &StandardizationSpec::new(factorization, method, policy))
    };
    let crude = [table(a, Method::Crude)?, table(b, Method::Crude)?];
    let scc = [
        table(a, Method::Scc { weight: weight.clone() })?,
        table(b, Method::Scc { weight: weight.clone() })?,
    ];
    let sca = [
        table(a, Method::Sca { age, weight: weight.clone() })?,
        table(b, Method::Sca { age, weight: weight.clone() })?,
    ];
    let pair = |t: &[crate::operators::RateTable<BigRational>; 2], i: usize| -> (Option<BigRational>, Option<BigRational>) {
        (t[0].rate_at(i).cloned(), t[1].rate_at(i).cloned())
    };
    let diff = |p: &(Option<BigRational>, Option<BigRational>)| match p {
        (Some(x), Some(y)) => Some(x - y),
        _ => None,
    };
    let f = |x: &Option<BigRational>| x.as_ref().map(rational_to_f64);
    let mut rows = Vec::new();
    for i in 0..schema.sub_cells(factorization.e1()) {
        let (c, s, k) = (pair(&crude, i), pair(&scc, i), pair(&sca, i));
        let (dc, ds, dk) = (diff(&c), diff(&s), diff(&k));
        let eq = |x: &Option<BigRational>| match (x, &dc) {
            (Some(x), Some(y)) => Some(x == y),
            _ => None,
        };
        let dod = match (&dk, &dc) {
            (Some(x), Some(y)) => Some(rational_to_f64(&(x - y))),
            _ => None,
        };
        rows.push(DemoRow {
            stratum: schema.describe(&schema.key_at(factorization.e1(), i)),
            crude: [f(&c.0), f(&c.1)],
            scc: [f(&s.0), f(&s.1)],
            sca: [f(&k.0), f(&k.1)],
            crude_diff: f(&dc),
            scc_diff: f(&ds),
            sca_diff: f(&dk),
            scc_diff_equals_crude_diff: eq(&ds),
            sca_diff_equals_crude_diff: eq(&dk),
            sca_diff_of_diffs: dod,
        });
    }
    let preconditions_met = eq8.holds && !eq12.holds;
    let sca_unconfounded = eq12.holds;
    let summary = match (eq8.holds, eq12.holds, eq13.holds) {
        (_, _, true) => "SCA differences are unconfounded for every factorization (EQ13_SCA_ALL_FACTORIZATIONS holds)".to_string(),
        (true, false, false) => {
            "crude differences are unconfounded (EQ8_NO_E2_CONFOUNDING holds) but SCA differences are confounded (EQ12_SCA_UNCONFOUNDED fails)".to_string()
        }
        (false, _, false) => format!(
            "precondition failed: {} does not hold (witness {})",
            eq8.condition.code(),
            eq8.witness.as_deref().unwrap_or("-")
        ),
        (true, true, false) => format!(
            "precondition failed: {} holds, so SCA differences are unconfounded for this factorization",
            eq12.condition.code()
        ),
    };
    Ok(ConfoundingDemo {
        periods: [a.period().to_string(), b.period().to_string()],
        e1: schema.describe_vars(factorization.e1()),
        eq8,
        eq12,
        eq13,
        preconditions_met,
        sca_unconfounded,
        summary,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{age_independent_joint, counts_table, grid_schema, rng, sex_age_race_schema, toy_table};
    use crate::schema::Column;
    use std::sync::Arc;

    fn sex_age() -> Arc<CovariateSchema> {
        CovariateSchema::risk_factors_only(vec![
            Column { name: "sex".into(), levels: vec!["M".into(), "F".into()] },
            Column { name: "age".into(), levels: vec!["young".into(), "old".into()] },
        ])
        .unwrap()
    }

    fn doubled(d: &EmpiricalJoint, period: &str) -> EmpiricalJoint {
        let cells: Vec<(u64, u64)> = d.cases().iter().zip(d.totals()).map(|(&c, &n)| (2 * c, 2 * n)).collect();
        counts_table(d.schema(), period, &cells)
    }

    /// Period pair in which P(age, race | sex) is identical but age-specific
    /// rates move in opposite directions.
    fn unconfounded_crude_pair() -> (EmpiricalJoint, EmpiricalJoint) {
        let s = sex_age_race_schema();
        let a = counts_table(
            &s,
            "A",
            &[(10, 200), (5, 100), (60, 200), (40, 100), (4, 100), (3, 50), (50, 200), (30, 100)],
        );
        let b = counts_table(
            &s,
            "B",
            &[(40, 400), (20, 200), (100, 400), (70, 200), (16, 200), (12, 100), (90, 400), (50, 200)],
        );
        (a, b)
    }

    #[test]
    fn no_e2_confounding_holds_when_totals_are_scaled() {
        let a = toy_table();
        let b = doubled(&a, "z");
        let f = Factorization::from_names(a.schema(), &["sex"]).unwrap();
        let v = check_eq8(&a, &b, f, 0.0).unwrap();
        assert!(v.holds);
        assert_eq!(v.max_discrepancy, 0.0);
        assert!(v.witness.is_none());
    }

    #[test]
    fn no_e2_confounding_detects_age_shift_within_sex() {
        let s = sex_age();
        let a = counts_table(&s, "A", &[(5, 50), (5, 50), (10, 100), (10, 100)]);
        let b = counts_table(&s, "B", &[(5, 25), (5, 75), (10, 100), (10, 100)]);
        let f = Factorization::from_names(&s, &["sex"]).unwrap();
        let v = check_eq8(&a, &b, f, 0.0).unwrap();
        assert!(!v.holds);
        assert_eq!(v.max_discrepancy, 0.25);
        assert_eq!(v.witness.as_deref(), Some("sex=M,age=young"));
        assert!(check_eq8(&a, &b, f, 0.25).unwrap().holds);
    }

    #[test]
    fn no_e2_confounding_is_vacuous_without_e2() {
        let s = sex_age();
        let a = counts_table(&s, "A", &[(5, 50), (5, 50), (10, 100), (10, 100)]);
        let b = counts_table(&s, "B", &[(5, 25), (5, 75), (10, 10), (10, 300)]);
        let f = Factorization::new(&s, s.all_factors()).unwrap();
        assert!(check_eq8(&a, &b, f, 0.0).unwrap().holds);
    }

    #[test]
    fn support_mismatch_is_undefined_and_fails() {
        let s = sex_age();
        let a = counts_table(&s, "A", &[(5, 50), (5, 50), (10, 100), (10, 100)]);
        let b = counts_table(&s, "B", &[(5, 50), (5, 50), (0, 0), (0, 0)]);
        let f = Factorization::from_names(&s, &["sex"]).unwrap();
        let v = check_eq8(&a, &b, f, 0.5).unwrap();
        assert!(!v.holds);
        assert_eq!(v.undefined_strata, vec!["sex=F".to_string()]);
        assert_eq!(v.witness.as_deref(), Some("sex=F"));
    }

    #[test]
    fn sca_condition_identical_and_vacuous() {
        let a = toy_table();
        let age = a.schema().factor("age").unwrap();
        let f = Factorization::from_names(a.schema(), &["sex"]).unwrap();
        assert!(check_eq12(&a, &a, f, age, 0.0).unwrap().holds);
        let s = sex_age();
        let b = counts_table(&s, "B", &[(1, 7), (2, 90), (3, 11), (4, 13)]);
        // E2 = {age} so E2 minus age is empty.
        assert!(check_eq12(&a, &b, f, age, 0.0).unwrap().holds);
    }

    #[test]
    fn sca_condition_detects_race_shift_inside_age() {
        let s = sex_age_race_schema();
        let a = counts_table(&s, "A", &[(1, 10); 8]);
        let mut cells = [(1, 10); 8];
        cells[0] = (1, 30);
        let b = counts_table(&s, "B", &cells);
        let age = s.factor("age").unwrap();
        let f = Factorization::from_names(&s, &["sex"]).unwrap();
        let v = check_eq12(&a, &b, f, age, 0.0).unwrap();
        assert!(!v.holds);
        assert_eq!(v.witness.as_deref(), Some("sex=M,age=young,race=white"));
        assert!(!check_eq8(&a, &b, f, 0.0).unwrap().holds);
    }

    /// The no-E2-confounding condition implies the SCA condition for a single
    /// factorization: an exhaustive search over small integer tables finds no
    /// pair satisfying the first and violating the second. The inner loop re-derives both verdicts by cross-multiplication.
    #[test]
    fn no_small_pair_separates_the_crude_and_sca_conditions() {
        let s = grid_schema(&[2, 2]); // v0 = age, v1 = race, E1 = {}
        let age = 0;
        let f = Factorization::new(&s, VarSet::EMPTY).unwrap();
        let tables: Vec<[u64; 4]> = (0..81u32)
            .map(|mut k| {
                let mut t = [0u64; 4];
                for x in t.iter_mut() {
                    *x = (k % 3) as u64 + 1;
                    k /= 3;
                }
                t
            })
            .collect();
        let joints: Vec<EmpiricalJoint> = tables
            .iter()
            .map(|t| counts_table(&s, "y", &t.map(|n| (0, n))))
            .collect();
        let mut eq8_pairs = 0;
        for (i, ta) in tables.iter().enumerate() {
            for (j, tb) in tables.iter().enumerate() {
                let (na, nb): (u64, u64) = (ta.iter().sum(), tb.iter().sum());
                let oracle8 = ta.iter().zip(tb).all(|(x, y)| x * nb == y * na);
                let oracle12 = (0..2).all(|a| {
                    let (ra, rb) = (ta[2 * a] + ta[2 * a + 1], tb[2 * a] + tb[2 * a + 1]);
                    (0..2).all(|r| ta[2 * a + r] * rb == tb[2 * a + r] * ra)
                });
                let v8 = check_eq8(&joints[i], &joints[j], f, 0.0).unwrap().holds;
                let v12 = check_eq12(&joints[i], &joints[j], f, age, 0.0).unwrap().holds;
                assert_eq!(v8, oracle8);
                assert_eq!(v12, oracle12);
                if v8 {
                    eq8_pairs += 1;
                    assert!(v12, "pair {ta:?} {tb:?}");
                }
            }
        }
        assert!(eq8_pairs > 81);
    }

    #[test]
    fn all_factorization_condition_examples() {
        let s = grid_schema(&[2, 2]); // v0 = age, v1 = race
        let a = counts_table(&s, "A", &[(1, 30), (1, 10), (1, 20), (1, 20)]);
        assert!(check_eq13(&a, &a, 0, 0.0).unwrap().holds);
        let margin_only = counts_table(&s, "B", &[(1, 60), (1, 20), (1, 20), (1, 20)]);
        assert!(check_eq13(&a, &margin_only, 0, 0.0).unwrap().holds);
        let within = counts_table(&s, "B", &[(1, 20), (1, 20), (1, 20), (1, 20)]);
        let v = check_eq13(&a, &within, 0, 0.0).unwrap();
        assert!(!v.holds);
        assert_eq!(v.max_discrepancy, 0.25);
        assert_eq!(v.witness.as_deref(), Some("v0=l0,v1=l0"));
    }

    #[test]
    fn all_factorization_condition_implies_each_factorization() {
        let s = grid_schema(&[2, 3, 2]);
        let a = counts_table(&s, "A", &(1..=12).map(|n| (0, n)).collect::<Vec<_>>());
        let b = counts_table(
            &s,
            "B",
            &(1..=12).map(|n| (0, if n <= 6 { 3 * n } else { n })).collect::<Vec<_>>(),
        );
        assert!(check_eq13(&a, &b, 0, 0.0).unwrap().holds);
        for f in Factorization::all(&s) {
            if !f.e1().contains(0) {
                assert!(check_eq12(&a, &b, f, 0, 0.0).unwrap().holds);
            }
        }
    }

    #[test]
    fn sca_equals_scc_condition_examples() {
        let s = grid_schema(&[3, 2, 2]);
        let product = age_independent_joint(&mut rng(5), &s, 0, "y");
        let w = WeightMeasure::empirical(&product).unwrap();
        let v = check_eq14(&product, &w, 0, 0.0).unwrap();
        assert!(v.holds);
        assert!(v.sca_scc_gap.unwrap() <= 1e-12);

        let mut cells: Vec<(u64, u64)> = product.cases().iter().zip(product.totals()).map(|(&c, &n)| (c, n)).collect();
        cells[0].1 += 7;
        let dependent = counts_table(&s, "y", &cells);
        let wd = WeightMeasure::empirical(&dependent).unwrap();
        assert!(!check_eq14(&dependent, &wd, 0, 0.0).unwrap().holds);

        let other = WeightMeasure::from_counts(s.clone(), s.all_factors(), &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12]).unwrap();
        let v = check_eq14(&product, &other, 0, 0.0).unwrap();
        assert!(!v.holds);
        assert!(v.witness.is_some());
    }

    #[test]
    fn percent_diff_hand_values() {
        let q = |n, d| crate::scalar::rational_from_u64(n, d);
        assert_eq!(percent_diff(q(1, 5), q(1, 5)).unwrap(), q(0, 1));
        assert_eq!(percent_diff(q(3, 20), q(1, 5)).unwrap(), q(100, 3));
        assert_eq!(percent_diff(q(1, 4), q(1, 5)).unwrap(), q(20, 1));
        assert_eq!(percent_diff(0.0, 0.2), Err(RateError::ZeroStandardizedRate));
        // Scale-free.
        let c = q(7, 3);
        assert_eq!(percent_diff(q(3, 20) * &c, q(1, 5) * &c).unwrap(), q(100, 3));
    }

    #[test]
    fn demo_on_identical_periods_has_zero_differences() {
        let a = toy_table();
        let age = a.schema().factor("age").unwrap();
        let f = Factorization::from_names(a.schema(), &["sex"]).unwrap();
        let w = WeightMeasure::empirical(&a).unwrap();
        let demo = confounding_demo(&a, &a, f, age, &w).unwrap();
        assert!(!demo.preconditions_met);
        assert!(demo.sca_unconfounded);
        for row in &demo.rows {
            assert_eq!(row.crude_diff, Some(0.0));
            assert_eq!(row.scc_diff, Some(0.0));
            assert_eq!(row.sca_diff, Some(0.0));
        }
    }

    #[test]
    fn demo_on_unconfounded_crude_pair_separates_sca_from_crude() {
        let (a, b) = unconfounded_crude_pair();
        let s = a.schema().clone();
        let age = s.factor("age").unwrap();
        let f = Factorization::from_names(&s, &["sex"]).unwrap();
        let w = WeightMeasure::empirical(&a).unwrap();
        let demo = confounding_demo(&a, &b, f, age, &w).unwrap();
        assert!(demo.eq8.holds);
        for row in &demo.rows {
            assert_eq!(row.scc_diff_equals_crude_diff, Some(true));
            assert_eq!(row.sca_diff_equals_crude_diff, Some(false));
        }
        // M: age-specific differences are -0.05 and +0.05; crude weights
        // them 1/2 each, SCA weights them 3/7 and 4/7.
        let m = &demo.rows[0];
        assert_eq!(m.stratum, "sex=M");
        assert!((m.crude_diff.unwrap()).abs() < 1e-15);
        assert!((m.sca_diff_of_diffs.unwrap() - 0.05 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn demo_reports_all_factorization_pair_as_unconfounded() {
        let s = grid_schema(&[2, 2]);
        let a = counts_table(&s, "A", &[(3, 30), (1, 10), (5, 20), (2, 20)]);
        let b = counts_table(&s, "B", &[(9, 60), (4, 20), (2, 20), (8, 20)]);
        let f = Factorization::new(&s, VarSet::EMPTY).unwrap();
        let w = WeightMeasure::empirical(&a).unwrap();
        let demo = confounding_demo(&a, &b, f, 0, &w).unwrap();
        assert!(demo.eq13.holds);
        assert!(demo.sca_unconfounded);
        assert!(demo.summary.contains("unconfounded for every factorization"));
    }
}
