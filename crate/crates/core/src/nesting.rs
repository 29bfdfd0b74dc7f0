//! Nested standardized rates: the SCC recursion identity, the failed
//! SCA analogue, and projection-property checks.

use serde::Serialize;

use crate::dist::EmpiricalJoint;
use crate::error::{Error, RateError, Result};
use crate::operators::{rate_table, EmptyStratumPolicy, Method, RateEntry, RateTable, StandardizationSpec, Standardized};
use crate::scalar::Scalar;
use crate::schema::{CovariateSchema, Factorization, VarSet};
use crate::weights::WeightMeasure;

/// Default entry-wise tolerance of the recursion and projection identities.
pub const IDENTITY_TOL: f64 = 1e-12;

/// Two conditioning sets with `inner` a proper subset of `outer`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NestingPair {
    outer: VarSet,
    inner: VarSet,
}

impl NestingPair {
    pub fn new(schema: &CovariateSchema, outer: VarSet, inner: VarSet) -> Result<Self> {
        if !outer.is_subset(schema.all_factors()) {
            return Err(Error::Spec("nesting set outside the risk factors".into()));
        }
        if !inner.is_proper_subset(outer) {
            return Err(Error::Spec(format!(
                "{} is not a proper subset of {}",
                schema.describe_vars(inner),
                schema.describe_vars(outer)
            )));
        }
        Ok(Self { outer, inner })
    }

    pub fn from_names<S: AsRef<str>>(schema: &CovariateSchema, outer: &[S], inner: &[S]) -> Result<Self> {
        Self::new(schema, schema.vars(outer)?, schema.vars(inner)?)
    }

    pub fn outer(&self) -> VarSet {
        self.outer
    }

    pub fn inner(&self) -> VarSet {
        self.inner
    }

    /// Every proper nesting pair over the schema's risk factors.
    pub fn all(schema: &CovariateSchema) -> Vec<NestingPair> {
        let all = schema.all_factors();
        let mut out = Vec::new();
        for outer in all.subsets() {
            for inner in outer.subsets() {
                if inner != outer {
                    out.push(NestingPair { outer, inner });
                }
            }
        }
        out
    }
}

/// Integrates an outer rate table over P*(outer \ inner | inner).
fn integrate_outer<S: Scalar>(
    schema: &CovariateSchema,
    outer_table: &RateTable<S>,
    weight: &WeightMeasure,
    pair: NestingPair,
) -> Result<RateTable<S>> {
    let w_outer = weight.marginal(pair.outer)?;
    let n_inner = schema.sub_cells(pair.inner);
    let mut num: Vec<S> = vec![S::zero(); n_inner];
    let mut mass: Vec<S> = vec![S::zero(); n_inner];
    let mut failed: Vec<Option<RateError>> = vec![None; n_inner];
    for (o, entry) in outer_table.entries.iter().enumerate() {
        let w = S::from_mass(&w_outer.masses()[o], w_outer.approx()[o]);
        if w.is_zero() {
            continue;
        }
        let i = schema.sub_index(pair.inner, &entry.key);
        match &entry.result {
            Ok(s) => {
                num[i] = num[i].clone() + s.rate.clone() * w.clone();
                mass[i] = mass[i].clone() + w;
            }
            Err(e) => {
                if failed[i].is_none() {
                    failed[i] = Some(e.clone());
                }
            }
        }
    }
    let entries = (0..n_inner)
        .map(|i| {
            let key = schema.key_at(pair.inner, i);
            let result = if let Some(e) = failed[i].take() {
                Err(e)
            } else if mass[i].is_zero() {
                Err(RateError::ZeroWeightMass { condition: schema.describe(&key) })
            } else {
                Ok(Standardized { rate: num[i].clone() / mass[i].clone(), affected_mass: S::zero() })
            };
            RateEntry { key, result }
        })
        .collect();
    Ok(RateTable { e1: pair.inner, entries })
}

/// SCC over `inner` computed directly and by integrating the SCC table over
/// `outer` against P*(outer \ inner | inner).
pub fn scc_recurse<S: Scalar>(
    dist: &EmpiricalJoint,
    weight: &WeightMeasure,
    pair: NestingPair,
    policy: EmptyStratumPolicy,
) -> Result<(RateTable<S>, RateTable<S>)> {
    let schema = dist.schema();
    let spec = |e1| -> Result<StandardizationSpec> {
        Ok(StandardizationSpec::new(Factorization::new(schema, e1)?, Method::Scc { weight: weight.clone() }, policy))
    };
    let direct = rate_table(dist, &spec(pair.inner)?)?;
    let outer = rate_table(dist, &spec(pair.outer)?)?;
    let recursed = integrate_outer(schema, &outer, weight, pair)?;
    Ok((direct, recursed))
}

/// Largest |a − b| over entries defined in both tables, and whether the two
/// tables agree on which entries are defined.
pub fn table_gap<S: Scalar>(a: &RateTable<S>, b: &RateTable<S>) -> (f64, bool) {
    let mut gap = 0.0f64;
    let mut same_support = true;
    for (x, y) in a.entries.iter().zip(&b.entries) {
        match (x.rate(), y.rate()) {
            (Some(x), Some(y)) => gap = gap.max((x.clone() - y.clone()).abs().as_f64()),
            (None, None) => {}
            _ => same_support = false,
        }
    }
    (gap, same_support)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoRecursion {
    pub direct: RateTable<f64>,
    pub mimicked: RateTable<f64>,
    pub max_gap: f64,
}

/// Applies the SCC recursion form to SCA: integrates the SCA table over
/// `outer` against P*(outer | inner) and compares with SCA over `inner`.
pub fn sca_pseudo_recurse(
    dist: &EmpiricalJoint,
    weight: &WeightMeasure,
    age: usize,
    pair: NestingPair,
    policy: EmptyStratumPolicy,
) -> Result<PseudoRecursion> {
    if pair.outer.contains(age) {
        return Err(Error::Spec("SCA nesting sets must exclude the age covariate".into()));
    }
    let schema = dist.schema();
    let spec = |e1| -> Result<StandardizationSpec> {
        Ok(StandardizationSpec::new(
            Factorization::new(schema, e1)?,
            Method::Sca { age, weight: weight.clone() },
            policy,
        ))
    };
    let direct: RateTable<f64> = rate_table(dist, &spec(pair.inner)?)?;
    let outer: RateTable<f64> = rate_table(dist, &spec(pair.outer)?)?;
    let mimicked = integrate_outer(schema, &outer, weight, pair)?;
    let (max_gap, _) = table_gap(&direct, &mimicked);
    Ok(PseudoRecursion { direct, mimicked, max_gap })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub property: String,
    pub detail: String,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionReport {
    /// Seed of the generated fixture, when the inputs were synthetic.
    pub seed: Option<u64>,
    pub tolerance: f64,
    pub idempotence_checked: usize,
    pub tower_pairs_checked: usize,
    pub conditional_expectation_checked: usize,
    pub max_error: f64,
    pub violations: Vec<Violation>,
    pub passed: bool,
}

/// E*[P(D | E) | E1 = e1] under P^{y*}(D, E) = P^y(D | E) · P*(E),
/// accumulated cell by cell. Cells with zero weight are skipped, and a
/// weighted cell with no individuals makes the stratum undefined.
fn conditional_expectation(dist: &EmpiricalJoint, weight: &WeightMeasure, e1: VarSet) -> Vec<Option<f64>> {
    let schema = dist.schema();
    let proj = schema.projection(e1);
    let n = schema.sub_cells(e1);
    let (mut num, mut den, mut defined) = (vec![0.0; n], vec![0.0; n], vec![true; n]);
    for (cell, &i) in proj.iter().enumerate() {
        let w = weight.approx()[cell];
        if w == 0.0 {
            continue;
        }
        match dist.cell_rate::<f64>(cell) {
            Some(r) => {
                num[i] += w * r;
                den[i] += w;
            }
            None => defined[i] = false,
        }
    }
    (0..n).map(|i| (defined[i] && den[i] > 0.0).then(|| num[i] / den[i])).collect()
}

/// Checks idempotence, the tower property over every nesting pair, and that
/// SCC equals the conditional expectation of the finest-crude rates under
/// the product measure. Runs under the strict empty-stratum policy.
pub fn projection_checks(dist: &EmpiricalJoint, weight: &WeightMeasure, tol: f64) -> Result<ProjectionReport> {
    let schema = dist.schema();
    let policy = EmptyStratumPolicy::Strict;
    let all = schema.all_factors();
    let mut violations = Vec::new();
    let mut max_error = 0.0f64;
    let mut note = |property: &str, detail: String, error: f64, max_error: &mut f64| {
        if error.is_finite() {
            *max_error = max_error.max(error);
        }
        if error.is_nan() || error > tol {
            violations.push(Violation { property: property.into(), detail, error });
        }
    };

    // (a) SCC with E1 = E returns the finest-crude rates.
    let finest: RateTable<f64> = rate_table(
        dist,
        &StandardizationSpec::new(Factorization::new(schema, all)?, Method::Scc { weight: weight.clone() }, policy),
    )?;
    let mut idempotence_checked = 0;
    for (cell, entry) in finest.entries.iter().enumerate() {
        if weight.approx()[cell] == 0.0 {
            continue;
        }
        idempotence_checked += 1;
        let error = match (entry.rate(), dist.cell_rate::<f64>(cell)) {
            (Some(x), Some(y)) => (x - y).abs(),
            (None, None) => 0.0,
            _ => f64::INFINITY,
        };
        note("idempotence", schema.describe(&entry.key), error, &mut max_error);
    }

    // (b) tower property over every nested pair.
    let pairs = NestingPair::all(schema);
    for pair in &pairs {
        let (direct, recursed) = scc_recurse::<f64>(dist, weight, *pair, policy)?;
        let (gap, same) = table_gap(&direct, &recursed);
        let error = if same { gap } else { f64::INFINITY };
        note(
            "tower",
            format!("{} within {}", schema.describe_vars(pair.inner), schema.describe_vars(pair.outer)),
            error,
            &mut max_error,
        );
    }

    // (c) SCC over E1 equals the conditional expectation under P^{y*}.
    let mut ce_checked = 0;
    for e1 in all.subsets() {
        let table: RateTable<f64> = rate_table(
            dist,
            &StandardizationSpec::new(Factorization::new(schema, e1)?, Method::Scc { weight: weight.clone() }, policy),
        )?;
        let expected = conditional_expectation(dist, weight, e1);
        for (entry, exp) in table.entries.iter().zip(expected) {
            ce_checked += 1;
            let error = match (entry.rate(), exp) {
                (Some(x), Some(y)) => (x - y).abs(),
                (None, None) => 0.0,
                _ => f64::INFINITY,
            };
            note("conditional_expectation", schema.describe(&entry.key), error, &mut max_error);
        }
    }

    let passed = violations.is_empty();
    Ok(ProjectionReport {
        seed: None,
        tolerance: tol,
        idempotence_checked,
        tower_pairs_checked: pairs.len(),
        conditional_expectation_checked: ce_checked,
        max_error,
        violations,
        passed,
    })
}
