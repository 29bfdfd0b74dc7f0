//! Standardization weight measures P*(·) and SONC measure families F*.

use std::collections::HashSet;
use std::sync::Arc;

use num_rational::BigRational;
use num_traits::{Signed, Zero};

use crate::dist::EmpiricalJoint;
use crate::error::{Error, Result};
use crate::scalar::{rational_from_u64, rational_to_f64};
use crate::schema::{CovariateSchema, Factorization, StratumKey, VarSet};

/// Input masses must sum to one within this tolerance before exact
/// renormalization.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// A probability measure over the cross-product of `scope`.
///
/// Masses are exact rationals; `approx` caches their f64 values for the
/// floating-point operator path.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMeasure {
    schema: Arc<CovariateSchema>,
    scope: VarSet,
    mass: Vec<BigRational>,
    approx: Vec<f64>,
}

fn normalize(masses: &mut [BigRational], exact_input: bool) -> Result<()> {
    if masses.iter().any(|m| m.is_negative()) {
        return Err(Error::Weight("negative mass".into()));
    }
    let total: BigRational = masses.iter().cloned().sum();
    if total.is_zero() {
        return Err(Error::Weight("total mass is zero".into()));
    }
    if !exact_input {
        let gap = (rational_to_f64(&total) - 1.0).abs();
        if gap > NORMALIZATION_TOL {
            return Err(Error::Weight(format!(
                "masses sum to {} (must be 1 within {NORMALIZATION_TOL:e})",
                rational_to_f64(&total)
            )));
        }
    }
    for m in masses.iter_mut() {
        *m = &*m / &total;
    }
    Ok(())
}

impl WeightMeasure {
    fn build(schema: Arc<CovariateSchema>, scope: VarSet, mass: Vec<BigRational>) -> Self {
        let approx = mass.iter().map(rational_to_f64).collect();
        Self { schema, scope, mass, approx }
    }

    /// Dense masses over the sub-grid of `scope`; they must sum to one
    /// within [`NORMALIZATION_TOL`].
    pub fn from_masses(schema: Arc<CovariateSchema>, scope: VarSet, mut mass: Vec<BigRational>) -> Result<Self> {
        if !scope.is_subset(schema.all_factors()) {
            return Err(Error::Weight("scope outside schema".into()));
        }
        if mass.len() != schema.sub_cells(scope) {
            return Err(Error::Weight(format!(
                "expected {} masses, got {}",
                schema.sub_cells(scope),
                mass.len()
            )));
        }
        normalize(&mut mass, false)?;
        Ok(Self::build(schema, scope, mass))
    }

    /// Weights proportional to non-negative counts (no sum constraint).
    pub fn from_counts(schema: Arc<CovariateSchema>, scope: VarSet, counts: &[u64]) -> Result<Self> {
        if counts.len() != schema.sub_cells(scope) {
            return Err(Error::Weight("count vector does not match scope".into()));
        }
        let mut mass: Vec<BigRational> = counts.iter().map(|&c| rational_from_u64(c, 1)).collect();
        normalize(&mut mass, true)?;
        Ok(Self::build(schema, scope, mass))
    }

    /// Sparse entries over `scope`; unlisted strata get zero mass.
    pub fn from_entries(
        schema: Arc<CovariateSchema>,
        scope: VarSet,
        entries: impl IntoIterator<Item = (StratumKey, BigRational)>,
    ) -> Result<Self> {
        let mut mass = vec![BigRational::zero(); schema.sub_cells(scope)];
        let mut seen = HashSet::new();
        for (key, m) in entries {
            if key.vars() != scope {
                return Err(Error::Weight(format!(
                    "entry {} does not match scope {}",
                    schema.describe(&key),
                    schema.describe_vars(scope)
                )));
            }
            let idx = schema.sub_index(scope, &key);
            if !seen.insert(idx) {
                return Err(Error::DuplicateStratum(schema.describe(&key)));
            }
            mass[idx] = m;
        }
        Self::from_masses(schema, scope, mass)
    }

    /// The empirical covariate distribution P^y(E) of a joint.
    pub fn empirical(dist: &EmpiricalJoint) -> Result<Self> {
        let schema = dist.schema().clone();
        let all = schema.all_factors();
        Self::from_counts(schema, all, dist.totals())
    }

    pub fn point_mass(schema: Arc<CovariateSchema>, key: &StratumKey) -> Self {
        let scope = key.vars();
        let mut mass = vec![BigRational::zero(); schema.sub_cells(scope)];
        mass[schema.sub_index(scope, key)] = rational_from_u64(1, 1);
        Self::build(schema, scope, mass)
    }

    pub fn uniform(schema: Arc<CovariateSchema>, scope: VarSet) -> Self {
        let n = schema.sub_cells(scope) as u64;
        let mass = vec![rational_from_u64(1, n); n as usize];
        Self::build(schema, scope, mass)
    }

    pub fn schema(&self) -> &Arc<CovariateSchema> {
        &self.schema
    }

    pub fn scope(&self) -> VarSet {
        self.scope
    }

    pub fn masses(&self) -> &[BigRational] {
        &self.mass
    }

    pub fn approx(&self) -> &[f64] {
        &self.approx
    }

    pub fn mass_of(&self, key: &StratumKey) -> &BigRational {
        &self.mass[self.schema.sub_index(self.scope, key)]
    }

    /// Strata with positive mass.
    pub fn support(&self) -> Vec<StratumKey> {
        (0..self.mass.len())
            .filter(|&i| !self.mass[i].is_zero())
            .map(|i| self.schema.key_at(self.scope, i))
            .collect()
    }

    /// Marginal measure over `vars ⊆ scope`.
    pub fn marginal(&self, vars: VarSet) -> Result<Self> {
        if !vars.is_subset(self.scope) {
            return Err(Error::Weight(format!(
                "cannot marginalize {} onto {}",
                self.schema.describe_vars(self.scope),
                self.schema.describe_vars(vars)
            )));
        }
        let mut mass = vec![BigRational::zero(); self.schema.sub_cells(vars)];
        for (i, m) in self.mass.iter().enumerate() {
            if m.is_zero() {
                continue;
            }
            let key = self.schema.key_at(self.scope, i).restrict(vars);
            mass[self.schema.sub_index(vars, &key)] += m;
        }
        Ok(Self::build(self.schema.clone(), vars, mass))
    }

    /// Requires a full-scope measure; returns it or an error naming `what`.
    pub(crate) fn require_full(&self, what: &str) -> Result<()> {
        if self.scope != self.schema.all_factors() {
            return Err(Error::Weight(format!("{what} requires a weight over all risk factors")));
        }
        Ok(())
    }
}

/// A family of measures over E2 indexed by the E1 stratum, F*(e1, ·).
///
/// Strata with no measure (`None`) produce a weight-conditioning error when
/// an operator is evaluated there.
#[derive(Debug, Clone, PartialEq)]
pub struct SoncFamily {
    schema: Arc<CovariateSchema>,
    factorization: Factorization,
    measures: Vec<Option<Vec<BigRational>>>,
    approx: Vec<Option<Vec<f64>>>,
}

impl SoncFamily {
    /// `measures[i]` is the measure over the E2 sub-grid for the `i`-th E1
    /// stratum. Each must sum to one within [`NORMALIZATION_TOL`].
    pub fn new(
        schema: Arc<CovariateSchema>,
        factorization: Factorization,
        measures: Vec<Option<Vec<BigRational>>>,
    ) -> Result<Self> {
        if measures.len() != schema.sub_cells(factorization.e1()) {
            return Err(Error::Weight("family must have one entry per E1 stratum".into()));
        }
        let n2 = schema.sub_cells(factorization.e2());
        let mut out = Vec::with_capacity(measures.len());
        for m in measures {
            out.push(match m {
                Some(mut v) => {
                    if v.len() != n2 {
                        return Err(Error::Weight("family member does not match E2 grid".into()));
                    }
                    normalize(&mut v, false)?;
                    Some(v)
                }
                None => None,
            });
        }
        Ok(Self::from_normalized(schema, factorization, out))
    }

    fn from_normalized(
        schema: Arc<CovariateSchema>,
        factorization: Factorization,
        measures: Vec<Option<Vec<BigRational>>>,
    ) -> Self {
        let approx = measures
            .iter()
            .map(|m| m.as_ref().map(|v| v.iter().map(rational_to_f64).collect()))
            .collect();
        Self { schema, factorization, measures, approx }
    }

    /// The family induced by a full P*(E): F*(e1, ·) = P*(E2 | e1).
    pub fn induced(weight: &WeightMeasure, factorization: Factorization) -> Result<Self> {
        weight.require_full("an induced SONC family")?;
        let schema = weight.schema().clone();
        let (e1, e2) = (factorization.e1(), factorization.e2());
        let p1 = schema.projection(e1);
        let p2 = schema.projection(e2);
        let n2 = schema.sub_cells(e2);
        let mut joint = vec![vec![BigRational::zero(); n2]; schema.sub_cells(e1)];
        for cell in 0..schema.n_cells() {
            joint[p1[cell]][p2[cell]] += &weight.masses()[cell];
        }
        let measures = joint
            .into_iter()
            .map(|mut row| {
                let total: BigRational = row.iter().cloned().sum();
                if total.is_zero() {
                    None
                } else {
                    row.iter_mut().for_each(|m| *m = &*m / &total);
                    Some(row)
                }
            })
            .collect();
        Ok(Self::from_normalized(schema, factorization, measures))
    }

    /// The family given by a period's own conditionals P^y(E2 | e1).
    pub fn empirical_conditional(dist: &EmpiricalJoint, factorization: Factorization) -> Result<Self> {
        Self::induced(&WeightMeasure::empirical(dist)?, factorization)
    }

    pub fn schema(&self) -> &Arc<CovariateSchema> {
        &self.schema
    }

    pub fn factorization(&self) -> Factorization {
        self.factorization
    }

    pub fn measure(&self, e1_index: usize) -> Option<&[BigRational]> {
        self.measures[e1_index].as_deref()
    }

    pub fn measure_approx(&self, e1_index: usize) -> Option<&[f64]> {
        self.approx[e1_index].as_deref()
    }
}
