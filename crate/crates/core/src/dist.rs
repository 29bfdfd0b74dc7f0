//! Exact empirical joint distributions of (D, E) for one period.

use std::collections::HashSet;
use std::sync::Arc;

use crate::error::{Error, RateError, Result};
use crate::scalar::Scalar;
use crate::schema::{CovariateSchema, StratumKey, VarSet};

/// Integer case/population counts over every full-E cell for one period.
///
/// All probabilities are ratios of these counts. Cells with `n_total == 0`
/// are indistinguishable from absent cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmpiricalJoint {
    period: String,
    schema: Arc<CovariateSchema>,
    cases: Vec<u64>,
    totals: Vec<u64>,
}

/// Case and population counts over the sub-grid of some covariate set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Margin {
    pub vars: VarSet,
    pub cases: Vec<u64>,
    pub totals: Vec<u64>,
}

impl EmpiricalJoint {
    /// Builds a joint from dense per-cell counts.
    pub fn from_cells(
        schema: Arc<CovariateSchema>,
        period: impl Into<String>,
        cases: Vec<u64>,
        totals: Vec<u64>,
    ) -> Result<Self> {
        let n = schema.n_cells();
        if cases.len() != n || totals.len() != n {
            return Err(Error::SchemaMismatch(format!("expected {n} cells")));
        }
        for cell in 0..n {
            if cases[cell] > totals[cell] {
                return Err(Error::CasesExceedTotal {
                    stratum: schema.describe(&schema.cell_key(cell, schema.all_factors())),
                    cases: cases[cell],
                    total: totals[cell],
                });
            }
        }
        Ok(Self { period: period.into(), schema, cases, totals })
    }

    pub fn period(&self) -> &str {
        &self.period
    }

    pub fn schema(&self) -> &Arc<CovariateSchema> {
        &self.schema
    }

    pub fn cases(&self) -> &[u64] {
        &self.cases
    }

    pub fn totals(&self) -> &[u64] {
        &self.totals
    }

    pub fn population(&self) -> u64 {
        self.totals.iter().sum()
    }

    pub fn total_cases(&self) -> u64 {
        self.cases.iter().sum()
    }

    /// False for a joint with no individuals; no rate is defined on it.
    pub fn is_usable(&self) -> bool {
        self.population() > 0
    }

    pub fn with_period(mut self, period: impl Into<String>) -> Self {
        self.period = period.into();
        self
    }

    pub fn margin(&self, vars: VarSet) -> Margin {
        let proj = self.schema.projection(vars);
        let size = self.schema.sub_cells(vars);
        let mut cases = vec![0u64; size];
        let mut totals = vec![0u64; size];
        for (cell, &sub) in proj.iter().enumerate() {
            cases[sub] += self.cases[cell];
            totals[sub] += self.totals[cell];
        }
        Margin { vars, cases, totals }
    }

    fn counts_matching(&self, cond: &StratumKey) -> (u64, u64) {
        let mut c = 0;
        let mut n = 0;
        for cell in 0..self.schema.n_cells() {
            if cond.matches_cell(&self.schema, cell) {
                c += self.cases[cell];
                n += self.totals[cell];
            }
        }
        (c, n)
    }

    /// P(D = 1 | condition). The condition may cover any subset of E.
    pub fn crude_rate_in<S: Scalar>(&self, condition: &StratumKey) -> Result<S, RateError> {
        let (c, n) = self.counts_matching(condition);
        if n == 0 {
            return Err(RateError::UndefinedRate { condition: self.schema.describe(condition) });
        }
        Ok(S::ratio(c, n))
    }

    pub fn crude_rate(&self, condition: &StratumKey) -> Result<f64, RateError> {
        self.crude_rate_in(condition)
    }

    /// P(e2 | e1) from population counts; `e2` and `e1` cover disjoint sets.
    pub fn conditional_weight_in<S: Scalar>(
        &self,
        e2: &StratumKey,
        given: &StratumKey,
    ) -> Result<S, RateError> {
        let (_, n_given) = self.counts_matching(given);
        if n_given == 0 {
            return Err(RateError::UndefinedRate { condition: self.schema.describe(given) });
        }
        let (_, n_joint) = self.counts_matching(&given.join(e2));
        Ok(S::ratio(n_joint, n_given))
    }

    pub fn conditional_weight(&self, e2: &StratumKey, given: &StratumKey) -> Result<f64, RateError> {
        self.conditional_weight_in(e2, given)
    }

    /// Finest-crude rate P(D | e) of a cell, or `None` for an empty cell.
    pub fn cell_rate<S: Scalar>(&self, cell: usize) -> Option<S> {
        (self.totals[cell] > 0).then(|| S::ratio(self.cases[cell], self.totals[cell]))
    }

    /// Expands back to microdata: one `(case, cell)` record per individual.
    pub fn expand(&self) -> impl Iterator<Item = (bool, usize)> + '_ {
        (0..self.schema.n_cells()).flat_map(move |cell| {
            let c = self.cases[cell];
            let n = self.totals[cell];
            (0..n).map(move |i| (i < c, cell))
        })
    }

    /// Count rows `(cell key, n_cases, n_total)` for every non-empty cell, in
    /// schema order.
    pub fn count_rows(&self) -> Vec<(StratumKey, u64, u64)> {
        let all = self.schema.all_factors();
        (0..self.schema.n_cells())
            .filter(|&c| self.totals[c] > 0)
            .map(|c| (self.schema.cell_key(c, all), self.cases[c], self.totals[c]))
            .collect()
    }
}

/// Incremental tally of microdata records. Partial tallies merge
/// associatively, so chunks of records can be counted independently.
#[derive(Debug, Clone)]
pub struct Tally {
    schema: Arc<CovariateSchema>,
    cases: Vec<u64>,
    totals: Vec<u64>,
}

impl Tally {
    pub fn new(schema: Arc<CovariateSchema>) -> Self {
        let n = schema.n_cells();
        Self { schema, cases: vec![0; n], totals: vec![0; n] }
    }

    pub fn add_cell(&mut self, case: bool, cell: usize) {
        self.totals[cell] += 1;
        if case {
            self.cases[cell] += 1;
        }
    }

    /// Adds a record given as `(column, level)` pairs. Columns outside the
    /// risk factors are validated and then ignored.
    pub fn add_named<K: AsRef<str>, V: AsRef<str>>(
        &mut self,
        row: usize,
        case: bool,
        values: &[(K, V)],
    ) -> Result<()> {
        let k = self.schema.n_factors();
        let mut levels: Vec<Option<u16>> = vec![None; k];
        for (name, level) in values {
            let (name, level) = (name.as_ref(), level.as_ref());
            let col = self.schema.column_index(name).ok_or_else(|| Error::Row {
                row,
                message: format!("unknown column `{name}`"),
            })?;
            let column = &self.schema.columns()[col];
            let l = column.levels.iter().position(|x| x == level).ok_or_else(|| Error::Row {
                row,
                message: format!("unknown level `{level}` for covariate `{name}`"),
            })?;
            if let Ok(f) = self.schema.factor(name) {
                levels[f] = Some(l as u16);
            }
        }
        let mut full = Vec::with_capacity(k);
        for (f, l) in levels.into_iter().enumerate() {
            full.push(l.ok_or_else(|| Error::Row {
                row,
                message: format!("missing column `{}`", self.schema.factor_name(f)),
            })?);
        }
        let cell = self.schema.cell_index(&full);
        self.add_cell(case, cell);
        Ok(())
    }

    pub fn merge(mut self, other: &Tally) -> Result<Self> {
        if *self.schema != *other.schema {
            return Err(Error::SchemaMismatch("cannot merge tallies over different schemas".into()));
        }
        for (a, b) in self.cases.iter_mut().zip(&other.cases) {
            *a += b;
        }
        for (a, b) in self.totals.iter_mut().zip(&other.totals) {
            *a += b;
        }
        Ok(self)
    }

    pub fn finish(self, period: impl Into<String>) -> EmpiricalJoint {
        EmpiricalJoint { period: period.into(), schema: self.schema, cases: self.cases, totals: self.totals }
    }
}

/// Tallies microdata records `(case_flag, [(column, level)])`.
pub fn build_empirical<I, K, V>(
    records: I,
    schema: Arc<CovariateSchema>,
    period: impl Into<String>,
) -> Result<EmpiricalJoint>
where
    I: IntoIterator<Item = (bool, Vec<(K, V)>)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    let mut tally = Tally::new(schema);
    for (row, (case, values)) in records.into_iter().enumerate() {
        tally.add_named(row, case, &values)?;
    }
    Ok(tally.finish(period))
}

/// Builds a joint from pre-aggregated rows over full-E keys.
pub fn build_from_counts(
    rows: impl IntoIterator<Item = (StratumKey, u64, u64)>,
    schema: Arc<CovariateSchema>,
    period: impl Into<String>,
) -> Result<EmpiricalJoint> {
    let all = schema.all_factors();
    let n = schema.n_cells();
    let mut cases = vec![0u64; n];
    let mut totals = vec![0u64; n];
    let mut seen = HashSet::new();
    for (key, c, t) in rows {
        if key.vars() != all {
            return Err(Error::Spec(format!(
                "count row {} does not assign every risk factor",
                schema.describe(&key)
            )));
        }
        let cell = schema.sub_index(all, &key);
        if !seen.insert(cell) {
            return Err(Error::DuplicateStratum(schema.describe(&key)));
        }
        if c > t {
            return Err(Error::CasesExceedTotal { stratum: schema.describe(&key), cases: c, total: t });
        }
        cases[cell] = c;
        totals[cell] = t;
    }
    EmpiricalJoint::from_cells(schema, period, cases, totals)
}
