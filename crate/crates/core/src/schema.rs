//! Covariate schema, variable sets, stratum keys and the dense cell grid.
//!
//! Measured risk factors are numbered `0..k` in schema column order. A full
//! assignment of all risk factors is a *cell*; cells are laid out in a
//! mixed-radix grid with factor 0 most significant, so iterating cell indices
//! visits strata in schema level order.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_FACTORS: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub levels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CovariateSchema {
    columns: Vec<Column>,
    /// Column indices of the risk factors, ascending.
    risk_factors: Vec<usize>,
    radix: Vec<usize>,
    strides: Vec<usize>,
    n_cells: usize,
}

pub(crate) fn valid_token(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

impl CovariateSchema {
    pub fn new<S: AsRef<str>>(columns: Vec<Column>, risk_factor_names: &[S]) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for col in &columns {
            if !valid_token(&col.name) {
                return Err(Error::Schema(format!("column name `{}` is not in [A-Za-z0-9_-]", col.name)));
            }
            if !seen.insert(col.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column `{}`", col.name)));
            }
            if col.levels.is_empty() {
                return Err(Error::Schema(format!("column `{}` has no levels", col.name)));
            }
            let mut lv = std::collections::HashSet::new();
            for level in &col.levels {
                if !valid_token(level) {
                    return Err(Error::Schema(format!(
                        "level `{level}` of `{}` is not in [A-Za-z0-9_-]",
                        col.name
                    )));
                }
                if !lv.insert(level.as_str()) {
                    return Err(Error::Schema(format!("duplicate level `{level}` in `{}`", col.name)));
                }
            }
            if col.levels.len() > u16::MAX as usize {
                return Err(Error::Schema(format!("column `{}` has too many levels", col.name)));
            }
        }
        if risk_factor_names.is_empty() {
            return Err(Error::Schema("risk factor set is empty".into()));
        }
        let mut risk_factors = Vec::with_capacity(risk_factor_names.len());
        for name in risk_factor_names {
            let name = name.as_ref();
            let idx = columns
                .iter()
                .position(|c| c.name == name)
                .ok_or_else(|| Error::UnknownCovariate(name.to_string()))?;
            if risk_factors.contains(&idx) {
                return Err(Error::Schema(format!("risk factor `{name}` listed twice")));
            }
            risk_factors.push(idx);
        }
        risk_factors.sort_unstable();
        if risk_factors.len() > MAX_FACTORS {
            return Err(Error::Schema(format!("at most {MAX_FACTORS} risk factors are supported")));
        }
        let radix: Vec<usize> = risk_factors.iter().map(|&c| columns[c].levels.len()).collect();
        let mut strides = vec![1usize; radix.len()];
        for f in (0..radix.len().saturating_sub(1)).rev() {
            strides[f] = strides[f + 1]
                .checked_mul(radix[f + 1])
                .ok_or_else(|| Error::Schema("cell grid too large".into()))?;
        }
        let n_cells = strides[0]
            .checked_mul(radix[0])
            .ok_or_else(|| Error::Schema("cell grid too large".into()))?;
        Ok(Self { columns, risk_factors, radix, strides, n_cells })
    }

    /// A schema whose columns are exactly the risk factors.
    pub fn risk_factors_only(columns: Vec<Column>) -> Result<Arc<Self>> {
        let names: Vec<String> = columns.iter().map(|c| c.name.clone()).collect();
        Ok(Arc::new(Self::new(columns, &names)?))
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn n_factors(&self) -> usize {
        self.risk_factors.len()
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn all_factors(&self) -> VarSet {
        VarSet::full(self.n_factors())
    }

    pub fn factor(&self, name: &str) -> Result<usize> {
        self.risk_factors
            .iter()
            .position(|&c| self.columns[c].name == name)
            .ok_or_else(|| Error::UnknownCovariate(name.to_string()))
    }

    pub fn factor_name(&self, f: usize) -> &str {
        &self.columns[self.risk_factors[f]].name
    }

    pub fn factor_levels(&self, f: usize) -> &[String] {
        &self.columns[self.risk_factors[f]].levels
    }

    pub fn level_index(&self, f: usize, level: &str) -> Option<u16> {
        self.factor_levels(f).iter().position(|l| l == level).map(|i| i as u16)
    }

    pub fn risk_factor_names(&self) -> Vec<&str> {
        (0..self.n_factors()).map(|f| self.factor_name(f)).collect()
    }

    pub fn vars<S: AsRef<str>>(&self, names: &[S]) -> Result<VarSet> {
        let mut set = VarSet::EMPTY;
        for n in names {
            set = set.with(self.factor(n.as_ref())?);
        }
        Ok(set)
    }

    /// Cell index of a full assignment given as level indices per factor.
    pub fn cell_index(&self, levels: &[u16]) -> usize {
        levels.iter().zip(&self.strides).map(|(&l, &s)| l as usize * s).sum()
    }

    pub fn cell_levels(&self, mut cell: usize) -> Vec<u16> {
        let mut out = vec![0u16; self.n_factors()];
        for (slot, &stride) in out.iter_mut().zip(&self.strides) {
            *slot = (cell / stride) as u16;
            cell %= stride;
        }
        out
    }

    pub fn level_of(&self, cell: usize, f: usize) -> u16 {
        ((cell / self.strides[f]) % self.radix[f]) as u16
    }

    /// Number of strata in the cross-product of `vars`.
    pub fn sub_cells(&self, vars: VarSet) -> usize {
        vars.iter().map(|f| self.radix[f]).product()
    }

    /// For every cell, its index in the sub-grid of `vars`.
    pub fn projection(&self, vars: VarSet) -> Vec<usize> {
        let factors: Vec<usize> = vars.iter().collect();
        let mut sub_strides = vec![1usize; factors.len()];
        for i in (0..factors.len().saturating_sub(1)).rev() {
            sub_strides[i] = sub_strides[i + 1] * self.radix[factors[i + 1]];
        }
        (0..self.n_cells)
            .map(|cell| {
                factors
                    .iter()
                    .zip(&sub_strides)
                    .map(|(&f, &s)| self.level_of(cell, f) as usize * s)
                    .sum()
            })
            .collect()
    }

    /// Index in the sub-grid of `vars` of the restriction of `key` to `vars`.
    /// `key` must assign every factor in `vars`.
    pub fn sub_index(&self, vars: VarSet, key: &StratumKey) -> usize {
        let mut idx = 0usize;
        for f in vars.iter() {
            idx = idx * self.radix[f] + key.level(f).expect("key covers vars") as usize;
        }
        idx
    }

    pub fn key_at(&self, vars: VarSet, mut sub: usize) -> StratumKey {
        let factors: Vec<usize> = vars.iter().collect();
        let mut levels = vec![0u16; factors.len()];
        for i in (0..factors.len()).rev() {
            let r = self.radix[factors[i]];
            levels[i] = (sub % r) as u16;
            sub /= r;
        }
        StratumKey { vars, levels }
    }

    /// Key for a cell, restricted to `vars`.
    pub fn cell_key(&self, cell: usize, vars: VarSet) -> StratumKey {
        StratumKey { vars, levels: vars.iter().map(|f| self.level_of(cell, f)).collect() }
    }

    pub fn key<S: AsRef<str>, T: AsRef<str>>(&self, pairs: &[(S, T)]) -> Result<StratumKey> {
        let mut assigned: Vec<(usize, u16)> = Vec::with_capacity(pairs.len());
        for (name, level) in pairs {
            let (name, level) = (name.as_ref(), level.as_ref());
            let f = self.factor(name)?;
            let l = self.level_index(f, level).ok_or_else(|| {
                Error::Schema(format!("`{level}` is not a level of `{name}`"))
            })?;
            if assigned.iter().any(|&(g, _)| g == f) {
                return Err(Error::Schema(format!("covariate `{name}` assigned twice")));
            }
            assigned.push((f, l));
        }
        assigned.sort_unstable();
        let vars = assigned.iter().fold(VarSet::EMPTY, |s, &(f, _)| s.with(f));
        Ok(StratumKey { vars, levels: assigned.into_iter().map(|(_, l)| l).collect() })
    }

    pub fn describe(&self, key: &StratumKey) -> String {
        if key.vars.is_empty() {
            return "(all)".to_string();
        }
        key.iter()
            .map(|(f, l)| format!("{}={}", self.factor_name(f), self.factor_levels(f)[l as usize]))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn describe_vars(&self, vars: VarSet) -> String {
        let names: Vec<&str> = vars.iter().map(|f| self.factor_name(f)).collect();
        format!("{{{}}}", names.join(","))
    }

    /// Level names of `key` in factor order.
    pub fn key_levels(&self, key: &StratumKey) -> Vec<String> {
        key.iter().map(|(f, l)| self.factor_levels(f)[l as usize].clone()).collect()
    }
}

/// A set of risk factors, as a bitmask over factor indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct VarSet(u32);

impl VarSet {
    pub const EMPTY: VarSet = VarSet(0);

    pub fn full(n: usize) -> Self {
        if n >= 32 {
            VarSet(u32::MAX)
        } else {
            VarSet((1u32 << n) - 1)
        }
    }

    pub fn single(f: usize) -> Self {
        VarSet(1 << f)
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn from_bits(bits: u32) -> Self {
        VarSet(bits)
    }

    pub fn with(self, f: usize) -> Self {
        VarSet(self.0 | (1 << f))
    }

    pub fn without(self, f: usize) -> Self {
        VarSet(self.0 & !(1 << f))
    }

    pub fn contains(self, f: usize) -> bool {
        self.0 & (1 << f) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn union(self, other: VarSet) -> Self {
        VarSet(self.0 | other.0)
    }

    pub fn intersection(self, other: VarSet) -> Self {
        VarSet(self.0 & other.0)
    }

    pub fn minus(self, other: VarSet) -> Self {
        VarSet(self.0 & !other.0)
    }

    pub fn is_subset(self, other: VarSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_proper_subset(self, other: VarSet) -> bool {
        self.is_subset(other) && self != other
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..32).filter(move |&f| self.contains(f))
    }

    /// All subsets of `self`, including the empty set and `self`.
    pub fn subsets(self) -> impl Iterator<Item = VarSet> {
        let full = self.0 as u64;
        let mut next = Some(0u64);
        std::iter::from_fn(move || {
            let cur = next?;
            next = if cur == full { None } else { Some(((cur | !full) + 1) & full) };
            Some(VarSet(cur as u32))
        })
    }
}

/// An assignment of one level to each covariate in `vars`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StratumKey {
    vars: VarSet,
    /// Level indices aligned with `vars.iter()`.
    levels: Vec<u16>,
}

impl StratumKey {
    pub fn empty() -> Self {
        StratumKey { vars: VarSet::EMPTY, levels: Vec::new() }
    }

    pub fn vars(&self) -> VarSet {
        self.vars
    }

    pub fn level(&self, f: usize) -> Option<u16> {
        if !self.vars.contains(f) {
            return None;
        }
        let pos = self.vars.iter().position(|g| g == f)?;
        Some(self.levels[pos])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, u16)> + '_ {
        self.vars.iter().zip(self.levels.iter().copied())
    }

    /// Union of two keys over disjoint covariate sets.
    pub fn join(&self, other: &StratumKey) -> StratumKey {
        debug_assert!(self.vars.intersection(other.vars).is_empty());
        let mut pairs: Vec<(usize, u16)> = self.iter().chain(other.iter()).collect();
        pairs.sort_unstable();
        StratumKey {
            vars: self.vars.union(other.vars),
            levels: pairs.into_iter().map(|(_, l)| l).collect(),
        }
    }

    pub fn restrict(&self, vars: VarSet) -> StratumKey {
        let keep = vars.intersection(self.vars);
        StratumKey {
            vars: keep,
            levels: self.iter().filter(|(f, _)| keep.contains(*f)).map(|(_, l)| l).collect(),
        }
    }

    /// True if `cell`'s assignment agrees with this key.
    pub fn matches_cell(&self, schema: &CovariateSchema, cell: usize) -> bool {
        self.iter().all(|(f, l)| schema.level_of(cell, f) == l)
    }
}

impl fmt::Display for StratumKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.iter().map(|(v, l)| format!("#{v}={l}")).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

/// A partition of the risk factors into `e1` (conditioned on) and `e2`
/// (integrated over).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Factorization {
    e1: VarSet,
    e2: VarSet,
}

impl Factorization {
    pub fn new(schema: &CovariateSchema, e1: VarSet) -> Result<Self> {
        let all = schema.all_factors();
        if !e1.is_subset(all) {
            return Err(Error::Spec("E1 contains factors outside the schema".into()));
        }
        Ok(Self { e1, e2: all.minus(e1) })
    }

    pub fn from_names<S: AsRef<str>>(schema: &CovariateSchema, e1: &[S]) -> Result<Self> {
        Self::new(schema, schema.vars(e1)?)
    }

    pub fn e1(&self) -> VarSet {
        self.e1
    }

    pub fn e2(&self) -> VarSet {
        self.e2
    }

    /// Every factorization of the schema's risk factors.
    pub fn all(schema: &CovariateSchema) -> impl Iterator<Item = Factorization> {
        let all = schema.all_factors();
        all.subsets().map(move |e1| Factorization { e1, e2: all.minus(e1) })
    }
}
