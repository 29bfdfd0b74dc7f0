//! Seeded synthetic datasets used by the property checks, the acceptance
//! suite and `stdrate nest-check`.
//!
//! Every generator takes an explicit 64-bit seed and uses ChaCha8, so the
//! same seed yields the same tables on every platform.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dist::{build_from_counts, EmpiricalJoint};
use crate::schema::{Column, CovariateSchema};
use crate::weights::WeightMeasure;

/// The two-covariate table used throughout the documentation:
/// {(M,young):(10,100), (M,old):(30,100), (F,young):(10,200), (F,old):(20,100)}.
pub fn toy_table() -> EmpiricalJoint {
    let schema = CovariateSchema::risk_factors_only(vec![
        Column { name: "sex".into(), levels: vec!["M".into(), "F".into()] },
        Column { name: "age".into(), levels: vec!["young".into(), "old".into()] },
    ])
    .expect("valid toy schema");
    counts_table(&schema, "y", &[(10, 100), (30, 100), (10, 200), (20, 100)])
}

/// Builds a joint from dense `(cases, total)` pairs in cell order.
pub fn counts_table(schema: &Arc<CovariateSchema>, period: &str, cells: &[(u64, u64)]) -> EmpiricalJoint {
    let all = schema.all_factors();
    let rows = cells.iter().enumerate().map(|(cell, &(c, n))| (schema.key_at(all, cell), c, n));
    build_from_counts(rows, schema.clone(), period).expect("valid fixture counts")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A schema with `levels.len()` risk factors named `v0, v1, ...`; factor `i`
/// has `levels[i]` levels `l0, l1, ...`.
pub fn grid_schema(levels: &[usize]) -> Arc<CovariateSchema> {
    let columns = levels
        .iter()
        .enumerate()
        .map(|(i, &n)| Column { name: format!("v{i}"), levels: (0..n).map(|l| format!("l{l}")).collect() })
        .collect();
    CovariateSchema::risk_factors_only(columns).expect("valid grid schema")
}

/// Random schema with 1..=`max_factors` factors of 2..=`max_levels` levels.
pub fn random_schema(rng: &mut ChaCha8Rng, max_factors: usize, max_levels: usize) -> Arc<CovariateSchema> {
    let k = rng.gen_range(1..=max_factors);
    let levels: Vec<usize> = (0..k).map(|_| rng.gen_range(2..=max_levels.max(2))).collect();
    grid_schema(&levels)
}

/// Random counts with every cell populated (`n_total` in 1..=`max_total`).
pub fn random_joint(rng: &mut ChaCha8Rng, schema: &Arc<CovariateSchema>, period: &str, max_total: u64) -> EmpiricalJoint {
    let cells: Vec<(u64, u64)> = (0..schema.n_cells())
        .map(|_| {
            let n = rng.gen_range(1..=max_total);
            (rng.gen_range(0..=n), n)
        })
        .collect();
    counts_table(schema, period, &cells)
}

/// Random full-support weight measure (integer masses 1..=100, normalized).
pub fn random_weight(rng: &mut ChaCha8Rng, schema: &Arc<CovariateSchema>) -> WeightMeasure {
    let counts: Vec<u64> = (0..schema.n_cells()).map(|_| rng.gen_range(1..=100)).collect();
    WeightMeasure::from_counts(schema.clone(), schema.all_factors(), &counts).expect("positive masses")
}

/// A random dataset on a random schema with at most `max_factors` factors
/// of at most `max_levels` levels.
pub fn random_dataset(seed: u64, max_factors: usize, max_levels: usize) -> EmpiricalJoint {
    let mut r = rng(seed);
    let schema = random_schema(&mut r, max_factors, max_levels);
    random_joint(&mut r, &schema, "y", 500)
}

/// Two periods with identical finest-crude rates P(D | e), all strictly
/// between 0 and 1, but independently drawn covariate distributions. Cell `e` has base counts `(c_e, n_e)` and
/// each period scales them by its own positive multiplier.
pub fn shared_rates_pair(rng: &mut ChaCha8Rng, schema: &Arc<CovariateSchema>) -> (EmpiricalJoint, EmpiricalJoint) {
    let base: Vec<(u64, u64)> = (0..schema.n_cells())
        .map(|_| {
            let n = rng.gen_range(5..=60);
            (rng.gen_range(1..n), n)
        })
        .collect();
    let scaled = |rng: &mut ChaCha8Rng| -> Vec<(u64, u64)> {
        base.iter()
            .map(|&(c, n)| {
                let k = rng.gen_range(1..=9);
                (c * k, n * k)
            })
            .collect()
    };
    let a = scaled(rng);
    let b = scaled(rng);
    (counts_table(schema, "A", &a), counts_table(schema, "B", &b))
}

/// A dataset in which the age factor is independent of the other factors:
/// n_total(a, e) = m_a · k_e. Cases are drawn freely.
pub fn age_independent_joint(
    rng: &mut ChaCha8Rng,
    schema: &Arc<CovariateSchema>,
    age: usize,
    period: &str,
) -> EmpiricalJoint {
    let age_levels = schema.factor_levels(age).len();
    let m: Vec<u64> = (0..age_levels).map(|_| rng.gen_range(1..=12)).collect();
    let rest = schema.all_factors().without(age);
    let k: Vec<u64> = (0..schema.sub_cells(rest)).map(|_| rng.gen_range(1..=12)).collect();
    let proj = schema.projection(rest);
    let cells: Vec<(u64, u64)> = (0..schema.n_cells())
        .map(|cell| {
            let n = m[schema.level_of(cell, age) as usize] * k[proj[cell]];
            (rng.gen_range(0..=n), n)
        })
        .collect();
    counts_table(schema, period, &cells)
}

/// Schema used by the confounding fixtures: sex × age × race, two levels
/// each.
pub fn sex_age_race_schema() -> Arc<CovariateSchema> {
    CovariateSchema::risk_factors_only(vec![
        Column { name: "sex".into(), levels: vec!["M".into(), "F".into()] },
        Column { name: "age".into(), levels: vec!["young".into(), "old".into()] },
        Column { name: "race".into(), levels: vec!["white".into(), "black".into()] },
    ])
    .expect("valid schema")
}
