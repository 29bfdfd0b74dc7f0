//! File formats: schema JSON, microdata CSV, count CSV and weight CSV.
//!
//! CSV files are comma separated UTF-8 with `\n` line endings and a header
//! row. Levels are restricted to `[A-Za-z0-9_-]`, so no quoting is needed.

use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use num_rational::BigRational;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::dist::{EmpiricalJoint, Tally};
use crate::error::{Error, Result};
use crate::scalar::parse_rational;
use crate::schema::{Column, CovariateSchema, StratumKey};
use crate::weights::WeightMeasure;

pub const FORMAT_VERSION: u32 = 1;

fn default_outcome() -> String {
    "outcome".to_string()
}

/// On-disk schema description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaFile {
    pub format_version: u32,
    /// Microdata column holding the 0/1 outcome.
    #[serde(default = "default_outcome")]
    pub outcome: String,
    pub columns: Vec<Column>,
    pub risk_factors: Vec<String>,
}

/// A validated schema together with the name of its outcome column.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSchema {
    pub outcome: String,
    pub schema: Arc<CovariateSchema>,
}

impl DataSchema {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: SchemaFile = serde_json::from_str(text)?;
        if file.format_version != FORMAT_VERSION {
            return Err(Error::Schema(format!("unsupported format_version {}", file.format_version)));
        }
        if file.columns.iter().any(|c| c.name == file.outcome) {
            return Err(Error::Schema(format!("outcome `{}` is also declared as a covariate", file.outcome)));
        }
        let schema = CovariateSchema::new(file.columns, &file.risk_factors)?;
        Ok(Self { outcome: file.outcome, schema: Arc::new(schema) })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_text(path)?).map_err(|e| e.in_stage(format!("schema {}", path.display())))
    }

    /// The schema after applying `filters`: every filtered column keeps only
    /// the listed levels, in schema order.
    pub fn restrict(&self, filters: &[RowFilter]) -> Result<Self> {
        if filters.is_empty() {
            return Ok(self.clone());
        }
        let mut columns = self.schema.columns().to_vec();
        for f in filters {
            let column = columns
                .iter_mut()
                .find(|c| c.name == f.column)
                .ok_or_else(|| Error::UnknownCovariate(f.column.clone()))?;
            if let Some(bad) = f.levels.iter().find(|l| !column.levels.contains(l)) {
                return Err(Error::Config(format!("filter on `{}` names unknown level `{bad}`", f.column)));
            }
            column.levels.retain(|l| f.levels.contains(l));
        }
        let risk: Vec<&str> = self.schema.risk_factor_names();
        let schema = CovariateSchema::new(columns, &risk)?;
        Ok(Self { outcome: self.outcome.clone(), schema: Arc::new(schema) })
    }

    /// Schema file text, for example for tables produced without one.
    pub fn to_json(&self) -> String {
        let file = SchemaFile {
            format_version: FORMAT_VERSION,
            outcome: self.outcome.clone(),
            columns: self.schema.columns().to_vec(),
            risk_factors: self.schema.risk_factor_names().into_iter().map(String::from).collect(),
        };
        let mut text = serde_json::to_string_pretty(&file).expect("schema serializes");
        text.push('\n');
        text
    }

    /// Canonical compact JSON of the covariate part, used for hashing.
    pub fn canonical_json(&self) -> String {
        #[derive(Serialize)]
        struct Canonical<'a> {
            columns: &'a [Column],
            risk_factors: Vec<&'a str>,
        }
        serde_json::to_string(&Canonical { columns: self.schema.columns(), risk_factors: self.schema.risk_factor_names() })
            .expect("schema serializes")
    }
}

/// Keeps rows whose `column` value is one of `levels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowFilter {
    pub column: String,
    #[serde(rename = "in")]
    pub levels: Vec<String>,
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader)
}

fn line_of(record: &csv::StringRecord) -> usize {
    record.position().map_or(0, |p| p.line() as usize)
}

fn header_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Config(format!("missing column `{name}` in header")))
}

/// How each source column maps onto the restricted schema: `None` marks a
/// level removed by a filter.
struct LevelMap {
    header: usize,
    name: String,
    levels: Vec<String>,
    target: Vec<Option<u16>>,
    factor: Option<usize>,
}

fn level_maps(source: &DataSchema, target: &DataSchema, headers: &csv::StringRecord, only_risk: bool) -> Result<Vec<LevelMap>> {
    let mut maps = Vec::new();
    for column in source.schema.columns() {
        let factor = target.schema.factor(&column.name).ok();
        if only_risk && factor.is_none() {
            continue;
        }
        let kept = &target.schema.columns()[target.schema.column_index(&column.name).expect("same columns")].levels;
        let target_index: Vec<Option<u16>> = column
            .levels
            .iter()
            .map(|l| kept.iter().position(|k| k == l).map(|i| i as u16))
            .collect();
        maps.push(LevelMap {
            header: header_index(headers, &column.name)?,
            name: column.name.clone(),
            levels: column.levels.clone(),
            target: target_index,
            factor,
        });
    }
    Ok(maps)
}

/// Maps a record to a cell of the restricted schema. `Ok(None)` means a
/// filter removed the row.
fn record_cell(maps: &[LevelMap], target: &CovariateSchema, record: &csv::StringRecord) -> Result<Option<usize>> {
    let row = line_of(record);
    let mut levels = vec![0u16; target.n_factors()];
    let mut kept = true;
    for m in maps {
        let value = record.get(m.header).unwrap_or("");
        let l = m.levels.iter().position(|x| x == value).ok_or_else(|| Error::Row {
            row,
            message: format!("unknown level `{value}` for column `{}`", m.name),
        })?;
        match (m.target[l], m.factor) {
            (None, _) => kept = false,
            (Some(t), Some(f)) => levels[f] = t,
            (Some(_), None) => {}
        }
    }
    Ok(kept.then(|| target.cell_index(&levels)))
}

/// Rows read and rows removed by filters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub rows: u64,
    pub filtered: u64,
}

/// Tallies a microdata CSV with one row per person: the outcome column
/// (`0` or `1`) and every schema column. Extra columns are ignored.
pub fn read_microdata<R: Read>(
    reader: R,
    source: &DataSchema,
    filters: &[RowFilter],
    period: &str,
) -> Result<(EmpiricalJoint, IngestStats)> {
    let target = source.restrict(filters)?;
    let mut csv = csv_reader(reader);
    let headers = csv.headers()?.clone();
    let outcome = header_index(&headers, &source.outcome)?;
    let maps = level_maps(source, &target, &headers, false)?;
    let mut tally = Tally::new(target.schema.clone());
    let mut stats = IngestStats::default();
    for record in csv.records() {
        let record = record?;
        let row = line_of(&record);
        stats.rows += 1;
        let case = match record.get(outcome).unwrap_or("") {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Row { row, message: format!("outcome `{other}` is not 0 or 1") });
            }
        };
        match record_cell(&maps, &target.schema, &record)? {
            Some(cell) => tally.add_cell(case, cell),
            None => stats.filtered += 1,
        }
    }
    Ok((tally.finish(period), stats))
}

pub fn load_microdata(path: &Path, source: &DataSchema, filters: &[RowFilter], period: &str) -> Result<(EmpiricalJoint, IngestStats)> {
    read_microdata(open(path)?, source, filters, period)
}

/// Reads a count CSV: one row per full risk-factor stratum with `n_cases`
/// and `n_total`. Absent strata count as empty.
pub fn read_counts<R: Read>(
    reader: R,
    source: &DataSchema,
    filters: &[RowFilter],
    period: &str,
) -> Result<(EmpiricalJoint, IngestStats)> {
    for f in filters {
        if source.schema.factor(&f.column).is_err() {
            return Err(Error::Config(format!("count tables cannot be filtered on non-risk column `{}`", f.column)));
        }
    }
    let target = source.restrict(filters)?;
    let mut csv = csv_reader(reader);
    let headers = csv.headers()?.clone();
    let known: Vec<&str> = source.schema.risk_factor_names().into_iter().chain(["n_cases", "n_total"]).collect();
    if let Some(extra) = headers.iter().find(|h| !known.contains(h)) {
        return Err(Error::Config(format!("unexpected column `{extra}` in count table")));
    }
    let cases_at = header_index(&headers, "n_cases")?;
    let total_at = header_index(&headers, "n_total")?;
    let maps = level_maps(source, &target, &headers, true)?;
    let n = target.schema.n_cells();
    let (mut cases, mut totals, mut seen) = (vec![0u64; n], vec![0u64; n], vec![false; n]);
    let mut stats = IngestStats::default();
    for record in csv.records() {
        let record = record?;
        let row = line_of(&record);
        stats.rows += 1;
        let count = |at: usize, what: &str| -> Result<u64> {
            let text = record.get(at).unwrap_or("");
            text.parse().map_err(|_| Error::Row { row, message: format!("{what} `{text}` is not a non-negative integer") })
        };
        let (c, t) = (count(cases_at, "n_cases")?, count(total_at, "n_total")?);
        let Some(cell) = record_cell(&maps, &target.schema, &record)? else {
            stats.filtered += 1;
            continue;
        };
        let describe = || target.schema.describe(&target.schema.cell_key(cell, target.schema.all_factors()));
        if std::mem::replace(&mut seen[cell], true) {
            return Err(Error::Row { row, message: format!("duplicate stratum {}", describe()) });
        }
        if c > t {
            return Err(Error::Row { row, message: format!("n_cases {c} exceeds n_total {t}") });
        }
        cases[cell] = c;
        totals[cell] = t;
    }
    Ok((EmpiricalJoint::from_cells(target.schema.clone(), period, cases, totals)?, stats))
}

pub fn load_counts(path: &Path, source: &DataSchema, filters: &[RowFilter], period: &str) -> Result<(EmpiricalJoint, IngestStats)> {
    read_counts(open(path)?, source, filters, period)
}

/// Count CSV of a joint, every stratum in cell order.
pub fn write_counts(dist: &EmpiricalJoint) -> String {
    let schema = dist.schema();
    let all = schema.all_factors();
    let mut out = String::new();
    for name in schema.risk_factor_names() {
        out.push_str(name);
        out.push(',');
    }
    out.push_str("n_cases,n_total\n");
    for cell in 0..schema.n_cells() {
        for level in schema.key_levels(&schema.key_at(all, cell)) {
            out.push_str(&level);
            out.push(',');
        }
        out.push_str(&format!("{},{}\n", dist.cases()[cell], dist.totals()[cell]));
    }
    out
}

/// Reads a weight CSV: some risk-factor columns plus `weight`, one row per
/// stratum of those columns. Weights are exact decimals or fractions and
/// must sum to one. When filters remove rows, the remaining weights are
/// rescaled to sum to one.
pub fn read_weight<R: Read>(reader: R, source: &DataSchema, filters: &[RowFilter]) -> Result<WeightMeasure> {
    let target = source.restrict(filters)?;
    let mut csv = csv_reader(reader);
    let headers = csv.headers()?.clone();
    let weight_at = header_index(&headers, "weight")?;
    let mut names = Vec::new();
    for h in headers.iter().filter(|h| *h != "weight") {
        if source.schema.factor(h).is_err() {
            return Err(Error::Config(format!("weight column `{h}` is not a risk factor")));
        }
        names.push(h.to_string());
    }
    let scope = target.schema.vars(&names)?;
    let mut entries: Vec<(StratumKey, BigRational)> = Vec::new();
    let (mut total, mut kept) = (BigRational::zero(), BigRational::zero());
    for record in csv.records() {
        let record = record?;
        let row = line_of(&record);
        let text = record.get(weight_at).unwrap_or("");
        let w = parse_rational(text)
            .filter(|w| !w.is_negative())
            .ok_or_else(|| Error::Row { row, message: format!("weight `{text}` is not a non-negative number") })?;
        total += &w;
        let mut pairs = Vec::new();
        let mut removed = false;
        for name in &names {
            let value = record.get(header_index(&headers, name)?).unwrap_or("");
            let f = source.schema.factor(name)?;
            if source.schema.level_index(f, value).is_none() {
                return Err(Error::Row { row, message: format!("unknown level `{value}` for column `{name}`") });
            }
            let tf = target.schema.factor(name)?;
            if target.schema.level_index(tf, value).is_none() {
                removed = true;
            }
            pairs.push((name.as_str(), value));
        }
        if removed {
            continue;
        }
        kept += &w;
        entries.push((target.schema.key(&pairs)?, w));
    }
    if (crate::scalar::rational_to_f64(&total) - 1.0).abs() > crate::weights::NORMALIZATION_TOL {
        return Err(Error::Weight(format!("weights sum to {}, not 1", crate::scalar::rational_to_f64(&total))));
    }
    if kept.is_zero() {
        return Err(Error::Weight("filters remove every weighted stratum".into()));
    }
    let entries = entries.into_iter().map(|(k, w)| (k, w / &kept));
    WeightMeasure::from_entries(target.schema.clone(), scope, entries)
}

pub fn load_weight(path: &Path, source: &DataSchema, filters: &[RowFilter]) -> Result<WeightMeasure> {
    read_weight(open(path)?, source, filters)
}

/// Weight CSV of a measure over its scope, masses as exact fractions.
pub fn write_weight(weight: &WeightMeasure) -> String {
    let schema = weight.schema();
    let scope = weight.scope();
    let mut out = String::new();
    for f in scope.iter() {
        out.push_str(schema.factor_name(f));
        out.push(',');
    }
    out.push_str("weight\n");
    for (i, m) in weight.masses().iter().enumerate() {
        for level in schema.key_levels(&schema.key_at(scope, i)) {
            out.push_str(&level);
            out.push(',');
        }
        out.push_str(&m.to_string());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::rational_from_u64;

    const SCHEMA: &str = r#"{
        "format_version": 1,
        "outcome": "colon",
        "columns": [
            {"name": "sex", "levels": ["M", "F"]},
            {"name": "age", "levels": ["a00-39", "a40-64", "a65p"]},
            {"name": "county", "levels": ["north", "south"]}
        ],
        "risk_factors": ["sex", "age"]
    }"#;

    fn schema() -> DataSchema {
        DataSchema::from_json(SCHEMA).unwrap()
    }

    #[test]
    fn schema_loading_validates() {
        let s = schema();
        assert_eq!(s.outcome, "colon");
        assert_eq!(s.schema.n_cells(), 6);
        let bad = SCHEMA.replace("a65p", "65+");
        assert!(matches!(DataSchema::from_json(&bad), Err(Error::Schema(_))));
        let bad = SCHEMA.replace("\"format_version\": 1", "\"format_version\": 9");
        assert!(DataSchema::from_json(&bad).is_err());
        let bad = SCHEMA.replace("\"outcome\": \"colon\"", "\"outcome\": \"sex\"");
        assert!(DataSchema::from_json(&bad).is_err());
    }

    #[test]
    fn microdata_tally_and_filters() {
        let data = "colon,sex,age,county,extra\n1,M,a40-64,north,x\n0,M,a40-64,south,y\n0,F,a00-39,north,z\n1,F,a65p,south,w\n";
        let (d, stats) = read_microdata(data.as_bytes(), &schema(), &[], "1990").unwrap();
        assert_eq!(stats, IngestStats { rows: 4, filtered: 0 });
        assert_eq!(d.population(), 4);
        assert_eq!(d.total_cases(), 2);
        let filters = [
            RowFilter { column: "age".into(), levels: vec!["a40-64".into(), "a65p".into()] },
            RowFilter { column: "county".into(), levels: vec!["north".into()] },
        ];
        let (d, stats) = read_microdata(data.as_bytes(), &schema(), &filters, "1990").unwrap();
        assert_eq!(stats, IngestStats { rows: 4, filtered: 3 });
        assert_eq!(d.schema().n_cells(), 4);
        assert_eq!(d.population(), 1);
        assert_eq!(d.cases()[0], 1);
    }

    #[test]
    fn microdata_errors_name_the_row() {
        let data = "colon,sex,age,county\n1,M,a40-64,north\n0,X,a40-64,south\n";
        let err = read_microdata(data.as_bytes(), &schema(), &[], "y").unwrap_err();
        assert_eq!(err.to_string(), "row 3: unknown level `X` for column `sex`");
        let data = "colon,sex,age,county\n2,M,a40-64,north\n";
        assert!(matches!(read_microdata(data.as_bytes(), &schema(), &[], "y"), Err(Error::Row { row: 2, .. })));
        let data = "colon,sex,age\n1,M,a40-64\n";
        assert!(matches!(read_microdata(data.as_bytes(), &schema(), &[], "y"), Err(Error::Config(_))));
    }

    #[test]
    fn count_table_round_trip() {
        let data = "sex,age,n_cases,n_total\nM,a00-39,1,10\nF,a65p,3,4\nM,a65p,0,0\n";
        let (d, _) = read_counts(data.as_bytes(), &schema(), &[], "2000").unwrap();
        assert_eq!(d.totals(), &[10, 0, 0, 0, 0, 4]);
        let text = write_counts(&d);
        assert!(text.starts_with("sex,age,n_cases,n_total\nM,a00-39,1,10\n"));
        let (back, _) = read_counts(text.as_bytes(), &schema(), &[], "2000").unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn count_table_errors() {
        let s = schema();
        let dup = "sex,age,n_cases,n_total\nM,a00-39,1,10\nM,a00-39,1,10\n";
        assert!(matches!(read_counts(dup.as_bytes(), &s, &[], "y"), Err(Error::Row { row: 3, .. })));
        let over = "sex,age,n_cases,n_total\nM,a00-39,11,10\n";
        assert!(matches!(read_counts(over.as_bytes(), &s, &[], "y"), Err(Error::Row { row: 2, .. })));
        let extra = "sex,age,county,n_cases,n_total\n";
        assert!(read_counts(extra.as_bytes(), &s, &[], "y").is_err());
        let county = [RowFilter { column: "county".into(), levels: vec!["north".into()] }];
        assert!(read_counts("sex,age,n_cases,n_total\n".as_bytes(), &s, &county, "y").is_err());
    }

    #[test]
    fn weights_read_exactly_and_rescale_after_filters() {
        let text = "age,weight\na00-39,0.5\na40-64,0.3\na65p,1/5\n";
        let w = read_weight(text.as_bytes(), &schema(), &[]).unwrap();
        assert_eq!(w.masses()[2], rational_from_u64(1, 5));
        let filters = [RowFilter { column: "age".into(), levels: vec!["a40-64".into(), "a65p".into()] }];
        let w = read_weight(text.as_bytes(), &schema(), &filters).unwrap();
        assert_eq!(w.masses(), &[rational_from_u64(3, 5), rational_from_u64(2, 5)]);
        let back = read_weight(write_weight(&w).as_bytes(), &schema().restrict(&filters).unwrap(), &[]).unwrap();
        assert_eq!(back, w);
        assert!(read_weight("age,weight\na00-39,0.5\n".as_bytes(), &schema(), &[]).is_err());
        assert!(read_weight("county,weight\nnorth,1\n".as_bytes(), &schema(), &[]).is_err());
    }

    #[test]
    fn restriction_rejects_unknown_names() {
        let s = schema();
        assert!(s.restrict(&[RowFilter { column: "zip".into(), levels: vec![] }]).is_err());
        assert!(s.restrict(&[RowFilter { column: "age".into(), levels: vec!["a99".into()] }]).is_err());
        assert!(s.restrict(&[RowFilter { column: "age".into(), levels: vec![] }]).is_err());
    }
}
