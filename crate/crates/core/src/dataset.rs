//! Composite dataset: the index trial appended to one external sample and,
//! optionally, covariate (or control-arm) data from a third target population.
//!
//! Storage is columnar and shared behind an `Arc`; every row also carries a
//! non-negative frequency weight. Bootstrap replicates and exact population
//! tables are both expressed as the same rows under different weights, so
//! estimators never copy the data.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Treatment code.
pub type Treatment = u32;

/// Data source indicator: 0 external, 1 index trial, 2 third target population.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Source(u8);

impl Source {
    pub const EXTERNAL: Source = Source(0);
    pub const TRIAL: Source = Source(1);
    pub const TARGET: Source = Source(2);
    pub const ALL: [Source; 3] = [Source::EXTERNAL, Source::TRIAL, Source::TARGET];

    pub fn new(code: u8) -> Option<Source> {
        (code <= 2).then_some(Source(code))
    }

    pub fn code(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for Source {
    type Error = String;
    fn try_from(code: u8) -> std::result::Result<Self, String> {
        Source::new(code).ok_or_else(|| format!("source code {code} is not one of 0, 1, 2"))
    }
}

impl From<Source> for u8 {
    fn from(s: Source) -> u8 {
        s.0
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateKind {
    Categorical,
    Continuous,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CovariateColumn {
    pub name: String,
    pub kind: CovariateKind,
}

impl CovariateColumn {
    pub fn categorical(name: impl Into<String>) -> Self {
        CovariateColumn {
            name: name.into(),
            kind: CovariateKind::Categorical,
        }
    }

    pub fn continuous(name: impl Into<String>) -> Self {
        CovariateColumn {
            name: name.into(),
            kind: CovariateKind::Continuous,
        }
    }
}

/// Baseline covariates `x_*` (all sources) and external-only covariates `w_*`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSchema {
    pub x: Vec<CovariateColumn>,
    #[serde(default)]
    pub w: Vec<CovariateColumn>,
}

impl CovariateSchema {
    pub fn new(x: Vec<CovariateColumn>, w: Vec<CovariateColumn>) -> Result<Self> {
        let schema = CovariateSchema { x, w };
        schema.validate()?;
        Ok(schema)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for c in &self.x {
            if !c.name.starts_with("x_") {
                return Err(Error::InvalidSchema(format!(
                    "covariate `{}` must be prefixed x_",
                    c.name
                )));
            }
        }
        for c in &self.w {
            if !c.name.starts_with("w_") {
                return Err(Error::InvalidSchema(format!(
                    "external-only covariate `{}` must be prefixed w_",
                    c.name
                )));
            }
        }
        for c in self.x.iter().chain(&self.w) {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::InvalidSchema(format!("duplicate column `{}`", c.name)));
            }
        }
        Ok(())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Binary,
    Continuous,
}

/// Which covariates a model conditions on.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateSet {
    X,
    XW,
}

/// A covariate cell of categorical (or binned) levels.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey(pub Vec<i64>);

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for CellKey {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.trim().is_empty() {
            return Ok(CellKey(Vec::new()));
        }
        s.split(',')
            .map(|p| p.trim().parse::<i64>().map_err(|e| format!("cell `{s}`: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(CellKey)
    }
}

impl Serialize for CellKey {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CellKey {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Per-row cell ids for a fully categorical covariate set.
#[derive(Debug)]
pub struct CellIndex {
    ids: Vec<u32>,
    keys: Vec<CellKey>,
}

impl CellIndex {
    pub const NO_CELL: u32 = u32::MAX;

    /// Cell id of row `i`, or `NO_CELL` when the row lacks a value.
    pub fn id(&self, i: usize) -> u32 {
        self.ids[i]
    }

    pub fn key(&self, id: u32) -> &CellKey {
        &self.keys[id as usize]
    }

    pub fn n_cells(&self) -> usize {
        self.keys.len()
    }
}

/// Cut points for continuous covariates, keyed by column name. A value falls in
/// bin `k` where `k` is the number of cut points less than or equal to it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub cuts: BTreeMap<String, Vec<f64>>,
}

impl Binning {
    pub fn bin(&self, column: &str, value: f64) -> Option<i64> {
        self.cuts
            .get(column)
            .map(|cuts| cuts.iter().filter(|&&c| c <= value).count() as i64)
    }
}

#[derive(Debug)]
struct Table {
    schema: CovariateSchema,
    x: Vec<f64>,
    w: Vec<f64>,
    s: Vec<Source>,
    a: Vec<Option<Treatment>>,
    y: Vec<f64>,
    x_cells: Option<CellIndex>,
    xw_cells: Option<CellIndex>,
}

/// Borrowed view of one row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObservationRecord<'a> {
    pub x: &'a [f64],
    pub w: Option<&'a [f64]>,
    pub s: Source,
    pub a: Option<Treatment>,
    pub y: Option<f64>,
    pub weight: f64,
}

/// Immutable composite dataset. Cloning is cheap.
#[derive(Clone, Debug)]
pub struct CompositeDataset {
    table: Arc<Table>,
    weights: Arc<[f64]>,
    treatment_sets: BTreeMap<Source, BTreeSet<Treatment>>,
    outcome_kind: OutcomeKind,
}

impl CompositeDataset {
    pub fn len(&self) -> usize {
        self.table.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.table.schema
    }

    pub fn outcome_kind(&self) -> OutcomeKind {
        self.outcome_kind
    }

    /// Declared (or, if undeclared, observed) treatment sets per source.
    pub fn treatment_sets(&self) -> &BTreeMap<Source, BTreeSet<Treatment>> {
        &self.treatment_sets
    }

    pub fn treatment_set(&self, s: Source) -> Option<&BTreeSet<Treatment>> {
        self.treatment_sets.get(&s)
    }

    pub fn source(&self, i: usize) -> Source {
        self.table.s[i]
    }

    pub fn treatment(&self, i: usize) -> Option<Treatment> {
        self.table.a[i]
    }

    pub fn outcome(&self, i: usize) -> Option<f64> {
        let y = self.table.y[i];
        (!y.is_nan()).then_some(y)
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn x(&self, i: usize) -> &[f64] {
        let p = self.table.schema.x.len();
        &self.table.x[i * p..(i + 1) * p]
    }

    pub fn w(&self, i: usize) -> Option<&[f64]> {
        let p = self.table.schema.w.len();
        if p == 0 {
            return None;
        }
        let w = &self.table.w[i * p..(i + 1) * p];
        (!w.iter().any(|v| v.is_nan())).then_some(w)
    }

    pub fn record(&self, i: usize) -> ObservationRecord<'_> {
        ObservationRecord {
            x: self.x(i),
            w: self.w(i),
            s: self.source(i),
            a: self.treatment(i),
            y: self.outcome(i),
            weight: self.weight(i),
        }
    }

    pub fn records(&self) -> impl Iterator<Item = ObservationRecord<'_>> + '_ {
        (0..self.len()).map(move |i| self.record(i))
    }

    /// Columns of a covariate set, in model order.
    pub fn columns(&self, set: CovariateSet) -> Vec<CovariateColumn> {
        let schema = &self.table.schema;
        match set {
            CovariateSet::X => schema.x.clone(),
            CovariateSet::XW => schema.x.iter().chain(&schema.w).cloned().collect(),
        }
    }

    /// Covariate values of row `i` for a set; `None` if W is requested but absent.
    pub fn values(&self, set: CovariateSet, i: usize) -> Option<Vec<f64>> {
        match set {
            CovariateSet::X => Some(self.x(i).to_vec()),
            CovariateSet::XW => {
                let w = self.w(i)?;
                Some(self.x(i).iter().chain(w).copied().collect())
            }
        }
    }

    /// Precomputed cell ids, available when every column of the set is categorical.
    pub fn cell_index(&self, set: CovariateSet) -> Option<&CellIndex> {
        match set {
            CovariateSet::X => self.table.x_cells.as_ref(),
            CovariateSet::XW => self.table.xw_cells.as_ref(),
        }
    }

    pub fn has_w(&self) -> bool {
        !self.table.schema.w.is_empty()
    }

    /// The same rows under different frequency weights.
    pub fn reweighted(&self, weights: Vec<f64>) -> CompositeDataset {
        assert_eq!(weights.len(), self.len(), "one weight per row");
        CompositeDataset {
            table: Arc::clone(&self.table),
            weights: weights.into(),
            treatment_sets: self.treatment_sets.clone(),
            outcome_kind: self.outcome_kind,
        }
    }

    /// Total weight per source.
    pub fn source_totals(&self) -> BTreeMap<Source, f64> {
        let mut out = BTreeMap::new();
        for i in 0..self.len() {
            *out.entry(self.source(i)).or_insert(0.0) += self.weight(i);
        }
        out
    }

    /// Total weight per observed (s, a) cell; `a` is `None` for covariate-only rows.
    pub fn cell_counts(&self) -> BTreeMap<(Source, Option<Treatment>), f64> {
        let mut out = BTreeMap::new();
        for i in 0..self.len() {
            *out.entry((self.source(i), self.treatment(i))).or_insert(0.0) += self.weight(i);
        }
        out
    }

    /// Row indices belonging to source `s` (any weight).
    pub fn rows_in(&self, s: Source) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| self.source(i) == s)
    }

    /// Cell key of row `i` over X, binning continuous columns.
    pub fn x_cell(&self, i: usize, binning: Option<&Binning>) -> Result<CellKey> {
        if let Some(index) = &self.table.x_cells {
            return Ok(index.key(index.id(i)).clone());
        }
        let cols = &self.table.schema.x;
        let mut key = Vec::with_capacity(cols.len());
        for (c, &v) in cols.iter().zip(self.x(i)) {
            key.push(match c.kind {
                CovariateKind::Categorical => v as i64,
                CovariateKind::Continuous => binning
                    .and_then(|b| b.bin(&c.name, v))
                    .ok_or_else(|| Error::ContinuousWithoutBinning(c.name.clone()))?,
            });
        }
        Ok(CellKey(key))
    }
}

/// Incremental construction with validation at `build`.
pub struct DatasetBuilder {
    schema: CovariateSchema,
    outcome_kind: OutcomeKind,
    x: Vec<f64>,
    w: Vec<f64>,
    s: Vec<Source>,
    a: Vec<Option<Treatment>>,
    y: Vec<f64>,
    weights: Vec<f64>,
}

impl DatasetBuilder {
    pub fn new(schema: CovariateSchema, outcome_kind: OutcomeKind) -> Self {
        DatasetBuilder {
            schema,
            outcome_kind,
            x: Vec::new(),
            w: Vec::new(),
            s: Vec::new(),
            a: Vec::new(),
            y: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn with_capacity(mut self, n: usize) -> Self {
        self.x.reserve(n * self.schema.x.len());
        self.w.reserve(n * self.schema.w.len());
        self.s.reserve(n);
        self.a.reserve(n);
        self.y.reserve(n);
        self.weights.reserve(n);
        self
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// Appends one row. `x` must match the schema arity; `w` may be absent.
    pub fn push(
        &mut self,
        x: &[f64],
        w: Option<&[f64]>,
        s: Source,
        a: Option<Treatment>,
        y: Option<f64>,
        weight: f64,
    ) {
        assert_eq!(x.len(), self.schema.x.len(), "x arity");
        self.x.extend_from_slice(x);
        let pw = self.schema.w.len();
        match w {
            Some(w) => {
                assert_eq!(w.len(), pw, "w arity");
                self.w.extend_from_slice(w);
            }
            None => self.w.extend(std::iter::repeat_n(f64::NAN, pw)),
        }
        self.s.push(s);
        self.a.push(a);
        self.y.push(y.unwrap_or(f64::NAN));
        self.weights.push(weight);
    }

    /// Validates and freezes the rows. Without declared sets, the observed
    /// treatments per source become the treatment sets.
    pub fn build(
        self,
        declared: Option<BTreeMap<Source, BTreeSet<Treatment>>>,
    ) -> Result<CompositeDataset> {
        self.schema.validate()?;
        let n = self.s.len();
        let px = self.schema.x.len();
        let pw = self.schema.w.len();
        if !self.s.contains(&Source::TRIAL) {
            return Err(Error::EmptySource);
        }
        let mut observed: BTreeMap<Source, BTreeSet<Treatment>> = BTreeMap::new();
        for i in 0..n {
            let s = self.s[i];
            match (self.a[i], self.y[i].is_nan()) {
                (Some(a), false) => {
                    observed.entry(s).or_default().insert(a);
                }
                (None, true) if s == Source::TARGET => {
                    observed.entry(s).or_default();
                }
                (None, _) => {
                    return Err(Error::MissingValue {
                        row: i,
                        column: "a".into(),
                    })
                }
                (Some(_), true) => {
                    return Err(Error::MissingValue {
                        row: i,
                        column: "y".into(),
                    })
                }
            }
            let y = self.y[i];
            if !y.is_nan() {
                if !y.is_finite() {
                    return Err(Error::NonNumericCell {
                        row: i,
                        column: "y".into(),
                        value: y.to_string(),
                    });
                }
                if self.outcome_kind == OutcomeKind::Binary && y != 0.0 && y != 1.0 {
                    return Err(Error::NonBinaryOutcome { row: i, value: y });
                }
            }
            if !(self.weights[i].is_finite() && self.weights[i] >= 0.0) {
                return Err(Error::InvalidSchema(format!(
                    "row {i}: weight must be finite and non-negative"
                )));
            }
            for (j, c) in self.schema.x.iter().enumerate() {
                check_value(i, c, self.x[i * px + j], false)?;
            }
            for (j, c) in self.schema.w.iter().enumerate() {
                check_value(i, c, self.w[i * pw + j], true)?;
            }
        }
        let treatment_sets = match declared {
            Some(declared) => {
                for (s, obs) in &observed {
                    let allowed = declared.get(s);
                    for &a in obs {
                        if !allowed.is_some_and(|set| set.contains(&a)) {
                            return Err(Error::TreatmentOutsideDeclaredSet {
                                s: *s,
                                a,
                            });
                        }
                    }
                }
                declared
            }
            None => observed,
        };

        let x_cells = build_cells(&self.schema.x, px, &self.x, None, n);
        let xw_cells = if pw == 0 {
            None
        } else {
            let all_cols: Vec<_> = self.schema.x.iter().chain(&self.schema.w).cloned().collect();
            build_cells(&all_cols, px, &self.x, Some((pw, &self.w)), n)
        };
        Ok(CompositeDataset {
            table: Arc::new(Table {
                schema: self.schema,
                x: self.x,
                w: self.w,
                s: self.s,
                a: self.a,
                y: self.y,
                x_cells,
                xw_cells,
            }),
            weights: self.weights.into(),
            treatment_sets,
            outcome_kind: self.outcome_kind,
        })
    }
}

fn check_value(row: usize, c: &CovariateColumn, v: f64, optional: bool) -> Result<()> {
    if v.is_nan() {
        if optional {
            return Ok(());
        }
        return Err(Error::MissingValue {
            row,
            column: c.name.clone(),
        });
    }
    if !v.is_finite() {
        return Err(Error::NonNumericCell {
            row,
            column: c.name.clone(),
            value: v.to_string(),
        });
    }
    if c.kind == CovariateKind::Categorical && v.fract() != 0.0 {
        return Err(Error::NonIntegerLevel {
            row,
            column: c.name.clone(),
            value: v,
        });
    }
    Ok(())
}

fn build_cells(
    cols: &[CovariateColumn],
    px: usize,
    x: &[f64],
    w: Option<(usize, &[f64])>,
    n: usize,
) -> Option<CellIndex> {
    if cols.iter().any(|c| c.kind == CovariateKind::Continuous) {
        return None;
    }
    let mut lookup: HashMap<Vec<i64>, u32> = HashMap::new();
    let mut keys = Vec::new();
    let mut ids = Vec::with_capacity(n);
    for i in 0..n {
        let mut key: Vec<i64> = x[i * px..(i + 1) * px].iter().map(|&v| v as i64).collect();
        if let Some((pw, w)) = w {
            let wi = &w[i * pw..(i + 1) * pw];
            if wi.iter().any(|v| v.is_nan()) {
                ids.push(CellIndex::NO_CELL);
                continue;
            }
            key.extend(wi.iter().map(|&v| v as i64));
        }
        let next = keys.len() as u32;
        let id = *lookup.entry(key.clone()).or_insert_with(|| {
            keys.push(CellKey(key));
            next
        });
        ids.push(id);
    }
    Some(CellIndex { ids, keys })
}

/// Load options. Unset fields are inferred from the file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Covariate columns and kinds. When absent every `x_*`/`w_*` header column
    /// is used; integer-valued columns with at most 20 levels are categorical.
    #[serde(default)]
    pub covariates: Option<CovariateSchema>,
    /// Declared treatment sets per source.
    #[serde(default)]
    pub treatment_sets: Option<BTreeMap<Source, BTreeSet<Treatment>>>,
    /// Outcome kind. When absent, binary if every outcome is 0 or 1.
    #[serde(default)]
    pub outcome_kind: Option<OutcomeKind>,
}

const MAX_INFERRED_LEVELS: usize = 20;

pub fn load_csv(path: impl AsRef<Path>, options: &LoadOptions) -> Result<CompositeDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, options)
}

pub fn read_csv<R: Read>(reader: R, options: &LoadOptions) -> Result<CompositeDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))
    };
    let (s_col, a_col, y_col) = (col("s")?, col("a")?, col("y")?);
    let rows: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;

    let parse = |row: usize, column: &str, raw: &str| -> Result<Option<f64>> {
        if raw.is_empty() {
            return Ok(None);
        }
        raw.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Some)
            .ok_or_else(|| Error::NonNumericCell {
                row,
                column: column.to_owned(),
                value: raw.to_owned(),
            })
    };

    let schema = match &options.covariates {
        Some(schema) => {
            for c in schema.x.iter().chain(&schema.w) {
                col(&c.name)?;
            }
            schema.clone()
        }
        None => {
            let infer = |prefix: &str| -> Result<Vec<CovariateColumn>> {
                let mut out = Vec::new();
                for (j, name) in header.iter().enumerate() {
                    if !name.starts_with(prefix) {
                        continue;
                    }
                    let mut levels = BTreeSet::new();
                    let mut integral = true;
                    for (i, r) in rows.iter().enumerate() {
                        if let Some(v) = parse(i, name, r.get(j).unwrap_or(""))? {
                            integral &= v.fract() == 0.0;
                            if integral {
                                levels.insert(v as i64);
                            }
                        }
                    }
                    let kind = if integral && levels.len() <= MAX_INFERRED_LEVELS {
                        CovariateKind::Categorical
                    } else {
                        CovariateKind::Continuous
                    };
                    out.push(CovariateColumn {
                        name: name.clone(),
                        kind,
                    });
                }
                Ok(out)
            };
            CovariateSchema::new(infer("x_")?, infer("w_")?)?
        }
    };
    let x_idx: Vec<usize> = schema.x.iter().map(|c| col(&c.name)).collect::<Result<_>>()?;
    let w_idx: Vec<usize> = schema.w.iter().map(|c| col(&c.name)).collect::<Result<_>>()?;

    let outcome_kind = match options.outcome_kind {
        Some(kind) => kind,
        None => {
            let mut binary = true;
            for (i, r) in rows.iter().enumerate() {
                if let Some(y) = parse(i, "y", r.get(y_col).unwrap_or(""))? {
                    binary &= y == 0.0 || y == 1.0;
                }
            }
            if binary {
                OutcomeKind::Binary
            } else {
                OutcomeKind::Continuous
            }
        }
    };

    let mut builder = DatasetBuilder::new(schema.clone(), outcome_kind).with_capacity(rows.len());
    let mut x = vec![0.0; x_idx.len()];
    let mut w = vec![0.0; w_idx.len()];
    for (i, r) in rows.iter().enumerate() {
        let get = |j: usize| r.get(j).unwrap_or("");
        let s_raw = get(s_col);
        let s = s_raw
            .parse::<u8>()
            .ok()
            .and_then(Source::new)
            .ok_or_else(|| {
                if s_raw.is_empty() {
                    Error::MissingValue {
                        row: i,
                        column: "s".into(),
                    }
                } else {
                    Error::InvalidSource {
                        row: i,
                        code: s_raw.to_owned(),
                    }
                }
            })?;
        for (slot, (&j, c)) in x.iter_mut().zip(x_idx.iter().zip(&schema.x)) {
            *slot = parse(i, &c.name, get(j))?.ok_or_else(|| Error::MissingValue {
                row: i,
                column: c.name.clone(),
            })?;
        }
        let mut w_present = !w_idx.is_empty();
        for (slot, (&j, c)) in w.iter_mut().zip(w_idx.iter().zip(&schema.w)) {
            match parse(i, &c.name, get(j))? {
                Some(v) => *slot = v,
                None => w_present = false,
            }
        }
        let a_raw = get(a_col);
        let a = if a_raw.is_empty() {
            None
        } else {
            Some(a_raw.parse::<Treatment>().map_err(|_| Error::NonNumericCell {
                row: i,
                column: "a".into(),
                value: a_raw.to_owned(),
            })?)
        };
        let y = parse(i, "y", get(y_col))?;
        builder.push(&x, w_present.then_some(&w[..]), s, a, y, 1.0);
    }
    builder.build(options.treatment_sets.clone())
}

/// Writes the rows as CSV (`x_*`, `w_*`, `s`, `a`, `y`). Weights are not written.
pub fn write_csv<W: Write>(data: &CompositeDataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let schema = data.schema();
    let mut header: Vec<&str> = schema.x.iter().chain(&schema.w).map(|c| c.name.as_str()).collect();
    header.extend(["s", "a", "y"]);
    wtr.write_record(&header)?;
    let fmt_cov = |c: &CovariateColumn, v: f64| match c.kind {
        CovariateKind::Categorical => format!("{}", v as i64),
        CovariateKind::Continuous => format!("{v}"),
    };
    let mut fields: Vec<String> = Vec::with_capacity(header.len());
    for i in 0..data.len() {
        fields.clear();
        for (c, &v) in schema.x.iter().zip(data.x(i)) {
            fields.push(fmt_cov(c, v));
        }
        match data.w(i) {
            Some(w) => {
                for (c, &v) in schema.w.iter().zip(w) {
                    fields.push(fmt_cov(c, v));
                }
            }
            None => fields.extend(std::iter::repeat_n(String::new(), schema.w.len())),
        }
        fields.push(data.source(i).to_string());
        fields.push(data.treatment(i).map(|a| a.to_string()).unwrap_or_default());
        fields.push(match data.outcome(i) {
            None => String::new(),
            Some(y) if data.outcome_kind() == OutcomeKind::Binary => format!("{}", y as i64),
            Some(y) => format!("{y}"),
        });
        wtr.write_record(&fields)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_csv(data: &CompositeDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(data, std::io::BufWriter::new(file))
}

/// Covariate cells seen (with positive weight) in two sources.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SupportReport {
    pub first: Source,
    pub second: Source,
    pub shared: BTreeSet<CellKey>,
    pub only_in_first: BTreeSet<CellKey>,
    pub only_in_second: BTreeSet<CellKey>,
}

pub fn common_support(
    data: &CompositeDataset,
    first: Source,
    second: Source,
    binning: Option<&Binning>,
) -> Result<SupportReport> {
    let mut a = BTreeSet::new();
    let mut b = BTreeSet::new();
    for i in 0..data.len() {
        if data.weight(i) <= 0.0 {
            continue;
        }
        let s = data.source(i);
        if s == first {
            a.insert(data.x_cell(i, binning)?);
        } else if s == second {
            b.insert(data.x_cell(i, binning)?);
        }
    }
    Ok(SupportReport {
        first,
        second,
        shared: a.intersection(&b).cloned().collect(),
        only_in_first: a.difference(&b).cloned().collect(),
        only_in_second: b.difference(&a).cloned().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> Result<CompositeDataset> {
        read_csv(text.as_bytes(), &LoadOptions::default())
    }

    const SIX_ROWS: &str = "x_1,s,a,y\n0,1,0,1\n1,1,1,0\n0,1,1,1\n1,0,0,0\n0,0,2,1\n1,0,2,1\n";

    #[test]
    fn infers_treatment_sets_from_rows() {
        let d = load(SIX_ROWS).unwrap();
        assert_eq!(d.len(), 6);
        assert_eq!(d.outcome_kind(), OutcomeKind::Binary);
        let sets = d.treatment_sets();
        assert_eq!(sets[&Source::TRIAL], BTreeSet::from([0, 1]));
        assert_eq!(sets[&Source::EXTERNAL], BTreeSet::from([0, 2]));
        assert_eq!(d.cell_counts()[&(Source::EXTERNAL, Some(2))], 2.0);
        // row order preserved
        assert_eq!(d.record(4).a, Some(2));
        assert_eq!(d.record(1).x, &[1.0]);
    }

    #[test]
    fn rejects_treatment_outside_declared_set() {
        let opts = LoadOptions {
            treatment_sets: Some(BTreeMap::from([
                (Source::TRIAL, BTreeSet::from([0, 1])),
                (Source::EXTERNAL, BTreeSet::from([0, 2])),
            ])),
            ..Default::default()
        };
        let text = "x_1,s,a,y\n0,1,0,1\n1,1,3,0\n0,0,2,1\n";
        let err = read_csv(text.as_bytes(), &opts).unwrap_err();
        assert!(matches!(
            err,
            Error::TreatmentOutsideDeclaredSet {
                s: Source::TRIAL,
                a: 3
            }
        ));
    }

    #[test]
    fn rejects_missing_trial() {
        let err = load("x_1,s,a,y\n0,0,0,1\n1,0,2,0\n").unwrap_err();
        assert!(matches!(err, Error::EmptySource));
    }

    #[test]
    fn rejects_missing_column_and_bad_cells() {
        assert!(matches!(load("x_1,s,y\n0,1,1\n"), Err(Error::MissingColumn(c)) if c == "a"));
        assert!(matches!(
            load("x_1,s,a,y\nfoo,1,0,1\n"),
            Err(Error::NonNumericCell { row: 0, .. })
        ));
        assert!(matches!(
            load("x_1,s,a,y\n0,1,0,\n"),
            Err(Error::MissingValue { row: 0, .. })
        ));
        assert!(matches!(
            load("x_1,s,a,y\n0,3,0,1\n"),
            Err(Error::InvalidSource { row: 0, .. })
        ));
        let opts = LoadOptions {
            covariates: Some(CovariateSchema::new(vec![CovariateColumn::categorical("x_2")], vec![]).unwrap()),
            ..Default::default()
        };
        assert!(matches!(
            read_csv("x_1,s,a,y\n0,1,0,1\n".as_bytes(), &opts),
            Err(Error::MissingColumn(c)) if c == "x_2"
        ));
    }

    #[test]
    fn w_may_be_absent_outside_external_rows_and_target_rows_may_be_covariates_only() {
        let d = load("x_1,w_1,s,a,y\n0,,1,0,1\n1,1,0,2,0\n0,,2,,\n").unwrap();
        assert!(d.w(0).is_none());
        assert_eq!(d.w(1), Some(&[1.0][..]));
        assert_eq!(d.record(2).a, None);
        assert_eq!(d.record(2).y, None);
        assert_eq!(d.cell_index(CovariateSet::XW).unwrap().id(0), CellIndex::NO_CELL);
    }

    #[test]
    fn continuous_outcome_and_covariate_inference() {
        let d = load("x_1,x_2,s,a,y\n0.5,1,1,0,1.25\n1.5,2,1,1,0.5\n").unwrap();
        assert_eq!(d.outcome_kind(), OutcomeKind::Continuous);
        assert_eq!(d.schema().x[0].kind, CovariateKind::Continuous);
        assert_eq!(d.schema().x[1].kind, CovariateKind::Categorical);
        assert!(d.cell_index(CovariateSet::X).is_none());
    }

    #[test]
    fn common_support_reports_gaps() {
        let d = load("x_1,s,a,y\n0,1,0,1\n1,1,1,0\n0,0,0,1\n0,0,2,1\n").unwrap();
        let r = common_support(&d, Source::TRIAL, Source::EXTERNAL, None).unwrap();
        assert_eq!(r.shared, BTreeSet::from([CellKey(vec![0])]));
        assert_eq!(r.only_in_first, BTreeSet::from([CellKey(vec![1])]));
        assert!(r.only_in_second.is_empty());

        let full = load(SIX_ROWS).unwrap();
        let r = common_support(&full, Source::TRIAL, Source::EXTERNAL, None).unwrap();
        assert_eq!(r.shared, BTreeSet::from([CellKey(vec![0]), CellKey(vec![1])]));
        assert!(r.only_in_first.is_empty() && r.only_in_second.is_empty());
    }

    #[test]
    fn common_support_needs_binning_for_continuous() {
        let d = load("x_1,s,a,y\n0.5,1,0,1\n1.5,0,0,0\n").unwrap();
        assert!(matches!(
            common_support(&d, Source::TRIAL, Source::EXTERNAL, None),
            Err(Error::ContinuousWithoutBinning(_))
        ));
        let binning = Binning {
            cuts: BTreeMap::from([("x_1".to_string(), vec![1.0])]),
        };
        let r = common_support(&d, Source::TRIAL, Source::EXTERNAL, Some(&binning)).unwrap();
        assert!(r.shared.is_empty());
        assert_eq!(r.only_in_first, BTreeSet::from([CellKey(vec![0])]));
        assert_eq!(r.only_in_second, BTreeSet::from([CellKey(vec![1])]));
    }

    #[test]
    fn cell_key_text_round_trip() {
        let k: CellKey = "0,-3,12".parse().unwrap();
        assert_eq!(k, CellKey(vec![0, -3, 12]));
        assert_eq!(k.to_string(), "0,-3,12");
    }
}
