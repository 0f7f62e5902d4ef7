//! Data-level checks: the control-arm falsification test and positivity audits.
//!
//! Both reports are pure functions of the dataset and options; they never fit
//! parametric models, so every probability is an empirical cell frequency.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::{Binning, CellKey, CompositeDataset, CovariateSet, Source, Treatment};
use crate::error::{Error, Result};

/// Weighted first and second moments of an outcome within one cell.
#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    n: f64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn add(&mut self, weight: f64, y: f64) {
        self.n += weight;
        self.sum += weight * y;
        self.sum_sq += weight * y * y;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n
    }

    /// Frequency-weighted sample variance; undefined below two rows.
    fn variance(&self) -> Option<f64> {
        (self.n > 1.0).then(|| ((self.sum_sq - self.n * self.mean().powi(2)) / (self.n - 1.0)).max(0.0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FalsificationOptions {
    /// Control treatment compared across the two sources.
    pub control: Treatment,
    /// Largest tolerated |difference / standard error|.
    pub threshold: f64,
    /// Largest tolerated absolute difference in cells with enough rows.
    pub margin: f64,
    /// Rows each side needs before the margin rule applies.
    pub min_cell_rows: f64,
    pub binning: Option<Binning>,
}

impl Default for FalsificationOptions {
    fn default() -> Self {
        FalsificationOptions {
            control: 0,
            threshold: 4.0,
            margin: 0.05,
            min_cell_rows: 30.0,
            binning: None,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Consistent,
    Violated,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Consistent => "consistent",
            Verdict::Violated => "violated",
        })
    }
}

/// One covariate cell of the control-arm comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FalsificationCell {
    pub x: CellKey,
    pub mean_trial: f64,
    pub mean_external: f64,
    /// Trial mean minus external mean.
    pub difference: f64,
    pub std_error: Option<f64>,
    pub z: Option<f64>,
    pub n_trial: f64,
    pub n_external: f64,
    pub flagged: bool,
}

/// Cell-by-cell comparison of E[Y | X, S=1, A=0] with E[Y | X, S=0, A=0].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FalsificationReport {
    pub options: FalsificationOptions,
    pub cells: Vec<FalsificationCell>,
    /// Control-arm cells seen in one source only; they are not compared.
    pub trial_only: Vec<CellKey>,
    pub external_only: Vec<CellKey>,
    pub max_abs_z: Option<f64>,
    pub max_abs_difference: f64,
    pub verdict: Verdict,
}

fn flag(cell: &FalsificationCell, o: &FalsificationOptions) -> bool {
    let z_rule = cell.z.is_some_and(|z| z.abs() > o.threshold);
    let margin_rule =
        cell.difference.abs() > o.margin && cell.n_trial >= o.min_cell_rows && cell.n_external >= o.min_cell_rows;
    z_rule || margin_rule
}

/// Compares control-arm outcome means between the trial and the external
/// source within every covariate cell both of them populate.
pub fn falsification_test(data: &CompositeDataset, options: &FalsificationOptions) -> Result<FalsificationReport> {
    let mut by_source: [BTreeMap<CellKey, Moments>; 2] = Default::default();
    for i in 0..data.len() {
        let s = data.source(i);
        if s == Source::TARGET || data.treatment(i) != Some(options.control) || data.weight(i) <= 0.0 {
            continue;
        }
        let (Some(y), key) = (data.outcome(i), data.x_cell(i, options.binning.as_ref())?) else {
            continue;
        };
        by_source[usize::from(s.code())].entry(key).or_default().add(data.weight(i), y);
    }
    let [external, trial] = by_source;
    for (s, cells) in [(Source::TRIAL, &trial), (Source::EXTERNAL, &external)] {
        if cells.is_empty() {
            return Err(Error::MissingControlArm { s, a: options.control });
        }
    }

    let mut cells = Vec::new();
    for (x, t) in &trial {
        let Some(e) = external.get(x) else { continue };
        let difference = t.mean() - e.mean();
        let std_error = t.variance().zip(e.variance()).map(|(vt, ve)| (vt / t.n + ve / e.n).sqrt());
        let z = match std_error {
            Some(se) if se > 0.0 => Some(difference / se),
            Some(_) if difference == 0.0 => Some(0.0),
            _ => None,
        };
        let mut cell = FalsificationCell {
            x: x.clone(),
            mean_trial: t.mean(),
            mean_external: e.mean(),
            difference,
            std_error,
            z,
            n_trial: t.n,
            n_external: e.n,
            flagged: false,
        };
        cell.flagged = flag(&cell, options);
        cells.push(cell);
    }
    if cells.is_empty() {
        return Err(Error::NoCommonSupport);
    }
    let verdict = if cells.iter().any(|c| c.flagged) {
        Verdict::Violated
    } else {
        Verdict::Consistent
    };
    Ok(FalsificationReport {
        options: options.clone(),
        trial_only: trial.keys().filter(|k| !external.contains_key(k)).cloned().collect(),
        external_only: external.keys().filter(|k| !trial.contains_key(k)).cloned().collect(),
        max_abs_z: cells.iter().filter_map(|c| c.z.map(f64::abs)).reduce(f64::max),
        max_abs_difference: cells.iter().map(|c| c.difference.abs()).fold(0.0, f64::max),
        cells,
        verdict,
    })
}

impl FalsificationReport {
    /// Recomputes the verdict from the table alone.
    pub fn verdict_from_table(&self) -> Verdict {
        if self.cells.iter().any(|c| flag(c, &self.options)) {
            Verdict::Violated
        } else {
            Verdict::Consistent
        }
    }
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.digits$}"))
}

/// Renders rows as left-aligned text columns separated by two spaces.
pub(crate) fn aligned(rows: &[Vec<String>]) -> String {
    let ncol = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..ncol)
        .map(|j| rows.iter().filter_map(|r| r.get(j)).map(|c| c.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

impl fmt::Display for FalsificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut rows = vec![["x", "mean_s1", "mean_s0", "diff", "se", "z", "n_s1", "n_s0", "flag"]
            .map(String::from)
            .to_vec()];
        for c in &self.cells {
            rows.push(vec![
                c.x.to_string(),
                format!("{:.4}", c.mean_trial),
                format!("{:.4}", c.mean_external),
                format!("{:+.4}", c.difference),
                opt(c.std_error, 4),
                opt(c.z, 2),
                format!("{}", c.n_trial),
                format!("{}", c.n_external),
                if c.flagged { "*".into() } else { String::new() },
            ]);
        }
        writeln!(
            f,
            "control-arm comparison (a={}): {} (threshold {}, margin {})",
            self.options.control, self.verdict, self.options.threshold, self.options.margin
        )?;
        f.write_str(&aligned(&rows))?;
        if !self.trial_only.is_empty() || !self.external_only.is_empty() {
            let list = |v: &[CellKey]| v.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(" ");
            writeln!(f, "not compared: s=1 only [{}], s=0 only [{}]", list(&self.trial_only), list(&self.external_only))?;
        }
        Ok(())
    }
}

/// Positivity conditions the audit can check.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PositivityCondition {
    /// Every declared trial treatment in every trial covariate cell.
    A3,
    /// Every trial covariate cell also in the external source.
    A5,
    /// Every declared external treatment in every trial covariate cell.
    A8,
    /// Every declared external treatment in every external (X, W) cell.
    #[serde(rename = "A8'")]
    A8Prime,
    /// Every third-population covariate cell in the trial and external sources.
    #[serde(rename = "A5*")]
    A5Star,
    /// Treatment 0 in every third-population covariate cell.
    #[serde(rename = "A8*")]
    A8Star,
}

impl PositivityCondition {
    pub const ALL: [PositivityCondition; 6] = [
        PositivityCondition::A3,
        PositivityCondition::A5,
        PositivityCondition::A8,
        PositivityCondition::A8Prime,
        PositivityCondition::A5Star,
        PositivityCondition::A8Star,
    ];

    pub fn label(self) -> &'static str {
        match self {
            PositivityCondition::A3 => "A3",
            PositivityCondition::A5 => "A5",
            PositivityCondition::A8 => "A8",
            PositivityCondition::A8Prime => "A8'",
            PositivityCondition::A5Star => "A5*",
            PositivityCondition::A8Star => "A8*",
        }
    }

    /// Conditions that can be evaluated on `data`.
    pub fn applicable(data: &CompositeDataset) -> Vec<PositivityCondition> {
        let target = data.rows_in(Source::TARGET).any(|i| data.weight(i) > 0.0);
        PositivityCondition::ALL
            .into_iter()
            .filter(|c| match c {
                PositivityCondition::A8Prime => data.has_w(),
                PositivityCondition::A5Star | PositivityCondition::A8Star => target,
                _ => true,
            })
            .collect()
    }
}

impl fmt::Display for PositivityCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PositivityOptions {
    /// Smallest acceptable estimated probability.
    pub floor: f64,
    /// Smallest acceptable number of rows carrying the event.
    pub min_count: f64,
    pub binning: Option<Binning>,
}

impl Default for PositivityOptions {
    fn default() -> Self {
        PositivityOptions {
            floor: 0.01,
            min_count: 5.0,
            binning: None,
        }
    }
}

/// A covariate cell where an event is too rare.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositivityViolation {
    pub condition: PositivityCondition,
    pub cell: CellKey,
    /// Source whose membership or treatment is assessed.
    pub source: Source,
    pub treatment: Option<Treatment>,
    pub probability: f64,
    pub count: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub options: PositivityOptions,
    pub violations: Vec<PositivityViolation>,
    /// Per audited condition: true when it has no violations.
    pub satisfied: BTreeMap<PositivityCondition, bool>,
}

impl PositivityReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for PositivityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flags: Vec<String> = self
            .satisfied
            .iter()
            .map(|(c, ok)| format!("{c}={}", if *ok { "ok" } else { "violated" }))
            .collect();
        writeln!(f, "positivity: {}", flags.join(" "))?;
        if self.violations.is_empty() {
            return Ok(());
        }
        let mut rows = vec![["condition", "cell", "source", "a", "prob", "count"].map(String::from).to_vec()];
        for v in &self.violations {
            rows.push(vec![
                v.condition.to_string(),
                v.cell.to_string(),
                v.source.to_string(),
                v.treatment.map_or_else(|| "-".into(), |a| a.to_string()),
                format!("{:.4}", v.probability),
                format!("{}", v.count),
            ]);
        }
        f.write_str(&aligned(&rows))
    }
}

/// Weighted row totals per (source, cell) and per (source, cell, treatment).
#[derive(Default)]
struct CellTotals {
    cell: BTreeMap<(Source, CellKey), f64>,
    treated: BTreeMap<(Source, CellKey, Treatment), f64>,
    /// Rows with an observed treatment, per (source, cell).
    with_treatment: BTreeMap<(Source, CellKey), f64>,
}

impl CellTotals {
    fn collect(data: &CompositeDataset, keys: impl Fn(usize) -> Result<Option<CellKey>>) -> Result<Self> {
        let mut t = CellTotals::default();
        for i in 0..data.len() {
            let w = data.weight(i);
            if w <= 0.0 {
                continue;
            }
            let Some(key) = keys(i)? else { continue };
            let s = data.source(i);
            *t.cell.entry((s, key.clone())).or_default() += w;
            if let Some(a) = data.treatment(i) {
                *t.with_treatment.entry((s, key.clone())).or_default() += w;
                *t.treated.entry((s, key, a)).or_default() += w;
            }
        }
        Ok(t)
    }

    fn cells_of(&self, s: Source) -> BTreeSet<CellKey> {
        self.cell.keys().filter(|(t, _)| *t == s).map(|(_, k)| k.clone()).collect()
    }

    fn total(&self, s: Source, key: &CellKey) -> f64 {
        self.cell.get(&(s, key.clone())).copied().unwrap_or(0.0)
    }

    /// Pr[A=a | X=key, S=s] among rows with an observed treatment, and the
    /// number of such rows with A=a.
    fn treatment(&self, s: Source, key: &CellKey, a: Treatment) -> (f64, f64) {
        let count = self.treated.get(&(s, key.clone(), a)).copied().unwrap_or(0.0);
        let total = self.with_treatment.get(&(s, key.clone())).copied().unwrap_or(0.0);
        (if total > 0.0 { count / total } else { 0.0 }, count)
    }

    /// Pr[S=s | X=key, S in {s, other}] and the number of rows from `s`.
    fn membership(&self, s: Source, other: Source, key: &CellKey) -> (f64, f64) {
        let (n, m) = (self.total(s, key), self.total(other, key));
        (if n + m > 0.0 { n / (n + m) } else { 0.0 }, n)
    }
}

/// Lists covariate cells where a required source membership or treatment has
/// estimated probability below the floor or too few rows.
pub fn positivity_audit(
    data: &CompositeDataset,
    conditions: &[PositivityCondition],
    options: &PositivityOptions,
) -> Result<PositivityReport> {
    let binning = options.binning.as_ref();
    let x = CellTotals::collect(data, |i| data.x_cell(i, binning).map(Some))?;
    let trial_cells = x.cells_of(Source::TRIAL);
    let declared = |s: Source| data.treatment_set(s).cloned().unwrap_or_default();

    let mut violations = Vec::new();
    let mut satisfied = BTreeMap::new();
    for &condition in conditions {
        let mut found = Vec::new();
        let mut check = |cell: &CellKey, source, treatment, (probability, count): (f64, f64)| {
            if probability < options.floor || count < options.min_count {
                found.push(PositivityViolation {
                    condition,
                    cell: cell.clone(),
                    source,
                    treatment,
                    probability,
                    count,
                });
            }
        };
        match condition {
            PositivityCondition::A3 => {
                for cell in &trial_cells {
                    for a in declared(Source::TRIAL) {
                        check(cell, Source::TRIAL, Some(a), x.treatment(Source::TRIAL, cell, a));
                    }
                }
            }
            PositivityCondition::A5 => {
                for cell in &trial_cells {
                    check(cell, Source::EXTERNAL, None, x.membership(Source::EXTERNAL, Source::TRIAL, cell));
                }
            }
            PositivityCondition::A8 => {
                for cell in &trial_cells {
                    for a in declared(Source::EXTERNAL) {
                        check(cell, Source::EXTERNAL, Some(a), x.treatment(Source::EXTERNAL, cell, a));
                    }
                }
            }
            PositivityCondition::A8Prime => {
                if !data.has_w() {
                    return Err(Error::MissingW(data.rows_in(Source::EXTERNAL).count().max(1)));
                }
                let xw = CellTotals::collect(data, |i| {
                    if data.source(i) != Source::EXTERNAL {
                        return Ok(None);
                    }
                    let mut key = data.x_cell(i, binning)?;
                    let Some(values) = data.values(CovariateSet::XW, i) else {
                        return Err(Error::MissingW(1));
                    };
                    key.0.extend(values[key.0.len()..].iter().map(|&v| v as i64));
                    Ok(Some(key))
                })?;
                for cell in &xw.cells_of(Source::EXTERNAL) {
                    for a in declared(Source::EXTERNAL) {
                        check(cell, Source::EXTERNAL, Some(a), xw.treatment(Source::EXTERNAL, cell, a));
                    }
                }
            }
            PositivityCondition::A5Star | PositivityCondition::A8Star => {
                let target_cells = x.cells_of(Source::TARGET);
                if target_cells.is_empty() {
                    return Err(Error::EmptyTarget(Source::TARGET));
                }
                for cell in &target_cells {
                    if condition == PositivityCondition::A5Star {
                        for s in [Source::TRIAL, Source::EXTERNAL] {
                            check(cell, s, None, x.membership(s, Source::TARGET, cell));
                        }
                    } else {
                        check(cell, Source::TARGET, Some(0), x.treatment(Source::TARGET, cell, 0));
                    }
                }
            }
        }
        satisfied.insert(condition, found.is_empty());
        violations.extend(found);
    }
    Ok(PositivityReport {
        options: options.clone(),
        violations,
        satisfied,
    })
}
