//! Conditional outcome means and propensities fitted on subsets of the
//! composite dataset.
//!
//! Three families are available: a saturated cell-mean table (categorical
//! covariates only), a linear mean, and a logistic mean fitted by IRLS. The
//! default (`FamilyChoice::Auto`) is saturated when every covariate is
//! categorical and every cell of the fitting subset has at least
//! `min_cell_rows` rows of weight, otherwise logistic for 0/1 responses and
//! linear for continuous ones.

mod design;
mod irls;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use design::Terms;
use design::DesignEncoder;

use crate::dataset::{
    CellIndex, CellKey, CompositeDataset, CovariateKind, CovariateSet, OutcomeKind, Source, Treatment,
};
use crate::error::{Error, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Saturated,
    Linear,
    Logistic,
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyChoice {
    #[default]
    Auto,
    Saturated,
    Linear,
    Logistic,
}

impl From<Family> for FamilyChoice {
    fn from(f: Family) -> Self {
        match f {
            Family::Saturated => FamilyChoice::Saturated,
            Family::Linear => FamilyChoice::Linear,
            Family::Logistic => FamilyChoice::Logistic,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IrlsConfig {
    /// Converged when the largest absolute coefficient change falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for IrlsConfig {
    fn default() -> Self {
        IrlsConfig {
            tolerance: 1e-8,
            max_iterations: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NuisanceConfig {
    pub outcome_family: FamilyChoice,
    pub propensity_family: FamilyChoice,
    /// Family for the second-stage regression of the nested functional.
    pub stage_two_family: FamilyChoice,
    pub terms: Terms,
    /// Smallest per-cell weight for which `Auto` picks the saturated family.
    pub min_cell_rows: f64,
    /// Floor applied to propensities used as weighting denominators.
    pub propensity_floor: f64,
    /// Fraction of floored denominators above which weighting estimators fail.
    pub max_floored_fraction: f64,
    pub irls: IrlsConfig,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        NuisanceConfig {
            outcome_family: FamilyChoice::Auto,
            propensity_family: FamilyChoice::Auto,
            stage_two_family: FamilyChoice::Auto,
            terms: Terms::MainEffects,
            min_cell_rows: 5.0,
            propensity_floor: 1e-6,
            max_floored_fraction: 0.01,
            irls: IrlsConfig::default(),
        }
    }
}

impl NuisanceConfig {
    /// Saturated cell means for every nuisance function.
    pub fn saturated() -> Self {
        NuisanceConfig {
            outcome_family: FamilyChoice::Saturated,
            propensity_family: FamilyChoice::Saturated,
            stage_two_family: FamilyChoice::Saturated,
            ..Default::default()
        }
    }
}

/// Rows a model is fitted on: a set of sources, optionally one treatment.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Subset {
    pub sources: Vec<Source>,
    pub treatment: Option<Treatment>,
}

impl Subset {
    pub fn cell(source: Source, treatment: Treatment) -> Self {
        Subset {
            sources: vec![source],
            treatment: Some(treatment),
        }
    }

    pub fn source(source: Source) -> Self {
        Subset {
            sources: vec![source],
            treatment: None,
        }
    }

    pub fn sources(sources: &[Source], treatment: Option<Treatment>) -> Self {
        let mut sources = sources.to_vec();
        sources.sort();
        sources.dedup();
        Subset { sources, treatment }
    }

    pub fn all() -> Self {
        Subset::sources(&Source::ALL, None)
    }

    pub fn contains(&self, data: &CompositeDataset, i: usize) -> bool {
        self.sources.contains(&data.source(i))
            && self.treatment.is_none_or(|a| data.treatment(i) == Some(a))
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: Vec<String> = self.sources.iter().map(|s| s.to_string()).collect();
        write!(f, "{{s in [{}]", s.join(","))?;
        if let Some(a) = self.treatment {
            write!(f, ", a={a}")?;
        }
        f.write_str("}")
    }
}

/// What a model regresses on the covariates.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Response<'a> {
    Outcome,
    SourceIs(Source),
    TreatmentIs(Treatment),
    /// One value per row of the dataset (only subset rows are read).
    Values(&'a [f64]),
}

impl Response<'_> {
    fn value(&self, data: &CompositeDataset, i: usize) -> Option<f64> {
        match *self {
            Response::Outcome => data.outcome(i),
            Response::SourceIs(s) => Some(if data.source(i) == s { 1.0 } else { 0.0 }),
            Response::TreatmentIs(a) => data.treatment(i).map(|t| if t == a { 1.0 } else { 0.0 }),
            Response::Values(v) => Some(v[i]),
        }
    }

    fn describe(&self) -> String {
        match self {
            Response::Outcome => "y".into(),
            Response::SourceIs(s) => format!("1[s={s}]"),
            Response::TreatmentIs(a) => format!("1[a={a}]"),
            Response::Values(_) => "fitted values".into(),
        }
    }

    fn is_binary(&self, data: &CompositeDataset) -> bool {
        match self {
            Response::Outcome => data.outcome_kind() == OutcomeKind::Binary,
            Response::SourceIs(_) | Response::TreatmentIs(_) => true,
            Response::Values(_) => false,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CellEntry {
    pub cell: CellKey,
    pub mean: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TermCoefficient {
    pub term: String,
    pub value: f64,
}

#[derive(Clone, Debug)]
enum Engine {
    Saturated(HashMap<CellKey, usize>),
    Regression {
        encoder: DesignEncoder,
        beta: Vec<f64>,
    },
}

/// A fitted conditional mean of a response given covariates on a subset.
/// Serializes to the reproducibility dump (family, conditioning set, cell
/// table or coefficients).
#[derive(Clone, Debug, Serialize)]
pub struct OutcomeModel {
    pub family: Family,
    pub covariate_set: CovariateSet,
    pub covariates: Vec<String>,
    pub subset: Subset,
    pub response: String,
    pub n_rows: usize,
    pub total_weight: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub cells: Vec<CellEntry>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub coefficients: Vec<TermCoefficient>,
    pub iterations: usize,
    pub converged: bool,
    #[serde(skip)]
    engine: Engine,
}

impl OutcomeModel {
    /// Prediction at a covariate vector ordered as `self.covariates`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.covariates.len() {
            return Err(Error::CovariateArity {
                expected: self.covariates.len(),
                got: x.len(),
            });
        }
        match &self.engine {
            Engine::Saturated(lookup) => {
                let key = CellKey(x.iter().map(|&v| v as i64).collect());
                lookup
                    .get(&key)
                    .map(|&k| self.cells[k].mean)
                    .ok_or_else(|| Error::UnseenCategoryLevel(key.to_string()))
            }
            Engine::Regression { encoder, beta } => {
                let mut row = Vec::with_capacity(beta.len());
                encoder.encode(x, &mut row)?;
                let eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
                Ok(match self.family {
                    Family::Logistic => irls::logistic(eta),
                    _ => eta,
                })
            }
        }
    }

    fn predict_key(&self, key: &CellKey) -> Result<f64> {
        match &self.engine {
            Engine::Saturated(lookup) => lookup
                .get(key)
                .map(|&k| self.cells[k].mean)
                .ok_or_else(|| Error::UnseenCategoryLevel(key.to_string())),
            Engine::Regression { .. } => {
                let x: Vec<f64> = key.0.iter().map(|&v| v as f64).collect();
                self.predict(&x)
            }
        }
    }

    /// Evaluator for rows of `data`, memoized per covariate cell when the data
    /// are fully categorical.
    pub fn predictor<'a>(&'a self, data: &'a CompositeDataset) -> RowPredictor<'a> {
        let index = data.cell_index(self.covariate_set);
        RowPredictor {
            model: self,
            data,
            index,
            memo: vec![f64::NAN; index.map_or(0, CellIndex::n_cells)],
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("model dump is plain data")
    }
}

pub struct RowPredictor<'a> {
    model: &'a OutcomeModel,
    data: &'a CompositeDataset,
    index: Option<&'a CellIndex>,
    memo: Vec<f64>,
}

impl RowPredictor<'_> {
    pub fn predict(&mut self, i: usize) -> Result<f64> {
        if let Some(index) = self.index {
            let id = index.id(i);
            if id == CellIndex::NO_CELL {
                return Err(Error::MissingW(1));
            }
            let slot = &mut self.memo[id as usize];
            if slot.is_nan() {
                *slot = self.model.predict_key(index.key(id))?;
            }
            return Ok(*slot);
        }
        let x = self
            .data
            .values(self.model.covariate_set, i)
            .ok_or(Error::MissingW(1))?;
        self.model.predict(&x)
    }
}

fn resolve_family(
    choice: FamilyChoice,
    data: &CompositeDataset,
    set: CovariateSet,
    rows: &[usize],
    binary: bool,
    min_cell_rows: f64,
) -> Family {
    match choice {
        FamilyChoice::Saturated => Family::Saturated,
        FamilyChoice::Linear => Family::Linear,
        FamilyChoice::Logistic => Family::Logistic,
        FamilyChoice::Auto => {
            let fallback = if binary { Family::Logistic } else { Family::Linear };
            let Some(index) = data.cell_index(set) else {
                return fallback;
            };
            let mut totals = vec![0.0; index.n_cells()];
            for &i in rows {
                totals[index.id(i) as usize] += data.weight(i);
            }
            let sparse = totals.iter().any(|&t| t > 0.0 && t < min_cell_rows);
            if sparse {
                fallback
            } else {
                Family::Saturated
            }
        }
    }
}

pub(crate) fn fit_model(
    data: &CompositeDataset,
    set: CovariateSet,
    subset: &Subset,
    response: Response<'_>,
    choice: FamilyChoice,
    config: &NuisanceConfig,
) -> Result<OutcomeModel> {
    let mut rows = Vec::new();
    let mut missing_w = 0;
    for i in 0..data.len() {
        if data.weight(i) <= 0.0 || !subset.contains(data, i) || response.value(data, i).is_none() {
            continue;
        }
        if set == CovariateSet::XW && data.w(i).is_none() {
            missing_w += 1;
            continue;
        }
        rows.push(i);
    }
    if missing_w > 0 {
        return Err(Error::MissingW(missing_w));
    }
    if rows.is_empty() {
        return Err(Error::EmptySubset(subset.to_string()));
    }
    let y: Vec<f64> = rows
        .iter()
        .map(|&i| response.value(data, i).expect("filtered above"))
        .collect();
    let w: Vec<f64> = rows.iter().map(|&i| data.weight(i)).collect();
    let total_weight: f64 = w.iter().sum();
    let binary = response.is_binary(data);
    let family = resolve_family(choice, data, set, &rows, binary, config.min_cell_rows);
    let columns = data.columns(set);
    let mut model = OutcomeModel {
        family,
        covariate_set: set,
        covariates: columns.iter().map(|c| c.name.clone()).collect(),
        subset: subset.clone(),
        response: response.describe(),
        n_rows: rows.len(),
        total_weight,
        cells: Vec::new(),
        coefficients: Vec::new(),
        iterations: 0,
        converged: true,
        engine: Engine::Saturated(HashMap::new()),
    };

    match family {
        Family::Saturated => {
            let index = data.cell_index(set).ok_or_else(|| {
                let c = columns
                    .iter()
                    .find(|c| c.kind == CovariateKind::Continuous)
                    .map_or_else(String::new, |c| c.name.clone());
                Error::ContinuousWithoutBinning(c)
            })?;
            let mut sums = vec![(0.0, 0.0); index.n_cells()];
            for ((&i, &yi), &wi) in rows.iter().zip(&y).zip(&w) {
                let slot = &mut sums[index.id(i) as usize];
                slot.0 += wi * yi;
                slot.1 += wi;
            }
            let mut cells: Vec<CellEntry> = sums
                .iter()
                .enumerate()
                .filter(|(_, (_, wt))| *wt > 0.0)
                .map(|(id, &(sy, wt))| CellEntry {
                    cell: index.key(id as u32).clone(),
                    mean: sy / wt,
                    weight: wt,
                })
                .collect();
            cells.sort_by(|a, b| a.cell.cmp(&b.cell));
            let lookup = cells.iter().enumerate().map(|(k, c)| (c.cell.clone(), k)).collect();
            model.cells = cells;
            model.engine = Engine::Saturated(lookup);
        }
        Family::Linear | Family::Logistic => {
            if family == Family::Logistic {
                let in_range = y.iter().all(|&v| (0.0..=1.0).contains(&v));
                if !in_range || (matches!(response, Response::Outcome) && !binary) {
                    return Err(Error::NonBinaryResponse);
                }
            }
            let values: Vec<Vec<f64>> = rows
                .iter()
                .map(|&i| data.values(set, i).expect("W presence checked"))
                .collect();
            let encoder = DesignEncoder::learn(config.terms, &columns, values.iter().map(Vec::as_slice))?;
            let p = encoder.n_features();
            let mut x = Vec::with_capacity(rows.len() * p);
            for v in &values {
                encoder.encode(v, &mut x)?;
            }
            let beta = if family == Family::Linear {
                irls::weighted_least_squares(&x, p, &y, &w)
                    .ok_or_else(|| Error::SingularDesign(subset.to_string()))?
            } else {
                match irls::irls_logistic(&x, p, &y, &w, &config.irls) {
                    Ok(fit) => {
                        model.iterations = fit.iterations;
                        fit.coefficients
                    }
                    Err(irls::IrlsFailure::Singular) => {
                        return Err(Error::SingularDesign(subset.to_string()))
                    }
                    Err(irls::IrlsFailure::Separation) => {
                        return Err(Error::SeparationDetected(subset.to_string()))
                    }
                    Err(irls::IrlsFailure::NonConvergence(n)) => {
                        return Err(Error::IrlsNonConvergence(n))
                    }
                }
            };
            model.coefficients = encoder
                .term_names()
                .into_iter()
                .zip(&beta)
                .map(|(term, &value)| TermCoefficient { term, value })
                .collect();
            model.engine = Engine::Regression { encoder, beta };
        }
    }
    Ok(model)
}

/// Fits E[Y | covariates] on the subset rows.
pub fn fit_outcome(
    data: &CompositeDataset,
    condition_on: CovariateSet,
    subset: &Subset,
    family: FamilyChoice,
    config: &NuisanceConfig,
) -> Result<OutcomeModel> {
    fit_model(data, condition_on, subset, Response::Outcome, family, config)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PropensityTarget {
    /// Pr[S = source | X] over rows of the listed sources.
    Participation { source: Source, among: Vec<Source> },
    /// Pr[A = treatment | covariates, S = source].
    Treatment {
        source: Source,
        treatment: Treatment,
        covariates: CovariateSet,
    },
}

impl PropensityTarget {
    pub fn participation(source: Source) -> Self {
        PropensityTarget::Participation {
            source,
            among: Source::ALL.to_vec(),
        }
    }

    pub fn treatment(source: Source, treatment: Treatment) -> Self {
        PropensityTarget::Treatment {
            source,
            treatment,
            covariates: CovariateSet::X,
        }
    }
}

/// A fitted probability. Evaluations are clamped into [0, 1].
#[derive(Clone, Debug, Serialize)]
pub struct PropensityModel {
    pub target: PropensityTarget,
    pub model: OutcomeModel,
}

impl PropensityModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.model.predict(x).map(|p| p.clamp(0.0, 1.0))
    }

    pub fn predictor<'a>(&'a self, data: &'a CompositeDataset) -> PropensityPredictor<'a> {
        PropensityPredictor(self.model.predictor(data))
    }
}

pub struct PropensityPredictor<'a>(RowPredictor<'a>);

impl PropensityPredictor<'_> {
    pub fn predict(&mut self, i: usize) -> Result<f64> {
        self.0.predict(i).map(|p| p.clamp(0.0, 1.0))
    }
}

pub fn fit_propensity(
    data: &CompositeDataset,
    target: PropensityTarget,
    family: FamilyChoice,
    config: &NuisanceConfig,
) -> Result<PropensityModel> {
    let model = match &target {
        PropensityTarget::Participation { source, among } => fit_model(
            data,
            CovariateSet::X,
            &Subset::sources(among, None),
            Response::SourceIs(*source),
            family,
            config,
        )?,
        PropensityTarget::Treatment {
            source,
            treatment,
            covariates,
        } => fit_model(
            data,
            *covariates,
            &Subset::source(*source),
            Response::TreatmentIs(*treatment),
            family,
            config,
        )?,
    };
    Ok(PropensityModel { target, model })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{read_csv, CovariateColumn, CovariateSchema, DatasetBuilder, LoadOptions};

    fn data(text: &str) -> CompositeDataset {
        read_csv(text.as_bytes(), &LoadOptions::default()).unwrap()
    }

    #[test]
    fn constant_outcome_predicts_constant() {
        let d = data("x_1,s,a,y\n0,1,1,0.5\n1,1,1,0.5\n1,1,1,0.5\n0,1,0,0.1\n");
        for family in [FamilyChoice::Saturated, FamilyChoice::Linear, FamilyChoice::Auto] {
            let m = fit_outcome(&d, CovariateSet::X, &Subset::cell(Source::TRIAL, 1), family, &NuisanceConfig::default())
                .unwrap();
            for x in [0.0, 1.0] {
                assert!((m.predict(&[x]).unwrap() - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn saturated_predictions_are_cell_means_and_unseen_cells_error() {
        let d = data("x_1,s,a,y\n0,1,1,1\n0,1,1,0\n0,1,1,1\n1,1,1,0\n2,1,0,1\n");
        let m = fit_outcome(
            &d,
            CovariateSet::X,
            &Subset::cell(Source::TRIAL, 1),
            FamilyChoice::Saturated,
            &NuisanceConfig::default(),
        )
        .unwrap();
        assert_eq!(m.predict(&[0.0]).unwrap(), 2.0 / 3.0);
        assert_eq!(m.predict(&[1.0]).unwrap(), 0.0);
        assert!(matches!(m.predict(&[2.0]), Err(Error::UnseenCategoryLevel(_))));
        let mut p = m.predictor(&d);
        assert!(matches!(p.predict(4), Err(Error::UnseenCategoryLevel(_))));
        assert_eq!(p.predict(1).unwrap(), 2.0 / 3.0);
        let dump = m.to_json();
        assert_eq!(dump["family"], "saturated");
        assert_eq!(dump["cells"][0]["cell"], "0");
    }

    #[test]
    fn empty_subset_errors() {
        let d = data("x_1,s,a,y\n0,1,1,1\n");
        let r = fit_outcome(&d, CovariateSet::X, &Subset::cell(Source::EXTERNAL, 2), FamilyChoice::Auto, &NuisanceConfig::default());
        assert!(matches!(r, Err(Error::EmptySubset(_))));
    }

    #[test]
    fn logistic_detects_separation() {
        let d = data("x_1,s,a,y\n0,1,1,0\n0,1,1,0\n1,1,1,1\n1,1,1,1\n0,1,1,0\n1,1,1,1\n");
        let r = fit_outcome(&d, CovariateSet::X, &Subset::cell(Source::TRIAL, 1), FamilyChoice::Logistic, &NuisanceConfig::default());
        assert!(matches!(r, Err(Error::SeparationDetected(_))), "{r:?}");
    }

    #[test]
    fn logistic_rejects_continuous_outcome() {
        let d = data("x_1,s,a,y\n0,1,1,0.3\n1,1,1,0.2\n");
        let r = fit_outcome(&d, CovariateSet::X, &Subset::cell(Source::TRIAL, 1), FamilyChoice::Logistic, &NuisanceConfig::default());
        assert!(matches!(r, Err(Error::NonBinaryResponse)));
    }

    fn mixed_binary(n: usize, recode: bool) -> CompositeDataset {
        // x_1 binary treated as continuous, x_2 continuous.
        let schema = CovariateSchema::new(
            vec![CovariateColumn::continuous("x_1"), CovariateColumn::continuous("x_2")],
            vec![],
        )
        .unwrap();
        let mut b = DatasetBuilder::new(schema, OutcomeKind::Binary);
        for i in 0..n {
            let x1 = (i % 2) as f64;
            let x2 = ((i * 7) % 11) as f64 / 10.0;
            let y = ((i * 13 + 5) % 7 < 3 + (i % 2) + (i % 3 == 0) as usize) as u8 as f64;
            let code = if recode { x1 + 1.0 } else { x1 };
            b.push(&[code, x2], None, Source::TRIAL, Some(1), Some(y), 1.0);
        }
        b.build(None).unwrap()
    }

    #[test]
    fn logistic_invariant_to_affine_recoding_of_binary_covariate() {
        let cfg = NuisanceConfig::default();
        let sub = Subset::cell(Source::TRIAL, 1);
        let d0 = mixed_binary(200, false);
        let d1 = mixed_binary(200, true);
        let m0 = fit_outcome(&d0, CovariateSet::X, &sub, FamilyChoice::Logistic, &cfg).unwrap();
        let m1 = fit_outcome(&d1, CovariateSet::X, &sub, FamilyChoice::Logistic, &cfg).unwrap();
        assert!(m0.converged && m0.iterations > 0);
        for i in 0..d0.len() {
            let p0 = m0.predict(d0.x(i)).unwrap();
            let p1 = m1.predict(d1.x(i)).unwrap();
            assert!((p0 - p1).abs() < 1e-8, "{p0} vs {p1}");
        }
    }

    #[test]
    fn irls_on_cell_indicators_reproduces_cell_means() {
        let d = data(
            "x_1,x_2,s,a,y\n0,0,1,1,1\n0,0,1,1,0\n0,0,1,1,0\n0,1,1,1,1\n0,1,1,1,0\n1,0,1,1,1\n1,0,1,1,1\n1,0,1,1,0\n1,1,1,1,0\n1,1,1,1,1\n1,1,1,1,1\n1,1,1,1,1\n",
        );
        let sub = Subset::cell(Source::TRIAL, 1);
        let strat = fit_outcome(&d, CovariateSet::X, &sub, FamilyChoice::Saturated, &NuisanceConfig::default()).unwrap();
        let cfg = NuisanceConfig {
            terms: Terms::CellIndicators,
            ..Default::default()
        };
        let irls = fit_outcome(&d, CovariateSet::X, &sub, FamilyChoice::Logistic, &cfg).unwrap();
        for c in &strat.cells {
            let x: Vec<f64> = c.cell.0.iter().map(|&v| v as f64).collect();
            assert!((irls.predict(&x).unwrap() - c.mean).abs() < 1e-10);
        }
    }

    #[test]
    fn saturated_treatment_propensities_sum_to_one() {
        let d = data("x_1,s,a,y\n0,0,0,1\n0,0,2,0\n0,0,2,1\n1,0,0,1\n1,0,2,0\n1,0,0,0\n1,0,0,1\n0,1,0,1\n");
        let cfg = NuisanceConfig::saturated();
        let fits: Vec<PropensityModel> = [0, 2]
            .iter()
            .map(|&a| fit_propensity(&d, PropensityTarget::treatment(Source::EXTERNAL, a), FamilyChoice::Saturated, &cfg).unwrap())
            .collect();
        for x in [0.0, 1.0] {
            let total: f64 = fits.iter().map(|m| m.predict(&[x]).unwrap()).sum();
            assert!((total - 1.0).abs() < 1e-10);
        }
        assert!((fits[1].predict(&[0.0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn participation_on_identical_populations_is_one_half() {
        let mut text = String::from("x_1,s,a,y\n");
        for s in [0, 1] {
            for x in [0, 1, 1, 2] {
                text.push_str(&format!("{x},{s},0,1\n"));
            }
        }
        let d = data(&text);
        for family in [FamilyChoice::Saturated, FamilyChoice::Logistic] {
            let m = fit_propensity(&d, PropensityTarget::participation(Source::TRIAL), family, &NuisanceConfig::default())
                .unwrap();
            for x in [0.0, 1.0, 2.0] {
                assert!((m.predict(&[x]).unwrap() - 0.5).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn auto_family_falls_back_on_sparse_cells() {
        let d = data("x_1,s,a,y\n0,1,1,1\n0,1,1,0\n1,1,1,1\n1,1,1,0\n");
        let m = fit_outcome(&d, CovariateSet::X, &Subset::cell(Source::TRIAL, 1), FamilyChoice::Auto, &NuisanceConfig::default())
            .unwrap();
        assert_eq!(m.family, Family::Logistic);
        let cfg = NuisanceConfig {
            min_cell_rows: 2.0,
            ..Default::default()
        };
        let m = fit_outcome(&d, CovariateSet::X, &Subset::cell(Source::TRIAL, 1), FamilyChoice::Auto, &cfg).unwrap();
        assert_eq!(m.family, Family::Saturated);
    }
}
