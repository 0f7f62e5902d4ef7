//! Run configuration: one JSON document, with scalar fields overridable from
//! the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{load_csv, CompositeDataset, LoadOptions};
use crate::diagnostics::{FalsificationOptions, PositivityOptions};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorForm, Interpretation, NamedEstimand, Target};
use crate::inference::BootstrapSpec;
use crate::nuisance::NuisanceConfig;
use crate::oracle::{sample, Scenario};

/// An estimand entry: a catalogue name, a name with options, or a full
/// `{"estimand": ...}` / `{"contrast": ...}` specification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EstimandEntry {
    Name(String),
    Named {
        name: String,
        #[serde(default)]
        form: EstimatorForm,
        #[serde(default)]
        interpretation: Interpretation,
    },
    Spec(Target),
}

impl EstimandEntry {
    pub fn target(&self) -> Result<Target> {
        match self {
            EstimandEntry::Name(name) => Ok(Target::named(name.parse::<NamedEstimand>()?)),
            EstimandEntry::Named {
                name,
                form,
                interpretation,
            } => Ok(name.parse::<NamedEstimand>()?.target(*interpretation, *form)),
            EstimandEntry::Spec(t) => Ok(t.clone()),
        }
    }

    /// Label used in failure lines.
    pub fn label(&self) -> String {
        match self {
            EstimandEntry::Name(name) | EstimandEntry::Named { name, .. } => name.clone(),
            EstimandEntry::Spec(t) => serde_json::to_string(t).unwrap_or_default(),
        }
    }
}

/// When to attach the control-arm falsification test to estimate reports.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attach {
    /// Only for estimands relying on transport of the control-arm mean.
    #[default]
    Auto,
    Always,
    Never,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosticToggles {
    pub falsification: Attach,
    pub positivity: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoverageSettings {
    pub n: usize,
    pub outer_replicates: usize,
}

impl Default for CoverageSettings {
    fn default() -> Self {
        CoverageSettings {
            n: 2000,
            outer_replicates: 300,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Input CSV.
    pub data: Option<PathBuf>,
    pub load: LoadOptions,
    /// Built-in scenario name or scenario file, for simulation and coverage
    /// or when no input CSV is given.
    pub scenario: Option<String>,
    /// Sample size when drawing from the scenario.
    pub n: usize,
    /// Seeds sampling and bootstrap resampling.
    pub seed: u64,
    pub threads: Option<usize>,
    pub out: PathBuf,
    pub estimands: Vec<EstimandEntry>,
    /// Bootstrap settings; the seed field is replaced by the run seed.
    pub bootstrap: Option<BootstrapSpec>,
    pub nuisance: NuisanceConfig,
    pub diagnostics: DiagnosticToggles,
    pub falsification: FalsificationOptions,
    pub positivity: PositivityOptions,
    pub coverage: CoverageSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            load: LoadOptions::default(),
            scenario: None,
            n: 10_000,
            seed: 0,
            threads: None,
            out: PathBuf::from("out"),
            estimands: Vec::new(),
            bootstrap: None,
            nuisance: NuisanceConfig::default(),
            diagnostics: DiagnosticToggles::default(),
            falsification: FalsificationOptions::default(),
            positivity: PositivityOptions::default(),
            coverage: CoverageSettings::default(),
        }
    }
}

/// Command-line values that replace config fields when given.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub data: Option<PathBuf>,
    pub scenario: Option<String>,
    pub n: Option<usize>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub bootstrap: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidConfig {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(d) = &o.data {
            self.data = Some(d.clone());
        }
        if let Some(s) = &o.scenario {
            self.scenario = Some(s.clone());
        }
        if let Some(n) = o.n {
            self.n = n;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(t) = o.threads {
            self.threads = Some(t);
        }
        match o.bootstrap {
            Some(0) => self.bootstrap = None,
            Some(b) => self.bootstrap.get_or_insert_with(BootstrapSpec::default).replicates = b,
            None => {}
        }
        if let Some(b) = &mut self.bootstrap {
            b.seed = self.seed;
        }
    }

    pub fn targets(&self) -> Result<Vec<Target>> {
        self.estimands.iter().map(EstimandEntry::target).collect()
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let name = self
            .scenario
            .as_deref()
            .ok_or_else(|| Error::InvalidScenario("no scenario given".into()))?;
        Scenario::resolve(name)
    }

    /// The input CSV, or a sample from the scenario when no CSV is given.
    pub fn dataset(&self) -> Result<CompositeDataset> {
        match (&self.data, &self.scenario) {
            (Some(path), _) => load_csv(path, &self.load),
            (None, Some(_)) => sample(&self.scenario()?, self.n, self.seed),
            (None, None) => Err(Error::InvalidScenario("neither an input CSV nor a scenario was given".into())),
        }
    }
}
