use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use super::config::{Attach, RunConfig};
use crate::dataset::{common_support, save_csv, CompositeDataset, Source};
use crate::diagnostics::{aligned, falsification_test, positivity_audit, FalsificationReport, PositivityCondition, Verdict};
use crate::error::{Error, Result};
use crate::estimators::{EstimateReport, Estimator, Interpretation, NamedEstimand};
use crate::inference::{bootstrap_many, coverage_study, CoverageSpec};
use crate::oracle::{applicable, check_conditions, true_named, truth_table};

pub type ExitCode = i32;
pub const EXIT_OK: ExitCode = 0;
pub const EXIT_INVALID: ExitCode = 1;
pub const EXIT_ESTIMAND_FAILURE: ExitCode = 2;
pub const EXIT_VIOLATED: ExitCode = 3;

/// Conditions whose failure the control-arm comparison can reveal.
const SHARED_CONTROL_CONDITIONS: [&str; 2] = ["A4 (a=0)", "A6"];

/// Output directory bookkeeping; the manifest lists every file written.
struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn create(&mut self, name: &str) -> Result<JsonLines> {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(JsonLines {
            path,
            out: BufWriter::new(file),
        })
    }

    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.path(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.text(name, &text)
    }

    fn finish(mut self, command: &str, config: &RunConfig, exit_code: ExitCode) -> Result<ExitCode> {
        let manifest = json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "seed": config.seed,
            "config": config,
            "outputs": self.files.clone(),
            "exit_code": exit_code,
        });
        self.json("manifest.json", &manifest)?;
        Ok(exit_code)
    }
}

/// Line-delimited JSON, flushed after every record so it can be tailed.
struct JsonLines {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonLines {
    fn write(&mut self, value: &impl Serialize) -> Result<()> {
        let line = serde_json::to_string(value)?;
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.6}"))
}

pub fn cmd_estimate(config: &RunConfig) -> Result<ExitCode> {
    let data = config.dataset()?;
    if config.estimands.is_empty() {
        return Err(Error::InvalidEstimand("the estimand list is empty".into()));
    }
    let targets = config.targets()?;
    let mut out = Outputs::new(&config.out)?;
    let mut lines = out.create("report.jsonl")?;

    let falsification = (config.diagnostics.falsification != Attach::Never)
        .then(|| falsification_test(&data, &config.falsification).map_err(|e| e.to_string()));
    let positivity = config
        .diagnostics
        .positivity
        .then(|| positivity_audit(&data, &PositivityCondition::applicable(&data), &config.positivity));
    let positivity = positivity.transpose()?;

    let estimator = Estimator::new(&data, config.nuisance.clone());
    let mut rows = vec![["estimand", "prop", "form", "point", "ci_lo", "ci_hi", "warnings"]
        .map(String::from)
        .to_vec()];
    let mut failures = String::new();
    let mut attached: Option<&FalsificationReport> = None;
    for (entry, target) in config.estimands.iter().zip(&targets) {
        let result = match &config.bootstrap {
            Some(spec) => bootstrap_many(&data, std::slice::from_ref(target), spec, &config.nuisance).map(|mut r| r.remove(0)),
            None => estimator.report(target),
        };
        let mut report: EstimateReport = match result {
            Ok(r) => r,
            Err(e) => {
                log::warn!("{}: {e}", entry.label());
                lines.write(&json!({"estimand": entry.label(), "error": e.to_string()}))?;
                rows.push(vec![entry.label(), "-".into(), "-".into(), "failed".into()]);
                failures.push_str(&format!("{}: {e}\n", entry.label()));
                continue;
            }
        };
        let wants = match config.diagnostics.falsification {
            Attach::Always => true,
            Attach::Never => false,
            Attach::Auto => report.assumptions.iter().any(|a| SHARED_CONTROL_CONDITIONS.contains(&a.as_str())),
        };
        if let (true, Some(f)) = (wants, &falsification) {
            match f {
                Ok(f) => {
                    if f.verdict == Verdict::Violated {
                        report.warnings.push("control-arm means differ between sources".into());
                    }
                    report.diagnostics.insert("falsification".into(), serde_json::to_value(f)?);
                    attached = Some(f);
                }
                Err(e) => {
                    report.warnings.push(format!("control-arm comparison unavailable: {e}"));
                }
            }
        }
        if let Some(p) = &positivity {
            report.diagnostics.insert("positivity".into(), serde_json::to_value(p)?);
        }
        lines.write(&report)?;
        rows.push(vec![
            report.estimand_id.clone(),
            report.proposition.map_or_else(|| "-".into(), |p| p.to_string()),
            format!("{:?}", report.estimator_form).to_lowercase(),
            num(Some(report.point)),
            num(report.ci_lo),
            num(report.ci_hi),
            report.warnings.len().to_string(),
        ]);
    }
    let mut summary = aligned(&rows);
    if !failures.is_empty() {
        summary.push_str("\nfailed:\n");
        summary.push_str(&failures);
    }
    if let Some(f) = attached {
        summary.push('\n');
        summary.push_str(&f.to_string());
    }
    if let Some(p) = &positivity {
        summary.push('\n');
        summary.push_str(&p.to_string());
    }
    print!("{summary}");
    out.text("summary.txt", &summary)?;
    let code = if failures.is_empty() { EXIT_OK } else { EXIT_ESTIMAND_FAILURE };
    out.finish("estimate", config, code)
}

pub fn cmd_simulate(config: &RunConfig) -> Result<ExitCode> {
    let scn = config.scenario()?;
    let data = crate::oracle::sample(&scn, config.n, config.seed)?;
    let mut out = Outputs::new(&config.out)?;
    let csv = out.path("sample.csv");
    save_csv(&data, &csv)?;
    let flags = check_conditions(&scn)?;
    let truth = truth_table(&scn)?;

    let mut lines = out.create("report.jsonl")?;
    let mut rows = vec![["estimand", "truth", "applicable"].map(String::from).to_vec()];
    for name in NamedEstimand::ALL {
        let ok = applicable(name, &scn, &flags);
        let value = true_named(&scn, name, Interpretation::AbsentEngagement).ok();
        lines.write(&json!({"estimand": name.name(), "truth": value, "applicable": ok}))?;
        rows.push(vec![name.name().into(), num(value), ok.to_string()]);
    }
    out.json("conditions.json", &flags)?;
    out.json("truth.json", &truth)?;

    let mut summary = format!("scenario {}: {} rows written to {}\n\n", scn.name(), data.len(), csv.display());
    summary.push_str(&serde_json::to_string_pretty(&flags)?);
    summary.push_str("\n\n");
    summary.push_str(&aligned(&rows));
    print!("{summary}");
    out.text("summary.txt", &summary)?;
    out.finish("simulate", config, EXIT_OK)
}

pub fn cmd_falsify(config: &RunConfig) -> Result<ExitCode> {
    let data = config.dataset()?;
    let report = falsification_test(&data, &config.falsification)?;
    let mut out = Outputs::new(&config.out)?;
    out.create("report.jsonl")?.write(&report)?;
    let summary = report.to_string();
    print!("{summary}");
    out.text("summary.txt", &summary)?;
    let code = match report.verdict {
        Verdict::Consistent => EXIT_OK,
        Verdict::Violated => EXIT_VIOLATED,
    };
    out.finish("falsify", config, code)
}

pub fn cmd_coverage(config: &RunConfig) -> Result<ExitCode> {
    if config.estimands.is_empty() {
        return Err(Error::InvalidEstimand("the estimand list is empty".into()));
    }
    let targets = config.targets()?;
    let scn = config.scenario()?;
    let spec = CoverageSpec {
        n: config.coverage.n,
        outer_replicates: config.coverage.outer_replicates,
        seed: config.seed,
        bootstrap: config.bootstrap.clone().unwrap_or_default(),
    };
    let mut out = Outputs::new(&config.out)?;
    let mut lines = out.create("report.jsonl")?;
    let mut write_error = None;
    let summaries = coverage_study(&scn, &targets, &spec, &config.nuisance, |draw| {
        if write_error.is_none() {
            write_error = lines.write(draw).err();
        }
    })?;
    if let Some(e) = write_error {
        return Err(e);
    }
    out.json("coverage.json", &summaries)?;
    let mut rows = vec![["estimand", "truth", "mean", "bias", "rmse", "coverage", "width", "failed"]
        .map(String::from)
        .to_vec()];
    for s in &summaries {
        rows.push(vec![
            s.estimand_id.clone(),
            num(Some(s.truth)),
            num(Some(s.mean_estimate)),
            num(Some(s.bias)),
            num(Some(s.rmse)),
            format!("{:.4}", s.coverage),
            num(Some(s.mean_width)),
            s.failed.to_string(),
        ]);
    }
    let summary = format!(
        "scenario {}: {} replicates of n={}, B={}\n{}",
        scn.name(),
        spec.outer_replicates,
        spec.n,
        spec.bootstrap.replicates,
        aligned(&rows)
    );
    print!("{summary}");
    out.text("summary.txt", &summary)?;
    out.finish("coverage", config, EXIT_OK)
}

pub fn cmd_diagnose(config: &RunConfig) -> Result<ExitCode> {
    let data = config.dataset()?;
    let binning = config.positivity.binning.as_ref();
    let positivity = positivity_audit(&data, &PositivityCondition::applicable(&data), &config.positivity)?;
    let mut support = BTreeMap::new();
    for (a, b) in [(Source::TRIAL, Source::EXTERNAL), (Source::TARGET, Source::TRIAL), (Source::TARGET, Source::EXTERNAL)] {
        if has_rows(&data, a) && has_rows(&data, b) {
            support.insert(format!("{a}-{b}"), common_support(&data, a, b, binning)?);
        }
    }
    let falsification = falsification_test(&data, &config.falsification);

    let mut out = Outputs::new(&config.out)?;
    let mut lines = out.create("report.jsonl")?;
    lines.write(&json!({"diagnostic": "positivity", "report": positivity}))?;
    lines.write(&json!({"diagnostic": "support", "report": support}))?;
    let f_value: Value = match &falsification {
        Ok(f) => json!({"diagnostic": "falsification", "report": f}),
        Err(e) => json!({"diagnostic": "falsification", "error": e.to_string()}),
    };
    lines.write(&f_value)?;

    let mut summary = positivity.to_string();
    for (pair, s) in &support {
        summary.push_str(&format!(
            "support {pair}: {} shared, {} only in first, {} only in second\n",
            s.shared.len(),
            s.only_in_first.len(),
            s.only_in_second.len()
        ));
    }
    match &falsification {
        Ok(f) => summary.push_str(&f.to_string()),
        Err(e) => summary.push_str(&format!("control-arm comparison unavailable: {e}\n")),
    }
    print!("{summary}");
    out.text("summary.txt", &summary)?;
    out.finish("diagnose", config, EXIT_OK)
}

fn has_rows(data: &CompositeDataset, s: Source) -> bool {
    data.rows_in(s).any(|i| data.weight(i) > 0.0)
}
