//! Nonparametric bootstrap intervals and Monte Carlo coverage studies.
//!
//! Resampling is stratified by source: each source is redrawn with
//! replacement at its own size, and every replicate refits all nuisance
//! models. Replicate `b` draws from ChaCha8 stream `b` of the configured seed,
//! so results do not depend on thread scheduling.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::{CompositeDataset, Source};
use crate::error::{Error, Result};
use crate::estimators::{describe_target, EstimateReport, Estimator, IntervalInfo, Target};
use crate::nuisance::NuisanceConfig;
use crate::oracle::{sample_with, true_estimand, Scenario};

/// Largest fraction of failed replicates an interval may ignore.
pub const MAX_FAILURE_FRACTION: f64 = 0.02;

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    #[default]
    Percentile,
    Normal,
}

impl IntervalMethod {
    fn name(self) -> &'static str {
        match self {
            IntervalMethod::Percentile => "percentile",
            IntervalMethod::Normal => "normal",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapSpec {
    pub replicates: usize,
    pub seed: u64,
    pub method: IntervalMethod,
    pub level: f64,
}

impl Default for BootstrapSpec {
    fn default() -> Self {
        BootstrapSpec {
            replicates: 1000,
            seed: 0,
            method: IntervalMethod::Percentile,
            level: 0.95,
        }
    }
}

impl BootstrapSpec {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::InvalidBootstrap(format!(
                "at least 2 replicates are needed, got {}",
                self.replicates
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidBootstrap(format!("level must lie in (0, 1), got {}", self.level)));
        }
        Ok(())
    }

    fn rng(&self, replicate: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(replicate as u64);
        rng
    }
}

/// Multinomial resampling counts: each source is redrawn with replacement,
/// `round(total weight)` times, with probability proportional to row weight.
pub fn resample_weights<R: Rng + ?Sized>(data: &CompositeDataset, rng: &mut R) -> Vec<f64> {
    let mut counts = vec![0.0; data.len()];
    for s in Source::ALL {
        let rows: Vec<usize> = data.rows_in(s).filter(|&i| data.weight(i) > 0.0).collect();
        if rows.is_empty() {
            continue;
        }
        let w: Vec<f64> = rows.iter().map(|&i| data.weight(i)).collect();
        let draws = w.iter().sum::<f64>().round() as usize;
        if w.iter().all(|&v| v == w[0]) {
            for _ in 0..draws {
                counts[rows[rng.random_range(0..rows.len())]] += 1.0;
            }
        } else {
            let dist = WeightedIndex::new(&w).expect("positive weights");
            for _ in 0..draws {
                counts[rows[dist.sample(rng)]] += 1.0;
            }
        }
    }
    counts
}

/// Replicate estimates of one target, in replicate order.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateSet {
    /// One entry per replicate; `Err` holds the failure message.
    pub draws: Vec<std::result::Result<f64, String>>,
}

impl ReplicateSet {
    pub fn successes(&self) -> Vec<f64> {
        self.draws.iter().filter_map(|d| d.as_ref().ok().copied()).collect()
    }

    pub fn failed(&self) -> usize {
        self.draws.iter().filter(|d| d.is_err()).count()
    }

    fn first_failure(&self) -> Option<&str> {
        self.draws.iter().find_map(|d| d.as_ref().err().map(String::as_str))
    }

    /// Successful replicates, or an error when too many failed.
    pub fn usable(&self) -> Result<Vec<f64>> {
        let failed = self.failed();
        let total = self.draws.len();
        if failed as f64 > MAX_FAILURE_FRACTION * total as f64 || failed == total {
            return Err(Error::TooManyReplicateFailures {
                failed,
                total,
                first: self.first_failure().unwrap_or_default().to_string(),
            });
        }
        Ok(self.successes())
    }

    /// Interval at `level` from the successful replicates.
    pub fn interval(&self, method: IntervalMethod, level: f64) -> Result<(f64, f64)> {
        let mut values = self.usable()?;
        let alpha = 1.0 - level;
        Ok(match method {
            IntervalMethod::Percentile => {
                values.sort_by(f64::total_cmp);
                (quantile(&values, alpha / 2.0), quantile(&values, 1.0 - alpha / 2.0))
            }
            IntervalMethod::Normal => {
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                let sd = if n > 1.0 {
                    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                } else {
                    0.0
                };
                let z = Normal::standard().inverse_cdf(1.0 - alpha / 2.0);
                (mean - z * sd, mean + z * sd)
            }
        })
    }
}

/// Linear-interpolation quantile of sorted values (the common "type 7").
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Replicate estimates for several targets. All targets of one replicate are
/// computed on the same resample with a shared model cache, so replicate
/// contrasts equal differences of replicate legs.
pub fn bootstrap_replicates(
    data: &CompositeDataset,
    targets: &[Target],
    spec: &BootstrapSpec,
    config: &NuisanceConfig,
) -> Result<Vec<ReplicateSet>> {
    spec.validate()?;
    let per_replicate: Vec<Vec<std::result::Result<f64, String>>> = (0..spec.replicates)
        .into_par_iter()
        .map(|b| {
            let resample = data.reweighted(resample_weights(data, &mut spec.rng(b)));
            let estimator = Estimator::new(&resample, config.clone());
            targets
                .iter()
                .map(|t| estimator.point(t).map_err(|e| e.to_string()))
                .collect()
        })
        .collect();
    Ok((0..targets.len())
        .map(|k| ReplicateSet {
            draws: per_replicate.iter().map(|r| r[k].clone()).collect(),
        })
        .collect())
}

/// Point estimates with bootstrap intervals for several targets sharing the
/// same resamples.
pub fn bootstrap_many(
    data: &CompositeDataset,
    targets: &[Target],
    spec: &BootstrapSpec,
    config: &NuisanceConfig,
) -> Result<Vec<EstimateReport>> {
    let estimator = Estimator::new(data, config.clone());
    let mut reports = targets.iter().map(|t| estimator.report(t)).collect::<Result<Vec<_>>>()?;
    let sets = bootstrap_replicates(data, targets, spec, config)?;
    for (report, set) in reports.iter_mut().zip(&sets) {
        attach(report, set, spec)?;
    }
    Ok(reports)
}

/// Point estimate of `target` with a bootstrap interval.
pub fn bootstrap(
    data: &CompositeDataset,
    target: &Target,
    spec: &BootstrapSpec,
    config: &NuisanceConfig,
) -> Result<EstimateReport> {
    bootstrap_many(data, std::slice::from_ref(target), spec, config).map(|mut r| r.remove(0))
}

fn attach(report: &mut EstimateReport, set: &ReplicateSet, spec: &BootstrapSpec) -> Result<()> {
    let (lo, hi) = set.interval(spec.method, spec.level)?;
    let failed = set.failed();
    if failed > 0 {
        report.warnings.push(format!(
            "{failed} of {} bootstrap replicates failed and were dropped; first: {}",
            spec.replicates,
            set.first_failure().unwrap_or_default()
        ));
    }
    report.set_interval(
        lo,
        hi,
        IntervalInfo {
            method: spec.method.name().to_string(),
            level: spec.level,
            replicates: spec.replicates,
            failed_replicates: failed,
        },
    );
    Ok(())
}

/// Settings for a sample, estimate, bootstrap loop on a scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageSpec {
    pub n: usize,
    pub outer_replicates: usize,
    pub seed: u64,
    pub bootstrap: BootstrapSpec,
}

/// One target in one outer replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageDraw {
    pub replicate: usize,
    pub estimand_id: String,
    pub point: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub covered: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Bias, RMSE and interval coverage of one target against its true value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub estimand_id: String,
    pub truth: f64,
    pub replicates: usize,
    pub failed: usize,
    pub mean_estimate: f64,
    pub bias: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub mean_width: f64,
}

/// Repeats sample, estimate, bootstrap `outer_replicates` times. Outer
/// replicate `r` uses ChaCha8 stream `r` of `seed` both to draw its sample and
/// to pick its bootstrap seed. `on_draw` sees results in replicate order.
pub fn coverage_study(
    scn: &Scenario,
    targets: &[Target],
    spec: &CoverageSpec,
    config: &NuisanceConfig,
    mut on_draw: impl FnMut(&CoverageDraw),
) -> Result<Vec<CoverageSummary>> {
    spec.bootstrap.validate()?;
    if spec.outer_replicates == 0 {
        return Err(Error::InvalidBootstrap("at least one outer replicate is needed".into()));
    }
    let mut ids = Vec::with_capacity(targets.len());
    let mut truths = Vec::with_capacity(targets.len());
    for t in targets {
        let d = describe_target(t)?;
        truths.push(true_estimand(scn, &d.causal)?);
        ids.push(d.id);
    }
    let mut draws: Vec<Vec<CoverageDraw>> = vec![Vec::new(); targets.len()];
    for r in 0..spec.outer_replicates {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(r as u64);
        let boot = BootstrapSpec {
            seed: rng.next_u64(),
            ..spec.bootstrap.clone()
        };
        let data = sample_with(scn, spec.n, &mut rng)?;
        let estimator = Estimator::new(&data, config.clone());
        let points: Vec<Result<f64>> = targets.iter().map(|t| estimator.point(t)).collect();
        let sets = bootstrap_replicates(&data, targets, &boot, config)?;
        for (k, (point, set)) in points.into_iter().zip(&sets).enumerate() {
            let outcome = point.and_then(|p| {
                let (lo, hi) = set.interval(boot.method, boot.level)?;
                Ok((p, lo.min(p), hi.max(p)))
            });
            let draw = match outcome {
                Ok((p, lo, hi)) => CoverageDraw {
                    replicate: r,
                    estimand_id: ids[k].clone(),
                    point: Some(p),
                    ci_lo: Some(lo),
                    ci_hi: Some(hi),
                    covered: Some(lo <= truths[k] && truths[k] <= hi),
                    error: None,
                },
                Err(e) => CoverageDraw {
                    replicate: r,
                    estimand_id: ids[k].clone(),
                    point: None,
                    ci_lo: None,
                    ci_hi: None,
                    covered: None,
                    error: Some(e.to_string()),
                },
            };
            on_draw(&draw);
            draws[k].push(draw);
        }
    }
    Ok(draws
        .iter()
        .zip(ids)
        .zip(truths)
        .map(|((draws, id), truth)| summarize(id, truth, draws))
        .collect())
}

fn summarize(estimand_id: String, truth: f64, draws: &[CoverageDraw]) -> CoverageSummary {
    let ok: Vec<&CoverageDraw> = draws.iter().filter(|d| d.error.is_none()).collect();
    let n = ok.len() as f64;
    let mean = |f: &dyn Fn(&CoverageDraw) -> f64| ok.iter().map(|d| f(d)).sum::<f64>() / n;
    let mean_estimate = mean(&|d| d.point.unwrap_or(f64::NAN));
    CoverageSummary {
        estimand_id,
        truth,
        replicates: draws.len(),
        failed: draws.len() - ok.len(),
        mean_estimate,
        bias: mean_estimate - truth,
        rmse: mean(&|d| (d.point.unwrap_or(f64::NAN) - truth).powi(2)).sqrt(),
        coverage: mean(&|d| f64::from(u8::from(d.covered == Some(true)))),
        mean_width: mean(&|d| d.ci_hi.unwrap_or(f64::NAN) - d.ci_lo.unwrap_or(f64::NAN)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{read_csv, LoadOptions};
    use crate::estimators::NamedEstimand;
    use crate::oracle::sample;

    fn spec(replicates: usize, seed: u64) -> BootstrapSpec {
        BootstrapSpec {
            replicates,
            seed,
            ..Default::default()
        }
    }

    fn dgp_a(n: usize) -> CompositeDataset {
        sample(&Scenario::builtin("dgp-a").unwrap(), n, 3).unwrap()
    }

    #[test]
    fn rejects_invalid_settings() {
        assert!(spec(1, 0).validate().is_err());
        let bad_level = BootstrapSpec {
            level: 1.0,
            ..Default::default()
        };
        assert!(matches!(bad_level.validate(), Err(Error::InvalidBootstrap(_))));
        assert!(spec(2, 0).validate().is_ok());
    }

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.5) - 2.5).abs() < 1e-15);
        assert!((quantile(&v, 0.25) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn resampling_preserves_source_sizes() {
        let d = dgp_a(501);
        let counts = resample_weights(&d, &mut ChaCha8Rng::seed_from_u64(1));
        let boot = d.reweighted(counts);
        assert_eq!(boot.source_totals(), d.source_totals());
        assert!(boot.weights().iter().all(|&w| w.fract() == 0.0));
    }

    #[test]
    fn constant_outcome_gives_zero_width() {
        let mut text = String::from("x_1,s,a,y\n");
        for x in 0..2 {
            text.push_str(&format!("{x},1,0,1\n{x},1,1,1\n{x},1,0,1\n{x},1,1,1\n{x},0,0,1\n{x},0,2,1\n"));
        }
        let d = read_csv(text.as_bytes(), &LoadOptions::default()).unwrap();
        let config = NuisanceConfig::saturated();
        let r = bootstrap(&d, &Target::named(NamedEstimand::Gamma11), &spec(50, 4), &config);
        // Some resamples lose a cell entirely; allow those to fail the run.
        match r {
            Ok(r) => assert_eq!((r.ci_lo, r.ci_hi), (Some(1.0), Some(1.0))),
            Err(Error::TooManyReplicateFailures { .. }) => {}
            Err(e) => panic!("{e}"),
        }
        let big = dgp_a(400);
        let r = bootstrap(&big, &Target::named(NamedEstimand::Gamma11), &spec(20, 4), &config).unwrap();
        assert!(r.ci_lo.unwrap() < r.ci_hi.unwrap());
    }

    #[test]
    fn two_replicates_run() {
        let d = dgp_a(300);
        let r = bootstrap(&d, &Target::named(NamedEstimand::Gamma11), &spec(2, 9), &NuisanceConfig::default()).unwrap();
        assert!(r.ci_lo.unwrap() <= r.point && r.point <= r.ci_hi.unwrap());
        assert_eq!(r.interval.unwrap().replicates, 2);
    }

    #[test]
    fn same_seed_same_interval() {
        let d = dgp_a(400);
        let t = Target::named(NamedEstimand::Psi);
        let config = NuisanceConfig::default();
        let a = bootstrap(&d, &t, &spec(40, 5), &config).unwrap();
        let b = bootstrap(&d, &t, &spec(40, 5), &config).unwrap();
        let c = bootstrap(&d, &t, &spec(40, 6), &config).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.ci_lo, c.ci_lo);
    }

    #[test]
    fn wider_level_nests_narrower() {
        let d = dgp_a(400);
        let sets = bootstrap_replicates(&d, &[Target::named(NamedEstimand::Gamma11)], &spec(200, 1), &NuisanceConfig::default())
            .unwrap();
        for method in [IntervalMethod::Percentile, IntervalMethod::Normal] {
            let (lo90, hi90) = sets[0].interval(method, 0.90).unwrap();
            let (lo99, hi99) = sets[0].interval(method, 0.99).unwrap();
            assert!(lo99 <= lo90 && hi90 <= hi99);
        }
    }

    #[test]
    fn contrast_replicates_are_leg_differences() {
        use NamedEstimand::*;
        let d = dgp_a(400);
        let targets = [Target::named(Psi), Target::named(Gamma11), Target::named(Gamma02)];
        let sets = bootstrap_replicates(&d, &targets, &spec(30, 2), &NuisanceConfig::default()).unwrap();
        let (psi, left, right) = (sets[0].successes(), sets[1].successes(), sets[2].successes());
        for k in 0..psi.len() {
            assert_eq!(psi[k], left[k] - right[k]);
        }
        // Separate runs with the same seed draw the same resamples.
        let alone = bootstrap_replicates(&d, &targets[1..2], &spec(30, 2), &NuisanceConfig::default()).unwrap();
        assert_eq!(alone[0], sets[1]);
    }

    #[test]
    fn failures_are_bounded() {
        let set = ReplicateSet {
            draws: (0..100).map(|k| if k < 2 { Err("empty".into()) } else { Ok(k as f64) }).collect(),
        };
        assert_eq!(set.usable().unwrap().len(), 98);
        let set = ReplicateSet {
            draws: (0..100).map(|k| if k < 3 { Err("empty".into()) } else { Ok(k as f64) }).collect(),
        };
        assert!(matches!(set.usable(), Err(Error::TooManyReplicateFailures { failed: 3, total: 100, .. })));
    }

    #[test]
    fn coverage_study_reports_in_order() {
        let scn = Scenario::builtin("dgp-a").unwrap();
        let cov = CoverageSpec {
            n: 500,
            outer_replicates: 4,
            seed: 7,
            bootstrap: spec(30, 0),
        };
        let mut seen = Vec::new();
        let rows = coverage_study(&scn, &[Target::named(NamedEstimand::Gamma11)], &cov, &NuisanceConfig::default(), |d| {
            seen.push(d.replicate)
        })
        .unwrap();
        assert_eq!(seen, vec![0, 1, 2, 3]);
        assert!((rows[0].truth - 0.64).abs() < 1e-12);
        assert!(rows[0].bias.abs() < 0.1 && rows[0].rmse >= rows[0].bias.abs());
    }
}
