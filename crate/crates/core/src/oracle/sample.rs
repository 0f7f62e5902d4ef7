//! Finite samples and exact population tables drawn from a scenario.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::scenario::Scenario;
use crate::dataset::{CellKey, CompositeDataset, DatasetBuilder, OutcomeKind, Source, Treatment};
use crate::error::{Error, Result};

/// Rows per source: shares times `n`, rounded by largest remainder. The
/// design is non-nested, so source sizes are fixed rather than random.
pub fn source_sizes(scn: &Scenario, n: usize) -> Vec<(Source, usize)> {
    let raw: Vec<(Source, f64)> = scn.sources().iter().map(|&s| (s, scn.share(s) * n as f64)).collect();
    let mut sizes: Vec<(Source, usize)> = raw.iter().map(|&(s, v)| (s, v.floor() as usize)).collect();
    let assigned: usize = sizes.iter().map(|(_, k)| k).sum();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    // Stable sort keeps ties in source order.
    order.sort_by(|&i, &j| {
        let (fi, fj) = (raw[i].1 - raw[i].1.floor(), raw[j].1 - raw[j].1.floor());
        fj.partial_cmp(&fi).expect("finite shares")
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i].1 += 1;
    }
    sizes
}

fn levels(key: &CellKey) -> Vec<f64> {
    key.0.iter().map(|&v| v as f64).collect()
}

struct Arm {
    treatment: Treatment,
    mean: f64,
}

struct WNode {
    w: Vec<f64>,
    treatment: Option<(WeightedIndex<f64>, Vec<Arm>)>,
}

struct XNode {
    x: Vec<f64>,
    w: WeightedIndex<f64>,
    nodes: Vec<WNode>,
}

/// Ancestral sampler for one source.
struct SourceSampler {
    source: Source,
    x: WeightedIndex<f64>,
    nodes: Vec<XNode>,
}

fn weighted(p: &[f64]) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(p.iter().copied()).map_err(|e| Error::InvalidScenario(format!("bad probability table: {e}")))
}

impl SourceSampler {
    fn new(scn: &Scenario, s: Source) -> Result<Self> {
        let law = scn.x_law(s);
        let mut nodes = Vec::with_capacity(law.len());
        for (x, _) in &law {
            let w_law = scn.w_law(x);
            let mut w_nodes = Vec::with_capacity(w_law.len());
            for (w, _) in w_law {
                let treatment = match scn.treatment_law(s, x, w) {
                    Some(t) if !scn.is_covariate_only(s) => {
                        let arms: Vec<(Treatment, f64)> = t.iter().filter(|(_, &p)| p > 0.0).map(|(&a, &p)| (a, p)).collect();
                        let probs: Vec<f64> = arms.iter().map(|(_, p)| *p).collect();
                        let arms = arms
                            .iter()
                            .map(|&(a, _)| Ok(Arm { treatment: a, mean: scn.po(s, a, x, w)? }))
                            .collect::<Result<Vec<_>>>()?;
                        Some((weighted(&probs)?, arms))
                    }
                    _ => None,
                };
                w_nodes.push(WNode { w: levels(w), treatment });
            }
            let w_probs: Vec<f64> = w_law.iter().map(|(_, p)| *p).collect();
            nodes.push(XNode {
                x: levels(x),
                w: weighted(&w_probs)?,
                nodes: w_nodes,
            });
        }
        let probs: Vec<f64> = law.iter().map(|(_, p)| *p).collect();
        Ok(SourceSampler {
            source: s,
            x: weighted(&probs)?,
            nodes,
        })
    }
}

/// Draws `n` rows with a generator seeded from `seed`.
pub fn sample(scn: &Scenario, n: usize, seed: u64) -> Result<CompositeDataset> {
    sample_with(scn, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Draws `n` rows: source sizes are fixed, then X, W, A and Y are drawn in
/// turn within each source. Outcomes follow the means under the row's own
/// participation. W is recorded for external rows only.
pub fn sample_with<R: Rng + ?Sized>(scn: &Scenario, n: usize, rng: &mut R) -> Result<CompositeDataset> {
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let kind = scn.outcome_kind();
    let sd = scn.spec().noise_sd;
    let mut builder = DatasetBuilder::new(scn.schema().clone(), kind).with_capacity(n);
    for (s, size) in source_sizes(scn, n) {
        let sampler = SourceSampler::new(scn, s)?;
        let record_w = sampler.source == Source::EXTERNAL && scn.has_w();
        for _ in 0..size {
            let xn = &sampler.nodes[sampler.x.sample(rng)];
            let wn = &xn.nodes[xn.w.sample(rng)];
            let w = record_w.then_some(wn.w.as_slice());
            match &wn.treatment {
                None => builder.push(&xn.x, w, s, None, None, 1.0),
                Some((dist, arms)) => {
                    let arm = &arms[dist.sample(rng)];
                    let y = match kind {
                        OutcomeKind::Binary => f64::from(u8::from(rng.random_bool(arm.mean))),
                        OutcomeKind::Continuous => arm.mean + sd * rng.sample::<f64, _>(StandardNormal),
                    };
                    builder.push(&xn.x, w, s, Some(arm.treatment), Some(y), 1.0);
                }
            }
        }
    }
    builder.build(Some(scn.treatment_sets()))
}

/// Exact population law as a frequency-weighted dataset: one row per
/// (source, covariate cell, treatment, outcome value) with its probability as
/// weight. Continuous outcomes get a single row at the conditional mean.
pub fn population(scn: &Scenario) -> Result<CompositeDataset> {
    let kind = scn.outcome_kind();
    let mut builder = DatasetBuilder::new(scn.schema().clone(), kind);
    let mut push = |x: &[f64], w: Option<&[f64]>, s, a, mean: f64, weight: f64| match kind {
        OutcomeKind::Binary => {
            for (y, p) in [(1.0, mean), (0.0, 1.0 - mean)] {
                if weight * p > 0.0 {
                    builder.push(x, w, s, Some(a), Some(y), weight * p);
                }
            }
        }
        OutcomeKind::Continuous => builder.push(x, w, s, Some(a), Some(mean), weight),
    };
    let mut covariate_rows = Vec::new();
    for &s in scn.sources() {
        let share = scn.share(s);
        for (x, px) in scn.x_law(s) {
            let xv = levels(x);
            if scn.is_covariate_only(s) {
                covariate_rows.push((xv, s, share * px));
                continue;
            }
            if s == Source::EXTERNAL || !scn.has_w() {
                for (w, pw) in scn.w_law(x) {
                    let wv = levels(w);
                    let wref = scn.has_w().then_some(wv.as_slice());
                    let law = scn.treatment_law(s, x, w).expect("validated");
                    for (&a, &pa) in law.iter().filter(|(_, &p)| p > 0.0) {
                        push(&xv, wref, s, a, scn.po(s, a, x, w)?, share * px * pw * pa);
                    }
                }
            } else {
                // W is latent outside the external source; treatment there does
                // not depend on it, so it is marginalized into the mean.
                let mut by_a: BTreeMap<Treatment, f64> = BTreeMap::new();
                let (w0, _) = &scn.w_law(x)[0];
                for (&a, &pa) in scn.treatment_law(s, x, w0).expect("validated") {
                    if pa > 0.0 {
                        by_a.insert(a, pa);
                    }
                }
                for (a, pa) in by_a {
                    push(&xv, None, s, a, scn.po_x(s, a, x)?, share * px * pa);
                }
            }
        }
    }
    for (x, s, weight) in covariate_rows {
        builder.push(&x, None, s, None, None, weight);
    }
    builder.build(Some(scn.treatment_sets()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(name: &str) -> Scenario {
        Scenario::builtin(name).unwrap()
    }

    #[test]
    fn zero_rows_rejected() {
        assert!(matches!(sample(&scenario("dgp-a"), 0, 1), Err(Error::EmptySample)));
    }

    #[test]
    fn sizes_follow_shares() {
        let scn = scenario("dgp-d");
        let sizes = source_sizes(&scn, 100);
        assert_eq!(sizes.iter().map(|(_, k)| k).sum::<usize>(), 100);
        assert_eq!(sizes[0], (Source::EXTERNAL, 34));
        let sizes = source_sizes(&scenario("dgp-a"), 7);
        assert_eq!(sizes, vec![(Source::EXTERNAL, 4), (Source::TRIAL, 3)]);
    }

    #[test]
    fn same_seed_same_rows() {
        let scn = scenario("dgp-w");
        let a = sample(&scn, 500, 42).unwrap();
        let b = sample(&scn, 500, 42).unwrap();
        let c = sample(&scn, 500, 43).unwrap();
        let rows = |d: &CompositeDataset| d.records().map(|r| format!("{r:?}")).collect::<Vec<_>>();
        assert_eq!(rows(&a), rows(&b));
        assert_ne!(rows(&a), rows(&c));
    }

    #[test]
    fn empirical_covariate_law_concentrates() {
        let d = sample(&scenario("dgp-a"), 100_000, 7).unwrap();
        let trial: Vec<usize> = d.rows_in(Source::TRIAL).collect();
        let ones = trial.iter().filter(|&&i| d.x(i)[0] == 1.0).count();
        let p = ones as f64 / trial.len() as f64;
        assert!((p - 0.3).abs() < 0.01, "{p}");
    }

    #[test]
    fn w_recorded_for_external_rows_only() {
        let d = sample(&scenario("dgp-w"), 200, 3).unwrap();
        for i in 0..d.len() {
            assert_eq!(d.w(i).is_some(), d.source(i) == Source::EXTERNAL);
        }
    }

    #[test]
    fn covariate_only_source_has_no_outcomes() {
        let d = sample(&scenario("dgp-d-covariates"), 300, 3).unwrap();
        for i in d.rows_in(Source::TARGET) {
            assert!(d.treatment(i).is_none() && d.outcome(i).is_none());
        }
    }

    #[test]
    fn population_weights_sum_to_one() {
        for name in Scenario::builtin_names() {
            let d = population(&scenario(name)).unwrap();
            let total: f64 = d.weights().iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "{name}: {total}");
        }
    }
}
