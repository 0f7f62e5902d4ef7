//! Normalized (Hájek) weighting forms of the same functionals.
//!
//! Each form reweights the rows that carry the outcome information so that
//! their covariate distribution matches the target population, then takes a
//! weight-normalized mean. With saturated nuisances every form reproduces the
//! corresponding g-formula plug-in exactly.

use super::gformula::DENOMINATOR_TOLERANCE;
use super::{EstimandSpec, Estimator, Strategy, Value};
use crate::dataset::{CovariateSet, Source, Treatment};
use crate::error::{Error, Result};
use std::sync::Arc;

use crate::nuisance::{OutcomeModel, RowPredictor};

/// Counts propensity denominators that needed flooring.
struct Floor {
    floor: f64,
    floored: usize,
    total: usize,
}

impl Floor {
    fn apply(&mut self, p: f64) -> f64 {
        self.total += 1;
        if p < self.floor {
            self.floored += 1;
            self.floor
        } else {
            p
        }
    }

    /// Records a positivity check without using the value.
    fn check(&mut self, p: f64) {
        self.apply(p);
    }
}

/// A probability at row `i`; an unseen covariate cell has probability zero.
fn probability(p: &mut RowPredictor<'_>, i: usize) -> Result<f64> {
    match p.predict(i) {
        Ok(v) => Ok(v.clamp(0.0, 1.0)),
        Err(Error::UnseenCategoryLevel(_)) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Running Hájek sums.
#[derive(Default)]
struct Hajek {
    weighted: f64,
    total: f64,
}

impl Hajek {
    fn add(&mut self, w: f64, y: f64) {
        self.weighted += w * y;
        self.total += w;
    }

    fn mean(&self, s: Source, a: Treatment) -> Result<f64> {
        if self.total > 0.0 {
            Ok(self.weighted / self.total)
        } else {
            Err(Error::EmptyCell {
                s,
                a,
            })
        }
    }
}

impl Estimator<'_> {
    pub(super) fn ipw_value(&self, spec: &EstimandSpec) -> Result<Value> {
        let mut floor = Floor {
            floor: self.config.propensity_floor,
            floored: 0,
            total: 0,
        };
        let point = match spec.strategy {
            Strategy::PomGform => self.ipw_gamma(spec.source, spec.treatment, spec.target, &mut floor)?,
            Strategy::PomPooledControl => self.ipw_pooled(spec.treatment, spec.target, &mut floor)?,
            Strategy::PomExternalUniform => self.ipw_external(spec.treatment, spec.target, &mut floor)?,
            Strategy::PomDiffAnchor => {
                self.check_anchor_arms(spec)?;
                self.ipw_gamma(spec.source, spec.treatment, spec.target, &mut floor)?
                    + self.ipw_gamma(spec.anchor_source, spec.anchor_treatment, spec.target, &mut floor)?
                    - self.ipw_gamma(spec.source, spec.anchor_treatment, spec.target, &mut floor)?
            }
            Strategy::PomRatioAnchor => self.ipw_ratio(spec, &mut floor)?,
            Strategy::PomNestedW => self.ipw_nested(spec.treatment, spec.target, &mut floor)?,
        };
        let mut warnings = Vec::new();
        if floor.floored > 0 {
            if floor.floored as f64 > self.config.max_floored_fraction * floor.total as f64 {
                return Err(Error::PositivityFloorTriggered {
                    floored: floor.floored,
                    total: floor.total,
                });
            }
            let msg = format!(
                "{} of {} propensity denominators were floored at {:e}",
                floor.floored, floor.total, floor.floor
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        Ok(Value { point, warnings })
    }

    /// Participation odds Pr[S=target|X] / Pr[S=s|X], or `None` when s = target.
    fn participation_pair(&self, s: Source, target: Source) -> Result<Option<(Arc<OutcomeModel>, Arc<OutcomeModel>)>> {
        if s == target {
            return Ok(None);
        }
        Ok(Some((self.participation(target)?, self.participation(s)?)))
    }

    /// Rows {S=s, A=a} weighted by [π_target/π_s](x) / e_{s,a}(x).
    fn ipw_gamma(&self, s: Source, a: Treatment, target: Source, floor: &mut Floor) -> Result<f64> {
        let e = self.treatment_propensity(s, a, CovariateSet::X)?;
        let mut e = e.predictor(self.data);
        let pair = self.participation_pair(s, target)?;
        let mut pi = pair.as_ref().map(|(t, s)| (t.predictor(self.data), s.predictor(self.data)));
        let data = self.data;
        let mut sums = Hajek::default();
        for i in 0..data.len() {
            let w = data.weight(i);
            if w <= 0.0 {
                continue;
            }
            let in_cell = data.source(i) == s && data.treatment(i) == Some(a);
            let in_target = data.source(i) == target;
            if !in_cell && !in_target {
                continue;
            }
            let (num, den) = match pi.as_mut() {
                Some((pt, ps)) => (probability(pt, i)?, probability(ps, i)? * probability(&mut e, i)?),
                None => (1.0, probability(&mut e, i)?),
            };
            if in_target {
                floor.check(den);
            }
            if in_cell {
                if let Some(y) = data.outcome(i) {
                    sums.add(w * num / floor.apply(den), y);
                }
            }
        }
        sums.mean(s, a)
    }

    /// Pooled control rows weighted by π_target(x) / Σ_s π_s(x) e_{s,a}(x).
    fn ipw_pooled(&self, a: Treatment, target: Source, floor: &mut Floor) -> Result<f64> {
        self.require_uniform_external(a)?;
        if self.cell_weight(Source::TRIAL, a) <= 0.0 {
            return Err(Error::EmptyCell {
                s: Source::TRIAL,
                a,
            });
        }
        let pooled = [Source::EXTERNAL, Source::TRIAL];
        let mut parts = Vec::new();
        for s in pooled {
            if self.cell_weight(s, a) > 0.0 {
                parts.push((self.participation(s)?, self.treatment_propensity(s, a, CovariateSet::X)?));
            }
        }
        let mut parts: Vec<_> = parts
            .iter()
            .map(|(p, e)| (p.predictor(self.data), e.predictor(self.data)))
            .collect();
        let pt = self.participation(target)?;
        let mut pt = pt.predictor(self.data);
        let data = self.data;
        let mut sums = Hajek::default();
        for i in 0..data.len() {
            let w = data.weight(i);
            if w <= 0.0 {
                continue;
            }
            let in_pool = pooled.contains(&data.source(i)) && data.treatment(i) == Some(a);
            let in_target = data.source(i) == target;
            if !in_pool && !in_target {
                continue;
            }
            let mut den = 0.0;
            for (p, e) in parts.iter_mut() {
                den += probability(p, i)? * probability(e, i)?;
            }
            if in_target {
                floor.check(den);
            }
            if in_pool {
                if let Some(y) = data.outcome(i) {
                    sums.add(w * probability(&mut pt, i)? / floor.apply(den), y);
                }
            }
        }
        sums.mean(Source::TRIAL, a)
    }

    /// All external rows weighted by π_target(x) / π_0(x).
    fn ipw_external(&self, a: Treatment, target: Source, floor: &mut Floor) -> Result<f64> {
        self.require_uniform_external(a)?;
        if self.cell_weight(Source::EXTERNAL, a) <= 0.0 {
            return Err(Error::EmptyCell {
                s: Source::EXTERNAL,
                a,
            });
        }
        let (pt, p0) = (self.participation(target)?, self.participation(Source::EXTERNAL)?);
        let (mut pt, mut p0) = (pt.predictor(self.data), p0.predictor(self.data));
        let data = self.data;
        let mut sums = Hajek::default();
        for i in 0..data.len() {
            let w = data.weight(i);
            let s = data.source(i);
            if w <= 0.0 || (s != Source::EXTERNAL && s != target) {
                continue;
            }
            let den = probability(&mut p0, i)?;
            if s == target {
                floor.check(den);
            }
            if s == Source::EXTERNAL {
                if let Some(y) = data.outcome(i) {
                    sums.add(w * probability(&mut pt, i)? / floor.apply(den), y);
                }
            }
        }
        sums.mean(Source::EXTERNAL, a)
    }

    /// Anchor-arm rows weighted toward the target, carrying the outcome
    /// rescaled by the fitted ratio m_{s,a}(x) / m_{s,anchor}(x).
    fn ipw_ratio(&self, spec: &EstimandSpec, floor: &mut Floor) -> Result<f64> {
        self.check_anchor_arms(spec)?;
        let (anchor, a0, effect, target) = (spec.anchor_source, spec.anchor_treatment, spec.source, spec.target);
        let numerator = self.cell_mean(effect, spec.treatment)?;
        let denominator = self.cell_mean(effect, a0)?;
        let (mut m_num, mut m_den) = (numerator.predictor(self.data), denominator.predictor(self.data));
        let e = self.treatment_propensity(anchor, a0, CovariateSet::X)?;
        let mut e = e.predictor(self.data);
        let pair = self.participation_pair(anchor, target)?;
        let mut pi = pair.as_ref().map(|(t, s)| (t.predictor(self.data), s.predictor(self.data)));
        let data = self.data;
        let mut sums = Hajek::default();
        for i in 0..data.len() {
            let w = data.weight(i);
            if w <= 0.0 {
                continue;
            }
            let in_cell = data.source(i) == anchor && data.treatment(i) == Some(a0);
            let in_target = data.source(i) == target;
            if !in_cell && !in_target {
                continue;
            }
            let (num, den) = match pi.as_mut() {
                Some((pt, ps)) => (probability(pt, i)?, probability(ps, i)? * probability(&mut e, i)?),
                None => (1.0, probability(&mut e, i)?),
            };
            if in_target {
                floor.check(den);
            }
            if in_cell {
                if let Some(y) = data.outcome(i) {
                    let d = m_den.predict(i)?;
                    if d.abs() < DENOMINATOR_TOLERANCE {
                        return Err(self.near_zero(d, i));
                    }
                    sums.add(w * num / floor.apply(den), y * m_num.predict(i)? / d);
                }
            }
        }
        sums.mean(anchor, a0)
    }

    /// External rows with treatment `a`, weighted by [π_target/π_0](x) / e_{0,a}(x, w).
    fn ipw_nested(&self, a: Treatment, target: Source, floor: &mut Floor) -> Result<f64> {
        self.require_w()?;
        let e = self.treatment_propensity(Source::EXTERNAL, a, CovariateSet::XW)?;
        let mut e = e.predictor(self.data);
        let (pt, p0) = (self.participation(target)?, self.participation(Source::EXTERNAL)?);
        let (mut pt, mut p0) = (pt.predictor(self.data), p0.predictor(self.data));
        let data = self.data;
        let mut sums = Hajek::default();
        for i in 0..data.len() {
            let w = data.weight(i);
            let s = data.source(i);
            if w <= 0.0 {
                continue;
            }
            if s == target {
                floor.check(probability(&mut p0, i)?);
            }
            if s != Source::EXTERNAL {
                continue;
            }
            // Positivity of the external treatment given (X, W) is needed on
            // every external row, not only the treated ones.
            let ea = floor.apply(probability(&mut e, i)?);
            if data.treatment(i) == Some(a) {
                if let Some(y) = data.outcome(i) {
                    let odds = probability(&mut pt, i)? / floor.apply(probability(&mut p0, i)?);
                    sums.add(w * odds / ea, y);
                }
            }
        }
        sums.mean(Source::EXTERNAL, a)
    }
}
