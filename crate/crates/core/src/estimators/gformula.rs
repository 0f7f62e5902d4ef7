//! Outcome-regression (g-formula) plug-ins.

use std::collections::BTreeSet;

use super::{EstimandSpec, Estimator, Strategy, Value};
use crate::dataset::{CovariateSet, Source, Treatment};
use crate::error::{Error, Result};
use crate::nuisance::{fit_model, Response, Subset};

/// Fitted denominators closer to zero than this abort the ratio functional.
pub(crate) const DENOMINATOR_TOLERANCE: f64 = 1e-8;

impl Estimator<'_> {
    pub(super) fn gformula_value(&self, spec: &EstimandSpec) -> Result<Value> {
        let point = match spec.strategy {
            Strategy::PomGform => self.gamma(spec.source, spec.treatment, spec.target)?,
            Strategy::PomPooledControl => self.pooled_control(spec.treatment, spec.target)?,
            Strategy::PomExternalUniform => self.external_uniform(spec.treatment, spec.target)?,
            Strategy::PomDiffAnchor => {
                self.check_anchor_arms(spec)?;
                self.gamma(spec.source, spec.treatment, spec.target)?
                    + self.gamma(spec.anchor_source, spec.anchor_treatment, spec.target)?
                    - self.gamma(spec.source, spec.anchor_treatment, spec.target)?
            }
            Strategy::PomRatioAnchor => self.ratio_anchor(spec)?,
            Strategy::PomNestedW => self.nested_w(spec.treatment, spec.target)?,
        };
        Ok(Value {
            point,
            warnings: Vec::new(),
        })
    }

    /// γ_{s,a}: average over `target` rows of E[Y | X, S=s, A=a].
    pub(crate) fn gamma(&self, s: Source, a: Treatment, target: Source) -> Result<f64> {
        let model = self.cell_mean(s, a)?;
        let mut m = model.predictor(self.data);
        self.marginalize(target, |i| m.predict(i))
    }

    /// Requires every row of source 0 to carry `a`.
    pub(crate) fn require_uniform_external(&self, a: Treatment) -> Result<()> {
        let codes: BTreeSet<Treatment> = self
            .data
            .rows_in(Source::EXTERNAL)
            .filter_map(|i| self.data.treatment(i))
            .collect();
        if codes.len() > 1 {
            let list: Vec<String> = codes.iter().map(|c| c.to_string()).collect();
            return Err(Error::ExternalNotUniform(format!(
                ": source 0 contains treatments {}",
                list.join(", ")
            )));
        }
        match codes.first() {
            Some(&c) if c != a => Err(Error::ExternalNotUniform(format!(
                ": source 0 received treatment {c}, the functional needs {a}"
            ))),
            _ => Ok(()),
        }
    }

    fn pooled_control(&self, a: Treatment, target: Source) -> Result<f64> {
        self.require_uniform_external(a)?;
        if self.cell_weight(Source::TRIAL, a) <= 0.0 {
            return Err(Error::EmptyCell {
                s: Source::TRIAL,
                a,
            });
        }
        let model = self.outcome_model(
            CovariateSet::X,
            Subset::sources(&[Source::EXTERNAL, Source::TRIAL], Some(a)),
        )?;
        let mut m = model.predictor(self.data);
        self.marginalize(target, |i| m.predict(i))
    }

    fn external_uniform(&self, a: Treatment, target: Source) -> Result<f64> {
        self.require_uniform_external(a)?;
        let model = self
            .outcome_model(CovariateSet::X, Subset::source(Source::EXTERNAL))
            .map_err(|e| match e {
                Error::EmptySubset(_) => Error::EmptyCell {
                    s: Source::EXTERNAL,
                    a,
                },
                e => e,
            })?;
        let mut m = model.predictor(self.data);
        self.marginalize(target, |i| m.predict(i))
    }

    /// The anchor arm must be present in the effect source and the anchor
    /// source, and the effect arm in the effect source.
    pub(crate) fn check_anchor_arms(&self, spec: &EstimandSpec) -> Result<()> {
        for s in [spec.anchor_source, spec.source] {
            if self.cell_weight(s, spec.anchor_treatment) <= 0.0 {
                return Err(Error::MissingAnchorArm {
                    s,
                    a: spec.anchor_treatment,
                });
            }
        }
        if self.cell_weight(spec.source, spec.treatment) <= 0.0 {
            return Err(Error::EmptyCell {
                s: spec.source,
                a: spec.treatment,
            });
        }
        Ok(())
    }

    fn ratio_anchor(&self, spec: &EstimandSpec) -> Result<f64> {
        self.check_anchor_arms(spec)?;
        let anchor = self.cell_mean(spec.anchor_source, spec.anchor_treatment)?;
        let numerator = self.cell_mean(spec.source, spec.treatment)?;
        let denominator = self.cell_mean(spec.source, spec.anchor_treatment)?;
        let (mut m_anchor, mut m_num, mut m_den) = (
            anchor.predictor(self.data),
            numerator.predictor(self.data),
            denominator.predictor(self.data),
        );
        self.marginalize(spec.target, |i| {
            let den = m_den.predict(i)?;
            if den.abs() < DENOMINATOR_TOLERANCE {
                return Err(self.near_zero(den, i));
            }
            Ok(m_anchor.predict(i)? * m_num.predict(i)? / den)
        })
    }

    pub(crate) fn near_zero(&self, value: f64, i: usize) -> Error {
        let cell = self
            .data
            .x_cell(i, None)
            .map(|k| k.to_string())
            .unwrap_or_else(|_| format!("{:?}", self.data.x(i)));
        Error::DenominatorNearZero { value, cell }
    }

    /// Rows of source 0 with positive weight but no W.
    pub(crate) fn require_w(&self) -> Result<()> {
        let external = || self.data.rows_in(Source::EXTERNAL).filter(|&i| self.data.weight(i) > 0.0);
        if !self.data.has_w() {
            return Err(Error::MissingW(external().count().max(1)));
        }
        let missing = external().filter(|&i| self.data.w(i).is_none()).count();
        if missing > 0 {
            return Err(Error::MissingW(missing));
        }
        Ok(())
    }

    fn nested_w(&self, a: Treatment, target: Source) -> Result<f64> {
        self.require_w()?;
        if self.cell_weight(Source::EXTERNAL, a) <= 0.0 {
            return Err(Error::EmptyCell {
                s: Source::EXTERNAL,
                a,
            });
        }
        let stage_two = self.cached(super::ModelKey::StageTwo { treatment: a }, || {
            let inner = self.outcome_model(CovariateSet::XW, Subset::cell(Source::EXTERNAL, a))?;
            let mut m = inner.predictor(self.data);
            // The inner mean is evaluated on every external row, whatever its
            // treatment, before the second regression on X.
            let mut fitted = vec![f64::NAN; self.data.len()];
            for i in self.data.rows_in(Source::EXTERNAL) {
                if self.data.weight(i) > 0.0 {
                    fitted[i] = m.predict(i)?;
                }
            }
            fit_model(
                self.data,
                CovariateSet::X,
                &Subset::source(Source::EXTERNAL),
                Response::Values(&fitted),
                self.config.stage_two_family,
                &self.config,
            )
        })?;
        let mut m = stage_two.predictor(self.data);
        self.marginalize(target, |i| m.predict(i))
    }
}
