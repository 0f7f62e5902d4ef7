//! Enumerable data-generating processes with known potential-outcome
//! structure: exact truths, exact condition checks, and finite samples.

mod conditions;
mod sample;
mod scenario;
mod truth;

pub use conditions::{applicable, check_conditions, ConditionFlags, Positivity, TargetFlags, FLAG_TOLERANCE};
pub use sample::{population, sample, sample_with, source_sizes};
pub use scenario::{Law, Scenario, ScenarioSpec, TABLE_TOLERANCE};
pub use truth::{true_estimand, true_mean, true_named, truth_table, TruthTable};
