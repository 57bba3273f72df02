//! Discrimination metrics for proportional-hazards survival models: Harrell's
//! C-index, its expected value under pairwise win probabilities, the
//! retrospective upper bound, subpopulation variants and discrimination
//! ratios, along with the estimation and evaluation pipeline around them.

pub mod baseline;
pub mod cohort;
pub mod concordance;
pub mod cox;
pub mod csvio;
pub mod error;
pub mod hazard;
pub mod report;
pub mod rng;
pub mod simulate;
pub mod stats;
pub mod study;

pub use baseline::{
    breslow_baseline, invert_hazard, kaplan_meier, observed_hazards, restricted_mean, BaselineSurvival,
    InversionResult,
};
pub use cohort::{validate_cohort, Cohort, DropReport, RawRecord, SurvivalRecord, ValidationOptions};
pub use concordance::{
    c_index, concordance_report, discrimination_ratio, expected_c_index, expected_sub_c_index,
    pairwise_win_probability, sub_c_index, within_sub_c_index, ConcordanceReport, GroupReport,
};
pub use csvio::{read_cohort_csv, write_cohort_csv};
pub use cox::{fit_cox, predict_hazard_ratios, CoxFit, CoxOptions, TieMethod};
pub use error::{Error, Result};
pub use hazard::{HazardAssignment, PredictionModel, Provenance};
pub use stats::{mann_whitney, replicate_summary, sign_test, MannWhitney, ReplicateSummary};
pub use simulate::{generate_cohort, monte_carlo_realized_ci, monte_carlo_win_probability, SimulationConfig, TruthBundle};
pub use study::{run_study, split_sweep, StudyConfig, StudyResult};
