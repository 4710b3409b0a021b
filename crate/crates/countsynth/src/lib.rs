//! Synthesis of categorical data at the contingency-table level with
//! saturated negative-binomial count models, plus the disclosure-risk and
//! utility machinery needed to tune a release.
//!
//! The pipeline: aggregate microdata (or generate a fixture) into a
//! [`table::ContingencyTable`]; draw m independent synthetic replicates with
//! [`synthesis::synthesize`], tuning the dispersion sigma, the pseudocount
//! alpha and the expected-size factor rho; quantify disclosure risk with the
//! tau band metrics in [`risk`] (empirically, or analytically straight from
//! the cell-size spectrum); measure utility with the distances and the
//! interval-overlap in [`utility`]; obtain analyst-side estimates with the
//! combining rules in [`inference`]; and sweep (m, sigma) with [`grid`] to
//! position a release on the risk-utility trade-off.
//!
//! Everything is deterministic given the seeds: replicates ride on
//! counter-based RNG streams keyed by (master seed, replicate index), so
//! ensembles are independent of thread count and an m-prefix of a larger
//! run equals a smaller run.

pub mod error;
pub mod grid;
pub mod inference;
pub mod io;
pub mod risk;
pub mod schema;
pub mod spectrum;
pub mod synthesis;
pub mod table;
pub mod utility;

pub use error::{Error, Result};
pub use grid::{analytic_grid, evaluate_grid, GridSpec, TradeoffPoint};
pub use inference::{
    analyze_ensemble, combine_tp, combine_ts, log_odds_ratio, marginalize_2x2, AnalysisMode,
    CombinedEstimate, Estimator, MarginalOddsSpec,
};
pub use risk::{
    tau1_band, tau3_analytic, tau3_empirical, tau3_exact_m1, tau4_analytic, tau4_empirical,
    TauBandQuery, TauReport,
};
pub use schema::{Schema, Variable};
pub use spectrum::{fixture_from_spectrum, tau_spectrum, Binning, SpectrumSpec, TauSpectrum};
pub use synthesis::{
    derive_seed, nbi_pmf, synthesize, synthesize_iter, synthesize_once, NbiSampler,
    SynthesisParams, SyntheticEnsemble,
};
pub use table::{aggregate_microdata, CellTable, ContingencyTable, RealTable};
pub use utility::{
    ci_overlap, euclidean, hellinger, percent_differences, DistanceBasis, IntervalEstimate,
    UtilityReport,
};
