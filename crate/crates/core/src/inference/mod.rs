//! Prediction, uncertainty, posterior simulation and stage-transition summaries.

mod posterior;
mod predict;
mod transitions;

pub use posterior::{
    posterior_draws, quantile_sorted, simulation_band, PosteriorDraws, SimulationBand,
};
pub use predict::{
    category_from_linear, category_prob_slopes, cumulative_from_eta, empirical_cumulative,
    frame_along, normal_quantile, predict_category, predict_category_at, predict_cumulative,
    predict_linear, CategoryPrediction, Direction, EmpiricalBin, LinearPrediction,
};
pub use transitions::{
    crossing_days, crossings_of_curve, default_grid, find_crossings, kde, quantile_day,
    quantile_day_from_probs, rate_of_change, rate_of_change_from_eta, silverman_bandwidth,
    transition_density, Crossing, DensitySummary, Grid, QuantileDay, RateCurves, ThresholdSamples,
    TransitionSamples,
};
