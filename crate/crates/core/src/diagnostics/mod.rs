//! Measurements on generated samples and denoising trajectories.

mod decomposition;
mod geometry;
mod report;
mod stats;

pub use decomposition::{
    decompose, decomposition_series, deviation_metrics, Baseline, BasisKind, Decomposition,
    DecompositionSeries, DecompositionStep, DeviationMetrics, Trajectory,
};
pub use geometry::{
    k_ratio, mem_score, pred_latent_geometry, similarity, x0_geometry, MemScore, PredLatentGeometry, X0Geometry,
};
pub use report::{
    ConditionMetrics, Correlation, MetricsReport, SeriesPoint, CORRELATED_METRICS, REPORT_COLUMNS, REPORT_VERSION,
};
pub use stats::{covariance_trace, pc1_alignment, pearson, top_principal_component, PcAlignment, PowerIterationConfig};
