//! End-to-end localization: synthetic scenes and query sets, the
//! single-image / image-set localization flow, evaluation, tables and the
//! line-delimited file formats.

pub mod evaluate;
pub mod io;
pub mod localize;
pub mod report;
pub mod synthetic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use evaluate::{evaluate, EvalReport, ImageError, Registration, Summary};
pub use localize::{
    localize, refine_registration, set_correspondences, LocalizationResult, LocalizationStatus,
    LocalizeConfig, LocalizeMode, QuerySet, SetCorrespondences,
};
pub use report::{render_csv, render_text, ReportRow};
pub use synthetic::{
    generate_suite, generate_synthetic, GroundTruth, SyntheticConfig, SyntheticQuery,
};

use crate::geometry::GeometryError;
use crate::local_model::LocalModelError;
use crate::matcher::MatchError;
use crate::refine::RefineError;
use crate::solver::SolverError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("results and ground truth disagree on ids: {0}")]
    MismatchedIds(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    LocalModel(#[from] LocalModelError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Refine(#[from] RefineError),
}

/// Settings shared by the CLI verbs; every field has a default so a config
/// file only needs the values it overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub synthetic: SyntheticConfig,
    pub localize: LocalizeConfig,
}
