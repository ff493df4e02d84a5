//! Screening engine for LLM-assisted systematic reviews: corpus ingest,
//! prompt construction, a caching model gateway, multi-round orchestration
//! with human review, agreement and accuracy statistics, random-effects
//! pooling of ablation contrasts, and classical text-classifier baselines.

pub mod classical;
pub mod corpus;
pub mod evaluation;
pub mod gateway;
pub mod metaanalysis;
pub mod orchestrator;
pub mod prompting;
pub mod scalar;
pub mod synthetic;

pub use scalar::Real;

pub type Metrics = evaluation::Metrics<f64>;
pub type AgreementReport = evaluation::AgreementReport<f64>;
pub type BootstrapCI = metaanalysis::BootstrapCI<f64>;
pub type EffectEstimate = metaanalysis::EffectEstimate<f64>;
pub type PooledEffect = metaanalysis::PooledEffect<f64>;
pub type AblationReport = orchestrator::ablation::AblationReport<f64>;
pub type Phase3Report = classical::Phase3Report<f64>;
pub type ModelBundle = classical::ModelBundle<f64>;
pub type TfIdfModel = classical::TfIdfModel<f64>;
pub type Metrics32 = evaluation::Metrics<f32>;
pub type PooledEffect32 = metaanalysis::PooledEffect<f32>;
