//! Fairness auditing and bias mitigation for ward-level tabular regression.
//!
//! The pipeline joins per-topic ward-year tables, trains one of five
//! regressor families, and audits how prediction error differs between the
//! Low and High halves of continuous sensitive features (population shares of
//! race and religion groups). Four training-set mitigations, two-feature
//! intersectional audits, cohort drift statistics and an experiment harness
//! sit on top.
//!
//! ```
//! use wardfair::harness::synth::{generate_fixture, FixtureConfig};
//! use wardfair::{encode_and_split, fairness, regressors, ModelKind, ModelSpec, SplitSpec};
//!
//! let fixture = generate_fixture(&FixtureConfig::default())?;
//! let rows = fixture.joined()?;
//! let (train, test) = encode_and_split(&rows, &fixture.schema, &SplitSpec::random(0.2, 7))?;
//! let model = regressors::train(&ModelSpec::new(ModelKind::Linear), &train, None)?;
//! let report = fairness::single_feature_audit(&model, &test, &test.sensitive_names(None))?;
//! assert_eq!(report.records.len() + report.skipped.len(), 6);
//! # Ok::<(), wardfair::Error>(())
//! ```

// `!(a > b)` is used deliberately so NaN falls on the rejecting side.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod drift;
pub mod error;
pub mod fairness;
pub mod harness;
pub mod intersectional;
pub mod mitigation;
pub mod regressors;
pub mod seed;

pub use dataset::{
    encode, encode_and_split, join_and_clean, load_tables, min_max_scale, split, EncodedDataset, FeatureSchema,
    JoinedRow, RawTable, SensitiveClass, SplitSpec,
};
pub use error::{Error, Result};
pub use fairness::{AuditReport, DisparityRecord, GroupAssignment, Level};
pub use mitigation::{AugmentedTrainSet, MitigationMethod, MitigationSpec};
pub use regressors::{train, ModelKind, ModelSpec, TrainedModel, WeightVector};
