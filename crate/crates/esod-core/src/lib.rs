//! Feature-level object seeking, adaptive patch slicing and sparse detection.
//!
//! The crate is organised around the stages of a sliced detection pipeline:
//!
//! - [`grid`]: dense 2-D grids, channel stacks and the convolution/pooling
//!   primitives everything else computes with;
//! - [`label`]: Gaussian and hybrid objectness pseudo-labels from box
//!   annotations and external segmentation masks;
//! - [`seeker`]: the objectness estimator (depthwise block + 1x1 conv) with
//!   focal/dice losses and analytic gradients;
//! - [`slicer`]: center extraction and the uniform / greedy / parallel patch
//!   slicing strategies;
//! - [`sparse`]: detection-head evaluation restricted to sampled coordinates,
//!   equivalent to the dense head at those points;
//! - [`metrics`]: best-possible-recall, mask precision/recall, the MAC cost
//!   model and dataset sparsity statistics;
//! - [`pipeline`]: the end-to-end driver plus scene synthesis and reports.

pub mod error;
pub mod grid;
pub mod label;
pub mod metrics;
pub mod netpbm;
pub mod pipeline;
pub mod report;
pub mod seeker;
pub mod slicer;
pub mod sparse;
pub mod synth;
pub mod visdrone;

pub use error::{Error, Result};
pub use grid::{BitGrid, ConvSpec, FeatureStack, Grid2D};
pub use label::{BoundingBox, GaussianSpec, HybridMode, PseudoMask};
pub use metrics::{BprResult, CostReport, SceneAnnotation};
pub use seeker::{LossReport, ObjectnessMask, SeekerParams};
pub use slicer::{CenterSet, PatchBox, PatchPlan, Strategy, TokenSet};
pub use sparse::{Detection, SparseOutput, SparseSampleSet};
