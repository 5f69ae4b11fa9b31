//! Lung ultrasound video screening pipeline.
//!
//! Videos are decoded into fixed-length clips ([`preprocess`]), embedded frame
//! by frame with a frozen convolutional [`backbone`], and classified by a
//! stacked GRU head ([`model`]). [`trainer`] runs the optimisation loop with
//! plateau learning-rate decay and early stopping, and [`evaluation`] turns
//! predictions into a confusion matrix, per-class metrics and learning curves.

pub mod backbone;
pub mod dataset;
pub mod evaluation;
pub mod model;
pub mod preprocess;
pub mod synthetic;
pub mod trainer;
pub mod video;
