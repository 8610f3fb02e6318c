//! Hounsfield-unit tissue-window normalization for CT deep learning, with
//! the evaluation tooling around it.
//!
//! * [`volume`]: CT and label volumes, the CTV on-disk format, slicing.
//! * [`windowing`]: STN, WIR and stochastic (SWN) window normalization.
//! * [`augment`]: paired spatial augmentation of image and label slices.
//! * [`metrics`]: Dice scores and summary statistics.
//! * [`stats`]: Wilcoxon signed-rank test, Benjamini–Hochberg FDR, method
//!   comparison tables.
//! * [`simulation`]: synthetic phantoms, a band segmenter, and the
//!   intensity-shift robustness sweep.
//! * [`cli`]: the `ctwindow` command line.

pub mod augment;
pub mod cli;
pub mod config;
pub mod error;
pub mod metrics;
pub mod rng;
pub mod simulation;
pub mod stats;
pub mod volume;
pub mod windowing;

pub use error::{Error, Result};
pub use volume::{CtVolume, LabelSlice, LabelVolume, Slice2D};
pub use windowing::{Strategy, SwnParams, WindowSampler, WindowSpec};
