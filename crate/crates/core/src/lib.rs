//! Visual-salience auditing for cookie-consent banners.
//!
//! Screenshots are turned into feature stacks ([`features`]), reduced to
//! per-pixel salience by histogram rarity ([`saliency`]), scored per button
//! and judged against a relative noticeability threshold ([`scoring`]),
//! optionally averaged over a seeded perturbation ensemble ([`perturb`]).
//! [`corpus`] handles target lists, acquisition and annotations, [`stats`]
//! the tables and tests run over a finished corpus, and [`pipeline`] ties
//! it all together behind a results store.

pub mod corpus;
pub mod error;
pub mod features;
pub mod grid;
pub mod image;
pub mod perturb;
pub mod pipeline;
pub mod saliency;
pub mod scoring;
pub mod stats;

pub use error::{Error, FmapError, Result};
pub use grid::{Grid, Interpolation};
pub use image::Screenshot;
pub use saliency::{FeatureMapStack, LayerMaps, RarityConfig, SalienceMap};
