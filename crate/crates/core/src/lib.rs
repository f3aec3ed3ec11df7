//! Grayscale image segmentation built on 1-D Gaussian mixtures.
//!
//! The crate covers the full pipeline: PGM input, window features
//! (local mean, local deviation, close-neighbor counts), EM fitting of a
//! gray-level mixture, a fuzzy weighting engine that blends gray and
//! spatial evidence per pixel, three pixel classifiers (posterior,
//! spatial distance, adaptive distance), and an evaluation harness with
//! phantom images and noise injectors.
//!
//! ```
//! use grayseg::eval::{make_phantom, PhantomLayout};
//! use grayseg::segment::{segment, SegMethod, SegmentConfig};
//!
//! let ph = make_phantom(60, 60, &[30, 120, 220], PhantomLayout::Bands, 0).unwrap();
//! let cfg = SegmentConfig::new(3);
//! let out = segment(&ph.image, SegMethod::Adem, &cfg).unwrap();
//! assert_eq!(out.labels.pixels(), ph.truth.pixels());
//! ```

pub mod eval;
pub mod features;
pub mod fuzzy;
pub mod gmm;
pub mod image;
pub mod seeds;
pub mod segment;

pub use eval::{NoiseKind, NoiseSpec, Phantom, PhantomLayout, SegReport};
pub use features::{BorderPolicy, FeatureMaps, WindowSpec};
pub use fuzzy::{FuzzySystem, MembershipFn, WeightResult};
pub use gmm::{EmConfig, GaussianComponent, GaussianMixture};
pub use image::{GrayImage, LabelMap};
pub use segment::{ClassCenters, SegMethod, SegmentConfig};
