//! The three pixel classifiers and the pipeline that drives them.
//!
//! All three start from the same mixture fitted on the gray-level
//! histogram. `EmMap` labels each pixel by its maximum-responsibility
//! component. `Dem` drops the posterior entirely and takes the nearest
//! class center on the local-mean feature. `Adem` blends the squared
//! gray and spatial distances per pixel:
//!
//! ```text
//! D(x, class i) = (1 - p) (gray - gray_center_i)^2
//!              +      p  (mean - spatial_center_i)^2
//! ```
//!
//! with `p` the fuzzy weight from [`crate::fuzzy`]. `p = 0` collapses to
//! nearest-gray labeling and `p = 1` to `Dem`, bit for bit.

use crate::features::{BorderPolicy, FeatureMaps, WindowSpec};
use crate::fuzzy::{self, FuzzyError, FuzzySystem};
use crate::gmm::{
    e_step, fit_em_histogram, EmConfig, GaussianMixture, GmmError, InitVariance,
};
use crate::image::{GrayImage, LabelMap};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Classification strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SegMethod {
    /// Maximum-responsibility labeling from the fitted mixture.
    EmMap,
    /// Nearest class center on the local-mean feature.
    Dem,
    /// Per-pixel weighted blend of gray and spatial squared distances.
    Adem,
}

impl SegMethod {
    pub const ALL: [SegMethod; 3] = [SegMethod::EmMap, SegMethod::Dem, SegMethod::Adem];

    pub fn name(&self) -> &'static str {
        match self {
            SegMethod::EmMap => "em",
            SegMethod::Dem => "dem",
            SegMethod::Adem => "adem",
        }
    }
}

impl fmt::Display for SegMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SegMethod {
    type Err = SegmentError;

    fn from_str(s: &str) -> Result<Self, SegmentError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "em" | "emmap" | "em-map" => Ok(SegMethod::EmMap),
            "dem" => Ok(SegMethod::Dem),
            "adem" => Ok(SegMethod::Adem),
            other => Err(SegmentError::BadMethod {
                got: other.to_string(),
            }),
        }
    }
}

/// Per-class centers for both coordinates of the adaptive distance.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCenters {
    pub gray: Vec<f64>,
    pub spatial: Vec<f64>,
}

impl ClassCenters {
    pub fn k(&self) -> usize {
        self.gray.len()
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SegmentError {
    #[error(transparent)]
    Fit(#[from] GmmError),
    #[error(transparent)]
    Fuzzy(#[from] FuzzyError),
    #[error("class count must be in 1..=256, got {k}")]
    BadK { k: usize },
    #[error("unknown method {got:?}, expected em, dem or adem")]
    BadMethod { got: String },
    #[error("invalid run manifest: {0}")]
    Manifest(String),
}

/// Both center coordinates are the fitted component means: inside a
/// homogeneous region the local mean converges to the region's gray
/// level, so the identification is exact in the noiseless limit.
pub fn centers_from_mixture(m: &GaussianMixture) -> ClassCenters {
    let means: Vec<f64> = m.components.iter().map(|c| c.mean).collect();
    ClassCenters {
        gray: means.clone(),
        spatial: means,
    }
}

/// Replaces the spatial centers with the responsibility-weighted mean of
/// the local-mean feature per component. Optional refinement; the
/// pipeline itself sticks with the gray identification.
pub fn reestimate_spatial_centers(
    centers: &mut ClassCenters,
    img: &GrayImage,
    fm: &FeatureMaps,
    m: &GaussianMixture,
) {
    let data: Vec<f64> = img.pixels().iter().map(|&v| f64::from(v)).collect();
    let resp = e_step(&data, m);
    for i in 0..centers.spatial.len() {
        let mut mass = 0.0;
        let mut sum = 0.0;
        for j in 0..data.len() {
            let r = resp.get(j, i);
            mass += r;
            sum += r * fm.mean[j];
        }
        if mass > 0.0 {
            centers.spatial[i] = sum / mass;
        }
    }
}

fn argmin_distance(values: &[f64], target: f64) -> u8 {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, &v) in values.iter().enumerate() {
        let d = (target - v) * (target - v);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best as u8
}

fn check_k(k: usize) -> Result<(), SegmentError> {
    if k == 0 || k > 256 {
        return Err(SegmentError::BadK { k });
    }
    Ok(())
}

/// MAP labeling: argmax responsibility, ties toward the smaller
/// component index. Responsibilities depend only on the gray value, so
/// the 256 possible rows are computed once and looked up per pixel.
pub fn classify_em_map(img: &GrayImage, m: &GaussianMixture) -> Result<LabelMap, SegmentError> {
    check_k(m.k())?;
    let values: Vec<f64> = (0..=255u16).map(f64::from).collect();
    let resp = e_step(&values, m);
    let mut lut = [0u8; 256];
    for (v, slot) in lut.iter_mut().enumerate() {
        let row = resp.row(v);
        let mut best = 0usize;
        let mut best_r = row[0];
        for (i, &r) in row.iter().enumerate().skip(1) {
            if r > best_r {
                best_r = r;
                best = i;
            }
        }
        *slot = best as u8;
    }
    let labels: Vec<u8> = img.pixels().iter().map(|&v| lut[v as usize]).collect();
    Ok(LabelMap::new(img.width(), img.height(), labels, m.k()).expect("labels in range"))
}

/// Nearest-center labeling on the raw gray level.
pub fn classify_nearest_gray(
    img: &GrayImage,
    centers: &ClassCenters,
) -> Result<LabelMap, SegmentError> {
    check_k(centers.k())?;
    let labels: Vec<u8> = img
        .pixels()
        .iter()
        .map(|&v| argmin_distance(&centers.gray, f64::from(v)))
        .collect();
    Ok(LabelMap::new(img.width(), img.height(), labels, centers.k()).expect("labels in range"))
}

/// Nearest-center labeling on the local-mean feature. The gray level is
/// not consulted.
pub fn classify_dem(fm: &FeatureMaps, centers: &ClassCenters) -> Result<LabelMap, SegmentError> {
    check_k(centers.k())?;
    let labels: Vec<u8> = fm
        .mean
        .iter()
        .map(|&mean| argmin_distance(&centers.spatial, mean))
        .collect();
    Ok(LabelMap::new(fm.width, fm.height, labels, centers.k()).expect("labels in range"))
}

/// The weighted squared distance between a pixel and one class.
pub fn adaptive_distance(gray: f64, spatial: f64, p: f64, center: (f64, f64)) -> f64 {
    assert!((0.0..=1.0).contains(&p), "weight {p} outside [0, 1]");
    let dg = gray - center.0;
    let ds = spatial - center.1;
    (1.0 - p) * dg * dg + p * ds * ds
}

/// Adaptive-distance labeling: argmin of [`adaptive_distance`] over the
/// classes, ties toward the smaller index. Requires `fm.p` to be filled.
pub fn classify_adem(
    img: &GrayImage,
    fm: &FeatureMaps,
    centers: &ClassCenters,
) -> Result<LabelMap, SegmentError> {
    check_k(centers.k())?;
    let mut labels = vec![0u8; fm.mean.len()];
    for (j, &v) in img.pixels().iter().enumerate() {
        let gray = f64::from(v);
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for i in 0..centers.k() {
            let d = adaptive_distance(
                gray,
                fm.mean[j],
                fm.p[j],
                (centers.gray[i], centers.spatial[i]),
            );
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        labels[j] = best as u8;
    }
    Ok(LabelMap::new(img.width(), img.height(), labels, centers.k()).expect("labels in range"))
}

/// Everything the pipeline needs besides the image and the method.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentConfig {
    pub k: usize,
    pub epsilon: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub init_variance: InitVariance,
    pub window: WindowSpec,
    pub s_threshold: f64,
    pub sigma_break: f64,
    /// Overrides the default membership functions when set.
    pub fuzzy: Option<FuzzySystem>,
}

impl SegmentConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            epsilon: 1e-3,
            max_iter: 200,
            seed: 0,
            init_variance: InitVariance::WithinCluster,
            window: WindowSpec::default(),
            s_threshold: 20.0,
            sigma_break: 40.0,
            fuzzy: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn em_config(&self) -> EmConfig {
        let mut cfg = EmConfig::new(self.k).with_seed(self.seed);
        cfg.epsilon = self.epsilon;
        cfg.max_iter = self.max_iter;
        cfg.init_variance = self.init_variance;
        cfg
    }

    fn fuzzy_system(&self) -> Result<FuzzySystem, FuzzyError> {
        match &self.fuzzy {
            Some(fs) => {
                fs.validate()?;
                Ok(fs.clone())
            }
            None => FuzzySystem::defaults(self.sigma_break, self.window.population()),
        }
    }
}

/// Output bundle of [`segment`].
#[derive(Debug, Clone)]
pub struct Segmentation {
    pub labels: LabelMap,
    pub mixture: GaussianMixture,
    pub features: FeatureMaps,
}

/// Fits the mixture on the gray histogram, computes the feature maps,
/// and labels every pixel with the requested method. Deterministic for
/// a given config.
pub fn segment(
    img: &GrayImage,
    method: SegMethod,
    cfg: &SegmentConfig,
) -> Result<Segmentation, SegmentError> {
    check_k(cfg.k)?;
    let mixture = fit_em_histogram(&img.histogram(), &cfg.em_config())?;
    let mut features = FeatureMaps::compute(img, cfg.window, cfg.s_threshold);
    if method == SegMethod::Adem {
        let fs = cfg.fuzzy_system()?;
        fuzzy::weight_map(&fs, &mut features);
    }
    let centers = centers_from_mixture(&mixture);
    let labels = match method {
        SegMethod::EmMap => classify_em_map(img, &mixture)?,
        SegMethod::Dem => classify_dem(&features, &centers)?,
        SegMethod::Adem => classify_adem(img, &features, &centers)?,
    };
    Ok(Segmentation {
        labels,
        mixture,
        features,
    })
}

/// Sidecar document describing one segmentation run completely enough
/// to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub method: String,
    pub k: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub max_iter: usize,
    pub window_radius: usize,
    pub s_threshold: f64,
    pub sigma_break: f64,
    pub border_policy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fuzzy: Option<FuzzySystem>,
}

impl RunManifest {
    pub fn new(method: SegMethod, cfg: &SegmentConfig) -> Self {
        Self {
            method: method.name().to_string(),
            k: cfg.k,
            seed: cfg.seed,
            epsilon: cfg.epsilon,
            max_iter: cfg.max_iter,
            window_radius: cfg.window.radius,
            s_threshold: cfg.s_threshold,
            sigma_break: cfg.sigma_break,
            border_policy: match cfg.window.border {
                BorderPolicy::Shrink => "shrink".to_string(),
                BorderPolicy::Clamp => "clamp".to_string(),
            },
            fuzzy: cfg.fuzzy.clone(),
        }
    }

    pub fn method(&self) -> Result<SegMethod, SegmentError> {
        self.method.parse()
    }

    pub fn to_config(&self) -> Result<SegmentConfig, SegmentError> {
        let border = match self.border_policy.as_str() {
            "shrink" => BorderPolicy::Shrink,
            "clamp" => BorderPolicy::Clamp,
            other => {
                return Err(SegmentError::Manifest(format!(
                    "unknown border policy {other:?}"
                )))
            }
        };
        if self.window_radius == 0 {
            return Err(SegmentError::Manifest("window radius must be >= 1".into()));
        }
        let mut cfg = SegmentConfig::new(self.k);
        cfg.epsilon = self.epsilon;
        cfg.max_iter = self.max_iter;
        cfg.seed = self.seed;
        cfg.window = WindowSpec::new(self.window_radius, border);
        cfg.s_threshold = self.s_threshold;
        cfg.sigma_break = self.sigma_break;
        cfg.fuzzy = self.fuzzy.clone();
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self, SegmentError> {
        serde_json::from_str(text).map_err(|e| SegmentError::Manifest(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialization cannot fail")
    }
}
