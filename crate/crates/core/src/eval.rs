//! Ground-truthed phantoms, noise injection, and scoring.
//!
//! Phantoms pair an image with the label map it was painted from, so a
//! segmentation can be scored exactly. Misclassifications are split into
//! region and contour zones, where "contour" means the ground-truth
//! neighborhood of the pixel contains more than one class. Predicted
//! labels are aligned to the truth classes by best-match permutation
//! before counting, since clustering output is only defined up to
//! relabeling.

use crate::image::{GrayImage, LabelMap};
use crate::segment::{segment, SegMethod, SegmentConfig, SegmentError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("phantom needs at least 2 distinct class levels, got {got}")]
    TooFewClasses { got: usize },
    #[error("class levels must be distinct, {level} repeats")]
    RepeatedLevel { level: u8 },
    #[error("cannot build phantom: {0}")]
    Phantom(String),
    #[error("noise amount must be in [0, 1], got {got}")]
    BadAmount { got: f64 },
    #[error("dimension mismatch: {a_w}x{a_h} vs {b_w}x{b_h}")]
    DimMismatch {
        a_w: usize,
        a_h: usize,
        b_w: usize,
        b_h: usize,
    },
    #[error("class count mismatch: {a} vs {b}")]
    KMismatch { a: usize, b: usize },
    #[error(transparent)]
    Segment(#[from] SegmentError),
}

/// Spatial arrangement of the phantom classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomLayout {
    /// Horizontal bands of equal height, remainder rows to the last.
    Bands,
    /// Class-0 background with one disk per remaining class.
    Disks,
    /// Background, solid blobs, and a field of 1-2 pixel wide strokes
    /// for the last class.
    FineStructures,
}

impl fmt::Display for PhantomLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhantomLayout::Bands => "bands",
            PhantomLayout::Disks => "disks",
            PhantomLayout::FineStructures => "fine_structures",
        })
    }
}

impl FromStr for PhantomLayout {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, EvalError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bands" => Ok(PhantomLayout::Bands),
            "disks" => Ok(PhantomLayout::Disks),
            "fine_structures" | "fine-structures" | "fine" => Ok(PhantomLayout::FineStructures),
            other => Err(EvalError::Phantom(format!("unknown layout {other:?}"))),
        }
    }
}

/// Synthetic test image with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: GrayImage,
    pub truth: LabelMap,
    pub class_levels: Vec<u8>,
}

fn validate_levels(levels: &[u8]) -> Result<(), EvalError> {
    if levels.len() < 2 {
        return Err(EvalError::TooFewClasses { got: levels.len() });
    }
    let mut seen = [false; 256];
    for &l in levels {
        if seen[l as usize] {
            return Err(EvalError::RepeatedLevel { level: l });
        }
        seen[l as usize] = true;
    }
    Ok(())
}

/// Paints a deterministic phantom. Every class ends up with at least 5%
/// of the pixels or construction fails; only the disks layout consumes
/// the seed (center jitter).
pub fn make_phantom(
    width: usize,
    height: usize,
    class_levels: &[u8],
    layout: PhantomLayout,
    seed: u64,
) -> Result<Phantom, EvalError> {
    validate_levels(class_levels)?;
    if width == 0 || height == 0 {
        return Err(EvalError::Phantom("empty dimensions".into()));
    }
    let k = class_levels.len();
    let labels = match layout {
        PhantomLayout::Bands => paint_bands(width, height, k)?,
        PhantomLayout::Disks => paint_disks(width, height, k, seed)?,
        PhantomLayout::FineStructures => paint_fine_structures(width, height, k)?,
    };

    let n = width * height;
    let mut counts = vec![0usize; k];
    for &l in &labels {
        counts[l as usize] += 1;
    }
    let floor = (n as f64 * 0.05).ceil() as usize;
    if let Some((cls, &c)) = counts.iter().enumerate().find(|&(_, &c)| c < floor) {
        return Err(EvalError::Phantom(format!(
            "class {cls} covers {c}/{n} pixels, below the 5% floor (dimensions too small)"
        )));
    }

    let pixels: Vec<u8> = labels.iter().map(|&l| class_levels[l as usize]).collect();
    Ok(Phantom {
        image: GrayImage::new(width, height, pixels).expect("validated dims"),
        truth: LabelMap::new(width, height, labels, k).expect("labels in range"),
        class_levels: class_levels.to_vec(),
    })
}

fn paint_bands(width: usize, height: usize, k: usize) -> Result<Vec<u8>, EvalError> {
    if height < k {
        return Err(EvalError::Phantom(format!(
            "bands need at least {k} rows, image has {height}"
        )));
    }
    let rows_per = height / k;
    let mut labels = vec![0u8; width * height];
    for y in 0..height {
        let band = (y / rows_per).min(k - 1) as u8;
        labels[y * width..(y + 1) * width].fill(band);
    }
    Ok(labels)
}

fn paint_disks(width: usize, height: usize, k: usize, seed: u64) -> Result<Vec<u8>, EvalError> {
    let disks = k - 1;
    let cols = (disks as f64).sqrt().ceil() as usize;
    let rows = disks.div_ceil(cols);
    let cell_w = width / cols;
    let cell_h = height / rows;

    // Radius sized for 5.5% of the area per disk, then checked against
    // the grid cell so disks never touch each other or the border.
    let radius = (0.055 * (width * height) as f64 / std::f64::consts::PI).sqrt();
    let fit = cell_w.min(cell_h) as f64 / 2.0 - 3.0;
    if radius > fit || radius < 2.0 {
        return Err(EvalError::Phantom(format!(
            "cannot fit {disks} disks of radius {radius:.1} into {width}x{height}"
        )));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let jitter = (cell_w.min(cell_h) / 10) as i64;
    let mut labels = vec![0u8; width * height];
    for d in 0..disks {
        let (gx, gy) = (d % cols, d / cols);
        let mut cx = (gx * cell_w + cell_w / 2) as i64;
        let mut cy = (gy * cell_h + cell_h / 2) as i64;
        if jitter > 0 {
            cx += rng.random_range(-jitter..=jitter);
            cy += rng.random_range(-jitter..=jitter);
        }
        let r2 = radius * radius;
        for y in 0..height as i64 {
            for x in 0..width as i64 {
                let (dx, dy) = ((x - cx) as f64, (y - cy) as f64);
                if dx * dx + dy * dy <= r2 {
                    labels[(y as usize) * width + x as usize] = (d + 1) as u8;
                }
            }
        }
    }
    Ok(labels)
}

fn paint_fine_structures(width: usize, height: usize, k: usize) -> Result<Vec<u8>, EvalError> {
    let margin_x = width / 12;
    let margin_y = height / 6;
    let blob_x0 = margin_x;
    let blob_x1 = width / 2 - margin_x;
    let stroke_x0 = width / 2 + margin_x;
    let stroke_x1 = width - margin_x;
    let y0 = margin_y;
    let y1 = height - margin_y;
    if blob_x1 <= blob_x0 || stroke_x1 <= stroke_x0 || y1 <= y0 + 8 {
        return Err(EvalError::Phantom(format!(
            "{width}x{height} too small for the fine-structures layout"
        )));
    }

    let mut labels = vec![0u8; width * height];

    // Solid blobs for the middle classes, stacked vertically.
    let blob_classes = k - 2;
    if blob_classes > 0 {
        let blob_rows = (y1 - y0) / blob_classes;
        if blob_rows == 0 {
            return Err(EvalError::Phantom("too many classes for the height".into()));
        }
        for c in 0..blob_classes {
            let (top, bottom) = (y0 + c * blob_rows, y0 + (c + 1) * blob_rows);
            for y in top..bottom {
                labels[y * width + blob_x0..y * width + blob_x1].fill((c + 1) as u8);
            }
        }
    }

    // Stroke field: width-2 horizontal strokes every 4 rows, with the
    // final stroke thinned to width 1.
    let stroke_class = (k - 1) as u8;
    let mut stroke_tops: Vec<usize> = (y0..y1 - 1).step_by(4).collect();
    if stroke_tops.len() < 2 {
        return Err(EvalError::Phantom("not enough rows for strokes".into()));
    }
    let thin = stroke_tops.pop().unwrap();
    for &top in &stroke_tops {
        for y in top..top + 2 {
            labels[y * width + stroke_x0..y * width + stroke_x1].fill(stroke_class);
        }
    }
    labels[thin * width + stroke_x0..thin * width + stroke_x1].fill(stroke_class);
    Ok(labels)
}

/// Noise model attached to a seed so injections are reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    AdditiveGaussian,
    Impulse,
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::AdditiveGaussian => "gaussian",
            NoiseKind::Impulse => "impulse",
        })
    }
}

impl FromStr for NoiseKind {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, EvalError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "additive_gaussian" | "additive-gaussian" => {
                Ok(NoiseKind::AdditiveGaussian)
            }
            "impulse" => Ok(NoiseKind::Impulse),
            other => Err(EvalError::Phantom(format!("unknown noise kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Gaussian: standard deviation as a fraction of 255. Impulse:
    /// fraction of pixels replaced.
    pub amount: f64,
    pub seed: u64,
}

/// Returns a noised copy. Gaussian noise adds a rounded normal sample
/// per pixel and clamps; impulse noise replaces an exact
/// `round(amount * n)` distinct pixels with uniform values.
pub fn add_noise(img: &GrayImage, spec: &NoiseSpec) -> Result<GrayImage, EvalError> {
    if !(0.0..=1.0).contains(&spec.amount) {
        return Err(EvalError::BadAmount { got: spec.amount });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let mut pixels = img.pixels().to_vec();
    match spec.kind {
        NoiseKind::AdditiveGaussian => {
            let normal = Normal::new(0.0, spec.amount * 255.0).expect("finite std dev");
            for p in &mut pixels {
                let delta = normal.sample(&mut rng).round();
                *p = (f64::from(*p) + delta).clamp(0.0, 255.0) as u8;
            }
        }
        NoiseKind::Impulse => {
            let n = pixels.len();
            let replace = ((spec.amount * n as f64).round() as usize).min(n);
            for idx in rand::seq::index::sample(&mut rng, n, replace) {
                pixels[idx] = rng.random();
            }
        }
    }
    Ok(GrayImage::new(img.width(), img.height(), pixels).expect("same dims"))
}

/// Marks every pixel whose (2r+1)^2 truth neighborhood (shrunk at the
/// borders) holds more than one label. The complement is the region zone.
pub fn contour_mask(truth: &LabelMap, radius: usize) -> Vec<bool> {
    assert!(radius >= 1, "contour radius must be at least 1");
    let (w, h) = (truth.width(), truth.height());
    let labels = truth.labels();
    let r = radius as isize;
    let mut mask = vec![false; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let first = labels[y as usize * w + x as usize];
            'scan: for ny in (y - r).max(0)..=(y + r).min(h as isize - 1) {
                for nx in (x - r).max(0)..=(x + r).min(w as isize - 1) {
                    if labels[ny as usize * w + nx as usize] != first {
                        mask[y as usize * w + x as usize] = true;
                        break 'scan;
                    }
                }
            }
        }
    }
    mask
}

/// Misclassification counts for one class, split by zone.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoneErrors {
    pub region: u64,
    pub contour: u64,
}

/// Scoring breakdown for one prediction against the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegReport {
    pub per_class: Vec<ZoneErrors>,
    pub region_total: u64,
    pub contour_total: u64,
    pub total: u64,
    pub pixels: u64,
    pub accuracy: f64,
}

/// Counts pred != truth per true class, split by the contour mask.
/// Labels are compared as-is; run [`align_labels`] first when the
/// prediction's class identities are arbitrary.
pub fn score(pred: &LabelMap, truth: &LabelMap, mask: &[bool]) -> Result<SegReport, EvalError> {
    check_same_shape(pred, truth)?;
    if pred.k() != truth.k() {
        return Err(EvalError::KMismatch {
            a: pred.k(),
            b: truth.k(),
        });
    }
    debug_assert_eq!(mask.len(), truth.labels().len());
    let mut per_class = vec![ZoneErrors::default(); truth.k()];
    for (j, (&p, &t)) in pred.labels().iter().zip(truth.labels()).enumerate() {
        if p != t {
            let slot = &mut per_class[t as usize];
            if mask[j] {
                slot.contour += 1;
            } else {
                slot.region += 1;
            }
        }
    }
    let region_total = per_class.iter().map(|z| z.region).sum();
    let contour_total = per_class.iter().map(|z| z.contour).sum();
    let total = region_total + contour_total;
    let pixels = truth.labels().len() as u64;
    Ok(SegReport {
        per_class,
        region_total,
        contour_total,
        total,
        pixels,
        accuracy: 1.0 - total as f64 / pixels as f64,
    })
}

fn check_same_shape(a: &LabelMap, b: &LabelMap) -> Result<(), EvalError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(EvalError::DimMismatch {
            a_w: a.width(),
            a_h: a.height(),
            b_w: b.width(),
            b_h: b.height(),
        });
    }
    Ok(())
}

/// Relabels `pred` by the permutation that maximizes agreement with
/// `truth`: exhaustive search up to K = 6, assignment solver beyond.
pub fn align_labels(pred: &LabelMap, truth: &LabelMap) -> Result<LabelMap, EvalError> {
    check_same_shape(pred, truth)?;
    if pred.k() != truth.k() {
        return Err(EvalError::KMismatch {
            a: pred.k(),
            b: truth.k(),
        });
    }
    let k = pred.k();
    let mut confusion = vec![vec![0i64; k]; k];
    for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
        confusion[p as usize][t as usize] += 1;
    }
    let perm = if k <= 6 {
        best_permutation_exhaustive(&confusion)
    } else {
        best_permutation_assignment(&confusion)
    };
    let labels: Vec<u8> = pred.labels().iter().map(|&p| perm[p as usize]).collect();
    Ok(LabelMap::new(pred.width(), pred.height(), labels, k).expect("permuted labels in range"))
}

/// Lexicographically first permutation with maximal agreement.
fn best_permutation_exhaustive(confusion: &[Vec<i64>]) -> Vec<u8> {
    let k = confusion.len();
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = perm.clone();
    let mut best_score = i64::MIN;
    loop {
        let s: i64 = (0..k).map(|p| confusion[p][perm[p]]).sum();
        if s > best_score {
            best_score = s;
            best.copy_from_slice(&perm);
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    best.into_iter().map(|t| t as u8).collect()
}

fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

/// O(K^3) assignment by shortest augmenting paths on the cost matrix
/// `max_entry - confusion`, so maximum agreement becomes minimum cost.
fn best_permutation_assignment(confusion: &[Vec<i64>]) -> Vec<u8> {
    let k = confusion.len();
    let top = confusion
        .iter()
        .flat_map(|row| row.iter().copied())
        .max()
        .unwrap_or(0);
    let cost: Vec<Vec<i64>> = confusion
        .iter()
        .map(|row| row.iter().map(|&c| top - c).collect())
        .collect();

    // 1-based potentials over rows (u) and columns (v); way[j] remembers
    // the augmenting predecessor of column j.
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; k + 1];
    let mut v = vec![0i64; k + 1];
    let mut match_col = vec![0usize; k + 1];
    for row in 1..=k {
        let mut min_v = vec![inf; k + 1];
        let mut used = vec![false; k + 1];
        let mut way = vec![0usize; k + 1];
        let mut j0 = 0usize;
        match_col[0] = row;
        loop {
            used[j0] = true;
            let i0 = match_col[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=k {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < min_v[j] {
                    min_v[j] = cur;
                    way[j] = j0;
                }
                if min_v[j] < delta {
                    delta = min_v[j];
                    j1 = j;
                }
            }
            for j in 0..=k {
                if used[j] {
                    u[match_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
            if match_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            match_col[j0] = match_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0u8; k];
    for j in 1..=k {
        if match_col[j] > 0 {
            perm[match_col[j] - 1] = (j - 1) as u8;
        }
    }
    perm
}

/// One scored method within a comparison run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodReport {
    pub method: String,
    pub report: SegReport,
}

/// Reports for several methods on the identical noised image.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub k: usize,
    pub methods: Vec<MethodReport>,
    #[serde(skip)]
    pub noised: GrayImage,
}

/// Segments one noised phantom with each method and scores the aligned
/// labels against the truth (contour radius 1).
pub fn run_comparison(
    phantom: &Phantom,
    noise: Option<&NoiseSpec>,
    methods: &[SegMethod],
    cfg: &SegmentConfig,
) -> Result<Comparison, EvalError> {
    let noised = match noise {
        Some(spec) => add_noise(&phantom.image, spec)?,
        None => phantom.image.clone(),
    };
    let mask = contour_mask(&phantom.truth, 1);
    let mut out = Vec::with_capacity(methods.len());
    for &method in methods {
        let seg = segment(&noised, method, cfg)?;
        let aligned = align_labels(&seg.labels, &phantom.truth)?;
        let report = score(&aligned, &phantom.truth, &mask)?;
        out.push(MethodReport {
            method: method.name().to_string(),
            report,
        });
    }
    Ok(Comparison {
        k: phantom.truth.k(),
        methods: out,
        noised,
    })
}

impl Comparison {
    pub fn get(&self, method: SegMethod) -> Option<&SegReport> {
        self.methods
            .iter()
            .find(|m| m.method == method.name())
            .map(|m| &m.report)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serialization cannot fail")
    }

    /// Fixed-width text table: one row per class and zone, one column
    /// per method, plus totals.
    pub fn table(&self) -> String {
        let cols: Vec<(&str, &SegReport)> = self
            .methods
            .iter()
            .map(|m| (m.method.as_str(), &m.report))
            .collect();
        render_table(self.k, &cols)
    }
}

/// Fixed-width misclassification table with one column per report.
/// Column names are printed uppercased.
pub fn render_table(k: usize, columns: &[(&str, &SegReport)]) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:>5}  {:<7}", "class", "zone"));
    for (name, _) in columns {
        out.push_str(&format!("  {:>7}", name.to_ascii_uppercase()));
    }
    out.push('\n');
    let mut row = |class: &str, zone: &str, pick: &dyn Fn(&SegReport) -> u64| {
        out.push_str(&format!("{class:>5}  {zone:<7}"));
        for (_, report) in columns {
            out.push_str(&format!("  {:>7}", pick(report)));
        }
        out.push('\n');
    };
    for c in 0..k {
        row(&c.to_string(), "region", &move |r| r.per_class[c].region);
        row(&c.to_string(), "contour", &move |r| r.per_class[c].contour);
    }
    row("total", "region", &|r| r.region_total);
    row("total", "contour", &|r| r.contour_total);
    row("total", "all", &|r| r.total);
    out
}
