//! Fuzzy weighting of spatial versus gray evidence.
//!
//! Each pixel's local deviation (sigma) and close-neighbor count (NCN)
//! drive a small Mamdani system with min/max connectives. Two output sets
//! over the weight domain `[0, 1]` ("p small", "p great") are clipped at
//! the fired strengths and combined by centroid defuzzification, giving
//! the per-pixel weight `p` that the adaptive distance puts on the
//! spatial feature:
//!
//! * smooth pixel (sigma small) -> p great: trust the neighborhood;
//! * noise point (sigma great, NCN small) -> p great: its own gray level
//!   is an outlier, trust the neighborhood;
//! * edge pixel (sigma great, NCN moderate) -> p small: trust the gray
//!   level so the contour is not smeared;
//! * neighbor of a noise point (sigma great, NCN great) -> p small.
//!
//! The defuzzified centroid is evaluated in closed form (the clipped sets
//! are piecewise linear); a sampled integration exists only as a test
//! oracle, with `defuzz_resolution` as its sample count.

use crate::features::FeatureMaps;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Trapezoid membership function with breakpoints `a <= b <= c <= d`:
/// zero below `a`, rising to 1 at `b`, flat through `c`, falling to zero
/// at `d`. Degenerate segments collapse (a == b gives a left shoulder).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct MembershipFn {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum FuzzyError {
    #[error("membership breakpoints must be finite and satisfy a <= b <= c <= d, got ({a}, {b}, {c}, {d})")]
    BadOrder { a: f64, b: f64, c: f64, d: f64 },
    #[error("{family} membership family leaves the domain uncovered near {x:.4}")]
    CoverageGap { family: String, x: f64 },
    #[error("defuzz_resolution must be at least 256, got {got}")]
    BadResolution { got: u32 },
    #[error("sigma_break must be in (0, 128], got {got}")]
    BadSigmaBreak { got: f64 },
    #[error("invalid fuzzy system document: {0}")]
    Document(String),
}

impl MembershipFn {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self, FuzzyError> {
        let finite = a.is_finite() && b.is_finite() && c.is_finite() && d.is_finite();
        if !finite || !(a <= b && b <= c && c <= d) {
            return Err(FuzzyError::BadOrder { a, b, c, d });
        }
        Ok(Self { a, b, c, d })
    }

    pub fn breakpoints(&self) -> [f64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    /// Membership degree in `[0, 1]`.
    pub fn degree(&self, x: f64) -> f64 {
        if x < self.a || x > self.d {
            return 0.0;
        }
        if x >= self.b && x <= self.c {
            return 1.0;
        }
        if x < self.b {
            (x - self.a) / (self.b - self.a)
        } else {
            (self.d - x) / (self.d - self.c)
        }
    }

    /// Area and first moment of the set clipped at height `h`, in closed
    /// form. The clipped region is the trapezoid `min(degree(x), h)`:
    /// a rising edge to `a + h (b - a)`, a plateau at `h`, and a falling
    /// edge from `d - h (d - c)`.
    fn clipped_area_moment(&self, h: f64) -> (f64, f64) {
        let h = h.clamp(0.0, 1.0);
        if h == 0.0 || self.d == self.a {
            return (0.0, 0.0);
        }
        let bp = self.a + h * (self.b - self.a);
        let cp = self.d - h * (self.d - self.c);

        let rise_w = bp - self.a;
        let rise_area = 0.5 * h * rise_w;
        let rise_x = self.a + 2.0 * rise_w / 3.0;

        let flat_w = cp - bp;
        let flat_area = h * flat_w;
        let flat_x = 0.5 * (bp + cp);

        let fall_w = self.d - cp;
        let fall_area = 0.5 * h * fall_w;
        let fall_x = cp + fall_w / 3.0;

        let area = rise_area + flat_area + fall_area;
        let moment = rise_area * rise_x + flat_area * flat_x + fall_area * fall_x;
        (area, moment)
    }
}

/// The complete rule base: two sigma sets, three NCN sets, two output
/// sets, plus the sample count used by the integration test oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzySystem {
    pub sigma_small: MembershipFn,
    pub sigma_great: MembershipFn,
    pub ncn_small: MembershipFn,
    pub ncn_moderate: MembershipFn,
    pub ncn_great: MembershipFn,
    pub p_small: MembershipFn,
    pub p_great: MembershipFn,
    #[serde(default = "default_resolution")]
    pub defuzz_resolution: u32,
}

fn default_resolution() -> u32 {
    4096
}

/// Fired strengths and defuzzified weight for one (sigma, NCN) input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightResult {
    pub p: f64,
    pub d_p_small: f64,
    pub d_p_great: f64,
    /// True when no rule fired and the neutral weight 0.5 was substituted.
    pub fallback: bool,
}

impl FuzzySystem {
    /// Default breakpoints, scaled by the sigma break (the deviation level
    /// treated as fully "great") and the window population (NCN domain top
    /// is `population - 1`, 8 for a 3x3 window).
    ///
    /// The output sets are deliberately lopsided triangles: a fully fired
    /// "p great" defuzzifies to 24/25 (0.96) and a fully fired "p small" to
    /// 22/75 (about 0.293). A smooth or noisy pixel then weighs the spatial
    /// feature 24:1 against its own gray level. The margin matters when two
    /// impulses land in the same window: the local mean is already dragged
    /// toward a neighboring class basin, and any larger leak of an extreme
    /// gray value into the blend tips the pixel over the boundary while a
    /// pure spatial distance still classifies it correctly.
    pub fn defaults(sigma_break: f64, window_population: usize) -> Result<Self, FuzzyError> {
        if !(sigma_break > 0.0 && sigma_break <= 128.0) {
            return Err(FuzzyError::BadSigmaBreak { got: sigma_break });
        }
        let sb = sigma_break;
        let s = (window_population.max(2) - 1) as f64 / 8.0;
        let sys = Self {
            sigma_small: MembershipFn::new(0.0, 0.0, 0.5 * sb, sb)?,
            sigma_great: MembershipFn::new(0.5 * sb, sb, 128.0, 128.0)?,
            ncn_small: MembershipFn::new(0.0, 0.0, s, 3.0 * s)?,
            ncn_moderate: MembershipFn::new(s, 3.0 * s, 5.0 * s, 7.0 * s)?,
            ncn_great: MembershipFn::new(5.0 * s, 7.0 * s, 8.0 * s, 8.0 * s)?,
            p_small: MembershipFn::new(0.0, 0.0, 0.0, 0.88)?,
            p_great: MembershipFn::new(0.88, 1.0, 1.0, 1.0)?,
            defuzz_resolution: default_resolution(),
        };
        sys.validate()?;
        Ok(sys)
    }

    /// Checks the resolution bound and that no input or output family
    /// leaves a positive-length gap of zero degree in its domain
    /// (isolated touch points are fine).
    pub fn validate(&self) -> Result<(), FuzzyError> {
        if self.defuzz_resolution < 256 {
            return Err(FuzzyError::BadResolution {
                got: self.defuzz_resolution,
            });
        }
        let ncn_top = self
            .ncn_great
            .d
            .max(self.ncn_moderate.d)
            .max(self.ncn_small.d);
        let families: [(&str, f64, f64, Vec<&MembershipFn>); 3] = [
            (
                "sigma",
                0.0,
                128.0,
                vec![&self.sigma_small, &self.sigma_great],
            ),
            (
                "ncn",
                0.0,
                ncn_top,
                vec![&self.ncn_small, &self.ncn_moderate, &self.ncn_great],
            ),
            ("p", 0.0, 1.0, vec![&self.p_small, &self.p_great]),
        ];
        for (name, lo, hi, fns) in families {
            let steps = 4096usize;
            let mut prev_zero = false;
            for t in 0..=steps {
                let x = lo + (hi - lo) * t as f64 / steps as f64;
                let covered = fns.iter().any(|f| f.degree(x) > 0.0);
                if !covered {
                    if prev_zero {
                        return Err(FuzzyError::CoverageGap {
                            family: name.to_string(),
                            x,
                        });
                    }
                    prev_zero = true;
                } else {
                    prev_zero = false;
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, FuzzyError> {
        let sys: Self =
            serde_json::from_str(text).map_err(|e| FuzzyError::Document(e.to_string()))?;
        sys.validate()?;
        Ok(sys)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fuzzy system serialization cannot fail")
    }
}

impl TryFrom<[f64; 4]> for MembershipFn {
    type Error = FuzzyError;

    fn try_from(v: [f64; 4]) -> Result<Self, FuzzyError> {
        MembershipFn::new(v[0], v[1], v[2], v[3])
    }
}

impl From<MembershipFn> for [f64; 4] {
    fn from(f: MembershipFn) -> [f64; 4] {
        f.breakpoints()
    }
}

/// Fires the rule base for one pixel: returns the strengths clipping
/// "p small" and "p great". Sigma is clamped into `[0, 128]` and NCN
/// below at 0; the shoulders extend the sets beyond that anyway.
///
/// * p small <- max(min(sigma_great, ncn_great), min(sigma_great, ncn_moderate))
/// * p great <- max(sigma_small, min(sigma_great, ncn_small))
pub fn infer_strengths(fs: &FuzzySystem, sigma: f64, ncn: f64) -> (f64, f64) {
    let sigma = sigma.clamp(0.0, 128.0);
    let ncn = ncn.max(0.0);
    let d_sig_s = fs.sigma_small.degree(sigma);
    let d_sig_g = fs.sigma_great.degree(sigma);
    let d_ncn_s = fs.ncn_small.degree(ncn);
    let d_ncn_m = fs.ncn_moderate.degree(ncn);
    let d_ncn_g = fs.ncn_great.degree(ncn);

    let d_p_small = f64::max(
        f64::min(d_sig_g, d_ncn_g),
        f64::min(d_sig_g, d_ncn_m),
    );
    let d_p_great = f64::max(d_sig_s, f64::min(d_sig_g, d_ncn_s));
    (d_p_small, d_p_great)
}

/// Centroid defuzzification of the two clipped output sets, exact:
/// `p = (S1 X1 + S2 X2) / (S1 + S2)` over the closed-form areas and
/// centroid abscissas. Returns the neutral 0.5 when both strengths are
/// zero (unreachable under a covering rule base).
pub fn defuzzify_centroid(fs: &FuzzySystem, d_p_small: f64, d_p_great: f64) -> f64 {
    defuzzify_flagged(fs, d_p_small, d_p_great).0
}

fn defuzzify_flagged(fs: &FuzzySystem, d_p_small: f64, d_p_great: f64) -> (f64, bool) {
    let (s1, m1) = fs.p_small.clipped_area_moment(d_p_small);
    let (s2, m2) = fs.p_great.clipped_area_moment(d_p_great);
    let total = s1 + s2;
    if total == 0.0 {
        return (0.5, true);
    }
    ((m1 + m2) / total, false)
}

/// Full per-pixel evaluation: fire the rules, defuzzify, report the
/// strengths alongside the weight.
pub fn weight(fs: &FuzzySystem, sigma: f64, ncn: f64) -> WeightResult {
    let (d_p_small, d_p_great) = infer_strengths(fs, sigma, ncn);
    let (p, fallback) = defuzzify_flagged(fs, d_p_small, d_p_great);
    WeightResult {
        p,
        d_p_small,
        d_p_great,
        fallback,
    }
}

/// Fills `fm.p` with the defuzzified weight of every pixel.
pub fn weight_map(fs: &FuzzySystem, fm: &mut FeatureMaps) {
    for i in 0..fm.p.len() {
        fm.p[i] = weight(fs, fm.sigma[i], f64::from(fm.ncn[i])).p;
    }
}
