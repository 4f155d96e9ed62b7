//! Simulated human moderation and saturation analysis.
//!
//! Records are moderated in order of decreasing uncertainty; a moderated
//! record always ends up with its true label. The resulting F1-versus-load
//! curve is smoothed with an endpoint-preserving least-squares polynomial,
//! and the saturation load is where the curve rises furthest above the
//! straight line joining its endpoints. That chord is exactly the expected
//! curve of random moderation, so the saturation point is the load with the
//! largest advantage over moderating random items.

use std::fmt;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::evaluation::{micro_f1, EvaluationRecord};
use crate::uncertainty::ScoreFunction;
use crate::{Error, Result};

pub const DEFAULT_GRID_STEP: f64 = 0.01;
pub const DEFAULT_DEGREE: usize = 7;
pub const DEFAULT_MIN_KNEE_HEIGHT: f64 = 0.005;

/// Guards `⌈m·n⌉` against products like `0.07 * 100 = 7.000000000000001`.
const COUNT_EPSILON: f64 = 1e-9;
const RANK_TOLERANCE: f64 = 1e-12;

/// Number of records moderated at load `m`, `⌈m·n⌉`.
pub fn moderated_count(load: f64, n: usize) -> usize {
    let k = (load * n as f64 - COUNT_EPSILON).ceil();
    (k.max(0.0) as usize).min(n)
}

/// Indices of `records` in moderation order: uncertainty descending, then
/// `doc_id` ascending.
pub fn moderation_order(records: &[EvaluationRecord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&records[a], &records[b]);
        rb.uncertainty
            .value
            .total_cmp(&ra.uncertainty.value)
            .then(ra.doc_id.cmp(&rb.doc_id))
    });
    order
}

/// Loads `0, step, 2·step, …, 1`; the last regular point below 1 is followed by 1.
pub fn load_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 0.1) {
        return Err(Error::invalid(format!("grid_step must be in (0, 0.1], got {step}")));
    }
    let mut grid = Vec::new();
    let mut i = 0u32;
    loop {
        let load = (f64::from(i) * step * 1e12).round() / 1e12;
        if load >= 1.0 - COUNT_EPSILON {
            break;
        }
        grid.push(load);
        i += 1;
    }
    grid.push(1.0);
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub load: f64,
    pub f1: f64,
}

/// F1 as a function of moderation load, optionally with smoothed values on
/// the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ModerationCurve {
    points: Vec<CurvePoint>,
    smoothed: Option<Vec<f64>>,
}

impl ModerationCurve {
    /// Validates that loads increase strictly from 0 to 1.
    pub fn new(points: Vec<CurvePoint>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("a moderation curve needs at least two points"));
        }
        if points[0].load != 0.0 || points[points.len() - 1].load != 1.0 {
            return Err(Error::invalid("curve loads must start at 0 and end at 1"));
        }
        if points.windows(2).any(|w| w[1].load <= w[0].load) {
            return Err(Error::invalid("curve loads must be strictly increasing"));
        }
        if points.iter().any(|p| !p.f1.is_finite()) {
            return Err(Error::NonFinite("curve values"));
        }
        Ok(Self {
            points,
            smoothed: None,
        })
    }

    pub fn from_values(loads: &[f64], f1: &[f64]) -> Result<Self> {
        if loads.len() != f1.len() {
            return Err(Error::invalid("loads and values differ in length"));
        }
        Self::new(
            loads
                .iter()
                .zip(f1)
                .map(|(&load, &f1)| CurvePoint { load, f1 })
                .collect(),
        )
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn loads(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.load).collect()
    }

    pub fn f1_raw(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.f1).collect()
    }

    pub fn smoothed(&self) -> Option<&[f64]> {
        self.smoothed.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Unmoderated F1, the value at load 0.
    pub fn initial_f1(&self) -> f64 {
        self.points[0].f1
    }
}

/// Replays moderation over `records` and records micro F1 at each grid load.
pub fn simulate_moderation_curve(records: &[EvaluationRecord], grid_step: f64) -> Result<ModerationCurve> {
    if records.is_empty() {
        return Err(Error::invalid("cannot simulate moderation over an empty record set"));
    }
    let grid = load_grid(grid_step)?;
    let n = records.len();
    let order = moderation_order(records);
    // fixed[k]: misclassifications among the first k moderated records.
    let mut fixed = Vec::with_capacity(n + 1);
    fixed.push(0usize);
    for &i in &order {
        let last = *fixed.last().expect("non-empty");
        fixed.push(last + usize::from(!records[i].is_correct()));
    }
    let correct = records.iter().filter(|r| r.is_correct()).count();
    let points = grid
        .into_iter()
        .map(|load| {
            let k = moderated_count(load, n);
            CurvePoint {
                load,
                f1: (correct + fixed[k]) as f64 / n as f64,
            }
        })
        .collect();
    let curve = ModerationCurve::new(points)?;
    debug_assert_eq!(curve.initial_f1(), micro_f1(records)?);
    Ok(curve)
}

/// Expected F1 when items to moderate are drawn uniformly at random.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomBaseline {
    pub f1_0: f64,
}

impl RandomBaseline {
    pub fn at(&self, load: f64) -> f64 {
        self.f1_0 + load * (1.0 - self.f1_0)
    }
}

pub fn random_baseline(f1_0: f64) -> Result<RandomBaseline> {
    if !(0.0..=1.0).contains(&f1_0) {
        return Err(Error::invalid(format!("initial F1 must be in [0, 1], got {f1_0}")));
    }
    Ok(RandomBaseline { f1_0 })
}

fn chebyshev(k: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    match k {
        0 => 1.0,
        _ => {
            for _ in 1..k {
                let next = 2.0 * x * cur - prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// Least-squares polynomial of `degree` through the curve with both endpoints
/// held at their raw values.
///
/// The fit is parameterised as `line(m) + m(1 − m)·q(m)`, where `line` joins
/// the endpoints and `q` has degree `degree − 2` in a Chebyshev basis.
pub fn smooth_curve(curve: &ModerationCurve, degree: usize) -> Result<ModerationCurve> {
    if degree == 0 {
        return Err(Error::invalid("smoothing degree must be at least 1"));
    }
    if curve.len() <= degree + 1 {
        return Err(Error::invalid(format!(
            "smoothing degree {degree} needs more than {} grid points, got {}",
            degree + 1,
            curve.len()
        )));
    }
    let loads = curve.loads();
    let raw = curve.f1_raw();
    let (y0, y1) = (raw[0], raw[raw.len() - 1]);
    let line = |m: f64| y0 + (y1 - y0) * m;

    let free = degree - 1;
    let mut smoothed: Vec<f64> = loads.iter().map(|&m| line(m)).collect();
    if free > 0 {
        let rows = loads.len();
        let design = DMatrix::from_fn(rows, free, |i, k| {
            let m = loads[i];
            m * (1.0 - m) * chebyshev(k, 2.0 * m - 1.0)
        });
        let target = DVector::from_iterator(rows, loads.iter().zip(&raw).map(|(&m, &f)| f - line(m)));
        let svd = design.clone().svd(true, true);
        let sv = &svd.singular_values;
        let max = sv.max();
        if !(max > 0.0) || sv.min() / max < RANK_TOLERANCE {
            return Err(Error::IllConditionedFit { degree });
        }
        let coef = svd
            .solve(&target, 0.0)
            .map_err(|_| Error::IllConditionedFit { degree })?;
        let fitted = design * coef;
        for (s, f) in smoothed.iter_mut().zip(fitted.iter()) {
            *s += f;
        }
        let last = smoothed.len() - 1;
        smoothed[0] = y0;
        smoothed[last] = y1;
    }
    Ok(ModerationCurve {
        points: curve.points.clone(),
        smoothed: Some(smoothed),
    })
}

/// Detected saturation point on a smoothed curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Saturation {
    pub index: usize,
    pub load: f64,
    /// Smoothed F1 minus the chord at `load`.
    pub gap: f64,
}

/// Grid argmax of `smoothed − chord`, the chord joining the curve's endpoints.
/// Ties resolve to the lowest load.
pub fn find_saturation(curve: &ModerationCurve, min_knee_height: f64) -> Result<Saturation> {
    let smoothed = curve
        .smoothed()
        .ok_or_else(|| Error::invalid("saturation detection needs a smoothed curve"))?;
    let loads = curve.loads();
    let (y0, y1) = (smoothed[0], smoothed[smoothed.len() - 1]);
    if !(y1 > y0) {
        return Err(Error::NoSaturation { max_gap: 0.0 });
    }
    let mut best = Saturation {
        index: 0,
        load: loads[0],
        gap: f64::NEG_INFINITY,
    };
    for (i, (&m, &s)) in loads.iter().zip(smoothed).enumerate() {
        let gap = s - (y0 + (y1 - y0) * m);
        if gap > best.gap {
            best = Saturation { index: i, load: m, gap };
        }
    }
    if best.gap <= min_knee_height {
        return Err(Error::NoSaturation { max_gap: best.gap });
    }
    Ok(best)
}

fn raw_argmax(curve: &ModerationCurve) -> f64 {
    let raw = curve.f1_raw();
    let (y0, y1) = (raw[0], raw[raw.len() - 1]);
    let mut best = (0.0, f64::NEG_INFINITY);
    for p in curve.points() {
        let gap = p.f1 - (y0 + (y1 - y0) * p.load);
        if gap > best.1 {
            best = (p.load, gap);
        }
    }
    best.0
}

/// Uncertainty threshold; items with `u > threshold` go to a human. The
/// `-inf` sentinel sends every item to moderation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold(f64);

impl Threshold {
    pub const FULL_MANUAL: Threshold = Threshold(f64::NEG_INFINITY);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() || value == f64::NEG_INFINITY {
            Ok(Self(value))
        } else {
            Err(Error::invalid(format!("threshold must be finite or -inf, got {value}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_full_manual(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    /// Auto-accept when `u ≤ threshold`.
    pub fn accepts(self, uncertainty: f64) -> bool {
        uncertainty <= self.0
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_full_manual() {
            f.write_str("-inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_full_manual() {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(v) => Threshold::new(v).map_err(serde::de::Error::custom),
            Raw::Text(t) if t == "-inf" => Ok(Threshold::FULL_MANUAL),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "threshold must be a number or \"-inf\", got {t:?}"
            ))),
        }
    }
}

/// Threshold whose routing rule `u > threshold` selects exactly the first
/// `⌈m*·n⌉` records in moderation order, provided the boundary uncertainties
/// differ.
pub fn threshold_from_load(records: &[EvaluationRecord], m_star: f64) -> Result<Threshold> {
    if records.is_empty() {
        return Err(Error::invalid("cannot derive a threshold from an empty record set"));
    }
    if !(m_star > 0.0 && m_star < 1.0) {
        return Err(Error::invalid(format!("m_star must be in (0, 1), got {m_star}")));
    }
    let n = records.len();
    let k = moderated_count(m_star, n);
    if k >= n {
        return Ok(Threshold::FULL_MANUAL);
    }
    let order = moderation_order(records);
    let threshold = records[order[k]].uncertainty.value;
    if k > 0 && records[order[k - 1]].uncertainty.value == threshold {
        log::warn!(
            "uncertainty tie at the moderation boundary (u = {threshold}); \
             routing by threshold moderates fewer than {k} records"
        );
    }
    Threshold::new(threshold)
}

/// Fraction of moderation effort saved relative to random moderation
/// reaching the same F1.
pub fn effort_savings(f1_0: f64, f1_star: f64, m_star: f64) -> Result<f64> {
    if !(f1_star > f1_0) {
        return Err(Error::invalid(format!(
            "target F1 {f1_star} must exceed the initial F1 {f1_0}"
        )));
    }
    if f1_star > 1.0 {
        return Err(Error::invalid("target F1 cannot exceed 1"));
    }
    if !(m_star > 0.0 && m_star < 1.0) {
        return Err(Error::invalid(format!("m_star must be in (0, 1), got {m_star}")));
    }
    let random_load = (f1_star - f1_0) / (1.0 - f1_0);
    Ok((1.0 - m_star / random_load).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationReport {
    pub score_function: ScoreFunction,
    pub m_star: f64,
    /// Argmax of the unsmoothed curve minus the chord.
    pub m_star_raw: f64,
    pub f1_0: f64,
    /// Raw (simulated) F1 at `m_star`.
    pub f1_at_m_star: f64,
    pub f1_smoothed_at_m_star: f64,
    pub f1_gain_pp: f64,
    pub threshold: Threshold,
    pub effort_savings: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportOptions {
    pub grid_step: f64,
    pub degree: usize,
    pub min_knee_height: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            grid_step: DEFAULT_GRID_STEP,
            degree: DEFAULT_DEGREE,
            min_knee_height: DEFAULT_MIN_KNEE_HEIGHT,
        }
    }
}

/// Saturation report with the curve it was derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct ModerationReport {
    pub report: SaturationReport,
    pub curve: ModerationCurve,
    pub baseline: RandomBaseline,
}

impl ModerationReport {
    /// CSV with columns `load,f1_raw,f1_smoothed,f1_random`, six decimals.
    pub fn curve_csv(&self) -> String {
        curve_csv(&self.curve, &self.baseline)
    }
}

pub fn curve_csv(curve: &ModerationCurve, baseline: &RandomBaseline) -> String {
    let mut out = String::from("load,f1_raw,f1_smoothed,f1_random\n");
    let smoothed = curve.smoothed();
    for (i, p) in curve.points().iter().enumerate() {
        let s = smoothed.map_or(p.f1, |s| s[i]);
        let _ = writeln!(
            out,
            "{:.6},{:.6},{:.6},{:.6}",
            p.load,
            p.f1,
            s,
            baseline.at(p.load)
        );
    }
    out
}

/// simulate → smooth → saturation → threshold → savings.
pub fn build_report(
    records: &[EvaluationRecord],
    score_function: ScoreFunction,
    options: ReportOptions,
) -> Result<ModerationReport> {
    if records.len() < 2 {
        return Err(Error::invalid("moderation analysis needs at least two records"));
    }
    if let Some(r) = records.iter().find(|r| r.uncertainty.function != score_function) {
        return Err(Error::invalid(format!(
            "record {} carries a `{}` score, expected `{score_function}`",
            r.doc_id, r.uncertainty.function
        )));
    }
    let raw = simulate_moderation_curve(records, options.grid_step)?;
    let curve = smooth_curve(&raw, options.degree)?;
    let saturation = find_saturation(&curve, options.min_knee_height)?;
    let f1_0 = curve.initial_f1();
    let f1_at = curve.points()[saturation.index].f1;
    let smoothed_at = curve.smoothed().expect("smoothed")[saturation.index];
    let threshold = threshold_from_load(records, saturation.load)?;
    let savings = effort_savings(f1_0, f1_at, saturation.load)?;
    Ok(ModerationReport {
        report: SaturationReport {
            score_function,
            m_star: saturation.load,
            m_star_raw: raw_argmax(&curve),
            f1_0,
            f1_at_m_star: f1_at,
            f1_smoothed_at_m_star: smoothed_at,
            f1_gain_pp: 100.0 * (f1_at - f1_0),
            threshold,
            effort_savings: savings,
        },
        curve,
        baseline: random_baseline(f1_0)?,
    })
}

/// Saturating curve `y0 + (1 − y0)(1 − e^{−b m}) / (1 − e^{−b})`, i.e.
/// `y0 + a(1 − e^{−b m})` scaled to reach 1 at full load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCurveSpec {
    pub y0: f64,
    pub b: f64,
}

impl SyntheticCurveSpec {
    pub fn new(y0: f64, b: f64) -> Result<Self> {
        if !(y0 > 0.0 && y0 < 1.0) || !(b > 0.0) || !b.is_finite() {
            return Err(Error::invalid("synthetic curve needs y0 in (0, 1) and b > 0"));
        }
        Ok(Self { y0, b })
    }

    pub fn a(&self) -> f64 {
        (1.0 - self.y0) / (1.0 - (-self.b).exp())
    }

    pub fn value(&self, load: f64) -> f64 {
        self.y0 + self.a() * (1.0 - (-self.b * load).exp())
    }

    /// Samples the curve on the grid with Gaussian noise; endpoints stay exact.
    pub fn sample<R: Rng>(&self, grid_step: f64, noise_std: f64, rng: &mut R) -> Result<ModerationCurve> {
        let grid = load_grid(grid_step)?;
        let noise = Normal::new(0.0, noise_std).map_err(|e| Error::invalid(e.to_string()))?;
        let last = grid.len() - 1;
        let values: Vec<f64> = grid
            .iter()
            .enumerate()
            .map(|(i, &m)| {
                let v = self.value(m);
                if i == 0 || i == last {
                    v
                } else {
                    v + noise.sample(rng)
                }
            })
            .collect();
        ModerationCurve::from_values(&grid, &values)
    }
}
