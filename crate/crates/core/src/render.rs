//! SVG output: face sketches, AU-driven faces from a PLS visualization
//! model, detection overlays and bar charts.
//!
//! Documents are assembled as strings with every coordinate printed to four
//! decimals, so identical inputs give identical bytes.

use std::fmt::Write as _;
use std::ops::RangeInclusive;

use base64::Engine as _;
use nalgebra::{DMatrix, Point2};
use thiserror::Error;

use crate::features::{FeatureError, GrayImage};
use crate::fexdata::{AuVector, FexRow, AU_NAMES, EMOTION_NAMES};
use crate::geometry::{GeometryError, LandmarkSet, LANDMARK_COUNT};
use crate::learn::{BinaryClassifier, LearnError, ModelKind, ModelParams, TrainedModel};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("row has no facebox, landmarks, AUs or emotions")]
    EmptyRow,
    #[error("expected a {expected} model, got {got}")]
    WrongModel { expected: &'static str, got: String },
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// One stroke group of the face sketch; `runs` become subpaths.
#[derive(Debug, Clone)]
pub struct Stroke {
    pub name: &'static str,
    pub runs: &'static [RangeInclusive<usize>],
    pub closed: bool,
}

pub const STROKES: [Stroke; 8] = [
    Stroke { name: "jaw", runs: &[0..=16], closed: false },
    Stroke { name: "right-brow", runs: &[17..=21], closed: false },
    Stroke { name: "left-brow", runs: &[22..=26], closed: false },
    Stroke { name: "nose", runs: &[27..=30, 31..=35], closed: false },
    Stroke { name: "right-eye", runs: &[36..=41], closed: true },
    Stroke { name: "left-eye", runs: &[42..=47], closed: true },
    Stroke { name: "outer-lip", runs: &[48..=59], closed: true },
    Stroke { name: "inner-lip", runs: &[60..=67], closed: true },
];

/// Four-decimal rendering with negative zero folded to zero.
pub fn fmt4(v: f64) -> String {
    let s = format!("{v:.4}");
    if s == "-0.0000" {
        "0.0000".into()
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceSketch {
    pub landmarks: LandmarkSet,
}

impl FaceSketch {
    pub fn new(landmarks: LandmarkSet) -> Self {
        Self { landmarks }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Overlay {
    None,
    /// Arrows from each neutral landmark to the sketch's landmark.
    Vectors(LandmarkSet),
    /// One value per landmark, colored on [`heat_color`] over `[0, max]`.
    Heat(Vec<f64>),
}

/// Five-stop ramp from blue (0) to red (1).
const RAMP: [(u8, u8, u8); 5] = [(44, 123, 182), (171, 217, 233), (255, 255, 191), (253, 174, 97), (215, 25, 28)];

/// Hex color for `t` in [0, 1] (clamped), linear between ramp stops.
pub fn heat_color(t: f64) -> String {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let pos = t * (RAMP.len() - 1) as f64;
    let i = (pos.floor() as usize).min(RAMP.len() - 2);
    let f = pos - i as f64;
    let lerp = |a: u8, b: u8| (a as f64 + (b as f64 - a as f64) * f).round() as u8;
    let (a, b) = (RAMP[i], RAMP[i + 1]);
    format!("#{:02x}{:02x}{:02x}", lerp(a.0, b.0), lerp(a.1, b.1), lerp(a.2, b.2))
}

fn svg_open(out: &mut String, width: f64, height: f64) {
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" xmlns:xlink=\"http://www.w3.org/1999/xlink\" version=\"1.1\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">",
        w = fmt4(width),
        h = fmt4(height)
    );
}

/// Maps landmark space onto a `size x size` canvas with a 10% margin.
struct Fit {
    scale: f64,
    dx: f64,
    dy: f64,
}

impl Fit {
    fn new<'a>(points: impl Iterator<Item = &'a Point2<f64>>, size: f64) -> Self {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        let extent = (x1 - x0).max(y1 - y0).max(1e-9);
        let scale = 0.8 * size / extent;
        Fit { scale, dx: size / 2.0 - scale * (x0 + x1) / 2.0, dy: size / 2.0 - scale * (y0 + y1) / 2.0 }
    }

    fn xy(&self, p: Point2<f64>) -> (String, String) {
        (fmt4(self.scale * p.x + self.dx), fmt4(self.scale * p.y + self.dy))
    }
}

fn stroke_path(lm: &LandmarkSet, stroke: &Stroke, fit: &Fit) -> String {
    let mut d = String::new();
    for run in stroke.runs {
        for (k, i) in run.clone().enumerate() {
            let (x, y) = fit.xy(lm.point(i));
            let _ = write!(d, "{}{x} {y} ", if k == 0 { "M" } else { "L" });
        }
        if stroke.closed {
            d.push_str("Z ");
        }
    }
    d.pop();
    d
}

/// Sketch of `sketch` on a `size x size` canvas with an optional overlay.
pub fn render_face(sketch: &FaceSketch, overlay: &Overlay, size: u32) -> String {
    let size_f = size as f64;
    let lm = &sketch.landmarks;
    let fit = match overlay {
        Overlay::Vectors(n) => Fit::new(lm.points().iter().chain(n.points()), size_f),
        _ => Fit::new(lm.points().iter(), size_f),
    };
    let mut out = String::new();
    svg_open(&mut out, size_f, size_f);

    let arrows: Vec<(String, String, String, String)> = match overlay {
        Overlay::Vectors(neutral) => (0..LANDMARK_COUNT)
            .filter_map(|i| {
                let (x1, y1) = fit.xy(neutral.point(i));
                let (x2, y2) = fit.xy(lm.point(i));
                (x1 != x2 || y1 != y2).then_some((x1, y1, x2, y2))
            })
            .collect(),
        _ => Vec::new(),
    };
    if !arrows.is_empty() {
        out.push_str("<defs><marker id=\"head\" markerWidth=\"6\" markerHeight=\"6\" refX=\"5\" refY=\"3\" orient=\"auto\"><path d=\"M0 0 L6 3 L0 6 Z\" fill=\"#d7191c\"/></marker></defs>\n");
    }
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n");
    out.push_str(
        "<g fill=\"none\" stroke=\"#222222\" stroke-width=\"2\" stroke-linejoin=\"round\" stroke-linecap=\"round\">\n",
    );
    for stroke in &STROKES {
        let _ = writeln!(out, "<path class=\"{}\" d=\"{}\"/>", stroke.name, stroke_path(lm, stroke, &fit));
    }
    out.push_str("</g>\n");

    if !arrows.is_empty() {
        out.push_str("<g class=\"vectors\" stroke=\"#d7191c\" stroke-width=\"1\">\n");
        for (x1, y1, x2, y2) in &arrows {
            let _ = writeln!(out, "<line x1=\"{x1}\" y1=\"{y1}\" x2=\"{x2}\" y2=\"{y2}\" marker-end=\"url(#head)\"/>");
        }
        out.push_str("</g>\n");
    }
    if let Overlay::Heat(values) = overlay {
        let max = values.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
        out.push_str("<g class=\"heat\">\n");
        for (i, v) in values.iter().enumerate().take(LANDMARK_COUNT) {
            let t = if max > 0.0 { v / max } else { 0.0 };
            let (x, y) = fit.xy(lm.point(i));
            let _ = writeln!(
                out,
                "<circle cx=\"{x}\" cy=\"{y}\" r=\"4.0000\" fill=\"{}\" fill-opacity=\"0.8\"/>",
                heat_color(t)
            );
        }
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    out
}

/// Per-landmark displacement magnitudes from `neutral`, for [`Overlay::Heat`].
pub fn displacement_heat(lm: &LandmarkSet, neutral: &LandmarkSet) -> Vec<f64> {
    lm.points().iter().zip(neutral.points()).map(|(a, b)| (a - b).norm()).collect()
}

fn pls_of(model: &TrainedModel) -> Result<&crate::learn::PlsParams, RenderError> {
    match &model.params {
        ModelParams::Pls(p) => Ok(p),
        _ => Err(RenderError::WrongModel { expected: "pls", got: model.kind.to_string() }),
    }
}

/// Landmarks predicted by a 20-AU -> 136-coordinate PLS model. NaN
/// activations are treated as zero; the zero vector yields the intercept.
pub fn au_to_landmarks(model: &TrainedModel, aus: &AuVector) -> Result<LandmarkSet, RenderError> {
    let p = pls_of(model)?;
    let (d, m) = p.coefficients.shape();
    if d != AU_NAMES.len() {
        return Err(RenderError::DimensionMismatch { expected: AU_NAMES.len(), got: d });
    }
    if m != 2 * LANDMARK_COUNT {
        return Err(RenderError::DimensionMismatch { expected: 2 * LANDMARK_COUNT, got: m });
    }
    let a: Vec<f64> = aus.0.iter().map(|v| if v.is_nan() { 0.0 } else { *v }).collect();
    if a.iter().all(|&v| v == 0.0) {
        return Ok(LandmarkSet::from_flat(&p.intercept)?);
    }
    let x = DMatrix::from_row_slice(1, d, &a);
    let y = p.predict(&x)?;
    let flat: Vec<f64> = y.iter().copied().collect();
    Ok(LandmarkSet::from_flat(&flat)?)
}

/// Vertical bar chart. Heights are `|value| / max|value| * 100` px; bars
/// for positive values are red, negative blue. Labels run along the bottom.
pub fn bar_chart(names: &[&str], values: &[f64]) -> String {
    const BAR_W: f64 = 14.0;
    const GAP: f64 = 6.0;
    const HALF: f64 = 100.0;
    let width = 40.0 + names.len() as f64 * (BAR_W + GAP);
    let height = 2.0 * HALF + 60.0;
    let zero_y = 20.0 + HALF;
    let max = values.iter().filter(|v| v.is_finite()).fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out = String::new();
    svg_open(&mut out, width, height);
    let _ = writeln!(
        out,
        "<line x1=\"20.0000\" y1=\"{y}\" x2=\"{x2}\" y2=\"{y}\" stroke=\"#000000\" stroke-width=\"1\"/>",
        y = fmt4(zero_y),
        x2 = fmt4(width - 20.0)
    );
    for (i, (name, &v)) in names.iter().zip(values).enumerate() {
        let x = 20.0 + GAP / 2.0 + i as f64 * (BAR_W + GAP);
        if v.is_finite() && v != 0.0 && max > 0.0 {
            let h = v.abs() / max * HALF;
            let (y, color) = if v > 0.0 { (zero_y - h, "#d7191c") } else { (zero_y, "#2c7bb6") };
            let _ = writeln!(
                out,
                "<rect class=\"bar\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{color}\"/>",
                fmt4(x),
                fmt4(y),
                fmt4(BAR_W),
                fmt4(h)
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"8\" text-anchor=\"middle\">{name}</text>",
            fmt4(x + BAR_W / 2.0),
            fmt4(height - 20.0)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientFaces {
    pub positive: LandmarkSet,
    pub negative: LandmarkSet,
    pub positive_svg: String,
    pub negative_svg: String,
    /// Coefficient bar chart, positive coefficients in red.
    pub chart_svg: String,
}

/// Faces for `clamp(±scale * coef, 0, 1)` where `coef` are the weights of a
/// binary linear classifier over the 20 AUs.
pub fn coefficient_faces(
    classifier: &TrainedModel,
    viz: &TrainedModel,
    scale: f64,
) -> Result<CoefficientFaces, RenderError> {
    let coef = match (&classifier.kind, &classifier.params) {
        (ModelKind::Logistic | ModelKind::Svm, ModelParams::Classifiers(cs)) if cs.len() == 1 => match &cs[0] {
            BinaryClassifier::Linear(m) => m.weights.clone(),
            BinaryClassifier::Forest(_) => unreachable!("linear kinds hold linear members"),
        },
        _ => {
            return Err(RenderError::WrongModel {
                expected: "binary logistic or svm",
                got: classifier.kind.to_string(),
            })
        }
    };
    if coef.len() != AU_NAMES.len() {
        return Err(RenderError::DimensionMismatch { expected: AU_NAMES.len(), got: coef.len() });
    }
    let mut pos = AuVector::zeros();
    let mut neg = AuVector::zeros();
    for (i, c) in coef.iter().enumerate() {
        pos.0[i] = (scale * c).clamp(0.0, 1.0);
        neg.0[i] = (-scale * c).clamp(0.0, 1.0);
    }
    let positive = au_to_landmarks(viz, &pos)?;
    let negative = au_to_landmarks(viz, &neg)?;
    Ok(CoefficientFaces {
        positive_svg: render_face(&FaceSketch::new(positive.clone()), &Overlay::None, 256),
        negative_svg: render_face(&FaceSketch::new(negative.clone()), &Overlay::None, 256),
        chart_svg: bar_chart(&AU_NAMES, &coef),
        positive,
        negative,
    })
}

/// Height in px of a bar for value 1.0 in the detection charts.
pub const DETECTION_BAR_SCALE: f64 = 100.0;

fn detection_bars(out: &mut String, class: &str, x0: f64, names: &[&str], values: &[f64]) -> f64 {
    const BAR_W: f64 = 12.0;
    const GAP: f64 = 4.0;
    let base_y = 20.0 + DETECTION_BAR_SCALE;
    let width = names.len() as f64 * (BAR_W + GAP) + 20.0;
    let _ = writeln!(
        out,
        "<line x1=\"{}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#000000\" stroke-width=\"1\"/>",
        fmt4(x0),
        fmt4(x0 + width - 20.0),
        y = fmt4(base_y)
    );
    for (i, (name, &v)) in names.iter().zip(values).enumerate() {
        let x = x0 + i as f64 * (BAR_W + GAP);
        if v.is_finite() {
            let h = v * DETECTION_BAR_SCALE;
            let _ = writeln!(
                out,
                "<rect class=\"bar {class}\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"#2c7bb6\"/>",
                fmt4(x),
                fmt4(base_y - h),
                fmt4(BAR_W),
                fmt4(h)
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"7\" transform=\"rotate(90 {} {})\">{name}</text>",
            fmt4(x + 3.0),
            fmt4(base_y + 4.0),
            fmt4(x + 3.0),
            fmt4(base_y + 4.0)
        );
    }
    width
}

/// Composite figure: optional embedded image with facebox and landmarks,
/// then AU and emotion bar charts side by side. Only groups present in the
/// row are drawn.
pub fn plot_detections(row: &FexRow, image: Option<&GrayImage>) -> Result<String, RenderError> {
    if row.is_empty() {
        return Err(RenderError::EmptyRow);
    }
    // panel extents: the image, else whatever the geometry covers
    let (mut pw, mut ph) = image.map_or((0.0, 0.0), |im| (im.width() as f64, im.height() as f64));
    if let Some(b) = &row.facebox {
        pw = pw.max(b.x + b.width + 10.0);
        ph = ph.max(b.y + b.height + 10.0);
    }
    if let Some(lm) = &row.landmarks {
        for p in lm.points() {
            pw = pw.max(p.x + 10.0);
            ph = ph.max(p.y + 10.0);
        }
    }
    let has_panel = image.is_some() || row.facebox.is_some() || row.landmarks.is_some();
    if !has_panel {
        pw = 0.0;
        ph = 0.0;
    }

    let mut body = String::new();
    if let Some(im) = image {
        let png = im.to_png_bytes()?;
        let b64 = base64::engine::general_purpose::STANDARD.encode(png);
        let _ = writeln!(
            body,
            "<image x=\"0.0000\" y=\"0.0000\" width=\"{}\" height=\"{}\" xlink:href=\"data:image/png;base64,{b64}\"/>",
            fmt4(im.width() as f64),
            fmt4(im.height() as f64)
        );
    }
    if let Some(b) = &row.facebox {
        let _ = writeln!(
            body,
            "<rect class=\"facebox\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#1a9641\" stroke-width=\"2\"/>",
            fmt4(b.x),
            fmt4(b.y),
            fmt4(b.width),
            fmt4(b.height)
        );
    }
    if let Some(lm) = &row.landmarks {
        body.push_str("<g class=\"landmarks\" fill=\"#d7191c\">\n");
        for p in lm.points() {
            let _ = writeln!(body, "<circle cx=\"{}\" cy=\"{}\" r=\"1.5000\"/>", fmt4(p.x), fmt4(p.y));
        }
        body.push_str("</g>\n");
    }
    let mut x = if has_panel { pw + 20.0 } else { 20.0 };
    let mut chart_h: f64 = 0.0;
    if let Some(aus) = &row.aus {
        x += detection_bars(&mut body, "au", x, &AU_NAMES, &aus.0);
        chart_h = 20.0 + DETECTION_BAR_SCALE + 50.0;
    }
    if let Some(em) = &row.emotions {
        x += detection_bars(&mut body, "emotion", x, &EMOTION_NAMES, &em.0);
        chart_h = 20.0 + DETECTION_BAR_SCALE + 70.0;
    }
    let width = if row.aus.is_some() || row.emotions.is_some() { x } else { pw.max(1.0) };
    let height = ph.max(chart_h).max(1.0);

    let mut out = String::new();
    svg_open(&mut out, width, height);
    out.push_str(&body);
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmt4_folds_negative_zero() {
        assert_eq!(fmt4(-0.00001), "0.0000");
        assert_eq!(fmt4(1.23456), "1.2346");
        assert_eq!(fmt4(-2.5), "-2.5000");
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(heat_color(0.0), "#2c7bb6");
        assert_eq!(heat_color(1.0), "#d7191c");
        assert_eq!(heat_color(0.5), "#ffffbf");
        assert_eq!(heat_color(7.0), "#d7191c");
    }

    #[test]
    fn neutral_face_has_eight_paths() {
        let n = LandmarkSet::neutral_template();
        let svg = render_face(&FaceSketch::new(n.clone()), &Overlay::None, 256);
        assert_eq!(svg.matches("<path ").count(), 8);
        let zero = render_face(&FaceSketch::new(n.clone()), &Overlay::Vectors(n), 256);
        assert!(!zero.contains("<line"));
        assert!(!zero.contains("<marker"));
    }

    #[test]
    fn facebox_only_row() {
        let mut row = FexRow::new(0, 0.0);
        row.facebox = Some(crate::geometry::FaceBox::new(5.0, 5.0, 40.0, 50.0, 0.9).unwrap());
        let svg = plot_detections(&row, None).unwrap();
        assert_eq!(svg.matches("<rect").count(), 1);
        assert!(!svg.contains("bar"));
        assert!(matches!(plot_detections(&FexRow::new(0, 0.0), None), Err(RenderError::EmptyRow)));
    }
}
