//! Synthetic certificate pages.
//!
//! A page has a margin column (document number and the enrollee's name, one
//! word per line) separated from the body by a vertical rule. Body lines pair a
//! preprinted label with a handwritten value. Preprinted text uses clean
//! glyphs; handwriting uses the writer's jitter, wobble, slant and stroke.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::font::{glyph, GLYPH_H, GLYPH_W};
use super::geometry::rotate;
use super::{ImagingError, PageImage};
use crate::corpus::{CertificateRecord, DateStyle, FieldKey};

/// Desk-scale page height.
pub const DEFAULT_PAGE_HEIGHT: usize = 512;

/// Pixel metrics of a page of a given height. All lengths scale with height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PageGeometry {
    pub height: usize,
    pub width: usize,
    /// Side of one font pixel.
    pub glyph_scale: usize,
    pub advance: usize,
    pub line_pitch: usize,
    pub top: usize,
    pub pad: usize,
}

impl PageGeometry {
    pub fn for_height(height: usize) -> Self {
        let u = height as f64 / DEFAULT_PAGE_HEIGHT as f64;
        let glyph_scale = ((2.0 * u).round() as usize).max(1);
        Self {
            height,
            width: (1.5 * height as f64).round() as usize,
            glyph_scale,
            advance: (GLYPH_W + 1) * glyph_scale,
            line_pitch: ((32.0 * u).round() as usize).max(GLYPH_H * glyph_scale + 2),
            top: (24.0 * u).round() as usize,
            pad: ((8.0 * u).round() as usize).max(1),
        }
    }

    pub fn unit(&self) -> f64 {
        self.height as f64 / DEFAULT_PAGE_HEIGHT as f64
    }

    /// Baseline of text line `k` (bottom row of the glyph cell).
    pub fn baseline(&self, k: usize) -> usize {
        self.top + k * self.line_pitch + GLYPH_H * self.glyph_scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginSide {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutSpec {
    pub margin_side: MarginSide,
    /// Rule position as a fraction of the width, measured from the margin side.
    pub margin_rule_x: f64,
    pub date_style: DateStyle,
    /// Page rotation in degrees, counter-clockwise.
    pub skew_angle: f64,
}

impl Default for LayoutSpec {
    fn default() -> Self {
        Self {
            margin_side: MarginSide::Left,
            margin_rule_x: 0.22,
            date_style: DateStyle::Standard,
            skew_angle: 0.0,
        }
    }
}

/// Half-open horizontal extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub x0: usize,
    pub x1: usize,
}

impl Span {
    fn overlaps(&self, other: &Span) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1
    }
}

impl LayoutSpec {
    pub fn validate(&self, geo: &PageGeometry) -> Result<(), ImagingError> {
        if self.skew_angle.abs() > 5.0 || !self.skew_angle.is_finite() {
            return Err(ImagingError::Layout(format!(
                "skew {} exceeds 5 degrees",
                self.skew_angle
            )));
        }
        if !(0.1..=0.4).contains(&self.margin_rule_x) {
            return Err(ImagingError::Layout(format!(
                "margin rule at {}",
                self.margin_rule_x
            )));
        }
        if self.margin_box(geo).overlaps(&self.body_box(geo)) {
            return Err(ImagingError::Layout("margin and body overlap".into()));
        }
        Ok(())
    }

    /// Column of the vertical rule.
    pub fn rule_x(&self, geo: &PageGeometry) -> usize {
        let x = (self.margin_rule_x * geo.width as f64).round() as usize;
        match self.margin_side {
            MarginSide::Left => x,
            MarginSide::Right => geo.width - 1 - x,
        }
    }

    pub fn margin_box(&self, geo: &PageGeometry) -> Span {
        let rule = self.rule_x(geo);
        match self.margin_side {
            MarginSide::Left => Span {
                x0: geo.pad,
                x1: rule - geo.pad,
            },
            MarginSide::Right => Span {
                x0: rule + geo.pad + 1,
                x1: geo.width - geo.pad,
            },
        }
    }

    pub fn body_box(&self, geo: &PageGeometry) -> Span {
        let rule = self.rule_x(geo);
        let gap = geo.pad + geo.pad / 2;
        match self.margin_side {
            MarginSide::Left => Span {
                x0: rule + gap,
                x1: geo.width - geo.pad,
            },
            MarginSide::Right => Span {
                x0: geo.pad,
                x1: rule - gap,
            },
        }
    }

    /// Mirror image of this layout.
    pub fn mirrored(&self) -> Self {
        Self {
            margin_side: match self.margin_side {
                MarginSide::Left => MarginSide::Right,
                MarginSide::Right => MarginSide::Left,
            },
            ..self.clone()
        }
    }
}

/// Handwriting parameters of one writer, in page pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleSpec {
    /// `None` for preprinted/typeset text.
    pub writer: Option<u32>,
    /// Maximum per-glyph offset.
    pub jitter: f64,
    pub baseline_wobble: f64,
    pub wobble_wavelength: f64,
    /// Side of the square drawn for each font pixel.
    pub stroke: usize,
    /// Horizontal shear per pixel of height.
    pub slant: f64,
}

impl StyleSpec {
    pub fn printed(geo: &PageGeometry) -> Self {
        Self {
            writer: None,
            jitter: 0.0,
            baseline_wobble: 0.0,
            wobble_wavelength: 1.0,
            stroke: geo.glyph_scale,
            slant: 0.0,
        }
    }

    /// Deterministic style of a writer.
    pub fn for_writer(writer: u32, geo: &PageGeometry) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5717_e000_u64 ^ (u64::from(writer) << 8));
        let u = geo.unit();
        Self {
            writer: Some(writer),
            jitter: rng.gen_range(0.5..1.5) * u,
            baseline_wobble: rng.gen_range(0.0..2.0) * u,
            wobble_wavelength: rng.gen_range(80.0..200.0) * u,
            stroke: geo.glyph_scale + usize::from(rng.gen_bool(0.4)),
            slant: rng.gen_range(-0.25..0.25),
        }
    }

    pub fn is_printed(&self) -> bool {
        self.writer.is_none()
    }
}

/// A line of text as drawn, before page rotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedLine {
    pub text: String,
    pub field: Option<FieldKey>,
    pub x: usize,
    pub baseline: usize,
    pub handwritten: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub record: CertificateRecord,
    pub layout: LayoutSpec,
    pub lines: Vec<RenderedLine>,
}

impl GroundTruth {
    /// Text drawn for `field`, joined across lines.
    pub fn rendered_text(&self, field: FieldKey) -> Vec<&str> {
        self.lines
            .iter()
            .filter(|l| l.field == Some(field))
            .map(|l| l.text.as_str())
            .collect()
    }
}

struct Canvas<'a> {
    img: PageImage,
    geo: &'a PageGeometry,
    lines: Vec<RenderedLine>,
}

impl Canvas<'_> {
    fn draw<R: Rng + ?Sized>(
        &mut self,
        text: &str,
        x: usize,
        line: usize,
        limit: usize,
        field: Option<FieldKey>,
        style: &StyleSpec,
        rng: &mut R,
    ) -> Result<usize, ImagingError> {
        let geo = self.geo;
        let gs = geo.glyph_scale as f64;
        let baseline = geo.baseline(line);
        let phase = if style.is_printed() {
            0.0
        } else {
            rng.gen_range(0.0..std::f64::consts::TAU)
        };
        let mut pen = x as f64;
        for c in text.chars() {
            let bitmap = glyph(c).ok_or(ImagingError::MissingGlyph(c))?;
            let (dx, dy) = if style.jitter > 0.0 {
                (
                    rng.gen_range(-style.jitter..=style.jitter),
                    rng.gen_range(-style.jitter..=style.jitter),
                )
            } else {
                (0.0, 0.0)
            };
            let wobble = style.baseline_wobble
                * (std::f64::consts::TAU * pen / style.wobble_wavelength + phase).sin();
            let ox = pen + dx;
            let oy = baseline as f64 - (GLYPH_H as f64) * gs + dy + wobble;
            for (r, row) in bitmap.iter().enumerate() {
                let shear = style.slant * (GLYPH_H - 1 - r) as f64 * gs;
                for (col, &on) in row.iter().enumerate() {
                    if !on {
                        continue;
                    }
                    let px = (ox + col as f64 * gs + shear).round() as i64;
                    let py = (oy + r as f64 * gs).round() as i64;
                    for sy in 0..style.stroke as i64 {
                        for sx in 0..style.stroke as i64 {
                            self.img.set_ink(px + sx, py + sy);
                        }
                    }
                }
            }
            pen += geo.advance as f64;
        }
        let end = pen.ceil() as usize;
        if end > limit {
            return Err(ImagingError::Overflow {
                text: text.to_string(),
            });
        }
        self.lines.push(RenderedLine {
            text: text.to_string(),
            field,
            x,
            baseline,
            handwritten: !style.is_printed(),
        });
        Ok(end)
    }
}

/// Body lines: (preprinted label, field). `None` field = template-only line.
fn body_lines(date_style: DateStyle) -> [(&'static str, Option<FieldKey>); 10] {
    [
        ("ACTA DE NACIMIENTO", None),
        ("En el año dos mil", Some(FieldKey::YearOfEnrollment)),
        ("Juzgado", Some(FieldKey::Jurisdiction)),
        ("Departamento de", Some(FieldKey::Department)),
        ("compareció", Some(FieldKey::Parent1Name)),
        ("nacido el día", Some(FieldKey::DateField1)),
        (
            match date_style {
                DateStyle::Standard => "de",
                DateStyle::Verbose => "del año",
            },
            Some(FieldKey::DateField2),
        ),
        ("hijo de", Some(FieldKey::Parent2Name)),
        ("nombre", Some(FieldKey::EnrolleeFullName)),
        ("Firma del Oficial", None),
    ]
}

/// Renders `record` as a handwritten certificate of the page's geometry.
///
/// The enrollee's name is written twice: word by word in the margin, and on a
/// body line. The page is rotated by `layout.skew_angle` last.
pub fn render_certificate<R: Rng + ?Sized>(
    record: &CertificateRecord,
    geo: &PageGeometry,
    layout: &LayoutSpec,
    style: &StyleSpec,
    rng: &mut R,
) -> Result<(PageImage, GroundTruth), ImagingError> {
    layout.validate(geo)?;
    let printed = StyleSpec::printed(geo);
    let mut canvas = Canvas {
        img: PageImage::blank(geo.width, geo.height, 200),
        geo,
        lines: Vec::new(),
    };

    let rule = layout.rule_x(geo) as i64;
    for y in geo.top / 2..geo.height - geo.top / 2 {
        canvas.img.set_ink(rule, y as i64);
    }

    let margin = layout.margin_box(geo);
    let label_end = canvas.draw("N", margin.x0, 1, margin.x1, None, &printed, rng)?;
    canvas.draw(
        record.get(FieldKey::DocumentNumber),
        label_end + geo.advance,
        1,
        margin.x1,
        Some(FieldKey::DocumentNumber),
        style,
        rng,
    )?;
    for (i, word) in record
        .get(FieldKey::EnrolleeFullName)
        .split(' ')
        .enumerate()
    {
        canvas.draw(
            word,
            margin.x0,
            2 + i,
            margin.x1,
            Some(FieldKey::EnrolleeFullName),
            style,
            rng,
        )?;
    }

    let body = layout.body_box(geo);
    for (k, (label, field)) in body_lines(layout.date_style).into_iter().enumerate() {
        let end = canvas.draw(label, body.x0, k, body.x1, None, &printed, rng)?;
        if let Some(f) = field {
            canvas.draw(
                record.get(f),
                end + geo.advance,
                k,
                body.x1,
                Some(f),
                style,
                rng,
            )?;
        }
    }

    let Canvas { img, lines, .. } = canvas;
    let img = if layout.skew_angle != 0.0 {
        rotate(&img, layout.skew_angle)
    } else {
        img
    };
    Ok((
        img,
        GroundTruth {
            record: record.clone(),
            layout: layout.clone(),
            lines,
        },
    ))
}
