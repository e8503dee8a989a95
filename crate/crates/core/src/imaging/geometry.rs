//! Rotation, scaling and deskew.
//!
//! Angles are in degrees; positive angles rotate the page counter-clockwise
//! as displayed (y grows downwards).

use super::{ImagingError, PageImage, INK, PAPER};

/// Rotates about the page centre with nearest-neighbour sampling. The
/// canvas keeps its size; uncovered pixels become paper.
pub fn rotate(img: &PageImage, degrees: f64) -> PageImage {
    if degrees == 0.0 {
        let mut out = img.clone();
        out.binarize();
        return out;
    }
    let (s, c) = degrees.to_radians().sin_cos();
    let cx = (img.width as f64 - 1.0) / 2.0;
    let cy = (img.height as f64 - 1.0) / 2.0;
    let mut out = PageImage::blank(img.width, img.height, img.dpi);
    for y in 0..img.height {
        let dy = y as f64 - cy;
        for x in 0..img.width {
            let dx = x as f64 - cx;
            let sx = (cx + dx * c - dy * s).round();
            let sy = (cy + dx * s + dy * c).round();
            if sx >= 0.0
                && sy >= 0.0
                && (sx as usize) < img.width
                && (sy as usize) < img.height
                && img.is_ink(sx as usize, sy as usize)
            {
                out.pixels[y * img.width + x] = INK;
            }
        }
    }
    out
}

/// Nearest-neighbour resampling to an explicit size.
fn resample(img: &PageImage, width: usize, height: usize) -> PageImage {
    let fx = img.width as f64 / width as f64;
    let fy = img.height as f64 / height as f64;
    let cols: Vec<usize> = (0..width)
        .map(|x| (((x as f64 + 0.5) * fx) as usize).min(img.width - 1))
        .collect();
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        let sy = (((y as f64 + 0.5) * fy) as usize).min(img.height - 1);
        let row = &img.pixels[sy * img.width..(sy + 1) * img.width];
        pixels.extend(
            cols.iter()
                .map(|&sx| if row[sx] < 128 { INK } else { PAPER }),
        );
    }
    PageImage {
        width,
        height,
        pixels,
        dpi: img.dpi,
    }
}

/// Isotropic scaling; both dimensions are rounded.
pub fn scale(img: &PageImage, factor: f64) -> PageImage {
    assert!(factor > 0.0, "scale factor must be positive");
    let w = ((img.width as f64 * factor).round() as usize).max(1);
    let h = ((img.height as f64 * factor).round() as usize).max(1);
    resample(img, w, h)
}

/// Scales so the height becomes `target_height`, keeping the aspect ratio.
/// Enlarging is allowed but logged.
pub fn resize_to_height(img: &PageImage, target_height: usize) -> PageImage {
    assert!(target_height >= 1, "target height must be positive");
    if target_height == img.height {
        let mut out = img.clone();
        out.binarize();
        return out;
    }
    if target_height > img.height {
        log::warn!(
            "enlarging page from height {} to {}",
            img.height,
            target_height
        );
    }
    let w = ((img.width as f64 * target_height as f64 / img.height as f64).round() as usize).max(1);
    resample(img, w, target_height)
}

/// Ink pixels per column.
pub fn column_ink_profile(img: &PageImage) -> Vec<usize> {
    let mut profile = vec![0; img.width];
    for row in img.pixels.chunks_exact(img.width) {
        for (x, &p) in row.iter().enumerate() {
            if p < 128 {
                profile[x] += 1;
            }
        }
    }
    profile
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeskewParams {
    pub max_angle: f64,
    pub step: f64,
    /// Minimum ink count of the best column, as a fraction of the height.
    pub min_rule_fraction: f64,
}

impl Default for DeskewParams {
    fn default() -> Self {
        Self {
            max_angle: 5.0,
            step: 0.05,
            min_rule_fraction: 0.25,
        }
    }
}

/// [`deskew_with`] under default parameters.
pub fn deskew(img: &PageImage) -> Result<(PageImage, f64), ImagingError> {
    deskew_with(img, &DeskewParams::default())
}

/// Estimates the page skew from the margin rule and undoes it.
///
/// Each candidate angle θ is scored by the largest column ink count of the
/// page rotated by −θ. The estimate is the centre of the longest run of
/// best-scoring candidates, so a page rendered with skew 1.7° yields about
/// 1.7 and is returned rotated by −1.7°.
pub fn deskew_with(
    img: &PageImage,
    params: &DeskewParams,
) -> Result<(PageImage, f64), ImagingError> {
    let cx = (img.width as f64 - 1.0) / 2.0;
    let cy = (img.height as f64 - 1.0) / 2.0;
    let ink: Vec<(f64, f64)> = (0..img.height)
        .flat_map(|y| (0..img.width).map(move |x| (x, y)))
        .filter(|&(x, y)| img.is_ink(x, y))
        .map(|(x, y)| (x as f64 - cx, y as f64 - cy))
        .collect();
    let n = (params.max_angle / params.step).round() as i64;
    let margin = (img.height as f64 * (params.max_angle.to_radians().sin())).ceil() as i64 + 1;
    let span = img.width as i64 + 2 * margin;
    let mut hist = vec![0usize; span as usize];
    let mut scores = Vec::with_capacity((2 * n + 1) as usize);
    for k in -n..=n {
        let theta = k as f64 * params.step;
        let (s, c) = theta.to_radians().sin_cos();
        hist.iter_mut().for_each(|h| *h = 0);
        for &(dx, dy) in &ink {
            // column of this pixel after rotating the page by -theta
            let x = (cx + dx * c - dy * s).round() as i64 + margin;
            if (0..span).contains(&x) {
                hist[x as usize] += 1;
            }
        }
        scores.push(hist.iter().copied().max().unwrap_or(0));
    }
    let best = scores.iter().copied().max().unwrap_or(0);
    let threshold = (params.min_rule_fraction * img.height as f64).ceil() as usize;
    if best < threshold.max(1) {
        return Err(ImagingError::NoMarginFound { threshold, best });
    }
    let (mut run_start, mut run_len) = (0usize, 0usize);
    let mut i = 0;
    while i < scores.len() {
        if scores[i] == best {
            let start = i;
            while i < scores.len() && scores[i] == best {
                i += 1;
            }
            if i - start > run_len {
                run_start = start;
                run_len = i - start;
            }
        } else {
            i += 1;
        }
    }
    let centre = run_start as f64 + (run_len as f64 - 1.0) / 2.0;
    let angle = (centre - n as f64) * params.step;
    Ok((rotate(img, -angle), angle))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ruled(width: usize, height: usize, x: usize) -> PageImage {
        let mut img = PageImage::blank(width, height, 200);
        for y in height / 10..height - height / 10 {
            img.set_ink(x as i64, y as i64);
        }
        img
    }

    #[test]
    fn resize_identity_and_arithmetic() {
        let img = ruled(60, 40, 10);
        assert_eq!(resize_to_height(&img, 40), img);
        let big = PageImage::blank(2400, 3800, 200);
        let small = resize_to_height(&big, 1900);
        assert_eq!((small.height, small.width), (1900, 1200));
        let up = resize_to_height(&img, 80);
        assert_eq!((up.width, up.height), (120, 80));
    }

    #[test]
    fn rotation_round_trip_keeps_rule() {
        let img = ruled(200, 160, 50);
        let back = rotate(&rotate(&img, 3.0), -3.0);
        let p = column_ink_profile(&back);
        assert!(p[50] >= 120, "{}", p[50]);
    }

    #[test]
    fn positive_angles_turn_the_top_left() {
        let img = ruled(200, 200, 100);
        let r = rotate(&img, 4.0);
        let top = (0..200).find(|&x| r.is_ink(x, 25)).unwrap();
        let bottom = (0..200).find(|&x| r.is_ink(x, 175)).unwrap();
        assert!(top < bottom);
    }

    #[test]
    fn deskew_recovers_angle() {
        let img = ruled(300, 200, 80);
        for skew in [-3.0, -1.2, 0.0, 0.8, 2.5] {
            let (fixed, est) = deskew(&rotate(&img, skew)).unwrap();
            assert!((est - skew).abs() <= 0.2, "skew {skew} estimated {est}");
            assert!(column_ink_profile(&fixed).into_iter().max().unwrap() >= 150);
        }
    }

    #[test]
    fn blank_page_has_no_margin() {
        let img = PageImage::blank(100, 80, 200);
        assert!(matches!(
            deskew(&img),
            Err(ImagingError::NoMarginFound { .. })
        ));
    }
}
