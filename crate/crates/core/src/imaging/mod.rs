//! Page images: synthetic certificate rendering, augmentation, and the
//! deskew/resize preprocessing applied before the model sees a page.
//!
//! Pages are 8-bit grayscale with the binarized convention 0 = ink,
//! 255 = paper. Every operation in this module returns a binarized page.

mod augment;
pub mod font;
mod geometry;
mod render;

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use thiserror::Error;

pub use augment::{augment, dilate, erode, AugmentParams};
pub use geometry::{
    column_ink_profile, deskew, deskew_with, resize_to_height, rotate, scale, DeskewParams,
};
pub use render::{
    render_certificate, GroundTruth, LayoutSpec, MarginSide, PageGeometry, RenderedLine, Span,
    StyleSpec, DEFAULT_PAGE_HEIGHT,
};

pub const INK: u8 = 0;
pub const PAPER: u8 = 255;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("no glyph for character {0:?}")]
    MissingGlyph(char),
    #[error("no column reaches the rule ink threshold ({threshold} pixels); best was {best}")]
    NoMarginFound { threshold: usize, best: usize },
    #[error("invalid layout: {0}")]
    Layout(String),
    #[error("line {text:?} does not fit in its box")]
    Overflow { text: String },
    #[error("PGM: {0}")]
    Pgm(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Grayscale page, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PageImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub dpi: u32,
}

impl PageImage {
    /// Blank (all paper) page.
    pub fn blank(width: usize, height: usize, dpi: u32) -> Self {
        assert!(
            width >= 1 && height >= 1,
            "page dimensions must be positive"
        );
        Self {
            width,
            height,
            pixels: vec![PAPER; width * height],
            dpi,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn is_ink(&self, x: usize, y: usize) -> bool {
        self.pixels[y * self.width + x] < 128
    }

    #[inline]
    pub fn set_ink(&mut self, x: i64, y: i64) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.pixels[y as usize * self.width + x as usize] = INK;
        }
    }

    pub fn ink_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p < 128).count()
    }

    pub fn is_binary(&self) -> bool {
        self.pixels.iter().all(|&p| p == INK || p == PAPER)
    }

    /// Thresholds at mid-gray.
    pub fn binarize(&mut self) {
        for p in &mut self.pixels {
            *p = if *p < 128 { INK } else { PAPER };
        }
    }

    /// Binary PGM (P5), maxval 255.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<(), ImagingError> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.pixels)?;
        Ok(())
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<(), ImagingError> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_pgm(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_pgm<R: Read>(r: R) -> Result<Self, ImagingError> {
        let mut r = BufReader::new(r);
        let mut header = Vec::new();
        // magic, width, height, maxval, each separated by whitespace; '#' starts a comment
        while header.len() < 4 {
            let mut line = String::new();
            if r.read_line(&mut line)? == 0 {
                return Err(ImagingError::Pgm("truncated header".into()));
            }
            let content = line.split('#').next().unwrap_or("");
            header.extend(content.split_whitespace().map(str::to_string));
        }
        if header.len() != 4 || header[0] != "P5" {
            return Err(ImagingError::Pgm(format!("unsupported header {header:?}")));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| ImagingError::Pgm(format!("bad number {s:?}")))
        };
        let (width, height, maxval) = (parse(&header[1])?, parse(&header[2])?, parse(&header[3])?);
        if width == 0 || height == 0 || maxval != 255 {
            return Err(ImagingError::Pgm(
                "need positive size and maxval 255".into(),
            ));
        }
        let mut pixels = vec![0u8; width * height];
        r.read_exact(&mut pixels)
            .map_err(|_| ImagingError::Pgm("truncated pixel data".into()))?;
        Ok(Self {
            width,
            height,
            pixels,
            dpi: 200,
        })
    }

    pub fn load_pgm(path: impl AsRef<Path>) -> Result<Self, ImagingError> {
        Self::read_pgm(std::fs::File::open(path)?)
    }
}
