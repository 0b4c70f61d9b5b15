//! Image quality metrics — RMSE, PSNR, SSIM — over a circular region of
//! interest, matching how low-dose CT reconstructions are scored against a
//! reference image. All metrics treat the first image as the reference
//! where it matters (PSNR peak, SSIM dynamic range).

use crate::error::{Error, Result};
use crate::imaging::Image;

/// Boolean pixel mask selecting the evaluation region.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiMask {
    width: usize,
    height: usize,
    mask: Vec<bool>,
    n_roi: usize,
}

impl RoiMask {
    /// Mask covering every pixel.
    pub fn full(width: usize, height: usize) -> Self {
        RoiMask {
            width,
            height,
            mask: vec![true; width * height],
            n_roi: width * height,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of selected pixels.
    pub fn n_roi(&self) -> usize {
        self.n_roi
    }

    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.width + col]
    }

    fn check_dims(&self, a: &Image, b: &Image) -> Result<()> {
        if a.width() != b.width() || a.height() != b.height() {
            return Err(Error::Dimension(format!(
                "images are {}x{} and {}x{}",
                a.width(),
                a.height(),
                b.width(),
                b.height()
            )));
        }
        if a.width() != self.width || a.height() != self.height {
            return Err(Error::Dimension(format!(
                "ROI is {}x{} but images are {}x{}",
                self.width,
                self.height,
                a.width(),
                a.height()
            )));
        }
        Ok(())
    }
}

/// Centered circular ROI: a pixel is included iff its center lies within
/// `radius_fraction * min(width, height) / 2` pixels of the image center
/// ((width-1)/2, (height-1)/2).
pub fn circular_roi(width: usize, height: usize, radius_fraction: f64) -> Result<RoiMask> {
    if width == 0 || height == 0 {
        return Err(Error::Config("ROI dimensions must be nonzero".into()));
    }
    if !(radius_fraction > 0.0 && radius_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "radius fraction must be in (0, 1], got {radius_fraction}"
        )));
    }
    let radius = radius_fraction * width.min(height) as f64 / 2.0;
    let cr = (height as f64 - 1.0) / 2.0;
    let cc = (width as f64 - 1.0) / 2.0;
    let mut mask = vec![false; width * height];
    let mut n_roi = 0;
    for r in 0..height {
        for c in 0..width {
            let dr = r as f64 - cr;
            let dc = c as f64 - cc;
            if (dr * dr + dc * dc).sqrt() <= radius {
                mask[r * width + c] = true;
                n_roi += 1;
            }
        }
    }
    if n_roi == 0 {
        return Err(Error::Config(format!(
            "radius fraction {radius_fraction} selects no pixels on {width}x{height}"
        )));
    }
    Ok(RoiMask {
        width,
        height,
        mask,
        n_roi,
    })
}

/// Root-mean-square error over the ROI:
/// `sqrt( sum_{i in ROI} (a_i - b_i)^2 / N_ROI )`, in the images' units.
pub fn rmse(a: &Image, b: &Image, roi: &RoiMask) -> Result<f64> {
    roi.check_dims(a, b)?;
    let mut sq = 0.0;
    for r in 0..roi.height {
        for c in 0..roi.width {
            if roi.contains(r, c) {
                let d = a.get(r, c) - b.get(r, c);
                sq += d * d;
            }
        }
    }
    Ok((sq / roi.n_roi as f64).sqrt())
}

/// Peak signal-to-noise ratio in dB: `20 log10(peak / rmse)` with the peak
/// taken as the reference image `a`'s maximum inside the ROI. Identical
/// images return +infinity.
pub fn psnr(a: &Image, b: &Image, roi: &RoiMask) -> Result<f64> {
    let e = rmse(a, b, roi)?;
    let mut peak = f64::NEG_INFINITY;
    for r in 0..roi.height {
        for c in 0..roi.width {
            if roi.contains(r, c) {
                peak = peak.max(a.get(r, c));
            }
        }
    }
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (peak / e).log10())
}

const SSIM_WINDOW: usize = 8;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Mean, biased variance, and covariance of two windows (uniform weights).
fn window_stats(a: &Image, b: &Image, r0: usize, c0: usize) -> (f64, f64, f64, f64, f64) {
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let (mut sa, mut sb) = (0.0, 0.0);
    for r in r0..r0 + SSIM_WINDOW {
        for c in c0..c0 + SSIM_WINDOW {
            sa += a.get(r, c);
            sb += b.get(r, c);
        }
    }
    let (ma, mb) = (sa / n, sb / n);
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for r in r0..r0 + SSIM_WINDOW {
        for c in c0..c0 + SSIM_WINDOW {
            let da = a.get(r, c) - ma;
            let db = b.get(r, c) - mb;
            va += da * da;
            vb += db * db;
            cov += da * db;
        }
    }
    (ma, mb, va / n, vb / n, cov / n)
}

/// Structural similarity with an externally fixed dynamic range, making the
/// score symmetric in its two arguments. Each ROI pixel contributes the
/// SSIM of the 8x8 window whose top-left corner is 3 pixels up-left of it;
/// pixels whose window does not fit inside the image are skipped.
pub fn ssim_with_range(a: &Image, b: &Image, roi: &RoiMask, dynamic_range: f64) -> Result<f64> {
    roi.check_dims(a, b)?;
    if !dynamic_range.is_finite() || dynamic_range <= 0.0 {
        return Err(Error::Config(format!(
            "dynamic range must be positive, got {dynamic_range}"
        )));
    }
    let c1 = (SSIM_K1 * dynamic_range) * (SSIM_K1 * dynamic_range);
    let c2 = (SSIM_K2 * dynamic_range) * (SSIM_K2 * dynamic_range);
    let off = SSIM_WINDOW / 2 - 1; // window top-left offset from the pixel

    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..roi.height {
        for c in 0..roi.width {
            if !roi.contains(r, c) {
                continue;
            }
            if r < off || c < off {
                continue;
            }
            let (r0, c0) = (r - off, c - off);
            if r0 + SSIM_WINDOW > roi.height || c0 + SSIM_WINDOW > roi.width {
                continue;
            }
            let (ma, mb, va, vb, cov) = window_stats(a, b, r0, c0);
            let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            total += s;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Config(
            "no 8x8 SSIM window fits inside the image for any ROI pixel".into(),
        ));
    }
    Ok((total / count as f64).clamp(-1.0, 1.0))
}

/// Structural similarity over the ROI with the dynamic range taken from the
/// reference image `a` (ROI max - min; a flat reference falls back to 1).
pub fn ssim(a: &Image, b: &Image, roi: &RoiMask) -> Result<f64> {
    roi.check_dims(a, b)?;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in 0..roi.height {
        for c in 0..roi.width {
            if roi.contains(r, c) {
                lo = lo.min(a.get(r, c));
                hi = hi.max(a.get(r, c));
            }
        }
    }
    let range = if hi - lo > 0.0 { hi - lo } else { 1.0 };
    ssim_with_range(a, b, roi, range)
}
