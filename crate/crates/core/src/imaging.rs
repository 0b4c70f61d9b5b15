//! Image container and overlapping-patch operators.
//!
//! Patches are square sliding windows. `extract_patches` stacks them as the
//! columns of a p x N matrix (p = patch_side^2, one column per window
//! position); `accumulate_patches` is its exact adjoint, adding each column
//! back into its window. Window positions never wrap: origins step by
//! `stride` and the final origin is clamped so the last window ends at the
//! image boundary.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Dense p x N matrix whose columns are vectorized image patches.
///
/// Column `j` holds window `j` vectorized row-major within the patch.
pub type PatchMatrix = Array2<f64>;

/// A 2D scalar image in modified Hounsfield units (water ~ 1000, air ~ 0),
/// stored row-major with square pixels of known physical size.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixel_size_mm: f64,
    data: Array2<f64>,
}

impl Image {
    /// Zero image of the given dimensions.
    pub fn zeros(width: usize, height: usize, pixel_size_mm: f64) -> Self {
        Image {
            width,
            height,
            pixel_size_mm,
            data: Array2::zeros((height, width)),
        }
    }

    /// Build an image from a row-major buffer.
    pub fn from_vec(
        width: usize,
        height: usize,
        pixel_size_mm: f64,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "image buffer has {} values, expected {}x{} = {}",
                data.len(),
                width,
                height,
                width * height
            )));
        }
        if !pixel_size_mm.is_finite() || pixel_size_mm <= 0.0 {
            return Err(Error::Config(format!(
                "pixel_size_mm must be positive and finite, got {pixel_size_mm}"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("image contains non-finite values".into()));
        }
        let data = Array2::from_shape_vec((height, width), data).expect("length checked above");
        Ok(Image {
            width,
            height,
            pixel_size_mm,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_size_mm(&self) -> f64 {
        self.pixel_size_mm
    }

    /// Number of pixels.
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pixel value at (row, col).
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[(row, col)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[(row, col)] = value;
    }

    /// Row-major view of the pixel buffer.
    pub fn as_slice(&self) -> &[f64] {
        self.data.as_slice().expect("image data is contiguous")
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        self.data.as_slice_mut().expect("image data is contiguous")
    }

    /// Underlying (height, width) array.
    pub fn array(&self) -> &Array2<f64> {
        &self.data
    }

    /// Same dimensions and pixel size as `other`?
    pub fn same_grid(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Elementwise map into a new image on the same grid.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            pixel_size_mm: self.pixel_size_mm,
            data: self.data.map(|&v| f(v)),
        }
    }

    /// True if every pixel value is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Sliding-window configuration: square `patch_side` x `patch_side` windows
/// stepped by `stride` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchConfig {
    pub patch_side: usize,
    pub stride: usize,
}

impl PatchConfig {
    pub fn new(patch_side: usize, stride: usize) -> Self {
        PatchConfig { patch_side, stride }
    }

    /// Patch dimension p = patch_side^2.
    pub fn patch_len(&self) -> usize {
        self.patch_side * self.patch_side
    }

    /// Check the config against image dimensions.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.stride == 0 || self.stride > self.patch_side {
            return Err(Error::Config(format!(
                "stride must satisfy 1 <= stride <= patch_side, got stride={} patch_side={}",
                self.stride, self.patch_side
            )));
        }
        if self.patch_side == 0 || self.patch_side > width.min(height) {
            return Err(Error::Config(format!(
                "patch_side {} does not fit a {}x{} image",
                self.patch_side, width, height
            )));
        }
        Ok(())
    }

    /// Window origins along one dimension. Origins step by `stride`; the
    /// final origin is clamped to `dim - patch_side` so the last window ends
    /// exactly at the boundary.
    pub fn origins(&self, dim: usize) -> Vec<usize> {
        let last = dim - self.patch_side;
        let mut out: Vec<usize> = (0..=last).step_by(self.stride).collect();
        if *out.last().expect("at least origin 0") != last {
            out.push(last);
        }
        out
    }

    /// Number of windows in a width x height image, row origins enumerated
    /// before column origins.
    pub fn n_patches(&self, width: usize, height: usize) -> usize {
        self.origins(height).len() * self.origins(width).len()
    }
}

/// Stack all sliding windows of `img` as columns of a p x N matrix.
///
/// Window j is at origin (rows[j / n_cols], cols[j % n_cols]) and is
/// vectorized row-major within the window.
pub fn extract_patches(img: &Image, cfg: &PatchConfig) -> Result<PatchMatrix> {
    cfg.validate(img.width, img.height)?;
    let rows = cfg.origins(img.height);
    let cols = cfg.origins(img.width);
    let p = cfg.patch_len();
    let n = rows.len() * cols.len();
    let ps = cfg.patch_side;

    let mut out = Array2::zeros((p, n));
    let mut j = 0;
    for &r0 in &rows {
        for &c0 in &cols {
            let mut k = 0;
            for r in r0..r0 + ps {
                for c in c0..c0 + ps {
                    out[(k, j)] = img.data[(r, c)];
                    k += 1;
                }
            }
            j += 1;
        }
    }
    Ok(out)
}

/// Adjoint of [`extract_patches`]: add every column back into its window and
/// return the pixelwise sum (no averaging).
pub fn accumulate_patches(
    pm: &PatchMatrix,
    cfg: &PatchConfig,
    width: usize,
    height: usize,
) -> Result<Image> {
    cfg.validate(width, height)?;
    let rows = cfg.origins(height);
    let cols = cfg.origins(width);
    let p = cfg.patch_len();
    let n = rows.len() * cols.len();
    if pm.nrows() != p || pm.ncols() != n {
        return Err(Error::Dimension(format!(
            "patch matrix is {}x{}, expected {}x{} for a {}x{} image",
            pm.nrows(),
            pm.ncols(),
            p,
            n,
            width,
            height,
        )));
    }
    let ps = cfg.patch_side;

    let mut out = Image::zeros(width, height, 1.0);
    let mut j = 0;
    for &r0 in &rows {
        for &c0 in &cols {
            let mut k = 0;
            for r in r0..r0 + ps {
                for c in c0..c0 + ps {
                    out.data[(r, c)] += pm[(k, j)];
                    k += 1;
                }
            }
            j += 1;
        }
    }
    Ok(out)
}

/// Per-pixel window coverage counts: pixel i holds the number of windows
/// containing i. This is the diagonal of the composed extract/accumulate
/// operator.
pub fn overlap_counts(cfg: &PatchConfig, width: usize, height: usize) -> Result<Image> {
    cfg.validate(width, height)?;
    let rows = cfg.origins(height);
    let cols = cfg.origins(width);
    let ps = cfg.patch_side;

    let mut out = Image::zeros(width, height, 1.0);
    for &r0 in &rows {
        for &c0 in &cols {
            for r in r0..r0 + ps {
                for c in c0..c0 + ps {
                    out.data[(r, c)] += 1.0;
                }
            }
        }
    }
    Ok(out)
}
