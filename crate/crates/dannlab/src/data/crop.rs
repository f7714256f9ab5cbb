use crate::error::{Error, Result};
use crate::numcore::{Rng, Tensor};

pub const CROP_SCALE: (f64, f64) = (0.08, 1.0);
pub const CROP_RATIO: (f64, f64) = (3.0 / 4.0, 4.0 / 3.0);
const CROP_ATTEMPTS: usize = 10;

/// A crop window in source pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Samples a crop covering an area fraction in [`CROP_SCALE`] with aspect
/// ratio (w/h) in [`CROP_RATIO`], log-uniform in the ratio. After
/// 10 rejected draws it falls back to the largest centered crop whose ratio
/// is within bounds.
pub fn sample_crop(height: usize, width: usize, rng: &mut Rng) -> CropBox {
    let area = (height * width) as f64;
    let (log_lo, log_hi) = (CROP_RATIO.0.ln(), CROP_RATIO.1.ln());
    for _ in 0..CROP_ATTEMPTS {
        let target = area * (CROP_SCALE.0 + (CROP_SCALE.1 - CROP_SCALE.0) * rng.uniform_f64());
        let ratio = (log_lo + (log_hi - log_lo) * rng.uniform_f64()).exp();
        let w = (target * ratio).sqrt().round() as usize;
        let h = (target / ratio).sqrt().round() as usize;
        if w > 0 && h > 0 && w <= width && h <= height {
            let top = rng.below(height - h + 1);
            let left = rng.below(width - w + 1);
            return CropBox {
                top,
                left,
                height: h,
                width: w,
            };
        }
    }
    let in_ratio = width as f64 / height as f64;
    let (h, w) = if in_ratio < CROP_RATIO.0 {
        let w = width;
        (((w as f64) / CROP_RATIO.0).round() as usize, w)
    } else if in_ratio > CROP_RATIO.1 {
        let h = height;
        (h, ((h as f64) * CROP_RATIO.1).round() as usize)
    } else {
        (height, width)
    };
    CropBox {
        top: (height - h) / 2,
        left: (width - w) / 2,
        height: h,
        width: w,
    }
}

/// Crops `crop` out of an `[H, W, C]` image and bilinearly resizes it to
/// `out_h x out_w` (pixel-center alignment, edge clamping).
pub fn resized_crop(im: &Tensor, crop: CropBox, out_h: usize, out_w: usize) -> Result<Tensor> {
    let &[h, w, c] = im.shape() else {
        return Err(Error::input(format!("expected [H, W, C], got {:?}", im.shape())));
    };
    if crop.height == 0
        || crop.width == 0
        || crop.top + crop.height > h
        || crop.left + crop.width > w
        || out_h == 0
        || out_w == 0
    {
        return Err(Error::input(format!("invalid crop {crop:?} for a {h}x{w} image")));
    }
    let sy = crop.height as f64 / out_h as f64;
    let sx = crop.width as f64 / out_w as f64;
    let src = im.data();
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for oy in 0..out_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (crop.height - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(crop.height - 1);
        let ty = (fy - y0 as f64) as f32;
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (crop.width - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(crop.width - 1);
            let tx = (fx - x0 as f64) as f32;
            let at = |y: usize, x: usize, ch: usize| {
                src[((crop.top + y) * w + crop.left + x) * c + ch]
            };
            for ch in 0..c {
                let v = if tx == 0.0 && ty == 0.0 {
                    at(y0, x0, ch)
                } else {
                    let top = at(y0, x0, ch) + (at(y0, x1, ch) - at(y0, x0, ch)) * tx;
                    let bottom = at(y1, x0, ch) + (at(y1, x1, ch) - at(y1, x0, ch)) * tx;
                    top + (bottom - top) * ty
                };
                out.push(v);
            }
        }
    }
    Tensor::new(vec![out_h, out_w, c], out)
}

/// Random resized crop with the conventional defaults (area 8%-100%,
/// aspect 3/4-4/3).
pub fn random_resized_crop(im: &Tensor, out_h: usize, out_w: usize, rng: &mut Rng) -> Result<Tensor> {
    let &[h, w, _] = im.shape() else {
        return Err(Error::input(format!("expected [H, W, C], got {:?}", im.shape())));
    };
    if h < 8 || w < 8 {
        return Err(Error::input(format!(
            "random resized crop needs at least 8x8 input, got {h}x{w}"
        )));
    }
    let crop = sample_crop(h, w, rng);
    resized_crop(im, crop, out_h, out_w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_crop_same_size_is_identity() {
        let mut rng = Rng::seed(0);
        let data = (0..10 * 12 * 3).map(|_| rng.uniform()).collect();
        let im = Tensor::new(vec![10, 12, 3], data).unwrap();
        let full = CropBox {
            top: 0,
            left: 0,
            height: 10,
            width: 12,
        };
        let out = resized_crop(&im, full, 10, 12).unwrap();
        assert!(out.max_abs_diff(&im) <= 1e-6);
    }

    #[test]
    fn constant_image_stays_constant() {
        let mut rng = Rng::seed(1);
        let im = Tensor::full(vec![20, 16, 3], 0.37);
        for _ in 0..50 {
            let out = random_resized_crop(&im, 9, 11, &mut rng).unwrap();
            assert!(out.data().iter().all(|&v| v == 0.37));
        }
    }

    #[test]
    fn crops_respect_bounds() {
        let mut rng = Rng::seed(2);
        for _ in 0..1000 {
            let c = sample_crop(28, 40, &mut rng);
            assert!(c.top + c.height <= 28 && c.left + c.width <= 40);
            assert!(c.height > 0 && c.width > 0);
        }
    }

    #[test]
    fn too_small_input() {
        let mut rng = Rng::seed(3);
        assert!(random_resized_crop(&Tensor::zeros(vec![7, 30, 1]), 4, 4, &mut rng).is_err());
    }
}
