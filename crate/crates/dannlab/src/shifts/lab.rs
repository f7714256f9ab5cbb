//! sRGB (D65) <-> CIELAB conversion.
//!
//! Images are `[H, W, 3]` tensors. RGB is in `[0, 1]`; LAB uses the usual
//! units (L in `[0, 100]`). Arithmetic is carried out in `f64`.

use crate::error::{Error, Result};
use crate::numcore::Tensor;

const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

const XYZ_TO_RGB: [[f64; 3]; 3] = [
    [3.240_454_2, -1.537_138_5, -0.498_531_4],
    [-0.969_266_0, 1.876_010_8, 0.041_556_0],
    [0.055_643_4, -0.204_025_9, 1.057_225_2],
];

/// D65 reference white, taken as the XYZ of RGB (1, 1, 1) so that white maps
/// to a = b = 0.
const WHITE: [f64; 3] = [
    RGB_TO_XYZ[0][0] + RGB_TO_XYZ[0][1] + RGB_TO_XYZ[0][2],
    RGB_TO_XYZ[1][0] + RGB_TO_XYZ[1][1] + RGB_TO_XYZ[1][2],
    RGB_TO_XYZ[2][0] + RGB_TO_XYZ[2][1] + RGB_TO_XYZ[2][2],
];

const EPSILON: f64 = 216.0 / 24389.0;
const KAPPA: f64 = 24389.0 / 27.0;

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn f(t: f64) -> f64 {
    if t > EPSILON {
        t.cbrt()
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

fn f_inv(t: f64) -> f64 {
    let t3 = t * t * t;
    if t3 > EPSILON {
        t3
    } else {
        (116.0 * t - 16.0) / KAPPA
    }
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn rgb_pixel_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let xyz = mat_vec(&RGB_TO_XYZ, rgb.map(srgb_to_linear));
    let fx = f(xyz[0] / WHITE[0]);
    let fy = f(xyz[1] / WHITE[1]);
    let fz = f(xyz[2] / WHITE[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Inverse conversion; the result is not clipped.
pub fn lab_pixel_to_rgb(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let xyz = [
        WHITE[0] * f_inv(fx),
        WHITE[1] * f_inv(fy),
        WHITE[2] * f_inv(fz),
    ];
    mat_vec(&XYZ_TO_RGB, xyz).map(linear_to_srgb)
}

pub(crate) fn require_rgb(im: &Tensor) -> Result<()> {
    match im.shape() {
        [_, _, 3] => Ok(()),
        [_, _, c] => Err(Error::input(format!(
            "color operations need 3-channel images, got {c} channel(s)"
        ))),
        other => Err(Error::input(format!(
            "expected an [H, W, C] image, got shape {other:?}"
        ))),
    }
}

/// Converts an RGB image to LAB.
pub fn rgb_to_lab(im: &Tensor) -> Result<Tensor> {
    require_rgb(im)?;
    let mut out = Vec::with_capacity(im.len());
    for px in im.data().chunks(3) {
        let lab = rgb_pixel_to_lab([px[0] as f64, px[1] as f64, px[2] as f64]);
        out.extend(lab.map(|v| v as f32));
    }
    Tensor::new(im.shape().to_vec(), out)
}

/// Converts a LAB image back to RGB, clipping out-of-gamut values into
/// `[0, 1]`.
pub fn lab_to_rgb(lab: &Tensor) -> Result<Tensor> {
    require_rgb(lab)?;
    let mut out = Vec::with_capacity(lab.len());
    for px in lab.data().chunks(3) {
        let rgb = lab_pixel_to_rgb([px[0] as f64, px[1] as f64, px[2] as f64]);
        out.extend(rgb.map(|v| v.clamp(0.0, 1.0) as f32));
    }
    Tensor::new(lab.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_and_black() {
        let w = rgb_pixel_to_lab([1.0, 1.0, 1.0]);
        assert!((w[0] - 100.0).abs() < 1e-9);
        assert!(w[1].abs() < 1e-9 && w[2].abs() < 1e-9);
        let b = rgb_pixel_to_lab([0.0, 0.0, 0.0]);
        assert_eq!(b, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn known_primary() {
        // sRGB red under D65: L 53.24, a 80.09, b 67.20 (standard tables)
        let red = rgb_pixel_to_lab([1.0, 0.0, 0.0]);
        assert!((red[0] - 53.24).abs() < 0.01, "{red:?}");
        assert!((red[1] - 80.09).abs() < 0.05, "{red:?}");
        assert!((red[2] - 67.20).abs() < 0.05, "{red:?}");
    }

    #[test]
    fn grayscale_rejected() {
        let im = Tensor::zeros(vec![2, 2, 1]);
        assert!(rgb_to_lab(&im).is_err());
    }
}
