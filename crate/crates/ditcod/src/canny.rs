//! Canny edge detection on binary masks, used to derive boundary ground
//! truth. Gaussian blur and Sobel use replicate border padding; thresholds
//! are fractions of the maximum gradient magnitude; hysteresis is an
//! 8-connected flood from strong pixels.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CANNY_SIGMA: f64 = 1.0;
pub const CANNY_LOW: f64 = 0.1;
pub const CANNY_HIGH: f64 = 0.3;

fn clamp_idx(v: isize, n: usize) -> usize {
    v.clamp(0, n as isize - 1) as usize
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

fn blur(img: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                let sx = clamp_idx(x as isize + i as isize - r, w);
                acc += kv * img[y * w + sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                let sy = clamp_idx(y as isize + i as isize - r, h);
                acc += kv * tmp[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn sobel(img: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    const KX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    const KY: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut ax = 0.0;
            let mut ay = 0.0;
            for dy in 0..3 {
                for dx in 0..3 {
                    let sy = clamp_idx(y as isize + dy - 1, h);
                    let sx = clamp_idx(x as isize + dx - 1, w);
                    let v = img[sy * w + sx];
                    ax += KX[dy as usize][dx as usize] * v;
                    ay += KY[dy as usize][dx as usize] * v;
                }
            }
            gx[y * w + x] = ax;
            gy[y * w + x] = ay;
        }
    }
    (gx, gy)
}

/// Quantize a gradient direction into 4 bins: 0 = horizontal gradient
/// (vertical edge), 1 = 45 degrees, 2 = vertical, 3 = 135 degrees.
fn direction_bin(gx: f64, gy: f64) -> usize {
    let angle = gy.atan2(gx).to_degrees();
    let a = if angle < 0.0 { angle + 180.0 } else { angle };
    if !(22.5..157.5).contains(&a) {
        0
    } else if a < 67.5 {
        1
    } else if a < 112.5 {
        2
    } else {
        3
    }
}

/// Canny edge map of a mask in [0,1]. `low` and `high` are fractions of the
/// maximum gradient magnitude.
pub fn canny(mask: &Tensor<f64>, sigma: f64, low: f64, high: f64) -> Result<Tensor<f64>> {
    if mask.rank() != 3 || mask.shape()[0] != 1 {
        return Err(Error::shape(format!("canny wants [1 x H x W], got {:?}", mask.shape())));
    }
    if !(0.0 <= low && low < high && high <= 1.0) {
        return Err(Error::invalid(format!("canny thresholds low={low}, high={high}")));
    }
    let (h, w) = (mask.shape()[1], mask.shape()[2]);
    // A mask and its complement have the same edges, but blur and Sobel of
    // the complement are not the bitwise negation of the original's, so
    // near-tie comparisons in NMS could flip. Canonicalize on the corner
    // pixel to make complement invariance exact.
    let canonical;
    let mask = if mask.data()[0] > 0.5 {
        canonical = mask.map(|v| 1.0 - v);
        &canonical
    } else {
        mask
    };
    let blurred = blur(mask.data(), h, w, sigma);
    let (gx, gy) = sobel(&blurred, h, w);
    let mag: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).collect();
    let max_mag = mag.iter().cloned().fold(0.0, f64::max);
    // constant masks leave only floating-point residue after the blur
    if max_mag < 1e-9 {
        return Ok(Tensor::zeros(mask.shape()));
    }

    // non-maximum suppression along the quantized gradient direction
    let mut nms = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (dy, dx): (isize, isize) = match direction_bin(gx[i], gy[i]) {
                0 => (0, 1),
                1 => (1, 1),
                2 => (1, 0),
                _ => (1, -1),
            };
            let n1 = mag[clamp_idx(y as isize + dy, h) * w + clamp_idx(x as isize + dx, w)];
            let n2 = mag[clamp_idx(y as isize - dy, h) * w + clamp_idx(x as isize - dx, w)];
            if mag[i] >= n1 && mag[i] >= n2 {
                nms[i] = mag[i];
            }
        }
    }

    let lo = low * max_mag;
    let hi = high * max_mag;
    let mut out = vec![0.0; h * w];
    let mut stack: Vec<usize> = Vec::new();
    for i in 0..h * w {
        if nms[i] >= hi {
            out[i] = 1.0;
            stack.push(i);
        }
    }
    while let Some(i) = stack.pop() {
        let (y, x) = (i / w, i % w);
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                if dy == 0 && dx == 0 {
                    continue;
                }
                let ny = y as isize + dy;
                let nx = x as isize + dx;
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if out[j] == 0.0 && nms[j] >= lo {
                    out[j] = 1.0;
                    stack.push(j);
                }
            }
        }
    }
    Tensor::new(vec![1, h, w], out)
}

pub fn canny_default(mask: &Tensor<f64>) -> Result<Tensor<f64>> {
    canny(mask, CANNY_SIGMA, CANNY_LOW, CANNY_HIGH)
}
