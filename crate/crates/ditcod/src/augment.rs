//! Training-time augmentation: horizontal flip, random crop (0.9 area) with
//! resize back, and rotation within +/-15 degrees. The same geometric
//! transform is applied to image and mask; the boundary ground truth is
//! recomputed from the transformed mask rather than warped (warping an edge
//! map would thin and alias it).

use rand::Rng;

use crate::canny::canny_default;
use crate::error::Result;
use crate::tensor::Tensor;

pub const CROP_AREA: f64 = 0.9;
pub const MAX_ROT_DEG: f64 = 15.0;

/// Bilinear sample with replicate borders at a continuous position.
fn sample_bilinear(t: &Tensor<f64>, c: usize, y: f64, x: f64) -> f64 {
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let cl = |v: f64, n: usize| v.clamp(0.0, (n - 1) as f64);
    let y = cl(y, h);
    let x = cl(x, w);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let at = |yy: usize, xx: usize| t.data()[(c * h + yy) * w + xx];
    at(y0, x0) * (1.0 - fy) * (1.0 - fx)
        + at(y0, x1) * (1.0 - fy) * fx
        + at(y1, x0) * fy * (1.0 - fx)
        + at(y1, x1) * fy * fx
}

/// Nearest-neighbor sample with replicate borders (masks stay binary).
fn sample_nearest(t: &Tensor<f64>, c: usize, y: f64, x: f64) -> f64 {
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let yy = (y.round().max(0.0) as usize).min(h - 1);
    let xx = (x.round().max(0.0) as usize).min(w - 1);
    t.data()[(c * h + yy) * w + xx]
}

/// Warp through an inverse map from output to source pixel coordinates.
fn warp<M>(t: &Tensor<f64>, nearest: bool, map: M) -> Tensor<f64>
where
    M: Fn(f64, f64) -> (f64, f64),
{
    let (h, w) = (t.shape()[1], t.shape()[2]);
    Tensor::from_fn(t.shape(), |i| {
        let ch = i / (h * w);
        let oy = ((i / w) % h) as f64;
        let ox = (i % w) as f64;
        let (sy, sx) = map(oy, ox);
        if nearest {
            sample_nearest(t, ch, sy, sx)
        } else {
            sample_bilinear(t, ch, sy, sx)
        }
    })
}

pub fn hflip(t: &Tensor<f64>) -> Tensor<f64> {
    let w = t.shape()[2];
    Tensor::from_fn(t.shape(), |i| {
        let row = i / w;
        t.data()[row * w + (w - 1 - i % w)]
    })
}

struct Geometry {
    flip: bool,
    crop_y: f64,
    crop_x: f64,
    angle: f64,
}

fn apply(t: &Tensor<f64>, g: &Geometry, nearest: bool, crop_scale: f64) -> Tensor<f64> {
    let (h, w) = (t.shape()[1] as f64, t.shape()[2] as f64);
    let flipped = if g.flip { hflip(t) } else { t.clone() };
    let (cy, cx) = ((h - 1.0) / 2.0, (w - 1.0) / 2.0);
    let (sin, cos) = g.angle.sin_cos();
    // inverse map: rotate about the center, then read from the crop window
    warp(&flipped, nearest, |oy, ox| {
        let dy = oy - cy;
        let dx = ox - cx;
        let ry = cy + cos * dy - sin * dx;
        let rx = cx + sin * dy + cos * dx;
        (g.crop_y + ry * crop_scale, g.crop_x + rx * crop_scale)
    })
}

/// Draw one augmentation and apply it to image and mask; the boundary map is
/// recomputed from the transformed mask. The mask stays strictly binary.
pub fn augment(
    image: &Tensor<f64>,
    gt: &Tensor<f64>,
    rng: &mut impl Rng,
) -> Result<(Tensor<f64>, Tensor<f64>, Tensor<f64>)> {
    let (h, w) = (image.shape()[1] as f64, image.shape()[2] as f64);
    let crop_scale = CROP_AREA.sqrt();
    let g = Geometry {
        flip: rng.gen_bool(0.5),
        crop_y: rng.gen_range(0.0..=(h - 1.0) * (1.0 - crop_scale)),
        crop_x: rng.gen_range(0.0..=(w - 1.0) * (1.0 - crop_scale)),
        angle: rng.gen_range(-MAX_ROT_DEG..=MAX_ROT_DEG).to_radians(),
    };
    let img = apply(image, &g, false, crop_scale);
    let mask = apply(gt, &g, true, crop_scale);
    let boundary = canny_default(&mask)?;
    Ok((img, mask, boundary))
}
