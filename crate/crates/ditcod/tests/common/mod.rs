//! Shared between integration tests: brute-force metric oracles and a
//! step-by-step Canny reference, each written directly from the conventions
//! in METRICS.md and the module docs rather than from the library code.

#![allow(dead_code)] // each test binary uses a subset

use ditcod::canny::{CANNY_HIGH, CANNY_LOW, CANNY_SIGMA};
use ditcod::loss::{bce_loss, ppa_loss, ppa_window};
use ditcod::params::{Forward, ParamStore};
use ditcod::synth::Sample;
use ditcod::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-12;

// ---------- metric oracles ----------

pub fn oracle_mae(s: &[f64], g: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..s.len() {
        acc += (s[i] - g[i]).abs();
    }
    acc / s.len() as f64
}

fn omean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn oracle_object(vals: &[f64]) -> f64 {
    if vals.is_empty() {
        return 0.0;
    }
    let m = omean(vals);
    let sd = if vals.len() > 1 {
        (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (vals.len() as f64 - 1.0)).sqrt()
    } else {
        0.0
    };
    2.0 * m / (m * m + 1.0 + sd + EPS)
}

fn oracle_ssim(s: &[f64], g: &[f64]) -> f64 {
    let n = s.len() as f64;
    let (mx, my) = (omean(s), omean(g));
    let denom = if s.len() > 1 { n - 1.0 } else { 1.0 };
    let sx = s.iter().map(|v| (v - mx) * (v - mx)).sum::<f64>() / denom;
    let sy = g.iter().map(|v| (v - my) * (v - my)).sum::<f64>() / denom;
    let sxy = s.iter().zip(g).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / denom;
    let num = 4.0 * mx * my * sxy;
    let den = (mx * mx + my * my) * (sx + sy);
    if num != 0.0 {
        num / (den + EPS)
    } else if den == 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn oracle_s_measure(s: &[f64], g: &[f64], h: usize, w: usize) -> f64 {
    let y = omean(g);
    if y == 0.0 {
        return 1.0 - omean(s);
    }
    if y == 1.0 {
        return omean(s);
    }
    // object term
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for i in 0..s.len() {
        if g[i] > 0.5 {
            fg.push(s[i]);
        } else {
            bg.push(1.0 - s[i]);
        }
    }
    let so = y * oracle_object(&fg) + (1.0 - y) * oracle_object(&bg);
    // region term: quadrants at the rounded 1-based centroid
    let area: f64 = g.iter().sum();
    let mut cx = 0.0;
    let mut cy = 0.0;
    for yy in 0..h {
        for xx in 0..w {
            cx += g[yy * w + xx] * (xx as f64 + 1.0);
            cy += g[yy * w + xx] * (yy as f64 + 1.0);
        }
    }
    let cx = ((cx / area).round() as usize).clamp(1, w);
    let cy = ((cy / area).round() as usize).clamp(1, h);
    let mut sr = 0.0;
    for (y0, y1, x0, x1) in [(0, cy, 0, cx), (0, cy, cx, w), (cy, h, 0, cx), (cy, h, cx, w)] {
        let mut sb = Vec::new();
        let mut gb = Vec::new();
        for yy in y0..y1 {
            for xx in x0..x1 {
                sb.push(s[yy * w + xx]);
                gb.push(g[yy * w + xx]);
            }
        }
        if gb.is_empty() {
            continue;
        }
        sr += gb.len() as f64 / (h * w) as f64 * oracle_ssim(&sb, &gb);
    }
    (0.5 * so + 0.5 * sr).max(0.0)
}

pub fn oracle_e_measure(s: &[f64], g: &[f64]) -> f64 {
    let n = s.len() as f64;
    let gsum: f64 = g.iter().sum();
    let mut acc = 0.0;
    let mut count = 0;
    for k in 0..256 {
        let t = k as f64 / 255.0;
        let bin: Vec<f64> = s.iter().map(|&v| f64::from(v > t)).collect();
        let bsum: f64 = bin.iter().sum();
        if gsum == 0.0 {
            acc += (n - bsum) / n;
            count += 1;
            continue;
        }
        if gsum == n {
            acc += bsum / n;
            count += 1;
            continue;
        }
        if bsum == 0.0 || bsum == n {
            continue;
        }
        let (mg, mb) = (gsum / n, bsum / n);
        let mut phi = 0.0;
        for i in 0..s.len() {
            let a = g[i] - mg;
            let b = bin[i] - mb;
            let xi = 2.0 * a * b / (a * a + b * b + EPS);
            phi += (xi + 1.0) * (xi + 1.0) / 4.0;
        }
        acc += phi / n;
        count += 1;
    }
    if count == 0 {
        0.25
    } else {
        acc / count as f64
    }
}

pub fn oracle_weighted_f(s: &[f64], g: &[f64], h: usize, w: usize) -> f64 {
    let fg: f64 = g.iter().sum();
    if fg == 0.0 {
        return if s.iter().all(|&v| v == 0.0) { 1.0 } else { 0.0 };
    }
    let n = h * w;
    // distance transform and nearest-foreground index, smallest index on ties
    let mut dist = vec![f64::INFINITY; n];
    let mut near = vec![0usize; n];
    for i in 0..n {
        for j in 0..n {
            if g[j] > 0.5 {
                let dy = (i / w) as f64 - (j / w) as f64;
                let dx = (i % w) as f64 - (j % w) as f64;
                let d2 = dy * dy + dx * dx;
                if d2 < dist[i] {
                    dist[i] = d2;
                    near[i] = j;
                }
            }
        }
    }
    let e: Vec<f64> = (0..n).map(|i| (s[i] - g[i]).abs()).collect();
    let et: Vec<f64> = (0..n).map(|i| if g[i] > 0.5 { e[i] } else { e[near[i]] }).collect();
    // 7x7 Gaussian, sigma 5, renormalized over the in-bounds support
    let mut ea = vec![0.0; n];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for dy in -3..=3isize {
                for dx in -3..=3isize {
                    let (sy, sx) = (y + dy, x + dx);
                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                        continue;
                    }
                    let kv = (-((dy * dy + dx * dx) as f64) / 50.0).exp();
                    acc += kv * et[sy as usize * w + sx as usize];
                    wsum += kv;
                }
            }
            ea[(y as usize) * w + x as usize] = acc / wsum;
        }
    }
    let mut ew_fg = 0.0;
    let mut ew_bg = 0.0;
    for i in 0..n {
        let me = if g[i] > 0.5 && ea[i] < e[i] { ea[i] } else { e[i] };
        if g[i] > 0.5 {
            ew_fg += me;
        } else {
            let b = 2.0 - (0.5f64.ln() / 5.0 * dist[i].sqrt()).exp();
            ew_bg += me * b;
        }
    }
    let tpw = fg - ew_fg;
    let recall = 1.0 - ew_fg / fg;
    let precision = tpw / (tpw + ew_bg + EPS);
    (2.0 * recall * precision / (recall + precision + EPS)).clamp(0.0, 1.0)
}

/// The fixed set of 50 random 4x4 prediction maps shared by the oracle
/// sweeps.
pub fn predictions_4x4() -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    (0..50).map(|_| (0..16).map(|_| rng.gen_range(0.0..1.0)).collect()).collect()
}

// ---------- Canny reference ----------

fn at(img: &[f64], h: usize, w: usize, y: isize, x: isize) -> f64 {
    let y = y.clamp(0, h as isize - 1) as usize;
    let x = x.clamp(0, w as isize - 1) as usize;
    img[y * w + x]
}

/// Full reference pipeline: corner canonicalization, separable Gaussian blur
/// with replicate borders, 3x3 Sobel, 4-bin NMS, double threshold relative
/// to the max magnitude, and an 8-connected flood from strong pixels.
pub fn reference_canny(mask: &[f64], h: usize, w: usize) -> Vec<f64> {
    // corner canonicalization, as documented: a foreground corner means the
    // complement is processed instead (same edges either way)
    let flipped: Vec<f64>;
    let mask = if mask[0] > 0.5 {
        flipped = mask.iter().map(|&v| 1.0 - v).collect();
        &flipped[..]
    } else {
        mask
    };
    // blur
    let radius = (3.0 * CANNY_SIGMA).ceil() as isize;
    let mut kernel = Vec::new();
    for i in -radius..=radius {
        kernel.push((-(i * i) as f64 / (2.0 * CANNY_SIGMA * CANNY_SIGMA)).exp());
    }
    let ksum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= ksum;
    }
    let mut horiz = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            for (i, &k) in kernel.iter().enumerate() {
                horiz[y * w + x] += k * at(mask, h, w, y as isize, x as isize + i as isize - radius);
            }
        }
    }
    let mut blurred = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            for (i, &k) in kernel.iter().enumerate() {
                blurred[y * w + x] +=
                    k * at(&horiz, h, w, y as isize + i as isize - radius, x as isize);
            }
        }
    }
    // Sobel gradients
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dy: isize, dx: isize| at(&blurred, h, w, y + dy, x + dx);
            gx[y as usize * w + x as usize] = -p(-1, -1) + p(-1, 1) - 2.0 * p(0, -1)
                + 2.0 * p(0, 1)
                - p(1, -1)
                + p(1, 1);
            gy[y as usize * w + x as usize] = -p(-1, -1) - 2.0 * p(-1, 0) - p(-1, 1)
                + p(1, -1)
                + 2.0 * p(1, 0)
                + p(1, 1);
        }
    }
    let mag: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).collect();
    let max_mag = mag.iter().fold(0.0f64, |a, &b| a.max(b));
    if max_mag < 1e-9 {
        return vec![0.0; h * w];
    }
    // non-maximum suppression
    let mut nms = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            let mut a = gy[i].atan2(gx[i]).to_degrees();
            if a < 0.0 {
                a += 180.0;
            }
            let (dy, dx) = if !(22.5..157.5).contains(&a) {
                (0, 1)
            } else if a < 67.5 {
                (1, 1)
            } else if a < 112.5 {
                (1, 0)
            } else {
                (1, -1)
            };
            if mag[i] >= at(&mag, h, w, y + dy, x + dx) && mag[i] >= at(&mag, h, w, y - dy, x - dx)
            {
                nms[i] = mag[i];
            }
        }
    }
    // hysteresis
    let (lo, hi) = (CANNY_LOW * max_mag, CANNY_HIGH * max_mag);
    let mut out = vec![0.0; h * w];
    let mut frontier: Vec<usize> = (0..h * w).filter(|&i| nms[i] >= hi).collect();
    for &i in &frontier {
        out[i] = 1.0;
    }
    while let Some(i) = frontier.pop() {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if out[j] == 0.0 && nms[j] >= lo {
                    out[j] = 1.0;
                    frontier.push(j);
                }
            }
        }
    }
    out
}

/// Random union-of-ellipses binary mask with a clear margin.
pub fn random_blob_mask(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let k = rng.gen_range(1..=3);
    let mut mask = vec![0.0; n * n];
    for _ in 0..k {
        let cy = rng.gen_range(8.0..n as f64 - 8.0);
        let cx = rng.gen_range(8.0..n as f64 - 8.0);
        let ry = rng.gen_range(3.0..10.0);
        let rx = rng.gen_range(3.0..10.0);
        for y in 0..n {
            for x in 0..n {
                let dy = (y as f64 - cy) / ry;
                let dx = (x as f64 - cx) / rx;
                if dy * dy + dx * dx <= 1.0 {
                    mask[y * n + x] = 1.0;
                }
            }
        }
    }
    mask
}

// ---------- supervision-loss floor ----------

/// The best loss a head ending in "1x1 conv, bilinear upsample, sigmoid" can
/// reach given its input grid size: optimize a free logit map at that grid
/// directly against the target. The result upper-bounds the true optimum but
/// lower-bounds what any trained network sharing weights across samples can
/// achieve in practice, so it serves as the irreducible floor of a
/// supervision term.
pub fn head_floor(grid: usize, target: &Tensor<f64>, ppa: bool, steps: usize) -> f64 {
    let store = ParamStore::new();
    let k = ppa_window(target.shape()[1]);
    let factor = target.shape()[1] / grid;
    let n = grid * grid;
    let mut logits = Tensor::zeros(&[1, grid, grid]);
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let (b1, b2, eps, lr) = (0.9, 0.999, 1e-8, 0.05);
    let mut best = f64::INFINITY;
    for t in 1..=steps {
        let mut fwd = Forward::new(&store, false);
        let x = fwd.tape.leaf(logits.clone(), true);
        let up = fwd.tape.upsample_bilinear(x, factor).unwrap();
        let p = fwd.tape.sigmoid(up);
        let l = if ppa {
            ppa_loss(&mut fwd, p, target, k).unwrap()
        } else {
            bce_loss(&mut fwd, p, target).unwrap()
        };
        best = best.min(fwd.tape.value(l).item());
        let grads = fwd.tape.backward(l).unwrap();
        let gd = grads.get(x).unwrap().data().to_vec();
        let mut ld = logits.data().to_vec();
        for i in 0..n {
            m[i] = b1 * m[i] + (1.0 - b1) * gd[i];
            v[i] = b2 * v[i] + (1.0 - b2) * gd[i] * gd[i];
            let mh = m[i] / (1.0 - b1.powi(t as i32));
            let vh = v[i] / (1.0 - b2.powi(t as i32));
            ld[i] -= lr * mh / (vh.sqrt() + eps);
        }
        logits = Tensor::new(vec![1, grid, grid], ld).unwrap();
    }
    best
}

/// Mean per-sample floor of the full training objective at desk scale: one
/// term per supervision head, each at the head's own input grid.
pub fn supervision_floor(samples: &[Sample], steps: usize) -> f64 {
    let mut total = 0.0;
    for s in samples {
        let inv = s.gt.map(|v| 1.0 - v);
        let mut sum = head_floor(16, &s.gt, true, steps) // final object map
            + head_floor(16, &s.boundary, false, steps) // final boundary map
            + head_floor(2, &s.gt, true, steps) // foreground stream head
            + head_floor(2, &inv, true, steps); // background stream head
        for g in [16, 8, 4, 2] {
            sum += head_floor(g, &s.boundary, false, steps); // level heads
        }
        total += sum / samples.len() as f64;
    }
    total
}
