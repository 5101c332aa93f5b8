//! Segmentation evaluation: MAE, S-measure, mean E-measure, weighted
//! F-measure, and PR curves, plus dataset aggregation and report emission.
//! All conventions and constants are frozen in METRICS.md at the repo root.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const S_ALPHA: f64 = 0.5;
pub const N_THRESHOLDS: usize = 256;
const EPS: f64 = 1e-12;

fn as_map<'a>(t: &'a Tensor<f64>, name: &str) -> Result<(usize, usize, &'a [f64])> {
    match t.shape() {
        [h, w] => Ok((*h, *w, t.data())),
        [1, h, w] => Ok((*h, *w, t.data())),
        s => Err(Error::shape(format!("{name} wants [H x W] or [1 x H x W], got {s:?}"))),
    }
}

fn check_pair<'a>(
    s: &'a Tensor<f64>,
    g: &'a Tensor<f64>,
) -> Result<(usize, usize, &'a [f64], &'a [f64])> {
    let (h, w, sd) = as_map(s, "prediction")?;
    let (gh, gw, gd) = as_map(g, "ground truth")?;
    if (h, w) != (gh, gw) {
        return Err(Error::shape(format!("prediction {h}x{w} vs ground truth {gh}x{gw}")));
    }
    Ok((h, w, sd, gd))
}

pub fn mae(s: &Tensor<f64>, g: &Tensor<f64>) -> Result<f64> {
    let (_, _, sd, gd) = check_pair(s, g)?;
    let n = sd.len() as f64;
    Ok(sd.iter().zip(gd).map(|(a, b)| (a - b).abs()).sum::<f64>() / n)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

// ---------- S-measure ----------

fn object_score(vals: &[f64]) -> f64 {
    if vals.is_empty() {
        return 0.0;
    }
    let x = mean(vals);
    let sigma = if vals.len() > 1 {
        (vals.iter().map(|v| (v - x) * (v - x)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    2.0 * x / (x * x + 1.0 + sigma + EPS)
}

fn ssim_block(s: &[f64], g: &[f64]) -> f64 {
    let n = s.len();
    if n == 0 {
        return 0.0;
    }
    let x = mean(s);
    let y = mean(g);
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxy = 0.0;
    for i in 0..n {
        sx += (s[i] - x) * (s[i] - x);
        sy += (g[i] - y) * (g[i] - y);
        sxy += (s[i] - x) * (g[i] - y);
    }
    sx /= denom;
    sy /= denom;
    sxy /= denom;
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn block(data: &[f64], w: usize, y0: usize, y1: usize, x0: usize, x1: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity((y1 - y0) * (x1 - x0));
    for y in y0..y1 {
        out.extend_from_slice(&data[y * w + x0..y * w + x1]);
    }
    out
}

/// Structure measure: alpha-blend of object-aware and region-aware
/// similarity, alpha = 0.5. All-zero GT scores 1 - mean(S); all-one GT
/// scores mean(S).
pub fn s_measure(s: &Tensor<f64>, g: &Tensor<f64>) -> Result<f64> {
    let (h, w, sd, gd) = check_pair(s, g)?;
    let y = mean(gd);
    if y == 0.0 {
        return Ok(1.0 - mean(sd));
    }
    if y == 1.0 {
        return Ok(mean(sd));
    }

    // object-aware: foreground on S, background on 1 - S
    let fg: Vec<f64> = sd.iter().zip(gd).filter(|(_, &g)| g > 0.5).map(|(&v, _)| v).collect();
    let bg: Vec<f64> =
        sd.iter().zip(gd).filter(|(_, &g)| g <= 0.5).map(|(&v, _)| 1.0 - v).collect();
    let s_object = y * object_score(&fg) + (1.0 - y) * object_score(&bg);

    // region-aware: split at the GT centroid (1-based, rounded)
    let area: f64 = gd.iter().sum();
    let mut cx = 0.0;
    let mut cy = 0.0;
    for yy in 0..h {
        for xx in 0..w {
            let v = gd[yy * w + xx];
            cx += v * (xx + 1) as f64;
            cy += v * (yy + 1) as f64;
        }
    }
    let cx = (cx / area).round() as usize;
    let cy = (cy / area).round() as usize;
    let (cx, cy) = (cx.clamp(1, w), cy.clamp(1, h));
    let total = (h * w) as f64;
    let quads = [
        (0, cy, 0, cx),
        (0, cy, cx, w),
        (cy, h, 0, cx),
        (cy, h, cx, w),
    ];
    let mut s_region = 0.0;
    for &(y0, y1, x0, x1) in &quads {
        let gb = block(gd, w, y0, y1, x0, x1);
        if gb.is_empty() {
            continue;
        }
        let sb = block(sd, w, y0, y1, x0, x1);
        let weight = gb.len() as f64 / total;
        s_region += weight * ssim_block(&sb, &gb);
    }

    Ok((S_ALPHA * s_object + (1.0 - S_ALPHA) * s_region).max(0.0))
}

// ---------- E-measure ----------

fn enhanced_alignment(bin: &[f64], gd: &[f64]) -> f64 {
    let n = bin.len();
    let mg = mean(gd);
    let mb = mean(bin);
    let mut acc = 0.0;
    for i in 0..n {
        let pg = gd[i] - mg;
        let pb = bin[i] - mb;
        let align = 2.0 * pg * pb / (pg * pg + pb * pb + EPS);
        acc += (align + 1.0) * (align + 1.0) / 4.0;
    }
    acc / n as f64
}

/// Enhanced-alignment measure averaged over the 256 thresholds t = k/255,
/// binarizing S > t. Degenerate GT: all-zero uses mean(1 - bin), all-one
/// uses mean(bin). With non-degenerate GT, thresholds whose binarized map is
/// constant carry no alignment information and are left out of the mean; if
/// every threshold is constant the measure is 1/4 (the alignment formula's
/// value at zero correlation).
pub fn e_measure_mean(s: &Tensor<f64>, g: &Tensor<f64>) -> Result<f64> {
    let (_, _, sd, gd) = check_pair(s, g)?;
    let n = sd.len();
    let gsum: f64 = gd.iter().sum();
    let mut acc = 0.0;
    let mut count = 0usize;
    for t in 0..N_THRESHOLDS {
        let thr = t as f64 / 255.0;
        let bin: Vec<f64> = sd.iter().map(|&v| if v > thr { 1.0 } else { 0.0 }).collect();
        if gsum == 0.0 {
            acc += bin.iter().map(|b| 1.0 - b).sum::<f64>() / n as f64;
            count += 1;
            continue;
        }
        if gsum == n as f64 {
            acc += mean(&bin);
            count += 1;
            continue;
        }
        let bsum: f64 = bin.iter().sum();
        if bsum == 0.0 || bsum == n as f64 {
            continue;
        }
        acc += enhanced_alignment(&bin, gd);
        count += 1;
    }
    if count == 0 {
        return Ok(0.25);
    }
    Ok(acc / count as f64)
}

// ---------- weighted F-measure ----------

/// Exact Euclidean distance transform by scan: distance to the nearest
/// foreground pixel and its linear index (smallest index on ties).
fn distance_transform(gd: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let fg: Vec<usize> = (0..h * w).filter(|&i| gd[i] > 0.5).collect();
    let mut dist = vec![f64::INFINITY; h * w];
    let mut idx = vec![0usize; h * w];
    for i in 0..h * w {
        let (y, x) = (i / w, i % w);
        for &j in &fg {
            let (fy, fx) = (j / w, j % w);
            let d2 = (y as f64 - fy as f64).powi(2) + (x as f64 - fx as f64).powi(2);
            if d2 < dist[i] {
                dist[i] = d2;
                idx[i] = j;
            }
        }
    }
    for d in &mut dist {
        *d = d.sqrt();
    }
    (dist, idx)
}

fn gaussian_filter_7x5(src: &[f64], h: usize, w: usize) -> Vec<f64> {
    // 7x7 kernel, sigma 5, renormalized over the in-bounds support at the
    // border so constants are preserved (keeps recall exactly 0 for an
    // all-zero prediction)
    let mut k = [[0.0; 7]; 7];
    for (dy, row) in k.iter_mut().enumerate() {
        for (dx, v) in row.iter_mut().enumerate() {
            let (y, x) = (dy as f64 - 3.0, dx as f64 - 3.0);
            *v = (-(y * y + x * x) / (2.0 * 25.0)).exp();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for dy in 0..7usize {
                for dx in 0..7usize {
                    let sy = y as isize + dy as isize - 3;
                    let sx = x as isize + dx as isize - 3;
                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                        continue;
                    }
                    acc += k[dy][dx] * src[sy as usize * w + sx as usize];
                    wsum += k[dy][dx];
                }
            }
            out[y * w + x] = acc / wsum;
        }
    }
    out
}

/// Weighted F-measure with beta^2 = 1: error dependency via Gaussian
/// propagation of foreground errors, pixel importance decaying with the
/// distance transform in the background. Empty GT scores 1 when S is all
/// zero, else 0.
pub fn weighted_f(s: &Tensor<f64>, g: &Tensor<f64>) -> Result<f64> {
    let (h, w, sd, gd) = check_pair(s, g)?;
    let fg_count: f64 = gd.iter().sum();
    if fg_count == 0.0 {
        return Ok(if sd.iter().all(|&v| v == 0.0) { 1.0 } else { 0.0 });
    }
    let n = h * w;
    let e: Vec<f64> = sd.iter().zip(gd).map(|(a, b)| (a - b).abs()).collect();
    let (dist, idx) = distance_transform(gd, h, w);
    let et: Vec<f64> =
        (0..n).map(|i| if gd[i] > 0.5 { e[i] } else { e[idx[i]] }).collect();
    let ea = gaussian_filter_7x5(&et, h, w);
    let min_e_ea: Vec<f64> = (0..n)
        .map(|i| if gd[i] > 0.5 && ea[i] < e[i] { ea[i] } else { e[i] })
        .collect();
    let decay = (0.5f64).ln() / 5.0;
    let b: Vec<f64> =
        (0..n).map(|i| if gd[i] > 0.5 { 1.0 } else { 2.0 - (decay * dist[i]).exp() }).collect();
    let ew: Vec<f64> = (0..n).map(|i| min_e_ea[i] * b[i]).collect();

    let ew_fg: f64 = (0..n).filter(|&i| gd[i] > 0.5).map(|i| ew[i]).sum();
    let ew_bg: f64 = (0..n).filter(|&i| gd[i] <= 0.5).map(|i| ew[i]).sum();
    let tpw = fg_count - ew_fg;
    let fpw = ew_bg;
    let recall = 1.0 - ew_fg / fg_count;
    let precision = tpw / (tpw + fpw + EPS);
    Ok((2.0 * recall * precision / (recall + precision + EPS)).clamp(0.0, 1.0))
}

// ---------- PR curve ----------

/// Per-threshold (precision, recall) for thresholds k/255, k = 0..=255,
/// binarizing at S > t. Precision is 1 when nothing is predicted positive;
/// recall is 1 when the GT has no positives.
pub fn pr_curve(s: &Tensor<f64>, g: &Tensor<f64>) -> Result<Vec<(f64, f64)>> {
    let (_, _, sd, gd) = check_pair(s, g)?;
    let mut out = Vec::with_capacity(N_THRESHOLDS);
    for t in 0..N_THRESHOLDS {
        let thr = t as f64 / 255.0;
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fnn = 0.0;
        for (a, b) in sd.iter().zip(gd) {
            let p = *a > thr;
            let pos = *b > 0.5;
            match (p, pos) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fnn += 1.0,
                _ => {}
            }
        }
        let precision = if tp + fp == 0.0 { 1.0 } else { tp / (tp + fp) };
        let recall = if tp + fnn == 0.0 { 1.0 } else { tp / (tp + fnn) };
        out.push((precision, recall));
    }
    Ok(out)
}

// ---------- aggregation & emission ----------

#[derive(Debug, Clone)]
pub struct ImageMetrics {
    pub id: String,
    pub s_alpha: f64,
    pub e_phi: f64,
    pub f_w: f64,
    pub mae: f64,
}

#[derive(Debug, Clone)]
pub struct MetricReport {
    pub per_image: Vec<ImageMetrics>,
    pub mean: ImageMetrics,
    /// (threshold, dataset-mean precision, dataset-mean recall)
    pub pr: Vec<(f64, f64, f64)>,
}

pub fn evaluate_image(id: &str, s: &Tensor<f64>, g: &Tensor<f64>) -> Result<ImageMetrics> {
    Ok(ImageMetrics {
        id: id.to_string(),
        s_alpha: s_measure(s, g)?,
        e_phi: e_measure_mean(s, g)?,
        f_w: weighted_f(s, g)?,
        mae: mae(s, g)?,
    })
}

/// Deterministic fold over (id, prediction, gt) triples in the given order.
pub fn aggregate(items: &[(String, Tensor<f64>, Tensor<f64>)]) -> Result<MetricReport> {
    if items.is_empty() {
        return Err(Error::data("no images to evaluate"));
    }
    let mut per_image = Vec::with_capacity(items.len());
    let mut pr_acc = vec![(0.0, 0.0); N_THRESHOLDS];
    for (id, s, g) in items {
        per_image.push(evaluate_image(id, s, g)?);
        for (acc, (p, r)) in pr_acc.iter_mut().zip(pr_curve(s, g)?) {
            acc.0 += p;
            acc.1 += r;
        }
    }
    let n = items.len() as f64;
    let mean = ImageMetrics {
        id: "MEAN".into(),
        s_alpha: per_image.iter().map(|m| m.s_alpha).sum::<f64>() / n,
        e_phi: per_image.iter().map(|m| m.e_phi).sum::<f64>() / n,
        f_w: per_image.iter().map(|m| m.f_w).sum::<f64>() / n,
        mae: per_image.iter().map(|m| m.mae).sum::<f64>() / n,
    };
    let pr = pr_acc
        .iter()
        .enumerate()
        .map(|(t, &(p, r))| (t as f64 / 255.0, p / n, r / n))
        .collect();
    Ok(MetricReport { per_image, mean, pr })
}

pub fn metrics_csv(report: &MetricReport) -> String {
    let mut out = String::from("id,s_alpha,e_phi,f_w_beta,mae\n");
    for m in report.per_image.iter().chain(std::iter::once(&report.mean)) {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6}\n",
            m.id, m.s_alpha, m.e_phi, m.f_w, m.mae
        ));
    }
    out
}

pub fn pr_csv(report: &MetricReport) -> String {
    let mut out = String::from("threshold,precision,recall\n");
    for &(t, p, r) in &report.pr {
        out.push_str(&format!("{:.6},{:.6},{:.6}\n", t, p, r));
    }
    out
}

pub fn pr_svg(report: &MetricReport) -> String {
    let size = 400.0;
    let pts: Vec<String> = report
        .pr
        .iter()
        .map(|&(_, p, r)| format!("{:.1},{:.1}", r * size, size - p * size))
        .collect();
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{s}\" height=\"{s}\" viewBox=\"0 0 {s} {s}\">\
         <rect width=\"{s}\" height=\"{s}\" fill=\"white\" stroke=\"black\"/>\
         <polyline fill=\"none\" stroke=\"crimson\" stroke-width=\"2\" points=\"{}\"/>\
         </svg>\n",
        pts.join(" "),
        s = size
    )
}

pub fn write_report(report: &MetricReport, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("metrics.csv"), metrics_csv(report))?;
    std::fs::write(out_dir.join("pr.csv"), pr_csv(report))?;
    std::fs::write(out_dir.join("pr.svg"), pr_svg(report))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_mask(n: usize) -> Tensor<f64> {
        Tensor::from_fn(&[1, n, n], |i| if i % n < n / 2 { 1.0 } else { 0.0 })
    }

    #[test]
    fn mae_basics() {
        let g = half_mask(8);
        assert_eq!(mae(&g, &g).unwrap(), 0.0);
        let inv = g.map(|v| 1.0 - v);
        assert_eq!(mae(&inv, &g).unwrap(), 1.0);
        let q = Tensor::full(&[1, 8, 8], 0.25);
        let z = Tensor::zeros(&[1, 8, 8]);
        assert!((mae(&q, &z).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_identities() {
        let g = half_mask(8);
        assert!((s_measure(&g, &g).unwrap() - 1.0).abs() < 1e-6);
        assert!((e_measure_mean(&g, &g).unwrap() - 1.0).abs() < 1e-6);
        assert!((weighted_f(&g, &g).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn degenerate_gt_conventions() {
        let z = Tensor::<f64>::zeros(&[1, 8, 8]);
        assert!((s_measure(&z, &z).unwrap() - 1.0).abs() < 1e-12);
        let half = Tensor::<f64>::full(&[1, 8, 8], 0.3);
        assert!((s_measure(&half, &z).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(weighted_f(&z, &z).unwrap(), 1.0);
        assert_eq!(weighted_f(&half, &z).unwrap(), 0.0);
    }

    #[test]
    fn anti_aligned_e_measure_is_zero() {
        // S = 1 - G binary: every non-degenerate binarization is the exact
        // complement of G, so each threshold's alignment score is 0
        let g = half_mask(8);
        let s = g.map(|v| 1.0 - v);
        let bin: Vec<f64> = s.data().to_vec();
        assert!(enhanced_alignment(&bin, g.data()).abs() < 1e-9);
        assert!(e_measure_mean(&s, &g).unwrap().abs() < 1e-9);
    }

    #[test]
    fn weighted_f_zero_prediction() {
        // recall is exactly 0 when nothing is predicted
        let g = half_mask(8);
        let z = Tensor::<f64>::zeros(&[1, 8, 8]);
        assert!(weighted_f(&z, &g).unwrap().abs() < 1e-9);
    }

    #[test]
    fn pr_uniform_half() {
        // S uniform 0.5, G half ones: thresholds <= 0.5 give recall 1 and
        // precision 0.5; thresholds above give recall 0 (precision 1 by
        // convention, nothing predicted)
        let g = half_mask(8);
        let s = Tensor::full(&[1, 8, 8], 0.5);
        let curve = pr_curve(&s, &g).unwrap();
        for (t, &(p, r)) in curve.iter().enumerate() {
            let thr = t as f64 / 255.0;
            if thr <= 0.5 {
                assert_eq!(r, 1.0, "t={t}");
                assert_eq!(p, 0.5);
            } else {
                assert_eq!(r, 0.0);
                assert_eq!(p, 1.0);
            }
        }
    }

    #[test]
    fn pr_perfect_binary() {
        // perfect at every threshold below 1; at t = 1 nothing is predicted
        // (precision 1 by convention, recall 0)
        let g = half_mask(8);
        let curve = pr_curve(&g, &g).unwrap();
        for (t, &(p, r)) in curve.iter().enumerate() {
            assert_eq!(p, 1.0, "t={t}");
            assert_eq!(r, if t < 255 { 1.0 } else { 0.0 }, "t={t}");
        }
    }

    #[test]
    fn csv_headers() {
        let g = half_mask(8);
        let report = aggregate(&[("a".into(), g.clone(), g)]).unwrap();
        assert!(metrics_csv(&report).starts_with("id,s_alpha,e_phi,f_w_beta,mae\n"));
        assert!(pr_csv(&report).starts_with("threshold,precision,recall\n"));
        assert!(metrics_csv(&report).contains("MEAN"));
        assert!(pr_svg(&report).starts_with("<svg"));
    }

    #[test]
    fn metrics_in_unit_interval_fuzz() {
        let mut seed = 12345u64;
        let mut next = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 33) as f64) / (u32::MAX as f64 / 2.0) % 1.0
        };
        for _ in 0..20 {
            let s = Tensor::from_fn(&[1, 6, 6], |_| next().abs().min(1.0));
            let g = Tensor::from_fn(&[1, 6, 6], |_| if next() > 0.5 { 1.0 } else { 0.0 });
            for v in [
                s_measure(&s, &g).unwrap(),
                e_measure_mean(&s, &g).unwrap(),
                weighted_f(&s, &g).unwrap(),
                mae(&s, &g).unwrap(),
            ] {
                assert!((0.0..=1.0).contains(&v), "metric out of range: {v}");
            }
        }
    }
}
