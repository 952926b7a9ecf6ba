//! Minimal static plot rendering and 2D projection.
//!
//! Plots are axis-framed PNG images without text (the numbers live in the
//! CSVs written next to each image).

use std::path::Path;

use image::{Rgb, RgbImage};
use magpie::mat::Mat;

use crate::{CliError, CliResult};

const SIZE: u32 = 800;
const MARGIN: u32 = 60;

const PALETTE: [[u8; 3]; 10] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
];

fn blank() -> RgbImage {
    let mut img = RgbImage::from_pixel(SIZE, SIZE, Rgb([255, 255, 255]));
    // Axis frame.
    for x in MARGIN..SIZE - MARGIN {
        img.put_pixel(x, SIZE - MARGIN, Rgb([120, 120, 120]));
        img.put_pixel(x, MARGIN, Rgb([220, 220, 220]));
    }
    for y in MARGIN..SIZE - MARGIN {
        img.put_pixel(MARGIN, y, Rgb([120, 120, 120]));
        img.put_pixel(SIZE - MARGIN, y, Rgb([220, 220, 220]));
    }
    img
}

struct Range {
    lo: f64,
    hi: f64,
}

impl Range {
    fn of(values: impl Iterator<Item = f64>) -> Range {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() || !hi.is_finite() {
            return Range { lo: 0.0, hi: 1.0 };
        }
        if hi - lo < 1e-12 {
            // Degenerate span: widen symmetrically.
            return Range {
                lo: lo - 0.5,
                hi: hi + 0.5,
            };
        }
        let pad = (hi - lo) * 0.05;
        Range {
            lo: lo - pad,
            hi: hi + pad,
        }
    }

    fn x_px(&self, v: f64) -> i64 {
        let t = (v - self.lo) / (self.hi - self.lo);
        MARGIN as i64 + (t * (SIZE - 2 * MARGIN) as f64).round() as i64
    }

    fn y_px(&self, v: f64) -> i64 {
        let t = (v - self.lo) / (self.hi - self.lo);
        (SIZE - MARGIN) as i64 - (t * (SIZE - 2 * MARGIN) as f64).round() as i64
    }
}

fn put_disc(img: &mut RgbImage, cx: i64, cy: i64, r: i64, color: Rgb<u8>) {
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy > r * r {
                continue;
            }
            let x = cx + dx;
            let y = cy + dy;
            if x >= 0 && y >= 0 && (x as u32) < SIZE && (y as u32) < SIZE {
                img.put_pixel(x as u32, y as u32, color);
            }
        }
    }
}

fn draw_line(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = x0 + ((x1 - x0) as f64 * t).round() as i64;
        let y = y0 + ((y1 - y0) as f64 * t).round() as i64;
        if x >= 0 && y >= 0 && (x as u32) < SIZE && (y as u32) < SIZE {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// Class-colored scatter of 2D points.
pub fn scatter_png(points: &[(f64, f64)], classes: &[usize], path: &Path) -> CliResult<()> {
    let mut img = blank();
    let xr = Range::of(points.iter().map(|p| p.0));
    let yr = Range::of(points.iter().map(|p| p.1));
    for (&(x, y), &c) in points.iter().zip(classes) {
        let color = PALETTE[c % PALETTE.len()];
        put_disc(&mut img, xr.x_px(x), yr.y_px(y), 3, Rgb(color));
    }
    img.save(path).map_err(CliError::runtime)
}

/// Polyline with point markers and vertical error bars.
pub fn line_png(xs: &[f64], ys: &[f64], errs: &[f64], path: &Path) -> CliResult<()> {
    let mut img = blank();
    let xr = Range::of(xs.iter().copied());
    let yr = Range::of(
        ys.iter()
            .zip(errs)
            .flat_map(|(&y, &e)| [y - e, y + e])
            .chain(ys.iter().copied()),
    );
    let px: Vec<(i64, i64)> = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| (xr.x_px(x), yr.y_px(y)))
        .collect();
    for pair in px.windows(2) {
        draw_line(
            &mut img,
            pair[0].0,
            pair[0].1,
            pair[1].0,
            pair[1].1,
            Rgb(PALETTE[0]),
        );
    }
    for ((&(cx, cy), &y), &e) in px.iter().zip(ys).zip(errs) {
        draw_line(&mut img, cx, yr.y_px(y - e), cx, yr.y_px(y + e), Rgb([150, 150, 150]));
        put_disc(&mut img, cx, cy, 4, Rgb(PALETTE[3]));
    }
    img.save(path).map_err(CliError::runtime)
}

/// Projects row vectors to 2D. With exactly two input dimensions this is
/// the identity; otherwise the top-two principal components of the centered
/// data (Jacobi eigendecomposition of the covariance).
pub fn project_2d(h: &Mat<f64>) -> Vec<(f64, f64)> {
    let n = h.rows();
    let d = h.cols();
    if d == 2 {
        return (0..n).map(|i| (h[(i, 0)], h[(i, 1)])).collect();
    }
    if d == 1 {
        return (0..n).map(|i| (h[(i, 0)], 0.0)).collect();
    }

    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, &x) in mean.iter_mut().zip(h.row(i)) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    // Covariance (upper storage in a dense matrix).
    let mut cov = vec![0.0; d * d];
    for i in 0..n {
        for a in 0..d {
            let xa = h[(i, a)] - mean[a];
            for b in 0..d {
                cov[a * d + b] += xa * (h[(i, b)] - mean[b]);
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    for c in &mut cov {
        *c /= denom;
    }

    let (eigenvalues, eigenvectors) = jacobi_eigen(&mut cov, d);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigenvalues[b].partial_cmp(&eigenvalues[a]).unwrap());
    let (first, second) = (order[0], order[1]);

    (0..n)
        .map(|i| {
            let mut px = 0.0;
            let mut py = 0.0;
            for a in 0..d {
                let x = h[(i, a)] - mean[a];
                px += x * eigenvectors[a * d + first];
                py += x * eigenvectors[a * d + second];
            }
            (px, py)
        })
        .collect()
}

/// Cyclic Jacobi sweeps on a symmetric matrix; returns (eigenvalues,
/// column-major eigenvectors).
fn jacobi_eigen(a: &mut [f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..d {
            for q in (p + 1)..d {
                off += a[p * d + q] * a[p * d + q];
            }
        }
        if off < 1e-22 {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigenvalues: Vec<f64> = (0..d).map(|i| a[i * d + i]).collect();
    (eigenvalues, v)
}
