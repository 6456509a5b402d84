//! Procedural stroke alphabet and a small anti-aliased rasterizer.

use rand::Rng;

use crate::ndgrad::Tensor;

/// Segment endpoints in the unit glyph box, x to the right and y down.
type Seg = ((f64, f64), (f64, f64));

const A: Seg = ((0.22, 0.12), (0.78, 0.12));
const B: Seg = ((0.78, 0.12), (0.78, 0.5));
const C: Seg = ((0.78, 0.5), (0.78, 0.88));
const D: Seg = ((0.22, 0.88), (0.78, 0.88));
const E: Seg = ((0.22, 0.5), (0.22, 0.88));
const F: Seg = ((0.22, 0.12), (0.22, 0.5));
const G: Seg = ((0.22, 0.5), (0.78, 0.5));

/// Seven-segment patterns, one per class; no two are equal.
const PATTERNS: [&[Seg]; 10] = [
    &[A, B, C, D, E, F],
    &[B, C],
    &[A, B, G, E, D],
    &[A, B, G, C, D],
    &[F, G, B, C],
    &[A, F, G, C, D],
    &[A, F, G, E, D, C],
    &[A, B, C],
    &[A, B, C, D, E, F, G],
    &[A, B, C, D, F, G],
];

pub const ALPHABET_SIZE: usize = PATTERNS.len();

/// Grayscale canvas with max-compositing of strokes.
pub struct Canvas {
    pub size: usize,
    pub pixels: Vec<f64>,
}

impl Canvas {
    pub fn new(size: usize) -> Self {
        Canvas {
            size,
            pixels: vec![0.0; size * size],
        }
    }

    /// Draws a capsule of the given thickness between two pixel-space points.
    pub fn stroke(&mut self, p0: (f64, f64), p1: (f64, f64), thickness: f64) {
        let r = thickness / 2.0;
        let pad = r + 1.0;
        let x_lo = (p0.0.min(p1.0) - pad).floor().max(0.0) as usize;
        let y_lo = (p0.1.min(p1.1) - pad).floor().max(0.0) as usize;
        let x_hi = ((p0.0.max(p1.0) + pad).ceil() as usize).min(self.size - 1);
        let y_hi = ((p0.1.max(p1.1) + pad).ceil() as usize).min(self.size - 1);
        let (dx, dy) = (p1.0 - p0.0, p1.1 - p0.1);
        let len2 = dx * dx + dy * dy;
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let t = if len2 > 0.0 {
                    (((px - p0.0) * dx + (py - p0.1) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (qx, qy) = (p0.0 + t * dx - px, p0.1 + t * dy - py);
                let d = (qx * qx + qy * qy).sqrt();
                let v = (r + 0.5 - d).clamp(0.0, 1.0);
                let cell = &mut self.pixels[y * self.size + x];
                *cell = cell.max(v);
            }
        }
    }

    /// Pastes a square bitmap with max-compositing, resampled bilinearly.
    pub fn paste(&mut self, src: &[f64], src_size: usize, x0: f64, y0: f64, size: f64) {
        let scale = src_size as f64 / size;
        let x_lo = x0.floor().max(0.0) as usize;
        let y_lo = y0.floor().max(0.0) as usize;
        let x_hi = ((x0 + size).ceil() as usize).min(self.size);
        let y_hi = ((y0 + size).ceil() as usize).min(self.size);
        let fetch = |x: isize, y: isize| {
            if x < 0 || y < 0 || x >= src_size as isize || y >= src_size as isize {
                0.0
            } else {
                src[y as usize * src_size + x as usize]
            }
        };
        for y in y_lo..y_hi {
            for x in x_lo..x_hi {
                let sx = (x as f64 + 0.5 - x0) * scale - 0.5;
                let sy = (y as f64 + 0.5 - y0) * scale - 0.5;
                let (fx, fy) = (sx.floor(), sy.floor());
                let (tx, ty) = (sx - fx, sy - fy);
                let (ix, iy) = (fx as isize, fy as isize);
                let v = fetch(ix, iy) * (1.0 - tx) * (1.0 - ty)
                    + fetch(ix + 1, iy) * tx * (1.0 - ty)
                    + fetch(ix, iy + 1) * (1.0 - tx) * ty
                    + fetch(ix + 1, iy + 1) * tx * ty;
                let cell = &mut self.pixels[y * self.size + x];
                *cell = cell.max(v.clamp(0.0, 1.0));
            }
        }
    }

    pub fn into_tensor(self) -> Tensor {
        Tensor::new(vec![1, self.size, self.size], self.pixels).expect("square canvas")
    }
}

/// Renders class `label` into the square box at `(x0, y0)` with side `size`.
pub fn draw_glyph(canvas: &mut Canvas, label: usize, x0: f64, y0: f64, size: f64, rng: &mut impl Rng) {
    let thickness = (0.11 * size).max(1.6) * rng.random_range(0.85..1.15);
    let mut jitter = |v: f64| v + rng.random_range(-0.035..0.035);
    for &((ax, ay), (bx, by)) in PATTERNS[label % ALPHABET_SIZE] {
        let p0 = (x0 + jitter(ax) * size, y0 + jitter(ay) * size);
        let p1 = (x0 + jitter(bx) * size, y0 + jitter(by) * size);
        canvas.stroke(p0, p1, thickness);
    }
}

/// A short stroke or open arc centred near `(cx, cy)`, smaller than any glyph segment.
pub fn draw_clutter(canvas: &mut Canvas, cx: f64, cy: f64, rng: &mut impl Rng) {
    let thickness = rng.random_range(1.2..2.0);
    if rng.random_bool(0.5) {
        let len = rng.random_range(3.0..6.0);
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let (dx, dy) = (0.5 * len * theta.cos(), 0.5 * len * theta.sin());
        canvas.stroke((cx - dx, cy - dy), (cx + dx, cy + dy), thickness);
    } else {
        let radius = rng.random_range(2.0..3.5);
        let start: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let span = rng.random_range(0.5..1.0) * std::f64::consts::PI;
        let steps = 6;
        let point = |a: f64| (cx + radius * a.cos(), cy + radius * a.sin());
        for s in 0..steps {
            let a0 = start + span * s as f64 / steps as f64;
            let a1 = start + span * (s + 1) as f64 / steps as f64;
            canvas.stroke(point(a0), point(a1), thickness);
        }
    }
}
