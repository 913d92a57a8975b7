//! Minimal raster plots: heatmaps, line charts and occlusion overlays.
//!
//! Tick labels use a built-in 3×5 pixel digit font, so no system fonts are
//! needed. Exact values always accompany a plot in a CSV next to it.

use image::{Rgb, RgbImage};

use chronocheck_core::types::ImageTensor;

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);

/// Series colours, cycled.
pub const PALETTE: [Rgb<u8>; 6] = [
    Rgb([31, 119, 180]),
    Rgb([214, 39, 40]),
    Rgb([44, 160, 44]),
    Rgb([255, 127, 14]),
    Rgb([148, 103, 189]),
    Rgb([127, 127, 127]),
];

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> Rgb<u8> {
    let c = |i: usize| (a[i] + (b[i] - a[i]) * t).round().clamp(0.0, 255.0) as u8;
    Rgb([c(0), c(1), c(2)])
}

fn ramp(stops: &[[f64; 3]], t: f64) -> Rgb<u8> {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let x = t * (stops.len() - 1) as f64;
    let i = (x.floor() as usize).min(stops.len() - 2);
    lerp(stops[i], stops[i + 1], x - i as f64)
}

/// Perceptually ordered dark-blue → green → yellow map of `t ∈ [0, 1]`.
pub fn sequential(t: f64) -> Rgb<u8> {
    const STOPS: [[f64; 3]; 5] = [
        [68.0, 1.0, 84.0],
        [59.0, 82.0, 139.0],
        [33.0, 145.0, 140.0],
        [94.0, 201.0, 98.0],
        [253.0, 231.0, 37.0],
    ];
    ramp(&STOPS, t)
}

/// Blue (−1) → white (0) → red (+1).
pub fn diverging(t: f64) -> Rgb<u8> {
    const STOPS: [[f64; 3]; 3] = [[33.0, 102.0, 172.0], [247.0, 247.0, 247.0], [178.0, 24.0, 43.0]];
    ramp(&STOPS, (t + 1.0) / 2.0)
}

const DIGITS: [[u8; 5]; 12] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
    [0b000, 0b000, 0b000, 0b000, 0b010],
    [0b000, 0b000, 0b111, 0b000, 0b000],
];

/// Draw digits, `.` and `-` with their top-left corner at `(x, y)`.
pub fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, color: Rgb<u8>) {
    for (k, ch) in text.chars().enumerate() {
        let glyph = match ch {
            '0'..='9' => DIGITS[ch as usize - '0' as usize],
            '.' => DIGITS[10],
            '-' => DIGITS[11],
            _ => continue,
        };
        for (r, bits) in glyph.iter().enumerate() {
            for c in 0..3 {
                if bits >> (2 - c) & 1 == 1 {
                    put(img, x + 4 * k as i64 + c, y + r as i64, color);
                }
            }
        }
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        put(img, x, y, color);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// A `rows × cols` grid of values in `[lo, hi]`, each cell `cell` pixels;
/// `None` cells are left white. Row 0 is drawn at the top.
pub fn heatmap(rows: usize, cols: usize, values: &[Option<f64>], lo: f64, hi: f64, cell: u32) -> RgbImage {
    assert_eq!(values.len(), rows * cols, "heatmap value count");
    let mut img = RgbImage::from_pixel(cols as u32 * cell, rows as u32 * cell, WHITE);
    let span = if hi > lo { hi - lo } else { 1.0 };
    for r in 0..rows {
        for c in 0..cols {
            if let Some(v) = values[r * cols + c] {
                let color = sequential((v - lo) / span);
                for y in 0..cell {
                    for x in 0..cell {
                        img.put_pixel(c as u32 * cell + x, r as u32 * cell + y, color);
                    }
                }
            }
        }
    }
    img
}

/// Outline one heatmap cell.
pub fn mark_cell(img: &mut RgbImage, row: usize, col: usize, cell: u32, color: Rgb<u8>) {
    let (x0, y0) = ((col as u32 * cell) as i64, (row as u32 * cell) as i64);
    let (x1, y1) = (x0 + cell as i64 - 1, y0 + cell as i64 - 1);
    line(img, (x0, y0), (x1, y0), color);
    line(img, (x1, y0), (x1, y1), color);
    line(img, (x1, y1), (x0, y1), color);
    line(img, (x0, y1), (x0, y0), color);
}

/// Axis-aligned chart area.
pub struct Chart {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub width: u32,
    pub height: u32,
}

const MARGIN_LEFT: i64 = 28;
const MARGIN: i64 = 10;
const MARGIN_BOTTOM: i64 = 20;

impl Chart {
    fn to_px(&self, x: f64, y: f64) -> (i64, i64) {
        let w = self.width as i64 - MARGIN_LEFT - MARGIN;
        let h = self.height as i64 - MARGIN - MARGIN_BOTTOM;
        let fx = (x - self.x_range.0) / (self.x_range.1 - self.x_range.0);
        let fy = (y - self.y_range.0) / (self.y_range.1 - self.y_range.0);
        (MARGIN_LEFT + (fx * w as f64).round() as i64, MARGIN + h - (fy * h as f64).round() as i64)
    }

    /// Frame, a 4×4 grid with tick labels, and one polyline per series.
    pub fn render(&self, series: &[&[(f64, f64)]]) -> RgbImage {
        let mut img = RgbImage::from_pixel(self.width, self.height, WHITE);
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let x = self.x_range.0 + f * (self.x_range.1 - self.x_range.0);
            let y = self.y_range.0 + f * (self.y_range.1 - self.y_range.0);
            let (gx, _) = self.to_px(x, self.y_range.0);
            let (_, gy) = self.to_px(self.x_range.0, y);
            let (_, top) = self.to_px(self.x_range.0, self.y_range.1);
            let (right, bottom) = self.to_px(self.x_range.1, self.y_range.0);
            line(&mut img, (gx, top), (gx, bottom), GRID);
            line(&mut img, (MARGIN_LEFT, gy), (right, gy), GRID);
            draw_text(&mut img, gx - 6, bottom + 5, &tick(x), BLACK);
            draw_text(&mut img, 2, gy - 2, &tick(y), BLACK);
        }
        let (l, t) = self.to_px(self.x_range.0, self.y_range.1);
        let (r, b) = self.to_px(self.x_range.1, self.y_range.0);
        line(&mut img, (l, t), (r, t), BLACK);
        line(&mut img, (r, t), (r, b), BLACK);
        line(&mut img, (r, b), (l, b), BLACK);
        line(&mut img, (l, b), (l, t), BLACK);
        for (i, pts) in series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            for w in pts.windows(2) {
                line(&mut img, self.to_px(w[0].0, w[0].1), self.to_px(w[1].0, w[1].1), color);
            }
            for &(x, y) in pts.iter() {
                let (px, py) = self.to_px(x, y);
                for d in -1..=1 {
                    put(&mut img, px + d, py, color);
                    put(&mut img, px, py + d, color);
                }
            }
        }
        img
    }
}

fn tick(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.2}")
    }
}

/// Ground image upscaled by `scale` with the occlusion values blended on
/// top: red where hiding a region raised `p_consistent`, blue where it fell.
/// `limit` is the magnitude mapped to full colour.
pub fn occlusion_overlay(img: &ImageTensor, values: &[f64], limit: f64, scale: u32) -> RgbImage {
    let (h, w) = (img.height(), img.width());
    assert_eq!(values.len(), h * w, "overlay value count");
    let limit = if limit > 0.0 { limit } else { 1.0 };
    let mut out = RgbImage::new(w as u32 * scale, h as u32 * scale);
    for y in 0..h {
        for x in 0..w {
            let base = &img.rgb8()[(y * w + x) * 3..(y * w + x) * 3 + 3];
            let tint = diverging(values[y * w + x] / limit);
            let gray = (base[0] as f64 + base[1] as f64 + base[2] as f64) / 3.0;
            let mix = |c: u8| (0.45 * gray + 0.55 * c as f64).round() as u8;
            let px = Rgb([mix(tint[0]), mix(tint[1]), mix(tint[2])]);
            for dy in 0..scale {
                for dx in 0..scale {
                    out.put_pixel(x as u32 * scale + dx, y as u32 * scale + dy, px);
                }
            }
        }
    }
    out
}
