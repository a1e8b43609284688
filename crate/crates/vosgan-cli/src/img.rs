//! Image emission: clip frames to PNG and a small line-plot renderer for
//! the label-efficiency figure. The CSV next to the plot is the contract;
//! the image is a convenience.

use std::path::Path;

use image::{GrayImage, Rgb, RgbImage};
use vosgan::clips::{MaskClip, VideoClip};

use crate::{CliError, CliResult};

fn to_u8(v: f32) -> u8 {
    (((v + 1.0) / 2.0).clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn video_frame_rgb(video: &VideoClip, t: usize) -> RgbImage {
    let (h, w) = (video.height, video.width);
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                to_u8(video.get(0, t, y, x)),
                to_u8(video.get(1.min(video.channels - 1), t, y, x)),
                to_u8(video.get(2.min(video.channels - 1), t, y, x)),
            ];
            img.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    img
}

pub fn mask_frame_gray(mask: &MaskClip, t: usize) -> GrayImage {
    let (h, w) = (mask.height, mask.width);
    let mut img = GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            img.put_pixel(x as u32, y as u32, image::Luma([mask.get(t, y, x) * 255]));
        }
    }
    img
}

pub fn save_png(img: &RgbImage, path: &Path) -> CliResult<()> {
    img.save(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn save_gray_png(img: &GrayImage, path: &Path) -> CliResult<()> {
    img.save(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// 5x7 digit glyphs for axis ticks; one bit per pixel, row-major.
const GLYPHS: [(char, [u8; 7]); 12] = [
    ('0', [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110]),
    ('1', [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110]),
    ('2', [0b01110, 0b10001, 0b00001, 0b00110, 0b01000, 0b10000, 0b11111]),
    ('3', [0b01110, 0b10001, 0b00001, 0b00110, 0b00001, 0b10001, 0b01110]),
    ('4', [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010]),
    ('5', [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110]),
    ('6', [0b01110, 0b10000, 0b11110, 0b10001, 0b10001, 0b10001, 0b01110]),
    ('7', [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000]),
    ('8', [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110]),
    ('9', [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00001, 0b01110]),
    ('.', [0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b00110, 0b00110]),
    ('-', [0b00000, 0b00000, 0b00000, 0b01110, 0b00000, 0b00000, 0b00000]),
];

fn draw_text(img: &mut RgbImage, x0: i32, y0: i32, text: &str, color: Rgb<u8>) {
    let mut x = x0;
    for ch in text.chars() {
        if let Some((_, rows)) = GLYPHS.iter().find(|(g, _)| *g == ch) {
            for (dy, row) in rows.iter().enumerate() {
                for dx in 0..5 {
                    if row & (1 << (4 - dx)) != 0 {
                        let (px, py) = (x + dx, y0 + dy as i32);
                        if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                            img.put_pixel(px as u32, py as u32, color);
                        }
                    }
                }
            }
        }
        x += 6;
    }
}

fn draw_line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: Rgb<u8>) {
    let steps = (a.0 - b.0).abs().max((a.1 - b.1).abs()).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = a.0 + (b.0 - a.0) * t;
        let y = a.1 + (b.1 - a.1) * t;
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

const SERIES_COLORS: [Rgb<u8>; 5] = [
    Rgb([202, 61, 48]),
    Rgb([45, 96, 179]),
    Rgb([34, 136, 61]),
    Rgb([176, 122, 27]),
    Rgb([112, 61, 160]),
];

/// Renders `series` (each a name plus ascending (x, y) points) into a plot
/// with framed axes and numeric ticks. Axis ranges cover all points.
pub fn line_plot(series: &[(String, Vec<(f64, f64)>)], width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let black = Rgb([0, 0, 0]);
    let (ml, mr, mt, mb) = (48.0, 12.0, 12.0, 30.0);
    let (x0, y0) = (ml, height as f64 - mb);
    let (x1, y1) = (width as f64 - mr, mt);

    let points: Vec<(f64, f64)> = series.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let (mut lo_x, mut hi_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut lo_y, mut hi_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &points {
        lo_x = lo_x.min(x);
        hi_x = hi_x.max(x);
        lo_y = lo_y.min(y);
        hi_y = hi_y.max(y);
    }
    if !lo_x.is_finite() {
        (lo_x, hi_x, lo_y, hi_y) = (0.0, 1.0, 0.0, 1.0);
    }
    if hi_x - lo_x < 1e-12 {
        hi_x = lo_x + 1.0;
    }
    if hi_y - lo_y < 1e-12 {
        hi_y = lo_y + 1.0;
    }
    let sx = |x: f64| x0 + (x - lo_x) / (hi_x - lo_x) * (x1 - x0);
    let sy = |y: f64| y0 + (y - lo_y) / (hi_y - lo_y) * (y1 - y0);

    draw_line(&mut img, (x0, y0), (x1, y0), black);
    draw_line(&mut img, (x0, y0), (x0, y1), black);
    for k in 0..=4 {
        let fx = lo_x + (hi_x - lo_x) * k as f64 / 4.0;
        let fy = lo_y + (hi_y - lo_y) * k as f64 / 4.0;
        let px = sx(fx);
        let py = sy(fy);
        draw_line(&mut img, (px, y0), (px, y0 + 4.0), black);
        draw_line(&mut img, (x0 - 4.0, py), (x0, py), black);
        draw_text(&mut img, px as i32 - 12, y0 as i32 + 8, &format!("{fx:.2}"), black);
        draw_text(&mut img, 4, py as i32 - 3, &format!("{fy:.2}"), black);
    }
    for (si, (_, pts)) in series.iter().enumerate() {
        let color = SERIES_COLORS[si % SERIES_COLORS.len()];
        for pair in pts.windows(2) {
            draw_line(&mut img, (sx(pair[0].0), sy(pair[0].1)), (sx(pair[1].0), sy(pair[1].1)), color);
        }
        for &(x, y) in pts {
            let (cx, cy) = (sx(x), sy(y));
            for dy in -1..=1i32 {
                for dx in -1..=1i32 {
                    let (px, py) = (cx as i32 + dx, cy as i32 + dy);
                    if px >= 0 && py >= 0 && (px as u32) < width && (py as u32) < height {
                        img.put_pixel(px as u32, py as u32, color);
                    }
                }
            }
        }
    }
    img
}
