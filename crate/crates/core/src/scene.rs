//! Procedural clear-weather road scenes for fixtures, benches and demos.
//!
//! A scene is a sky gradient above a horizon, grass below it, a road
//! trapezoid with dashed lane markings, a handful of flat-colored boxes
//! above the horizon and a little per-pixel texture. Everything is a
//! function of the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::ImageBuffer;

const BOXES: usize = 8;
const TEXTURE: f64 = 0.06;
const GRASS: [f64; 3] = [0.25, 0.45, 0.2];
const SKY_TINT: [f64; 3] = [0.8, 0.9, 1.0];

struct Box2 {
    col: f64,
    row: f64,
    width: f64,
    height: f64,
    color: [f64; 3],
}

/// RGB road scene of the given size.
pub fn road_scene(seed: u64, width: usize, height: usize) -> Result<ImageBuffer> {
    if width == 0 || height == 0 {
        return Err(Error::Shape(format!("scene size {width}x{height}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let horizon = h * rng.gen_range(0.35..0.5);
    let boxes: Vec<Box2> = (0..BOXES)
        .map(|_| Box2 {
            col: rng.gen_range(0.0..w),
            row: rng.gen_range(0.0..horizon.max(1.0)),
            width: rng.gen_range(0.04..0.25) * w,
            height: rng.gen_range(0.04..0.25) * h,
            color: [rng.gen(), rng.gen(), rng.gen()],
        })
        .collect();
    let texture: Vec<f64> = (0..width * height)
        .map(|_| rng.gen::<f64>() - 0.5)
        .collect();
    let dash = (height / 20).max(2);

    ImageBuffer::from_fn(width, height, 3, |r, c, ch| {
        let (y, x) = (r as f64, c as f64);
        let mut v = if y < horizon {
            0.55 + 0.3 * (1.0 - y / horizon) * SKY_TINT[ch]
        } else {
            let t = (y - horizon) / (h - horizon);
            let off = (x - w / 2.0).abs();
            if off < 0.04 * w + 0.45 * t * w {
                let lane = off < 1.0 + 2.0 * t && (r / dash).is_multiple_of(2);
                if lane {
                    0.95
                } else {
                    0.35 + 0.05 * ch as f64
                }
            } else {
                GRASS[ch]
            }
        };
        for b in &boxes {
            if x >= b.col && x < b.col + b.width && y >= b.row && y < b.row + b.height {
                v = b.color[ch];
            }
        }
        (v + TEXTURE * texture[r * width + c]).clamp(0.0, 1.0)
    })
}
