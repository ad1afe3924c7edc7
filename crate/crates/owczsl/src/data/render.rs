//! Procedural sample rendering: each object is a distinct shape, each
//! attribute an appearance transform (color tint, stripes, checker, speckle,
//! brightness, blur). Per-sample jitter and noise keep pairs non-degenerate.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Image;

/// Attribute vocabulary, in render order. Colors first, then patterns and
/// intensity/blur transforms, so small |A| configurations stay well separated.
pub const ATTR_WORDS: [&str; 12] = [
    "red", "green", "blue", "yellow", "purple", "cyan", "striped", "checkered", "spotted",
    "bright", "dark", "hazy",
];

/// Object vocabulary: shape nouns.
pub const OBJ_WORDS: [&str; 10] = [
    "disc", "square", "triangle", "cross", "ring", "bar", "diamond", "frame", "wedge", "chevron",
];

const BACKGROUND: f32 = 0.12;

/// Render one sample image for (attribute, object) at the given size.
pub fn render_sample(attr: usize, obj: usize, size: usize, rng: &mut ChaCha8Rng) -> Image {
    let mut img = Image::filled(size, BACKGROUND);

    let half = size as f64 / 2.0;
    let cx = half + rng.gen_range(-0.08..0.08) * size as f64;
    let cy = half + rng.gen_range(-0.08..0.08) * size as f64;
    let radius = size as f64 * rng.gen_range(0.28..0.36);

    let base = attr_base_color(attr);
    for y in 0..size {
        for x in 0..size {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            if shape_mask(obj, dx, dy, radius) {
                let color = attr_texture(attr, base, x, y);
                img.set(y, x, color);
            }
        }
    }

    if attr_is_blur(attr) {
        img = box_blur(&img);
    }

    // per-pixel noise so two draws of the same pair never coincide
    for v in img.data.iter_mut() {
        *v = (*v + rng.gen_range(-0.02f32..0.02f32)).clamp(0.0, 1.0);
    }
    img
}

fn shape_mask(obj: usize, dx: f64, dy: f64, r: f64) -> bool {
    match obj {
        0 => dx * dx + dy * dy <= r * r,                                   // disc
        1 => dx.abs() <= 0.8 * r && dy.abs() <= 0.8 * r,                   // square
        2 => {
            // triangle: apex at the top, base at the bottom
            let t = (dy + r) / (2.0 * r);
            dy.abs() <= r && t >= 0.0 && dx.abs() <= t * r
        }
        3 => (dx.abs() <= 0.3 * r && dy.abs() <= r) || (dy.abs() <= 0.3 * r && dx.abs() <= r), // cross
        4 => {
            let d2 = dx * dx + dy * dy;
            d2 <= r * r && d2 >= (0.55 * r) * (0.55 * r)                   // ring
        }
        5 => dx.abs() <= r && dy.abs() <= 0.3 * r,                         // bar
        6 => dx.abs() + dy.abs() <= r,                                     // diamond
        7 => {
            let outer = dx.abs() <= 0.85 * r && dy.abs() <= 0.85 * r;
            let inner = dx.abs() <= 0.45 * r && dy.abs() <= 0.45 * r;
            outer && !inner                                                // frame
        }
        8 => dy.abs() <= r && dx >= -0.9 * r && dx <= (dy / r) * 0.9 * r,  // wedge
        9 => {
            let v = dy - (dx.abs() * 0.8 - 0.4 * r);
            dx.abs() <= r && v.abs() <= 0.3 * r                            // chevron
        }
        _ => unreachable!("object index {obj} out of vocabulary"),
    }
}

fn attr_base_color(attr: usize) -> [f32; 3] {
    match attr {
        0 => [0.85, 0.15, 0.15],  // red
        1 => [0.15, 0.80, 0.20],  // green
        2 => [0.18, 0.25, 0.88],  // blue
        3 => [0.90, 0.85, 0.15],  // yellow
        4 => [0.65, 0.20, 0.80],  // purple
        5 => [0.15, 0.80, 0.85],  // cyan
        9 => [0.95, 0.95, 0.95],  // bright
        10 => [0.35, 0.35, 0.35], // dark
        _ => [0.72, 0.72, 0.72],  // pattern/blur attrs draw on light gray
    }
}

fn attr_texture(attr: usize, base: [f32; 3], x: usize, y: usize) -> [f32; 3] {
    match attr {
        6 => {
            // striped: horizontal bands
            if (y / 3) % 2 == 0 {
                [0.9, 0.9, 0.9]
            } else {
                [0.3, 0.3, 0.3]
            }
        }
        7 => {
            // checkered
            if (x / 4 + y / 4) % 2 == 0 {
                [0.9, 0.9, 0.9]
            } else {
                [0.3, 0.3, 0.3]
            }
        }
        8 => {
            // spotted: sparse dark dots on a fixed lattice
            let on_dot = x % 5 < 2 && y % 5 < 2;
            if on_dot {
                [0.2, 0.2, 0.2]
            } else {
                [0.85, 0.85, 0.85]
            }
        }
        _ => base,
    }
}

fn attr_is_blur(attr: usize) -> bool {
    attr == 11
}

fn box_blur(img: &Image) -> Image {
    let size = img.size;
    let mut out = Image::filled(size, 0.0);
    for y in 0..size {
        for x in 0..size {
            let mut acc = [0.0f32; 3];
            let mut count = 0.0f32;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let ny = y as i64 + dy;
                    let nx = x as i64 + dx;
                    if ny >= 0 && ny < size as i64 && nx >= 0 && nx < size as i64 {
                        let p = img.get(ny as usize, nx as usize);
                        for c in 0..3 {
                            acc[c] += p[c];
                        }
                        count += 1.0;
                    }
                }
            }
            out.set(y, x, [acc[0] / count, acc[1] / count, acc[2] / count]);
        }
    }
    out
}
