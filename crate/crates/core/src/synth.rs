//! Procedural piecewise-planar depth maps with registered color images.
//!
//! A scene is a tilted background plane with a stack of opaque shapes
//! (rectangles, ellipses, triangles) painted far to near, each carrying its
//! own depth plane and a color. Every depth discontinuity is therefore also
//! a color edge, while color texture inside shapes adds edges the depth map
//! does not have.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::{add_gaussian_noise, resample, sample_patches, Image, NoiseSpec, PatchSet, Resample};
use crate::Result;

/// Independent sub-seed `index` of `seed` (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `(noisy, clean)` training crops: clean crops are drawn first, then each
/// gets its own noise realization.
pub fn denoise_patches(clean: &[Image], sigma: f64, size: usize, count: usize, seed: u64) -> Result<PatchSet> {
    let groups: Vec<Vec<Image>> = clean.iter().map(|c| vec![c.clone()]).collect();
    let crops = sample_patches(&groups, size, count, seed)?;
    let patches = crops
        .patches
        .into_iter()
        .enumerate()
        .map(|(j, mut p)| {
            let c = p.pop().expect("arity 1");
            let noise = NoiseSpec::new(sigma, derive_seed(seed, j as u64))?;
            Ok(vec![add_gaussian_noise(&c, &noise), c])
        })
        .collect::<Result<Vec<_>>>()?;
    PatchSet::new(size, patches)
}

/// `(degraded, guidance, depth)` aligned crops.
pub fn depth_patches(triples: &[(Image, Image, Image)], size: usize, count: usize, seed: u64) -> Result<PatchSet> {
    let groups: Vec<Vec<Image>> = triples.iter().map(|(d, g, t)| vec![d.clone(), g.clone(), t.clone()]).collect();
    sample_patches(&groups, size, count, seed)
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64 },
    Triangle { p: [(f64, f64); 3] },
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Rect { y0, x0, y1, x1 } => y >= y0 && y < y1 && x >= x0 && x < x1,
            Shape::Ellipse { cy, cx, ry, rx } => ((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2) <= 1.0,
            Shape::Triangle { p } => {
                let side = |a: (f64, f64), b: (f64, f64)| (b.1 - a.1) * (y - a.0) - (b.0 - a.0) * (x - a.1);
                let (s0, s1, s2) = (side(p[0], p[1]), side(p[1], p[2]), side(p[2], p[0]));
                (s0 >= 0.0 && s1 >= 0.0 && s2 >= 0.0) || (s0 <= 0.0 && s1 <= 0.0 && s2 <= 0.0)
            }
        }
    }
}

struct Layer {
    shape: Shape,
    /// depth = d0 + dy·y + dx·x
    plane: (f64, f64, f64),
    color: [f64; 3],
    /// Stripe texture amplitude and frequency.
    texture: (f64, f64, f64),
}

/// A depth map (1 channel) and its guidance image (3 channels), both in `[0, 255]`.
pub fn depth_scene(height: usize, width: usize, shapes: usize, seed: u64) -> (Image, Image) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (height as f64, width as f64);
    let tilt = |rng: &mut ChaCha8Rng, span: f64| (rng.random_range(-span..span) / h, rng.random_range(-span..span) / w);
    let (by, bx) = tilt(&mut rng, 30.0);
    let mut layers = vec![Layer {
        shape: Shape::Rect { y0: 0.0, x0: 0.0, y1: h, x1: w },
        plane: (rng.random_range(40.0..90.0), by, bx),
        color: [rng.random_range(30.0..220.0), rng.random_range(30.0..220.0), rng.random_range(30.0..220.0)],
        texture: (rng.random_range(0.0..15.0), rng.random_range(0.1..0.6), rng.random_range(0.0..std::f64::consts::PI)),
    }];
    for i in 0..shapes {
        // nearer layers get larger depth values
        let base = 90.0 + 140.0 * (i as f64 + rng.random_range(0.0..1.0)) / shapes.max(1) as f64;
        let size = rng.random_range(0.15..0.45);
        let (cy, cx) = (rng.random_range(0.0..h), rng.random_range(0.0..w));
        let (ry, rx) = (size * h * rng.random_range(0.5..1.0), size * w * rng.random_range(0.5..1.0));
        let shape = match rng.random_range(0..3) {
            0 => Shape::Rect { y0: cy - ry, x0: cx - rx, y1: cy + ry, x1: cx + rx },
            1 => Shape::Ellipse { cy, cx, ry, rx },
            _ => {
                let mut p = [(0.0, 0.0); 3];
                for v in &mut p {
                    *v = (cy + rng.random_range(-1.5..1.5) * ry, cx + rng.random_range(-1.5..1.5) * rx);
                }
                Shape::Triangle { p }
            }
        };
        let (ty, tx) = tilt(&mut rng, 25.0);
        layers.push(Layer {
            shape,
            plane: (base, ty, tx),
            color: [rng.random_range(0.0..255.0), rng.random_range(0.0..255.0), rng.random_range(0.0..255.0)],
            texture: (rng.random_range(0.0..25.0), rng.random_range(0.1..0.8), rng.random_range(0.0..std::f64::consts::PI)),
        });
    }
    let mut depth = Image::zeros(height, width, 1);
    let mut rgb = Image::zeros(height, width, 3);
    for y in 0..height {
        for x in 0..width {
            let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
            let top = layers.iter().rev().find(|l| l.shape.contains(fy, fx)).expect("background covers the frame");
            let (d0, dy, dx) = top.plane;
            depth.set(0, y, x, (d0 + dy * (fy - h / 2.0) + dx * (fx - w / 2.0)).clamp(0.0, 255.0));
            let (amp, freq, phase) = top.texture;
            let t = amp * (freq * (fx * phase.cos() + fy * phase.sin())).sin();
            for c in 0..3 {
                rgb.set(c, y, x, (top.color[c] + t).clamp(0.0, 255.0));
            }
        }
    }
    (depth, rgb)
}

/// Nearest-neighbor downsampling by `factor`, then bilinear upsampling back.
pub fn degrade_depth(depth: &Image, factor: usize) -> Result<Image> {
    resample(&resample(depth, factor, Resample::NearestDown)?, factor, Resample::BilinearUp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let (d1, c1) = depth_scene(32, 40, 5, 9);
        let (d2, c2) = depth_scene(32, 40, 5, 9);
        assert_eq!((&d1, &c1), (&d2, &c2));
        assert_eq!(c1.channels(), 3);
        assert!(d1.data().iter().chain(c1.data()).all(|v| (0.0..=255.0).contains(v)));
        assert_ne!(depth_scene(32, 40, 5, 10).0, d1);
    }

    #[test]
    fn depth_edges_coincide_with_color_edges() {
        let (d, c) = depth_scene(64, 64, 6, 3);
        let mut edges = 0;
        for y in 0..64 {
            for x in 0..63 {
                if (d.get(0, y, x + 1) - d.get(0, y, x)).abs() > 5.0 {
                    edges += 1;
                    let jump: f64 = (0..3).map(|ch| (c.get(ch, y, x + 1) - c.get(ch, y, x)).abs()).sum();
                    assert!(jump > 0.0 || d.get(0, y, x) == 0.0 || d.get(0, y, x) == 255.0);
                }
            }
        }
        assert!(edges > 0);
    }

    #[test]
    fn degrade_keeps_size() {
        let (d, _) = depth_scene(32, 32, 4, 1);
        assert_eq!(degrade_depth(&d, 4).unwrap().shape(), d.shape());
    }
}
