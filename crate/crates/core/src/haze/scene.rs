//! Synthetic paired scenes under the atmospheric scattering model
//! `I = J·t + A·(1 − t)` with transmission `t = exp(−β·depth)`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BETA_RANGE: (f32, f32) = (0.5, 2.5);
pub const AIRLIGHT_RANGE: (f32, f32) = (0.7, 1.0);
pub const MIN_SCENE_SIZE: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct HazeScene {
    /// (3, H, W) clean radiance in [0, 1].
    pub sharp: Tensor<f32>,
    /// (1, H, W) depth in [0, 1].
    pub depth: Tensor<f32>,
    pub beta: f32,
    pub airlight: f32,
    pub seed: u64,
}

impl HazeScene {
    pub fn transmission(&self) -> Tensor<f32> {
        let beta = self.beta;
        self.depth.map(|d| (-beta * d).exp())
    }
}

/// Hazy observation of `scene`, (3, H, W).
pub fn apply_haze(scene: &HazeScene) -> Tensor<f32> {
    let t = scene.transmission();
    let plane = t.len();
    let a = scene.airlight;
    Tensor::from_fn(scene.sharp.shape(), |i| {
        let tv = t.data()[i % plane];
        scene.sharp.data()[i] * tv + a * (1.0 - tv)
    })
}

/// Deterministic scene for `seed`: smooth colour gradients, a few
/// rectangles and a sinusoidal texture over a planar depth ramp.
pub fn synth_scene(seed: u64, h: usize, w: usize) -> Result<HazeScene> {
    if h < MIN_SCENE_SIZE || w < MIN_SCENE_SIZE {
        return Err(Error::Config(format!(
            "scene size {h}x{w} is below the {MIN_SCENE_SIZE}x{MIN_SCENE_SIZE} minimum"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = vec![0.0f32; 3 * h * w];
    for c in 0..3 {
        let base: f32 = rng.random_range(0.2..0.8);
        let gx: f32 = rng.random_range(-0.3..0.3);
        let gy: f32 = rng.random_range(-0.3..0.3);
        for y in 0..h {
            for x in 0..w {
                img[(c * h + y) * w + x] = base + gx * x as f32 / w as f32 + gy * y as f32 / h as f32;
            }
        }
    }
    for _ in 0..rng.random_range(2..6) {
        let (y0, x0) = (rng.random_range(0..h), rng.random_range(0..w));
        let (rh, rw) = (rng.random_range(h / 8..=h / 2), rng.random_range(w / 8..=w / 2));
        let alpha: f32 = rng.random_range(0.5..1.0);
        let color: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
        for y in y0..(y0 + rh).min(h) {
            for x in x0..(x0 + rw).min(w) {
                for (c, &col) in color.iter().enumerate() {
                    let v = &mut img[(c * h + y) * w + x];
                    *v = (1.0 - alpha) * *v + alpha * col;
                }
            }
        }
    }
    let (fx, fy): (f32, f32) = (rng.random_range(0.5..4.0), rng.random_range(0.5..4.0));
    let phase: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let amp: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.0..0.1));
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let arg = std::f32::consts::TAU * (fx * x as f32 / w as f32 + fy * y as f32 / h as f32) + phase;
                let v = &mut img[(c * h + y) * w + x];
                *v = (*v + amp[c] * arg.sin()).clamp(0.0, 1.0);
            }
        }
    }

    let d0: f32 = rng.random_range(0.0..0.5);
    let dx: f32 = rng.random_range(-0.5..1.0);
    let dy: f32 = rng.random_range(-0.5..1.0);
    let depth = Tensor::from_fn(&[1, h, w], |i| {
        let (y, x) = (i / w, i % w);
        (d0 + dx * x as f32 / w as f32 + dy * y as f32 / h as f32).clamp(0.0, 1.0)
    });
    Ok(HazeScene {
        sharp: Tensor::from_vec(&[3, h, w], img)?,
        depth,
        beta: rng.random_range(BETA_RANGE.0..BETA_RANGE.1),
        airlight: rng.random_range(AIRLIGHT_RANGE.0..AIRLIGHT_RANGE.1),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_scattering_leaves_image_unchanged() {
        let mut s = synth_scene(1, 16, 16).unwrap();
        s.beta = 0.0;
        assert_eq!(apply_haze(&s), s.sharp);
    }

    #[test]
    fn dense_haze_tends_to_airlight() {
        let mut s = synth_scene(2, 16, 16).unwrap();
        s.depth = Tensor::ones(&[1, 16, 16]);
        s.beta = 200.0;
        let hazy = apply_haze(&s);
        assert!(hazy.data().iter().all(|&v| (v - s.airlight).abs() < 1e-6));
    }

    #[test]
    fn half_transmission_closed_form() {
        let s = HazeScene {
            sharp: Tensor::zeros(&[3, 8, 8]),
            depth: Tensor::ones(&[1, 8, 8]),
            beta: std::f32::consts::LN_2,
            airlight: 1.0,
            seed: 0,
        };
        assert!(apply_haze(&s).data().iter().all(|&v| (v - 0.5).abs() < 1e-7));
    }

    #[test]
    fn deterministic_and_in_range() {
        assert_eq!(synth_scene(42, 24, 16).unwrap(), synth_scene(42, 24, 16).unwrap());
        for seed in 0..1000 {
            let s = synth_scene(seed, 8, 8).unwrap();
            let hazy = apply_haze(&s);
            for t in [&s.sharp, &s.depth, &hazy] {
                assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)), "seed {seed}");
            }
            assert!((BETA_RANGE.0..=BETA_RANGE.1).contains(&s.beta));
            assert!((AIRLIGHT_RANGE.0..=AIRLIGHT_RANGE.1).contains(&s.airlight));
            assert!(s.transmission().data().iter().all(|&t| t > 0.0 && t <= 1.0));
        }
    }

    #[test]
    fn distinct_seeds_differ() {
        for seed in 0..100u64 {
            let a = synth_scene(2 * seed, 16, 16).unwrap();
            let b = synth_scene(2 * seed + 1, 16, 16).unwrap();
            let differing = (0..256)
                .filter(|&p| (0..3).any(|c| a.sharp.data()[c * 256 + p] != b.sharp.data()[c * 256 + p]))
                .count();
            assert!(differing * 100 >= 256, "seeds {} and {}", 2 * seed, 2 * seed + 1);
        }
    }

    #[test]
    fn rejects_tiny_scenes() {
        assert!(synth_scene(0, 7, 16).is_err());
    }
}
