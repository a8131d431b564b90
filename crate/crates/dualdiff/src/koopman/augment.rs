//! Image augmentation applied identically to a current and a future frame.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Zoom and shift bound as a fraction of the image side.
    pub crop_fraction: f64,
    pub flip_prob: f64,
    /// Rotation bound (radians).
    pub rotation: f64,
    pub noise_std: f64,
    pub brightness: [f64; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop_fraction: 0.10,
            flip_prob: 0.5,
            rotation: 15f64.to_radians(),
            noise_std: 0.02,
            brightness: [0.9, 1.1],
        }
    }
}

impl AugmentConfig {
    /// Configuration that leaves images untouched.
    pub fn identity() -> Self {
        Self {
            crop_fraction: 0.0,
            flip_prob: 0.0,
            rotation: 0.0,
            noise_std: 0.0,
            brightness: [1.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bounds = [self.crop_fraction, self.rotation, self.noise_std];
        if bounds.iter().any(|b| !(*b >= 0.0)) || !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(contract(format!("invalid augmentation bounds {self:?}")));
        }
        if !(self.brightness[0] > 0.0 && self.brightness[0] <= self.brightness[1]) {
            return Err(contract(format!("invalid brightness range {:?}", self.brightness)));
        }
        Ok(())
    }
}

/// One drawn transform; re-applying it reproduces the same augmentation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub zoom: f64,
    /// Shift in pixels along columns and rows.
    pub shift: [f64; 2],
    pub flip: bool,
    pub angle: f64,
    pub noise_std: f64,
    pub noise_seed: u64,
    pub brightness: f64,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

impl AugmentParams {
    /// Draws every transform parameter, always in the same order.
    pub fn sample<R: Rng + ?Sized>(cfg: &AugmentConfig, side: usize, rng: &mut R) -> Self {
        let c = cfg.crop_fraction;
        let max_shift = c * side as f64 / 2.0;
        let zoom = uniform(rng, 1.0 - c, 1.0 + c);
        let shift = [uniform(rng, -max_shift, max_shift), uniform(rng, -max_shift, max_shift)];
        let flip = rng.random::<f64>() < cfg.flip_prob;
        let angle = uniform(rng, -cfg.rotation, cfg.rotation);
        let noise_seed = rng.random();
        let brightness = uniform(rng, cfg.brightness[0], cfg.brightness[1]);
        Self {
            zoom,
            shift,
            flip,
            angle,
            noise_std: cfg.noise_std,
            noise_seed,
            brightness,
        }
    }

    /// Applies the transform to a square row-major image.
    pub fn apply(&self, image: &[f64], side: usize) -> Vec<f64> {
        debug_assert_eq!(image.len(), side * side);
        let mut img = image.to_vec();
        if self.zoom != 1.0 || self.shift != [0.0, 0.0] {
            let (z, s) = (self.zoom, self.shift);
            img = resample(&img, side, |x, y| (x / z - s[0], y / z - s[1]));
        }
        if self.flip {
            for row in img.chunks_exact_mut(side) {
                row.reverse();
            }
        }
        if self.angle != 0.0 {
            let (sin, cos) = self.angle.sin_cos();
            img = resample(&img, side, |x, y| (cos * x + sin * y, -sin * x + cos * y));
        }
        if self.noise_std > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed);
            let noise = Normal::new(0.0, self.noise_std).expect("finite std");
            for v in &mut img {
                *v += noise.sample(&mut rng);
            }
        }
        for v in &mut img {
            *v = (*v * self.brightness).clamp(0.0, 1.0);
        }
        img
    }
}

/// Inverse-maps every output pixel (centred coordinates) into the source and
/// samples it bilinearly; samples outside the source read as 0.
fn resample(src: &[f64], side: usize, inverse: impl Fn(f64, f64) -> (f64, f64)) -> Vec<f64> {
    let c = (side as f64 - 1.0) / 2.0;
    let at = |r: isize, col: isize| -> f64 {
        if r < 0 || col < 0 || r >= side as isize || col >= side as isize {
            0.0
        } else {
            src[r as usize * side + col as usize]
        }
    };
    let mut out = vec![0.0; side * side];
    for i in 0..side {
        for j in 0..side {
            let (x, y) = inverse(j as f64 - c, i as f64 - c);
            let (sx, sy) = (x + c, y + c);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            out[i * side + j] = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
        }
    }
    out
}

/// Draws a transform and applies it; returns the image and the parameters.
pub fn augment<R: Rng + ?Sized>(image: &[f64], side: usize, cfg: &AugmentConfig, rng: &mut R) -> Result<(Vec<f64>, AugmentParams)> {
    if image.len() != side * side {
        return Err(contract(format!("image has {} pixels, expected {side}x{side}", image.len())));
    }
    let params = AugmentParams::sample(cfg, side, rng);
    Ok((params.apply(image, side), params))
}
