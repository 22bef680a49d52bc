//! Frequency warping, frequency noise and masking for `F × T` feature
//! matrices.
//!
//! Every function takes the generator explicitly; draws happen in a fixed
//! order so the same generator state always yields the same output.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Log-mel style features, frequency bins along rows and frames along
/// columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(Matrix);

impl FeatureMatrix {
    pub fn new(data: Matrix) -> Result<Self> {
        if data.rows() < 2 || data.cols() < 1 {
            return Err(Error::InvalidInput(format!(
                "feature matrix must be at least 2x1, got {}x{}",
                data.rows(),
                data.cols()
            )));
        }
        if !data.is_finite() {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        Ok(Self(data))
    }

    pub fn bins(&self) -> usize {
        self.0.rows()
    }

    pub fn frames(&self) -> usize {
        self.0.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// Column `t` (one frame) copied out.
    pub fn frame(&self, t: usize) -> Vec<f64> {
        (0..self.bins()).map(|f| self.0[(f, t)]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    /// Frequency warping ratio in `[0, 1]`.
    pub gamma_f: f64,
    /// Upper bound of the frequency-noise standard deviation.
    pub sigma_noise: f64,
    pub freq_masks: usize,
    pub freq_mask_max: usize,
    pub time_masks: usize,
    pub time_mask_max: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            gamma_f: 0.75,
            sigma_noise: 0.14,
            freq_masks: 2,
            freq_mask_max: 27,
            time_masks: 10,
            time_mask_max: 40,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// No-op configuration: every augmentation is the identity.
    pub fn identity() -> Self {
        Self {
            gamma_f: 0.0,
            sigma_noise: 0.0,
            freq_masks: 0,
            freq_mask_max: 0,
            time_masks: 0,
            time_mask_max: 0,
            seed: 0,
        }
    }

    /// Mask widths capped to an `bins × frames` input.
    pub fn clamped_to(&self, bins: usize, frames: usize) -> Self {
        Self {
            freq_mask_max: self.freq_mask_max.min(bins),
            time_mask_max: self.time_mask_max.min(frames),
            ..*self
        }
    }

    fn check_warp_noise(&self) -> Result<()> {
        check_gamma(self.gamma_f)?;
        check_sigma(self.sigma_noise)
    }
}

fn check_gamma(gamma_f: f64) -> Result<()> {
    if (0.0..=1.0).contains(&gamma_f) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "warp ratio {gamma_f} outside [0, 1]"
        )))
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma >= 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "noise stddev {sigma} must be non-negative"
        )))
    }
}

/// Moves the content at frequency `anchor` to `destination` by a
/// piecewise-linear resampling of the frequency axis.
///
/// Output bin `f` reads source position `s(f)`, where `s` is linear on
/// `[0, destination]` and `[destination, F]` with `s(0) = 0`,
/// `s(destination) = anchor`, `s(F) = F`. Source positions between bins are
/// linearly interpolated; positions past the last bin read the last bin.
/// The same map is applied to every frame.
pub fn warp_frequency(x: &FeatureMatrix, anchor: f64, destination: f64) -> FeatureMatrix {
    let bins = x.bins();
    let top = bins as f64;
    if anchor == destination {
        return x.clone();
    }
    let source = |f: usize| -> f64 {
        let f = f as f64;
        if f == 0.0 {
            0.0
        } else if f <= destination {
            f * anchor / destination
        } else {
            anchor + (f - destination) * (top - anchor) / (top - destination)
        }
    };
    let m = x.matrix();
    let mut out = Matrix::zeros(bins, x.frames());
    for f in 0..bins {
        let s = source(f);
        let lo = libm::floor(s) as usize;
        if lo >= bins - 1 {
            out.row_mut(f).copy_from_slice(m.row(bins - 1));
            continue;
        }
        let frac = s - lo as f64;
        let (a, b) = (m.row(lo), m.row(lo + 1));
        for (o, (&va, &vb)) in out.row_mut(f).iter_mut().zip(a.iter().zip(b)) {
            *o = va + frac * (vb - va);
        }
    }
    FeatureMatrix(out)
}

/// Draws an anchor in `[0, F)`, a displacement in `(-F·γ, F·γ)` and warps.
pub fn freq_warp<R: Rng + ?Sized>(
    x: &FeatureMatrix,
    gamma_f: f64,
    rng: &mut R,
) -> Result<FeatureMatrix> {
    check_gamma(gamma_f)?;
    let top = x.bins() as f64;
    let anchor = top * rng.random::<f64>();
    let max_shift = top * gamma_f;
    let shift = max_shift * (2.0 * rng.random::<f64>() - 1.0);
    let destination = (anchor + shift).clamp(0.0, top);
    Ok(warp_frequency(x, anchor, destination))
}

/// Multiplies each frequency bin (row) by its own factor.
pub fn scale_bins(x: &FeatureMatrix, factors: &[f64]) -> Result<FeatureMatrix> {
    if factors.len() != x.bins() {
        return Err(Error::Incompatible(format!(
            "{} factors for {} bins",
            factors.len(),
            x.bins()
        )));
    }
    let mut out = x.0.clone();
    for (f, &scale) in factors.iter().enumerate() {
        for v in out.row_mut(f) {
            *v *= scale;
        }
    }
    Ok(FeatureMatrix(out))
}

/// Draws the per-bin factors `N(1, σ_f)` with `σ_f ~ U(0, σ_noise)`.
pub fn draw_noise_factors<R: Rng + ?Sized>(
    bins: usize,
    sigma_noise: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_sigma(sigma_noise)?;
    let sigma_f = sigma_noise * rng.random::<f64>();
    Ok((0..bins)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            1.0 + sigma_f * z
        })
        .collect())
}

/// Per-bin multiplicative Gaussian noise applied to the features as given.
pub fn freq_noise<R: Rng + ?Sized>(
    x: &FeatureMatrix,
    sigma_noise: f64,
    rng: &mut R,
) -> Result<FeatureMatrix> {
    let factors = draw_noise_factors(x.bins(), sigma_noise, rng)?;
    scale_bins(x, &factors)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskAxis {
    Frequency,
    Time,
}

/// `[start, start + width)` along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskRegion {
    pub axis: MaskAxis,
    pub start: usize,
    pub width: usize,
}

impl MaskRegion {
    pub fn contains(&self, index: usize) -> bool {
        (self.start..self.start + self.width).contains(&index)
    }
}

/// Frequency masks first, then time masks. Widths are uniform in
/// `0..=max`, starts uniform in `0..=dim - width`.
pub fn draw_masks<R: Rng + ?Sized>(
    bins: usize,
    frames: usize,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Vec<MaskRegion>> {
    if cfg.freq_mask_max > bins {
        return Err(Error::InvalidParameter(format!(
            "frequency mask width {} exceeds {bins} bins",
            cfg.freq_mask_max
        )));
    }
    if cfg.time_mask_max > frames {
        return Err(Error::InvalidParameter(format!(
            "time mask width {} exceeds {frames} frames",
            cfg.time_mask_max
        )));
    }
    let mut masks = Vec::with_capacity(cfg.freq_masks + cfg.time_masks);
    for (axis, count, max, dim) in [
        (MaskAxis::Frequency, cfg.freq_masks, cfg.freq_mask_max, bins),
        (MaskAxis::Time, cfg.time_masks, cfg.time_mask_max, frames),
    ] {
        for _ in 0..count {
            let width = rng.random_range(0..=max);
            let start = rng.random_range(0..=dim - width);
            masks.push(MaskRegion { axis, start, width });
        }
    }
    Ok(masks)
}

/// Zeroes every masked row or column.
pub fn apply_masks(x: &FeatureMatrix, masks: &[MaskRegion]) -> Result<FeatureMatrix> {
    let mut out = x.0.clone();
    for m in masks {
        let dim = match m.axis {
            MaskAxis::Frequency => x.bins(),
            MaskAxis::Time => x.frames(),
        };
        if m.start + m.width > dim {
            return Err(Error::InvalidParameter(format!(
                "mask {}..{} exceeds dimension {dim}",
                m.start,
                m.start + m.width
            )));
        }
        for i in m.start..m.start + m.width {
            match m.axis {
                MaskAxis::Frequency => out.row_mut(i).fill(0.0),
                MaskAxis::Time => {
                    for f in 0..x.bins() {
                        out[(f, i)] = 0.0;
                    }
                }
            }
        }
    }
    Ok(FeatureMatrix(out))
}

/// Masking in the style of SpecAugment, zero fill.
pub fn spec_augment<R: Rng + ?Sized>(
    x: &FeatureMatrix,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<FeatureMatrix> {
    let masks = draw_masks(x.bins(), x.frames(), cfg, rng)?;
    apply_masks(x, &masks)
}

/// Frequency warping followed by frequency noise, both drawing from `rng`.
pub fn freq_aug<R: Rng + ?Sized>(
    x: &FeatureMatrix,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<FeatureMatrix> {
    cfg.check_warp_noise()?;
    let warped = freq_warp(x, cfg.gamma_f, rng)?;
    freq_noise(&warped, cfg.sigma_noise, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::SeededRng;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn random_features(rng: &mut SeededRng, bins: usize, frames: usize) -> FeatureMatrix {
        FeatureMatrix::new(Matrix::from_fn(bins, frames, |_, _| {
            rng.random_range(-3.0..3.0)
        }))
        .unwrap()
    }

    #[test]
    fn feature_matrix_invariants() {
        assert!(FeatureMatrix::new(Matrix::zeros(1, 4)).is_err());
        assert!(FeatureMatrix::new(Matrix::zeros(4, 0)).is_err());
        assert!(FeatureMatrix::new(Matrix::filled(2, 2, f64::NAN)).is_err());
    }

    #[test]
    fn hand_evaluated_warp() {
        // s(f) = f·2/3 on [0, 3], s(3) = 2.
        let x =
            FeatureMatrix::new(Matrix::from_vec(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap()).unwrap();
        let out = warp_frequency(&x, 2.0, 3.0);
        let expected = [0.0, 2.0 / 3.0, 4.0 / 3.0, 2.0];
        for (o, e) in out.matrix().as_slice().iter().zip(expected) {
            assert!((o - e).abs() < 1e-12, "{o} vs {e}");
        }
        // Downward move: content at 3 lands on 1.
        let x = FeatureMatrix::new(Matrix::from_vec(4, 1, vec![0.0, 10.0, 20.0, 30.0]).unwrap())
            .unwrap();
        let out = warp_frequency(&x, 3.0, 1.0);
        // s = 0, 3, 3 + (2-1)·(4-3)/(4-1) = 3.33 → clamps to the last bin.
        assert_eq!(out.matrix().as_slice(), &[0.0, 30.0, 30.0, 30.0]);
    }

    #[test]
    fn warp_pins_first_bin_for_extreme_destinations() {
        let mut rng = SeededRng::seed_from_u64(4);
        let x = random_features(&mut rng, 6, 3);
        for (anchor, dest) in [(2.5, 0.0), (0.3, 6.0), (5.9, 0.0)] {
            let out = warp_frequency(&x, anchor, dest);
            assert_eq!(out.matrix().row(0), x.matrix().row(0));
            assert!(out.matrix().is_finite());
        }
    }

    #[test]
    fn identity_limits() {
        let mut rng = SeededRng::seed_from_u64(8);
        let x = random_features(&mut rng, 8, 5);
        let mut r = SeededRng::seed_from_u64(1);
        assert_eq!(freq_warp(&x, 0.0, &mut r).unwrap(), x);
        assert_eq!(freq_noise(&x, 0.0, &mut r).unwrap(), x);
        assert_eq!(
            spec_augment(&x, &AugmentConfig::identity(), &mut r).unwrap(),
            x
        );
        assert_eq!(freq_aug(&x, &AugmentConfig::identity(), &mut r).unwrap(), x);
    }

    #[test]
    fn full_frequency_mask_zeroes_everything() {
        let mut rng = SeededRng::seed_from_u64(2);
        let x = random_features(&mut rng, 5, 4);
        let mask = MaskRegion {
            axis: MaskAxis::Frequency,
            start: 0,
            width: 5,
        };
        let out = apply_masks(&x, &[mask]).unwrap();
        assert!(out.matrix().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parameter_errors() {
        let mut rng = SeededRng::seed_from_u64(2);
        let x = random_features(&mut rng, 5, 4);
        assert!(matches!(
            freq_warp(&x, 1.5, &mut rng),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            freq_noise(&x, -0.1, &mut rng),
            Err(Error::InvalidParameter(_))
        ));
        let cfg = AugmentConfig {
            freq_mask_max: 6,
            ..AugmentConfig::identity()
        };
        assert!(spec_augment(&x, &cfg, &mut rng).is_err());
        let cfg = AugmentConfig {
            time_mask_max: 5,
            ..AugmentConfig::identity()
        };
        assert!(spec_augment(&x, &cfg, &mut rng).is_err());
        let clamped = AugmentConfig::default().clamped_to(5, 4);
        assert_eq!((clamped.freq_mask_max, clamped.time_mask_max), (5, 4));
    }

    #[test]
    fn warp_then_noise_differs_from_noise_then_warp() {
        let mut rng = SeededRng::seed_from_u64(21);
        let x = random_features(&mut rng, 8, 6);
        let cfg = AugmentConfig {
            sigma_noise: 0.5,
            ..AugmentConfig::default()
        };
        let forward = freq_aug(&x, &cfg, &mut SeededRng::seed_from_u64(3)).unwrap();
        let mut r = SeededRng::seed_from_u64(3);
        let noised = freq_noise(&x, cfg.sigma_noise, &mut r).unwrap();
        let reversed = freq_warp(&noised, cfg.gamma_f, &mut r).unwrap();
        assert_ne!(forward, reversed);
    }

    proptest! {
        #[test]
        fn augmentations_preserve_shape_and_are_deterministic(seed in any::<u64>(), bins in 2usize..12, frames in 1usize..10) {
            let mut rng = SeededRng::seed_from_u64(seed);
            let x = random_features(&mut rng, bins, frames);
            let cfg = AugmentConfig::default().clamped_to(bins, frames);
            let a = freq_aug(&x, &cfg, &mut SeededRng::seed_from_u64(seed ^ 1)).unwrap();
            let b = freq_aug(&x, &cfg, &mut SeededRng::seed_from_u64(seed ^ 1)).unwrap();
            prop_assert_eq!(a.matrix().shape(), (bins, frames));
            prop_assert_eq!(&a, &b);
            let warped = freq_warp(&x, cfg.gamma_f, &mut SeededRng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(warped.matrix().row(0), x.matrix().row(0));
            prop_assert!(warped.matrix().is_finite());
            let m = spec_augment(&x, &cfg, &mut SeededRng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(m.matrix().shape(), (bins, frames));
        }

        #[test]
        fn noise_ratio_is_constant_per_bin(seed in any::<u64>()) {
            let mut rng = SeededRng::seed_from_u64(seed);
            let x = random_features(&mut rng, 6, 7);
            let out = freq_noise(&x, 0.14, &mut rng).unwrap();
            for f in 0..6 {
                let r0 = out.matrix()[(f, 0)] / x.matrix()[(f, 0)];
                for t in 1..7 {
                    let r = out.matrix()[(f, t)] / x.matrix()[(f, t)];
                    prop_assert!((r - r0).abs() <= 1e-12 * r0.abs().max(1.0));
                }
            }
        }

        #[test]
        fn masks_touch_only_drawn_regions(seed in any::<u64>(), bins in 2usize..10, frames in 1usize..12) {
            let mut rng = SeededRng::seed_from_u64(seed);
            let x = random_features(&mut rng, bins, frames);
            let cfg = AugmentConfig { freq_masks: 2, freq_mask_max: bins.min(3), time_masks: 10, time_mask_max: frames.min(4), ..AugmentConfig::identity() };
            let masks = draw_masks(bins, frames, &cfg, &mut SeededRng::seed_from_u64(seed)).unwrap();
            let out = spec_augment(&x, &cfg, &mut SeededRng::seed_from_u64(seed)).unwrap();
            for f in 0..bins {
                for t in 0..frames {
                    let masked = masks.iter().any(|m| match m.axis {
                        MaskAxis::Frequency => m.contains(f),
                        MaskAxis::Time => m.contains(t),
                    });
                    let v = out.matrix()[(f, t)];
                    if masked {
                        prop_assert_eq!(v, 0.0);
                    } else {
                        prop_assert_eq!(v.to_bits(), x.matrix()[(f, t)].to_bits());
                    }
                }
            }
        }
    }
}
