use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Frequency and time masking for `[T × F]` features.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpecAugmentParams {
    pub freq_masks: usize,
    /// Largest frequency band width.
    pub freq_width: usize,
    pub time_masks: usize,
    /// Largest time band as a fraction of the utterance length.
    pub time_mask_ratio: f64,
}

impl Default for SpecAugmentParams {
    fn default() -> Self {
        Self {
            freq_masks: 2,
            freq_width: 27,
            time_masks: 10,
            time_mask_ratio: 0.05,
        }
    }
}

impl SpecAugmentParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.time_mask_ratio) {
            return Err(Error::Config {
                field: "spec_augment.time_mask_ratio",
                reason: format!("must lie in [0, 1], got {}", self.time_mask_ratio),
            });
        }
        Ok(())
    }
}

/// Zero `freq_masks` frequency bands and `time_masks` time bands. Widths are
/// uniform in `[0, freq_width]` and `[0, floor(ratio·T)]`, clipped to the
/// axis, and band starts are uniform over the positions where they fit.
pub fn spec_augment(features: &Tensor, p: &SpecAugmentParams, seed: u64) -> Result<Tensor> {
    p.validate()?;
    let (t, f) = features.dims2("spec_augment")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = features.clone();
    let data = out.data_mut();
    for _ in 0..p.freq_masks {
        let w = rng.random_range(0..=p.freq_width).min(f);
        let start = rng.random_range(0..=f - w);
        for row in data.chunks_mut(f) {
            row[start..start + w].fill(0.0);
        }
    }
    let max_t = (p.time_mask_ratio * t as f64).floor() as usize;
    for _ in 0..p.time_masks {
        let w = rng.random_range(0..=max_t).min(t);
        let start = rng.random_range(0..=t - w);
        data[start * f..(start + w) * f].fill(0.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn feats(t: usize, f: usize) -> Tensor {
        Tensor::new(&[t, f], (0..t * f).map(|i| 1.0 + i as f64).collect()).unwrap()
    }

    #[test]
    fn zero_widths_are_identity() {
        let x = feats(20, 8);
        let p = SpecAugmentParams {
            freq_width: 0,
            time_mask_ratio: 0.0,
            ..Default::default()
        };
        assert_eq!(spec_augment(&x, &p, 3).unwrap(), x);
    }

    #[test]
    fn same_seed_same_masks() {
        let x = feats(100, 40);
        let p = SpecAugmentParams::default();
        assert_eq!(spec_augment(&x, &p, 9).unwrap(), spec_augment(&x, &p, 9).unwrap());
        assert_ne!(spec_augment(&x, &p, 9).unwrap(), spec_augment(&x, &p, 10).unwrap());
    }

    #[test]
    fn rejects_bad_ratio() {
        let p = SpecAugmentParams {
            time_mask_ratio: 1.5,
            ..Default::default()
        };
        assert!(spec_augment(&feats(4, 4), &p, 0).is_err());
    }

    proptest! {
        #[test]
        fn masks_only_zero_and_respect_bound(t in 1usize..60, f in 1usize..50, fw in 0usize..30, fm in 0usize..4, seed in any::<u64>()) {
            let x = feats(t, f);
            let p = SpecAugmentParams { freq_masks: fm, freq_width: fw, time_masks: 0, time_mask_ratio: 0.0 };
            let y = spec_augment(&x, &p, seed).unwrap();
            for (a, b) in x.data().iter().zip(y.data()) {
                prop_assert!(b == a || *b == 0.0);
            }
            let masked_cols = (0..f).filter(|&j| y.data()[j] == 0.0).count();
            prop_assert!(masked_cols <= fm * fw);
        }

        #[test]
        fn time_masks_keep_complement(t in 1usize..200, seed in any::<u64>()) {
            let x = feats(t, 5);
            let p = SpecAugmentParams { freq_masks: 0, time_masks: 3, time_mask_ratio: 0.2, ..Default::default() };
            let y = spec_augment(&x, &p, seed).unwrap();
            for (xr, yr) in x.data().chunks(5).zip(y.data().chunks(5)) {
                prop_assert!(yr == xr || yr.iter().all(|v| *v == 0.0));
            }
        }
    }
}
