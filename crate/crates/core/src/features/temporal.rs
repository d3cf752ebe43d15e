//! Band-limited time-series features.
//!
//! Each band is isolated with a zero-phase filter: a 4th-order Butterworth
//! high-pass at the lower edge cascaded with a 4th-order Butterworth
//! low-pass at the upper edge (two biquads each), run forward then backward
//! over an odd-reflected padding of the signal.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::{FeatureError, FeatureVector, Provenance};

pub const MIN_SAMPLES: usize = 8;

/// Section quality factors of a 4th-order Butterworth prototype.
const BUTTERWORTH4_Q: [f64; 2] = [0.541_196_100_146_197, 1.306_562_964_876_376_5];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub low: f64,
    pub high: f64,
}

impl Band {
    pub fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    fn validate(&self, rate: f64) -> Result<(), FeatureError> {
        let ok = rate.is_finite() && rate > 0.0 && self.low > 0.0 && self.low < self.high && self.high <= rate / 2.0;
        if ok {
            Ok(())
        } else {
            Err(FeatureError::BadBand { low: self.low, high: self.high, rate })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn lowpass(cutoff: f64, rate: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * cutoff / rate;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b1 = (1.0 - cos) / a0;
        Self { b: [b1 / 2.0, b1, b1 / 2.0], a: [-2.0 * cos / a0, (1.0 - alpha) / a0] }
    }

    fn highpass(cutoff: f64, rate: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * cutoff / rate;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b1 = -(1.0 + cos) / a0;
        Self { b: [-b1 / 2.0, b1, -b1 / 2.0], a: [-2.0 * cos / a0, (1.0 - alpha) / a0] }
    }

    /// Transposed direct form II, zero initial state.
    fn run(&self, x: &mut [f64]) {
        let (mut z1, mut z2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let input = *v;
            let out = self.b[0] * input + z1;
            z1 = self.b[1] * input - self.a[0] * out + z2;
            z2 = self.b[2] * input - self.a[1] * out;
            *v = out;
        }
    }
}

fn band_sections(band: &Band, rate: f64) -> Vec<Biquad> {
    let mut sections: Vec<Biquad> = BUTTERWORTH4_Q.iter().map(|&q| Biquad::highpass(band.low, rate, q)).collect();
    if band.high < rate / 2.0 {
        sections.extend(BUTTERWORTH4_Q.iter().map(|&q| Biquad::lowpass(band.high, rate, q)));
    }
    sections
}

/// Zero-phase band-pass of `signal`.
pub fn band_pass(signal: &[f64], rate: f64, band: &Band) -> Result<Vec<f64>, FeatureError> {
    band.validate(rate)?;
    if signal.len() < MIN_SAMPLES {
        return Err(FeatureError::TooFewSamples { needed: MIN_SAMPLES, got: signal.len() });
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(FeatureError::NonFinite);
    }
    let n = signal.len();
    let pad = ((3.0 * rate / band.low).ceil() as usize).min(n - 1);

    // odd reflection about both end points
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * signal[0] - signal[i]));
    ext.extend_from_slice(signal);
    ext.extend((1..=pad).map(|i| 2.0 * signal[n - 1] - signal[n - 1 - i]));

    let sections = band_sections(band, rate);
    for s in &sections {
        s.run(&mut ext);
    }
    ext.reverse();
    for s in &sections {
        s.run(&mut ext);
    }
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

/// Number of samples where the series moves from `<= threshold` to `> threshold`.
pub fn count_upward_crossings(signal: &[f64], threshold: f64) -> usize {
    signal.windows(2).filter(|w| w[0] <= threshold && w[1] > threshold).count()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandFeatures {
    /// Mean squared filtered amplitude.
    pub power: f64,
    pub crossings: usize,
}

pub fn wavelet_band_features(
    signal: &[f64],
    rate: f64,
    bands: &[Band],
    threshold: f64,
) -> Result<Vec<BandFeatures>, FeatureError> {
    bands
        .iter()
        .map(|band| {
            let f = band_pass(signal, rate, band)?;
            let power = f.iter().map(|v| v * v).sum::<f64>() / f.len() as f64;
            Ok(BandFeatures { power, crossings: count_upward_crossings(&f, threshold) })
        })
        .collect()
}

/// Crossing counts over the bands × thresholds grid, band-major.
pub fn bag_of_temporal_filters(
    signal: &[f64],
    rate: f64,
    bank: &[Band],
    thresholds: &[f64],
) -> Result<FeatureVector, FeatureError> {
    let mut values = Vec::with_capacity(bank.len() * thresholds.len());
    for band in bank {
        let f = band_pass(signal, rate, band)?;
        values.extend(thresholds.iter().map(|&t| count_upward_crossings(&f, t) as f64));
    }
    Ok(FeatureVector::new(values, Provenance::TemporalFilters))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: f64, seconds: f64) -> Vec<f64> {
        let n = (rate * seconds) as usize;
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / rate).sin()).collect()
    }

    #[test]
    fn zero_signal_has_no_power() {
        let z = vec![0.0; 200];
        let f = wavelet_band_features(&z, 100.0, &[Band::new(1.0, 3.0), Band::new(8.0, 12.0)], 0.5).unwrap();
        assert!(f.iter().all(|b| b.power == 0.0 && b.crossings == 0));
        let v = bag_of_temporal_filters(&z, 100.0, &[Band::new(1.0, 3.0)], &[0.0, 0.5]).unwrap();
        assert_eq!(v.values, vec![0.0, 0.0]);
    }

    #[test]
    fn in_band_sine_crosses_once_per_cycle() {
        let s = sine(2.0, 100.0, 10.0);
        let f = wavelet_band_features(&s, 100.0, &[Band::new(1.0, 3.0)], 0.5).unwrap();
        assert!((19..=21).contains(&f[0].crossings), "{}", f[0].crossings);
    }

    #[test]
    fn out_of_band_sine_is_attenuated() {
        let s = sine(2.0, 100.0, 10.0);
        let f = wavelet_band_features(&s, 100.0, &[Band::new(1.0, 3.0), Band::new(8.0, 12.0)], 0.5).unwrap();
        assert!(f[1].power <= 0.01 * f[0].power);
    }

    #[test]
    fn band_validation() {
        let s = sine(2.0, 100.0, 1.0);
        for band in [Band::new(0.0, 3.0), Band::new(3.0, 1.0), Band::new(10.0, 60.0)] {
            assert!(matches!(band_pass(&s, 100.0, &band), Err(FeatureError::BadBand { .. })));
        }
        assert!(band_pass(&s, 100.0, &Band::new(10.0, 50.0)).is_ok());
        assert!(matches!(band_pass(&s[..5], 100.0, &Band::new(1.0, 3.0)), Err(FeatureError::TooFewSamples { .. })));
    }

    #[test]
    fn grid_length() {
        let s = sine(2.0, 100.0, 2.0);
        let bank = [Band::new(1.0, 3.0), Band::new(4.0, 8.0), Band::new(8.0, 16.0)];
        let v = bag_of_temporal_filters(&s, 100.0, &bank, &[0.1, 0.2]).unwrap();
        assert_eq!(v.len(), 6);
    }
}
