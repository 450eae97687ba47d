//! Band-limited resampling with a Kaiser-windowed sinc kernel.

use std::f64::consts::PI;

use super::AudioClip;
use crate::error::{Error, Result};

/// Kernel length per output sample.
pub const SINC_TAPS: usize = 64;
const KAISER_BETA: f64 = 8.0;
/// Cutoff as a fraction of the lower Nyquist frequency.
const CUTOFF: f64 = 0.95;

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        let r = half / k as f64;
        term *= r * r;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if clip.samples.is_empty() {
        return Err(Error::EmptyClip);
    }
    if target_rate == 0 || clip.sample_rate == 0 {
        return Err(Error::InvalidArgument("sample rates must be > 0".into()));
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }

    let ratio = target_rate as f64 / clip.sample_rate as f64;
    let n_in = clip.samples.len();
    let n_out = ((n_in as f64) * ratio).round().max(1.0) as usize;
    let cutoff = CUTOFF * ratio.min(1.0);
    let half = (SINC_TAPS / 2) as f64;
    let i0_beta = bessel_i0(KAISER_BETA);
    let x = &clip.samples;

    let mut out = Vec::with_capacity(n_out);
    let mut taps = [0.0; SINC_TAPS];
    for j in 0..n_out {
        let pos = j as f64 / ratio;
        let first = pos.floor() as isize - (SINC_TAPS as isize / 2 - 1);
        let mut norm = 0.0;
        for (t, tap) in taps.iter_mut().enumerate() {
            let d = pos - (first + t as isize) as f64;
            let r = d / half;
            let w = if r.abs() < 1.0 {
                bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta
            } else {
                0.0
            };
            *tap = cutoff * sinc(cutoff * d) * w;
            norm += *tap;
        }
        let mut acc = 0.0;
        for (t, tap) in taps.iter().enumerate() {
            let idx = first + t as isize;
            if idx >= 0 && (idx as usize) < n_in {
                acc += tap * x[idx as usize];
            }
        }
        // Unit DC gain regardless of the fractional phase.
        out.push(acc / norm);
    }

    Ok(AudioClip {
        samples: out,
        sample_rate: target_rate,
        source_path: clip.source_path.clone(),
        label: clip.label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, secs: f64) -> Vec<f64> {
        let n = (rate as f64 * secs) as usize;
        (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin())
            .collect()
    }

    #[test]
    fn same_rate_is_identity() {
        let clip = AudioClip::new(sine(440.0, 16_000, 0.1), 16_000);
        assert_eq!(resample(&clip, 16_000).unwrap(), clip);
    }

    #[test]
    fn downsampled_sine_matches_analytic() {
        let clip = AudioClip::new(sine(440.0, 48_000, 0.5), 48_000);
        let out = resample(&clip, 16_000).unwrap();
        let expected = sine(440.0, 16_000, 0.5);
        assert_eq!(out.samples.len(), expected.len());
        let trim = SINC_TAPS;
        let max_err = out.samples[trim..expected.len() - trim]
            .iter()
            .zip(&expected[trim..expected.len() - trim])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-3, "max error {max_err}");
    }

    #[test]
    fn upsampling_doubles_length() {
        for n in [100, 801, 8000] {
            let clip = AudioClip::new(sine(300.0, 8000, n as f64 / 8000.0), 8000);
            let out = resample(&clip, 16_000).unwrap();
            assert!((out.samples.len() as isize - 2 * n as isize).abs() <= 1);
            assert_eq!(out.sample_rate, 16_000);
        }
    }

    #[test]
    fn empty_clip_is_rejected() {
        let clip = AudioClip::new(vec![], 8000);
        assert!(matches!(resample(&clip, 16_000), Err(Error::EmptyClip)));
    }

    #[test]
    fn bessel_matches_known_value() {
        // I0(1) = 1.2660658777520082
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_2).abs() < 1e-14);
    }
}
