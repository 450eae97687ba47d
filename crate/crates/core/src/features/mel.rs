use ndarray::Array2;

use crate::error::{Error, Result};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filterbank, `n_mels x n_bins`, spanning 0 Hz to Nyquist.
///
/// Each triangle has unit height at its centre frequency; `n_bins` linear bins are
/// assumed to cover `[0, sample_rate / 2]` evenly.
pub fn mel_filterbank(n_mels: usize, n_bins: usize, sample_rate: u32) -> Result<Array2<f64>> {
    if n_mels == 0 {
        return Err(Error::InvalidArgument("n_mels must be >= 1".into()));
    }
    if n_mels > n_bins {
        return Err(Error::FilterbankOverdetermined { n_mels, n_bins });
    }
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = |k: usize| nyquist * k as f64 / (n_bins - 1).max(1) as f64;

    let mut fb = Array2::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = bin_hz(k);
            let w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            fb[[m, k]] = w;
        }
    }
    Ok(fb)
}

/// Projects a `T x F_lin` magnitude grid onto `n_mels` bands and applies `log(1 + v)`.
pub fn mel_project(spec: &Array2<f64>, n_mels: usize, sample_rate: u32) -> Result<Array2<f64>> {
    let fb = mel_filterbank(n_mels, spec.ncols(), sample_rate)?;
    Ok(spec.dot(&fb.t()).mapv(f64::ln_1p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_round_trip() {
        for hz in [0.0, 100.0, 700.0, 4000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn zero_spectrogram_maps_to_zero() {
        let spec = Array2::zeros((5, 481));
        let mel = mel_project(&spec, 128, 16_000).unwrap();
        assert_eq!(mel.dim(), (5, 128));
        assert!(mel.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rows_are_nonempty_and_adjacent_filters_cross_once() {
        let fb = mel_filterbank(128, 481, 16_000).unwrap();
        for row in fb.rows() {
            assert!(row.sum() > 0.0);
            assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
        }
        for m in 0..127 {
            // Over the shared support the difference w_m - w_{m+1} is strictly
            // decreasing, so it changes sign at most once.
            let shared: Vec<f64> = (0..481)
                .filter(|&k| fb[[m, k]] > 0.0 && fb[[m + 1, k]] > 0.0)
                .map(|k| fb[[m, k]] - fb[[m + 1, k]])
                .collect();
            assert!(shared.windows(2).all(|w| w[1] < w[0]), "filter {m}");
            let sign_changes = shared.windows(2).filter(|w| (w[0] > 0.0) != (w[1] > 0.0)).count();
            assert!(sign_changes <= 1);
            // Non-adjacent filters never overlap.
            if m + 2 < 128 {
                assert!((0..481).all(|k| fb[[m, k]] == 0.0 || fb[[m + 2, k]] == 0.0));
            }
        }
    }

    #[test]
    fn impulse_touches_at_most_two_bands() {
        for k in [0, 1, 3, 40, 200, 480] {
            let mut spec = Array2::zeros((1, 481));
            spec[[0, k]] = 1.0;
            let mel = mel_project(&spec, 128, 16_000).unwrap();
            assert!(mel.iter().filter(|&&v| v != 0.0).count() <= 2);
        }
    }

    #[test]
    fn overdetermined_is_rejected() {
        assert!(matches!(
            mel_filterbank(64, 32, 16_000),
            Err(Error::FilterbankOverdetermined { .. })
        ));
    }
}
