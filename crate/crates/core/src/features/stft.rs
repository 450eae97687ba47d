use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::{num_complex::Complex64, FftPlanner};

use super::AudioClip;
use crate::error::{Error, Result};

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Magnitude STFT, `T x (window_len / 2 + 1)`.
///
/// Frames that would read past the end of the clip are dropped, so
/// `T = 1 + (len - window_len) / hop`.
pub fn stft_magnitude(clip: &AudioClip, window_len: usize, hop: usize) -> Result<Array2<f64>> {
    if window_len == 0 || window_len % 2 != 0 || hop == 0 {
        return Err(Error::InvalidArgument(format!(
            "window_len {window_len} must be even and hop {hop} positive"
        )));
    }
    let x = &clip.samples;
    if x.len() < window_len {
        return Err(Error::ClipTooShort {
            len: x.len(),
            window: window_len,
        });
    }
    let frames = 1 + (x.len() - window_len) / hop;
    let bins = window_len / 2 + 1;
    let window = hann_window(window_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window_len);
    let mut buf = vec![Complex64::new(0.0, 0.0); window_len];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];

    let mut out = Array2::zeros((frames, bins));
    for t in 0..frames {
        let start = t * hop;
        for (n, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(window[n] * x[start + n], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (f, v) in out.row_mut(t).iter_mut().enumerate() {
            *v = buf[f].norm();
        }
    }
    Ok(out)
}
