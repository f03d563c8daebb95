//! Linear-phase FIR low-pass design and zero-phase application.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Filter order used for dataset conditioning (65 taps).
pub const DEFAULT_ORDER: usize = 64;
pub const DEFAULT_CUTOFF_HZ: f64 = 5.0;

pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let m = (len - 1) as f64;
    (0..len).map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / m).cos()).collect()
}

/// Hamming-windowed sinc taps for an even `order` (odd length), normalised to
/// unit DC gain. `cutoff` is in cycles/sample and must lie in (0, 0.5).
pub fn lowpass_taps(order: usize, cutoff: f64) -> Vec<f64> {
    assert!(order.is_multiple_of(2), "order must be even for a type-I filter");
    assert!(cutoff > 0.0 && cutoff < 0.5, "cutoff must be in (0, 1/2)");
    let center = (order / 2) as f64;
    let mut taps: Vec<f64> = hamming(order + 1)
        .into_iter()
        .enumerate()
        .map(|(n, w)| {
            let x = n as f64 - center;
            let ideal = if x == 0.0 { 2.0 * cutoff } else { (2.0 * PI * cutoff * x).sin() / (PI * x) };
            w * ideal
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Applies symmetric `taps` with the group delay removed, so the output is
/// aligned sample-for-sample with the input. Edges are reflection-padded
/// (mirrored about the end samples).
pub fn filter_zero_phase(signal: &[f64], taps: &[f64]) -> Result<Vec<f64>> {
    let order = taps.len() - 1;
    if signal.len() <= order {
        return Err(Error::SignalTooShort { len: signal.len(), order });
    }
    let half = order / 2;
    let n = signal.len();
    let padded: Vec<f64> = (0..n + 2 * half)
        .map(|i| {
            let j = i as isize - half as isize;
            let k = if j < 0 {
                -j
            } else if j >= n as isize {
                2 * (n as isize - 1) - j
            } else {
                j
            };
            signal[k as usize]
        })
        .collect();
    Ok((0..n)
        .map(|i| taps.iter().zip(&padded[i..i + taps.len()]).map(|(h, x)| h * x).sum())
        .collect())
}

/// Zero-phase low-pass at `cutoff_hz` for a signal sampled at `sample_rate_hz`,
/// using the default order-64 Hamming design.
pub fn zero_phase_lowpass(signal: &[f64], sample_rate_hz: f64, cutoff_hz: f64) -> Result<Vec<f64>> {
    let taps = lowpass_taps(DEFAULT_ORDER, cutoff_hz / sample_rate_hz);
    filter_zero_phase(signal, &taps)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// |H(f)| evaluated directly from the taps.
    fn gain(taps: &[f64], f_norm: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (n, h) in taps.iter().enumerate() {
            let w = 2.0 * PI * f_norm * n as f64;
            re += h * w.cos();
            im -= h * w.sin();
        }
        (re * re + im * im).sqrt()
    }

    fn sine(freq: f64, len: usize) -> Vec<f64> {
        (0..len).map(|i| (2.0 * PI * freq * i as f64 / 100.0).sin()).collect()
    }

    fn xcorr_peak_lag(a: &[f64], b: &[f64], max_lag: isize) -> isize {
        let n = a.len() as isize;
        (-max_lag..=max_lag)
            .map(|lag| {
                let s: f64 = (0..n)
                    .filter(|&i| (0..n).contains(&(i + lag)))
                    .map(|i| a[i as usize] * b[(i + lag) as usize])
                    .sum();
                (lag, s)
            })
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap()
            .0
    }

    #[test]
    fn design_is_symmetric_with_unit_dc_gain() {
        let taps = lowpass_taps(DEFAULT_ORDER, 0.05);
        assert_eq!(taps.len(), 65);
        for i in 0..taps.len() {
            assert!((taps[i] - taps[taps.len() - 1 - i]).abs() < 1e-15);
        }
        assert!((gain(&taps, 0.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn designed_response_meets_band_targets() {
        let taps = lowpass_taps(DEFAULT_ORDER, 0.05);
        assert!((gain(&taps, 0.01) - 1.0).abs() < 0.01);
        assert!(20.0 * gain(&taps, 0.20).log10() <= -40.0);
    }

    #[test]
    fn constant_passes_unchanged() {
        let x = vec![3.25; 300];
        let y = zero_phase_lowpass(&x, 100.0, 5.0).unwrap();
        assert!(y.iter().all(|v| (v - 3.25).abs() < 1e-6 * 3.25));
    }

    #[test]
    fn one_hertz_passes_without_lag() {
        let x = sine(1.0, 2000);
        let y = zero_phase_lowpass(&x, 100.0, 5.0).unwrap();
        let interior = &y[100..1900];
        let amp = interior.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((amp - 1.0).abs() < 0.01, "amplitude {amp}");
        assert_eq!(xcorr_peak_lag(&x, &y, 10), 0);
    }

    #[test]
    fn twenty_hertz_is_attenuated() {
        let x = sine(20.0, 2000);
        let y = zero_phase_lowpass(&x, 100.0, 5.0).unwrap();
        let amp = y[100..1900].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(20.0 * amp.log10() <= -40.0, "{} dB", 20.0 * amp.log10());
    }

    #[test]
    fn short_signal_is_rejected() {
        assert!(matches!(
            zero_phase_lowpass(&[0.0; 64], 100.0, 5.0),
            Err(Error::SignalTooShort { len: 64, order: 64 })
        ));
        assert!(zero_phase_lowpass(&[0.0; 65], 100.0, 5.0).is_ok());
    }
}
