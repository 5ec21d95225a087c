//! Rational-ratio windowed-sinc resampler (Kaiser window, 80 dB design).

use std::f64::consts::PI;

use super::AudioBuffer;

const STOPBAND_DB: f64 = 80.0;
/// Passband edge as a fraction of the lower Nyquist; the stopband starts at the Nyquist itself.
const PASSBAND_FRACTION: f64 = 0.9;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Modified Bessel function of the first kind, order zero.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
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
        (PI * x).sin() / (PI * x)
    }
}

struct PolyphaseKernel {
    up: u64,
    down: u64,
    half_taps: usize,
    /// `phases[phi][j]` weights input sample `base - half_taps + 1 + j`.
    phases: Vec<Vec<f64>>,
}

impl PolyphaseKernel {
    fn new(src: u32, dst: u32) -> Self {
        let g = gcd(src as u64, dst as u64);
        let up = dst as u64 / g;
        let down = src as u64 / g;

        let nyquist = src.min(dst) as f64 / 2.0;
        let transition = (1.0 - PASSBAND_FRACTION) * nyquist;
        let cutoff = (nyquist - transition / 2.0) / src as f64;
        let beta = 0.1102 * (STOPBAND_DB - 8.7);
        let taps = (STOPBAND_DB - 7.95) / (14.36 * transition / src as f64);
        let half_taps = (taps / 2.0).ceil() as usize + 1;

        let phases = (0..up)
            .map(|phi| {
                let frac = phi as f64 / up as f64;
                let mut row: Vec<f64> = (0..2 * half_taps)
                    .map(|j| {
                        let tau = frac + half_taps as f64 - 1.0 - j as f64;
                        let r = tau / half_taps as f64;
                        if r.abs() >= 1.0 {
                            return 0.0;
                        }
                        let window = bessel_i0(beta * (1.0 - r * r).sqrt()) / bessel_i0(beta);
                        2.0 * cutoff * sinc(2.0 * cutoff * tau) * window
                    })
                    .collect();
                let sum: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= sum);
                row
            })
            .collect();
        Self {
            up,
            down,
            half_taps,
            phases,
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let out_len = (x.len() as u64 * self.up).div_ceil(self.down) as usize;
        (0..out_len)
            .map(|n| {
                let pos = n as u64 * self.down;
                let base = (pos / self.up) as i64;
                let phase = &self.phases[(pos % self.up) as usize];
                let first = base - self.half_taps as i64 + 1;
                let mut acc = 0.0;
                for (j, w) in phase.iter().enumerate() {
                    let i = first + j as i64;
                    if i >= 0 && (i as usize) < x.len() {
                        acc += w * x[i as usize];
                    }
                }
                acc
            })
            .collect()
    }
}

/// Converts `audio` to `target_sr`. Content above the lower of the two
/// Nyquist frequencies is attenuated by at least 60 dB.
pub fn resample(audio: &AudioBuffer, target_sr: u32) -> AudioBuffer {
    assert!(target_sr > 0, "target sample rate must be positive");
    if audio.sample_rate == target_sr || audio.samples.is_empty() {
        let samples = if audio.samples.is_empty() {
            Vec::new()
        } else {
            audio.samples.clone()
        };
        return AudioBuffer {
            samples,
            sample_rate: target_sr,
        };
    }
    let kernel = PolyphaseKernel::new(audio.sample_rate, target_sr);
    AudioBuffer {
        samples: kernel.apply(&audio.samples),
        sample_rate: target_sr,
    }
}
