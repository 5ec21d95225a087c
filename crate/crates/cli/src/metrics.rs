use gull_core::losses::{ReconstructionLoss, ResolutionDistance};
use gull_core::Result;

/// Reported in place of an infinite SNR.
pub const SNR_CAP_DB: f64 = 99.0;

pub fn snr_db(reference: &[f64], estimate: &[f64]) -> f64 {
    let signal: f64 = reference.iter().map(|x| x * x).sum();
    let noise: f64 = reference.iter().zip(estimate).map(|(x, s)| (x - s).powi(2)).sum();
    if noise == 0.0 {
        return SNR_CAP_DB;
    }
    if signal == 0.0 {
        return f64::NEG_INFINITY;
    }
    (10.0 * (signal / noise).log10()).min(SNR_CAP_DB)
}

/// Lag in `-max_lag..=max_lag` maximizing the cross-correlation, where a
/// positive lag means `estimate` is delayed. Ties go to the smallest |lag|.
pub fn best_lag(reference: &[f64], estimate: &[f64], max_lag: usize) -> isize {
    let max_lag = max_lag as isize;
    let mut best = (0isize, f64::NEG_INFINITY);
    let mut lags: Vec<isize> = (-max_lag..=max_lag).collect();
    lags.sort_by_key(|l| (l.abs(), *l));
    for lag in lags {
        let corr: f64 = aligned(reference, estimate, lag)
            .map(|(x, s)| x * s)
            .sum();
        if corr > best.1 {
            best = (lag, corr);
        }
    }
    best.0
}

fn aligned<'a>(reference: &'a [f64], estimate: &'a [f64], lag: isize) -> impl Iterator<Item = (f64, f64)> + 'a {
    let skip_ref = (-lag).max(0) as usize;
    let skip_est = lag.max(0) as usize;
    reference
        .iter()
        .skip(skip_ref)
        .zip(estimate.iter().skip(skip_est))
        .map(|(a, b)| (*a, *b))
}

/// Overlapping parts of both signals after shifting by `lag`.
pub fn align(reference: &[f64], estimate: &[f64], lag: isize) -> (Vec<f64>, Vec<f64>) {
    aligned(reference, estimate, lag).unzip()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub lag: isize,
    pub snr_db: f64,
    pub distances: Option<Vec<ResolutionDistance>>,
}

pub fn evaluate(reference: &[f64], estimate: &[f64], sample_rate: u32, max_lag: usize) -> Result<Report> {
    let lag = best_lag(reference, estimate, max_lag);
    let (x, s) = align(reference, estimate, lag);
    let distances = if x.iter().any(|v| *v != 0.0) {
        Some(ReconstructionLoss::new(sample_rate).per_resolution(&s, &x)?)
    } else {
        None
    };
    Ok(Report {
        lag,
        snr_db: snr_db(&x, &s),
        distances,
    })
}
