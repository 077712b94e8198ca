//! Small statistics kit: sample means, batch means, KS distance, DKW bound.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("empty sample")]
    EmptySample,
    #[error("need at least {needed} observations for {batches} batches, got {got}")]
    TooFewForBatches {
        needed: usize,
        batches: usize,
        got: usize,
    },
}

/// Point estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

impl Estimate {
    /// `|mean - target|` in standard errors. Infinite when `se` is zero and
    /// the mean misses the target.
    pub fn z_score(&self, target: f64) -> f64 {
        let gap = (self.mean - target).abs();
        if gap == 0.0 {
            0.0
        } else {
            gap / self.se
        }
    }

    pub fn within(&self, target: f64, k: f64) -> bool {
        self.z_score(target) <= k
    }
}

/// Mean and i.i.d. standard error.
pub fn mean_se(xs: &[f64]) -> Result<Estimate, StatsError> {
    if xs.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let se = if xs.len() > 1 {
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(Estimate {
        mean,
        se,
        count: xs.len(),
    })
}

/// Batch-means standard error of the mean of a serially dependent series.
/// The tail that does not fill a whole batch is dropped from the s.e. but
/// kept in the mean.
pub fn batch_means(xs: &[f64], batches: usize) -> Result<Estimate, StatsError> {
    if xs.len() < 2 * batches {
        return Err(StatsError::TooFewForBatches {
            needed: 2 * batches,
            batches,
            got: xs.len(),
        });
    }
    let size = xs.len() / batches;
    let means: Vec<f64> = xs
        .chunks_exact(size)
        .take(batches)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let se = mean_se(&means)?.se;
    Ok(Estimate {
        mean: xs.iter().sum::<f64>() / xs.len() as f64,
        se,
        count: xs.len(),
    })
}

/// Kolmogorov–Smirnov distance between the empirical law of `sorted` and
/// `cdf`.
pub fn ks_distance(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64, StatsError> {
    if sorted.is_empty() {
        return Err(StatsError::EmptySample);
    }
    debug_assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
    let n = sorted.len() as f64;
    Ok(sorted.iter().enumerate().fold(0.0, |acc: f64, (i, &x)| {
        let f = cdf(x);
        let above = (i + 1) as f64 / n - f;
        let below = f - i as f64 / n;
        acc.max(above.abs()).max(below.abs())
    }))
}

/// Sorts in place and returns the KS distance.
pub fn ks_unsorted(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> Result<f64, StatsError> {
    samples.sort_by(f64::total_cmp);
    ks_distance(samples, cdf)
}

/// Dvoretzky–Kiefer–Wolfowitz radius `sqrt(ln(2 / alpha) / (2 n))`.
pub fn dkw_bound(n: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt()
}

pub fn median(xs: &mut [f64]) -> Result<f64, StatsError> {
    if xs.is_empty() {
        return Err(StatsError::EmptySample);
    }
    xs.sort_by(f64::total_cmp);
    let k = xs.len() / 2;
    Ok(if xs.len() % 2 == 1 {
        xs[k]
    } else {
        0.5 * (xs[k - 1] + xs[k])
    })
}
