//! Skew Brownian motion `sigma * W_beta`.
//!
//! Transition density `p_t(x, y) = phi_t(x - y) + beta sign(y) phi_t(|x| + |y|)`
//! with `phi_t` the centred normal density of variance `t`. For `sigma != 1`
//! every formula is applied to `(x / sigma, y / sigma)`.

use rand::{Rng, RngCore};
use serde::Serialize;
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::integer_dist::stream_rng;
use crate::lab::stats::{mean_se, Estimate};
use crate::walk::LedgerSummary;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkewError {
    #[error("skewness {0} is outside [-1, 1]")]
    BetaOutOfRange(f64),
    #[error("scale {0} is not positive")]
    NonPositiveScale(f64),
    #[error("time {0} is not positive")]
    NonPositiveTime(f64),
    #[error("time grid must start at 0 and increase")]
    BadGrid,
}

/// Tolerance on the probability argument of the inverse-CDF bisection.
pub const INVERSION_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SkewBm {
    beta: f64,
    sigma: f64,
}

fn phi(t: f64, x: f64) -> f64 {
    (-x * x / (2.0 * t)).exp() / (2.0 * std::f64::consts::PI * t).sqrt()
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn sign(y: f64) -> f64 {
    if y > 0.0 {
        1.0
    } else if y < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl SkewBm {
    pub fn new(beta: f64, sigma: f64) -> Result<Self, SkewError> {
        if !(-1.0..=1.0).contains(&beta) {
            return Err(SkewError::BetaOutOfRange(beta));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(SkewError::NonPositiveScale(sigma));
        }
        Ok(Self { beta, sigma })
    }

    /// `W_beta` with unit scale.
    pub fn standard(beta: f64) -> Result<Self, SkewError> {
        Self::new(beta, 1.0)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    fn check_time(t: f64) -> Result<(), SkewError> {
        if t > 0.0 && t.is_finite() {
            Ok(())
        } else {
            Err(SkewError::NonPositiveTime(t))
        }
    }

    /// Transition density from `x` to `y` over time `t`. `sign(0) = 0`.
    pub fn density(&self, t: f64, x: f64, y: f64) -> Result<f64, SkewError> {
        Self::check_time(t)?;
        let (x, y) = (x / self.sigma, y / self.sigma);
        let p = phi(t, x - y) + self.beta * sign(y) * phi(t, x.abs() + y.abs());
        Ok(p / self.sigma)
    }

    /// `P(X_t <= y | X_0 = x)`.
    ///
    /// With `a = |x|` and `s = sqrt(t)`:
    /// `Phi((y - x)/s) - beta Phi((y - a)/s)` for `y <= 0`, and
    /// `Phi((y - x)/s) - beta Phi(-a/s) + beta (Phi((a + y)/s) - Phi(a/s))` for `y > 0`.
    pub fn transition_cdf(&self, t: f64, x: f64, y: f64) -> Result<f64, SkewError> {
        Self::check_time(t)?;
        Ok(self.cdf_unchecked(t, x, y))
    }

    fn cdf_unchecked(&self, t: f64, x: f64, y: f64) -> f64 {
        if y == f64::INFINITY {
            return 1.0;
        }
        if y == f64::NEG_INFINITY {
            return 0.0;
        }
        let s = t.sqrt();
        let (x, y) = (x / self.sigma, y / self.sigma);
        let a = x.abs();
        let free = normal_cdf((y - x) / s);
        let skew = if y <= 0.0 {
            -normal_cdf((y - a) / s)
        } else {
            // Phi((a+y)/s) - Phi(a/s) - Phi(-a/s), via upper tails for accuracy
            0.5 * erfc(a / (s * std::f64::consts::SQRT_2))
                - 0.5 * erfc((a + y) / (s * std::f64::consts::SQRT_2))
                - normal_cdf(-a / s)
        };
        (free + self.beta * skew).clamp(0.0, 1.0)
    }

    /// Law of the value at time `t` started from 0.
    pub fn marginal_cdf(&self, t: f64, y: f64) -> Result<f64, SkewError> {
        self.transition_cdf(t, 0.0, y)
    }

    /// Solves `F(y) = u` for the transition from `x` over `t` by bisection.
    pub fn inverse_cdf(&self, t: f64, x: f64, u: f64) -> Result<f64, SkewError> {
        Self::check_time(t)?;
        let width = 10.0 * self.sigma * t.sqrt() * (1.0 + self.beta.abs());
        let (mut lo, mut hi) = (x - width, x + width);
        let mut grow = width;
        while self.cdf_unchecked(t, x, lo) > u {
            grow *= 2.0;
            lo = x - grow;
        }
        grow = width;
        while self.cdf_unchecked(t, x, hi) < u {
            grow *= 2.0;
            hi = x + grow;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let f = self.cdf_unchecked(t, x, mid);
            if (f - u).abs() <= INVERSION_TOL || mid == lo || mid == hi {
                return Ok(mid);
            }
            if f < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Exact Markov sampling on `grid` (which must start at 0): each value is
    /// drawn from the transition law given the previous one.
    pub fn sample_path(&self, grid: &[f64], seed: u64, stream: u64) -> Result<Vec<f64>, SkewError> {
        let unit = Self::standard(self.beta)?;
        let path = unit.sample_unit_path(grid, seed, stream)?;
        Ok(path.into_iter().map(|v| self.sigma * v).collect())
    }

    fn sample_unit_path(
        &self,
        grid: &[f64],
        seed: u64,
        stream: u64,
    ) -> Result<Vec<f64>, SkewError> {
        if grid.first() != Some(&0.0) || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SkewError::BadGrid);
        }
        let mut rng = stream_rng(seed, stream);
        let mut out = Vec::with_capacity(grid.len());
        let mut x = 0.0;
        out.push(x);
        for w in grid.windows(2) {
            let u: f64 = rng.random();
            x = self.inverse_cdf(w[1] - w[0], x, u)?;
            out.push(x);
        }
        Ok(out)
    }

    /// Approximate sampler at lattice resolution `resolution`: a simple walk
    /// is reflected at 0 and each of its excursions is made positive with
    /// probability `(1 + beta) / 2`, independently; values are read at
    /// `[resolution * t]` and scaled by `sigma / sqrt(resolution)`.
    ///
    /// Steps and signs use separate streams, so `beta = -1` is the mirror
    /// image of `beta = 1` under the same seed.
    pub fn sample_by_excursion_flipping(
        &self,
        resolution: u64,
        grid: &[f64],
        seed: u64,
        stream: u64,
    ) -> Result<Vec<f64>, SkewError> {
        if grid.iter().any(|&t| t < 0.0) || grid.windows(2).any(|w| w[1] < w[0]) {
            return Err(SkewError::BadGrid);
        }
        let mut steps_rng = stream_rng(seed, 2 * stream);
        let mut signs_rng = stream_rng(seed, 2 * stream + 1);
        let p_plus = 0.5 * (1.0 + self.beta);
        let scale = self.sigma / (resolution as f64).sqrt();

        let mut out = Vec::with_capacity(grid.len());
        let mut level: i64 = 0;
        let mut sign = 1.0;
        let mut k: u64 = 0;
        let mut bits = 0u64;
        let mut left = 0u32;
        for &t in grid {
            let target = (resolution as f64 * t).floor() as u64;
            while k < target {
                if left == 0 {
                    bits = steps_rng.next_u64();
                    left = 64;
                }
                if level == 0 {
                    let u: f64 = signs_rng.random();
                    sign = if u < p_plus { 1.0 } else { -1.0 };
                    level = 1;
                } else if bits & 1 == 1 {
                    level += 1;
                } else {
                    level -= 1;
                }
                bits >>= 1;
                left -= 1;
                k += 1;
            }
            out.push(sign * level as f64 * scale);
        }
        Ok(out)
    }
}

/// Moment summaries of the martingale characterization computed from walk
/// ledgers at scale `n`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticSeries {
    pub times: Vec<f64>,
    pub beta: f64,
    pub sigma: f64,
    pub scale: u64,
    /// `M±_n(t) = M±([nt]) / sqrt(n)`.
    pub m_plus: Vec<Estimate>,
    pub m_minus: Vec<Estimate>,
    /// `M±_n(t)^2 - sigma^2 * (steps outside on the ± side before [nt]) / n`.
    pub qv_gap_plus: Vec<Estimate>,
    pub qv_gap_minus: Vec<Estimate>,
    /// `sigma^2 * occupation / n` alone, for comparing the two sides.
    pub qv_plus: Vec<Estimate>,
    pub qv_minus: Vec<Estimate>,
    /// `X±_n(t) - (1 ± beta)/2 V_n(t)` with `V = 2 L+ / (1 + beta)`
    /// (`2 L- / (1 - beta)` when `beta = -1`).
    pub m_candidate_plus: Vec<Estimate>,
    pub m_candidate_minus: Vec<Estimate>,
    /// Increments `M±_n(t) - M±_n(s)` for the configured `(s, t)` index pairs.
    pub increments: Vec<IncrementStat>,
    /// `V(0) = 0` and `V` nondecreasing along every path.
    pub v_monotone: bool,
    /// Share of `L` increments taken from outside the membrane (zero by
    /// construction).
    pub localization_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IncrementStat {
    pub s: f64,
    pub t: f64,
    pub plus: Estimate,
    pub minus: Estimate,
}

/// Builds [`DiagnosticSeries`] from per-path snapshots: `paths[p][k]` is the
/// ledger of path `p` at step `[n * times[k]]`; `m` is the membrane
/// half-width.
pub fn martingale_diagnostics(
    paths: &[Vec<LedgerSummary>],
    times: &[f64],
    pairs: &[(usize, usize)],
    scale: u64,
    m: i64,
    beta: f64,
    sigma: f64,
) -> Result<DiagnosticSeries, crate::lab::stats::StatsError> {
    let root = (scale as f64).sqrt();
    let s2 = sigma * sigma;
    let col = |k: usize, f: &dyn Fn(&LedgerSummary) -> f64| -> Vec<f64> {
        paths.iter().map(|p| f(&p[k])).collect()
    };
    let per_time = |f: &dyn Fn(&LedgerSummary) -> f64| {
        (0..times.len())
            .map(|k| mean_se(&col(k, f)))
            .collect::<Result<Vec<_>, _>>()
    };
    let up = |s: &LedgerSummary| {
        if s.position > m {
            s.position as f64
        } else {
            0.0
        }
    };
    let down = |s: &LedgerSummary| {
        if -s.position > m {
            -s.position as f64
        } else {
            0.0
        }
    };
    let v = |s: &LedgerSummary| {
        if beta > -1.0 {
            2.0 * s.l_plus as f64 / (1.0 + beta)
        } else {
            2.0 * s.l_minus as f64 / (1.0 - beta)
        }
    };

    let increments = pairs
        .iter()
        .map(|&(a, b)| {
            let plus: Vec<f64> = paths
                .iter()
                .map(|p| (p[b].m_plus - p[a].m_plus) as f64 / root)
                .collect();
            let minus: Vec<f64> = paths
                .iter()
                .map(|p| (p[b].m_minus - p[a].m_minus) as f64 / root)
                .collect();
            Ok(IncrementStat {
                s: times[a],
                t: times[b],
                plus: mean_se(&plus)?,
                minus: mean_se(&minus)?,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let v_monotone = paths.iter().all(|p| {
        p.windows(2)
            .all(|w| w[1].l_plus >= w[0].l_plus && w[1].l_minus >= w[0].l_minus)
            && p.iter().all(|s| s.l_plus >= 0 && s.l_minus >= 0)
    });
    let (outside, total) = paths
        .iter()
        .filter_map(|p| p.last())
        .fold((0u64, 0u64), |(o, t), s| {
            (o + s.l_steps_outside, t + s.l_increments)
        });

    Ok(DiagnosticSeries {
        times: times.to_vec(),
        beta,
        sigma,
        scale,
        m_plus: per_time(&|s| s.m_plus as f64 / root)?,
        m_minus: per_time(&|s| s.m_minus as f64 / root)?,
        qv_gap_plus: per_time(&|s| {
            (s.m_plus as f64).powi(2) / scale as f64 - s2 * s.occupation_plus as f64 / scale as f64
        })?,
        qv_gap_minus: per_time(&|s| {
            (s.m_minus as f64).powi(2) / scale as f64
                - s2 * s.occupation_minus as f64 / scale as f64
        })?,
        qv_plus: per_time(&|s| s2 * s.occupation_plus as f64 / scale as f64)?,
        qv_minus: per_time(&|s| s2 * s.occupation_minus as f64 / scale as f64)?,
        m_candidate_plus: per_time(&|s| (up(s) - 0.5 * (1.0 + beta) * v(s)) / root)?,
        m_candidate_minus: per_time(&|s| (down(s) - 0.5 * (1.0 - beta) * v(s)) / root)?,
        increments,
        v_monotone,
        localization_fraction: if total == 0 {
            0.0
        } else {
            outside as f64 / total as f64
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lab::stats::{dkw_bound, ks_unsorted};

    /// Composite Simpson on `[a, b]` with `n` (even) panels.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(a + i as f64 * h);
        }
        acc * h / 3.0
    }

    /// Integral over the real line, split at the discontinuity at 0; panel
    /// endpoints at 0 take the one-sided limits.
    fn integrate_line(f: impl Fn(f64) -> f64 + Copy, reach: f64) -> f64 {
        integrate_to(f, -reach, 0.0, 4000) + integrate_to(f, 0.0, reach, 4000)
    }

    /// Simpson on `[a, b]` with `a`, `b` on one side of 0.
    fn integrate_to(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let side = if a + b > 0.0 {
            f64::MIN_POSITIVE
        } else {
            -f64::MIN_POSITIVE
        };
        simpson(|u| f(if u == 0.0 { side } else { u }), a, b, n)
    }

    #[test]
    fn rejects_bad_parameters() {
        assert_eq!(SkewBm::new(1.5, 1.0), Err(SkewError::BetaOutOfRange(1.5)));
        assert_eq!(SkewBm::new(0.0, 0.0), Err(SkewError::NonPositiveScale(0.0)));
        let bm = SkewBm::standard(0.3).unwrap();
        assert_eq!(
            bm.density(0.0, 0.0, 1.0),
            Err(SkewError::NonPositiveTime(0.0))
        );
        assert_eq!(
            bm.transition_cdf(-1.0, 0.0, 1.0),
            Err(SkewError::NonPositiveTime(-1.0))
        );
    }

    #[test]
    fn density_examples() {
        let bm = SkewBm::standard(0.0).unwrap();
        for (t, x, y) in [(1.0, 0.3, -0.7), (0.2, -1.0, 2.0), (4.0, 0.0, 0.0)] {
            assert_eq!(bm.density(t, x, y).unwrap(), phi(t, x - y));
        }
        let reflected = SkewBm::standard(1.0).unwrap();
        assert_eq!(reflected.density(1.0, 0.0, -0.3).unwrap(), 0.0);
        let bm = SkewBm::standard(0.5).unwrap();
        // 1.5 * phi_1(1), phi_1(1) = 0.24197072451914337
        let p = bm.density(1.0, 0.0, 1.0).unwrap();
        assert!((p - 1.5 * 0.241_970_724_519_143_37).abs() < 1e-15);
        assert!((p - 0.362_956_09).abs() < 1e-8);
        assert_eq!(bm.density(1.0, 0.4, 0.0).unwrap(), phi(1.0, 0.4));
    }

    #[test]
    fn density_normalized() {
        for beta in [-1.0, -0.4, 0.0, 0.5, 1.0] {
            for sigma in [1.0, 1.7] {
                let bm = SkewBm::new(beta, sigma).unwrap();
                for (t, x) in [(1.0, 0.0), (0.5, -0.8), (2.0, 1.3), (0.1, 0.05)] {
                    let total = integrate_line(|y| bm.density(t, x, y).unwrap(), 40.0);
                    assert!(
                        (total - 1.0).abs() < 1e-8,
                        "beta {beta} t {t} x {x}: {total}"
                    );
                }
            }
        }
    }

    #[test]
    fn cdf_examples() {
        let bm = SkewBm::standard(0.5).unwrap();
        assert_eq!(bm.transition_cdf(1.0, 0.3, f64::INFINITY).unwrap(), 1.0);
        assert_eq!(bm.transition_cdf(1.0, 0.3, f64::NEG_INFINITY).unwrap(), 0.0);
        assert!((bm.transition_cdf(1.0, 0.0, 0.0).unwrap() - 0.25).abs() < 1e-15);
        let neg = integrate_to(|y| bm.density(1.0, 0.0, y).unwrap(), -40.0, 0.0, 8000);
        assert!((neg - 0.25).abs() < 1e-10);

        let plain = SkewBm::standard(0.0).unwrap();
        for (t, x, y) in [(1.0, 0.0, 0.5), (2.0, -1.0, 0.3), (0.3, 0.2, -0.4)] {
            let expected = normal_cdf((y - x) / f64::sqrt(t));
            assert!((plain.transition_cdf(t, x, y).unwrap() - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn cdf_is_integral_of_density() {
        for beta in [-0.7, 0.0, 0.5, 1.0] {
            let bm = SkewBm::new(beta, 1.3).unwrap();
            for (t, x) in [(1.0, 0.0), (0.4, -0.6), (2.5, 1.1)] {
                let mut prev = 0.0;
                for k in -12..=12 {
                    let y = k as f64 * 0.35;
                    let f = |u: f64| bm.density(t, x, u).unwrap();
                    let lo = -40.0;
                    let numeric = if y <= 0.0 {
                        integrate_to(f, lo, y, 8000)
                    } else {
                        integrate_to(f, lo, 0.0, 8000) + integrate_to(f, 0.0, y, 8000)
                    };
                    let cdf = bm.transition_cdf(t, x, y).unwrap();
                    assert!(
                        (cdf - numeric).abs() < 1e-10,
                        "beta {beta} t {t} x {x} y {y}: {cdf} vs {numeric}"
                    );
                    assert!(cdf >= prev);
                    prev = cdf;
                }
            }
        }
    }

    #[test]
    fn chapman_kolmogorov() {
        for beta in [-0.6, 0.0, 0.8] {
            let bm = SkewBm::standard(beta).unwrap();
            for (s, t) in [(0.3, 0.7), (1.0, 0.5)] {
                for (x, y) in [(0.0, 0.4), (-0.5, 0.9), (0.7, -1.2), (0.2, 0.0)] {
                    let lhs = integrate_line(
                        |z| bm.density(s, x, z).unwrap() * bm.density(t, z, y).unwrap(),
                        30.0,
                    );
                    let rhs = bm.density(s + t, x, y).unwrap();
                    assert!(
                        (lhs - rhs).abs() < 1e-6,
                        "beta {beta} s {s} t {t} x {x} y {y}"
                    );
                }
            }
        }
    }

    #[test]
    fn inverse_cdf_round_trip() {
        let bm = SkewBm::new(0.5, 2.0).unwrap();
        for u in [1e-9, 0.1, 0.25, 0.6, 0.999_999] {
            let y = bm.inverse_cdf(0.8, -0.3, u).unwrap();
            assert!((bm.transition_cdf(0.8, -0.3, y).unwrap() - u).abs() <= 1e-12);
        }
    }

    #[test]
    fn exact_sampler_gaussian_increments() {
        let bm = SkewBm::standard(0.0).unwrap();
        let n = 100_000;
        let dt = 0.5;
        let mut incs: Vec<f64> = (0..n)
            .map(|i| {
                let p = bm.sample_path(&[0.0, 0.3, 0.3 + dt], 77, i).unwrap();
                p[2] - p[1]
            })
            .collect();
        let d = ks_unsorted(&mut incs, |z| normal_cdf(z / dt.sqrt())).unwrap();
        assert!(d < dkw_bound(n as usize, 0.01), "{d}");
    }

    #[test]
    fn reflected_sampler_stays_nonnegative() {
        let bm = SkewBm::standard(1.0).unwrap();
        let grid: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        for seed in 0..50 {
            assert!(bm
                .sample_path(&grid, seed, 0)
                .unwrap()
                .iter()
                .all(|&v| v >= 0.0));
        }
        assert_eq!(bm.sample_path(&[0.1, 0.2], 0, 0), Err(SkewError::BadGrid));
    }

    #[test]
    fn positive_side_frequency() {
        let beta = 0.4;
        let bm = SkewBm::standard(beta).unwrap();
        let n = 100_000u64;
        let hits: Vec<f64> = (0..n)
            .map(|i| f64::from(bm.sample_path(&[0.0, 1.0], 5, i).unwrap()[1] > 0.0))
            .collect();
        let est = mean_se(&hits).unwrap();
        assert!(est.within(0.5 * (1.0 + beta), 3.0), "{est:?}");
    }

    #[test]
    fn scale_is_a_pure_multiplier() {
        let grid = [0.0, 0.25, 1.0, 1.5];
        let unit = SkewBm::standard(-0.3)
            .unwrap()
            .sample_path(&grid, 9, 2)
            .unwrap();
        let scaled = SkewBm::new(-0.3, 2.5)
            .unwrap()
            .sample_path(&grid, 9, 2)
            .unwrap();
        for (a, b) in unit.iter().zip(&scaled) {
            assert_eq!(2.5 * a, *b);
        }
    }

    #[test]
    fn flipping_extremes() {
        let grid: Vec<f64> = (0..40).map(|i| i as f64 * 0.05).collect();
        let up = SkewBm::standard(1.0).unwrap();
        let down = SkewBm::standard(-1.0).unwrap();
        for seed in 0..20 {
            let a = up
                .sample_by_excursion_flipping(400, &grid, seed, 1)
                .unwrap();
            let b = down
                .sample_by_excursion_flipping(400, &grid, seed, 1)
                .unwrap();
            assert!(a.iter().all(|&v| v >= 0.0));
            let mirrored: Vec<f64> = a.iter().map(|v| -v).collect();
            assert_eq!(b, mirrored);
        }
    }
}
