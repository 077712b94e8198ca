//! Exact analysis of the embedded membrane chain.
//!
//! The free walk launched at `y` outside the membrane enters `A` at a random
//! point; those first-entrance laws solve a banded harmonic system on a
//! truncated half-line. From them we assemble the transition matrix of the
//! embedded chain `Y`, its stationary law `pi`, and the limit skewness
//! `gamma = (e+ - e-) / (e+ + e-)` with `e± = E_pi (X(1) - X(alpha_1))^±`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::integer_dist::{truncate_tail, DistError, IntegerPmf};
use crate::walk::{ModelError, WalkModel};

/// Hard cap on the truncated half-line, in states.
pub const MAX_BAND_STATES: i64 = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyzerError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("first-entrance laws did not settle below {tol} within {states} band states")]
    NoConvergence { states: i64, tol: f64 },
    #[error("launch point {0} lies outside the kernel band")]
    BandTooSmall(i64),
    #[error("stationary system is singular")]
    SingularSystem,
    #[error("stationary residual {0:e} exceeds 1e-10")]
    StationaryResidual(f64),
    #[error("no membrane jump ever leaves the membrane (e+ + e- = 0)")]
    DegenerateDenominator,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnalyzerOptions {
    /// Stopping tolerance on the max change of a kernel row when the band doubles.
    pub tol: f64,
    /// Tail mass that may be cut from each membrane law.
    pub eta_eps: f64,
    pub max_states: i64,
}

impl Default for AnalyzerOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            eta_eps: 1e-8,
            max_states: MAX_BAND_STATES,
        }
    }
}

/// First-entrance rows for launch points on one side of the membrane.
#[derive(Clone, Debug, PartialEq)]
struct SideRows {
    /// Largest `|y|` with a stored row.
    reach: i64,
    /// Truncation level `M` of the final solve.
    top: i64,
    /// Row-major, `width` entries per launch point `|y| = m + 1 ..= reach`,
    /// columns ordered `-m ..= m`.
    rows: Vec<f64>,
}

/// First-entrance laws `h(y, .)` over `A` for `m < |y| <= reach`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReentryKernel {
    m: i64,
    upper: SideRows,
    lower: SideRows,
}

impl ReentryKernel {
    pub fn m(&self) -> i64 {
        self.m
    }

    /// `h(y, -m ..= m)`, or `None` if `y` is in the membrane or beyond reach.
    pub fn row(&self, y: i64) -> Option<&[f64]> {
        let m = self.m;
        let side = if y > m {
            &self.upper
        } else if y < -m {
            &self.lower
        } else {
            return None;
        };
        let k = y.abs() - m - 1;
        if y.abs() > side.reach {
            return None;
        }
        let w = (2 * m + 1) as usize;
        let k = k as usize;
        Some(&side.rows[k * w..(k + 1) * w])
    }

    /// Furthest launch points with rows, `(upper, lower)` as `|y|`.
    pub fn reach(&self) -> (i64, i64) {
        (self.upper.reach, self.lower.reach)
    }

    /// Truncation levels used by the final solves, `(upper, lower)`.
    pub fn band(&self) -> (i64, i64) {
        (self.upper.top, self.lower.top)
    }
}

/// First-entrance laws into `A` for the walk with steps `step` started above
/// `m`, on the lattice truncated at `top`. Steps that would land above `top`
/// are sent to the nearest state below `top` in the same residue class modulo
/// the step span. Returns rows for `y = m + 1 ..= top`.
fn upper_entrance(step: &IntegerPmf, m: i64, top: i64) -> Vec<f64> {
    let n = (top - m) as usize;
    let bw = (2 * m + 1) as usize;
    let w = bw;
    let g = step.span().max(1);
    let cols = 2 * bw + 1;
    // band[r * cols + (c + bw - r)] holds A[r][c]
    let mut band = vec![0.0; n * cols];
    let mut rhs = vec![0.0; n * w];
    for r in 0..n {
        let y = m + 1 + r as i64;
        band[r * cols + bw] += 1.0;
        for &(d, p) in step.atoms() {
            let z = y + d;
            if z <= m {
                rhs[r * w + (z + m) as usize] += p;
            } else {
                let z = if z > top {
                    z - g * ((z - top + g - 1) / g)
                } else {
                    z
                };
                let c = (z - m - 1) as usize;
                band[r * cols + c + bw - r] -= p;
            }
        }
    }

    // Elimination without pivoting: I - Q is a nonsingular M-matrix.
    for k in 0..n {
        let pivot = band[k * cols + bw];
        let last = (k + bw).min(n - 1);
        for i in k + 1..=last {
            let f = band[i * cols + k + bw - i] / pivot;
            if f == 0.0 {
                continue;
            }
            for j in k..=last.min(k + bw) {
                band[i * cols + j + bw - i] -= f * band[k * cols + j + bw - k];
            }
            for c in 0..w {
                rhs[i * w + c] -= f * rhs[k * w + c];
            }
        }
    }
    for k in (0..n).rev() {
        let last = (k + bw).min(n - 1);
        for c in 0..w {
            let mut acc = rhs[k * w + c];
            for j in k + 1..=last {
                acc -= band[k * cols + j + bw - k] * rhs[j * w + c];
            }
            rhs[k * w + c] = acc / band[k * cols + bw];
        }
    }
    rhs
}

/// Doubles the truncation level until rows up to `reach` stop moving.
fn settle_side(
    step: &IntegerPmf,
    m: i64,
    reach: i64,
    start_top: i64,
    options: &AnalyzerOptions,
) -> Result<SideRows, AnalyzerError> {
    let w = (2 * m + 1) as usize;
    let keep = (reach - m) as usize * w;
    let mut top = start_top.max(reach + 2 * m + 1);
    let mut prev = upper_entrance(step, m, top);
    loop {
        let next_top = m + 2 * (top - m);
        if next_top - m > options.max_states {
            return Err(AnalyzerError::NoConvergence {
                states: top - m,
                tol: options.tol,
            });
        }
        let next = upper_entrance(step, m, next_top);
        let change = prev[..keep]
            .iter()
            .zip(&next[..keep])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        top = next_top;
        if change < options.tol {
            let mut rows = next;
            rows.truncate(keep);
            return Ok(SideRows { reach, top, rows });
        }
        prev = next;
    }
}

/// First-entrance laws for every launch point the membrane jumps can reach,
/// and at least `extra_reach` on each side.
pub fn reentry_kernel(
    model: &WalkModel,
    extra_reach: i64,
    options: &AnalyzerOptions,
) -> Result<ReentryKernel, AnalyzerError> {
    let m = model.half_width();
    let w = (2 * m + 1) as usize;
    let up_reach = model
        .membrane_laws()
        .map(|(j, law)| j + law.max_value())
        .max()
        .unwrap_or(m)
        .max(extra_reach)
        .max(m + 1);
    let down_reach = model
        .membrane_laws()
        .map(|(j, law)| -(j + law.min_value()))
        .max()
        .unwrap_or(m)
        .max(extra_reach)
        .max(m + 1);
    let start_top = m + 16 * (2 * m + 1) + model.max_eta_abs();

    let step = model.step_law().pmf();
    let upper = settle_side(step, m, up_reach, start_top, options)?;
    let mut lower = settle_side(&step.negated(), m, down_reach, start_top, options)?;
    for row in lower.rows.chunks_mut(w) {
        row.reverse();
    }
    Ok(ReentryKernel { m, upper, lower })
}

/// Transition matrix of `Y` over `A`, rows and columns ordered `-m ..= m`.
pub fn embedded_matrix(
    model: &WalkModel,
    kernel: &ReentryKernel,
) -> Result<DMatrix<f64>, AnalyzerError> {
    let m = model.half_width();
    let w = (2 * m + 1) as usize;
    let mut p = DMatrix::zeros(w, w);
    for (j, law) in model.membrane_laws() {
        let r = (j + m) as usize;
        for &(e, q) in law.atoms() {
            let y = j + e;
            if y.abs() <= m {
                p[(r, (y + m) as usize)] += q;
            } else {
                let row = kernel.row(y).ok_or(AnalyzerError::BandTooSmall(y))?;
                for (c, h) in row.iter().enumerate() {
                    p[(r, c)] += q * h;
                }
            }
        }
    }
    Ok(p)
}

/// Solves `pi P = pi`, `sum pi = 1` with the last balance equation replaced
/// by the normalization. Entries below `1e-13` are set to zero.
pub fn stationary(p: &DMatrix<f64>) -> Result<Vec<f64>, AnalyzerError> {
    let n = p.nrows();
    let mut a = p.transpose() - DMatrix::identity(n, n);
    let mut b = DVector::zeros(n);
    for c in 0..n {
        a[(n - 1, c)] = 1.0;
    }
    b[n - 1] = 1.0;
    let pi = a.lu().solve(&b).ok_or(AnalyzerError::SingularSystem)?;
    if pi.iter().any(|v| !v.is_finite()) {
        return Err(AnalyzerError::SingularSystem);
    }
    let residual = (p.transpose() * &pi - &pi).amax();
    if residual > 1e-10 {
        return Err(AnalyzerError::StationaryResidual(residual));
    }
    // Transient states come out as round-off of either sign.
    let clean: Vec<f64> = pi
        .iter()
        .map(|&v| if v < 1e-13 { 0.0 } else { v })
        .collect();
    let total: f64 = clean.iter().sum();
    Ok(clean.into_iter().map(|v| v / total).collect())
}

/// Tail mass cut from each membrane law before the exact analysis.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TruncationReport {
    pub eps: f64,
    /// `(j, lost mass)` for every membrane point.
    pub lost_mass: Vec<(i64, f64)>,
    pub max_lost_mass: f64,
    /// Engineering estimate: max lost mass times the largest kept overshoot,
    /// over `e+ + e-`. Not a proven bound.
    pub gamma_error_estimate: f64,
}

/// Embedded chain `Y` and the skewness of the scaling limit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmbeddedChain {
    pub gamma: f64,
    pub e_plus: f64,
    pub e_minus: f64,
    pub pi: Vec<f64>,
    pub sigma2: f64,
    pub truncation_report: TruncationReport,
    /// Rows of `P`, ordered `-m ..= m`.
    pub transition: Vec<Vec<f64>>,
    /// `sum_j pi_j E eta_j` over the truncated laws; equals `e+ - e-`.
    pub drift: f64,
    /// Truncation levels of the kernel solve, `(upper, lower)`.
    pub kernel_band: (i64, i64),
}

impl EmbeddedChain {
    pub fn m(&self) -> i64 {
        (self.pi.len() as i64 - 1) / 2
    }

    /// Limit of `L+(n) / L-(n)`, or `None` when `gamma = ±1`.
    pub fn l_ratio(&self) -> Option<f64> {
        (self.gamma.abs() < 1.0).then(|| (1.0 + self.gamma) / (1.0 - self.gamma))
    }
}

/// Returns the model with every membrane law tail-truncated at `eps`.
pub fn truncate_membrane(
    model: &WalkModel,
    eps: f64,
) -> Result<(WalkModel, Vec<(i64, f64)>), AnalyzerError> {
    let mut laws = Vec::new();
    let mut lost = Vec::new();
    for (j, law) in model.membrane_laws() {
        let (cut, gone) = truncate_tail(law, eps)?;
        laws.push(cut);
        lost.push((j, gone));
    }
    let truncated = WalkModel::new(
        model.m(),
        model.step_law().pmf().clone(),
        laws,
        model.start(),
    )?
    .with_center(model.center());
    Ok((truncated, lost))
}

/// Computes `pi`, `e±` and `gamma` for an irreducible model.
pub fn gamma_exact(
    model: &WalkModel,
    options: &AnalyzerOptions,
) -> Result<EmbeddedChain, AnalyzerError> {
    model.ensure_irreducible()?;
    let (model, lost) = truncate_membrane(model, options.eta_eps)?;
    let kernel = reentry_kernel(&model, 0, options)?;
    let p = embedded_matrix(&model, &kernel)?;
    let pi = stationary(&p)?;
    let m = model.half_width();

    let mut e_plus = 0.0;
    let mut e_minus = 0.0;
    let mut drift = 0.0;
    let mut max_overshoot: f64 = 0.0;
    for (j, law) in model.membrane_laws() {
        let weight = pi[(j + m) as usize];
        drift += weight * law.mean();
        for &(e, q) in law.atoms() {
            let y = j + e;
            let Some(row) = kernel.row(y) else { continue };
            let overshoot: f64 = row
                .iter()
                .enumerate()
                .map(|(c, h)| h * (y - (c as i64 - m)).abs() as f64)
                .sum();
            max_overshoot = max_overshoot.max(overshoot);
            if y > m {
                e_plus += weight * q * overshoot;
            } else {
                e_minus += weight * q * overshoot;
            }
        }
    }
    let denominator = e_plus + e_minus;
    if denominator <= 0.0 {
        return Err(AnalyzerError::DegenerateDenominator);
    }
    let max_lost_mass = lost.iter().map(|l| l.1).fold(0.0, f64::max);
    Ok(EmbeddedChain {
        gamma: (e_plus - e_minus) / denominator,
        e_plus,
        e_minus,
        pi,
        sigma2: model.sigma2(),
        truncation_report: TruncationReport {
            eps: options.eta_eps,
            lost_mass: lost,
            max_lost_mass,
            gamma_error_estimate: max_lost_mass * max_overshoot / denominator,
        },
        transition: p.row_iter().map(|r| r.iter().copied().collect()).collect(),
        drift,
        kernel_band: kernel.band(),
    })
}
