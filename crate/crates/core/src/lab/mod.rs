//! Monte Carlo checks of the scaling limit against the analytic predictions.
//!
//! Every path is driven by `stream_rng(seed, stream)` with
//! `stream = tag << 48 | scale_index << 32 | path_index`, so any single path
//! of a report can be replayed in isolation.

pub mod config;
pub mod stats;

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::membrane::{gamma_exact, AnalyzerError, EmbeddedChain};
use crate::skew_bm::{martingale_diagnostics, DiagnosticSeries, SkewBm, SkewError};
use crate::walk::{LedgerSummary, Sampler, SimOptions, WalkModel};
use config::{ConfigError, ExperimentConfig, Tolerances};
use stats::{batch_means, dkw_bound, ks_unsorted, mean_se, median, Estimate, StatsError};

pub const TAG_MARGINAL: u64 = 1;
pub const TAG_SIGN: u64 = 2;
pub const TAG_LLN: u64 = 3;
pub const TAG_L_RATIO: u64 = 4;
pub const TAG_NU: u64 = 5;
pub const TAG_DIAG: u64 = 6;

pub fn stream_id(tag: u64, scale_index: usize, path: usize) -> u64 {
    (tag << 48) | ((scale_index as u64) << 32) | path as u64
}

#[derive(Debug, Error)]
pub enum LabError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Analyzer(#[from] AnalyzerError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Skew(#[from] SkewError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// One line of the long-format CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub statistic: &'static str,
    pub n: u64,
    pub t: Option<f64>,
    /// Stream id of the path, or the master seed for pooled values.
    pub seed: u64,
    pub value: f64,
}

impl CsvRow {
    fn new(statistic: &'static str, n: u64, t: Option<f64>, seed: u64, value: f64) -> Self {
        Self {
            statistic,
            n,
            t,
            seed,
            value,
        }
    }
}

pub fn write_csv<W: Write>(mut out: W, rows: &[CsvRow]) -> io::Result<()> {
    writeln!(out, "statistic,n,t,seed,value")?;
    for r in rows {
        let t = r.t.map(|t| t.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{}", r.statistic, r.n, t, r.seed, r.value)?;
    }
    Ok(())
}

/// Runs `paths` independent walks of `steps` steps with snapshots at
/// `checkpoints`, returning the snapshots in path order.
pub fn snapshot_paths(
    model: &WalkModel,
    steps: u64,
    checkpoints: &[u64],
    paths: usize,
    seed: u64,
    stream: impl Fn(usize) -> u64 + Sync,
) -> Vec<Vec<LedgerSummary>> {
    let sampler = Sampler::new(model);
    let options = SimOptions::streaming(checkpoints.to_vec());
    (0..paths)
        .into_par_iter()
        .map(|p| sampler.run(steps, seed, stream(p), &options).checkpoints)
        .collect()
}

fn grid_index(n: u64, t: f64) -> u64 {
    (n as f64 * t).floor() as u64
}

/// KS distance of `X([nt]) / (sigma sqrt n)` to the limit marginal at `t`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarginalRow {
    pub n: u64,
    pub t: f64,
    pub seed: u64,
    pub paths: usize,
    pub ks: f64,
    pub dkw99: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Share of completed excursions that are positive.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignCheck {
    pub steps: u64,
    pub paths: usize,
    pub positive: u64,
    pub negative: u64,
    pub fraction: Estimate,
    pub target: f64,
    /// `None` when the target is not the exact exit law of the model.
    pub pass: Option<bool>,
}

/// The positive fraction equals `(1 + gamma) / 2` exactly when every
/// excursion leaves a one-point membrane with a unit jump.
pub fn sign_target_applies(model: &WalkModel) -> bool {
    let unit = |law: &crate::IntegerPmf| law.support().all(|v| v.abs() <= 1);
    model.m() == 0 && unit(model.step_law().pmf()) && unit(model.membrane_law(0))
}

/// Cycle averages of `rho±` against `e±`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LlnCheck {
    pub steps: u64,
    pub paths: usize,
    pub batches: usize,
    pub cycles: usize,
    pub plus: Estimate,
    pub minus: Estimate,
    pub e_plus: f64,
    pub e_minus: f64,
    pub pass: bool,
}

/// Median of `L+(n) / L-(n)` over independent paths.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LRatioCheck {
    pub steps: u64,
    pub paths: usize,
    pub median: f64,
    /// `(1 + gamma) / (1 - gamma)`, absent when `gamma = ±1`.
    pub target: Option<f64>,
    pub relative_tolerance: f64,
    pub pass: Option<bool>,
}

/// Mean membrane local time `nu(n) / sqrt n` across scales.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NuCheck {
    pub scales: Vec<u64>,
    pub paths: usize,
    pub scaled_means: Vec<Estimate>,
    /// Largest over smallest scaled mean.
    pub spread: f64,
    pub last_to_first: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Martingale diagnostics with their pass flags.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticCheck {
    pub paths: usize,
    pub series: DiagnosticSeries,
    pub martingale_pass: bool,
    pub quadratic_variation_pass: bool,
    pub localization_pass: bool,
    pub pass: bool,
}

/// A model with its exact analysis and the master seed shared by all checks.
#[derive(Clone, Copy, Debug)]
pub struct Lab<'a> {
    pub model: &'a WalkModel,
    pub chain: &'a EmbeddedChain,
    pub seed: u64,
}

impl<'a> Lab<'a> {
    pub fn new(model: &'a WalkModel, chain: &'a EmbeddedChain, seed: u64) -> Self {
        Self { model, chain, seed }
    }

    pub fn marginals(
        &self,
        n: u64,
        scale_index: usize,
        times: &[f64],
        paths: usize,
        tolerance: f64,
        csv: &mut Vec<CsvRow>,
    ) -> Result<Vec<MarginalRow>, LabError> {
        let (model, gamma, seed) = (self.model, self.chain.gamma, self.seed);
        let grid: Vec<u64> = times.iter().map(|&t| grid_index(n, t)).collect();
        let horizon = grid.iter().copied().max().unwrap_or(0);
        let stream = |p| stream_id(TAG_MARGINAL, scale_index, p);
        let snaps = snapshot_paths(model, horizon, &grid, paths, seed, stream);
        let norm = model.step_law().sigma() * (n as f64).sqrt();
        let limit = SkewBm::standard(gamma)?;
        let mut rows = Vec::with_capacity(times.len());
        for (k, &t) in times.iter().enumerate() {
            let mut xs: Vec<f64> = snaps
                .iter()
                .map(|s| (s[k].position - model.center()) as f64 / norm)
                .collect();
            for (p, &x) in xs.iter().enumerate() {
                csv.push(CsvRow::new("scaled_position", n, Some(t), stream(p), x));
            }
            let ks = ks_unsorted(&mut xs, |y| limit.marginal_cdf(t, y).unwrap_or(f64::NAN))?;
            csv.push(CsvRow::new("ks", n, Some(t), seed, ks));
            rows.push(MarginalRow {
                n,
                t,
                seed,
                paths,
                ks,
                dkw99: dkw_bound(paths, 0.01),
                tolerance,
                pass: ks <= tolerance,
            });
        }
        Ok(rows)
    }

    pub fn signs(&self, steps: u64, paths: usize, z: f64, csv: &mut Vec<CsvRow>) -> SignCheck {
        let (model, chain, seed) = (self.model, self.chain, self.seed);
        let stream = |p| stream_id(TAG_SIGN, 0, p);
        let snaps = snapshot_paths(model, steps, &[steps], paths, seed, stream);
        let (mut pos, mut neg) = (0u64, 0u64);
        for (p, s) in snaps.iter().enumerate() {
            pos += s[0].excursions_pos;
            neg += s[0].excursions_neg;
            csv.push(CsvRow::new(
                "excursions_pos",
                steps,
                None,
                stream(p),
                s[0].excursions_pos as f64,
            ));
            csv.push(CsvRow::new(
                "excursions_neg",
                steps,
                None,
                stream(p),
                s[0].excursions_neg as f64,
            ));
        }
        let total = pos + neg;
        let mean = if total == 0 {
            f64::NAN
        } else {
            pos as f64 / total as f64
        };
        let fraction = Estimate {
            mean,
            se: (mean * (1.0 - mean) / total as f64).sqrt(),
            count: total as usize,
        };
        let target = 0.5 * (1.0 + chain.gamma);
        SignCheck {
            steps,
            paths,
            positive: pos,
            negative: neg,
            fraction,
            target,
            pass: sign_target_applies(model).then(|| total > 0 && fraction.within(target, z)),
        }
    }

    /// Pools the completed cycles of `paths` walks in path order and compares
    /// the batch-means averages of `rho±` with `e±`.
    pub fn lln(
        &self,
        steps: u64,
        paths: usize,
        batches: usize,
        z: f64,
        csv: &mut Vec<CsvRow>,
    ) -> Result<LlnCheck, LabError> {
        let (model, chain, seed) = (self.model, self.chain, self.seed);
        let sampler = Sampler::new(model);
        let options = SimOptions {
            retain_path: false,
            retain_events: true,
            checkpoints: Vec::new(),
        };
        let stream = |p| stream_id(TAG_LLN, 0, p);
        let runs: Vec<Vec<(i64, i64)>> = (0..paths)
            .into_par_iter()
            .map(|p| sampler.run(steps, seed, stream(p), &options).ledger.rho)
            .collect();
        let mut plus = Vec::new();
        let mut minus = Vec::new();
        for (p, rho) in runs.iter().enumerate() {
            let (sp, sm) = rho
                .iter()
                .fold((0i64, 0i64), |(a, b), r| (a + r.0, b + r.1));
            if !rho.is_empty() {
                csv.push(CsvRow::new(
                    "rho_plus_per_cycle",
                    steps,
                    None,
                    stream(p),
                    sp as f64 / rho.len() as f64,
                ));
                csv.push(CsvRow::new(
                    "rho_minus_per_cycle",
                    steps,
                    None,
                    stream(p),
                    sm as f64 / rho.len() as f64,
                ));
            }
            plus.extend(rho.iter().map(|r| r.0 as f64));
            minus.extend(rho.iter().map(|r| r.1 as f64));
        }
        let plus_est = batch_means(&plus, batches)?;
        let minus_est = batch_means(&minus, batches)?;
        Ok(LlnCheck {
            steps,
            paths,
            batches,
            cycles: plus.len(),
            plus: plus_est,
            minus: minus_est,
            e_plus: chain.e_plus,
            e_minus: chain.e_minus,
            pass: plus_est.within(chain.e_plus, z) && minus_est.within(chain.e_minus, z),
        })
    }

    pub fn l_ratio(
        &self,
        steps: u64,
        paths: usize,
        relative_tolerance: f64,
        csv: &mut Vec<CsvRow>,
    ) -> Result<LRatioCheck, LabError> {
        let (model, chain, seed) = (self.model, self.chain, self.seed);
        let stream = |p| stream_id(TAG_L_RATIO, 0, p);
        let snaps = snapshot_paths(model, steps, &[steps], paths, seed, stream);
        let mut ratios: Vec<f64> = snaps
            .iter()
            .map(|s| match s[0].l_minus {
                0 => f64::INFINITY,
                d => s[0].l_plus as f64 / d as f64,
            })
            .collect();
        for (p, &r) in ratios.iter().enumerate() {
            csv.push(CsvRow::new("l_ratio", steps, None, stream(p), r));
        }
        let med = median(&mut ratios)?;
        let target = chain.l_ratio();
        Ok(LRatioCheck {
            steps,
            paths,
            median: med,
            target,
            relative_tolerance,
            pass: target.map(|r| (med / r - 1.0).abs() <= relative_tolerance),
        })
    }

    pub fn nu_growth(
        &self,
        scales: &[u64],
        paths: usize,
        tolerance: f64,
        csv: &mut Vec<CsvRow>,
    ) -> Result<NuCheck, LabError> {
        let (model, seed) = (self.model, self.seed);
        let horizon = scales.iter().copied().max().unwrap_or(0);
        let stream = |p| stream_id(TAG_NU, 0, p);
        let snaps = snapshot_paths(model, horizon, scales, paths, seed, stream);
        let mut scaled_means = Vec::with_capacity(scales.len());
        for (k, &n) in scales.iter().enumerate() {
            let xs: Vec<f64> = snaps
                .iter()
                .map(|s| s[k].nu as f64 / (n as f64).sqrt())
                .collect();
            for (p, &x) in xs.iter().enumerate() {
                csv.push(CsvRow::new("nu_scaled", n, None, stream(p), x));
            }
            scaled_means.push(mean_se(&xs)?);
        }
        let means: Vec<f64> = scaled_means.iter().map(|e| e.mean).collect();
        let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
        let spread = hi / lo;
        Ok(NuCheck {
            scales: scales.to_vec(),
            paths,
            last_to_first: means[means.len() - 1] / means[0],
            scaled_means,
            spread,
            tolerance,
            pass: lo > 0.0 && spread <= tolerance,
        })
    }

    pub fn diagnostics(
        &self,
        n: u64,
        times: &[f64],
        paths: usize,
        z: f64,
        csv: &mut Vec<CsvRow>,
    ) -> Result<DiagnosticCheck, LabError> {
        let (model, chain, seed) = (self.model, self.chain, self.seed);
        let grid: Vec<u64> = times.iter().map(|&t| grid_index(n, t)).collect();
        let horizon = grid.iter().copied().max().unwrap_or(0);
        let stream = |p| stream_id(TAG_DIAG, 0, p);
        let mut snaps = snapshot_paths(model, horizon, &grid, paths, seed, stream);
        for s in snaps.iter_mut().flatten() {
            s.position -= model.center();
        }
        let root = (n as f64).sqrt();
        for (p, path) in snaps.iter().enumerate() {
            for (k, s) in path.iter().enumerate() {
                csv.push(CsvRow::new(
                    "M_plus_scaled",
                    n,
                    Some(times[k]),
                    stream(p),
                    s.m_plus as f64 / root,
                ));
                csv.push(CsvRow::new(
                    "M_minus_scaled",
                    n,
                    Some(times[k]),
                    stream(p),
                    s.m_minus as f64 / root,
                ));
            }
        }
        let pairs: Vec<(usize, usize)> = (1..times.len()).map(|k| (k - 1, k)).collect();
        let series = martingale_diagnostics(
            &snaps,
            times,
            &pairs,
            n,
            model.half_width(),
            chain.gamma,
            model.step_law().sigma(),
        )?;
        let ok = |es: &[Estimate]| es.iter().all(|e| e.within(0.0, z));
        let martingale_pass = ok(&series.m_plus)
            && ok(&series.m_minus)
            && series
                .increments
                .iter()
                .all(|i| i.plus.within(0.0, z) && i.minus.within(0.0, z));
        let quadratic_variation_pass = ok(&series.qv_gap_plus) && ok(&series.qv_gap_minus);
        let localization_pass = series.localization_fraction == 0.0 && series.v_monotone;
        Ok(DiagnosticCheck {
            paths,
            martingale_pass,
            quadratic_variation_pass,
            localization_pass,
            pass: martingale_pass && quadratic_variation_pass && localization_pass,
            series,
        })
    }
}

/// Full output of [`run_convergence`].
#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub stream_layout: &'static str,
    pub gamma: f64,
    pub e_plus: f64,
    pub e_minus: f64,
    pub sigma2: f64,
    pub pi: Vec<f64>,
    pub marginals: Vec<MarginalRow>,
    pub sign: SignCheck,
    pub lln: LlnCheck,
    pub l_ratio: LRatioCheck,
    pub nu: NuCheck,
    pub diagnostics: DiagnosticCheck,
    pub all_pass: bool,
}

impl ConvergenceReport {
    /// `(check, pass)` lines; `None` marks a check that does not apply.
    pub fn verdicts(&self) -> Vec<(String, Option<bool>)> {
        let mut out: Vec<(String, Option<bool>)> = self
            .marginals
            .iter()
            .map(|r| {
                (
                    format!(
                        "marginal ks n={} t={} seed={}: {:.4}",
                        r.n, r.t, r.seed, r.ks
                    ),
                    Some(r.pass),
                )
            })
            .collect();
        out.push((
            format!(
                "excursion sign fraction {:.4} vs {:.4}",
                self.sign.fraction.mean, self.sign.target
            ),
            self.sign.pass,
        ));
        out.push((
            format!(
                "cycle lln rho+ {:.4} vs {:.4}, rho- {:.4} vs {:.4}",
                self.lln.plus.mean, self.lln.e_plus, self.lln.minus.mean, self.lln.e_minus
            ),
            Some(self.lln.pass),
        ));
        out.push((
            format!("median L ratio {:.4}", self.l_ratio.median),
            self.l_ratio.pass,
        ));
        out.push((
            format!("nu spread {:.4}", self.nu.spread),
            Some(self.nu.pass),
        ));
        out.push((
            "martingale diagnostics".to_string(),
            Some(self.diagnostics.pass),
        ));
        out
    }
}

pub fn run_convergence(
    config: &ExperimentConfig,
) -> Result<(ConvergenceReport, Vec<CsvRow>), LabError> {
    let exp = &config.experiment;
    exp.validate()?;
    let model = config.model.build()?;
    let tol: &Tolerances = &exp.tolerances;
    let chain = gamma_exact(&model, &tol.analyzer())?;
    let seed = exp.master_seed();
    let mut csv = Vec::new();

    let lab = Lab::new(&model, &chain, seed);
    let mut marginals = Vec::new();
    for &s in &exp.seeds {
        let lab = Lab { seed: s, ..lab };
        for (i, &n) in exp.scales.iter().enumerate() {
            marginals.extend(lab.marginals(n, i, &exp.times, exp.paths, tol.ks, &mut csv)?);
        }
    }
    let sign = lab.signs(exp.long_steps, exp.sign_paths, tol.z, &mut csv);
    let lln = lab.lln(
        exp.long_steps,
        exp.lln_paths,
        exp.lln_batches,
        tol.z,
        &mut csv,
    )?;
    let l_ratio = lab.l_ratio(exp.long_steps, exp.l_ratio_paths, tol.l_ratio_rel, &mut csv)?;
    let nu = lab.nu_growth(&exp.nu_scales, exp.nu_paths, tol.nu_spread, &mut csv)?;
    let diagnostics = lab.diagnostics(
        exp.diag_scale,
        &exp.diag_times,
        exp.diag_paths,
        tol.z,
        &mut csv,
    )?;

    let mut report = ConvergenceReport {
        config_hash: config.hash(),
        config: config.clone(),
        seeds: exp.seeds.clone(),
        stream_layout: "stream = tag << 48 | scale_index << 32 | path_index; tags: \
                        1 marginal, 2 sign, 3 lln, 4 l_ratio, 5 nu, 6 diagnostics",
        gamma: chain.gamma,
        e_plus: chain.e_plus,
        e_minus: chain.e_minus,
        sigma2: chain.sigma2,
        pi: chain.pi.clone(),
        marginals,
        sign,
        lln,
        l_ratio,
        nu,
        diagnostics,
        all_pass: false,
    };
    report.all_pass = report.verdicts().iter().all(|(_, v)| v.unwrap_or(true));
    Ok((report, csv))
}

/// Writes `report.json` and `convergence.csv` into `dir`.
pub fn write_outputs(
    dir: &Path,
    report: &ConvergenceReport,
    csv: &[CsvRow],
) -> Result<(), LabError> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(report)?,
    )?;
    let file = io::BufWriter::new(fs::File::create(dir.join("convergence.csv"))?);
    write_csv(file, csv)?;
    Ok(())
}
