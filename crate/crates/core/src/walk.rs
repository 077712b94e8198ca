//! The perturbed walk: model, simulation and path functionals.
//!
//! Outside the membrane `A = {-m, ..., m}` (centred at `center`) the walk
//! takes i.i.d. zero-mean steps; from a membrane point `j` it jumps by an
//! independent draw of `eta_j`. All ledger quantities are measured relative
//! to the membrane centre.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integer_dist::{
    stream_rng, validate_step_law, AliasTable, DistError, IntegerPmf, StepLaw,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("step law rejected: {0}")]
    StepLaw(#[from] DistError),
    #[error("membrane of half-width {m} needs {expected} jump laws, got {got}")]
    MembraneLawCount { m: u32, expected: usize, got: usize },
    #[error("no jump law for membrane point {0}")]
    MissingMembraneLaw(i64),
    #[error("membrane law key {0:?} is not an integer in [-m, m]")]
    BadMembraneKey(String),
    #[error("chain is not irreducible: no path from {from} to {to}")]
    Reducible { from: i64, to: i64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("time {t} needs step {step}, past the path horizon {horizon}")]
    GridBeyondHorizon { t: f64, step: u64, horizon: u64 },
    #[error("scale must be positive")]
    ZeroScale,
}

/// Membrane half-width, free step law, membrane jump laws and start point.
#[derive(Clone, Debug, PartialEq)]
pub struct WalkModel {
    m: u32,
    step: StepLaw,
    /// Indexed by `j + m`.
    membrane: Vec<IntegerPmf>,
    start: i64,
    center: i64,
}

impl WalkModel {
    /// `membrane[k]` is the jump law at membrane point `k - m`.
    pub fn new(
        m: u32,
        step: IntegerPmf,
        membrane: Vec<IntegerPmf>,
        start: i64,
    ) -> Result<Self, ModelError> {
        let step = validate_step_law(&step, m)?;
        let expected = 2 * m as usize + 1;
        if membrane.len() != expected {
            return Err(ModelError::MembraneLawCount {
                m,
                expected,
                got: membrane.len(),
            });
        }
        Ok(Self {
            m,
            step,
            membrane,
            start,
            center: 0,
        })
    }

    /// Same as [`WalkModel::new`] with the laws keyed by membrane point.
    pub fn from_map(
        m: u32,
        step: IntegerPmf,
        membrane: &BTreeMap<i64, IntegerPmf>,
        start: i64,
    ) -> Result<Self, ModelError> {
        let mi = i64::from(m);
        if let Some(&j) = membrane.keys().find(|j| j.abs() > mi) {
            return Err(ModelError::BadMembraneKey(j.to_string()));
        }
        let laws = (-mi..=mi)
            .map(|j| {
                membrane
                    .get(&j)
                    .cloned()
                    .ok_or(ModelError::MissingMembraneLaw(j))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(m, step, laws, start)
    }

    /// Model whose every membrane point uses the same jump law.
    pub fn homogeneous(
        m: u32,
        step: IntegerPmf,
        eta: IntegerPmf,
        start: i64,
    ) -> Result<Self, ModelError> {
        Self::new(m, step, vec![eta; 2 * m as usize + 1], start)
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn half_width(&self) -> i64 {
        i64::from(self.m)
    }

    pub fn step_law(&self) -> &StepLaw {
        &self.step
    }

    pub fn sigma2(&self) -> f64 {
        self.step.sigma2()
    }

    /// Jump law at membrane point `j` (relative to the centre).
    pub fn membrane_law(&self, j: i64) -> &IntegerPmf {
        &self.membrane[(j + self.half_width()) as usize]
    }

    pub fn membrane_laws(&self) -> impl Iterator<Item = (i64, &IntegerPmf)> {
        let m = self.half_width();
        self.membrane
            .iter()
            .enumerate()
            .map(move |(k, law)| (k as i64 - m, law))
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn center(&self) -> i64 {
        self.center
    }

    /// Start relative to the membrane centre.
    pub fn relative_start(&self) -> i64 {
        self.start - self.center
    }

    pub fn with_start(mut self, start: i64) -> Self {
        self.start = start;
        self
    }

    /// Moves the membrane to `{c - m, ..., c + m}` keeping the absolute
    /// start point.
    pub fn with_center(mut self, center: i64) -> Self {
        self.center = center;
        self
    }

    /// Translates the whole picture (membrane and start) by `shift`.
    pub fn translated(&self, shift: i64) -> Self {
        let mut out = self.clone();
        out.center += shift;
        out.start += shift;
        out
    }

    /// Mirror image `x -> -x` of the model.
    pub fn negated(&self) -> Self {
        Self {
            m: self.m,
            step: validate_step_law(&self.step.pmf().negated(), self.m)
                .expect("negation preserves a valid step law"),
            membrane: self
                .membrane
                .iter()
                .rev()
                .map(IntegerPmf::negated)
                .collect(),
            start: -self.start,
            center: -self.center,
        }
    }

    pub fn max_eta_abs(&self) -> i64 {
        self.membrane
            .iter()
            .map(IntegerPmf::max_abs)
            .max()
            .unwrap_or(0)
    }

    pub fn in_membrane(&self, rel: i64) -> bool {
        rel.abs() <= self.half_width()
    }

    /// One-step transition law from the relative state `rel`.
    pub fn transition(&self, rel: i64) -> &IntegerPmf {
        if self.in_membrane(rel) {
            self.membrane_law(rel)
        } else {
            self.step.pmf()
        }
    }

    /// Returns an error carrying the witness when [`is_irreducible`] fails.
    pub fn ensure_irreducible(&self) -> Result<(), ModelError> {
        match is_irreducible(self) {
            Irreducibility::Irreducible => Ok(()),
            Irreducibility::Reducible { from, to } => Err(ModelError::Reducible { from, to }),
        }
    }
}

/// Verdict of [`is_irreducible`]; states are relative to the membrane centre.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Irreducibility {
    Irreducible,
    Reducible { from: i64, to: i64 },
}

impl Irreducibility {
    pub fn holds(&self) -> bool {
        matches!(self, Irreducibility::Irreducible)
    }
}

/// Sufficient condition: `P{xi = 1}`, `P{xi = -1}`, `P{eta_j = 1}` and
/// `P{eta_j = -1}` are all positive.
pub fn nearest_neighbour_condition(model: &WalkModel) -> bool {
    let both = |law: &IntegerPmf| law.prob(1) > 0.0 && law.prob(-1) > 0.0;
    both(model.step.pmf()) && model.membrane.iter().all(both)
}

/// Reachability check on the band `[-B, B]`, `B = m + max|eta| + 2m + 1`
/// (widened to cover the start).
///
/// The chain counts as irreducible when the states reachable from some
/// membrane point form a closed communicating class that every band state
/// (the start included) can reach, and that class leaves the membrane.
/// Transient membrane points are allowed; a chain trapped inside `A` is not.
pub fn is_irreducible(model: &WalkModel) -> Irreducibility {
    let m = model.half_width();
    let band = (m + model.max_eta_abs() + 2 * m + 1).max(model.relative_start().abs());
    let size = (2 * band + 1) as usize;
    let index = |s: i64| (s + band) as usize;
    let state = |k: usize| k as i64 - band;

    let mut forward: Vec<Vec<usize>> = vec![Vec::new(); size];
    let mut backward: Vec<Vec<usize>> = vec![Vec::new(); size];
    for (k, out) in forward.iter_mut().enumerate() {
        let s = state(k);
        for d in model.transition(s).support() {
            let t = s + d;
            if t.abs() <= band {
                out.push(index(t));
                backward[index(t)].push(k);
            }
        }
    }

    let search = |from: usize, edges: &[Vec<usize>]| {
        let mut seen = vec![false; size];
        let mut queue = VecDeque::from([from]);
        seen[from] = true;
        while let Some(k) = queue.pop_front() {
            for &t in &edges[k] {
                if !seen[t] {
                    seen[t] = true;
                    queue.push_back(t);
                }
            }
        }
        seen
    };

    let mut witness = None;
    for a in -m..=m {
        let reach = search(index(a), &forward);
        let coreach = search(index(a), &backward);
        if let Some(k) = (0..size).find(|&k| reach[k] && !coreach[k]) {
            witness.get_or_insert((state(k), a));
            continue;
        }
        // `reach` is now a closed communicating class containing `a`.
        if !(0..size).any(|k| reach[k] && state(k).abs() > m) {
            return Irreducibility::Reducible { from: a, to: m + 1 };
        }
        return match (0..size).find(|&k| !coreach[k]) {
            Some(k) => Irreducibility::Reducible {
                from: state(k),
                to: a,
            },
            None => Irreducibility::Irreducible,
        };
    }
    let (from, to) = witness.expect("membrane is never empty");
    Irreducibility::Reducible { from, to }
}

/// Simulated positions with the membrane visit times `alpha_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct WalkPath {
    /// `X(0..=n)`, absolute coordinates.
    pub positions: Vec<i64>,
    /// `alpha_0 = 0` followed by every later time with `X` in the membrane.
    pub membrane_hits: Vec<u64>,
}

impl WalkPath {
    pub fn steps(&self) -> u64 {
        self.positions.len() as u64 - 1
    }

    /// `Y(k) = X(alpha_k)`.
    pub fn embedded(&self) -> impl Iterator<Item = i64> + '_ {
        self.membrane_hits
            .iter()
            .map(|&t| self.positions[t as usize])
    }
}

/// Decomposition state after step `n` (relative coordinates).
///
/// With `x` the relative start,
/// `X(n) 1{X(n) > m} = x + M+(n) + L+(n) + R+(n)` and
/// `-X(n) 1{-X(n) > m} = -x + M-(n) + L-(n) + R-(n)`, where `R+ = -X(tau+)`
/// while the walk sits at or below `m` after the re-entry time `tau+`, and
/// zero during upper excursions (mirror for `R-`). `R` is bounded by `m`
/// once the walk has re-entered from the corresponding side.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub m_plus: i64,
    pub m_minus: i64,
    pub l_plus: i64,
    pub l_minus: i64,
    pub residual_plus: i64,
    pub residual_minus: i64,
    pub nu: u64,
}

/// Completed excursion strictly above `m` (`positive`) or below `-m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Excursion {
    pub positive: bool,
    /// First step outside (`sigma`).
    pub start: u64,
    /// First step back at or inside the membrane (`tau`).
    pub end: u64,
}

impl Excursion {
    pub fn duration(&self) -> u64 {
        self.end - self.start
    }
}

/// Streaming statistics of one path; the JSON form is the ledger summary
/// exchanged with other tools.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub struct LedgerSummary {
    pub n: u64,
    #[serde(rename = "M_plus")]
    pub m_plus: i64,
    #[serde(rename = "M_minus")]
    pub m_minus: i64,
    #[serde(rename = "L_plus")]
    pub l_plus: i64,
    #[serde(rename = "L_minus")]
    pub l_minus: i64,
    pub nu: u64,
    pub rho_plus_sum: i64,
    pub rho_minus_sum: i64,
    pub cycles: u64,
    pub excursions_pos: u64,
    pub excursions_neg: u64,
    /// Steps `k < n` taken from above `m` (the bracket of `M+`).
    #[serde(default)]
    pub occupation_plus: u64,
    #[serde(default)]
    pub occupation_minus: u64,
    /// Number of `L` increments (excursion starts on either side).
    #[serde(default)]
    pub l_increments: u64,
    /// `L` increments whose pre-jump state lay outside the membrane.
    #[serde(default)]
    pub l_steps_outside: u64,
    /// Position at step `n` (absolute).
    #[serde(default)]
    pub position: i64,
}

/// Path functionals of one simulation; histories are filled only when
/// retention is enabled.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExcursionLedger {
    pub summary: LedgerSummary,
    pub start: i64,
    /// `rows[n]` for `n = 0..=steps`.
    pub rows: Vec<LedgerRow>,
    pub excursions: Vec<Excursion>,
    /// `(rho+_k, rho-_k)` for each completed cycle `k = 1, 2, ...`.
    pub rho: Vec<(i64, i64)>,
}

impl ExcursionLedger {
    /// Checks the decomposition identity and the residual bound at every
    /// retained step. Returns the first failing step.
    pub fn check_identity(&self, path: &WalkPath, m: i64, center: i64) -> Result<(), u64> {
        let x0 = self.start;
        for (n, (row, &pos)) in self.rows.iter().zip(&path.positions).enumerate() {
            let x = pos - center;
            let up = if x > m { x } else { 0 };
            let down = if -x > m { -x } else { 0 };
            let ok = up == x0 + row.m_plus + row.l_plus + row.residual_plus
                && down == -x0 + row.m_minus + row.l_minus + row.residual_minus;
            if !ok {
                return Err(n as u64);
            }
        }
        Ok(())
    }
}

/// Which optional histories to keep and where to take snapshots.
#[derive(Clone, Debug, Default)]
pub struct SimOptions {
    pub retain_path: bool,
    pub retain_events: bool,
    /// Step counts at which to record a [`LedgerSummary`]; need not be sorted.
    pub checkpoints: Vec<u64>,
}

impl SimOptions {
    pub fn full() -> Self {
        Self {
            retain_path: true,
            retain_events: true,
            checkpoints: Vec::new(),
        }
    }

    pub fn streaming(checkpoints: Vec<u64>) -> Self {
        Self {
            retain_path: false,
            retain_events: false,
            checkpoints,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimRun {
    pub path: Option<WalkPath>,
    pub ledger: ExcursionLedger,
    /// Snapshots in the order of `SimOptions::checkpoints`.
    pub checkpoints: Vec<LedgerSummary>,
}

/// Precomputed samplers for a model; cheap to share across threads.
#[derive(Clone, Debug)]
pub struct Sampler {
    m: i64,
    center: i64,
    start: i64,
    step: AliasTable,
    membrane: Vec<AliasTable>,
}

impl Sampler {
    pub fn new(model: &WalkModel) -> Self {
        Self {
            m: model.half_width(),
            center: model.center,
            start: model.relative_start(),
            step: AliasTable::new(model.step.pmf()),
            membrane: model.membrane.iter().map(AliasTable::new).collect(),
        }
    }

    pub fn run(&self, steps: u64, seed: u64, stream: u64, options: &SimOptions) -> SimRun {
        let mut rng = stream_rng(seed, stream);
        let m = self.m;
        let mut st = State::new(self.start, m);

        let mut order: Vec<usize> = (0..options.checkpoints.len()).collect();
        order.sort_by_key(|&i| options.checkpoints[i]);
        let mut snaps = vec![LedgerSummary::default(); order.len()];
        let mut next_cp = 0;

        let mut path = options.retain_path.then(|| WalkPath {
            positions: vec![self.start + self.center],
            membrane_hits: vec![0],
        });
        let mut rows = Vec::new();
        let mut excursions = Vec::new();
        let mut rho = Vec::new();
        if options.retain_path {
            rows.push(st.row());
        }

        let mut take_snapshots = |n: u64, st: &State, next_cp: &mut usize| {
            while *next_cp < order.len() && options.checkpoints[order[*next_cp]] == n {
                snaps[order[*next_cp]] = st.summary(n, self.center);
                *next_cp += 1;
            }
        };
        take_snapshots(0, &st, &mut next_cp);

        for n in 1..=steps {
            let prev = st.x;
            let d = if prev.abs() > m {
                self.step.sample(&mut rng)
            } else {
                self.membrane[(prev + m) as usize].sample(&mut rng)
            };
            let event = st.advance(d, n, m);
            if options.retain_events {
                if let Some(e) = event.excursion {
                    excursions.push(e);
                }
                if let Some(r) = event.rho {
                    rho.push(r);
                }
            }
            if let Some(p) = path.as_mut() {
                p.positions.push(st.x + self.center);
                if st.x.abs() <= m {
                    p.membrane_hits.push(n);
                }
                rows.push(st.row());
            }
            take_snapshots(n, &st, &mut next_cp);
        }

        SimRun {
            path,
            ledger: ExcursionLedger {
                summary: st.summary(steps, self.center),
                start: self.start,
                rows,
                excursions,
                rho,
            },
            checkpoints: snaps,
        }
    }
}

/// Per-side excursion tracker. `anchor` is `X(tau)`, the last re-entry
/// point (or the start).
#[derive(Clone, Copy, Debug)]
struct Side {
    outside: bool,
    anchor: i64,
    since: u64,
}

#[derive(Default)]
struct StepEvent {
    excursion: Option<Excursion>,
    rho: Option<(i64, i64)>,
}

#[derive(Clone, Debug)]
struct State {
    x: i64,
    up: Side,
    down: Side,
    m_plus: i64,
    m_minus: i64,
    l_plus: i64,
    l_minus: i64,
    nu: u64,
    occupation_plus: u64,
    occupation_minus: u64,
    l_increments: u64,
    l_steps_outside: u64,
    excursions_pos: u64,
    excursions_neg: u64,
    /// `Y(k)` and `X(alpha_k + 1)` of the open cycle, once `alpha_1` is seen.
    visit: Option<i64>,
    exit: Option<i64>,
    rho_plus_sum: i64,
    rho_minus_sum: i64,
    cycles: u64,
}

impl State {
    fn new(x: i64, m: i64) -> Self {
        Self {
            x,
            up: Side {
                outside: x > m,
                anchor: x,
                since: 0,
            },
            down: Side {
                outside: -x > m,
                anchor: x,
                since: 0,
            },
            m_plus: 0,
            m_minus: 0,
            l_plus: 0,
            l_minus: 0,
            nu: u64::from(x.abs() <= m),
            occupation_plus: 0,
            occupation_minus: 0,
            l_increments: 0,
            l_steps_outside: 0,
            excursions_pos: 0,
            excursions_neg: 0,
            visit: None,
            exit: None,
            rho_plus_sum: 0,
            rho_minus_sum: 0,
            cycles: 0,
        }
    }

    #[inline]
    fn advance(&mut self, d: i64, n: u64, m: i64) -> StepEvent {
        let prev = self.x;
        let x = prev + d;
        self.x = x;
        let mut event = StepEvent::default();

        if prev > m {
            self.m_plus += d;
            self.occupation_plus += 1;
        } else if prev < -m {
            self.m_minus -= d;
            self.occupation_minus += 1;
        }

        // Upper side: sigma when crossing above m, tau when coming back.
        if self.up.outside {
            if x <= m {
                let start = self.up.since;
                self.up = Side {
                    outside: false,
                    anchor: x,
                    since: n,
                };
                self.excursions_pos += 1;
                event.excursion = Some(Excursion {
                    positive: true,
                    start,
                    end: n,
                });
            }
        } else if x > m {
            self.l_plus += x - self.up.anchor;
            self.l_increments += 1;
            self.l_steps_outside += u64::from(prev.abs() > m);
            self.up = Side {
                outside: true,
                anchor: self.up.anchor,
                since: n,
            };
        }

        if self.down.outside {
            if -x <= m {
                let start = self.down.since;
                self.down = Side {
                    outside: false,
                    anchor: x,
                    since: n,
                };
                self.excursions_neg += 1;
                event.excursion = Some(Excursion {
                    positive: false,
                    start,
                    end: n,
                });
            }
        } else if -x > m {
            self.l_minus += self.down.anchor - x;
            self.l_increments += 1;
            self.l_steps_outside += u64::from(prev.abs() > m);
            self.down = Side {
                outside: true,
                anchor: self.down.anchor,
                since: n,
            };
        }

        if self.exit.is_none() && self.visit.is_some() {
            self.exit = Some(x);
        }
        if x.abs() <= m {
            self.nu += 1;
            if let (Some(y), Some(out)) = (self.visit, self.exit) {
                let rp = if out <= m { x - y } else { out - y };
                let rm = if -out <= m { y - x } else { y - out };
                self.rho_plus_sum += rp;
                self.rho_minus_sum += rm;
                self.cycles += 1;
                event.rho = Some((rp, rm));
            }
            self.visit = Some(x);
            self.exit = None;
        }
        event
    }

    fn row(&self) -> LedgerRow {
        LedgerRow {
            m_plus: self.m_plus,
            m_minus: self.m_minus,
            l_plus: self.l_plus,
            l_minus: self.l_minus,
            residual_plus: if self.up.outside { 0 } else { -self.up.anchor },
            residual_minus: if self.down.outside {
                0
            } else {
                self.down.anchor
            },
            nu: self.nu,
        }
    }

    fn summary(&self, n: u64, center: i64) -> LedgerSummary {
        LedgerSummary {
            n,
            m_plus: self.m_plus,
            m_minus: self.m_minus,
            l_plus: self.l_plus,
            l_minus: self.l_minus,
            nu: self.nu,
            rho_plus_sum: self.rho_plus_sum,
            rho_minus_sum: self.rho_minus_sum,
            cycles: self.cycles,
            excursions_pos: self.excursions_pos,
            excursions_neg: self.excursions_neg,
            occupation_plus: self.occupation_plus,
            occupation_minus: self.occupation_minus,
            l_increments: self.l_increments,
            l_steps_outside: self.l_steps_outside,
            position: self.x + center,
        }
    }
}

/// Simulates `steps` steps with every history retained.
pub fn simulate(
    model: &WalkModel,
    steps: u64,
    seed: u64,
    stream: u64,
) -> (WalkPath, ExcursionLedger) {
    let run = Sampler::new(model).run(steps, seed, stream, &SimOptions::full());
    (run.path.expect("retained"), run.ledger)
}

/// Streaming variant of [`simulate`].
pub fn simulate_with(
    model: &WalkModel,
    steps: u64,
    seed: u64,
    stream: u64,
    options: &SimOptions,
) -> SimRun {
    Sampler::new(model).run(steps, seed, stream, options)
}

/// Rebuilds the full ledger of a given path (relative coordinates, membrane
/// half-width `m`).
pub fn ledger_from_positions(m: u32, positions: &[i64]) -> ExcursionLedger {
    let m = i64::from(m);
    let start = positions[0];
    let mut st = State::new(start, m);
    let mut ledger = ExcursionLedger {
        start,
        rows: vec![st.row()],
        ..ExcursionLedger::default()
    };
    for (n, w) in positions.windows(2).enumerate() {
        let event = st.advance(w[1] - w[0], n as u64 + 1, m);
        ledger.excursions.extend(event.excursion);
        ledger.rho.extend(event.rho);
        ledger.rows.push(st.row());
    }
    ledger.summary = st.summary(positions.len() as u64 - 1, 0);
    ledger
}

/// Sums of `rho+_k` and `rho-_k` over the completed cycles, and their count.
pub fn rho_partial_sums(ledger: &ExcursionLedger) -> (i64, i64, u64) {
    let s = &ledger.summary;
    (s.rho_plus_sum, s.rho_minus_sum, s.cycles)
}

/// `X([n t]) / sqrt(n)` for each `t` in `grid`, plus the same divided by `sigma`.
pub fn scaled_path(
    path: &WalkPath,
    scale: u64,
    grid: &[f64],
    sigma: f64,
) -> Result<Vec<(f64, f64)>, PathError> {
    if scale == 0 {
        return Err(PathError::ZeroScale);
    }
    let root = (scale as f64).sqrt();
    let horizon = path.steps();
    grid.iter()
        .map(|&t| {
            let step = (scale as f64 * t).floor() as u64;
            if t < 0.0 || step > horizon {
                return Err(PathError::GridBeyondHorizon { t, step, horizon });
            }
            let v = path.positions[step as usize] as f64 / root;
            Ok((v, v / sigma))
        })
        .collect()
}
