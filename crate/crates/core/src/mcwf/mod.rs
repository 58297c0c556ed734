//! Monte Carlo wavefunction unraveling of the master equation.
//!
//! Jump channels are the collective lowering `sqrt(gamma_c) J-` and one
//! repump `sqrt(w) sigma+_j` per atom. Between jumps the state follows the
//! non-Hermitian effective Hamiltonian; jumps are triggered when the squared
//! norm falls below a uniform random threshold.

mod propagator;

use std::sync::Arc;

use num_complex::Complex64 as C64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hilbert::{self, build_collective, build_single_atom, CollectiveKind, JmDecomposition, SingleAtomKind};
use crate::hilbert::{SparseOperator, StateVector};
use crate::params::ModelParams;

pub use propagator::{NoJumpGenerator, Segment};

pub const LABEL_JPJM: &str = "JpJm";
pub const LABEL_JZ: &str = "Jz";

/// Label of the `sigma_z` observable of atom `j` (zero based).
pub fn sigma_z_label(j: usize) -> String {
    format!("sigma_z_{j}")
}

/// Label of a subspace population `P_{M,J}`.
pub fn population_label(j: hilbert::HalfInt, m: hilbert::HalfInt) -> String {
    format!("P[J={j};M={m}]")
}

/// `H_eff = -(i/2) [gamma_c J+J- + w sum_j sigma-_j sigma+_j]`.
pub fn effective_hamiltonian(params: &ModelParams) -> SparseOperator {
    let n = params.n();
    let jpjm = build_collective(CollectiveKind::JpJm, n);
    let ground: Vec<f64> = (0..hilbert::dim(n)).map(|b| (n - hilbert::excitations(b)) as f64).collect();
    let pump = SparseOperator::diagonal(&ground);
    let minus_half_i = C64::new(0.0, -0.5);
    SparseOperator::linear_combination(&[
        (minus_half_i * params.gamma_c(), &jpjm),
        (minus_half_i * params.w(), &pump),
    ])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelLabel {
    CollectiveDecay,
    Repump(usize),
}

#[derive(Clone, Debug)]
pub struct JumpChannel {
    pub label: ChannelLabel,
    /// Jump operator including the square root of its rate.
    pub operator: SparseOperator,
    /// `L^dagger L`
    pub rate_weight: SparseOperator,
}

/// The `N + 1` jump channels: collective decay first, then one repump per atom.
pub fn jump_channels(params: &ModelParams) -> Vec<JumpChannel> {
    let n = params.n();
    let mut out = Vec::with_capacity(n + 1);
    let decay = build_collective(CollectiveKind::JMinus, n).scale(C64::new(params.gamma_c().sqrt(), 0.0));
    out.push(channel(ChannelLabel::CollectiveDecay, decay));
    for j in 0..n {
        let op = build_single_atom(SingleAtomKind::SigmaPlus, j, n)
            .expect("atom index in range")
            .scale(C64::new(params.w().sqrt(), 0.0));
        out.push(channel(ChannelLabel::Repump(j), op));
    }
    out
}

fn channel(label: ChannelLabel, operator: SparseOperator) -> JumpChannel {
    let rate_weight = operator.adjoint().matmul(&operator);
    JumpChannel { label, operator, rate_weight }
}

/// Which expectation values a trajectory records on its output grid.
///
/// `JpJm`, `Jz` and `sigma_z_0` are always recorded.
#[derive(Clone, Debug, Default)]
pub struct ObservableSet {
    /// Record `sigma_z` of every atom instead of only atom 0.
    pub all_sigma_z: bool,
    /// Record the `(J, M)` subspace populations.
    pub subspaces: Option<Arc<JmDecomposition>>,
}

impl ObservableSet {
    pub fn with_subspaces(decomp: Arc<JmDecomposition>) -> Self {
        ObservableSet { all_sigma_z: false, subspaces: Some(decomp) }
    }

    pub fn labels(&self, n_atoms: usize) -> Vec<String> {
        let mut out = vec![LABEL_JPJM.to_string(), LABEL_JZ.to_string()];
        let atoms = if self.all_sigma_z { n_atoms } else { 1 };
        out.extend((0..atoms).map(sigma_z_label));
        if let Some(decomp) = &self.subspaces {
            out.extend(decomp.subspaces().iter().map(|s| population_label(s.j, s.m)));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct JumpEvent {
    pub time: f64,
    pub channel: ChannelLabel,
}

/// Observables sampled along one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub params: ModelParams,
    pub seed: u64,
    pub t_end: f64,
    pub sample_dt: f64,
    pub times: Vec<f64>,
    pub labels: Arc<Vec<String>>,
    /// `samples[k][i]` is observable `labels[k]` at `times[i]`.
    pub samples: Vec<Vec<f64>>,
    pub jumps: Vec<JumpEvent>,
}

impl TrajectoryRecord {
    pub fn series(&self, label: &str) -> Option<&[f64]> {
        self.labels.iter().position(|l| l == label).map(|k| self.samples[k].as_slice())
    }

    /// Trapezoidal time average of every observable over the grid samples
    /// inside `[t1, t1 + window]`.
    pub fn window_average(&self, t1: f64, window: f64) -> Result<Vec<f64>> {
        let eps = 1e-9 * self.sample_dt;
        let first = self.times.iter().position(|&t| t >= t1 - eps);
        let last = self.times.iter().rposition(|&t| t <= t1 + window + eps);
        let (first, last) = match (first, last) {
            (Some(a), Some(b)) if b > a => (a, b),
            _ => return Err(Error::Argument(format!("averaging window [{t1}, {}] holds fewer than two samples", t1 + window))),
        };
        let span = self.times[last] - self.times[first];
        Ok(self
            .samples
            .iter()
            .map(|series| {
                let s = &series[first..=last];
                let t = &self.times[first..=last];
                let integral: f64 = s.windows(2).zip(t.windows(2)).map(|(y, x)| 0.5 * (y[0] + y[1]) * (x[1] - x[0])).sum();
                integral / span
            })
            .collect())
    }
}

/// Output grid and observable choice for trajectory runs.
#[derive(Clone, Debug, Default)]
pub struct TrajectoryOptions {
    /// Output grid spacing; `t_end / 1000` when `None`.
    pub sample_dt: Option<f64>,
    pub observables: ObservableSet,
}

/// Shared, read-only machinery for all trajectories at one parameter point.
#[derive(Debug)]
pub struct McwfSystem {
    generator: NoJumpGenerator,
    channels: Vec<JumpChannel>,
}

impl McwfSystem {
    pub fn new(params: ModelParams) -> Self {
        McwfSystem { generator: NoJumpGenerator::new(params), channels: jump_channels(&params) }
    }

    pub fn params(&self) -> &ModelParams {
        self.generator.params()
    }

    pub fn generator(&self) -> &NoJumpGenerator {
        &self.generator
    }

    pub fn channels(&self) -> &[JumpChannel] {
        &self.channels
    }

    /// Applies the channel picked with probability proportional to
    /// `||L psi||^2` (using the uniform draw `u`), returning the normalized
    /// post-jump state.
    pub fn apply_jump(&self, psi: &[C64], u: f64) -> Result<(ChannelLabel, Vec<C64>)> {
        let outputs: Vec<Vec<C64>> = self.channels.iter().map(|c| c.operator.apply(psi)).collect();
        let weights: Vec<f64> = outputs.iter().map(|v| hilbert::norm_sq(v)).collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Integration { time: f64::NAN, reason: "no jump channel has positive rate".into() });
        }
        let mut pick = u * total;
        let mut chosen = weights.iter().rposition(|&w| w > 0.0).unwrap();
        for (k, &w) in weights.iter().enumerate() {
            if w > 0.0 && pick < w {
                chosen = k;
                break;
            }
            pick -= w;
        }
        let mut out = outputs.into_iter().nth(chosen).unwrap();
        let inv = 1.0 / weights[chosen].sqrt();
        out.iter_mut().for_each(|a| *a *= inv);
        Ok((self.channels[chosen].label, out))
    }

    fn observe(&self, psi: &[C64], observables: &ObservableSet, scratch: &mut [C64], out: &mut Vec<f64>) {
        let n = self.params().n();
        let norm = hilbert::norm_sq(psi);
        let inv = 1.0 / norm;
        self.generator.apply_jm(psi, scratch);
        out.push(hilbert::norm_sq(scratch) * inv);
        let half = n as f64 / 2.0;
        let mut jz = 0.0;
        for (b, a) in psi.iter().enumerate() {
            jz += a.norm_sqr() * (hilbert::excitations(b) as f64 - half);
        }
        out.push(jz * inv);
        let atoms = if observables.all_sigma_z { n } else { 1 };
        for j in 0..atoms {
            let bit = 1usize << j;
            let sz: f64 = psi
                .iter()
                .enumerate()
                .map(|(b, a)| if b & bit != 0 { a.norm_sqr() } else { -a.norm_sqr() })
                .sum();
            out.push(sz * inv);
        }
        if let Some(decomp) = &observables.subspaces {
            for sub in decomp.subspaces() {
                out.push(sub.population(psi) * inv);
            }
        }
    }

    /// Evolves one trajectory from the normalized `psi0` to `t_end`.
    pub fn evolve(&self, psi0: &StateVector, t_end: f64, seed: u64, opts: &TrajectoryOptions) -> Result<TrajectoryRecord> {
        let params = *self.params();
        let n = params.n();
        let dim = hilbert::dim(n);
        if psi0.n_atoms() != n {
            return Err(Error::Argument(format!("initial state has {} atoms, model has {n}", psi0.n_atoms())));
        }
        if (psi0.norm_sq() - 1.0).abs() > 1e-10 {
            return Err(Error::Argument("initial state is not normalized".into()));
        }
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(Error::Argument(format!("t_end must be positive, got {t_end}")));
        }
        if let Some(decomp) = &opts.observables.subspaces {
            if decomp.n_atoms() != n {
                return Err(Error::Argument("subspace decomposition built for a different N".into()));
            }
        }
        let sample_dt = opts.sample_dt.unwrap_or(t_end / 1000.0);
        if !(sample_dt > 0.0) {
            return Err(Error::Argument(format!("sample spacing must be positive, got {sample_dt}")));
        }
        let n_samples = (t_end / sample_dt * (1.0 + 1e-12)).floor() as usize + 1;
        let labels = Arc::new(opts.observables.labels(n));
        let mut samples: Vec<Vec<f64>> = vec![Vec::with_capacity(n_samples); labels.len()];
        let mut times = Vec::with_capacity(n_samples);
        let mut jumps = Vec::new();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut psi = psi0.amplitudes().to_vec();
        let mut scratch = vec![C64::new(0.0, 0.0); dim];
        let mut evaluated = vec![C64::new(0.0, 0.0); dim];
        let mut probe = vec![C64::new(0.0, 0.0); dim];
        let mut row = Vec::with_capacity(labels.len());

        let gen = &self.generator;
        let max_step = gen.max_step();
        let mut t = 0.0;
        // log of the squared norm accumulated since the last jump, and the threshold
        let mut log_norm = 0.0;
        let mut log_threshold = draw_log_threshold(&mut rng);
        let mut next_sample = 0usize;

        let mut record_until = |upto: f64, t: f64, seg: Option<&Segment>, psi: &[C64], next_sample: &mut usize,
                                times: &mut Vec<f64>, samples: &mut Vec<Vec<f64>>| {
            while *next_sample < n_samples {
                let ts = *next_sample as f64 * sample_dt;
                if ts > upto + 1e-12 * sample_dt {
                    break;
                }
                match seg {
                    Some(seg) => {
                        gen.state_at(seg, (ts - t).max(0.0), &mut probe);
                        row.clear();
                        self.observe(&probe, &opts.observables, &mut scratch, &mut row);
                    }
                    None => {
                        row.clear();
                        self.observe(psi, &opts.observables, &mut scratch, &mut row);
                    }
                }
                times.push(ts);
                for (series, v) in samples.iter_mut().zip(&row) {
                    series.push(*v);
                }
                *next_sample += 1;
            }
        };

        record_until(0.0, 0.0, None, &psi, &mut next_sample, &mut times, &mut samples);
        while t < t_end {
            let h = max_step.min(t_end - t);
            let seg = gen.segment(&psi, h);
            let end_norm = seg.norm_sq(h);
            if !(end_norm.is_finite() && end_norm > 0.0) {
                return Err(Error::Integration { time: t, reason: format!("norm underflow over step {h:e}") });
            }
            if log_norm + end_norm.ln() > log_threshold {
                record_until(t + h, t, Some(&seg), &psi, &mut next_sample, &mut times, &mut samples);
                gen.state_at(&seg, h, &mut evaluated);
                let inv = 1.0 / end_norm.sqrt();
                psi.iter_mut().zip(&evaluated).for_each(|(p, e)| *p = e * inv);
                log_norm += end_norm.ln();
                t = if h == t_end - t { t_end } else { t + h };
            } else {
                let target = (log_threshold - log_norm).exp();
                let s = seg.crossing(target).map_err(|e| match e {
                    Error::Integration { reason, .. } => Error::Integration { time: t, reason },
                    other => other,
                })?;
                let t_jump = t + s;
                record_until(t_jump, t, Some(&seg), &psi, &mut next_sample, &mut times, &mut samples);
                gen.state_at(&seg, s, &mut evaluated);
                let u: f64 = rng.random();
                let (label, after) = self.apply_jump(&evaluated, u).map_err(|e| match e {
                    Error::Integration { reason, .. } => Error::Integration { time: t_jump, reason },
                    other => other,
                })?;
                if let Some(prev) = jumps.last() {
                    let prev: &JumpEvent = prev;
                    if t_jump <= prev.time {
                        return Err(Error::Integration { time: t_jump, reason: "jump times failed to increase".into() });
                    }
                }
                jumps.push(JumpEvent { time: t_jump, channel: label });
                psi = after;
                t = t_jump;
                log_norm = 0.0;
                log_threshold = draw_log_threshold(&mut rng);
            }
        }
        record_until(t_end, t_end, None, &psi, &mut next_sample, &mut times, &mut samples);

        Ok(TrajectoryRecord { params, seed, t_end, sample_dt, times, labels, samples, jumps })
    }
}

/// `ln u` for `u` uniform on `(0, 1]`.
fn draw_log_threshold(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random();
    (1.0 - u).ln()
}

/// Seed of trajectory `index` in an ensemble: the first output of the
/// ChaCha8 stream `index` keyed by `master_seed`.
pub fn trajectory_seed(master_seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng.next_u64()
}

pub fn evolve_trajectory(params: &ModelParams, psi0: &StateVector, t_end: f64, seed: u64) -> Result<TrajectoryRecord> {
    McwfSystem::new(*params).evolve(psi0, t_end, seed, &TrajectoryOptions::default())
}

/// Runs `n_traj` trajectories; trajectory `k` uses `trajectory_seed(master_seed, k)`.
/// Output order and content do not depend on the thread count.
pub fn run_ensemble(
    params: &ModelParams,
    psi0: &StateVector,
    t_end: f64,
    n_traj: usize,
    master_seed: u64,
    opts: &TrajectoryOptions,
) -> Result<Vec<TrajectoryRecord>> {
    if n_traj < 1 {
        return Err(Error::Argument("ensemble needs at least one trajectory".into()));
    }
    let system = McwfSystem::new(*params);
    (0..n_traj)
        .into_par_iter()
        .map(|k| {
            system
                .evolve(psi0, t_end, trajectory_seed(master_seed, k as u64), opts)
                .map_err(|e| Error::Trajectory { index: k, source: Box::new(e) })
        })
        .collect()
}

/// Burn-in time and averaging window for steady-state estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SteadyStateWindow {
    pub t1: f64,
    pub window: f64,
}

impl SteadyStateWindow {
    /// `t1 = 10 max(1/w, 1/(N gamma_c), 1/gamma_c)` and `T = 10 t1`.
    pub fn default_for(params: &ModelParams) -> Result<Self> {
        if params.w() <= 0.0 {
            return Err(Error::Degenerate("w = 0 has no unique steady state".into()));
        }
        let slowest = (1.0 / params.w()).max(1.0 / (params.n_f64() * params.gamma_c())).max(1.0 / params.gamma_c());
        let t1 = 10.0 * slowest;
        Ok(SteadyStateWindow { t1, window: 10.0 * t1 })
    }

    pub fn t_end(&self) -> f64 {
        self.t1 + self.window
    }
}

/// Ensemble mean and standard error of time-averaged observables.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SteadyStateEstimate {
    pub labels: Vec<String>,
    pub mean: Vec<f64>,
    /// Standard error of the mean over trajectories; NaN for one trajectory.
    pub std_err: Vec<f64>,
    pub t1: f64,
    pub window: f64,
    pub n_traj: usize,
    /// Mean number of jumps per unit time inside the window.
    pub jump_rate: f64,
    pub jump_rate_err: f64,
}

impl SteadyStateEstimate {
    pub fn get(&self, label: &str) -> Option<(f64, f64)> {
        self.labels.iter().position(|l| l == label).map(|k| (self.mean[k], self.std_err[k]))
    }
}

/// Per-trajectory window averages folded into ensemble statistics.
#[derive(Clone, Debug)]
struct Accumulator {
    count: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl Accumulator {
    fn new(width: usize) -> Self {
        Accumulator { count: 0, sum: vec![0.0; width], sum_sq: vec![0.0; width] }
    }

    fn push(&mut self, values: &[f64]) {
        self.count += 1;
        for (k, v) in values.iter().enumerate() {
            self.sum[k] += v;
            self.sum_sq[k] += v * v;
        }
    }

    fn finish(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.count as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let err = self
            .sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| {
                if self.count < 2 {
                    f64::NAN
                } else {
                    let var = ((sq - n * m * m) / (n - 1.0)).max(0.0);
                    (var / n).sqrt()
                }
            })
            .collect();
        (mean, err)
    }
}

fn check_window(params: &ModelParams, t_end: f64, t1: f64, window: f64) -> Result<()> {
    if params.w() <= 0.0 {
        return Err(Error::Degenerate("w = 0 has no unique steady state; refusing to average".into()));
    }
    if !(window > 0.0) || !(t1 >= 0.0) {
        return Err(Error::Argument(format!("empty averaging window (t1 = {t1}, T = {window})")));
    }
    if t1 + window > t_end * (1.0 + 1e-12) {
        return Err(Error::Argument(format!("window ends at {} after t_end = {t_end}", t1 + window)));
    }
    Ok(())
}

fn jumps_in_window(record: &TrajectoryRecord, t1: f64, window: f64) -> f64 {
    record.jumps.iter().filter(|j| j.time >= t1 && j.time <= t1 + window).count() as f64 / window
}

/// Time average over `[t1, t1 + T]` inside each trajectory, then the
/// ensemble mean with its standard error.
pub fn steady_state(records: &[TrajectoryRecord], t1: f64, window: f64) -> Result<SteadyStateEstimate> {
    let first = records.first().ok_or_else(|| Error::Argument("no trajectories to average".into()))?;
    let labels = first.labels.clone();
    let mut acc = Accumulator::new(labels.len() + 1);
    for r in records {
        check_window(&r.params, r.t_end, t1, window)?;
        if r.labels != labels {
            return Err(Error::Argument("records carry different observables".into()));
        }
        let mut values = r.window_average(t1, window)?;
        values.push(jumps_in_window(r, t1, window));
        acc.push(&values);
    }
    let (mut mean, mut err) = acc.finish();
    let jump_rate = mean.pop().unwrap();
    let jump_rate_err = err.pop().unwrap();
    Ok(SteadyStateEstimate {
        labels: labels.as_ref().clone(),
        mean,
        std_err: err,
        t1,
        window,
        n_traj: records.len(),
        jump_rate,
        jump_rate_err,
    })
}

/// Runs an ensemble and reduces it to a steady-state estimate without
/// keeping the trajectories. Results match
/// `steady_state(&run_ensemble(..), t1, T)` exactly.
pub fn ensemble_steady_state(
    params: &ModelParams,
    psi0: &StateVector,
    n_traj: usize,
    master_seed: u64,
    window: SteadyStateWindow,
    opts: &TrajectoryOptions,
) -> Result<SteadyStateEstimate> {
    if n_traj < 1 {
        return Err(Error::Argument("ensemble needs at least one trajectory".into()));
    }
    let t_end = window.t_end();
    check_window(params, t_end, window.t1, window.window)?;
    let system = McwfSystem::new(*params);
    let labels = opts.observables.labels(params.n());
    let averages: Vec<Vec<f64>> = (0..n_traj)
        .into_par_iter()
        .map(|k| {
            let record = system
                .evolve(psi0, t_end, trajectory_seed(master_seed, k as u64), opts)
                .map_err(|e| Error::Trajectory { index: k, source: Box::new(e) })?;
            let mut values = record.window_average(window.t1, window.window)?;
            values.push(jumps_in_window(&record, window.t1, window.window));
            Ok(values)
        })
        .collect::<Result<_>>()?;
    // fixed-order reduction keeps the result independent of the thread count
    let mut acc = Accumulator::new(labels.len() + 1);
    for values in &averages {
        acc.push(values);
    }
    let (mut mean, mut err) = acc.finish();
    let jump_rate = mean.pop().unwrap();
    let jump_rate_err = err.pop().unwrap();
    Ok(SteadyStateEstimate {
        labels,
        mean,
        std_err: err,
        t1: window.t1,
        window: window.window,
        n_traj,
        jump_rate,
        jump_rate_err,
    })
}
