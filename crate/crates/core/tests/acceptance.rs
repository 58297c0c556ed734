//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Run with `cargo test -p superrad-core --test acceptance`. The stochastic
//! criteria take several minutes on one core.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use superrad::analysis::{emission_report, subspace_populations, transition_diagram, EmissionFlag, Mechanism, StateSource, SubspaceTable};
use superrad::cumulant::{coherence_time, rescaled_rhs, rescaled_steady_state, steady_state_cubic, Closure, RescaledState};
use superrad::hilbert::{self, build_single_atom, jm_decomposition, projector, SingleAtomKind, SparseOperator};
use superrad::mcwf::{ensemble_steady_state, sigma_z_label, McwfSystem, ObservableSet, SteadyStateEstimate, SteadyStateWindow, TrajectoryOptions};
use superrad::oracle::{build_liouvillian, fitted_decay_rate, regression_correlation, steady_state_dm, DensityMatrix};
use superrad::output::body_bytes;
use superrad::sweep::{run_sweep, EnsembleSettings, Grid, Method, SweepSpec};
use superrad::{ModelParams, StateVector};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Agreement threshold in standard errors.
const SIGMAS: f64 = 3.0;

struct Outcome {
    pass: bool,
    summary: String,
    details: Vec<String>,
}

impl Outcome {
    fn new(pass: bool, summary: impl Into<String>) -> Self {
        Outcome { pass, summary: summary.into(), details: Vec::new() }
    }

    fn detail(mut self, lines: Vec<String>) -> Self {
        self.details = lines;
        self
    }
}

fn params(n: usize, w: f64) -> ModelParams {
    ModelParams::new(n, 1.0, w).unwrap()
}

/// MCWF steady state with subspace populations, shared between criteria.
fn mcwf_point(n: usize, w: f64, n_traj: usize) -> Arc<SteadyStateEstimate> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, u64, usize), Arc<SteadyStateEstimate>>>> = OnceLock::new();
    let key = (n, w.to_bits(), n_traj);
    if let Some(hit) = CACHE.get_or_init(Default::default).lock().unwrap().get(&key) {
        return hit.clone();
    }
    let p = params(n, w);
    let decomp = Arc::new(jm_decomposition(n).unwrap());
    let opts = TrajectoryOptions { sample_dt: None, observables: ObservableSet::with_subspaces(decomp) };
    let window = SteadyStateWindow::default_for(&p).unwrap();
    let seed = 1000 * n as u64 + (10.0 * w) as u64;
    let est = Arc::new(ensemble_steady_state(&p, &StateVector::ground(n), n_traj, seed, window, &opts).unwrap());
    CACHE.get().unwrap().lock().unwrap().insert(key, est.clone());
    est
}

fn oracle_state(n: usize, w: f64) -> DensityMatrix {
    steady_state_dm(&build_liouvillian(&params(n, w)).unwrap()).unwrap()
}

/// Largest `|mcwf - exact| / SE` over the population table.
fn table_deviation(mcwf: &SubspaceTable, exact: &SubspaceTable) -> (f64, String) {
    let mut worst = (0.0, String::new());
    for e in &exact.entries {
        let m = mcwf.get(e.j, e.m).unwrap();
        let se = m.err.unwrap();
        let z = if se > 0.0 { (m.p - e.p).abs() / se } else if (m.p - e.p).abs() < 1e-12 { 0.0 } else { f64::INFINITY };
        if z > worst.0 {
            worst = (z, format!("P[{}, {}]", e.j, e.m));
        }
    }
    worst
}

fn criterion_1() -> Outcome {
    let mut pass = true;
    let mut worst_z: f64 = 0.0;
    let mut worst_rel: f64 = 0.0;
    let mut lines = Vec::new();
    for n in [2, 3, 4] {
        let decomp = jm_decomposition(n).unwrap();
        for w in [0.1, 1.0, 2.0, 5.0, 20.0] {
            let p = params(n, w);
            let est = mcwf_point(n, w, 1000);
            let rho = oracle_state(n, w);
            let mc = emission_report(&p, StateSource::Estimate(&est)).unwrap();
            let ex = emission_report(&p, StateSource::Density(&rho)).unwrap();
            let z_i = (mc.i - ex.i).abs() / mc.i_err.unwrap();
            let rel = mc.i_err.unwrap() / mc.i;
            let sz_op = build_single_atom(SingleAtomKind::SigmaZ, 0, n).unwrap();
            let sz_exact = rho.expectation(&sz_op).re;
            let (sz_mc, sz_err) = est.get(&sigma_z_label(0)).unwrap();
            let z_sz = (sz_mc - sz_exact).abs() / sz_err;
            let mc_table = subspace_populations(&decomp, StateSource::Estimate(&est)).unwrap();
            let ex_table = subspace_populations(&decomp, StateSource::Density(&rho)).unwrap();
            let (z_p, which) = table_deviation(&mc_table, &ex_table);
            let ok = z_i <= SIGMAS && z_sz <= SIGMAS && z_p <= SIGMAS && rel <= 0.03;
            pass &= ok;
            worst_z = worst_z.max(z_i).max(z_sz).max(z_p);
            worst_rel = worst_rel.max(rel);
            lines.push(format!(
                "N={n} w={w:<4} I {:.5}±{:.5} vs {:.5} ({z_i:.2}σ), sz {z_sz:.2}σ, worst {which} {z_p:.2}σ, SE(I)/I {:.2}%{}",
                mc.i,
                mc.i_err.unwrap(),
                ex.i,
                100.0 * rel,
                if ok { "" } else { "  <-- fails" }
            ));
        }
    }
    Outcome::new(pass, format!("MCWF matches exact oracle at 15 points (worst {worst_z:.2}σ, worst SE(I)/I {:.2}%)", 100.0 * worst_rel))
        .detail(lines)
}

fn criterion_2() -> Outcome {
    let mut worst: f64 = 0.0;
    for n in [10usize, 100, 1000] {
        let ng = n as f64;
        for x in [0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.999, 1.0, 1.5, 10.0] {
            let p = params(n, x * ng);
            let s = rescaled_steady_state(&p);
            // stationarity solved directly: either jpjm = 0 (then jz = 1/2),
            // or jz = w / (2 N gamma) and jpjm = w (1/2 - jz) / (N gamma)
            let w = p.w();
            let direct = if w < ng {
                let jz = w / (2.0 * ng);
                RescaledState { jz, jpjm: w * (0.5 - jz) / ng }
            } else {
                RescaledState { jz: 0.5, jpjm: 0.0 }
            };
            let r = rescaled_rhs(&s, &p);
            let scale = w.max(ng);
            worst = worst
                .max((s.jz - direct.jz).abs())
                .max((s.jpjm - direct.jpjm).abs())
                .max(r.jz.abs() / scale)
                .max(r.jpjm.abs() / scale);
        }
    }
    Outcome::new(worst <= 1e-12, format!("closed-form large-N steady states are stationary, incl. threshold (worst deviation {worst:.1e})"))
}

fn criterion_3() -> Outcome {
    let n = 100;
    let grid: Vec<f64> = (1..=200).map(|k| k as f64 * 0.5).collect();
    let mut best = (f64::NEG_INFINITY, 0.0);
    let mut failures = 0;
    for &w in &grid {
        let p = params(n, w);
        match steady_state_cubic(&p, Closure::default()) {
            Ok(sol) => {
                let i = sol.state.intensity(&p);
                if i > best.0 {
                    best = (i, w);
                }
            }
            Err(_) => failures += 1,
        }
    }
    let (i_max, w_max) = best;
    let di = (i_max - 1250.0).abs() / 1250.0;
    let dw = (w_max - 50.0).abs() / 50.0;
    Outcome::new(
        failures == 0 && di <= 0.03 && dw <= 0.10,
        format!("N=100 cumulant peak I = {i_max:.1} ({:.2}% off 1250) at w = {w_max} ({:.1}% off 50), {failures} failed points", 100.0 * di, 100.0 * dw),
    )
}

fn criterion_4() -> Outcome {
    let n = 10;
    let mut pass = true;
    let mut lines = Vec::new();
    for (w, n_traj) in [(0.1, 60), (2.0, 100), (5.0, 100), (100.0, 100)] {
        let p = params(n, w);
        let window = SteadyStateWindow::default_for(&p).unwrap();
        let est = ensemble_steady_state(&p, &StateVector::ground(n), n_traj, 4000 + w as u64, window, &TrajectoryOptions::default()).unwrap();
        let r = emission_report(&p, StateSource::Estimate(&est)).unwrap();
        let sig = r.significance();
        let ratio = r.i / (n as f64 * p.gamma_c());
        let ok = match w {
            w if w < 1.0 => r.flag == EmissionFlag::Subradiant,
            w if w < 10.0 => r.flag == EmissionFlag::Superradiant,
            _ => (0.9..=1.0).contains(&ratio),
        };
        pass &= ok;
        lines.push(format!(
            "w={w:<5} I = {:.3}±{:.3}, N_e = {:.3}±{:.3}, excess {sig:+.1}σ, I/NΓ = {ratio:.4}, {} trajectories{}",
            r.i,
            r.i_err.unwrap(),
            r.i_uncorr,
            r.i_uncorr_err.unwrap(),
            n_traj,
            if ok { "" } else { "  <-- fails" }
        ));
    }
    Outcome::new(pass, "N=10 regime structure: subradiant at w=0.1, superradiant at w=2 and 5, I/NΓ in [0.9, 1] at w=100").detail(lines)
}

fn criterion_5() -> Outcome {
    let (n, w) = (4, 0.1);
    let p = params(n, w);
    let decomp = jm_decomposition(n).unwrap();
    let rho = oracle_state(n, w);
    let exact = subspace_populations(&decomp, StateSource::Density(&rho)).unwrap();
    let low = exact.weight_where(|e| e.j.twice() <= 2).0;
    let high = exact.weight_of_j(hilbert::HalfInt::from_twice(4)).0;
    let ex = emission_report(&p, StateSource::Density(&rho)).unwrap();
    let frac = ex.n_e / n as f64;
    let est = mcwf_point(n, w, 1000);
    let mc = subspace_populations(&decomp, StateSource::Estimate(&est)).unwrap();
    let (z_p, which) = table_deviation(&mc, &exact);
    let mc_e = emission_report(&p, StateSource::Estimate(&est)).unwrap();
    let z_ne = (mc_e.n_e - ex.n_e).abs() / mc_e.n_e_err.unwrap();
    let pass = low > high && (0.3..=0.6).contains(&frac) && z_p <= SIGMAS && z_ne <= SIGMAS;
    Outcome::new(
        pass,
        format!("N=4 w=0.1 trapping: P(J<=1) = {low:.4} > P(J=2) = {high:.4}, N_e/N = {frac:.4}; MCWF worst {which} {z_p:.2}σ, N_e {z_ne:.2}σ"),
    )
}

fn criterion_6() -> Outcome {
    let mut pass = true;
    let mut worst_c0: f64 = 0.0;
    for (n, w) in [(2, 1.0), (2, 0.3), (3, 1.5), (3, 4.0)] {
        let p = params(n, w);
        let l = build_liouvillian(&p).unwrap();
        let rho = steady_state_dm(&l).unwrap();
        let c = regression_correlation(&l, &rho, &[0.0]).unwrap()[0];
        let sp0 = build_single_atom(SingleAtomKind::SigmaPlus, 0, n).unwrap();
        let sm1 = build_single_atom(SingleAtomKind::SigmaMinus, 1, n).unwrap();
        let direct = rho.expectation(&sp0.matmul(&sm1));
        worst_c0 = worst_c0.max((c - direct).norm());
    }
    pass &= worst_c0 <= 1e-10;
    let mut worst_t: f64 = 0.0;
    for n in [1usize, 4, 10, 100] {
        for w in [0.0, 0.5, 3.0, 50.0] {
            let t = coherence_time(&params(n, w)).t_coh;
            worst_t = worst_t.max((t - n as f64 / (n as f64 + 2.0 * w)).abs());
        }
    }
    pass &= worst_t == 0.0;
    let t10 = coherence_time(&params(10, 5.0)).t_coh;
    pass &= t10 == 0.5;
    let at_peak: Vec<f64> = [4usize, 10, 100].iter().map(|&n| coherence_time(&params(n, n as f64 / 2.0)).t_coh).collect();
    pass &= at_peak.iter().all(|&t| t == at_peak[0]);

    // recorded, not asserted: the analytic rate is itself a factorization
    let p = params(3, 1.5);
    let l = build_liouvillian(&p).unwrap();
    let rho = steady_state_dm(&l).unwrap();
    let tau: Vec<f64> = (0..=40).map(|k| 0.25 * k as f64).collect();
    let c = regression_correlation(&l, &rho, &tau).unwrap();
    let fitted = fitted_decay_rate(&tau, &c, 1e-6).unwrap();
    let analytic = coherence_time(&p).regression_rate;
    Outcome::new(
        pass,
        format!("coherence: |C(0) - <s+ s->| <= {worst_c0:.1e}, t_coh exact, t_coh(10, 5) = {t10}, t_coh at w=N/2 = {at_peak:?}"),
    )
    .detail(vec![format!("N=3 w=1.5 fitted |C| decay rate {fitted:.4} vs analytic {analytic:.4} (informational)")])
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let mut proj: f64 = 0.0;
    let mut rates: f64 = 0.0;
    for n in 1..=8 {
        let decomp = jm_decomposition(n).unwrap();
        let ops: Vec<SparseOperator> = decomp.subspaces().iter().map(|s| projector(s, n)).collect();
        let refs: Vec<(C64, &SparseOperator)> = ops.iter().map(|o| (C64::new(1.0, 0.0), o)).collect();
        let sum = SparseOperator::linear_combination(&refs).to_dense();
        proj = proj.max((sum - DMatrix::<C64>::identity(hilbert::dim(n), hilbert::dim(n))).camax());
        if n <= 6 {
            let d = transition_diagram(&ModelParams::new(n, 0.8, 1.7).unwrap(), &decomp, None).unwrap();
            for t in &d.totals {
                rates = rates
                    .max((d.outgoing(t.block, Mechanism::Decay) - t.decay).abs())
                    .max((d.outgoing(t.block, Mechanism::Repump) - t.repump).abs());
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut trace: f64 = 0.0;
    for n in 1..=4 {
        let l = build_liouvillian(&params(n, 1.3)).unwrap();
        let d = hilbert::dim(n);
        for _ in 0..5 {
            let x = DMatrix::<C64>::from_fn(d, d, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
            trace = trace.max(l.apply(&x).trace().norm() / l.norm());
        }
    }
    let mut jumps: f64 = 0.0;
    for n in 1..=6 {
        let system = McwfSystem::new(params(n, 0.9));
        let d = hilbert::dim(n);
        for _ in 0..20 {
            let mut amps: Vec<C64> = (0..d).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
            let norm = hilbert::norm_sq(&amps).sqrt();
            amps.iter_mut().for_each(|a| *a /= norm);
            let (_, out) = system.apply_jump(&amps, rng.random()).unwrap();
            jumps = jumps.max((hilbert::norm_sq(&out) - 1.0).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = proj <= 1e-10 && rates <= 1e-8 && trace <= 1e-10 && jumps <= 1e-10 && secs < 60.0;
    Outcome::new(
        pass,
        format!("invariants: projectors {proj:.1e}, rate sums {rates:.1e}, trace {trace:.1e}, jump norms {jumps:.1e}, in {secs:.1} s"),
    )
}

fn criterion_8() -> Outcome {
    let mut spec = SweepSpec::new(params(3, 1.0), Grid::Values(vec![0.3, 1.0, 4.0]), &[Method::Mcwf, Method::Cumulant, Method::ClosedForm, Method::Oracle]);
    spec.ensemble = EnsembleSettings { n_traj: 40, master_seed: 2024, t1: Some(10.0), window: Some(40.0) };
    let dir = tempfile::tempdir().unwrap();
    let mut bodies = Vec::new();
    for threads in [1, 4, 1] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let path = dir.path().join(format!("sweep_{threads}_{}.csv", bodies.len()));
        pool.install(|| run_sweep(spec.clone()).unwrap().to_table().persist(&path).unwrap());
        bodies.push(body_bytes(&path).unwrap());
    }
    let same = bodies.windows(2).all(|b| b[0] == b[1]);
    Outcome::new(same, format!("sweep bodies byte-identical across 1 and 4 threads and repeated runs ({} bytes)", bodies[0].len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1", criterion_1),
        ("2", criterion_2),
        ("3", criterion_3),
        ("4", criterion_4),
        ("5", criterion_5),
        ("6", criterion_6),
        ("7", criterion_7),
        ("8", criterion_8),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    for (id, run) in criteria {
        if !only.is_empty() && !only.iter().any(|o| o == id) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let tag = if out.pass { "PASS" } else { "FAIL" };
        println!("{tag} criterion {id}: {} [{:.1} s]", out.summary, start.elapsed().as_secs_f64());
        for line in &out.details {
            println!("       {line}");
        }
        if !out.pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {}", failed.join(", "));
        std::process::exit(1);
    }
}
