//! Physics deliverables computed from steady states: emission rates,
//! `(J, M)` subspace populations and the inter-subspace transition diagram.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hilbert::{self, build_collective, build_single_atom, CollectiveKind, HalfInt, JmDecomposition, SingleAtomKind, StateVector};
use crate::mcwf::{population_label, SteadyStateEstimate, LABEL_JPJM, LABEL_JZ};
use crate::oracle::DensityMatrix;
use crate::output::{fmt_f64, fmt_opt, Header, Table};
use crate::params::{ModelParams, Regime};

/// Rates below this are treated as structural zeros in the diagram.
const RATE_FLOOR: f64 = 1e-12;

/// Where steady-state expectation values come from.
#[derive(Clone, Copy, Debug)]
pub enum StateSource<'a> {
    Estimate(&'a SteadyStateEstimate),
    Density(&'a DensityMatrix),
    Pure(&'a StateVector),
}

impl StateSource<'_> {
    fn n_atoms(&self) -> Option<usize> {
        match self {
            StateSource::Estimate(_) => None,
            StateSource::Density(rho) => Some(rho.n_atoms()),
            StateSource::Pure(psi) => Some(psi.n_atoms()),
        }
    }

    /// Expectation of a collective observable and its standard error.
    fn collective(&self, kind: CollectiveKind, label: &str, n: usize) -> Result<(f64, Option<f64>)> {
        match self {
            StateSource::Estimate(est) => est
                .get(label)
                .map(|(m, e)| (m, Some(e)))
                .ok_or_else(|| Error::Argument(format!("estimate lacks observable `{label}`"))),
            StateSource::Density(rho) => Ok((rho.expectation(&build_collective(kind, n)).re, None)),
            StateSource::Pure(psi) => Ok((psi.expectation(&build_collective(kind, n)).re, None)),
        }
    }

    fn source_kind(&self) -> TableSource {
        match self {
            StateSource::Estimate(_) => TableSource::Mcwf,
            StateSource::Density(_) => TableSource::Oracle,
            StateSource::Pure(_) => TableSource::State,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EmissionFlag {
    Superradiant,
    Subradiant,
    Neutral,
}

impl EmissionFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            EmissionFlag::Superradiant => "superradiant",
            EmissionFlag::Subradiant => "subradiant",
            EmissionFlag::Neutral => "neutral",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EmissionReport {
    /// `gamma_c <J+J->`
    pub i: f64,
    pub i_err: Option<f64>,
    /// `N_e gamma_c`, the rate of the same excitation spread over independent atoms.
    pub i_uncorr: f64,
    pub i_uncorr_err: Option<f64>,
    /// `N/2 + <Jz>`
    pub n_e: f64,
    pub n_e_err: Option<f64>,
    pub regime: Regime,
    pub flag: EmissionFlag,
}

impl EmissionReport {
    /// `I - I_uncorr` with an upper bound on its standard error (the sum of
    /// both errors, valid whatever their correlation).
    pub fn excess(&self) -> (f64, Option<f64>) {
        let err = match (self.i_err, self.i_uncorr_err) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        };
        (self.i - self.i_uncorr, err)
    }

    /// Excess in units of its standard error; infinite for exact sources.
    pub fn significance(&self) -> f64 {
        match self.excess() {
            (d, Some(e)) if e > 0.0 => d / e,
            (0.0, _) => 0.0,
            (d, _) => d.signum() * f64::INFINITY,
        }
    }
}

/// Emission rate, uncorrelated baseline and excited population. Stochastic
/// sources are flagged only when the excess exceeds three standard errors.
pub fn emission_report(params: &ModelParams, source: StateSource<'_>) -> Result<EmissionReport> {
    let n = params.n();
    if let Some(m) = source.n_atoms() {
        if m != n {
            return Err(Error::Argument(format!("state has {m} atoms, parameters have {n}")));
        }
    }
    let g = params.gamma_c();
    let (jpjm, jpjm_err) = source.collective(CollectiveKind::JpJm, LABEL_JPJM, n)?;
    let (jz, jz_err) = source.collective(CollectiveKind::Jz, LABEL_JZ, n)?;
    let n_e = 0.5 * params.n_f64() + jz;
    let mut report = EmissionReport {
        i: g * jpjm,
        i_err: jpjm_err.map(|e| g * e),
        i_uncorr: g * n_e,
        i_uncorr_err: jz_err.map(|e| g * e),
        n_e,
        n_e_err: jz_err,
        regime: params.regime(),
        flag: EmissionFlag::Neutral,
    };
    let (d, err) = report.excess();
    let threshold = match err {
        Some(e) => 3.0 * e,
        None => 1e-12 * report.i.abs().max(report.i_uncorr.abs()).max(g),
    };
    report.flag = if d > threshold {
        EmissionFlag::Superradiant
    } else if d < -threshold {
        EmissionFlag::Subradiant
    } else {
        EmissionFlag::Neutral
    };
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TableSource {
    Mcwf,
    Oracle,
    State,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SubspaceEntry {
    pub j: HalfInt,
    pub m: HalfInt,
    pub p: f64,
    pub err: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubspaceTable {
    pub n_atoms: usize,
    pub source: TableSource,
    /// Same order as the decomposition: `J` descending, then `M` descending.
    pub entries: Vec<SubspaceEntry>,
}

impl SubspaceTable {
    pub fn get(&self, j: HalfInt, m: HalfInt) -> Option<&SubspaceEntry> {
        self.entries.iter().find(|e| e.j == j && e.m == m)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.p).sum()
    }

    /// Summed population over every `M` of total spin `J`, with errors added
    /// in quadrature when present.
    pub fn weight_of_j(&self, j: HalfInt) -> (f64, Option<f64>) {
        self.weight_where(|e| e.j == j)
    }

    pub fn weight_where(&self, keep: impl Fn(&SubspaceEntry) -> bool) -> (f64, Option<f64>) {
        let picked: Vec<&SubspaceEntry> = self.entries.iter().filter(|e| keep(e)).collect();
        let p = picked.iter().map(|e| e.p).sum();
        let err = picked.iter().map(|e| e.err.map(|x| x * x)).sum::<Option<f64>>().map(f64::sqrt);
        (p, err)
    }

    pub fn to_table(&self, header: Header) -> Table {
        let mut t = Table::new(header.with("source", self.source), &["J", "M", "P", "P_err"]);
        for e in &self.entries {
            t.push(vec![e.j.to_string(), e.m.to_string(), fmt_f64(e.p), fmt_opt(e.err)]);
        }
        t
    }
}

/// `P_{M,J}`: the expectation of each subspace projector.
pub fn subspace_populations(decomp: &JmDecomposition, source: StateSource<'_>) -> Result<SubspaceTable> {
    let n = decomp.n_atoms();
    if let Some(m) = source.n_atoms() {
        if m != n {
            return Err(Error::Argument(format!("state has {m} atoms, decomposition has {n}")));
        }
    }
    let entries = decomp
        .subspaces()
        .iter()
        .map(|s| {
            let (p, err) = match source {
                StateSource::Estimate(est) => {
                    let label = population_label(s.j, s.m);
                    let (p, e) = est
                        .get(&label)
                        .ok_or_else(|| Error::Argument(format!("estimate lacks observable `{label}`")))?;
                    (p, Some(e))
                }
                StateSource::Density(rho) => (s.population_dm(rho.matrix()), None),
                StateSource::Pure(psi) => (s.population(psi.amplitudes()), None),
            };
            Ok(SubspaceEntry { j: s.j, m: s.m, p, err })
        })
        .collect::<Result<_>>()?;
    Ok(SubspaceTable { n_atoms: n, source: source.source_kind(), entries })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Decay,
    Repump,
}

impl Mechanism {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mechanism::Decay => "decay",
            Mechanism::Repump => "repump",
        }
    }
}

/// A `(J, M)` label.
pub type Block = (HalfInt, HalfInt);

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TransitionEdge {
    pub from: Block,
    pub to: Block,
    pub mechanism: Mechanism,
    /// Rate averaged over the degenerate initial states, summed over final states.
    pub rate: f64,
}

/// Total outgoing rate of one source block per mechanism, from the
/// operator expectation rather than from the edges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BlockTotals {
    pub block: Block,
    /// `gamma_c` times the average of `<J+J->` over the block.
    pub decay: f64,
    /// `w` times the average of `sum_j <sigma-_j sigma+_j>` over the block.
    pub repump: f64,
}

/// Competing flows between two blocks whose `M` differ by one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NetFlow {
    /// Block with the lower `M`.
    pub lower: Block,
    pub upper: Block,
    /// Raw decay rate `upper -> lower` (zero when the `J` differ).
    pub decay_rate: f64,
    /// Raw repump rate `lower -> upper`.
    pub repump_rate: f64,
    /// Mechanism with the larger raw rate.
    pub raw_dominant: Mechanism,
    /// Rates multiplied by the population of their source block.
    pub weighted: Option<(f64, f64)>,
    pub weighted_dominant: Option<Mechanism>,
}

impl NetFlow {
    /// Dominant mechanism: population weighted when available, raw otherwise.
    pub fn dominant(&self) -> Mechanism {
        self.weighted_dominant.unwrap_or(self.raw_dominant)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransitionDiagram {
    pub n_atoms: usize,
    pub edges: Vec<TransitionEdge>,
    pub totals: Vec<BlockTotals>,
    pub net: Vec<NetFlow>,
}

impl TransitionDiagram {
    pub fn rate(&self, from: Block, to: Block, mechanism: Mechanism) -> f64 {
        self.edges
            .iter()
            .filter(|e| e.from == from && e.to == to && e.mechanism == mechanism)
            .map(|e| e.rate)
            .sum()
    }

    /// Sum of edge rates leaving `from` by `mechanism`.
    pub fn outgoing(&self, from: Block, mechanism: Mechanism) -> f64 {
        self.edges.iter().filter(|e| e.from == from && e.mechanism == mechanism).map(|e| e.rate).sum()
    }

    pub fn to_table(&self, header: Header) -> Table {
        let mut t = Table::new(header, &["J", "M", "J_to", "M_to", "mechanism", "rate"]);
        for e in &self.edges {
            t.push(vec![
                e.from.0.to_string(),
                e.from.1.to_string(),
                e.to.0.to_string(),
                e.to.1.to_string(),
                e.mechanism.as_str().to_string(),
                fmt_f64(e.rate),
            ]);
        }
        t
    }

    pub fn net_table(&self, header: Header) -> Table {
        let mut t = Table::new(
            header,
            &["J_lower", "M_lower", "J_upper", "M_upper", "decay_rate", "repump_rate", "raw_dominant", "decay_flow", "repump_flow", "weighted_dominant"],
        );
        for f in &self.net {
            t.push(vec![
                f.lower.0.to_string(),
                f.lower.1.to_string(),
                f.upper.0.to_string(),
                f.upper.1.to_string(),
                fmt_f64(f.decay_rate),
                fmt_f64(f.repump_rate),
                f.raw_dominant.as_str().to_string(),
                fmt_opt(f.weighted.map(|w| w.0)),
                fmt_opt(f.weighted.map(|w| w.1)),
                f.weighted_dominant.map(|m| m.as_str().to_string()).unwrap_or_default(),
            ]);
        }
        t
    }
}

/// Rates between `(J, M)` blocks, from projector norms of the jump outputs.
///
/// For each source block, every jump operator is applied to each degenerate
/// basis state and the squared norm landing in each target block is
/// averaged over the degenerate states. With `populations` the net flows
/// are also weighted by the source populations.
pub fn transition_diagram(params: &ModelParams, decomp: &JmDecomposition, populations: Option<&SubspaceTable>) -> Result<TransitionDiagram> {
    let n = params.n();
    if decomp.n_atoms() != n {
        return Err(Error::Argument(format!("decomposition has {} atoms, parameters have {n}", decomp.n_atoms())));
    }
    if let Some(t) = populations {
        if t.n_atoms != n {
            return Err(Error::Argument("population table is for a different N".into()));
        }
    }
    let jm = build_collective(CollectiveKind::JMinus, n);
    let pumps: Vec<_> = (0..n).map(|j| build_single_atom(SingleAtomKind::SigmaPlus, j, n)).collect::<Result<_>>()?;
    let subs = decomp.subspaces();
    let mut edges = Vec::new();
    let mut totals = Vec::with_capacity(subs.len());
    for src in subs {
        let d = src.multiplicity() as f64;
        let mut decay = vec![0.0; subs.len()];
        let mut repump = vec![0.0; subs.len()];
        let mut decay_total = 0.0;
        let mut repump_total = 0.0;
        for xi in 0..src.multiplicity() {
            let psi = src.basis_vector(xi, n);
            let lowered = jm.apply(psi.amplitudes());
            decay_total += hilbert::norm_sq(&lowered);
            for (k, dst) in subs.iter().enumerate() {
                if dst.m.twice() == src.m.twice() - 2 {
                    decay[k] += dst.population(&lowered);
                }
            }
            for op in &pumps {
                let raised = op.apply(psi.amplitudes());
                repump_total += hilbert::norm_sq(&raised);
                for (k, dst) in subs.iter().enumerate() {
                    if dst.m.twice() == src.m.twice() + 2 {
                        repump[k] += dst.population(&raised);
                    }
                }
            }
        }
        totals.push(BlockTotals {
            block: (src.j, src.m),
            decay: params.gamma_c() * decay_total / d,
            repump: params.w() * repump_total / d,
        });
        for (k, dst) in subs.iter().enumerate() {
            for (mechanism, raw, scale) in [(Mechanism::Decay, decay[k], params.gamma_c()), (Mechanism::Repump, repump[k], params.w())] {
                let rate = scale * raw / d;
                if rate > RATE_FLOOR {
                    edges.push(TransitionEdge { from: (src.j, src.m), to: (dst.j, dst.m), mechanism, rate });
                }
            }
        }
    }
    let mut diagram = TransitionDiagram { n_atoms: n, edges, totals, net: Vec::new() };
    diagram.net = net_flows(&diagram, decomp, populations);
    Ok(diagram)
}

fn net_flows(diagram: &TransitionDiagram, decomp: &JmDecomposition, populations: Option<&SubspaceTable>) -> Vec<NetFlow> {
    let mut out = Vec::new();
    for lower in decomp.subspaces() {
        for upper in decomp.subspaces() {
            if upper.m.twice() != lower.m.twice() + 2 {
                continue;
            }
            let (lo, up) = ((lower.j, lower.m), (upper.j, upper.m));
            let decay_rate = diagram.rate(up, lo, Mechanism::Decay);
            let repump_rate = diagram.rate(lo, up, Mechanism::Repump);
            if decay_rate == 0.0 && repump_rate == 0.0 {
                continue;
            }
            let pick = |d: f64, r: f64| if d > r { Mechanism::Decay } else { Mechanism::Repump };
            let weighted = populations.map(|t| {
                let p = |b: Block| t.get(b.0, b.1).map(|e| e.p).unwrap_or(0.0);
                (decay_rate * p(up), repump_rate * p(lo))
            });
            out.push(NetFlow {
                lower: lo,
                upper: up,
                decay_rate,
                repump_rate,
                raw_dominant: pick(decay_rate, repump_rate),
                weighted,
                weighted_dominant: weighted.map(|(d, r)| pick(d, r)),
            });
        }
    }
    out
}
