//! Subspace tables and transition diagrams checked against independently
//! computed branching ratios and the exact steady states.

use std::collections::BTreeMap;

use superrad::analysis::{subspace_populations, transition_diagram, Mechanism, StateSource};
use superrad::hilbert::jm_decomposition;
use superrad::oracle::{build_liouvillian, steady_state_dm};
use superrad::{HalfInt, ModelParams};

fn branching() -> BTreeMap<String, f64> {
    let v: serde_json::Value = serde_json::from_str(include_str!("fixtures/reference.json")).unwrap();
    serde_json::from_value(v["repump_branching_n4_j1_m_minus1_per_unit_w"].clone()).unwrap()
}

#[test]
fn repump_branching_out_of_j1_m_minus1() {
    let w = 0.37;
    let p = ModelParams::new(4, 1.0, w).unwrap();
    let decomp = jm_decomposition(4).unwrap();
    let d = transition_diagram(&p, &decomp, None).unwrap();
    let from = (HalfInt::from_twice(2), HalfInt::from_twice(-2));
    for (j, expected) in branching() {
        let j: i32 = j.parse().unwrap();
        let to = (HalfInt::from_twice(2 * j), HalfInt::from_twice(0));
        let got = d.rate(from, to, Mechanism::Repump);
        assert!((got - w * expected).abs() < 1e-10, "J' = {j}: {got} vs {}", w * expected);
    }
}

#[test]
fn fig3_pump_values_have_consistent_tables() {
    let decomp = jm_decomposition(4).unwrap();
    for w in [0.1, 2.0, 10.0] {
        let p = ModelParams::new(4, 1.0, w).unwrap();
        let rho = steady_state_dm(&build_liouvillian(&p).unwrap()).unwrap();
        let table = subspace_populations(&decomp, StateSource::Density(&rho)).unwrap();
        assert_eq!(table.entries.len(), 9);
        assert!((table.total() - 1.0).abs() < 1e-10);
        let d = transition_diagram(&p, &decomp, Some(&table)).unwrap();
        for t in &d.totals {
            assert!((d.outgoing(t.block, Mechanism::Decay) - t.decay).abs() < 1e-8);
            assert!((d.outgoing(t.block, Mechanism::Repump) - t.repump).abs() < 1e-8);
        }
        // in steady state the population flow into each block balances the flow out
        for e in &table.entries {
            let b = (e.j, e.m);
            let out = e.p * (d.outgoing(b, Mechanism::Decay) + d.outgoing(b, Mechanism::Repump));
            let inflow: f64 = d
                .edges
                .iter()
                .filter(|x| x.to == b)
                .map(|x| x.rate * table.get(x.from.0, x.from.1).unwrap().p)
                .sum();
            // coherences between degenerate copies can carry flow, so this holds only approximately
            assert!((out - inflow).abs() < 0.05 * (out + inflow).max(1e-3), "w = {w}, block {b:?}");
        }
    }
}
