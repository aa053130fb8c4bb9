//! Validates that both backends are fully deterministic: identical inputs
//! produce byte-identical outputs, profiles and metrics across repeated
//! executions.

use cliquemr::cc::{run_cc, CcConfig};
use cliquemr::graph::Graph;
use cliquemr::highdeg::{default_beta, HighDegProgram};
use cliquemr::lowdeg::LowDegProgram;
use cliquemr::mr::MrConfig;
use cliquemr::sim::simulate;

const REPEATS: usize = 3;

#[test]
fn highdeg_cc_is_deterministic() {
    let g = Graph::generate(96, 0.5, 4);
    let config = CcConfig::default();
    let program = HighDegProgram::new(g.n(), default_beta(g.n()), &config);
    let first = run_cc(&program, &g, 17, &config).unwrap();
    for _ in 0..REPEATS {
        let again = run_cc(&program, &g, 17, &config).unwrap();
        assert_eq!(again.outputs, first.outputs);
        assert_eq!(again.rounds_used, first.rounds_used);
        assert_eq!(again.profile, first.profile);
    }
}

#[test]
fn lowdeg_cc_is_deterministic() {
    let g = Graph::generate_capped(96, 0.05, 5, 8);
    let config = CcConfig {
        route_capacity_factor: 128,
        ..CcConfig::default()
    };
    let mut program = LowDegProgram::new(g.n(), &config);
    program.t_iters = 2;
    let first = run_cc(&program, &g, 23, &config).unwrap();
    for _ in 0..REPEATS {
        let again = run_cc(&program, &g, 23, &config).unwrap();
        assert_eq!(again.outputs, first.outputs);
        assert_eq!(again.profile, first.profile);
    }
}

#[test]
fn simulation_is_deterministic() {
    let g = Graph::generate(64, 0.5, 2);
    let cc_config = CcConfig::default();
    let program = HighDegProgram::new(g.n(), default_beta(g.n()), &cc_config);
    let c = MrConfig::measure_c(g.n(), g.edge_count());
    let mr = MrConfig::for_graph_scale(g.n(), 0.0, c, 2);
    let first = simulate(&program, &g, &mr, 2, cc_config.route_rounds).unwrap();
    for _ in 0..REPEATS {
        let again = simulate(&program, &g, &mr, 2, cc_config.route_rounds).unwrap();
        assert_eq!(again.outputs, first.outputs);
        assert_eq!(again.mr_rounds_used, first.mr_rounds_used);
        assert_eq!(again.metrics, first.metrics);
    }
}

#[test]
fn graph_generation_is_deterministic() {
    for seed in 0..5 {
        let a = Graph::generate(64, 0.3, seed);
        let b = Graph::generate(64, 0.3, seed);
        assert_eq!(a, b);
        assert_eq!(a.write_edge_list(), b.write_edge_list());
    }
}
