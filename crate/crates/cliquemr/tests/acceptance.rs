//! Acceptance suite: every release-gating check in one place, one printed
//! verdict line per criterion (run with `--nocapture` to see them).
//!
//! The structural checks (properness, palette windows, backend equivalence,
//! round arithmetic, oracle agreement) are zero tolerance. The probabilistic
//! behaviors (trial counts, residual sizes, in-group degrees, component
//! sizes) are checked as frequencies over seeded sweeps with pinned
//! thresholds.

use std::collections::BTreeSet;
use std::time::Instant;

use cliquemr::cc::{check_lightweight, run_cc, CcConfig, CcProgram, StepCtx};
use cliquemr::cc::{Action, ProgramFault, ADJ_SEGMENT};
use cliquemr::graph::Graph;
use cliquemr::highdeg::{classify_groups, default_beta, HighDegOutcome, HighDegProgram};
use cliquemr::lowdeg::{
    bfs_ball, cluster_merge, decode_ball_output, default_phases, replay_locally, replay_radius,
    rs_words, run_global, LowDegOutcome, LowDegProgram, RsTable,
};
use cliquemr::mr::MrConfig;
use cliquemr::sim::{compute_partition, simulate};
use cliquemr::{NodeId, Word};

// Pinned lightweight-check constants (criterion 7 and the per-run checks).
const C_K: u64 = 8;
const C_N: u64 = 64;

fn cc_config() -> CcConfig {
    CcConfig {
        route_capacity_factor: 128,
        ..CcConfig::default()
    }
}

fn run_highdeg(g: &Graph, beta: u32, seed: u64) -> (HighDegOutcome, u32) {
    let config = cc_config();
    let program = HighDegProgram::new(g.n(), beta, &config);
    let run = run_cc(&program, g, seed, &config).expect("highdeg run completes");
    let outcome = HighDegOutcome::from_outputs(&run.outputs).expect("outputs decode");
    (outcome, run.rounds_used)
}

fn run_lowdeg(g: &Graph, t_iters: u32, seed: u64) -> LowDegOutcome {
    let config = cc_config();
    let mut program = LowDegProgram::new(g.n(), &config);
    program.t_iters = t_iters;
    let run = run_cc(&program, g, seed, &config).expect("lowdeg run completes");
    LowDegOutcome::from_outputs(&run.outputs).expect("outputs decode")
}

fn sparse_graph(n: u32, seed: u64) -> Graph {
    // max degree well under beta^4, per the low-degree regime
    Graph::generate_capped(n, 6.0 / n as f64, 6, seed)
}

/// Criterion 1: every emitted coloring is proper, across 300 runs.
#[test]
fn criterion_1_properness_always() {
    let started = Instant::now();
    let mut runs = 0;
    for &n in &[128u32, 256, 512] {
        for &p in &[0.25f64, 0.5] {
            for seed in 0..25 {
                let g = Graph::generate(n, p, seed);
                let (outcome, _) = run_highdeg(&g, default_beta(n), seed);
                outcome
                    .coloring
                    .check_total_proper(&g)
                    .unwrap_or_else(|e| panic!("highdeg n={n} p={p} seed={seed}: {e}"));
                runs += 1;
            }
        }
    }
    for &n in &[128u32, 256] {
        for seed in 0..75 {
            let g = sparse_graph(n, seed);
            let outcome = run_lowdeg(&g, 2, seed);
            outcome
                .coloring
                .check_total_proper(&g)
                .unwrap_or_else(|e| panic!("lowdeg n={n} seed={seed}: {e}"));
            runs += 1;
        }
    }
    assert_eq!(runs, 300);
    println!(
        "criterion 1 (properness, always): PASS — 300/300 proper in {:.1}s",
        started.elapsed().as_secs_f64()
    );
}

/// Criterion 2: palette bounds. The high-degree program stays within
/// (5b+1) * ceil(delta/b) + (delta+1) colors, within 8*delta once
/// delta >= beta^4, and the low-degree program within delta + 1.
#[test]
fn criterion_2_palette_bounds() {
    for &(n, p) in &[(128u32, 0.5f64), (256, 0.25), (256, 0.5), (512, 0.5)] {
        for seed in 0..10 {
            let g = Graph::generate(n, p, seed);
            let beta = default_beta(n);
            let (outcome, _) = run_highdeg(&g, beta, seed);
            let delta = g.max_degree() as u64;
            let bound = (5 * beta as u64 + 1) * g.max_degree().div_ceil(beta) as u64 + delta + 1;
            let used = outcome.coloring.colors_used() as u64;
            let max = outcome.coloring.max_color();
            assert!(
                used <= bound && max <= bound,
                "n={n} p={p} seed={seed}: {used}/{max} > {bound}"
            );
        }
    }
    // reachable high-degree regime: beta lowered to 2..3 so delta >= beta^4
    for &beta in &[2u32, 3] {
        for seed in 0..10 {
            let g = Graph::generate(256, 0.5, seed);
            let delta = g.max_degree() as u64;
            assert!(delta >= (beta as u64).pow(4), "regime unmet");
            let (outcome, _) = run_highdeg(&g, beta, seed);
            let used = outcome.coloring.colors_used() as u64;
            assert!(
                used <= 8 * delta,
                "beta={beta} seed={seed}: {used} > 8*{delta}"
            );
        }
    }
    for seed in 0..20 {
        let g = sparse_graph(128, seed);
        let outcome = run_lowdeg(&g, 2, seed);
        assert!(
            outcome.coloring.max_color() <= g.max_degree() as Word + 1,
            "seed {seed}"
        );
    }
    println!("criterion 2 (palette bounds): PASS");
}

/// Criteria 3, 4, 5: the mandated 100-seed sweep at n = 512,
/// beta = ceil(log2 n): trial counts, residual sizes, in-group degrees.
#[test]
fn criterion_3_4_5_highdeg_sweep() {
    let n = 512u32;
    let beta = default_beta(n); // 9
    let seeds = 100u64;
    let mut trials: Vec<u64> = Vec::new();
    let mut residual_ok = 0u64;
    let mut restarts_total = 0u64;
    let mut igdeg_exceeds = 0u64;
    for seed in 0..seeds {
        let g = Graph::generate(n, 0.5, seed);
        let delta = g.max_degree() as u64;
        let (outcome, _) = run_highdeg(&g, beta, seed);
        trials.push(outcome.trials);
        restarts_total += outcome.restarts;
        let cap = 100 * n as u64 * (beta as u64).pow(4) / delta.max(1);
        if outcome.residual_edges <= cap {
            residual_ok += 1;
        }
        if outcome.max_igdeg > 5 * beta as u64 {
            igdeg_exceeds += 1;
        }
    }
    trials.sort_unstable();
    let mean = trials.iter().sum::<u64>() as f64 / seeds as f64;
    let p95 = trials[(seeds as usize * 95).div_ceil(100) - 1];
    assert!(mean <= 3.0, "mean trials {mean}");
    assert!(p95 <= 6, "95th percentile trials {p95}");
    println!("criterion 3 (expected trials): PASS — mean {mean:.2}, p95 {p95}, restarts {restarts_total}");

    let residual_frac = residual_ok as f64 / seeds as f64;
    assert!(
        residual_frac >= 0.99,
        "residual bound held in {residual_frac}"
    );
    println!("criterion 4 (residual bound): PASS — {residual_ok}/{seeds} runs within cap, restarts logged: {restarts_total}");

    let igdeg_frac = igdeg_exceeds as f64 / seeds as f64;
    assert!(
        igdeg_frac <= 0.05,
        "in-group degree exceeded in {igdeg_frac}"
    );
    println!("criterion 5 (in-group degree): PASS — {igdeg_exceeds}/{seeds} runs exceeded 5*beta");
}

struct IdleOnce;
impl CcProgram for IdleOnce {
    fn step(&self, ctx: &mut StepCtx<'_>) -> Result<Action, ProgramFault> {
        if ctx.round == 1 {
            Ok(Action::Idle)
        } else {
            Ok(Action::Halt(vec![]))
        }
    }
}

struct DegreeBroadcast;
impl CcProgram for DegreeBroadcast {
    fn step(&self, ctx: &mut StepCtx<'_>) -> Result<Action, ProgramFault> {
        let adj = cliquemr::cc::segment_base(ctx.n, ADJ_SEGMENT);
        match ctx.round {
            1 => {
                let deg = ctx.memory.get(adj);
                Ok(Action::Broadcast(vec![deg]))
            }
            _ => {
                let my_deg = ctx.memory.get(adj);
                let mut degs = Vec::with_capacity(ctx.n as usize);
                for u in 1..=ctx.n {
                    if u == ctx.node {
                        degs.push(my_deg);
                    } else {
                        degs.push(ctx.inbox.broadcast[&u][0]);
                    }
                }
                Ok(Action::Halt(degs))
            }
        }
    }
}

/// Criterion 6: the simulation theorem, exactly. Byte-identical outputs,
/// 4 + 3T MapReduce rounds, per-machine memory within the cap at eps = 0.
#[test]
fn criterion_6_simulation_theorem_exact() {
    let cc_conf = CcConfig::default();
    let mut checked = 0;
    for &n in &[128u32, 256] {
        for seed in 0..20u64 {
            let g = Graph::generate(n, 0.5, seed);
            let c = MrConfig::measure_c(n, g.edge_count());
            let mr = MrConfig::for_graph_scale(n, 0.0, c, seed);
            let programs: Vec<(&str, Box<dyn CcProgram>)> = vec![
                ("idle", Box::new(IdleOnce)),
                ("degree-broadcast", Box::new(DegreeBroadcast)),
                (
                    "highdeg",
                    Box::new(HighDegProgram::new(n, default_beta(n), &cc_conf)),
                ),
            ];
            for (name, program) in programs {
                let cc = run_cc(program.as_ref(), &g, seed, &cc_conf)
                    .unwrap_or_else(|e| panic!("{name} n={n} seed={seed}: cc fault {e}"));
                let sim = simulate(program.as_ref(), &g, &mr, seed, cc_conf.route_rounds)
                    .unwrap_or_else(|e| panic!("{name} n={n} seed={seed}: sim fault {e}"));
                assert_eq!(sim.outputs, cc.outputs, "{name} n={n} seed={seed}: outputs");
                assert_eq!(
                    sim.mr_rounds_used,
                    4 + 3 * cc.rounds_used,
                    "{name} n={n} seed={seed}: rounds"
                );
                for m in &sim.metrics {
                    assert!(
                        m.peak_words <= mr.memory_cap,
                        "{name} n={n} seed={seed}: round {} peak {} > {}",
                        m.round,
                        m.peak_words,
                        mr.memory_cap
                    );
                }
                checked += 1;
            }
        }
    }
    println!("criterion 6 (simulation theorem, exact): PASS — {checked} runs byte-identical at 4 + 3T rounds");
}

/// Criterion 7: the high-degree program's measured profile is lightweight
/// at K = |E|, N = n with the pinned constants.
#[test]
fn criterion_7_lightweight_profile() {
    for seed in 0..10 {
        let g = Graph::generate(256, 0.5, seed);
        let config = cc_config();
        let program = HighDegProgram::new(g.n(), default_beta(g.n()), &config);
        let run = run_cc(&program, &g, seed, &config).expect("run completes");
        let report = check_lightweight(&run.profile, g.edge_count() as u64, g.n() as u64, C_K, C_N);
        assert!(report.pass, "seed {seed}: {:?}", report.first_violation);
    }
    println!("criterion 7 (lightweight profile): PASS — K = |E| x {C_K}, N = {C_N} x n");
}

/// Criterion 8: local replay from gathered balls equals the global
/// iteration, node for node, color and palette, zero tolerance.
#[test]
fn criterion_8_replay_equivalence() {
    let mut nodes_checked = 0u64;
    for seed in 0..20u64 {
        let g = Graph::generate_capped(128, 8.0 / 128.0, 8, seed);
        let delta = g.max_degree();
        assert!(delta <= 8);
        for t in 1..=4u32 {
            let rs = RsTable::generate(g.n(), delta, t, seed);
            let global = run_global(&g, &rs, t);
            for u in g.nodes() {
                let ball = bfs_ball(&g, u, replay_radius(t), &rs);
                let (color, palette) = replay_locally(&ball, t, delta).expect("replay succeeds");
                assert_eq!(
                    color,
                    global.colors.get(&u).copied(),
                    "seed {seed} t {t} node {u}"
                );
                assert_eq!(palette, global.palettes[&u], "seed {seed} t {t} node {u}");
                nodes_checked += 1;
            }
        }
    }
    println!("criterion 8 (replay equivalence): PASS — {nodes_checked} node replays exact");
}

/// Criterion 9: in every low-degree run, each uncolored component lies
/// inside a single cluster and the minimum cluster size at least squares
/// every phase.
#[test]
fn criterion_9_containment_and_squaring() {
    let mut runs = 0;
    for &n in &[96u32, 128] {
        for seed in 0..20u64 {
            let g = sparse_graph(n, seed);
            let delta = g.max_degree();
            let t = 2;
            // engine run: in-run squaring history and final coloring
            let outcome = run_lowdeg(&g, t, seed);
            outcome.coloring.check_total_proper(&g).unwrap();
            let hist = &outcome.min_size_history;
            for k in 0..hist.len().saturating_sub(1) {
                let bound = (hist[k] * hist[k]).min(n as u64);
                assert!(
                    hist[k + 1] >= bound.max(hist[k]),
                    "n={n} seed={seed}: history {hist:?}"
                );
            }
            // pure replay of stage 1 (same bit streams by construction),
            // then containment against the component oracle
            let rs = RsTable::generate(n, delta, t, seed);
            let state = run_global(&g, &rs, t);
            let uncolored = state.uncolored();
            let unit: BTreeSet<(NodeId, NodeId)> = g
                .edges()
                .into_iter()
                .filter(|(u, v)| uncolored.contains(u) && uncolored.contains(v))
                .collect();
            let partition = cluster_merge(n, &unit, default_phases(n as u64));
            for comp in g.components(&uncolored) {
                let clusters: BTreeSet<usize> = comp
                    .iter()
                    .map(|&u| partition.cluster_of(u).unwrap())
                    .collect();
                assert_eq!(
                    clusters.len(),
                    1,
                    "n={n} seed={seed}: split component {comp:?}"
                );
            }
            let split = partition.split_unit_components(&unit, &uncolored);
            assert_eq!(split, g.components(&uncolored), "n={n} seed={seed}");
            runs += 1;
        }
    }
    println!("criterion 9 (containment and squaring): PASS — {runs} runs");
}

/// Companion frequency check: after T iterations the uncolored components
/// stay below the component cap in at least 95% of seeded runs.
#[test]
fn component_size_frequency() {
    let n = 256u32;
    let t = 3;
    let cap = (default_beta(n) as u64).pow(3);
    let mut within = 0u64;
    let mut worst = 0u64;
    let seeds = 100u64;
    for seed in 0..seeds {
        let g = sparse_graph(n, seed);
        let rs = RsTable::generate(n, g.max_degree(), t, seed);
        let state = run_global(&g, &rs, t);
        let uncolored = state.uncolored();
        let max_comp =
            g.components(&uncolored).iter().map(|c| c.len() as u64).max().unwrap_or(0);
        worst = worst.max(max_comp);
        if max_comp <= cap {
            within += 1;
        }
    }
    assert!(within as f64 / seeds as f64 >= 0.95, "{within}/{seeds} within cap");
    println!(
        "component-size frequency: PASS — {within}/{seeds} runs within cap {cap}, worst {worst}"
    );
}

/// Criterion 10: implementation-vs-oracle equivalences, each over at least
/// 1000 randomized instances.
#[test]
fn criterion_10_oracle_equivalences() {
    use cliquemr::rng::DetRng;
    use std::collections::{BTreeMap, BTreeSet as Set};

    // classify_groups vs direct induced-subgraph edge counting
    let mut instances = 0;
    for seed in 0..35u64 {
        let g = Graph::generate(96, 0.3, seed);
        let mut rng = DetRng::for_label(seed, "acceptance-partition");
        for trial in 0..5 {
            let group_count = 6u32;
            let groups: BTreeMap<NodeId, u32> = g
                .nodes()
                .map(|u| (u, 1 + rng.below(group_count as u64) as u32))
                .collect();
            let reports: Vec<(NodeId, u32, u32)> = g
                .nodes()
                .map(|u| {
                    let ig = g
                        .neighbors(u)
                        .iter()
                        .filter(|&&v| groups[&v] == groups[&u])
                        .count();
                    (u, groups[&u], ig as u32)
                })
                .collect();
            let report = classify_groups(&reports, g.n(), group_count).unwrap();
            for k in 1..=group_count {
                let members: Set<NodeId> = g.nodes().filter(|u| groups[u] == k).collect();
                let edges = g
                    .edges()
                    .iter()
                    .filter(|(u, v)| members.contains(u) && members.contains(v))
                    .count() as u64;
                assert_eq!(
                    report.groups[(k - 1) as usize].edges,
                    edges,
                    "seed {seed} trial {trial} group {k}"
                );
                instances += 1;
            }
        }
    }
    assert!(instances >= 1000, "{instances} classification instances");

    // compute_partition vs an independent straightforward re-evaluation
    let mut rng = DetRng::for_label(7, "acceptance-loads");
    for case in 0..1000 {
        let n = 1 + rng.below(50) as usize;
        let budget = 5 + rng.below(80);
        let loads: Vec<u64> = (0..n).map(|_| rng.below(budget + 1)).collect();
        let got = compute_partition(&loads, budget, u32::MAX).unwrap();
        // oracle: running sums, fresh part when the next load overflows
        let mut part = 1u32;
        let mut acc = 0u64;
        for (i, &l) in loads.iter().enumerate() {
            if acc + l > budget && acc > 0 {
                part += 1;
                acc = 0;
            }
            acc += l;
            assert_eq!(got.part_of(i as NodeId + 1), part, "case {case} node {i}");
        }
    }

    // engine-gathered balls vs breadth-first oracle
    let config = cc_config();
    let mut ball_instances = 0;
    for seed in 0..8u64 {
        let g = Graph::generate_capped(64, 0.05, 4, seed);
        let delta = g.max_degree();
        for t in [1u32, 2] {
            let mut program = LowDegProgram::new(g.n(), &config);
            program.t_iters = t;
            program.emit_balls = true;
            let run = run_cc(&program, &g, seed, &config).expect("probe run");
            let rs = RsTable::generate(g.n(), delta, t, seed);
            let rs_w = rs_words(delta, t);
            let radius = replay_radius(t);
            for u in g.nodes() {
                let got = decode_ball_output(u, radius, &run.outputs[&u], rs_w);
                let want = bfs_ball(&g, u, radius, &rs);
                assert_eq!(got, want, "seed {seed} t {t} node {u}");
                ball_instances += 1;
            }
        }
    }
    assert!(ball_instances >= 1000, "{ball_instances} ball instances");

    println!(
        "criterion 10 (oracle equivalences): PASS — {instances} group classifications, 1000 partitions, {ball_instances} balls"
    );
}

/// The round count of the high-degree program is affine in the trial count
/// with implementation constants pinned as a regression value.
#[test]
fn round_count_regression() {
    let config = cc_config();
    let g = Graph::generate(128, 0.5, 21);
    let beta = default_beta(g.n());
    let program = HighDegProgram::new(g.n(), beta, &config);
    for seed in 0..10 {
        let run = run_cc(&program, &g, seed, &config).unwrap();
        let outcome = HighDegOutcome::from_outputs(&run.outputs).unwrap();
        if outcome.restarts > 0 {
            continue;
        }
        let delta = g.max_degree();
        let groups = delta.div_ceil(beta).max(1);
        let chunks = ((1 + groups as u64).div_ceil(config.msg_word_budget as u64)) as u32;
        // rounds = 3 * trials + chunks + route_rounds + 4
        assert_eq!(
            run.rounds_used,
            3 * outcome.trials as u32 + chunks + config.route_rounds + 4,
            "seed {seed}"
        );
    }
    // cross-backend equivalence also pins 4 + 3T exactly; checked in
    // criterion 6.
    println!("round-count regression: PASS");
}
