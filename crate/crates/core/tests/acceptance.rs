//! Acceptance suite. Each test prints one `PASS`/`FAIL` line with the
//! measured quantity, its tolerance and the runtime, then asserts.
//!
//! Run with `cargo test -p coloc-core --test acceptance -- --nocapture`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use coloc::channel::{draw_epoch_offsets, observe_links, EpochOffsets};
use coloc::crlb::{crlb_bound, fisher_information};
use coloc::harness::{run_experiment, run_policy, summarize, Overrides, PolicySpec};
use coloc::locsolver::{localize, SolverConfig};
use coloc::ranging::{measure_link, ObservationBundle};
use coloc::rl::{compute_reward, train_with, FixedMethod, TrainConfig, PENALTY, REWARD};
use coloc::scenario::build_links;
use coloc::streams::{episode_stream, Purpose};
use coloc::{load_scenario, Measurement, NodeId, RangingMethod, Scenario, Vec2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scenario(name: &str) -> Scenario {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", name].iter().collect();
    load_scenario(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn report(id: u32, title: &str, pass: bool, detail: &str, elapsed: Duration, limit: Option<Duration>) {
    let timing = match limit {
        Some(l) => format!("{:.2} s (limit {} s)", elapsed.as_secs_f64(), l.as_secs()),
        None => format!("{:.2} s", elapsed.as_secs_f64()),
    };
    println!(
        "criterion {id} [{}] {title}: {detail}; {timing}",
        if pass { "PASS" } else { "FAIL" }
    );
}

fn within(elapsed: Duration, limit: Option<Duration>) -> bool {
    limit.is_none_or(|l| elapsed < l)
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

#[test]
fn c1_noiseless_exactness() {
    let limit = Some(Duration::from_secs(5));
    let start = Instant::now();
    let s = scenario("noiseless.json");
    let config = TrainConfig::from_sim(&s.sim);
    let mut worst = 0.0f64;
    let mut all_localized = true;
    for m in RangingMethod::ALL {
        for log in train_with(&s, &mut FixedMethod(m), &config) {
            worst = worst.max(log.rmse);
            all_localized &= log.localized;
        }
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-6 && all_localized && within(elapsed, limit);
    report(
        1,
        "noiseless exactness",
        pass,
        &format!(
            "max episode rmse {worst:.3e} m over {} episodes x 3 fixed methods (< 1e-6)",
            config.episodes
        ),
        elapsed,
        limit,
    );
    assert!(pass);
}

#[test]
fn c2_crlb_validity() {
    let limit = Some(Duration::from_secs(60));
    let start = Instant::now();
    let s = scenario("los_toa_1ns.json");
    assert!(build_links(&s).iter().all(|l| l.los));
    let config = TrainConfig::from_sim(&s.sim);
    let logs = train_with(&s, &mut FixedMethod(RangingMethod::ToA), &config);
    assert_eq!(logs.len(), 1000);
    let mc_rmse = mean(logs.iter().map(|l| l.rmse * l.rmse)).sqrt();
    let bound = logs[0].crlb_bound.expect("well-posed");
    assert!(logs.iter().all(|l| l.crlb_bound == Some(bound)));
    let ratio = mc_rmse / bound;
    let elapsed = start.elapsed();
    let pass = (0.95..=1.5).contains(&ratio) && within(elapsed, limit);
    report(
        2,
        "CRLB validity",
        pass,
        &format!("MC rmse {mc_rmse:.5} m, bound {bound:.5} m, ratio {ratio:.4} (in [0.95, 1.5])"),
        elapsed,
        limit,
    );
    assert!(pass);
}

/// Random well-posed geometry: 3 to 5 anchors, 1 to 4 unknowns, every
/// unknown ranged to every anchor plus a random subset of unknown pairs.
fn random_geometry(rng: &mut ChaCha8Rng) -> (BTreeMap<NodeId, Vec2>, BTreeSet<NodeId>, Vec<Measurement>) {
    let n_anchors = rng.random_range(3..=5u32);
    let n_unknown = rng.random_range(1..=4u32);
    let mut truth = BTreeMap::new();
    for i in 0..n_anchors + n_unknown {
        truth.insert(NodeId(i), Vec2::new(rng.random_range(0.0..50.0), rng.random_range(0.0..50.0)));
    }
    let anchors: BTreeSet<NodeId> = (0..n_anchors).map(NodeId).collect();
    let range = |a: u32, b: u32, var: f64| {
        let (a, b) = (NodeId(a), NodeId(b));
        Measurement::range(a, b, truth[&a].distance(truth[&b]), var, RangingMethod::ToA)
    };
    let mut ms = Vec::new();
    for u in n_anchors..n_anchors + n_unknown {
        for a in 0..n_anchors {
            ms.push(range(a, u, rng.random_range(0.01..4.0)));
        }
        for v in u + 1..n_anchors + n_unknown {
            if rng.random::<bool>() {
                ms.push(range(u, v, rng.random_range(0.01..4.0)));
            }
        }
    }
    (truth, anchors, ms)
}

#[test]
fn c3_crlb_monotonicity() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut geometries, mut checks, mut worst_increase) = (0, 0, f64::NEG_INFINITY);
    while geometries < 100 {
        let (truth, anchors, ms) = random_geometry(&mut rng);
        let Some(base) = fisher_information(&ms, &truth, &anchors)
            .ok()
            .map(|f| crlb_bound(&f))
            .filter(|r| r.well_posed)
        else {
            continue;
        };
        geometries += 1;
        let ids: Vec<NodeId> = truth.keys().copied().collect();
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                if anchors.contains(&a) && anchors.contains(&b) {
                    continue;
                }
                let mut more = ms.clone();
                more.push(Measurement::range(a, b, truth[&a].distance(truth[&b]), rng.random_range(0.01..4.0), RangingMethod::ToA));
                let after = crlb_bound(&fisher_information(&more, &truth, &anchors).unwrap());
                for (id, old) in &base.per_node_bound {
                    worst_increase = worst_increase.max(after.per_node_bound[id] - old);
                }
                checks += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = worst_increase <= 1e-9;
    report(
        3,
        "CRLB monotonicity",
        pass,
        &format!(
            "{geometries} geometries, {checks} single-measurement additions, largest per-node bound change {worst_increase:.3e} m (<= 1e-9)"
        ),
        elapsed,
        None,
    );
    assert!(pass);
}

#[test]
fn c4_tdoa_clock_invariance() {
    let start = Instant::now();
    let s = scenario("los_toa_1ns.json");
    let links = build_links(&s);
    let anchors = s.anchor_ids();
    let solver = SolverConfig::default();
    let trials = 500u32;
    let mut tdoa_compared = 0usize;
    let mut tdoa_identical = true;
    let mut sq = [0.0f64; 3];

    for k in 0..trials {
        let mut rng = episode_stream(11, u64::from(k), Purpose::Channel);
        let base_offsets = draw_epoch_offsets(&s, &mut rng);
        let variants: [EpochOffsets; 3] = [base_offsets.clone(), base_offsets.shifted(1e-6), base_offsets.shifted(-1e-6)];
        let mut tdoa: Vec<Vec<Measurement>> = Vec::new();
        for (v, offsets) in variants.iter().enumerate() {
            let obs = observe_links(&links, &s.channel, offsets, &mut rng.clone());
            let bundle = ObservationBundle::new(&links, obs, &anchors);
            let measure = |m| {
                links
                    .iter()
                    .filter_map(|l| measure_link(l, m, &bundle, &anchors, &s.channel).ok())
                    .collect::<Vec<_>>()
            };
            tdoa.push(measure(RangingMethod::TDoA));
            let toa = measure(RangingMethod::ToA);
            let mut solver_rng = episode_stream(11, u64::from(k), Purpose::Solver);
            let rmse = localize(&toa, &s, &solver, &mut solver_rng).map_or(f64::INFINITY, |r| r.rmse);
            sq[v] += rmse * rmse;
        }
        for shifted in &tdoa[1..] {
            tdoa_compared += shifted.len();
            tdoa_identical &= shifted.len() == tdoa[0].len()
                && shifted
                    .iter()
                    .zip(&tdoa[0])
                    .all(|(a, b)| a.kind == b.kind && a.value.to_bits() == b.value.to_bits() && a.variance.to_bits() == b.variance.to_bits());
        }
    }
    let rmse: Vec<f64> = sq.iter().map(|s| (s / f64::from(trials)).sqrt()).collect();
    let elapsed = start.elapsed();
    let pass = tdoa_identical && tdoa_compared > 0 && rmse[1] > rmse[0] && rmse[2] > rmse[0];
    report(
        4,
        "TDoA clock-offset invariance",
        pass,
        &format!(
            "{tdoa_compared} shifted TDoA measurements bit-identical: {tdoa_identical}; fixed-ToA MC rmse {:.4} m -> {:.3} m (+1 us), {:.3} m (-1 us) over {trials} trials",
            rmse[0], rmse[1], rmse[2]
        ),
        elapsed,
        None,
    );
    assert!(pass);
}

#[test]
fn c5_learning_effect() {
    let limit = Some(Duration::from_secs(120));
    let start = Instant::now();
    let base = scenario("mixed_nlos.json");
    let links = build_links(&base);
    let nlos_share = links.iter().filter(|l| !l.los).count() as f64 / links.len() as f64;
    assert!((0.4..=0.6).contains(&nlos_share), "NLoS share {nlos_share}");
    assert_eq!(base.channel.nlos_excess_delay_mean_s, 30e-9);
    assert_eq!(base.channel.clock_offset_sigma_s, 1e-9);
    assert_eq!(base.sim.episodes, 2000);

    let seeds: Vec<u64> = (1..=10).collect();
    let policies = [
        PolicySpec::Learned,
        PolicySpec::Fixed(RangingMethod::ToA),
        PolicySpec::Fixed(RangingMethod::TDoA),
        PolicySpec::Fixed(RangingMethod::RSS),
    ];
    let mut rmse: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let (mut robust, mut visited) = (0usize, 0usize);
    let results: Vec<_> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let mut s = base.clone();
                s.sim.seed = seed;
                scope.spawn(move || {
                    policies
                        .iter()
                        .map(|&p| {
                            let (logs, policy) = run_policy(&s, p);
                            (p, summarize(&p.to_string(), &logs, &s, 100).mean_rmse_last_100, policy)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for per_seed in results {
        for (p, r, policy) in per_seed {
            rmse.entry(p.to_string()).or_default().push(r);
            if let Some(policy) = policy {
                let contexts: BTreeSet<_> = policy.entries().map(|(k, _)| k.0).filter(|c| !c.los).collect();
                visited += contexts.len();
                robust += contexts
                    .iter()
                    .filter(|c| matches!(policy.greedy(c), RangingMethod::TDoA | RangingMethod::RSS))
                    .count();
            }
        }
    }
    let means: BTreeMap<String, f64> = rmse.iter().map(|(k, v)| (k.clone(), mean(v.iter().copied()))).collect();
    let learned = means["learned"];
    let toa = means["fixed-toa"];
    let (best_name, best) = means
        .iter()
        .filter(|(k, _)| k.starts_with("fixed-"))
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, v)| (k.clone(), *v))
        .unwrap();
    let robust_share = robust as f64 / visited as f64;
    let elapsed = start.elapsed();
    let pass_a = learned <= 1.05 * best && learned < toa;
    let pass_b = robust_share > 0.8;
    let pass = pass_a && pass_b && within(elapsed, limit);
    report(
        5,
        "learning effect",
        pass,
        &format!(
            "(a) learned {learned:.3} m vs best fixed {best_name} {best:.3} m x 1.05 and fixed-toa {toa:.3} m [{}]; (b) {robust}/{visited} visited NLoS contexts greedy TDoA/RSS = {:.1}% (> 80%) [{}]; seeds 1-10, {nlos_share:.2} of links NLoS",
            if pass_a { "ok" } else { "violated" },
            100.0 * robust_share,
            if pass_b { "ok" } else { "violated" },
        ),
        elapsed,
        limit,
    );
    assert!(pass);
}

#[test]
fn c6_ten_centimeter_target() {
    let limit = Some(Duration::from_secs(30));
    let start = Instant::now();
    let s = scenario("favorable_los.json");
    assert_eq!(s.anchor_ids().len(), 6);
    assert!(build_links(&s).iter().all(|l| l.los));
    assert_eq!(s.channel.toa_noise_sigma_s, 0.1e-9);
    let seeds = [1u64, 2, 3];
    let per_seed: Vec<f64> = seeds
        .iter()
        .map(|&seed| {
            let mut s = s.clone();
            s.sim.seed = seed;
            let (logs, _) = run_policy(&s, PolicySpec::Learned);
            summarize("learned", &logs, &s, 100).mean_rmse_last_100
        })
        .collect();
    let worst = per_seed.iter().copied().fold(0.0, f64::max);
    let elapsed = start.elapsed();
    let pass = worst < 0.10 && within(elapsed, limit);
    report(
        6,
        "10 cm target",
        pass,
        &format!(
            "learned mean rmse over last 100 episodes per seed {:?} m, worst {worst:.4} m (< 0.10)",
            per_seed.iter().map(|r| (r * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
        elapsed,
        limit,
    );
    assert!(pass);
}

#[test]
fn c7_determinism() {
    let start = Instant::now();
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", "mixed_nlos.json"].iter().collect();
    let dir = tempfile::tempdir().unwrap();
    let overrides = Overrides {
        episodes: Some(300),
        seed: Some(7),
        threshold_m: None,
    };
    let mut identical = true;
    let mut files = 0;
    for policy in [PolicySpec::Learned, PolicySpec::Random, PolicySpec::Fixed(RangingMethod::TDoA)] {
        let a = dir.path().join(format!("{policy}-a"));
        let b = dir.path().join(format!("{policy}-b"));
        run_experiment(&path, policy, &overrides, &a).unwrap();
        run_experiment(&path, policy, &overrides, &b).unwrap();
        for f in ["episodes.csv", "summary.json", "scenario_resolved.json"] {
            identical &= std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap();
            files += 1;
        }
    }
    let elapsed = start.elapsed();
    report(
        7,
        "determinism",
        identical,
        &format!("{files} artifact pairs from repeated runs (seed 7) byte-identical: {identical}"),
        elapsed,
        None,
    );
    assert!(identical);
}

#[test]
fn c8_reward_boundary() {
    let start = Instant::now();
    let at = compute_reward(0.10, 0.10);
    let below = compute_reward(0.10 - 1e-12, 0.10);
    let above = compute_reward(0.10 + 1e-12, 0.10);
    let pass = at == PENALTY && below == REWARD && above == PENALTY;
    report(
        8,
        "reward boundary",
        pass,
        &format!("compute_reward(0.10, 0.10) = {at}, just below = {below}, just above = {above}"),
        start.elapsed(),
        None,
    );
    assert!(pass);
}
