use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use coloc::harness::{
    compare, read_summary, run_experiment, run_experiment_on, run_replicates, HarnessError, Overrides, PolicySpec,
    CSV_HEADER,
};
use coloc::rl::{run_episode, FixedMethod, Strategy, TrainConfig};
use coloc::scenario::{build_links, Link, Node, ScenarioError, SimParams};
use coloc::channel::ChannelParams;
use coloc::{load_scenario, RangingMethod, Scenario};

fn scenario_path(name: &str) -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", name].iter().collect()
}

fn overrides(episodes: u32, seed: u64) -> Overrides {
    Overrides {
        episodes: Some(episodes),
        seed: Some(seed),
        threshold_m: None,
    }
}

struct CsvRow {
    n: [u64; 3],
}

fn read_csv(dir: &Path) -> Vec<CsvRow> {
    let text = std::fs::read_to_string(dir.join("episodes.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f.len(), 10, "{l}");
            CsvRow {
                n: [f[5].parse().unwrap(), f[6].parse().unwrap(), f[7].parse().unwrap()],
            }
        })
        .collect()
}

#[test]
fn fixed_toa_on_zero_noise_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_experiment(
        &scenario_path("noiseless.json"),
        PolicySpec::Fixed(RangingMethod::ToA),
        &Overrides::default(),
        dir.path(),
    )
    .unwrap();
    assert!(s.mean_rmse_last_100 < 1e-6);
    assert_eq!(s.reward_rate_last_100, 1.0);
    assert_eq!(s.selection_frequencies["toa"], 1.0);
}

#[test]
fn csv_rows_and_frequencies_match_summary() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_experiment(&scenario_path("mixed_nlos.json"), PolicySpec::Learned, &overrides(250, 3), dir.path()).unwrap();
    let rows = read_csv(dir.path());
    assert_eq!(rows.len() as u32, s.episodes_run);

    let mut counts = [0u64; 3];
    for r in &rows {
        for i in 0..3 {
            counts[i] += r.n[i];
        }
    }
    let total: u64 = counts.iter().sum();
    for m in RangingMethod::ALL {
        assert_eq!(s.selection_frequencies[m.name()], counts[m.index()] as f64 / total as f64);
    }
    let sum: f64 = s.selection_frequencies.values().sum();
    assert!((sum - 1.0).abs() < 1e-9);
    assert!((0.0..=1.0).contains(&s.reward_rate_last_100));

    let on_disk = read_summary(dir.path()).unwrap();
    assert_eq!(on_disk, s);
}

#[test]
fn random_policy_is_uniform() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_experiment(&scenario_path("mixed_nlos.json"), PolicySpec::Random, &overrides(1000, 5), dir.path()).unwrap();
    assert_eq!(s.episodes_run, 1000);
    for f in s.selection_frequencies.values() {
        assert!((f - 1.0 / 3.0).abs() < 0.03, "{:?}", s.selection_frequencies);
    }
}

#[test]
fn resolved_scenario_reloads_identically() {
    let dir = tempfile::tempdir().unwrap();
    let o = Overrides {
        episodes: Some(5),
        seed: Some(9),
        threshold_m: Some(0.25),
    };
    run_experiment(&scenario_path("noiseless.json"), PolicySpec::Learned, &o, dir.path()).unwrap();
    let resolved = load_scenario(&dir.path().join("scenario_resolved.json")).unwrap();
    let mut expected = load_scenario(&scenario_path("noiseless.json")).unwrap();
    expected.sim.episodes = 5;
    expected.sim.seed = 9;
    expected.sim.error_threshold_m = 0.25;
    assert_eq!(resolved, expected);
    let text = std::fs::read_to_string(dir.path().join("scenario_resolved.json")).unwrap();
    assert!(text.contains("reference_path_loss_db"));
    assert!(text.contains("stop_patience"));
}

#[test]
fn learned_beats_fixed_toa_in_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenario_path("mixed_nlos.json");
    let o = overrides(2000, 1);
    let learned = run_experiment(&path, PolicySpec::Learned, &o, &dir.path().join("learned")).unwrap();
    let toa = run_experiment(&path, PolicySpec::Fixed(RangingMethod::ToA), &o, &dir.path().join("toa")).unwrap();
    let c = compare(&[toa, learned]).unwrap();
    assert_eq!(c.winner, "learned");
    assert_eq!(c.rows[0].policy_name, "fixed-toa");
    assert!(c.to_text().contains("winner: learned"));
}

#[test]
fn compare_rejects_different_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenario_path("noiseless.json");
    let a = run_experiment(&path, PolicySpec::Learned, &overrides(3, 1), &dir.path().join("a")).unwrap();
    let b = run_experiment(&path, PolicySpec::Random, &overrides(3, 2), &dir.path().join("b")).unwrap();
    assert!(matches!(compare(&[a, b]), Err(HarnessError::Mismatch(_))));
}

#[test]
fn replicates_use_consecutive_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let summaries = run_replicates(
        &scenario_path("mixed_nlos.json"),
        PolicySpec::Learned,
        &overrides(40, 10),
        dir.path(),
        3,
    )
    .unwrap();
    let seeds: Vec<u64> = summaries.iter().map(|s| s.seed).collect();
    assert_eq!(seeds, vec![10, 11, 12]);
    for i in 0..3 {
        assert_eq!(read_summary(&dir.path().join(format!("rep_{i}"))).unwrap(), summaries[i]);
    }
    // A replicate equals the corresponding single run.
    let single = run_experiment(&scenario_path("mixed_nlos.json"), PolicySpec::Learned, &overrides(40, 11), &dir.path().join("single")).unwrap();
    assert_eq!(single, summaries[1]);
    assert_eq!(
        std::fs::read(dir.path().join("single/episodes.csv")).unwrap(),
        std::fs::read(dir.path().join("rep_1/episodes.csv")).unwrap()
    );
}

#[test]
fn missing_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let err = run_experiment(Path::new("/nonexistent/world.json"), PolicySpec::Learned, &Overrides::default(), dir.path())
        .unwrap_err();
    assert!(matches!(err, HarnessError::Scenario(ScenarioError::Io { .. })));
    assert!(err.to_string().contains("/nonexistent/world.json"));
}

#[test]
fn collinear_anchors_are_rejected_before_running() {
    let nodes = vec![
        Node::anchor(0, 0.0, 0.0),
        Node::anchor(1, 10.0, 0.0),
        Node::anchor(2, 20.0, 0.0),
        Node::unknown(3, 5.0, 5.0),
    ];
    let s = Scenario::new(nodes, vec![], 100.0, 28e9, ChannelParams::default_for(28e9), SimParams::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let err = run_experiment_on(s, PolicySpec::Learned, &Overrides::default(), dir.path()).unwrap_err();
    assert!(matches!(err, HarnessError::Degenerate(_)), "{err}");
    assert!(!dir.path().join("episodes.csv").exists());
}

#[test]
fn out_of_range_network_is_rejected() {
    let nodes = vec![
        Node::anchor(0, 0.0, 0.0),
        Node::anchor(1, 100.0, 0.0),
        Node::anchor(2, 0.0, 100.0),
        Node::unknown(3, 100.0, 100.0),
    ];
    let s = Scenario::new(nodes, vec![], 10.0, 28e9, ChannelParams::default_for(28e9), SimParams::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let err = run_experiment_on(s, PolicySpec::Learned, &Overrides::default(), dir.path()).unwrap_err();
    assert!(matches!(err, HarnessError::Degenerate(_)), "{err}");
}

/// Every link forced NLoS with strong excess delay: RSS, which carries no
/// delay bias, localizes better than ToA on average.
#[test]
fn rss_beats_toa_when_every_link_is_nlos() {
    let mut s = load_scenario(&scenario_path("los_toa_1ns.json")).unwrap();
    s.channel.nlos_excess_delay_mean_s = 100e-9;
    s.channel.toa_noise_sigma_s = 0.1e-9;
    s.channel.shadowing_sigma_db = 2.0;
    s.sim.seed = 21;
    let links: Vec<Link> = build_links(&s).into_iter().map(|l| Link { los: false, ..l }).collect();
    let config = TrainConfig::from_sim(&s.sim);
    let mean_rmse = |m: RangingMethod| {
        let mut strategy = FixedMethod(m);
        strategy.set_epsilon(0.0);
        (0..500).map(|k| run_episode(&s, &links, &mut strategy, &config, k).rmse).sum::<f64>() / 500.0
    };
    let (rss, toa) = (mean_rmse(RangingMethod::RSS), mean_rmse(RangingMethod::ToA));
    assert!(rss < toa, "rss {rss} toa {toa}");
}

#[test]
fn same_channel_realization_across_strategies() {
    let s = load_scenario(&scenario_path("mixed_nlos.json")).unwrap();
    let links = build_links(&s);
    let config = TrainConfig::from_sim(&s.sim);
    let contexts = |m: RangingMethod| {
        let log = run_episode(&s, &links, &mut FixedMethod(m), &config, 17);
        log.decisions.into_iter().map(|d| (d.link, d.context)).collect::<BTreeMap<_, _>>()
    };
    assert_eq!(contexts(RangingMethod::ToA), contexts(RangingMethod::RSS));
}

