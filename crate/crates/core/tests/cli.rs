use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;

use vmimo::behavior::{generate_dataset, WillingnessContext};
use vmimo::classifier::{train_user_model, Engine};
use vmimo::cli::{cmd_evaluate, cmd_gen_data, cmd_simulate, cmd_train, load_model};
use vmimo::config::RunConfig;
use vmimo::rng::{seeded, substream, Domain};
use vmimo::selection::SelectionResult;
use vmimo::spatial::build_scenario;

const SMALL: &str = "\
seed=11
scenario.n_sus=2
scenario.n_inactive=12
data.n_samples=300
mlp.max_epochs=300
svm.c_grid=1,8
svm.gamma_grid=0.125,0.5
simulate.rounds=15
evaluate.user_counts=2,4
";

fn small() -> RunConfig {
    RunConfig::parse(SMALL).unwrap()
}

fn read(dir: &Path, rel: &str) -> String {
    std::fs::read_to_string(dir.join(rel)).unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn gen_data_row_counts_and_repeatability() {
    let cfg = small();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_gen_data(&cfg, a.path()).unwrap();
    cmd_gen_data(&cfg, b.path()).unwrap();
    let files = tree(a.path());
    let csvs: Vec<_> = files.iter().filter(|(name, _)| name.ends_with(".csv")).collect();
    assert_eq!(csvs.len(), 12);
    for (_, body) in &csvs {
        let text = String::from_utf8(body.to_vec()).unwrap();
        assert_eq!(text.lines().count(), cfg.n_samples + 1);
    }
    assert_eq!(files, tree(b.path()));
}

#[test]
fn trained_models_reload_with_identical_predictions() {
    let mut cfg = small();
    cfg.train_kinds = vec![vmimo::classifier::ClassifierKind::Mlp, vmimo::classifier::ClassifierKind::Svm];
    let dir = tempfile::tempdir().unwrap();
    cmd_train(&cfg, dir.path()).unwrap();
    let sc = build_scenario::<f64>(&cfg.scenario, cfg.seed).unwrap();
    let mut probe_rng = seeded(99);
    let probes: Vec<WillingnessContext> = (0..100).map(|_| WillingnessContext::random(&mut probe_rng)).collect();

    for &kind in &cfg.train_kinds {
        for user in sc.inactive_users.iter().take(4) {
            let profile = &cfg.profiles[user.profile_id];
            let data = generate_dataset(profile, cfg.n_samples, &mut substream(cfg.seed, Domain::Dataset, user.id as u64)).unwrap();
            let (memory, _) =
                train_user_model(&data, &cfg.classifier.with_kind(kind), &mut substream(cfg.seed, Domain::Init, user.id as u64)).unwrap();
            let path = dir.path().join(format!("models/{}/user_{:04}.json", kind.name(), user.id));
            let loaded = load_model(&path).unwrap();
            assert_eq!(loaded, memory);
            for ctx in &probes {
                assert_eq!(loaded.predict(ctx).unwrap(), memory.predict(ctx).unwrap());
            }
            if let Engine::Svm(m) = &loaded.engine {
                assert!(m.equality_residual() < 1e-9);
            }

            let trace: serde_json::Value =
                serde_json::from_str(&read(dir.path(), &format!("traces/{}/user_{:04}.json", kind.name(), user.id))).unwrap();
            if kind == vmimo::classifier::ClassifierKind::Mlp {
                let mse = trace["final_mse"].as_f64().unwrap();
                assert!(mse <= 0.01 || !trace["converged"].as_bool().unwrap());
                assert!(trace["epochs"].as_u64().unwrap() >= 1);
            } else {
                assert_eq!(trace["summary"]["cells"].as_array().unwrap().len(), 4);
            }
        }
    }
}

#[test]
fn simulate_log_replays_cleanly() {
    let cfg = small();
    let dir = tempfile::tempdir().unwrap();
    cmd_simulate(&cfg, dir.path()).unwrap();
    let log = read(dir.path(), "rounds.jsonl");
    let rounds: Vec<SelectionResult<f64>> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rounds.len(), 2 * cfg.rounds);
    let n_max = cfg.selection.n_rx_antennas - 1;
    for r in &rounds {
        let set = |v: &[usize]| v.iter().copied().collect::<BTreeSet<_>>();
        let selected = set(&r.selected_ids());
        assert!(selected.is_subset(&set(&r.probed)));
        assert!(set(&r.probed).is_subset(&set(&r.predicted_willing)));
        assert!(set(&r.predicted_willing).is_subset(&set(&r.vaa_members)));
        assert!(selected.len() <= n_max);
        assert!(r.selected_relays.iter().all(|p| p.ber <= cfg.selection.ber_threshold));
        assert_eq!(r.fallback_direct, selected.is_empty());

        // Re-rank the written path report independently.
        let csv = read(dir.path(), &format!("paths/su_{:03}_round_{:04}.csv", r.su_id, r.round));
        let mut rows: Vec<(f64, usize, bool)> = csv
            .lines()
            .skip(1)
            .map(|line| {
                let f: Vec<&str> = line.split(',').collect();
                (f[4].parse().unwrap(), f[0].parse().unwrap(), f[6] == "1")
            })
            .collect();
        let marked: BTreeSet<usize> = rows.iter().filter(|r| r.2).map(|r| r.1).collect();
        rows.retain(|r| r.0 <= cfg.selection.ber_threshold);
        rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let expected: BTreeSet<usize> = rows.iter().take(n_max).map(|r| r.1).collect();
        assert_eq!(marked, expected);
        assert_eq!(marked, selected);
    }

    let summary = read(dir.path(), "summary.csv");
    let fields: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    let reduction: f64 = fields[4].parse().unwrap();
    assert!((0.0..=1.0).contains(&reduction));
}

#[test]
fn evaluate_writes_rows_for_both_classifiers() {
    let dir = tempfile::tempdir().unwrap();
    cmd_evaluate(&small(), dir.path()).unwrap();
    let report = read(dir.path(), "report.csv");
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], vmimo::metrics::REPORT_HEADER);
    assert_eq!(lines.len(), 1 + 2 * 2);
    assert!(lines[1].starts_with("2,mlp,"));
    assert!(lines[4].starts_with("4,svm,"));
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.conf");
    std::fs::write(&cfg_path, SMALL).unwrap();
    let bin = env!("CARGO_BIN_EXE_vmimo");

    let ok = Command::new(bin)
        .args(["--config", cfg_path.to_str().unwrap(), "--seed", "5", "--command", "gen-data", "--out"])
        .arg(dir.path().join("out"))
        .status()
        .unwrap();
    assert_eq!(ok.code(), Some(0));
    assert!(dir.path().join("out/data/user_0000.csv").exists());

    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "profiles.hh=0.9\n").unwrap();
    let status = Command::new(bin)
        .args(["--config", bad.to_str().unwrap(), "--command", "gen-data", "--out"])
        .arg(dir.path().join("out2"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    let blocker = dir.path().join("blocker");
    std::fs::write(&blocker, "x").unwrap();
    let status = Command::new(bin)
        .args(["--config", cfg_path.to_str().unwrap(), "--command", "gen-data", "--out"])
        .arg(&blocker)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}
