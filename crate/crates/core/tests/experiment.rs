use gplight::control::Mode;
use gplight::experiment::{compare, read_action_log, read_cumulative, read_summary, read_volume, run, ExperimentConfig};
use tempfile::TempDir;

fn small(dir: &TempDir, modes: Vec<Mode>, seeds: Vec<u64>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig { modes, seeds, train_episodes: 2, out_dir: dir.path().join("run"), ..Default::default() };
    cfg.predictor.harvest_episodes = 1;
    cfg.predictor.train.epochs = 1;
    cfg.predictor.channels = [4, 4, 4];
    cfg
}

#[test]
fn fixedtime_only_run_writes_no_checkpoints_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = small(&dir, vec![Mode::Fixedtime], vec![0]);
    let manifest = run(&cfg).unwrap();
    let rows = read_summary(&cfg.out_dir).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].mode, "fixedtime");
    assert!(rows[0].throughput > 0);
    assert!(!cfg.out_dir.join("agents").exists());
    assert!(!cfg.out_dir.join("predictor").exists());
    assert!(manifest.files.contains_key("summary.csv"));
    assert!(manifest.files.contains_key("inputs/config.toml"));

    let first = std::fs::read(cfg.out_dir.join("summary.csv")).unwrap();
    let again = run(&cfg).unwrap();
    assert_eq!(std::fs::read(cfg.out_dir.join("summary.csv")).unwrap(), first);
    assert_eq!(again.files, manifest.files);

    let c = compare(&cfg.out_dir, &cfg.out_dir, Mode::Fixedtime, Mode::Fixedtime, Some(dir.path())).unwrap();
    assert_eq!(c.gap.len(), cfg.episode.total_s as usize + 1);
    assert!(c.gap.iter().all(|(_, g, m)| g.iter().all(|&x| x == 0) && *m == 0.0));
    assert!(dir.path().join("gap.csv").is_file() && dir.path().join("table.csv").is_file());
}

#[test]
fn every_mode_and_seed_is_evaluated() {
    let dir = TempDir::new().unwrap();
    let cfg = small(&dir, Mode::ALL.to_vec(), vec![0, 1, 2]);
    run(&cfg).unwrap();
    let rows = read_summary(&cfg.out_dir).unwrap();
    assert_eq!(rows.len(), 15);
    for mode in Mode::ALL {
        for seed in 0..3 {
            assert!(rows.iter().any(|r| r.mode == mode.as_str() && r.seed == seed));
            let cum = read_cumulative(&cfg.out_dir, mode, seed).unwrap();
            assert_eq!(cum.len(), 3601);
            assert_eq!(cum[0], 0);
            if mode.is_learned() {
                assert!(cfg.out_dir.join(format!("agents/{mode}/s{seed}/i0.gplt")).is_file());
                assert_eq!(read_action_log(&cfg.out_dir, "train", mode, seed).unwrap().iter().map(|r| r.episode).max(), Some(1));
            }
        }
    }
    let vol = read_volume(&cfg.out_dir, Mode::Gplight, 0).unwrap();
    assert_eq!(vol.len(), 60);
    assert!(vol[..cfg.episode.history_minutes].iter().all(|v| v.2.is_none()));
    assert!(vol[cfg.episode.history_minutes..].iter().all(|v| v.2.is_some()));

    let gap = compare(&cfg.out_dir, &cfg.out_dir, Mode::Gplight, Mode::PresslightDynamic, None).unwrap();
    assert_eq!(gap.seeds, vec![0, 1, 2]);
    assert_eq!(gap.gap[0].2, 0.0);
    assert_eq!(gap.table.len(), 5);
    assert!(compare(&cfg.out_dir, &cfg.out_dir, Mode::Gplight, Mode::Gplight, None).is_ok());
}

#[test]
fn compare_rejects_missing_mode_and_bad_config_is_tagged() {
    let dir = TempDir::new().unwrap();
    let cfg = small(&dir, vec![Mode::Fixedtime], vec![0]);
    run(&cfg).unwrap();
    let err = compare(&cfg.out_dir, &cfg.out_dir, Mode::Gplight, Mode::Fixedtime, None).unwrap_err();
    assert_eq!(err.tag(), "compare");
    let bad = ExperimentConfig { seeds: vec![], ..cfg };
    assert_eq!(run(&bad).unwrap_err().tag(), "config");
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 2);
    let single = ExperimentConfig::load(&dir.join("single.toml")).unwrap();
    let defaults = ExperimentConfig { out_dir: single.out_dir.clone(), ..ExperimentConfig::default() };
    assert_eq!(single, defaults);
}
