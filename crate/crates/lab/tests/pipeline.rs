use std::path::Path;
use std::process::Command;

use dmac_lab::checkpoint::{read_json, RetrainedCheckpoint, TeamCheckpoint};
use dmac_lab::pipeline::{sha256_hex, Evaluation, MANIFEST, RETRAINED, TEAM};
use dmac_lab::report::{parse_markdown_win_rates, Report};
use dmac_lab::{ExperimentConfig, Lab, LabError, RunManifest, Stage, Victim};

fn tiny() -> ExperimentConfig {
    let text = r#"
        seed = 4
        [env]
        kind = "relay"
        [team]
        episodes = 40
        hidden = [8]
        cp_hidden = [4]
        cp_batch_episodes = 4
        [adversary]
        episodes = 20
        hidden = [8]
        [retrain]
        rounds = 1
        adversary_episodes = 10
        cp_episodes = 12
        metric_episodes = 3
        [attack]
        episodes = 10
        hidden = [8]
        codebook_episodes = 2
        codebook_iterations = 3
        codebook_samples = 20
        [eval]
        episodes = 15
        write_logs = true
        trace_episodes = 1
    "#;
    ExperimentConfig::from_toml_str(text).unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != MANIFEST)
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn stages_need_their_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let lab = Lab::new(tiny(), dir.path()).unwrap();
    for stage in [Stage::Retrain, Stage::TrainAdversary, Stage::TrainAttack, Stage::Evaluate] {
        match lab.run(stage) {
            Err(LabError::Dependency { missing, .. }) => assert_eq!(missing, "train-team"),
            other => panic!("{stage:?}: {other:?}"),
        }
    }
    lab.run(Stage::TrainTeam).unwrap();
    let err = lab.run(Stage::Retrain).unwrap_err();
    assert!(err.to_string().contains("train-adversary"), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn report_without_evaluation_is_a_skeleton() {
    let dir = tempfile::tempdir().unwrap();
    let lab = Lab::new(tiny(), dir.path()).unwrap();
    lab.run(Stage::Report).unwrap();
    let r: Report = read_json(&dir.path().join("report.json")).unwrap();
    assert!(r.win_rates.iter().all(|c| c.before.is_none() && c.after.is_none()));
}

#[test]
fn full_pipeline_is_complete_and_replayable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let entries = Lab::new(tiny(), a.path()).unwrap().run_all().unwrap();
    Lab::new(tiny(), b.path()).unwrap().run_all().unwrap();
    assert_eq!(entries.len(), 6);

    let ta = tree(a.path());
    assert_eq!(ta, tree(b.path()));
    let ma = RunManifest::load(a.path()).unwrap();
    let mb = RunManifest::load(b.path()).unwrap();
    let digests = |m: &RunManifest| m.entries.iter().map(|e| e.artifacts.clone()).collect::<Vec<_>>();
    assert_eq!(digests(&ma), digests(&mb));
    ma.verify(a.path()).unwrap();
    for e in &ma.entries {
        assert_eq!(e.config_digest, sha256_hex(tiny().to_toml_string().as_bytes()));
    }

    let eval: Evaluation = read_json(&a.path().join("evaluation.json")).unwrap();
    for v in [Victim::Before, Victim::After] {
        let conds: Vec<&str> = eval.records.iter().filter(|r| r.victim == v).map(|r| r.condition.as_str()).collect();
        assert_eq!(conds, ["clean", "heuristic", "learned", "random_masker", "reward_based", "adversary"]);
    }
    for r in &eval.records {
        assert_eq!(r.win_rate, r.wins as f64 / r.episodes as f64);
        assert!(a.path().join(&r.heatmap).exists());
    }

    let trace: Vec<dmac_lab::logs::TraceEvent> = dmac_lab::logs::read_lines(&a.path().join("trace_after_adversary.jsonl")).unwrap();
    assert!(!trace.is_empty() && trace.iter().all(|s| s.episode == 0 && s.masks.len() == 1));
    let comm = dmac_lab::logs::read_comm_log(&a.path().join("comm_before_clean.jsonl")).unwrap();
    let clean = eval.records.iter().find(|r| r.victim == Victim::Before && r.condition == "clean").unwrap();
    let delivered = comm.iter().filter(|e| e.opened && !e.masked).count() as f64;
    let freq = dmac_lab::heatmap::read_heatmap(&a.path().join(&clean.heatmap)).unwrap();
    assert!((freq.channel_values().iter().sum::<f64>() * clean.episodes as f64 - delivered).abs() < 1e-9);
    assert!(a.path().join("retrain_round_0.json").exists());

    let report: Report = read_json(&a.path().join("report.json")).unwrap();
    assert!(report.gaps.is_empty());
    let md = std::fs::read_to_string(a.path().join("report.md")).unwrap();
    assert_eq!(parse_markdown_win_rates(&md), report.win_rates);
}

#[test]
fn retraining_leaves_the_team_policy_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let lab = Lab::new(tiny(), dir.path()).unwrap();
    for s in [Stage::TrainTeam, Stage::TrainAdversary, Stage::Retrain] {
        lab.run(s).unwrap();
    }
    let before: TeamCheckpoint = read_json(&dir.path().join(TEAM)).unwrap();
    let after: RetrainedCheckpoint = read_json(&dir.path().join(RETRAINED)).unwrap();
    let digest = |c: &TeamCheckpoint| sha256_hex(&serde_json::to_vec(&c.team).unwrap());
    assert_eq!(digest(&before), digest(&after.victim));
    assert_ne!(before.cp, after.victim.cp);
}

#[test]
fn tampered_artifacts_fail_verification() {
    let dir = tempfile::tempdir().unwrap();
    let lab = Lab::new(tiny(), dir.path()).unwrap();
    lab.run(Stage::TrainTeam).unwrap();
    RunManifest::load(dir.path()).unwrap().verify(dir.path()).unwrap();
    std::fs::write(dir.path().join("team_curve.csv"), "x\n").unwrap();
    assert!(RunManifest::load(dir.path()).unwrap().verify(dir.path()).is_err());
}

fn dmac(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dmac")).args(args).output().unwrap()
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, tiny().to_toml_string()).unwrap();
    let cfg = cfg.to_str().unwrap();

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[adversary]\nxii = 1\n").unwrap();
    assert_eq!(dmac(&["report", "--config", bad.to_str().unwrap(), "--out-dir", out]).status.code(), Some(2));
    assert_eq!(dmac(&["report", "--out-dir", out, "--stage-override", "eval.episodes=0"]).status.code(), Some(2));

    let r = dmac(&["retrain", "--config", cfg, "--out-dir", out]);
    assert_eq!(r.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&r.stderr).contains("train-team"));

    let r = dmac(&["train-team", "--config", cfg, "--out-dir", out, "--seed", "8", "--stage-override", "team.episodes=5"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let m = RunManifest::load(dir.path()).unwrap();
    assert_eq!(m.seed, 8);

    let shown = dmac(&["show-config", "--config", cfg, "--stage-override", "adversary.xi=0.25"]);
    let parsed = ExperimentConfig::from_toml_str(&String::from_utf8_lossy(&shown.stdout)).unwrap();
    assert_eq!(parsed.adversary.xi, 0.25);
}
