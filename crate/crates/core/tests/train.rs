use deepisp::checkpoint::Checkpoint;
use deepisp::commands::cmd_train;
use deepisp::config::{Task, TrainConfig};
use deepisp::train::LOG_HEADER;
use deepisp::Error;

fn tiny(task: Task) -> TrainConfig {
    let mut cfg = TrainConfig::for_task(task);
    cfg.seed = 5;
    cfg.epochs = 4;
    cfg.checkpoint_every = 1;
    cfg.model.n_ll = 2;
    cfg.model.width = 6;
    cfg.model.n_hl = if task.uses_highlevel() { 1 } else { 0 };
    cfg.model.hl_width = 4;
    cfg.patch = 16;
    cfg.adam.lr = 1e-3;
    cfg.data.synth.count = 4;
    cfg.data.synth.height = 32;
    cfg.data.synth.width = 32;
    cfg.data.val_count = 2;
    cfg.data.test_count = 0;
    cfg
}

fn read(path: &std::path::Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn zero_epochs_writes_initial_checkpoint_and_header() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(Task::FullIsp);
    cfg.epochs = 0;
    let out = cmd_train(&cfg, dir.path(), false).unwrap();
    assert!(out.rows.is_empty());
    let ck = Checkpoint::load(&dir.path().join("checkpoint.ckpt")).unwrap();
    assert_eq!(ck.epoch, 0);
    assert_eq!(ck.params, out.params);
    let log = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    assert_eq!(log, format!("{LOG_HEADER}\n"));
}

#[test]
fn smoke_run_lowers_the_loss() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(Task::DenoiseDemosaic);
    cfg.epochs = 8;
    cfg.adam.lr = 3e-3;
    let out = cmd_train(&cfg, dir.path(), false).unwrap();
    let first = out.rows[0].train_loss;
    let last = out.final_train_loss().unwrap();
    assert!(last < first, "{first} -> {last}");
    assert!(out.final_val().unwrap().psnr.is_finite());
    let log = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 9);
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    for task in [Task::DenoiseDemosaic, Task::FullIsp] {
        let cfg = tiny(task);
        let full = tempfile::tempdir().unwrap();
        cmd_train(&cfg, full.path(), false).unwrap();

        let split = tempfile::tempdir().unwrap();
        let mut half = cfg.clone();
        half.epochs = 2;
        cmd_train(&half, split.path(), false).unwrap();
        // Leftover rows from a longer attempt must be dropped on resume.
        let log = split.path().join("train_log.csv");
        let mut text = std::fs::read_to_string(&log).unwrap();
        text.push_str("3,0.1,,,\n");
        std::fs::write(&log, text).unwrap();
        cmd_train(&cfg, split.path(), true).unwrap();

        for f in ["checkpoint.ckpt", "train_log.csv"] {
            assert!(read(&full.path().join(f)) == read(&split.path().join(f)), "{task}: {f} differs");
        }
    }
}

#[test]
fn resume_rejects_a_different_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(Task::DenoiseDemosaic);
    cfg.epochs = 1;
    cmd_train(&cfg, dir.path(), false).unwrap();
    cfg.epochs = 2;
    cfg.adam.lr = 2e-3;
    assert!(matches!(cmd_train(&cfg, dir.path(), true), Err(Error::Checkpoint(_))));
}

#[test]
fn divergence_aborts_and_keeps_the_last_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(Task::DenoiseDemosaic);
    cfg.epochs = 20;
    // Outputs are bounded, so only overflowing weights can break the loss.
    cfg.adam.lr = f64::MAX;
    let err = cmd_train(&cfg, dir.path(), false).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { .. } | Error::NonFiniteGradient { .. }), "{err}");
    let ck = Checkpoint::load(&dir.path().join("checkpoint.ckpt")).unwrap();
    assert!(ck.params.named_tensors().iter().all(|(_, t)| t.data().iter().all(|v| v.is_finite())));
    let abort = std::fs::read_to_string(dir.path().join("abort.txt")).unwrap();
    assert!(abort.contains(&format!("epoch {}", ck.epoch)), "{abort}");
}

#[test]
fn alpha_zero_full_isp_converges() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(Task::FullIsp);
    cfg.loss.alpha = 0.0;
    cfg.epochs = 8;
    cfg.adam.lr = 3e-3;
    let out = cmd_train(&cfg, dir.path(), false).unwrap();
    let losses: Vec<f64> = out.rows.iter().map(|r| r.train_loss).collect();
    assert!(losses.iter().all(|l| l.is_finite()));
    assert!(losses.last().unwrap() < &losses[0], "{losses:?}");
}
