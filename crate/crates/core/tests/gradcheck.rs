//! End-to-end gradient integrity: analytic gradients of the full training
//! loss against central finite differences on tiny model configurations.

use pm_core::config::RunConfig;
use pm_core::model::{CellKind, ModelKind};
use pm_core::testkit::{fd_check_total_loss, synthetic_window};

fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model.hidden = 8;
    cfg.model.latent = 4;
    cfg.model.joints = 2;
    cfg
}

#[test]
fn two_stream_gru_total_loss_gradients() {
    let cfg = tiny_config();
    let frames = synthetic_window(2, 5, 51);
    let report = fd_check_total_loss(&cfg, &frames, 1e-6, 7);
    assert!(
        report.max_rel_err <= 1e-4,
        "max rel err {} at {} over {} params",
        report.max_rel_err,
        report.worst,
        report.param_count
    );
}

#[test]
fn two_stream_lstm_total_loss_gradients() {
    let mut cfg = tiny_config();
    cfg.model.cell = CellKind::Lstm;
    let frames = synthetic_window(2, 5, 52);
    let report = fd_check_total_loss(&cfg, &frames, 1e-6, 8);
    assert!(
        report.max_rel_err <= 1e-4,
        "max rel err {} at {} (analytic vs fd: {:?}, loss {})",
        report.max_rel_err,
        report.worst, report.worst_pair, report.loss
    );
}

#[test]
fn vq_total_loss_gradients() {
    let mut cfg = tiny_config();
    cfg.model.kind = ModelKind::Vq;
    let frames = synthetic_window(2, 5, 53);
    let report = fd_check_total_loss(&cfg, &frames, 1e-6, 9);
    assert!(
        report.max_rel_err <= 1e-4,
        "max rel err {} at {} (analytic vs fd: {:?}, loss {})",
        report.max_rel_err,
        report.worst, report.worst_pair, report.loss
    );
}

#[test]
fn identity_kl_penalty_gradients() {
    let mut cfg = tiny_config();
    cfg.train.kl_penalty = pm_core::objective::KlPenalty::Identity;
    let frames = synthetic_window(2, 5, 54);
    let report = fd_check_total_loss(&cfg, &frames, 1e-6, 10);
    assert!(
        report.max_rel_err <= 1e-4,
        "max rel err {} at {} (analytic vs fd: {:?}, loss {})",
        report.max_rel_err,
        report.worst, report.worst_pair, report.loss
    );
}
