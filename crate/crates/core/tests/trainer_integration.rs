//! End-to-end trainer behavior at miniature scale: artifact layout, CSV
//! schema, schedule bookkeeping, determinism, and checkpoint resume.

use fewnerf::scenes::{default_scene, make_dataset, SceneRenderSpec};
use fewnerf::supervision::Dataset;
use fewnerf::trainer::{
    read_loss_csv, train, train_resumed, LossMode, NetworkConfig, TrainConfig, CSV_HEADER,
};
use std::path::PathBuf;
use std::sync::OnceLock;

fn tiny_dataset() -> &'static Dataset {
    static DS: OnceLock<Dataset> = OnceLock::new();
    DS.get_or_init(|| {
        let spec = SceneRenderSpec {
            image_size: 16,
            oracle_samples: 256,
            ..SceneRenderSpec::default()
        };
        make_dataset(&default_scene(), &spec, 3, 2).unwrap()
    })
}

fn tiny_config(mode: LossMode, seed: u64) -> TrainConfig {
    TrainConfig {
        total_iters: 60,
        batch_size: 32,
        samples_per_ray: 8,
        mode,
        seed,
        log_interval: 1,
        lr: 3e-3,
        network: NetworkConfig {
            trunk_depth: 2,
            trunk_width: 16,
            head_width: 8,
            skip_layers: vec![1],
            pos_bands: 4,
            dir_bands: 2,
            ..NetworkConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn temp_run_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "fewnerf-it-{tag}-{}-{}",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap()
            .as_nanos()
    ));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

#[test]
fn run_writes_artifacts_and_wellformed_csv() {
    let dir = temp_run_dir("artifacts");
    let cfg = tiny_config(LossMode::Full, 3);
    let artifacts = train(&cfg, tiny_dataset(), &dir).unwrap();

    assert!(artifacts.final_checkpoint.exists());
    assert!(dir.join("config.toml").exists());
    assert!(dir.join("eval.json").exists());
    assert!(dir.join("renders").join("test_003.png").exists());

    let (header, rows) = read_loss_csv(&artifacts.loss_csv).unwrap();
    assert_eq!(header.join(","), CSV_HEADER);
    assert_eq!(rows.len(), 60);

    // breakdown identity from the logged columns
    let (c_ls, c_lu, c_lr, c_lo, c_total, c_lambda_r) = (
        column(&header, "l_s"),
        column(&header, "l_u"),
        column(&header, "l_r"),
        column(&header, "l_o"),
        column(&header, "l_total"),
        column(&header, "lambda_r"),
    );
    for row in &rows {
        let expect = row[c_ls]
            + cfg.lambda_u * row[c_lu]
            + row[c_lambda_r] * row[c_lr]
            + cfg.lambda_o * row[c_lo];
        assert!((row[c_total] - expect).abs() < 1e-12);
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn baseline_mode_logs_zero_for_disabled_terms() {
    let dir = temp_run_dir("baseline-cols");
    let cfg = tiny_config(LossMode::Baseline, 5);
    let artifacts = train(&cfg, tiny_dataset(), &dir).unwrap();
    let (header, rows) = read_loss_csv(&artifacts.loss_csv).unwrap();
    let c_lu = column(&header, "l_u");
    let c_lr = column(&header, "l_r");
    let c_lo = column(&header, "l_o");
    let c_blur = column(&header, "blur_active");
    for row in &rows {
        assert_eq!(row[c_lu], 0.0);
        assert_eq!(row[c_lr], 0.0);
        assert_eq!(row[c_blur], 0.0);
        assert!(row[c_lo] >= 0.0);
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn training_reduces_rendering_loss() {
    let dir = temp_run_dir("descent");
    let mut cfg = tiny_config(LossMode::Baseline, 11);
    cfg.total_iters = 300;
    let artifacts = train(&cfg, tiny_dataset(), &dir).unwrap();
    let (header, rows) = read_loss_csv(&artifacts.loss_csv).unwrap();
    let c_ls = column(&header, "l_s");
    let head: f64 = rows[..10].iter().map(|r| r[c_ls]).sum::<f64>() / 10.0;
    let tail: f64 = rows[rows.len() - 10..].iter().map(|r| r[c_ls]).sum::<f64>() / 10.0;
    assert!(
        tail < head,
        "rendering loss did not decrease: {head} -> {tail}"
    );
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn identical_seeds_reproduce_bitwise_even_with_threads() {
    let dir_a = temp_run_dir("det-a");
    let dir_b = temp_run_dir("det-b");
    let mut cfg = tiny_config(LossMode::Full, 7);
    cfg.threads = 2;
    let a = train(&cfg, tiny_dataset(), &dir_a).unwrap();
    let b = train(&cfg, tiny_dataset(), &dir_b).unwrap();
    let csv_a = std::fs::read(&a.loss_csv).unwrap();
    let csv_b = std::fs::read(&b.loss_csv).unwrap();
    assert_eq!(csv_a, csv_b);
    assert_eq!(
        a.eval.as_ref().unwrap().mean_psnr.0.to_bits(),
        b.eval.as_ref().unwrap().mean_psnr.0.to_bits()
    );
    std::fs::remove_dir_all(&dir_a).ok();
    std::fs::remove_dir_all(&dir_b).ok();
}

#[test]
fn different_seeds_differ() {
    let dir_a = temp_run_dir("seed-a");
    let dir_b = temp_run_dir("seed-b");
    let a = train(&tiny_config(LossMode::Baseline, 1), tiny_dataset(), &dir_a).unwrap();
    let b = train(&tiny_config(LossMode::Baseline, 2), tiny_dataset(), &dir_b).unwrap();
    assert_ne!(
        a.final_loss.l_total.to_bits(),
        b.final_loss.l_total.to_bits()
    );
    std::fs::remove_dir_all(&dir_a).ok();
    std::fs::remove_dir_all(&dir_b).ok();
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir_full = temp_run_dir("resume-full");
    let dir_half = temp_run_dir("resume-half");
    let dir_cont = temp_run_dir("resume-cont");

    let cfg = tiny_config(LossMode::Full, 13);
    let full = train(&cfg, tiny_dataset(), &dir_full).unwrap();

    // same schedules as the full run, interrupted via a mid checkpoint
    let mut half_cfg = cfg.clone();
    half_cfg.checkpoint_interval = 30;
    train(&half_cfg, tiny_dataset(), &dir_half).unwrap();
    let mid_ckpt = dir_half.join("checkpoint_000030.ckpt");
    assert!(mid_ckpt.exists());

    let cont = train_resumed(&cfg, tiny_dataset(), &dir_cont, Some(&mid_ckpt)).unwrap();

    // the resumed CSV holds rows 30.. and must match the tail bit for bit
    let full_text = std::fs::read_to_string(&full.loss_csv).unwrap();
    let cont_text = std::fs::read_to_string(&cont.loss_csv).unwrap();
    let full_tail: Vec<&str> = full_text.lines().skip(1 + 30).collect();
    let cont_rows: Vec<&str> = cont_text.lines().skip(1).collect();
    assert_eq!(full_tail, cont_rows);

    // identical final parameters
    let ckpt_full = fewnerf::field::Checkpoint::load(&full.final_checkpoint).unwrap();
    let ckpt_cont = fewnerf::field::Checkpoint::load(&cont.final_checkpoint).unwrap();
    let same = ckpt_full
        .params
        .values()
        .iter()
        .zip(ckpt_cont.params.values())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    assert!(same);

    for d in [dir_full, dir_half, dir_cont] {
        std::fs::remove_dir_all(&d).ok();
    }
}

#[test]
fn phase_switch_happens_exactly_at_ts() {
    let dir = temp_run_dir("phase");
    let cfg = tiny_config(LossMode::Full, 17);
    // T_s = 0.25 * 60 = 15
    let artifacts = train(&cfg, tiny_dataset(), &dir).unwrap();
    let (header, rows) = read_loss_csv(&artifacts.loss_csv).unwrap();
    let c_iter = column(&header, "iter");
    let c_blur = column(&header, "blur_active");
    let c_gap = column(&header, "target_gap");
    for row in &rows {
        let iter = row[c_iter] as u64;
        if iter < 15 {
            assert_eq!(row[c_blur], 1.0, "iter {iter}");
            assert!(row[c_gap] > 0.0, "iter {iter}");
        } else {
            assert_eq!(row[c_blur], 0.0, "iter {iter}");
            assert_eq!(row[c_gap], 0.0, "iter {iter}");
        }
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn lambda_r_column_follows_the_ramp() {
    let dir = temp_run_dir("ramp");
    let mut cfg = tiny_config(LossMode::Full, 19);
    cfg.lambda_r_ramp_iters = 20;
    let artifacts = train(&cfg, tiny_dataset(), &dir).unwrap();
    let (header, rows) = read_loss_csv(&artifacts.loss_csv).unwrap();
    let c_iter = column(&header, "iter");
    let c_lambda = column(&header, "lambda_r");
    for row in &rows {
        let t = row[c_iter];
        let expect = 1e-5 + (1e-3 - 1e-5) * (t / 20.0).min(1.0);
        assert!((row[c_lambda] - expect).abs() < 1e-15);
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn adaptive_blur_run_completes_with_blur_phase() {
    let dir = temp_run_dir("adaptive-blur");
    let mut cfg = tiny_config(LossMode::AdaptiveBlur, 23);
    cfg.adaptive_blur_interval = 10;
    let artifacts = train(&cfg, tiny_dataset(), &dir).unwrap();
    let (header, rows) = read_loss_csv(&artifacts.loss_csv).unwrap();
    let c_iter = column(&header, "iter");
    let c_blur = column(&header, "blur_active");
    // blur phase runs until T = 54, raw afterwards
    for row in &rows {
        let expect = if (row[c_iter] as u64) < 54 { 1.0 } else { 0.0 };
        assert_eq!(row[c_blur], expect);
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn probes_record_both_frequency_classes() {
    let dir = temp_run_dir("probes");
    let cfg = tiny_config(LossMode::Full, 29);
    let artifacts = train(&cfg, tiny_dataset(), &dir).unwrap();
    // default probe schedule: ceil(T/4) = 14 and T = 54
    assert_eq!(artifacts.probes.len(), 2);
    assert_eq!(artifacts.probes[0].iter, 14);
    assert_eq!(artifacts.probes[1].iter, 54);
    for p in &artifacts.probes {
        assert_eq!(p.n_low + p.n_high, 3 * 16 * 16);
        assert!(p.n_low > 0 && p.n_high > 0);
        assert!(p.mean_inv_beta2_low.is_finite());
    }
    assert!(dir.join("probes.csv").exists());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn mask_schedule_matches_unlock_fraction_during_training() {
    // schedule coherence: the active mask fraction tracks iter/T within one
    // band of granularity
    let cfg = tiny_config(LossMode::Full, 1);
    let horizon = cfg.mask_horizon();
    let bands = cfg.network.pos_bands;
    for iter in [0u64, 10, 20, 40, 53, 54, 59] {
        let mask = fewnerf::encoding::mask_at(cfg.mask_t_at(iter), horizon, bands);
        let expect = (iter as f64 / horizon as f64).min(1.0);
        let got = mask.unlock_fraction();
        assert!(
            (got - expect).abs() <= 1.0 / bands as f64 + 1e-12,
            "iter {iter}: fraction {got} vs {expect}"
        );
    }
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = tiny_config(LossMode::Entropy, 5);
    let text = cfg.to_toml().unwrap();
    let back = TrainConfig::from_toml(&text).unwrap();
    assert_eq!(cfg, back);
    // partial configs pick up defaults
    let partial = TrainConfig::from_toml("total_iters = 42").unwrap();
    assert_eq!(partial.total_iters, 42);
    assert_eq!(partial.batch_size, TrainConfig::default().batch_size);
}

#[test]
fn frozen_mask_keeps_unlock_fraction_constant() {
    let mut cfg = tiny_config(LossMode::TwoPhase, 3);
    cfg.freeze_mask_frac = Some(0.1);
    let horizon = cfg.mask_horizon();
    let t0 = cfg.mask_t_at(0);
    let t_late = cfg.mask_t_at(50);
    assert_eq!(t0, t_late);
    let mask = fewnerf::encoding::mask_at(t0, horizon, cfg.network.pos_bands);
    assert!((mask.unlock_fraction() - 0.1).abs() < 0.26); // within one band
}
