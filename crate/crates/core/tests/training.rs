use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tmae::config::Config;
use tmae::data::{generate_synthetic_set, Dataset, Split, StartPolicy, Video};
use tmae::losses::ContrastiveParams;
use tmae::masking::MaskPlan;
use tmae::model::{head_loss, Checkpoint, FrameFeatureSource, Model, ModelParams, Target, HEAD_PREFIX};
use tmae::train::{finetune, pretrain, sampling, EpochLog, RunOptions};
use tmae_oracle_refs::{ref_grad, rel_err, FiniteDiffSpec};

fn micro_config(manifest: &Path) -> Config {
    let mut c = Config::default();
    for kv in [
        "model.variant=micro",
        "model.patch_size=2",
        "data.frames=2",
        "data.height=4",
        "data.width=4",
        "train.batch_size=4",
        "train.warmup_epochs=2",
        "train.max_epochs=8",
        "train.base_lr=0.05",
        "train.finetune_epochs=4",
        "train.finetune_batch_size=4",
        "train.finetune_base_lr=0.5",
        "model.head_hidden1=16",
        "model.head_hidden2=8",
    ] {
        c.set_override(kv).unwrap();
    }
    c.set_override(&format!("data.manifest={}", manifest.display())).unwrap();
    c
}

fn synth_data(dir: &Path, n: usize) -> Config {
    let cfg = micro_config(&dir.join("FileList.csv"));
    generate_synthetic_set(&cfg.synthetic_set(n), dir, 11).unwrap();
    cfg
}

fn flat(p: &ModelParams<f64>) -> Vec<f64> {
    p.named().iter().flat_map(|(_, t)| t.data.iter().copied()).collect()
}

fn unflat(p: &mut ModelParams<f64>, x: &[f64]) {
    let mut k = 0;
    for (_, t) in p.named_mut() {
        for v in t.data.iter_mut() {
            *v = x[k];
            k += 1;
        }
    }
}

fn randomized_micro(features: FrameFeatureSource, seed: u64) -> Model<f64> {
    let mut cfg = Config::default();
    for kv in ["model.variant=micro", "model.patch_size=2", "data.frames=2", "data.height=4", "data.width=4", "model.head_hidden1=6", "model.head_hidden2=5"] {
        cfg.set_override(kv).unwrap();
    }
    let mut mc = cfg.model_config().unwrap();
    mc.frame_features = features;
    let mut model = Model::<f64>::new(mc, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.params.visit_mut_all(|t| t.data.iter_mut().for_each(|v| *v += rng.gen_range(-0.4..0.4)));
    model
}

fn test_video(seed: u64) -> Video {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Video::new(2, 4, 4, (0..32).map(|_| rng.gen_range(0.0..1.0)).collect())
}

/// Max elementwise relative error between analytic and numeric gradients
/// over the parameters selected by `keep`.
fn worst_error(model: &Model<f64>, analytic: &ModelParams<f64>, loss: &dyn Fn(&Model<f64>) -> f64, keep: &dyn Fn(&str) -> bool) -> f64 {
    let x0 = flat(&model.params);
    let mut probe = model.clone();
    let numeric = ref_grad(
        |x| {
            unflat(&mut probe.params, x);
            loss(&probe)
        },
        &x0,
        &FiniteDiffSpec::default(),
    )
    .unwrap();
    let mut worst = 0.0f64;
    let mut k = 0;
    for (name, t) in analytic.named() {
        for &a in &t.data {
            if keep(&name) {
                worst = worst.max(rel_err(a, numeric[k], 1e-6));
            } else {
                assert_eq!(a, 0.0, "{name} should receive no gradient");
            }
            k += 1;
        }
    }
    worst
}

#[test]
fn restored_feature_gradients_match_finite_differences() {
    let model = randomized_micro(FrameFeatureSource::Restored, 5);
    let video = test_video(9);
    let plan = MaskPlan::new(2, 4, 0.5, 4).unwrap();
    let params = ContrastiveParams { tau_p: 1, tau_m: 0.5, lambda: 0.7 };
    let mut grads = model.params.zeros_like();
    model.pretrain_step(&video, &plan, Some(&params), 1.0, &mut grads).unwrap();
    let loss = |m: &Model<f64>| m.pretrain_losses(&video, &plan, Some(&params)).unwrap().total;
    let worst = worst_error(&model, &grads, &loss, &|n| !n.starts_with(HEAD_PREFIX));
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn finetune_gradients_match_finite_differences() {
    let video = test_video(3);
    for target in [Target::Binary(true), Target::Binary(false), Target::Value(0.35)] {
        let model = randomized_micro(FrameFeatureSource::Visible, 8);
        let mut grads = model.params.zeros_like();
        model.finetune_step(&video, target, true, 1.0, &mut grads).unwrap();
        let loss = |m: &Model<f64>| head_loss(m.logit(&video).unwrap(), target).0;
        let worst = worst_error(&model, &grads, &loss, &|n| !n.starts_with("decoder"));
        assert!(worst < 1e-4, "{target:?}: worst relative error {worst}");
    }
}

#[test]
fn frozen_step_only_touches_the_head() {
    let model = randomized_micro(FrameFeatureSource::Visible, 2);
    let mut grads = model.params.zeros_like();
    model.finetune_step(&test_video(1), true, false, 1.0, &mut grads).unwrap();
    for (name, t) in grads.named() {
        if !name.starts_with(HEAD_PREFIX) {
            assert!(t.data.iter().all(|&v| v == 0.0), "{name}");
        }
    }
}

fn run_pretrain(cfg: &Config, data: &Dataset, resume: Option<Checkpoint<f32>>, stop_after: Option<usize>) -> (Vec<EpochLog>, Checkpoint<f32>) {
    let opts = RunOptions { workers: 1, stop_after };
    let out = pretrain(cfg, data, resume, opts, &mut |_| {}).unwrap();
    (out.curve, out.last)
}

#[test]
fn pretraining_is_deterministic_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_data(dir.path(), 10);
    let data = Dataset::load(&cfg.data.manifest, Some(Split::Train)).unwrap();

    let (full, last) = run_pretrain(&cfg, &data, None, None);
    assert_eq!(full.len(), 8);
    let (again, last_again) = run_pretrain(&cfg, &data, None, None);
    assert_eq!(full, again);
    assert_eq!(last.to_bytes(), last_again.to_bytes());

    let (head, mid) = run_pretrain(&cfg, &data, None, Some(3));
    let path = dir.path().join("mid.ckpt");
    mid.save(&path).unwrap();
    let (tail, resumed) = run_pretrain(&cfg, &data, Some(Checkpoint::load(&path).unwrap()), None);
    let stitched: Vec<EpochLog> = head.into_iter().chain(tail).collect();
    assert_eq!(stitched, full);
    assert_eq!(resumed.to_bytes(), last.to_bytes());
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_data(dir.path(), 8);
    let data = Dataset::load(&cfg.data.manifest, Some(Split::Train)).unwrap();
    let one = pretrain(&cfg, &data, None, RunOptions { workers: 1, stop_after: Some(3) }, &mut |_| {}).unwrap();
    let three = pretrain(&cfg, &data, None, RunOptions { workers: 3, stop_after: Some(3) }, &mut |_| {}).unwrap();
    assert_eq!(one.curve, three.curve);
    assert_eq!(one.last.to_bytes(), three.last.to_bytes());
}

#[test]
fn disabling_contrastive_equals_zero_weight() {
    let dir = tempfile::tempdir().unwrap();
    let mut off = synth_data(dir.path(), 8);
    let data = Dataset::load(&off.data.manifest, Some(Split::Train)).unwrap();
    let mut zero = off.clone();
    off.set_override("train.use_contrastive=false").unwrap();
    zero.set_override("loss.lambda=0").unwrap();
    let (a, ca) = run_pretrain(&off, &data, None, Some(4));
    let (b, cb) = run_pretrain(&zero, &data, None, Some(4));
    assert_eq!(a, b);
    assert_eq!(ca.model.params, cb.model.params);
}

#[test]
fn base_mode_leaves_encoder_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = synth_data(dir.path(), 12);
    let all = Dataset::load(&cfg.data.manifest, None).unwrap();
    let train = all.split(Split::Train);
    let (_, pre) = run_pretrain(&cfg, &train, None, Some(2));
    cfg.set_override("train.mode=base").unwrap();
    let out = finetune(&cfg, &pre, &train, None, RunOptions::default(), &mut |_| {}).unwrap();
    let mut head_changed = false;
    for ((name, before), (_, after)) in pre.model.params.named().into_iter().zip(out.checkpoint.model.params.named()) {
        if name.starts_with(HEAD_PREFIX) {
            head_changed |= before != after;
        } else {
            let same = before.data.iter().zip(&after.data).all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same, "{name} changed in base mode");
        }
    }
    assert!(head_changed);
}

#[test]
fn oracle_windows_start_at_radius_maximum() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = micro_config(&dir.path().join("FileList.csv"));
    cfg.set_override("data.synth_noise_sigma=0").unwrap();
    generate_synthetic_set(&cfg.synthetic_set(16), dir.path(), 11).unwrap();
    let data = Dataset::load(&cfg.data.manifest, None).unwrap();
    let samp = sampling(&cfg);
    for i in 0..data.len() {
        let clip = data.clip(i, &samp, StartPolicy::Oracle).unwrap();
        let ed = data.records[i].phase_frames[0].0;
        assert_eq!(clip.t_indices[0], ed);
        // The disk is largest at end diastole, so the noise-free source frame
        // there is the brightest among its neighbours.
        let video = &data.videos[i];
        let mean = |f: usize| video.frame(f).iter().map(|&v| v as f64).sum::<f64>();
        let lo = ed.saturating_sub(3);
        let peak = (lo..=ed + 3).max_by(|&a, &b| mean(a).total_cmp(&mean(b))).unwrap();
        assert!(peak.abs_diff(ed) <= 2, "clip {i}: brightest frame {peak}, ED {ed}");
    }
}

#[test]
fn end_to_end_beats_chance_on_two_clips() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = micro_config(&dir.path().join("FileList.csv"));
    for kv in ["data.val_fraction=0", "data.test_fraction=0", "train.finetune_epochs=150", "train.finetune_batch_size=2", "train.finetune_base_lr=1.0", "train.oracle=true"] {
        cfg.set_override(kv).unwrap();
    }
    generate_synthetic_set(&cfg.synthetic_set(2), dir.path(), 4).unwrap();
    let data = Dataset::load(&cfg.data.manifest, None).unwrap();
    assert_eq!(data.labels().unwrap().iter().filter(|&&l| l).count(), 1);
    let pre = Checkpoint {
        config: cfg.clone(),
        model: Model::<f32>::new(cfg.model_config().unwrap(), 1).unwrap(),
        optimizer: None,
        state: Default::default(),
    };
    let out = finetune(&cfg, &pre, &data, None, RunOptions::default(), &mut |_| {}).unwrap();
    let last = out.curve.last().unwrap().l_rec;
    assert!(last < std::f64::consts::LN_2, "final training loss {last}");
}

#[test]
fn checkpoint_file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_data(dir.path(), 6);
    let data = Dataset::load(&cfg.data.manifest, Some(Split::Train)).unwrap();
    let (_, ck) = run_pretrain(&cfg, &data, None, Some(1));
    let path = dir.path().join("a.ckpt");
    ck.save(&path).unwrap();
    let back = Checkpoint::<f32>::load(&path).unwrap();
    assert_eq!(back.to_bytes(), std::fs::read(&path).unwrap());
    assert_eq!(back, ck);
}

#[test]
fn mismatched_config_is_incompatible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_data(dir.path(), 6);
    let data = Dataset::load(&cfg.data.manifest, Some(Split::Train)).unwrap();
    let (_, ck) = run_pretrain(&cfg, &data, None, Some(1));
    let mut other = cfg.clone();
    other.set_override("model.decoder_dim=4").unwrap();
    let err = finetune(&other, &ck, &data, None, RunOptions::default(), &mut |_| {}).err().unwrap();
    assert!(matches!(err, tmae::Error::IncompatibleCheckpoint(_)));
    assert_eq!(err.exit_code(), 1);
}
