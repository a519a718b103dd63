use proptest::prelude::*;
use tmae::data::{load_manifest, sample_indices, write_manifest, ClipRecord, Split, SyntheticSpec, Video};
use tmae::eval::{auroc, confusion_metrics, label_from_ef, EfClass};
use tmae::losses::{comparison_count, reconstruction_loss, temporal_contrastive_loss, ContrastiveParams};
use tmae::masking::{apply_mask, make_mask_plan, scatter, MaskPlan};
use tmae::tensor::Mat;
use tmae::tokenizer::{patchify, unpatchify, PatchConfig, TokenSequence};
use tmae::train::{EarlyStopState, LrSchedule};
use tmae_oracle_refs::{ref_auroc, ref_confusion, ref_contrastive, ref_masked_mse};

fn split_strategy() -> impl Strategy<Value = Split> {
    prop_oneof![Just(Split::Train), Just(Split::Val), Just(Split::Test)]
}

fn record_strategy() -> impl Strategy<Value = (f64, Split, f64, Vec<(usize, usize)>)> {
    (
        0.0f64..=100.0,
        split_strategy(),
        1.0f64..120.0,
        prop::collection::vec((0usize..500, 1usize..40), 0..4),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn manifest_round_trips(rows in prop::collection::vec(record_strategy(), 1..20), phases in any::<bool>()) {
        let dir = tempfile::tempdir().unwrap();
        let records: Vec<ClipRecord> = rows
            .into_iter()
            .enumerate()
            .map(|(i, (ef, split, fps, ph))| ClipRecord {
                source_id: format!("0X{i:04}"),
                file_path: dir.path().join(format!("0X{i:04}.tnsr")),
                ef_percent: ef,
                split,
                fps,
                phase_frames: if phases {
                    let mut ph: Vec<(usize, usize)> = ph.into_iter().map(|(ed, gap)| (ed, ed + gap)).collect();
                    if ph.is_empty() {
                        ph.push((0, 5));
                    }
                    ph
                } else {
                    Vec::new()
                },
            })
            .collect();
        let path = dir.path().join("FileList.csv");
        write_manifest(&path, &records).unwrap();
        prop_assert_eq!(load_manifest(&path).unwrap(), records);
    }

    #[test]
    fn ef_analog_decreases_with_end_systolic_radius(r_max in 2.0f64..15.0, a in 0.05f64..0.95, b in 0.05f64..0.95) {
        prop_assume!((a - b).abs() > 1e-6);
        let spec = |frac: f64| SyntheticSpec {
            r_max,
            r_min: r_max * frac,
            period_s: 1.0,
            phase0: 0.0,
            noise_sigma: 0.0,
            background: 0.1,
            fps: 50.0,
            duration_s: 2.0,
        };
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(spec(lo).ef_analog() > spec(hi).ef_analog());
        let ef = spec(lo).ef_analog();
        prop_assert!(ef > 0.0 && ef < 1.0);
    }

    #[test]
    fn sampled_indices_are_increasing_and_span_the_window(fps in 10.0f64..120.0, start in 0usize..50, t in 2usize..16, window in 0.3f64..2.0) {
        match sample_indices(fps, start, t, window) {
            Ok(idx) => {
                prop_assert_eq!(idx.len(), t);
                prop_assert_eq!(idx[0], start);
                prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
                prop_assert_eq!(idx[t - 1], start + (fps * window).round() as usize);
            }
            Err(e) => {
                let expected = matches!(e, tmae::Error::TooFewSourceFrames { .. });
                prop_assert!(expected, "unexpected error {}", e);
            }
        }
    }

    #[test]
    fn patchify_inverts(p in 1usize..4, gh in 1usize..4, gw in 1usize..4, t in 1usize..4, seed in any::<u64>()) {
        let (h, w) = (p * gh, p * gw);
        let data: Vec<f32> = (0..t * h * w).map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f32 / 1000.0).collect();
        let video = Video::new(t, h, w, data.clone());
        let cfg = PatchConfig::new(p, h, w, t).unwrap();
        let patches = patchify::<f64>(&video, &cfg).unwrap();
        prop_assert_eq!((patches.rows, patches.cols), (t * gh * gw, p * p));
        let back = unpatchify(&patches, &cfg).unwrap();
        let flat: Vec<f32> = back.data.iter().map(|&v| v as f32).collect();
        prop_assert_eq!(flat, data);
    }

    #[test]
    fn mask_counts_are_exact_and_scatter_inverts(t in 1usize..8, n in 1usize..40, ratio in 0.0f64..0.99, seed in any::<u64>()) {
        let plan = make_mask_plan(t, n, ratio, seed).unwrap();
        let m = (ratio * n as f64).floor() as usize;
        for f in 0..t {
            prop_assert_eq!(plan.masked_in_frame(f), m);
            prop_assert_eq!((0..n).filter(|&i| plan.is_masked(f, i)).count(), m);
        }
        prop_assert_eq!(plan.total_masked() + plan.total_visible(), t * n);
        let tokens = Mat::from_vec(t * n, 2, (0..t * n * 2).map(|v| v as f64).collect());
        let seq = TokenSequence { tokens: tokens.clone(), cls: None };
        let (vis, gather) = apply_mask(&seq, &plan).unwrap();
        prop_assert_eq!(vis.tokens.rows, plan.total_visible());
        let full = scatter(&vis.tokens, &gather, t * n).unwrap();
        for k in 0..t * n {
            let (f, i) = (k / n, k % n);
            if plan.is_masked(f, i) {
                prop_assert!(full.row(k).iter().all(|&v| v == 0.0));
            } else {
                prop_assert_eq!(full.row(k), tokens.row(k));
            }
        }
        prop_assert_eq!(&make_mask_plan(t, n, ratio, seed).unwrap(), &plan);
    }

    #[test]
    fn masked_mse_matches_reference(t in 1usize..5, n in 2usize..10, d in 1usize..6, seed in any::<u64>()) {
        let plan = MaskPlan::new(t, n, 0.5, seed).unwrap();
        prop_assume!(plan.total_masked() > 0);
        let gen = |salt: u64| -> Vec<f64> {
            (0..t * n * d).map(|i| (((i as u64 + salt).wrapping_mul(seed | 3) >> 7) % 997) as f64 / 997.0).collect()
        };
        let pred = Mat::from_vec(t * n, d, gen(1));
        let target = Mat::from_vec(t * n, d, gen(2));
        let rows = |m: &Mat<f64>| (0..m.rows).map(|r| m.row(r).to_vec()).collect::<Vec<_>>();
        let got = reconstruction_loss(&pred, &target, &plan).unwrap();
        let want = ref_masked_mse(&rows(&pred), &rows(&target), plan.mask());
        prop_assert!((got - want).abs() <= 1e-12 * want.max(1.0));
    }

    #[test]
    fn contrastive_is_bounded_and_matches_reference(
        t in 2usize..8,
        d in 2usize..8,
        tau_p in 1usize..7,
        tau_m in 0.01f64..2.0,
        vals in prop::collection::vec(-1.0f64..1.0, 64..=64),
    ) {
        let tau_p = tau_p.min(t - 1);
        let data: Vec<f64> = (0..t * d).map(|i| vals[i % 64] + 0.01 * (i as f64 + 1.0)).collect();
        let feats = Mat::from_vec(t, d, data);
        let params = ContrastiveParams { tau_p, tau_m, lambda: 0.1 };
        let got = temporal_contrastive_loss(&feats, &params).unwrap();
        let rows: Vec<Vec<f64>> = (0..t).map(|r| feats.row(r).to_vec()).collect();
        let want = ref_contrastive(&rows, tau_p, tau_m);
        prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(1e-12));
        prop_assert!(got >= 0.0 && got <= 4.0f64.max(tau_m * tau_m));
        prop_assert_eq!(comparison_count(t), t * (t - 1) / 2);
    }

    #[test]
    fn auroc_matches_pairs_and_is_rank_invariant(
        pts in prop::collection::vec((0u8..20, any::<bool>()), 2..80),
    ) {
        let scores: Vec<f64> = pts.iter().map(|p| p.0 as f64 / 20.0).collect();
        let labels: Vec<bool> = pts.iter().map(|p| p.1).collect();
        let both = labels.iter().any(|&l| l) && labels.iter().any(|&l| !l);
        match auroc(&scores, &labels) {
            Ok(a) => {
                prop_assert!(both);
                prop_assert!((a - ref_auroc(&scores, &labels).unwrap()).abs() < 1e-12);
                let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
                prop_assert!((auroc(&warped, &labels).unwrap() - a).abs() < 1e-12);
                let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
                prop_assert!((auroc(&scores, &flipped).unwrap() - (1.0 - a)).abs() < 1e-12);
            }
            Err(e) => {
                prop_assert!(!both);
                let expected = matches!(e, tmae::Error::SingleClassOnly);
                prop_assert!(expected);
            }
        }
    }

    #[test]
    fn confusion_counts_match_reference(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..200)) {
        let preds: Vec<bool> = pairs.iter().map(|p| p.0).collect();
        let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        let c = confusion_metrics(&preds, &labels).unwrap();
        prop_assert_eq!((c.tp, c.fp, c.tn, c.fn_), ref_confusion(&preds, &labels));
        prop_assert!((c.accuracy - (c.tp + c.tn) as f64 / pairs.len() as f64).abs() < 1e-15);
    }

    #[test]
    fn ef_label_is_monotone(a in 0.0f64..=100.0, b in 0.0f64..=100.0) {
        let pos = |x: f64| label_from_ef(x).unwrap() == EfClass::Reduced;
        if a <= b && pos(b) {
            prop_assert!(pos(a));
        }
        prop_assert_eq!(pos(a), a <= 50.0);
    }

    #[test]
    fn schedule_is_continuous_then_non_increasing(warmup in 1usize..300, extra in 1usize..2000, batch in 1usize..1024) {
        let max = (warmup + extra) as f64;
        let s = LrSchedule::new(1.5e-4, batch, warmup as f64, max, None);
        let w = warmup as f64;
        let slope = s.peak * (1.0 / w + std::f64::consts::FRAC_PI_2 / (max - w));
        prop_assert!((s.lr_at(w - 1e-9) - s.lr_at(w + 1e-9)).abs() <= 2e-9 * slope * (1.0 + 1e-6) + 1e-18);
        let mut prev = s.lr_at(w);
        for k in 1..=50 {
            let lr = s.lr_at(w + (max - w) * k as f64 / 50.0);
            prop_assert!(lr <= prev + 1e-18);
            prev = lr;
        }
        prop_assert!((s.lr_at(max) - s.min_lr).abs() <= 1e-15);
    }

    #[test]
    fn early_stopping_needs_patience_consecutive_stalls(losses in prop::collection::vec(0.0f64..1.0, 1..200), patience in 1usize..20) {
        let mut s = EarlyStopState::default();
        let mut run = 0usize;
        for &l in &losses {
            let improved = s.update(l, patience, 5e-5);
            run = if improved { 0 } else { run + 1 };
            prop_assert_eq!(s.epochs_since_improve, run);
            prop_assert_eq!(s.stopped, run >= patience);
        }
    }
}
