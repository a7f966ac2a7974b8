use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ctc::{path_score, viterbi_owners};
use super::*;
use crate::corpus::PhonemeInventory;
use crate::nn::gradcheck::check_gradients;
use crate::nn::graph::log_softmax_rows;

fn three_symbols() -> PhonemeInventory {
    PhonemeInventory::new(&["a", "b", "c"]).unwrap()
}

fn random_mel(t: usize, m: usize, seed: u64) -> MelSpectrogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MelSpectrogram {
        frames: Mat::from_shape_simple_fn((t, m), || rng.random_range(-1.0..1.0)),
        frame_shift_ms: 12.5,
        frame_length_ms: 50.0,
    }
}

fn micro() -> Recognizer {
    Recognizer::new(RecognizerConfig::micro(4), three_symbols(), 3).unwrap()
}

#[test]
fn encoded_length_is_ceiling() {
    let r = micro();
    assert_eq!(r.encode(&random_mel(40, 4, 0)).unwrap().dim(), (10, 8));
    assert_eq!(r.encode(&random_mel(41, 4, 0)).unwrap().nrows(), 11);
    assert_eq!(r.encode(&random_mel(4, 4, 0)).unwrap().nrows(), 1);
    let m = random_mel(17, 4, 5);
    assert_eq!(r.encode(&m).unwrap(), r.encode(&m).unwrap());
    assert!(matches!(
        r.encode(&random_mel(3, 4, 0)),
        Err(Error::InputTooShort { frames: 3, min: 4 })
    ));
}

#[test]
fn non_power_of_two_factor_still_divides_exactly() {
    let mut cfg = RecognizerConfig::micro(4);
    cfg.subsample_factor = 6;
    assert_eq!(cfg.pool_strides(), vec![2, 3]);
    let r = Recognizer::new(cfg, three_symbols(), 0).unwrap();
    assert_eq!(r.encode(&random_mel(25, 4, 1)).unwrap().nrows(), 5);
}

#[test]
fn config_validation() {
    let mut c = RecognizerConfig::micro(4);
    c.lambda = 1.5;
    assert!(c.validate().is_err());
    let mut c = RecognizerConfig::micro(4);
    c.attention_heads = 3;
    assert!(c.validate().is_err());
    let mut c = RecognizerConfig::micro(4);
    c.subsample_factor = 0;
    assert!(c.validate().is_err());
    assert!(RecognizerConfig::default().validate().is_ok());
}

#[test]
fn lambda_endpoints_select_components() {
    let r = micro();
    let mel = random_mel(16, 4, 2);
    let y = PhonemeSequence(vec![0, 2, 1]);
    let one = r.hybrid_loss(&mel, &y, 1.0).unwrap();
    assert_eq!(one.total, one.ctc_term);
    let zero = r.hybrid_loss(&mel, &y, 0.0).unwrap();
    assert_eq!(zero.total, zero.att_term);
    let mid = r.hybrid_loss(&mel, &y, 0.3).unwrap();
    assert!((mid.total - (0.3 * mid.ctc_term + 0.7 * mid.att_term)).abs() < 1e-9);
    assert!(mid.ctc_term >= 0.0 && mid.att_term >= 0.0);
    assert!((combine_terms(2.0, 1.0, 0.3) - 1.3).abs() < 1e-12);
}

#[test]
fn infeasible_pair_is_rejected() {
    let r = micro();
    let mel = random_mel(8, 4, 2);
    let y = PhonemeSequence(vec![0, 1, 2]);
    assert!(matches!(
        r.hybrid_loss(&mel, &y, 0.3),
        Err(Error::InfeasibleAlignment { labels: 3, frames: 2 })
    ));
}

#[test]
fn hybrid_loss_gradient_matches_finite_differences() {
    let r = micro();
    let mel = random_mel(12, 4, 4);
    let labels = [1usize, 0];
    let report = check_gradients(
        &r.params,
        |g| r.loss_graph(g, &mel.frames, &labels, 0.3).unwrap().0,
        1e-5,
        1e-5,
    );
    assert!(report.checked > 100);
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn zero_step_training_is_identity() {
    let mut r = micro();
    let before = r.params.clone();
    let data = vec![RecognizerExample {
        id: "u".into(),
        mel: random_mel(12, 4, 1).frames,
        phonemes: vec![0, 1],
    }];
    let sched = RecognizerSchedule {
        steps: 0,
        ..Default::default()
    };
    train_recognizer(&mut r, &data, &sched, |_| panic!("no steps expected")).unwrap();
    assert_eq!(r.params, before);
    assert_eq!(r.step, 0);
}

#[test]
fn infeasible_training_pair_fails_before_any_step() {
    let mut r = micro();
    let before = r.params.clone();
    let data = vec![
        RecognizerExample {
            id: "ok".into(),
            mel: random_mel(12, 4, 1).frames,
            phonemes: vec![0, 1],
        },
        RecognizerExample {
            id: "bad".into(),
            mel: random_mel(4, 4, 1).frames,
            phonemes: vec![0, 1],
        },
    ];
    let mut steps = 0;
    let res = train_recognizer(&mut r, &data, &RecognizerSchedule::default(), |_| steps += 1);
    assert!(matches!(res, Err(Error::InfeasibleAlignment { .. })));
    assert_eq!(steps, 0);
    assert_eq!(r.params, before);
}

#[test]
fn beam_zero_is_invalid() {
    let r = micro();
    assert!(matches!(
        recognize(&r, &random_mel(8, 4, 0), 0),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn wider_beam_never_scores_below_greedy() {
    for seed in 0..6 {
        let r = Recognizer::new(RecognizerConfig::micro(4), three_symbols(), seed).unwrap();
        let mel = random_mel(16, 4, seed + 10);
        let greedy = recognize(&r, &mel, 1).unwrap();
        let wide = recognize(&r, &mel, 4).unwrap();
        if !greedy.timed_out {
            assert!(!wide.timed_out);
            assert!(wide.score >= greedy.score - 1e-12);
            let js = r.joint_score(&mel, &wide.phonemes).unwrap();
            assert!((js - wide.score).abs() < 1e-9, "{js} vs {}", wide.score);
        }
    }
}

#[test]
fn single_phoneme_alignment_takes_all_frames() {
    let r = micro();
    let d = ctc_force_align(&r, &random_mel(8, 4, 0), &PhonemeSequence(vec![2])).unwrap();
    assert_eq!(d.as_slice(), &[8]);
    let d = ctc_force_align(&r, &random_mel(8, 4, 0), &PhonemeSequence(vec![0, 1])).unwrap();
    assert_eq!(d.total(), 8);
    assert!(d.as_slice().iter().all(|&x| x >= 1));
    let d = ctc_force_align(&r, &random_mel(9, 4, 0), &PhonemeSequence(vec![0, 1, 2])).unwrap();
    assert_eq!(d.total(), 9);
    assert!(ctc_force_align(&r, &random_mel(8, 4, 0), &PhonemeSequence(vec![0, 1, 2])).is_err());
}

fn valid_ctc_paths(t: usize, v: usize, labels: &[usize], blank: usize) -> Vec<Vec<usize>> {
    let mut all = vec![vec![]];
    for _ in 0..t {
        all = all
            .into_iter()
            .flat_map(|p: Vec<usize>| {
                (0..v).map(move |k| {
                    let mut q = p.clone();
                    q.push(k);
                    q
                })
            })
            .collect();
    }
    all.into_iter()
        .filter(|p| {
            let mut out = Vec::new();
            let mut prev = None;
            for &k in p {
                if Some(k) != prev && k != blank {
                    out.push(k);
                }
                prev = Some(k);
            }
            out == labels
        })
        .collect()
}

#[test]
fn viterbi_matches_exhaustive_best_path() {
    let blank = 3;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = Mat::from_shape_simple_fn((3, 4), || rng.random_range(-3.0..3.0));
        let lp = log_softmax_rows(&logits);
        let labels = [rng.random_range(0..3), rng.random_range(0..3)];
        if labels[0] == labels[1] {
            continue;
        }
        let best = valid_ctc_paths(3, 4, &labels, blank)
            .into_iter()
            .max_by(|a, b| path_score(&lp, a).total_cmp(&path_score(&lp, b)))
            .unwrap();
        // owner of each frame in the oracle path
        let mut owner = Vec::new();
        let mut seen = 0usize;
        let mut prev = None;
        for &k in &best {
            if k != blank && Some(k) != prev {
                seen += 1;
            }
            prev = Some(k);
            owner.push(seen.max(1) - 1);
        }
        assert_eq!(viterbi_owners(&lp, &labels, blank).unwrap(), owner, "seed {seed}");
    }
}

#[test]
fn checkpoint_round_trip_and_hash_check() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = micro();
    r.step = 17;
    r.save(dir.path()).unwrap();
    let back = Recognizer::load(dir.path()).unwrap();
    assert_eq!(back.params, r.params);
    assert_eq!(back.config, r.config);
    assert_eq!(back.step, 17);
    let other = PhonemeInventory::new(&["a", "b", "d"]).unwrap();
    assert!(matches!(
        Recognizer::load_with_inventory(dir.path(), &other),
        Err(Error::Checkpoint(_))
    ));
}

#[test]
fn overfit_single_utterance_is_recovered() {
    let inv = three_symbols();
    let mut cfg = RecognizerConfig::micro(6);
    cfg.model_width = 16;
    cfg.ffn_width = 32;
    cfg.conv_channels = 8;
    let mut r = Recognizer::new(cfg, inv, 1).unwrap();
    let mel = random_mel(24, 6, 7);
    let labels = vec![0usize, 2, 1, 2];
    let data = vec![RecognizerExample {
        id: "u".into(),
        mel: mel.frames.clone(),
        phonemes: labels.clone(),
    }];
    let sched = RecognizerSchedule {
        steps: 300,
        batch_size: 1,
        lr: crate::nn::optim::LrSchedule {
            peak_lr: 1e-2,
            warmup_steps: 20,
            min_lr: 1e-3,
        },
        ..Default::default()
    };
    let mut first = None;
    let mut last = 0.0;
    train_recognizer(&mut r, &data, &sched, |row| {
        first.get_or_insert(row.total);
        last = row.total;
    })
    .unwrap();
    assert!(last < 0.2 * first.unwrap(), "{last} vs {first:?}");
    assert_eq!(r.step, 300);
    let g = recognize(&r, &mel, 1).unwrap();
    let b = recognize(&r, &mel, 4).unwrap();
    assert_eq!(g.phonemes.0, labels);
    assert_eq!(b.phonemes.0, labels);
    let d = ctc_force_align(&r, &mel, &PhonemeSequence(labels)).unwrap();
    assert_eq!(d.total(), 24);
}
