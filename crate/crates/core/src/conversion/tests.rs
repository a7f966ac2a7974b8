use std::sync::OnceLock;

use super::*;
use crate::corpus::synthetic::{synthesize_corpus, toy_inventory, SyntheticSpec, SyntheticUtterance};
use crate::corpus::UtteranceRecord;
use crate::generator::GeneratorConfig;
use crate::nn::optim::LrSchedule;
use crate::recognizer::{train_recognizer, RecognizerConfig, RecognizerExample, RecognizerSchedule};

struct Fixture {
    cfg: FeatureConfig,
    utts: Vec<SyntheticUtterance>,
    rec: Recognizer,
    generator: Generator,
}

fn feature_config() -> FeatureConfig {
    FeatureConfig {
        sample_rate: 8000,
        n_mels: 12,
        ..Default::default()
    }
}

/// Recognizer briefly fitted to two utterances so decoding yields phonemes;
/// generator left at random weights.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let cfg = feature_config();
        let inv = toy_inventory();
        let spec = SyntheticSpec {
            n_utterances: 3,
            ..Default::default()
        };
        let utts = synthesize_corpus(&spec, &inv, &cfg);
        let mut rec = Recognizer::new(RecognizerConfig::micro(cfg.n_mels), inv.clone(), 0).unwrap();
        let data: Vec<RecognizerExample> = utts
            .iter()
            .map(|u| RecognizerExample {
                id: u.id.clone(),
                mel: compute_log_mel(&u.wav, &cfg).unwrap().frames,
                phonemes: u.phonemes.0.clone(),
            })
            .collect();
        let sched = RecognizerSchedule {
            steps: 60,
            batch_size: 3,
            lr: LrSchedule {
                peak_lr: 1e-2,
                warmup_steps: 10,
                min_lr: 1e-3,
            },
            ..Default::default()
        };
        train_recognizer(&mut rec, &data, &sched, |_| {}).unwrap();
        let generator = Generator::new(
            GeneratorConfig {
                frame_shift_ms: cfg.frame_shift_ms,
                ..GeneratorConfig::micro(cfg.n_mels)
            },
            inv,
            vec!["spk0".into(), "spk1".into()],
            3,
        )
        .unwrap();
        Fixture {
            cfg,
            utts,
            rec,
            generator,
        }
    })
}

fn nonempty_source(f: &Fixture) -> &SyntheticUtterance {
    f.utts
        .iter()
        .find(|u| {
            let mel = compute_log_mel(&u.wav, &f.cfg).unwrap();
            !recognize(&f.rec, &mel, DEFAULT_BEAM).unwrap().phonemes.is_empty()
        })
        .expect("at least one utterance decodes to phonemes")
}

#[test]
fn output_length_is_sum_of_quantized_durations() {
    let f = fixture();
    let u = nonempty_source(f);
    let c = convert(&u.wav, &u.wav, SpeakerId(0), &f.rec, &f.generator, &f.cfg).unwrap();
    assert_eq!(c.mel.num_frames(), c.durations.total());
    assert_eq!(c.durations.len(), c.phonemes.len());
    for (q, p) in c.durations.as_slice().iter().zip(&c.predicted_durations) {
        assert_eq!(*q, (p.round().max(1.0)) as usize);
    }
    assert_eq!(c.wav.sample_rate, f.cfg.sample_rate);
    assert_eq!(c.style.vector.len(), f.generator.config.style_dim);
}

#[test]
fn target_speaker_only_changes_the_generator_side() {
    let f = fixture();
    let u = nonempty_source(f);
    let a = convert(&u.wav, &u.wav, SpeakerId(0), &f.rec, &f.generator, &f.cfg).unwrap();
    let b = convert(&u.wav, &u.wav, SpeakerId(1), &f.rec, &f.generator, &f.cfg).unwrap();
    assert_eq!(a.phonemes, b.phonemes);
    assert_eq!(a.style, b.style);
    assert_eq!(
        f.generator.cbhg_encode(&a.phonemes).unwrap(),
        f.generator.cbhg_encode(&b.phonemes).unwrap()
    );
    assert_ne!(a.predicted_durations, b.predicted_durations);
    assert!(a.mel.frames.dim() != b.mel.frames.dim() || a.mel.frames != b.mel.frames);
}

#[test]
fn reference_does_not_touch_the_content_path() {
    let f = fixture();
    let u = nonempty_source(f);
    let other = f.utts.iter().find(|o| o.id != u.id).unwrap();
    let a = convert(&u.wav, &u.wav, SpeakerId(0), &f.rec, &f.generator, &f.cfg).unwrap();
    let b = convert(&u.wav, &other.wav, SpeakerId(0), &f.rec, &f.generator, &f.cfg).unwrap();
    assert_eq!(a.phonemes, b.phonemes);
    assert_ne!(a.style.vector, b.style.vector);
}

#[test]
fn unknown_speaker_and_mismatched_features_are_rejected() {
    let f = fixture();
    let u = nonempty_source(f);
    assert!(matches!(
        convert(&u.wav, &u.wav, SpeakerId(2), &f.rec, &f.generator, &f.cfg),
        Err(Error::InvalidInput(_))
    ));
    let wrong = FeatureConfig {
        n_mels: 20,
        ..f.cfg.clone()
    };
    assert!(matches!(
        convert(&u.wav, &u.wav, SpeakerId(0), &f.rec, &f.generator, &wrong),
        Err(Error::InvalidConfig(_))
    ));
}

fn records(dir: &Path, utts: &[SyntheticUtterance]) -> Vec<UtteranceRecord> {
    utts.iter()
        .map(|u| {
            let name = format!("{}.wav", u.id);
            crate::features::write_wav(&dir.join(&name), &u.wav).unwrap();
            UtteranceRecord {
                id: u.id.clone(),
                audio_path: name,
                speaker: u.speaker.clone(),
                phonemes: u.phonemes.clone(),
            }
        })
        .collect()
}

use std::path::Path;

#[test]
fn batch_records_failures_and_writes_outputs() {
    let f = fixture();
    let src = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let u = nonempty_source(f);
    let mut recs = records(src.path(), std::slice::from_ref(u));
    let mut second = recs[0].clone();
    second.id = "copy".into();
    recs.push(second);
    std::fs::write(src.path().join("broken.wav"), b"not a wav").unwrap();
    recs.push(UtteranceRecord {
        id: "broken".into(),
        audio_path: "broken.wav".into(),
        speaker: "spk0".into(),
        phonemes: u.phonemes.clone(),
    });
    let report = batch_convert(
        &recs,
        src.path(),
        &ReferencePolicy::Source,
        SpeakerId(1),
        &f.rec,
        &f.generator,
        &f.cfg,
        out.path(),
    )
    .unwrap();
    assert_eq!(report.rows.len(), 3);
    assert_eq!(report.failures(), 1);
    assert_eq!(report.rows[2].status, BatchStatus::Failed);
    for row in &report.rows[..2] {
        let mel = read_mel_binary(&out.path().join(format!("{}.mel", row.id))).unwrap();
        assert_eq!(mel.num_frames(), row.output_frames);
        let meta = read_meta(&out.path().join(format!("{}.meta", row.id))).unwrap();
        assert_eq!(meta.reference, row.id);
        assert_eq!(meta.speaker, "spk1");
        assert_eq!(meta.durations.iter().sum::<usize>(), row.output_frames);
        assert!(out.path().join(format!("{}.wav", row.id)).exists());
    }
    assert!(!out.path().join("broken.wav").exists());
    let csv = std::fs::read_to_string(out.path().join("report.csv")).unwrap();
    assert!(csv.starts_with(REPORT_CSV_HEADER));
    assert_eq!(csv.lines().count(), 4);

    let fixed = src.path().join(format!("{}.wav", u.id));
    let report = batch_convert(
        &recs[1..2],
        src.path(),
        &ReferencePolicy::Fixed(fixed.clone()),
        SpeakerId(0),
        &f.rec,
        &f.generator,
        &f.cfg,
        out.path(),
    )
    .unwrap();
    assert_eq!(report.failures(), 0);
    let meta = read_meta(&out.path().join("copy.meta")).unwrap();
    assert_eq!(meta.reference, fixed.display().to_string());

    assert!(matches!(
        batch_convert(
            &[],
            src.path(),
            &ReferencePolicy::Source,
            SpeakerId(0),
            &f.rec,
            &f.generator,
            &f.cfg,
            out.path()
        ),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn mel_file_and_meta_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mel = MelSpectrogram {
        frames: ndarray::Array2::from_shape_fn((5, 3), |(i, j)| i as f64 * 0.5 - j as f64),
        frame_shift_ms: 12.5,
        frame_length_ms: 50.0,
    };
    let p = dir.path().join("x.mel");
    write_mel_binary(&p, &mel).unwrap();
    assert_eq!(read_mel_binary(&p).unwrap(), mel);
    std::fs::write(&p, b"garbage").unwrap();
    assert!(read_mel_binary(&p).is_err());

    let meta = ConversionMeta {
        id: "u1".into(),
        speaker: "spk0".into(),
        reference: "u1".into(),
        phonemes: vec!["a".into(), "b".into()],
        durations: vec![3, 4],
        style: vec![0.25, -1.5],
        partial: false,
    };
    assert_eq!(ConversionMeta::parse(&meta.to_text()).unwrap(), meta);
}
