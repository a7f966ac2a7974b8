use std::path::Path;
use std::process::{Command, Output};

const SUBCOMMANDS: [&str; 11] = [
    "synth-corpus",
    "extract-features",
    "align",
    "train-asr",
    "train-tts",
    "adapt",
    "convert",
    "batch-convert",
    "eval-per",
    "plot-f0",
    "serve-tests",
];

fn stylevc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stylevc"))
        .args(args)
        .env("NO_COLOR", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = stylevc(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Micro corpus with 4 utterances under `dir/corpus`.
fn corpus(dir: &Path) -> std::path::PathBuf {
    let c = dir.join("corpus");
    ok(&["--preset", "micro", "--seed", "2", "synth-corpus", "--out", s(&c), "--utterances", "4"]);
    c
}

#[test]
fn every_subcommand_has_help() {
    for sub in SUBCOMMANDS {
        let out = ok(&[sub, "--help"]);
        assert!(out.contains("Usage: stylevc"), "{sub}: {out}");
        assert!(out.contains("--seed") && out.contains("--config"), "{sub} lacks shared options");
    }
    let top = ok(&["--help"]);
    for sub in SUBCOMMANDS {
        assert!(top.contains(sub), "{sub} missing from top-level help");
    }
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(stylevc(&["convert", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(stylevc(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(stylevc(&["eval-per", "--hyp", "h.csv", "--asr", "a"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = stylevc(&["eval-per", "--hyp", s(&dir.path().join("missing.csv")), "--ref", "x.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let out = stylevc(&["--set", "features.n_mels=0", "synth-corpus", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let out = stylevc(&["--preset", "enormous", "synth-corpus", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_per_on_identical_files_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("ref.csv");
    std::fs::write(&f, "id,phonemes\nu1,a b c\nu2,s i l\n").unwrap();
    let out = ok(&["eval-per", "--hyp", s(&f), "--ref", s(&f)]);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("Sub\tDel\tIns\tPER"));
    assert_eq!(lines.next(), Some("0.0\t0.0\t0.0\t0.0"));
}

#[test]
fn eval_per_counts_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (h, r, rows) = (dir.path().join("h.csv"), dir.path().join("r.csv"), dir.path().join("rows.csv"));
    // one substitution, one deletion, one insertion over 10 reference phonemes
    std::fs::write(&r, "id,phonemes\nu1,a b c d e\nu2,f g h i j\n").unwrap();
    std::fs::write(&h, "u2,f g x i j\nu1,a c d e e2\n").unwrap();
    let out = ok(&["eval-per", "--hyp", s(&h), "--ref", s(&r), "--out", s(&rows)]);
    assert_eq!(out.lines().nth(1), Some("10.0\t10.0\t10.0\t30.0"));
    let csv = std::fs::read_to_string(&rows).unwrap();
    assert!(csv.starts_with("id,sub,del,ins,ref_len\n"));
    assert!(csv.contains("u2,1,0,0,5"));
    assert!(dir.path().join("rows.csv.config.toml").exists());
    std::fs::write(&h, "u1,a b c d e\n").unwrap();
    assert_eq!(stylevc(&["eval-per", "--hyp", s(&h), "--ref", s(&r)]).status.code(), Some(1));
}

#[test]
fn effective_config_reflects_layering() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 11\n[corpus]\nutterances = 5\n[conversion]\nbeam = 3\n").unwrap();
    let out = dir.path().join("c");
    ok(&[
        "--config",
        s(&cfg),
        "--set",
        "conversion.beam=2",
        "--set",
        "corpus.speakers=3",
        "--preset",
        "micro",
        "synth-corpus",
        "--out",
        s(&out),
    ]);
    let eff: toml::Table = toml::from_str(&std::fs::read_to_string(out.join("effective_config.toml")).unwrap()).unwrap();
    assert_eq!(eff["seed"].as_integer(), Some(11));
    assert_eq!(eff["preset"].as_str(), Some("micro"));
    assert_eq!(eff["conversion"]["beam"].as_integer(), Some(2));
    assert_eq!(eff["corpus"]["utterances"].as_integer(), Some(5));
    let manifest = std::fs::read_to_string(out.join("manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 5);
    assert!(manifest.contains("spk2"));
}

#[test]
fn zero_step_training_writes_an_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let asr = dir.path().join("asr");
    ok(&["--preset", "micro", "train-asr", "--manifest", s(&c.join("manifest.tsv")), "--out", s(&asr), "--steps", "0"]);
    for f in ["checkpoint.toml", "effective_config.toml", "train_log.csv"] {
        assert!(asr.join(f).exists(), "{f} missing");
    }
    let log = std::fs::read_to_string(asr.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1);
    let gen = dir.path().join("gen");
    ok(&["--preset", "micro", "train-tts", "--manifest", s(&c.join("manifest.tsv")), "--out", s(&gen), "--steps", "0"]);
    assert!(gen.join("checkpoint.toml").exists());
}

#[test]
fn same_seed_gives_identical_training_logs() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let m = c.join("manifest.tsv");
    let logs: Vec<String> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            ok(&["--preset", "micro", "--seed", "9", "train-asr", "--manifest", s(&m), "--out", s(&out), "--steps", "10"]);
            std::fs::read_to_string(out.join("train_log.csv")).unwrap()
        })
        .collect();
    assert_eq!(logs[0].lines().count(), 11);
    assert_eq!(logs[0], logs[1]);
    let other = dir.path().join("c");
    ok(&["--preset", "micro", "--seed", "10", "train-asr", "--manifest", s(&m), "--out", s(&other), "--steps", "10"]);
    assert_ne!(std::fs::read_to_string(other.join("train_log.csv")).unwrap(), logs[0]);
}

#[test]
fn pipeline_from_corpus_to_conversion() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let m = c.join("manifest.tsv");
    let (asr, gen) = (dir.path().join("asr"), dir.path().join("gen"));
    ok(&["--preset", "micro", "train-asr", "--manifest", s(&m), "--out", s(&asr), "--steps", "3"]);
    let al = dir.path().join("al.txt");
    ok(&["--preset", "micro", "align", "--manifest", s(&m), "--asr", s(&asr), "--out", s(&al)]);
    assert_eq!(std::fs::read_to_string(&al).unwrap().lines().count(), 4);
    ok(&["--preset", "micro", "train-tts", "--manifest", s(&m), "--alignments", s(&al), "--out", s(&gen), "--steps", "2"]);

    let wav = c.join("wav/utt0000.wav");
    let out = dir.path().join("conv");
    ok(&[
        "--preset", "micro", "convert", "--source", s(&wav), "--reference", s(&wav), "--speaker", "spk1", "--asr",
        s(&asr), "--gen", s(&gen), "--out", s(&out),
    ]);
    for f in ["utt0000.wav", "utt0000.mel", "utt0000.meta", "effective_config.toml"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let meta = stylevc::conversion::read_meta(&out.join("utt0000.meta")).unwrap();
    assert_eq!(meta.speaker, "spk1");
    let mel = stylevc::conversion::read_mel_binary(&out.join("utt0000.mel")).unwrap();
    assert_eq!(mel.num_frames(), meta.durations.iter().sum::<usize>());

    let bad = stylevc(&[
        "--preset", "micro", "convert", "--source", s(&wav), "--reference", s(&wav), "--speaker", "nobody", "--asr",
        s(&asr), "--gen", s(&gen), "--out", s(&out),
    ]);
    assert_eq!(bad.status.code(), Some(1));

    let batch = dir.path().join("batch");
    ok(&[
        "--preset", "micro", "batch-convert", "--manifest", s(&m), "--speaker", "0", "--asr", s(&asr), "--gen", s(&gen),
        "--out", s(&batch),
    ]);
    let report = std::fs::read_to_string(batch.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 5);
    assert!(report.starts_with("id,status,output_frames,wall_time,error\n"));

    let svg = dir.path().join("plot/f0.svg");
    let other = c.join("wav/utt0001.wav");
    let printed = ok(&[
        "--preset", "micro", "plot-f0", "--contour", &format!("source={}", s(&wav)), "--contour",
        &format!("other={}", s(&other)), "--out", s(&svg),
    ]);
    assert!(svg.exists() && svg.with_extension("csv").exists());
    assert!(printed.contains("other vs source"));

    let feats = dir.path().join("feats");
    ok(&["--preset", "micro", "extract-features", "--manifest", s(&m), "--out", s(&feats)]);
    assert!(feats.join("utt0003.mel").exists() && feats.join("utt0003.f0.csv").exists());
}
