use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use stylevc::conversion::{self, write_mel_binary, ConversionMeta, ReferencePolicy};
use stylevc::corpus::synthetic::{synthesize_corpus, toy_inventory, write_corpus, SyntheticSpec};
use stylevc::corpus::{
    format_alignments, load_alignments, load_manifest, resolve_audio_path, AlignmentTable, PhonemeInventory,
    UtteranceRecord,
};
use stylevc::evaluation::{corpus_per, f0_similarity, per_rows_csv, plot_f0_overlay};
use stylevc::features::{compute_log_mel, extract_f0, interpolate_f0, read_wav, MelSpectrogram};
use stylevc::generator::{adapt_generator, train_generator, Generator, GeneratorLogRow, GeneratorUtterance, SpeakerId};
use stylevc::recognizer::{
    ctc_force_align, recognize, train_recognizer, Recognizer, RecognizerExample, RecognizerLogRow,
};

use crate::config::RunConfig;
use crate::{Command, RefPolicy};

pub const TRAIN_LOG: &str = "train_log.csv";

pub fn run(cmd: Command, cfg: RunConfig) -> Result<()> {
    match cmd {
        Command::SynthCorpus { out, utterances, speakers } => synth_corpus(&cfg, &out, utterances, speakers),
        Command::ExtractFeatures { manifest, inventory, out } => extract_features(&cfg, &manifest, inventory, &out),
        Command::Align { manifest, asr, out } => align(&cfg, &manifest, &asr, &out),
        Command::TrainAsr {
            manifest,
            inventory,
            init,
            out,
            ..
        } => train_asr(&cfg, &manifest, inventory, init, &out),
        Command::TrainTts {
            manifest,
            alignments,
            inventory,
            init,
            out,
            ..
        } => train_tts(&cfg, &manifest, alignments, inventory, init, &out),
        Command::Adapt {
            gen,
            manifest,
            alignments,
            speaker,
            out,
            ..
        } => adapt(&cfg, &gen, &manifest, alignments, &speaker, &out),
        Command::Convert {
            source,
            reference,
            speaker,
            asr,
            gen,
            out,
            beam,
        } => convert(&cfg, &source, &reference, &speaker, &asr, &gen, &out, beam),
        Command::BatchConvert {
            manifest,
            reference_policy,
            reference,
            speaker,
            asr,
            gen,
            out,
        } => batch_convert(&cfg, &manifest, reference_policy, reference, &speaker, &asr, &gen, &out),
        Command::EvalPer {
            hyp,
            r#ref,
            asr,
            manifest,
            out,
        } => eval_per(&cfg, hyp, r#ref, asr, manifest, out),
        Command::PlotF0 { contours, out } => plot_f0(&cfg, &contours, &out),
        Command::ServeTests { store, addr } => serve_tests(&cfg, &store, addr),
    }
}

fn manifest_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn beside_manifest(manifest: &Path, given: Option<PathBuf>, name: &str) -> PathBuf {
    given.unwrap_or_else(|| manifest_dir(manifest).join(name))
}

fn read_manifest(manifest: &Path, inventory: &PhonemeInventory) -> Result<Vec<UtteranceRecord>> {
    let records = load_manifest(manifest, inventory)?;
    if records.is_empty() {
        bail!("manifest {} has no utterances", manifest.display());
    }
    Ok(records)
}

fn log_mel(cfg: &RunConfig, base: &Path, r: &UtteranceRecord) -> Result<MelSpectrogram> {
    let path = resolve_audio_path(base, &r.audio_path);
    let wav = read_wav(&path, cfg.features.sample_rate).with_context(|| format!("utterance {}", r.id))?;
    Ok(compute_log_mel(&wav, &cfg.features)?)
}

fn mels(cfg: &RunConfig, manifest: &Path, records: &[UtteranceRecord]) -> Result<Vec<MelSpectrogram>> {
    let base = manifest_dir(manifest);
    records.iter().map(|r| log_mel(cfg, &base, r)).collect()
}

struct CsvLog {
    out: BufWriter<File>,
}

impl CsvLog {
    fn create(path: &Path, header: &str) -> Result<Self> {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut out = BufWriter::new(f);
        writeln!(out, "{header}")?;
        Ok(Self { out })
    }

    fn row(&mut self, line: String) {
        // a failed log write must not abort training
        if let Err(e) = writeln!(self.out, "{line}") {
            tracing::warn!(error = %e, "could not write training log row");
        }
    }

    fn finish(mut self) -> Result<()> {
        Ok(self.out.flush()?)
    }
}

fn synth_corpus(cfg: &RunConfig, out: &Path, utterances: Option<usize>, speakers: Option<usize>) -> Result<()> {
    let spec = SyntheticSpec {
        n_utterances: utterances.unwrap_or(cfg.corpus.utterances),
        n_speakers: speakers.unwrap_or(cfg.corpus.speakers),
        seed: cfg.seed,
        ..Default::default()
    };
    if spec.n_utterances == 0 || spec.n_speakers == 0 {
        bail!("need at least one utterance and one speaker");
    }
    let inv = toy_inventory();
    let utts = synthesize_corpus(&spec, &inv, &cfg.features);
    write_corpus(out, &utts, &inv)?;
    cfg.dump_in(out)?;
    tracing::info!(utterances = utts.len(), dir = %out.display(), "synthetic corpus written");
    Ok(())
}

fn load_inventory(manifest: &Path, given: Option<PathBuf>) -> Result<PhonemeInventory> {
    let p = beside_manifest(manifest, given, "inventory.txt");
    PhonemeInventory::load(&p).with_context(|| format!("loading inventory {}", p.display()))
}

fn extract_features(cfg: &RunConfig, manifest: &Path, inventory: Option<PathBuf>, out: &Path) -> Result<()> {
    let inv = load_inventory(manifest, inventory)?;
    let records = read_manifest(manifest, &inv)?;
    std::fs::create_dir_all(out)?;
    let base = manifest_dir(manifest);
    for r in &records {
        let wav = read_wav(&resolve_audio_path(&base, &r.audio_path), cfg.features.sample_rate)
            .with_context(|| format!("utterance {}", r.id))?;
        let mel = compute_log_mel(&wav, &cfg.features)?;
        write_mel_binary(&out.join(format!("{}.mel", r.id)), &mel)?;
        let mut f0 = extract_f0(&wav, &cfg.features)?;
        f0.truncate(mel.num_frames());
        let mut csv = String::from("frame,time_s,f0_hz,voiced\n");
        for (t, (v, voiced)) in f0.values.iter().zip(&f0.voiced).enumerate() {
            csv.push_str(&format!("{t},{:.4},{v:.3},{}\n", t as f64 * f0.frame_shift_ms / 1000.0, u8::from(*voiced)));
        }
        std::fs::write(out.join(format!("{}.f0.csv", r.id)), csv)?;
    }
    cfg.dump_in(out)?;
    tracing::info!(utterances = records.len(), "features extracted");
    Ok(())
}

fn align(cfg: &RunConfig, manifest: &Path, asr: &Path, out: &Path) -> Result<()> {
    let rec = Recognizer::load(asr)?;
    let records = read_manifest(manifest, &rec.inventory)?;
    let mels = mels(cfg, manifest, &records)?;
    let mut table = AlignmentTable::new();
    for (r, mel) in records.iter().zip(&mels) {
        let d = ctc_force_align(&rec, mel, &r.phonemes).with_context(|| format!("aligning {}", r.id))?;
        table.insert(r.id.clone(), d);
    }
    std::fs::write(out, format_alignments(&table)).with_context(|| format!("writing {}", out.display()))?;
    cfg.dump_beside(out)?;
    tracing::info!(utterances = table.len(), "alignments written");
    Ok(())
}

fn train_asr(
    cfg: &RunConfig,
    manifest: &Path,
    inventory: Option<PathBuf>,
    init: Option<PathBuf>,
    out: &Path,
) -> Result<()> {
    let mut model = match init {
        Some(dir) => Recognizer::load(&dir)?,
        None => Recognizer::new(cfg.recognizer.clone(), load_inventory(manifest, inventory)?, cfg.seed)?,
    };
    let records = read_manifest(manifest, &model.inventory)?;
    let data: Vec<RecognizerExample> = records
        .iter()
        .zip(mels(cfg, manifest, &records)?)
        .map(|(r, m)| RecognizerExample {
            id: r.id.clone(),
            mel: m.frames,
            phonemes: r.phonemes.0.clone(),
        })
        .collect();
    std::fs::create_dir_all(out)?;
    cfg.dump_in(out)?;
    let mut log = CsvLog::create(&out.join(TRAIN_LOG), RecognizerLogRow::CSV_HEADER)?;
    let every = (cfg.asr_train.steps / 20).max(1);
    train_recognizer(&mut model, &data, &cfg.asr_train, |row| {
        log.row(row.to_csv());
        if row.step % every == 0 {
            tracing::info!(step = row.step, total = row.total, ctc = row.ctc_term, att = row.att_term, "train-asr");
        }
    })?;
    log.finish()?;
    model.save(out)?;
    tracing::info!(steps = model.step, dir = %out.display(), "recognizer checkpoint saved");
    Ok(())
}

fn generator_data(
    cfg: &RunConfig,
    manifest: &Path,
    inventory: &PhonemeInventory,
    alignments: &Path,
    speaker_override: Option<&str>,
) -> Result<(Vec<GeneratorUtterance>, AlignmentTable)> {
    let records = read_manifest(manifest, inventory)?;
    let mels = mels(cfg, manifest, &records)?;
    let frames: HashMap<String, usize> = records
        .iter()
        .zip(&mels)
        .map(|(r, m)| (r.id.clone(), m.num_frames()))
        .collect();
    let table = load_alignments(alignments, &records, &frames)?;
    let data = records
        .iter()
        .zip(mels)
        .map(|(r, m)| GeneratorUtterance {
            id: r.id.clone(),
            mel: m.frames,
            phonemes: r.phonemes.0.clone(),
            speaker: speaker_override.unwrap_or(&r.speaker).to_string(),
        })
        .collect();
    Ok((data, table))
}

fn train_tts(
    cfg: &RunConfig,
    manifest: &Path,
    alignments: Option<PathBuf>,
    inventory: Option<PathBuf>,
    init: Option<PathBuf>,
    out: &Path,
) -> Result<()> {
    let alignments = beside_manifest(manifest, alignments, "alignments.txt");
    let mut model = match init {
        Some(dir) => Generator::load(&dir)?,
        None => {
            let inv = load_inventory(manifest, inventory)?;
            let records = read_manifest(manifest, &inv)?;
            let mut speakers: Vec<String> = records.iter().map(|r| r.speaker.clone()).collect();
            speakers.sort();
            speakers.dedup();
            Generator::new(cfg.generator.clone(), inv, speakers, cfg.seed)?
        }
    };
    let (data, table) = generator_data(cfg, manifest, &model.inventory, &alignments, None)?;
    std::fs::create_dir_all(out)?;
    cfg.dump_in(out)?;
    let mut log = CsvLog::create(&out.join(TRAIN_LOG), GeneratorLogRow::CSV_HEADER)?;
    let every = (cfg.tts_train.steps / 20).max(1);
    train_generator(&mut model, &data, &table, &cfg.tts_train, |row| {
        log.row(row.to_csv());
        if row.step % every == 0 {
            tracing::info!(step = row.step, total = row.total, recon = row.recon_term, rhythm = row.rhythm_term, "train-tts");
        }
    })?;
    log.finish()?;
    model.save(out)?;
    tracing::info!(steps = model.step, dir = %out.display(), "generator checkpoint saved");
    Ok(())
}

fn adapt(
    cfg: &RunConfig,
    gen: &Path,
    manifest: &Path,
    alignments: Option<PathBuf>,
    speaker: &str,
    out: &Path,
) -> Result<()> {
    let alignments = beside_manifest(manifest, alignments, "alignments.txt");
    let mut model = Generator::load(gen)?;
    let (data, table) = generator_data(cfg, manifest, &model.inventory, &alignments, Some(speaker))?;
    std::fs::create_dir_all(out)?;
    cfg.dump_in(out)?;
    let mut log = CsvLog::create(&out.join(TRAIN_LOG), GeneratorLogRow::CSV_HEADER)?;
    let id = adapt_generator(&mut model, speaker, &data, &table, &cfg.tts_train, |row| log.row(row.to_csv()))?;
    log.finish()?;
    model.save(out)?;
    tracing::info!(speaker, index = id.0, dir = %out.display(), "adapted generator saved");
    Ok(())
}

fn speaker_arg(generator: &Generator, s: &str) -> Result<SpeakerId> {
    if let Some(id) = generator.speaker_id(s) {
        return Ok(id);
    }
    match s.parse::<usize>() {
        Ok(i) if i < generator.speakers.len() => Ok(SpeakerId(i)),
        _ => Err(anyhow!(
            "unknown speaker {s:?}; the checkpoint has {}",
            generator.speakers.join(", ")
        )),
    }
}

fn load_pair(asr: &Path, gen: &Path) -> Result<(Recognizer, Generator)> {
    let rec = Recognizer::load(asr)?;
    let generator = Generator::load_with_inventory(gen, &rec.inventory)?;
    Ok((rec, generator))
}

#[allow(clippy::too_many_arguments)]
fn convert(
    cfg: &RunConfig,
    source: &Path,
    reference: &Path,
    speaker: &str,
    asr: &Path,
    gen: &Path,
    out: &Path,
    beam: Option<usize>,
) -> Result<()> {
    let (rec, generator) = load_pair(asr, gen)?;
    let target = speaker_arg(&generator, speaker)?;
    let src = read_wav(source, cfg.features.sample_rate)?;
    let refw = read_wav(reference, cfg.features.sample_rate)?;
    let beam = beam.unwrap_or(cfg.conversion.beam);
    let c = conversion::convert_with_beam(&src, &refw, target, &rec, &generator, &cfg.features, beam)?;
    std::fs::create_dir_all(out)?;
    let id = source.file_stem().and_then(|s| s.to_str()).unwrap_or("converted").to_string();
    stylevc::features::write_wav(&out.join(format!("{id}.wav")), &c.wav)?;
    write_mel_binary(&out.join(format!("{id}.mel")), &c.mel)?;
    let meta = ConversionMeta {
        id: id.clone(),
        speaker: generator.speakers[target.0].clone(),
        reference: reference.display().to_string(),
        phonemes: rec.inventory.decode(&c.phonemes).into_iter().map(String::from).collect(),
        durations: c.durations.as_slice().to_vec(),
        style: c.style.vector.clone(),
        partial: c.partial,
    };
    std::fs::write(out.join(format!("{id}.meta")), meta.to_text())?;
    cfg.dump_in(out)?;
    if c.partial {
        tracing::warn!("recognition hit the length limit; output is based on a partial hypothesis");
    }
    println!(
        "{id}: {} phonemes, {} frames -> {}",
        c.phonemes.len(),
        c.mel.num_frames(),
        out.join(format!("{id}.wav")).display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn batch_convert(
    cfg: &RunConfig,
    manifest: &Path,
    policy: RefPolicy,
    reference: Option<PathBuf>,
    speaker: &str,
    asr: &Path,
    gen: &Path,
    out: &Path,
) -> Result<()> {
    let (rec, generator) = load_pair(asr, gen)?;
    let target = speaker_arg(&generator, speaker)?;
    let records = load_manifest(manifest, &rec.inventory)?;
    let policy = match (policy, reference) {
        (RefPolicy::Source, None) => ReferencePolicy::Source,
        (RefPolicy::Source, Some(_)) => bail!("--reference is only used with --reference-policy fixed"),
        (RefPolicy::Fixed, Some(p)) => ReferencePolicy::Fixed(p),
        (RefPolicy::Fixed, None) => bail!("--reference-policy fixed needs --reference"),
    };
    let report = conversion::batch_convert(
        &records,
        &manifest_dir(manifest),
        &policy,
        target,
        &rec,
        &generator,
        &cfg.features,
        out,
    )?;
    cfg.dump_in(out)?;
    println!(
        "{} converted, {} failed; report at {}",
        report.rows.len() - report.failures(),
        report.failures(),
        out.join("report.csv").display()
    );
    Ok(())
}

/// `id,phonemes` rows, phonemes space separated; a leading header is skipped.
fn read_phoneme_csv(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (n == 0 && line.trim() == "id,phonemes") {
            continue;
        }
        let (id, ph) = line
            .split_once(',')
            .ok_or_else(|| anyhow!("{}:{}: expected id,phonemes", path.display(), n + 1))?;
        let syms = ph.split_whitespace().map(String::from).collect();
        if out.insert(id.trim().to_string(), syms).is_some() {
            bail!("{}: duplicate id {}", path.display(), id.trim());
        }
    }
    Ok(out)
}

fn eval_per(
    cfg: &RunConfig,
    hyp: Option<PathBuf>,
    reference: Option<PathBuf>,
    asr: Option<PathBuf>,
    manifest: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let (hyps, refs) = match (hyp, reference, asr, manifest) {
        (Some(h), Some(r), None, None) => (read_phoneme_csv(&h)?, read_phoneme_csv(&r)?),
        (None, None, Some(asr), Some(m)) => {
            let rec = Recognizer::load(&asr)?;
            let records = read_manifest(&m, &rec.inventory)?;
            let mut hyps = BTreeMap::new();
            let mut refs = BTreeMap::new();
            for (r, mel) in records.iter().zip(mels(cfg, &m, &records)?) {
                let out = recognize(&rec, &mel, cfg.conversion.beam)?;
                let sym = |s: &stylevc::corpus::PhonemeSequence| {
                    rec.inventory.decode(s).into_iter().map(String::from).collect::<Vec<_>>()
                };
                hyps.insert(r.id.clone(), sym(&out.phonemes));
                refs.insert(r.id.clone(), sym(&r.phonemes));
            }
            (hyps, refs)
        }
        (Some(h), None, None, Some(m)) => {
            let inv = load_inventory(&m, None)?;
            let refs = read_manifest(&m, &inv)?
                .into_iter()
                .map(|r| (r.id.clone(), inv.decode(&r.phonemes).into_iter().map(String::from).collect()))
                .collect();
            (read_phoneme_csv(&h)?, refs)
        }
        _ => bail!("give --hyp with --ref (or --manifest), or --asr with --manifest"),
    };
    let (pooled, rows) = corpus_per(&hyps, &refs)?;
    println!("Sub\tDel\tIns\tPER");
    println!("{}", pooled.table_row());
    println!("utterances {}, reference phonemes {}", rows.len(), pooled.ref_len);
    if let Some(out) = out {
        std::fs::write(&out, per_rows_csv(&rows)).with_context(|| format!("writing {}", out.display()))?;
        cfg.dump_beside(&out)?;
    }
    Ok(())
}

fn plot_f0(cfg: &RunConfig, specs: &[String], out: &Path) -> Result<()> {
    let mut contours = Vec::new();
    for s in specs {
        let (label, path) = s
            .split_once('=')
            .ok_or_else(|| anyhow!("--contour expects LABEL=WAV, got {s:?}"))?;
        let wav = read_wav(Path::new(path), cfg.features.sample_rate)?;
        let f0 = interpolate_f0(&extract_f0(&wav, &cfg.features)?).with_context(|| format!("contour {label}"))?;
        contours.push((label.to_string(), f0));
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let csv = plot_f0_overlay(&contours, out)?;
    cfg.dump_beside(out)?;
    println!("wrote {} and {}", out.display(), csv.display());
    let (first, rest) = contours.split_first().expect("at least one contour");
    for (label, c) in rest {
        match f0_similarity(&first.1, c) {
            Ok(s) => println!("{label} vs {}: rmse {:.2} Hz, correlation {:.3}", first.0, s.rmse_hz, s.correlation),
            Err(e) => println!("{label} vs {}: {e}", first.0),
        }
    }
    Ok(())
}

fn serve_tests(cfg: &RunConfig, store: &Path, addr: std::net::SocketAddr) -> Result<()> {
    let svc = Arc::new(stylevc_listening::ListeningService::open(store, cfg.seed)?);
    cfg.dump_in(store)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(stylevc_listening::serve(svc, addr))?;
    Ok(())
}
