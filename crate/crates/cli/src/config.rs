use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use stylevc::features::FeatureConfig;
use stylevc::generator::{GeneratorConfig, GeneratorSchedule};
use stylevc::recognizer::{RecognizerConfig, RecognizerSchedule};
use toml::{Table, Value};

pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConversionSettings {
    pub beam: usize,
}

impl Default for ConversionSettings {
    fn default() -> Self {
        Self {
            beam: stylevc::recognizer::DEFAULT_BEAM,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSettings {
    pub utterances: usize,
    pub speakers: usize,
}

impl Default for CorpusSettings {
    fn default() -> Self {
        Self {
            utterances: 20,
            speakers: 2,
        }
    }
}

/// Every tunable of a run. Model mel width and frame timing follow
/// `features`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Model size: `full`, `toy` or `micro`.
    pub preset: String,
    pub features: FeatureConfig,
    pub recognizer: RecognizerConfig,
    pub generator: GeneratorConfig,
    pub asr_train: RecognizerSchedule,
    pub tts_train: GeneratorSchedule,
    pub conversion: ConversionSettings,
    pub corpus: CorpusSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::with_preset("toy").expect("toy preset exists")
    }
}

impl RunConfig {
    pub fn with_preset(preset: &str) -> Result<Self> {
        let features = FeatureConfig::default();
        let (recognizer, generator) = match preset {
            "full" => (RecognizerConfig::default(), GeneratorConfig::full()),
            "toy" => (RecognizerConfig::toy(), GeneratorConfig::toy()),
            "micro" => (
                RecognizerConfig::micro(features.n_mels),
                GeneratorConfig::micro(features.n_mels),
            ),
            other => bail!("unknown preset {other:?} (expected full, toy or micro)"),
        };
        Ok(Self {
            seed: 0,
            preset: preset.to_string(),
            features,
            recognizer,
            generator,
            asr_train: RecognizerSchedule::default(),
            tts_train: GeneratorSchedule::default(),
            conversion: ConversionSettings::default(),
            corpus: CorpusSettings::default(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Writes the configuration as `effective_config.toml` inside `dir`.
    pub fn dump_in(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let p = dir.join(EFFECTIVE_CONFIG);
        std::fs::write(&p, self.to_toml()).with_context(|| format!("writing {}", p.display()))
    }

    /// Writes the configuration next to an output file as `<file>.config.toml`.
    pub fn dump_beside(&self, file: &Path) -> Result<()> {
        let mut name = file.file_name().unwrap_or_default().to_os_string();
        name.push(".config.toml");
        let p = file.with_file_name(name);
        std::fs::write(&p, self.to_toml()).with_context(|| format!("writing {}", p.display()))
    }
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_scalar(raw: &str) -> Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<Table>(&wrapped) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// `a.b.c=value` as a nested table.
fn dotted(assignment: &str) -> Result<Table> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("--set expects key=value, got {assignment:?}"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("invalid config key {key:?}");
    }
    let mut value = parse_scalar(raw.trim());
    for p in parts.iter().rev() {
        let mut t = Table::new();
        t.insert(p.to_string(), value);
        value = Value::Table(t);
    }
    match value {
        Value::Table(t) => Ok(t),
        _ => unreachable!(),
    }
}

/// Flag-level overrides shared by every subcommand.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub set: Vec<String>,
    pub steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
}

/// Defaults for the chosen preset, then the config file, then `--set`
/// assignments, then dedicated flags.
pub fn resolve(file: Option<&Path>, ov: &Overrides) -> Result<RunConfig> {
    let file_table = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<Table>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => Table::new(),
    };
    let set_tables = ov.set.iter().map(|s| dotted(s)).collect::<Result<Vec<_>>>()?;
    let preset = ov
        .preset
        .clone()
        .or_else(|| {
            set_tables
                .iter()
                .rev()
                .find_map(|t| t.get("preset").and_then(|v| v.as_str()).map(String::from))
        })
        .or_else(|| file_table.get("preset").and_then(|v| v.as_str()).map(String::from))
        .unwrap_or_else(|| "toy".into());
    let mut table = Table::try_from(RunConfig::with_preset(&preset)?).expect("config is a table");
    merge(&mut table, file_table);
    for t in set_tables {
        merge(&mut table, t);
    }
    let mut cfg: RunConfig = Value::Table(table).try_into().context("invalid configuration")?;
    cfg.preset = preset;
    if let Some(s) = ov.seed {
        cfg.seed = s;
    }
    if let Some(s) = ov.steps {
        cfg.asr_train.steps = s;
        cfg.tts_train.steps = s;
    }
    if let Some(b) = ov.batch_size {
        cfg.asr_train.batch_size = b;
        cfg.tts_train.batch_size = b;
    }
    if let Some(lr) = ov.lr {
        cfg.asr_train.lr.peak_lr = lr;
        cfg.tts_train.lr.peak_lr = lr;
    }
    cfg.asr_train.seed = cfg.seed;
    cfg.tts_train.seed = cfg.seed;
    cfg.recognizer.n_mels = cfg.features.n_mels;
    cfg.generator.n_mels = cfg.features.n_mels;
    cfg.generator.frame_shift_ms = cfg.features.frame_shift_ms;
    cfg.generator.frame_length_ms = cfg.features.frame_length_ms;
    cfg.features.validate()?;
    cfg.recognizer.validate()?;
    cfg.generator.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn layering_order() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        std::fs::write(&file, "seed = 3\n[asr_train]\nsteps = 50\nbatch_size = 2\n[features]\nn_mels = 40\n").unwrap();
        let ov = Overrides {
            set: vec!["asr_train.batch_size=7".into(), "conversion.beam=2".into()],
            steps: Some(9),
            ..Default::default()
        };
        let cfg = resolve(Some(&file), &ov).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.asr_train.steps, 9);
        assert_eq!(cfg.asr_train.batch_size, 7);
        assert_eq!(cfg.conversion.beam, 2);
        assert_eq!(cfg.recognizer.n_mels, 40);
        assert_eq!(cfg.generator.n_mels, 40);
        assert_eq!(cfg.asr_train.seed, 3);
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        let again = resolve(Some(&file), &Overrides { seed: Some(5), ..ov }).unwrap();
        assert_eq!(again.seed, 5);
    }

    #[test]
    fn preset_and_bad_keys() {
        let cfg = resolve(None, &Overrides { set: vec!["preset=micro".into()], ..Default::default() }).unwrap();
        assert_eq!(cfg.recognizer.model_width, RecognizerConfig::micro(80).model_width);
        assert!(resolve(None, &Overrides { set: vec!["nonsense.key=1".into()], ..Default::default() }).is_err());
        assert!(resolve(None, &Overrides { preset: Some("huge".into()), ..Default::default() }).is_err());
        assert!(resolve(None, &Overrides { set: vec!["noequals".into()], ..Default::default() }).is_err());
    }

    proptest! {
        #[test]
        fn set_values_survive_the_dump(seed in any::<u32>(), beam in 1usize..64, steps in 0usize..10_000) {
            let ov = Overrides {
                set: vec![format!("seed={seed}"), format!("conversion.beam={beam}")],
                steps: Some(steps),
                ..Default::default()
            };
            let cfg = resolve(None, &ov).unwrap();
            let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
            prop_assert_eq!(back.seed, u64::from(seed));
            prop_assert_eq!(back.conversion.beam, beam);
            prop_assert_eq!(back.tts_train.steps, steps);
            prop_assert_eq!(back, cfg);
        }
    }
}
