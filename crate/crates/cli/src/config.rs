//! Declarative run configuration: one TOML file covering every subcommand,
//! with effective defaults printable via `--print-config`. Unknown keys are
//! rejected so typos fail loudly before any work starts.

use std::path::{Path, PathBuf};

use exrec_core::eval::SynthConfig;
use exrec_core::filter::Orientation;
use exrec_core::hippo::HoConfig;
use exrec_core::mastery::MasteryConfig;
use exrec_core::progress::ProgressConfig;
use exrec_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Global seed; every module derives its own stream from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub paths: PathsSection,
    pub synth: SynthSection,
    pub progress: ProgressSection,
    pub mastery: MasterySection,
    pub filter: FilterSection,
    pub ho: HoSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("out"),
            paths: PathsSection::default(),
            synth: SynthSection::default(),
            progress: ProgressSection::default(),
            mastery: MasterySection::default(),
            filter: FilterSection::default(),
            ho: HoSection::default(),
        }
    }
}

/// File names, resolved relative to `out_dir` unless absolute.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub bank: PathBuf,
    pub log: PathBuf,
    pub truth: PathBuf,
    pub progress_checkpoint: PathBuf,
    pub mastery_checkpoint: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            bank: PathBuf::from("bank.csv"),
            log: PathBuf::from("log.csv"),
            truth: PathBuf::from("truth.csv"),
            progress_checkpoint: PathBuf::from("progress.ckpt"),
            mastery_checkpoint: PathBuf::from("mastery.ckpt"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub concepts: usize,
    pub exercises: usize,
    pub students: usize,
    pub steps: usize,
    pub max_kc: usize,
    pub mastery_low: f64,
    pub mastery_high: f64,
    pub learn_increment: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        SynthSection {
            concepts: d.concepts,
            exercises: d.exercises,
            students: d.students,
            steps: d.steps,
            max_kc: d.max_kc,
            mastery_low: d.mastery_low,
            mastery_high: d.mastery_high,
            learn_increment: d.learn_increment,
        }
    }
}

impl SynthSection {
    pub fn to_core(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            concepts: self.concepts,
            exercises: self.exercises,
            students: self.students,
            steps: self.steps,
            max_kc: self.max_kc,
            mastery_low: self.mastery_low,
            mastery_high: self.mastery_high,
            learn_increment: self.learn_increment,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProgressSection {
    pub embed_dim: usize,
    pub window: usize,
    pub hidden: usize,
    pub layers: usize,
    pub neg_samples: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for ProgressSection {
    fn default() -> Self {
        let d = ProgressConfig::default();
        ProgressSection {
            embed_dim: d.embed_dim,
            window: d.window,
            hidden: d.hidden,
            layers: d.layers,
            neg_samples: d.neg_samples,
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            epochs: 5,
        }
    }
}

impl ProgressSection {
    pub fn to_core(&self) -> ProgressConfig {
        ProgressConfig {
            embed_dim: self.embed_dim,
            window: self.window,
            hidden: self.hidden,
            layers: self.layers,
            neg_samples: self.neg_samples,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MasterySection {
    pub embed_dim: usize,
    pub slots: usize,
    pub hidden: usize,
    pub window: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for MasterySection {
    fn default() -> Self {
        let d = MasteryConfig::default();
        MasterySection {
            embed_dim: d.embed_dim,
            slots: d.slots,
            hidden: d.hidden,
            window: d.window,
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            epochs: 10,
        }
    }
}

impl MasterySection {
    pub fn to_core(&self) -> MasteryConfig {
        MasteryConfig {
            embed_dim: self.embed_dim,
            slots: self.slots,
            hidden: self.hidden,
            window: self.window,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    /// Candidate set size surviving the Ω filter.
    pub keep: usize,
    /// "lowest" or "highest": which end of the Ω ranking is best.
    pub orientation: String,
    /// Desired difficulty level δ for the accuracy metric.
    pub target_difficulty: f64,
    pub difficulty_tolerance: f64,
    pub mastery_threshold: f64,
}

impl Default for FilterSection {
    fn default() -> Self {
        FilterSection {
            keep: 200,
            orientation: "lowest".into(),
            target_difficulty: 0.5,
            difficulty_tolerance: exrec_core::eval::DEFAULT_DIFFICULTY_TOLERANCE,
            mastery_threshold: exrec_core::eval::DEFAULT_MASTERY_THRESHOLD,
        }
    }
}

impl FilterSection {
    pub fn orientation(&self) -> Result<Orientation> {
        match self.orientation.as_str() {
            "lowest" => Ok(Orientation::LowestFirst),
            "highest" => Ok(Orientation::HighestFirst),
            other => Err(Error::InvalidConfig(format!(
                "filter.orientation must be \"lowest\" or \"highest\", got {other:?}"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.orientation()?;
        if self.keep == 0 {
            return Err(Error::InvalidConfig("filter.keep must be positive".into()));
        }
        for (name, v) in [
            ("target_difficulty", self.target_difficulty),
            ("difficulty_tolerance", self.difficulty_tolerance),
            ("mastery_threshold", self.mastery_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("filter.{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HoSection {
    pub population: usize,
    pub iterations: usize,
    pub list_len: usize,
    pub chaotic_alpha: f64,
}

impl Default for HoSection {
    fn default() -> Self {
        let d = HoConfig::default();
        HoSection {
            population: d.population,
            iterations: d.iterations,
            list_len: d.dimension,
            chaotic_alpha: d.chaotic_alpha,
        }
    }
}

impl HoSection {
    pub fn to_core(&self, seed: u64) -> HoConfig {
        HoConfig {
            population: self.population,
            iterations: self.iterations,
            dimension: self.list_len,
            lower: 0.0,
            upper: 1.0,
            chaotic_alpha: self.chaotic_alpha,
            seed,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: RunConfig =
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// Validate every section before any subcommand does work.
    pub fn validate(&self) -> Result<()> {
        self.synth.to_core(self.seed).validate()?;
        self.progress.to_core().validate()?;
        self.mastery.to_core().validate()?;
        self.filter.validate()?;
        self.ho.to_core(self.seed).validate()?;
        if self.progress.epochs == 0 || self.mastery.epochs == 0 {
            return Err(Error::InvalidConfig("training epochs must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Resolve a configured path against `out_dir` unless it is absolute.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out_dir.join(p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let config = RunConfig::default();
        let text = config.to_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.seed, config.seed);
        assert_eq!(back.ho.population, 50);
        assert_eq!(back.ho.iterations, 200);
        assert_eq!(back.ho.list_len, 5);
        assert_eq!(back.filter.keep, 200);
        back.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = toml::from_str::<RunConfig>("unknown_key = 1").unwrap_err();
        assert!(err.to_string().contains("unknown"), "{err}");
        assert!(toml::from_str::<RunConfig>("[synth]\nbogus = 2").is_err());
    }

    #[test]
    fn bad_orientation_rejected() {
        let config: RunConfig = toml::from_str("[filter]\norientation = \"sideways\"").unwrap();
        assert!(config.validate().is_err());
    }

    #[test]
    fn zero_students_rejected() {
        let config: RunConfig = toml::from_str("[synth]\nstudents = 0").unwrap();
        assert!(matches!(config.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn paths_resolve_relative_to_out_dir() {
        let config = RunConfig::default();
        assert_eq!(config.resolve(Path::new("bank.csv")), PathBuf::from("out/bank.csv"));
        assert_eq!(config.resolve(Path::new("/abs/bank.csv")), PathBuf::from("/abs/bank.csv"));
    }
}
