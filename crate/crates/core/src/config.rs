//! Run configuration: one human-readable TOML file drives every pipeline
//! stage. Unknown keys are rejected, every field is validated up front, and
//! the resolved config is stamped next to each artifact a run produces so
//! results stay attributable.

use crate::array::optim::{OptimizerConfig, OptimizerKind};
use crate::codec::Alignment;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Which paths are wired through the gated-calculator module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Base transformer only; the module is detached.
    #[serde(rename = "plain")]
    Plain,
    /// Calculator path only; the input mapping trains through the
    /// auxiliary loss, the calculator blocks the main-loss gradient.
    #[serde(rename = "igc")]
    Igc,
    /// Calculator plus a differentiable shortcut around it.
    #[serde(rename = "igc+shortcut")]
    IgcShortcut,
    /// Shortcut only; no calculator anywhere.
    #[serde(rename = "shortcut-only")]
    ShortcutOnly,
}

impl Mode {
    pub fn uses_calculator(self) -> bool {
        matches!(self, Mode::Igc | Mode::IgcShortcut)
    }

    pub fn uses_shortcut(self) -> bool {
        matches!(self, Mode::IgcShortcut | Mode::ShortcutOnly)
    }

    pub fn has_igc(self) -> bool {
        self != Mode::Plain
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Plain => "plain",
            Mode::Igc => "igc",
            Mode::IgcShortcut => "igc+shortcut",
            Mode::ShortcutOnly => "shortcut-only",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    /// MLP hidden width as a multiple of `width`.
    pub ff_mult: usize,
    pub context: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            width: 256,
            layers: 4,
            heads: 4,
            ff_mult: 4,
            context: 64,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecConfig {
    /// Digit slots per operand and result block.
    pub width: usize,
    pub alignment: Alignment,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            width: 10,
            alignment: Alignment::Left,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IgcConfig {
    /// The module modifies the output of this block (1-based).
    pub insertion_layer: usize,
    pub mode: Mode,
    /// Gate bias initialization; sigmoid(-4) keeps the untrained module
    /// near-silent.
    pub gate_bias_init: f64,
    /// Query/key width of the input mapping's cross attention.
    pub query_dim: usize,
    /// Value width of the input mapping's cross attention.
    pub value_dim: usize,
    /// Hidden width of the shared trunk feeding the per-slot heads.
    pub trunk_dim: usize,
    /// Hidden width of the output mapping's conditioning network.
    pub mlp_hidden: usize,
    /// How far back from the anchor the input mapping's relative position
    /// features reach.
    pub relpos_window_in: usize,
    pub relpos_dim_in: usize,
    /// How far past the anchor the output mapping's relative position
    /// features reach.
    pub relpos_window_out: usize,
    pub relpos_dim_out: usize,
    /// Per-slot width of the shortcut payload (pre-classification features).
    pub payload_slot_dim: usize,
    /// Width of the gate's summary of the calculator result.
    pub summary_dim: usize,
}

impl Default for IgcConfig {
    fn default() -> Self {
        IgcConfig {
            insertion_layer: 1,
            mode: Mode::Igc,
            gate_bias_init: -4.0,
            query_dim: 64,
            value_dim: 64,
            trunk_dim: 128,
            mlp_hidden: 256,
            relpos_window_in: 32,
            relpos_dim_in: 16,
            relpos_window_out: 12,
            relpos_dim_out: 16,
            payload_slot_dim: 16,
            summary_dim: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DivisionMode {
    /// Operands constructed as (q*b, b) so the quotient is exact.
    Exact,
    /// Independent operands; the quotient truncates.
    Truncating,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_eval_bigbench: usize,
    pub n_eval_alt: usize,
    pub n_eval_distractor: usize,
    /// Probability of each operand digit length, index 0 = one digit.
    pub digit_len_weights: Vec<f64>,
    pub distractor_frac: f64,
    /// Fraction of subtraction samples forced to a negative result.
    pub negative_sub_frac: f64,
    pub division_mode: DivisionMode,
    /// Frequency cap for operand-region token n-grams, as a fraction of
    /// the target record count.
    pub ngram_cap: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            seed: 0,
            n_train: 10_000,
            n_eval_bigbench: 2_000,
            n_eval_alt: 1_000,
            n_eval_distractor: 300,
            digit_len_weights: vec![0.35, 0.30, 0.20, 0.10, 0.05],
            distractor_frac: 0.15,
            negative_sub_frac: 0.25,
            division_mode: DivisionMode::Exact,
            ngram_cap: 0.02,
        }
    }
}

/// Probability that the pretraining corpus labels an arithmetic sample
/// with the true answer, per operator, indexed by max operand digit
/// count minus one. Everything else gets a plausible corrupted answer:
/// the frozen base ends up with the heuristics a pretrained model carries,
/// strong on short additions, useless on long multiplications.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuessConfig {
    pub add: Vec<f64>,
    pub sub: Vec<f64>,
    pub mul: Vec<f64>,
    pub div: Vec<f64>,
}

impl Default for GuessConfig {
    fn default() -> Self {
        GuessConfig {
            add: vec![1.0, 1.0, 0.75, 0.15, 0.05],
            sub: vec![1.0, 1.0, 0.70, 0.15, 0.05],
            mul: vec![0.30, 0.02, 0.01, 0.0, 0.0],
            div: vec![0.60, 0.20, 0.05, 0.02, 0.01],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub seed: u64,
    pub n_samples: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub digit_len_weights: Vec<f64>,
    pub distractor_frac: f64,
    pub filler_frac: f64,
    pub guess: GuessConfig,
    /// Abort threshold: structural perplexity this low means the grammar
    /// is learned.
    pub target_structural_ppl: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            seed: 7,
            n_samples: 30_000,
            epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            digit_len_weights: vec![0.40, 0.30, 0.15, 0.10, 0.05],
            distractor_frac: 0.15,
            filler_frac: 0.10,
            guess: GuessConfig::default(),
            target_structural_ppl: 1.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda_aux: f64,
    /// Evaluate every this many epochs on a subset.
    pub eval_cadence: usize,
    /// Samples per in-training evaluation; the final evaluation is full.
    pub eval_subset: usize,
    pub max_new_tokens: usize,
    /// Ablation only: let gradient reach the base.
    pub unfreeze_base: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seeds: vec![0, 1, 2],
            epochs: 100,
            batch_size: 32,
            lr: 1e-3,
            lambda_aux: 1.0,
            eval_cadence: 4,
            eval_subset: 300,
            max_new_tokens: 8,
            unfreeze_base: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmConfig {
    pub name: String,
    pub mode: Mode,
    #[serde(default)]
    pub alignment: Option<Alignment>,
    #[serde(default)]
    pub insertion_layer: Option<usize>,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateConfig {
    #[serde(default)]
    pub arms: Vec<ArmConfig>,
}

impl AblateConfig {
    /// The comparison matrix: module variants plus the codec-alignment arm.
    pub fn standard() -> AblateConfig {
        AblateConfig {
            arms: vec![
                ArmConfig {
                    name: "igc".into(),
                    mode: Mode::Igc,
                    alignment: None,
                    insertion_layer: None,
                    epochs: None,
                    seeds: None,
                },
                ArmConfig {
                    name: "igc-shortcut".into(),
                    mode: Mode::IgcShortcut,
                    alignment: None,
                    insertion_layer: None,
                    epochs: None,
                    seeds: None,
                },
                ArmConfig {
                    name: "shortcut-only".into(),
                    mode: Mode::ShortcutOnly,
                    alignment: None,
                    insertion_layer: None,
                    epochs: None,
                    seeds: None,
                },
                ArmConfig {
                    name: "right-aligned".into(),
                    mode: Mode::Igc,
                    alignment: Some(Alignment::Right),
                    insertion_layer: None,
                    epochs: None,
                    seeds: None,
                },
            ],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub codec: CodecConfig,
    #[serde(default)]
    pub igc: IgcConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub ablate: AblateConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let cfg: RunConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |msg: String| Err(ConfigError::Invalid(msg));
        let m = &self.model;
        if m.width == 0 || m.layers == 0 || m.heads == 0 || m.context == 0 {
            return err("model dimensions must be positive".into());
        }
        if m.width % m.heads != 0 {
            return err(format!(
                "model.width {} not divisible by model.heads {}",
                m.width, m.heads
            ));
        }
        if self.codec.width == 0 || self.codec.width > 18 {
            return err(format!(
                "codec.width {} out of supported range 1..=18",
                self.codec.width
            ));
        }
        if self.igc.insertion_layer == 0 || self.igc.insertion_layer >= m.layers {
            return err(format!(
                "igc.insertion_layer {} must leave at least one block after it (1..={})",
                self.igc.insertion_layer,
                m.layers - 1
            ));
        }
        let w = &self.data.digit_len_weights;
        if w.is_empty() || w.iter().any(|&x| x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return err("data.digit_len_weights must be non-negative and sum > 0".into());
        }
        if 2 * w.len() > self.codec.width {
            return err(format!(
                "operands up to {} digits can overflow the {}-slot result block under multiplication",
                w.len(),
                self.codec.width
            ));
        }
        for (name, v) in [
            ("data.distractor_frac", self.data.distractor_frac),
            ("data.negative_sub_frac", self.data.negative_sub_frac),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return err(format!("{name} must be in [0,1], got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.data.ngram_cap) || self.data.ngram_cap == 0.0 {
            return err(format!(
                "data.ngram_cap must be in (0,1], got {}",
                self.data.ngram_cap
            ));
        }
        for (name, g) in [
            ("add", &self.pretrain.guess.add),
            ("sub", &self.pretrain.guess.sub),
            ("mul", &self.pretrain.guess.mul),
            ("div", &self.pretrain.guess.div),
        ] {
            if g.len() < self.pretrain.digit_len_weights.len() {
                return err(format!(
                    "pretrain.guess.{name} needs an entry per operand digit length"
                ));
            }
            if g.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return err(format!("pretrain.guess.{name} entries must be in [0,1]"));
            }
        }
        if self.train.seeds.is_empty() {
            return err("train.seeds must not be empty".into());
        }
        if self.train.epochs == 0 || self.pretrain.epochs == 0 {
            return err("epoch counts must be positive".into());
        }
        if self.train.batch_size == 0 || self.pretrain.batch_size == 0 {
            return err("batch sizes must be positive".into());
        }
        if self.train.eval_cadence == 0 {
            return err("train.eval_cadence must be positive".into());
        }
        if self.train.lambda_aux < 0.0 {
            return err("train.lambda_aux must be non-negative".into());
        }
        for arm in &self.ablate.arms {
            if let Some(il) = arm.insertion_layer {
                if il == 0 || il >= m.layers {
                    return err(format!(
                        "arm {}: insertion_layer {il} out of range",
                        arm.name
                    ));
                }
            }
        }
        Ok(())
    }

    /// Canonical serialized form, written next to every artifact.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Content hash of the resolved config.
    pub fn content_hash(&self) -> String {
        crate::array::checkpoint::hex_digest(self.to_toml().as_bytes())
    }

    pub fn optimizer(&self, lr: f64) -> OptimizerConfig {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr,
            ..OptimizerConfig::default()
        }
    }
}
