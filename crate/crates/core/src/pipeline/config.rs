//! Flat `key = value` pipeline configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::edn::{AdamConfig, TrainConfig, DEFAULT_CODE_BIAS};
use crate::error::{Error, Result};
use crate::features::{F0Domain, MccConfig, SynthConfig};
use crate::nmf::SolveOptions;

/// Splits `key = value` lines; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{raw}`", no + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
}

fn parse_opt<T: std::str::FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    match v {
        "" | "none" | "off" => Ok(None),
        _ => parse_num(key, v).map(Some),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|s| parse_num(key, s.trim()))
        .collect()
}

fn fmt_opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), ToString::to_string)
}

/// Every tunable of the command-line pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,

    pub sample_rate_hz: f64,
    pub mcc_order: usize,
    pub n_mel: usize,
    pub vad_floor_db: f64,
    pub f0_domain: F0Domain,

    pub synth: SynthConfig,

    pub dict_sizes: Vec<usize>,
    /// EDN dictionary size and the ENMF dictionary used by `convert`.
    pub dict_size: Option<usize>,
    pub system: System,

    pub solver_max_iters: usize,
    pub solver_lambda: f64,
    pub solver_tol: f64,
    pub epsilon_floor: f64,

    pub hidden: [usize; 2],
    /// Initial code-layer bias.
    pub code_bias: f64,
    pub alpha: f64,
    pub batch_size: usize,
    pub stage1_lr: f64,
    pub stage2_lr: f64,
    pub stage2_dict_lr: Option<f64>,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub lr_decay_factor: f64,
    pub lr_decay_every_epochs: usize,
    pub max_lr_decays: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub early_stop_patience: Option<usize>,

    pub zero_tol: f64,
    pub convert_split: Split,

    pub out_dir: Option<PathBuf>,
    pub corpus_dir: Option<PathBuf>,
    pub prepared_dir: Option<PathBuf>,
    pub model_dir: Option<PathBuf>,
    pub input_dir: Option<PathBuf>,
    pub converted_dirs: Vec<PathBuf>,
    pub reference_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum System {
    Enmf,
    #[default]
    Edn,
}

impl System {
    pub fn parse(v: &str) -> Result<Self> {
        match v {
            "enmf" => Ok(Self::Enmf),
            "edn" => Ok(Self::Edn),
            _ => Err(Error::Config(format!("unknown system `{v}` (expected enmf or edn)"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Enmf => "enmf",
            Self::Edn => "edn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Split {
    Train,
    #[default]
    Eval,
    All,
}

impl Split {
    pub fn parse(v: &str) -> Result<Self> {
        match v {
            "train" => Ok(Self::Train),
            "eval" => Ok(Self::Eval),
            "all" => Ok(Self::All),
            _ => Err(Error::Config(format!("unknown split `{v}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Eval => "eval",
            Self::All => "all",
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let train = TrainConfig::<f64>::default();
        let solve = SolveOptions::<f64>::default();
        let mcc = MccConfig::default();
        Self {
            seed: 0,
            sample_rate_hz: mcc.sample_rate_hz,
            mcc_order: mcc.order,
            n_mel: mcc.n_mel,
            vad_floor_db: crate::features::DEFAULT_VAD_FLOOR_DB,
            f0_domain: F0Domain::Log,
            synth: SynthConfig {
                n_utterances: 40,
                n_eval: 4,
                time_warp: 0.2,
                silence_frames: 5,
                ..SynthConfig::default()
            },
            dict_sizes: vec![512, 3000],
            dict_size: None,
            system: System::Edn,
            solver_max_iters: solve.max_iters,
            solver_lambda: solve.sparsity_lambda,
            solver_tol: solve.tol,
            epsilon_floor: solve.epsilon_floor,
            hidden: [1024, 1024],
            code_bias: DEFAULT_CODE_BIAS,
            alpha: train.alpha,
            batch_size: train.batch_size,
            stage1_lr: train.stage1_lr,
            stage2_lr: train.stage2_lr,
            stage2_dict_lr: train.stage2_dict_lr,
            stage1_epochs: train.stage1_epochs,
            stage2_epochs: train.stage2_epochs,
            lr_decay_factor: train.lr_decay_factor,
            lr_decay_every_epochs: train.lr_decay_every_epochs,
            max_lr_decays: train.max_lr_decays,
            adam_beta1: train.adam.beta1,
            adam_beta2: train.adam.beta2,
            adam_eps: train.adam.eps,
            early_stop_patience: train.early_stop_patience,
            zero_tol: 0.0,
            convert_split: Split::Eval,
            out_dir: None,
            corpus_dir: None,
            prepared_dir: None,
            model_dir: None,
            input_dir: None,
            converted_dirs: Vec::new(),
            reference_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_kv(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// Sets one key; unknown keys are an error.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.synth;
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "sample_rate_hz" => self.sample_rate_hz = parse_num(key, v)?,
            "mcc_order" => self.mcc_order = parse_num(key, v)?,
            "n_mel" => self.n_mel = parse_num(key, v)?,
            "vad_floor_db" => self.vad_floor_db = parse_num(key, v)?,
            "f0_domain" => {
                self.f0_domain = match v {
                    "log" => F0Domain::Log,
                    "linear" => F0Domain::Linear,
                    _ => return Err(Error::Config(format!("unknown f0_domain `{v}`"))),
                }
            }
            "synth_dim" => s.dim = parse_num(key, v)?,
            "synth_bases" => s.n_bases = parse_num(key, v)?,
            "synth_utterances" => s.n_utterances = parse_num(key, v)?,
            "synth_eval" => s.n_eval = parse_num(key, v)?,
            "synth_frames" => s.frames_per_utterance = parse_num(key, v)?,
            "synth_sparsity" => s.sparsity = parse_num(key, v)?,
            "synth_noise" => s.noise = parse_num(key, v)?,
            "synth_time_warp" => s.time_warp = parse_num(key, v)?,
            "synth_silence" => s.silence_frames = parse_num(key, v)?,
            "synth_min_segment" => s.min_segment = parse_num(key, v)?,
            "synth_max_segment" => s.max_segment = parse_num(key, v)?,
            "frame_period_ms" => s.frame_period_ms = parse_num(key, v)?,
            "dict_sizes" => self.dict_sizes = parse_list(key, v)?,
            "dict_size" => self.dict_size = parse_opt(key, v)?,
            "system" => self.system = System::parse(v)?,
            "solver_max_iters" => self.solver_max_iters = parse_num(key, v)?,
            "solver_lambda" => self.solver_lambda = parse_num(key, v)?,
            "solver_tol" => self.solver_tol = parse_num(key, v)?,
            "epsilon_floor" => self.epsilon_floor = parse_num(key, v)?,
            "hidden_1" => self.hidden[0] = parse_num(key, v)?,
            "hidden_2" => self.hidden[1] = parse_num(key, v)?,
            "code_bias" => self.code_bias = parse_num(key, v)?,
            "alpha" => self.alpha = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "stage1_lr" => self.stage1_lr = parse_num(key, v)?,
            "stage2_lr" => self.stage2_lr = parse_num(key, v)?,
            "stage2_dict_lr" => self.stage2_dict_lr = parse_opt(key, v)?,
            "stage1_epochs" => self.stage1_epochs = parse_num(key, v)?,
            "stage2_epochs" => self.stage2_epochs = parse_num(key, v)?,
            "lr_decay_factor" => self.lr_decay_factor = parse_num(key, v)?,
            "lr_decay_every_epochs" => self.lr_decay_every_epochs = parse_num(key, v)?,
            "max_lr_decays" => self.max_lr_decays = parse_num(key, v)?,
            "adam_beta1" => self.adam_beta1 = parse_num(key, v)?,
            "adam_beta2" => self.adam_beta2 = parse_num(key, v)?,
            "adam_eps" => self.adam_eps = parse_num(key, v)?,
            "early_stop_patience" => self.early_stop_patience = parse_opt(key, v)?,
            "zero_tol" => self.zero_tol = parse_num(key, v)?,
            "convert_split" => self.convert_split = Split::parse(v)?,
            "out_dir" => self.out_dir = Some(v.into()),
            "corpus_dir" => self.corpus_dir = Some(v.into()),
            "prepared_dir" => self.prepared_dir = Some(v.into()),
            "model_dir" => self.model_dir = Some(v.into()),
            "input_dir" => self.input_dir = Some(v.into()),
            "converted_dirs" => self.converted_dirs = v.split(',').map(|p| PathBuf::from(p.trim())).collect(),
            "reference_dir" => self.reference_dir = Some(v.into()),
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Numeric settings as `key = value` text (paths omitted), in a fixed order.
    pub fn to_text(&self) -> String {
        let s = &self.synth;
        let list = |v: &[usize]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        let rows: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("sample_rate_hz", self.sample_rate_hz.to_string()),
            ("mcc_order", self.mcc_order.to_string()),
            ("n_mel", self.n_mel.to_string()),
            ("vad_floor_db", self.vad_floor_db.to_string()),
            (
                "f0_domain",
                match self.f0_domain {
                    F0Domain::Log => "log".into(),
                    F0Domain::Linear => "linear".into(),
                },
            ),
            ("synth_dim", s.dim.to_string()),
            ("synth_bases", s.n_bases.to_string()),
            ("synth_utterances", s.n_utterances.to_string()),
            ("synth_eval", s.n_eval.to_string()),
            ("synth_frames", s.frames_per_utterance.to_string()),
            ("synth_sparsity", s.sparsity.to_string()),
            ("synth_noise", s.noise.to_string()),
            ("synth_time_warp", s.time_warp.to_string()),
            ("synth_silence", s.silence_frames.to_string()),
            ("synth_min_segment", s.min_segment.to_string()),
            ("synth_max_segment", s.max_segment.to_string()),
            ("frame_period_ms", s.frame_period_ms.to_string()),
            ("dict_sizes", list(&self.dict_sizes)),
            ("dict_size", fmt_opt(&self.dict_size)),
            ("system", self.system.as_str().into()),
            ("solver_max_iters", self.solver_max_iters.to_string()),
            ("solver_lambda", self.solver_lambda.to_string()),
            ("solver_tol", self.solver_tol.to_string()),
            ("epsilon_floor", self.epsilon_floor.to_string()),
            ("hidden_1", self.hidden[0].to_string()),
            ("hidden_2", self.hidden[1].to_string()),
            ("code_bias", self.code_bias.to_string()),
            ("alpha", self.alpha.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("stage1_lr", self.stage1_lr.to_string()),
            ("stage2_lr", self.stage2_lr.to_string()),
            ("stage2_dict_lr", fmt_opt(&self.stage2_dict_lr)),
            ("stage1_epochs", self.stage1_epochs.to_string()),
            ("stage2_epochs", self.stage2_epochs.to_string()),
            ("lr_decay_factor", self.lr_decay_factor.to_string()),
            ("lr_decay_every_epochs", self.lr_decay_every_epochs.to_string()),
            ("max_lr_decays", self.max_lr_decays.to_string()),
            ("adam_beta1", self.adam_beta1.to_string()),
            ("adam_beta2", self.adam_beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("early_stop_patience", fmt_opt(&self.early_stop_patience)),
            ("zero_tol", self.zero_tol.to_string()),
            ("convert_split", self.convert_split.as_str().into()),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn mcc(&self) -> MccConfig {
        MccConfig {
            order: self.mcc_order,
            n_mel: self.n_mel,
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    pub fn solve_options(&self) -> SolveOptions<f64> {
        SolveOptions {
            max_iters: self.solver_max_iters,
            sparsity_lambda: self.solver_lambda,
            tol: self.solver_tol,
            epsilon_floor: self.epsilon_floor,
        }
    }

    pub fn train_config(&self) -> TrainConfig<f64> {
        TrainConfig {
            alpha: self.alpha,
            batch_size: self.batch_size,
            stage1_lr: self.stage1_lr,
            stage2_lr: self.stage2_lr,
            stage2_dict_lr: self.stage2_dict_lr,
            stage1_epochs: self.stage1_epochs,
            stage2_epochs: self.stage2_epochs,
            lr_decay_factor: self.lr_decay_factor,
            lr_decay_every_epochs: self.lr_decay_every_epochs,
            max_lr_decays: self.max_lr_decays,
            adam: AdamConfig {
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                eps: self.adam_eps,
            },
            rng_seed: self.seed,
            early_stop_patience: self.early_stop_patience,
            check_invariants: true,
        }
    }

    /// EDN dictionary size: `dict_size` if set, else the first of `dict_sizes`.
    pub fn edn_dict_size(&self) -> Result<usize> {
        self.dict_size
            .or_else(|| self.dict_sizes.first().copied())
            .ok_or_else(|| Error::Config("no dictionary size configured".into()))
    }

    pub fn validate(&self) -> Result<()> {
        self.mcc().validate()?;
        self.synth.validate()?;
        self.solve_options().validate()?;
        self.train_config().validate()?;
        if self.dict_sizes.contains(&0) {
            return Err(Error::Config("dictionary sizes must be positive".into()));
        }
        if !self.code_bias.is_finite() {
            return Err(Error::Config("code_bias must be finite".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
        path.as_deref()
            .ok_or_else(|| Error::Config(format!("missing required path: {what}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_published_hyperparameters() {
        let c = PipelineConfig::default();
        assert_eq!(c.hidden, [1024, 1024]);
        assert_eq!(c.batch_size, 512);
        assert_eq!((c.stage1_lr, c.stage2_lr, c.lr_decay_factor), (0.001, 0.01, 0.1));
        assert_eq!(c.alpha, 0.15);
        assert_eq!(c.dict_sizes, vec![512, 3000]);
        assert_eq!(c.mcc_order, 24);
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut c = PipelineConfig::default();
        c.apply_text("# comment\nseed = 7\nalpha=0.5  # trailing\ndict_sizes = 16, 64\nstage2_dict_lr = 0.002\n")
            .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.dict_sizes, vec![16, 64]);
        let mut d = PipelineConfig::default();
        d.apply_text(&c.to_text()).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn unknown_key_and_bad_value() {
        let mut c = PipelineConfig::default();
        assert!(c.set("nope", "1").is_err());
        assert!(c.set("alpha", "abc").is_err());
        assert!(c.apply_text("no equals sign").is_err());
    }
}
