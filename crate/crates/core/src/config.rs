//! Experiment configuration: TOML with fixed sections, every key optional
//! except `kind`. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inverse::{NoiseModel, DEFAULT_READOUT_SIGMA};
use crate::model::{layout_with, Activation, ActivationKind, DEFAULT_OMEGA};
use crate::noise::{NoiseFamily, NoiseParams};
use crate::training::{FitConfig, LrSchedule};
use crate::video::DEFAULT_FACTOR_SIGMA;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    GenNoise,
    Pretrain,
    Fit,
    Denoise,
    VideoFit,
    VideoDenoise,
    Ntk,
    Landscape,
    Tradeoff,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 9] = [
        ExperimentKind::GenNoise,
        ExperimentKind::Pretrain,
        ExperimentKind::Fit,
        ExperimentKind::Denoise,
        ExperimentKind::VideoFit,
        ExperimentKind::VideoDenoise,
        ExperimentKind::Ntk,
        ExperimentKind::Landscape,
        ExperimentKind::Tradeoff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::GenNoise => "gen-noise",
            ExperimentKind::Pretrain => "pretrain",
            ExperimentKind::Fit => "fit",
            ExperimentKind::Denoise => "denoise",
            ExperimentKind::VideoFit => "video-fit",
            ExperimentKind::VideoDenoise => "video-denoise",
            ExperimentKind::Ntk => "ntk",
            ExperimentKind::Landscape => "landscape",
            ExperimentKind::Tradeoff => "tradeoff",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// How a test-time network is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    /// Fresh SIREN draw.
    Siren,
    /// Encoder pretrained on a noise family, fresh last layer.
    Snp(NoiseFamily),
}

impl Method {
    pub fn parse(s: &str) -> Option<Self> {
        if s == "siren" {
            return Some(Method::Siren);
        }
        s.strip_prefix("snp-").and_then(NoiseFamily::parse).map(Method::Snp)
    }

    pub fn name(self) -> String {
        match self {
            Method::Siren => "siren".into(),
            Method::Snp(f) => format!("snp-{}", f.name()),
        }
    }
}

fn d<T: Default>() -> T {
    T::default()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub width: usize,
    pub hidden_layers: usize,
    pub activation: ActivationKind,
    pub omega: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            width: 256,
            hidden_layers: 5,
            activation: ActivationKind::Sine,
            omega: DEFAULT_OMEGA,
        }
    }
}

impl ModelSection {
    pub fn layout(&self, d_in: usize, d_out: usize) -> Vec<usize> {
        layout_with(d_in, self.width, self.hidden_layers, d_out)
    }

    pub fn activation(&self) -> Activation {
        Activation {
            kind: self.activation,
            omega: self.omega,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub iterations: usize,
    pub lr: f64,
    pub record_every: usize,
    pub schedule: LrSchedule,
    pub eval_ssim: bool,
}

impl Default for FitSection {
    fn default() -> Self {
        let f = FitConfig::default();
        Self {
            iterations: f.iterations,
            lr: f.lr,
            record_every: f.record_every,
            schedule: f.schedule,
            eval_ssim: f.eval_ssim,
        }
    }
}

impl FitSection {
    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            iterations: self.iterations,
            lr: self.lr,
            record_every: self.record_every,
            eval_ssim: self.eval_ssim,
            schedule: self.schedule,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    /// Number of noise signals `N`.
    pub signals: usize,
    pub iterations: usize,
    pub lr: f64,
    pub record_every: usize,
    /// Load `snp-<family>.ckpt` from here instead of pretraining.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<PathBuf>,
}

impl Default for PretrainSection {
    fn default() -> Self {
        Self {
            signals: 10,
            iterations: 5000,
            lr: 1e-4,
            record_every: 100,
            checkpoints: None,
        }
    }
}

impl PretrainSection {
    pub fn fit_config(&self) -> FitConfig {
        FitConfig::new(self.iterations, self.lr, self.record_every)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Directory of PNG test images; procedural pseudo-photos when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub images: Option<PathBuf>,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            images: None,
            count: 5,
            height: 64,
            width: 64,
            channels: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// Family written by `gen-noise`.
    pub family: NoiseFamily,
    /// Images written by `gen-noise`.
    pub count: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub gaussian_mean: f64,
    pub gaussian_std: f64,
    /// Dead-leaves shape count; scaled from the image size when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shape_count: Option<usize>,
    pub size_exponent: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        let p = NoiseParams::for_size(64, 64);
        Self {
            family: NoiseFamily::Uniform,
            count: 10,
            alpha_min: p.alpha_range.0,
            alpha_max: p.alpha_range.1,
            gaussian_mean: p.gaussian_mean,
            gaussian_std: p.gaussian_std,
            shape_count: None,
            size_exponent: p.size_exponent,
        }
    }
}

impl NoiseSection {
    pub fn params(&self, height: usize, width: usize) -> NoiseParams {
        let mut p = NoiseParams::for_size(height, width);
        p.alpha_range = (self.alpha_min, self.alpha_max);
        p.gaussian_mean = self.gaussian_mean;
        p.gaussian_std = self.gaussian_std;
        if let Some(n) = self.shape_count {
            p.shape_count = n;
        }
        p.size_exponent = self.size_exponent;
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiseSection {
    pub photon_count: f64,
    pub readout_sigma: f64,
}

impl Default for DenoiseSection {
    fn default() -> Self {
        Self {
            photon_count: 30.0,
            readout_sigma: DEFAULT_READOUT_SIGMA,
        }
    }
}

impl DenoiseSection {
    pub fn noise_model(&self) -> NoiseModel {
        NoiseModel {
            photon_count: self.photon_count,
            readout_sigma: self.readout_sigma,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VideoSection {
    /// Directory holding one sub-directory of numbered PNG frames per video;
    /// procedural videos when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub videos: Option<PathBuf>,
    pub count: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub rank: usize,
    pub sigma: f64,
    pub time_input: bool,
    pub net_width: usize,
    pub hidden_layers: usize,
    pub iterations: usize,
    pub lr: f64,
    pub record_every: usize,
}

impl Default for VideoSection {
    fn default() -> Self {
        Self {
            videos: None,
            count: 3,
            frames: 8,
            height: 64,
            width: 64,
            channels: 3,
            rank: 10,
            sigma: DEFAULT_FACTOR_SIGMA,
            time_input: true,
            net_width: 256,
            hidden_layers: 4,
            iterations: 100_000,
            lr: 5e-4,
            record_every: 100,
        }
    }
}

impl VideoSection {
    /// Cosine-annealed.
    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            schedule: LrSchedule::Cosine,
            ..FitConfig::new(self.iterations, self.lr, self.record_every)
        }
    }

    /// Image layout of the shared branch before any time input is added.
    pub fn layout(&self) -> Vec<usize> {
        layout_with(2, self.net_width, self.hidden_layers, self.channels)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub size: usize,
    pub channels: usize,
    pub targets: usize,
    pub net_width: usize,
    pub hidden_layers: usize,
    pub percentile: f64,
    pub resolution: usize,
    pub span: f64,
    /// Landscape direction seeds.
    pub seeds: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            size: 16,
            channels: 1,
            targets: 5,
            net_width: 256,
            hidden_layers: 2,
            percentile: 90.0,
            resolution: 41,
            span: 1.0,
            seeds: 5,
        }
    }
}

impl AnalysisSection {
    pub fn layout(&self) -> Vec<usize> {
        layout_with(2, self.net_width, self.hidden_layers, self.channels)
    }
}

fn default_methods() -> Vec<String> {
    vec!["siren".into(), "snp-uniform".into(), "snp-spectrum".into()]
}

fn one() -> usize {
    1
}

fn is_one(n: &usize) -> bool {
    *n == 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Worker threads; never changes results.
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub jobs: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "d")]
    pub model: ModelSection,
    #[serde(default = "d")]
    pub fit: FitSection,
    #[serde(default = "d")]
    pub pretrain: PretrainSection,
    #[serde(default = "d")]
    pub data: DataSection,
    #[serde(default = "d")]
    pub noise: NoiseSection,
    #[serde(default = "d")]
    pub denoise: DenoiseSection,
    #[serde(default = "d")]
    pub video: VideoSection,
    #[serde(default = "d")]
    pub analysis: AnalysisSection,
}

impl ExperimentConfig {
    /// Defaults everywhere except the kind.
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            seed: 0,
            out: None,
            jobs: 1,
            methods: default_methods(),
            model: d(),
            fit: d(),
            pretrain: d(),
            data: d(),
            noise: d(),
            denoise: d(),
            video: d(),
            analysis: d(),
        }
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        self.methods
            .iter()
            .map(|m| Method::parse(m).ok_or_else(|| config_error("methods", 0, format!("unknown method `{m}`"))))
            .collect()
    }

    /// Semantic checks the type system cannot express.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(config_error(key, 0, msg.to_string()));
        self.methods()?;
        if self.methods.is_empty() {
            return bad("methods", "at least one method is required");
        }
        if self.jobs == 0 {
            return bad("jobs", "must be at least 1");
        }
        if self.model.width == 0 {
            return bad("model.width", "must be positive");
        }
        if !(self.model.omega > 0.0 && self.model.omega.is_finite()) {
            return bad("model.omega", "must be positive");
        }
        let checks: [(&str, &FitConfig); 3] = [
            ("fit", &self.fit.fit_config()),
            ("pretrain", &self.pretrain.fit_config()),
            ("video", &self.video.fit_config()),
        ];
        for (section, f) in checks {
            f.validate().map_err(|e| config_error(section, 0, e.to_string()))?;
        }
        if self.pretrain.signals == 0 {
            return bad("pretrain.signals", "must be at least 1");
        }
        if ![1, 3].contains(&self.data.channels) {
            return bad("data.channels", "must be 1 or 3");
        }
        if self.data.height < 16 || self.data.width < 16 {
            return bad("data", "images must be at least 16x16");
        }
        if self.data.count == 0 {
            return bad("data.count", "must be at least 1");
        }
        if self.noise.alpha_min > self.noise.alpha_max {
            return bad("noise.alpha_min", "must not exceed alpha_max");
        }
        self.denoise
            .noise_model()
            .validate()
            .map_err(|e| config_error("denoise", 0, e.to_string()))?;
        if self.video.frames == 0 || self.video.count == 0 {
            return bad("video", "needs at least one video of one frame");
        }
        if ![1, 3].contains(&self.video.channels) {
            return bad("video.channels", "must be 1 or 3");
        }
        if self.analysis.resolution.is_multiple_of(2) || self.analysis.resolution > 101 {
            return bad("analysis.resolution", "must be odd and at most 101");
        }
        if !(0.0..=100.0).contains(&self.analysis.percentile) {
            return bad("analysis.percentile", "must lie in [0, 100]");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Copy written next to the outputs: the output directory and worker
    /// count are dropped because they do not affect results.
    pub fn resolved(&self) -> Self {
        Self {
            out: None,
            jobs: 1,
            ..self.clone()
        }
    }
}

fn config_error(key: &str, line: usize, message: String) -> Error {
    Error::Config {
        key: key.to_string(),
        line,
        message,
    }
}

/// 1-based line of byte `offset`.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Dotted key for the assignment on `line`, prefixed with its section.
fn key_at_line(text: &str, line: usize) -> Option<String> {
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let l = raw.trim();
        if l.starts_with('[') {
            section = l.trim_matches(|c| c == '[' || c == ']').trim().to_string();
        }
        if i + 1 == line {
            let (k, _) = l.split_once('=')?;
            let k = k.trim();
            return Some(if section.is_empty() { k.to_string() } else { format!("{section}.{k}") });
        }
    }
    None
}

fn backticked(msg: &str, after: &str) -> Option<String> {
    let rest = &msg[msg.find(after)? + after.len()..];
    let start = rest.find('`')? + 1;
    let end = rest[start..].find('`')? + start;
    Some(rest[start..end].to_string())
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(0, |s| line_of(text, s.start));
        let msg = e.message().trim().to_string();
        let key = backticked(&msg, "unknown field")
            .or_else(|| backticked(&msg, "missing field"))
            .or_else(|| key_at_line(text, line))
            .unwrap_or_else(|| "?".into());
        config_error(&key, line, msg)
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config(&crate::io::read_text(path)?)
}

/// Named presets shipped with the crate.
pub mod presets {
    pub const DESK_TRADEOFF: &str = include_str!("../../../configs/desk/tradeoff.toml");
    pub const DESK_FIT: &str = include_str!("../../../configs/desk/fit.toml");
    pub const DESK_DENOISE: &str = include_str!("../../../configs/desk/denoise.toml");
    pub const DESK_PRETRAIN: &str = include_str!("../../../configs/desk/pretrain.toml");
    pub const DESK_GEN_NOISE: &str = include_str!("../../../configs/desk/gen-noise.toml");
    pub const DESK_VIDEO_FIT: &str = include_str!("../../../configs/desk/video-fit.toml");
    pub const DESK_VIDEO_DENOISE: &str = include_str!("../../../configs/desk/video-denoise.toml");
    pub const DESK_NTK: &str = include_str!("../../../configs/desk/ntk.toml");
    pub const DESK_LANDSCAPE: &str = include_str!("../../../configs/desk/landscape.toml");
    pub const FULL_TRADEOFF: &str = include_str!("../../../configs/full/tradeoff.toml");
    pub const FULL_VIDEO_FIT: &str = include_str!("../../../configs/full/video-fit.toml");

    pub const ALL: [(&str, &str); 11] = [
        ("desk/tradeoff", DESK_TRADEOFF),
        ("desk/fit", DESK_FIT),
        ("desk/denoise", DESK_DENOISE),
        ("desk/pretrain", DESK_PRETRAIN),
        ("desk/gen-noise", DESK_GEN_NOISE),
        ("desk/video-fit", DESK_VIDEO_FIT),
        ("desk/video-denoise", DESK_VIDEO_DENOISE),
        ("desk/ntk", DESK_NTK),
        ("desk/landscape", DESK_LANDSCAPE),
        ("full/tradeoff", FULL_TRADEOFF),
        ("full/video-fit", FULL_VIDEO_FIT),
    ];
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_fit_config_gets_defaults() {
        let c = parse_config("kind = \"fit\"\n").unwrap();
        assert_eq!(c.kind, ExperimentKind::Fit);
        assert_eq!(c.fit.iterations, 2000);
        assert_eq!(c.fit.lr, 1e-4);
        assert_eq!(c.model.layout(2, 3), vec![2, 256, 256, 256, 256, 256, 3]);
        assert_eq!(c.pretrain.signals, 10);
        assert_eq!(c.seed, 0);
    }

    #[test]
    fn type_error_names_key_and_line() {
        let text = "kind = \"fit\"\n\n[fit]\niterations = \"abc\"\n";
        match parse_config(text) {
            Err(Error::Config { key, line, .. }) => {
                assert_eq!(key, "fit.iterations");
                assert_eq!(line, 4);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_and_missing_keys() {
        match parse_config("kind = \"fit\"\n[fit]\nitertions = 5\n") {
            Err(Error::Config { key, line, .. }) => {
                assert_eq!(key, "itertions");
                assert_eq!(line, 3);
            }
            other => panic!("{other:?}"),
        }
        match parse_config("seed = 3\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "kind"),
            other => panic!("{other:?}"),
        }
        match parse_config("kind = \"fit\"\nmethods = [\"snp-bogus\"]\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "methods"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn round_trip() {
        let mut c = ExperimentConfig::new(ExperimentKind::Tradeoff);
        c.seed = 17;
        c.noise.shape_count = Some(300);
        c.data.images = Some("imgs".into());
        c.jobs = 3;
        let again = parse_config(&c.to_toml()).unwrap();
        assert_eq!(again, c);
        let again = parse_config(&again.to_toml()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn presets_parse() {
        for (name, text) in presets::ALL {
            let c = parse_config(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(c, parse_config(&c.to_toml()).unwrap(), "{name}");
        }
    }

    #[test]
    fn methods_parse() {
        assert_eq!(Method::parse("siren"), Some(Method::Siren));
        assert_eq!(Method::parse("snp-dead-leaves-mixed"), Some(Method::Snp(NoiseFamily::DeadLeavesMixed)));
        assert_eq!(Method::parse("snp-"), None);
        for k in ExperimentKind::ALL {
            assert_eq!(ExperimentKind::parse(k.name()), Some(k));
        }
    }
}
