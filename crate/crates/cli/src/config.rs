//! Run configuration: a sectioned TOML file mapped onto the library types.

use std::fmt;
use std::path::Path;

use bicontact::evolution2::SpectrumForm;
use bicontact::model::{FirstOrderInit, Kernel, KernelFamily, ModelParams, SecondOrderInit};
use bicontact::simulator::SimConfig;
use bicontact::spectral::FourierGrid;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A configuration problem, located at a line of the file when possible.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub init: InitSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub evolve: EvolveSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub check: CheckSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub dim: usize,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub lambda_cross: f64,
    /// Shared default for the three kernels.
    pub kernel: Option<KernelFamily>,
    pub kernel_plus: Option<KernelFamily>,
    pub kernel_minus: Option<KernelFamily>,
    pub kernel_cross: Option<KernelFamily>,
    /// Which limit spectrum formulas to use.
    #[serde(default)]
    pub form: FormSpec,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormSpec {
    #[default]
    Derived,
    Printed,
}

impl From<FormSpec> for SpectrumForm {
    fn from(f: FormSpec) -> Self {
        match f {
            FormSpec::Derived => SpectrumForm::Derived,
            FormSpec::Printed => SpectrumForm::AsPrinted,
        }
    }
}

/// Fluctuation field descriptor on the grid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase", deny_unknown_fields)]
pub enum FieldSpec {
    #[default]
    Zero,
    /// `amplitude · exp(-|x|² / (2 width²))` centered at the origin.
    Bump { amplitude: f64, width: f64 },
}

impl FieldSpec {
    fn sample(&self, grid: &FourierGrid) -> Option<Vec<f64>> {
        match *self {
            FieldSpec::Zero => None,
            FieldSpec::Bump { amplitude, width } => Some(grid.sample_space(|x| {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                amplitude * (-r2 / (2.0 * width * width)).exp()
            })),
        }
    }

    fn check(&self) -> Result<(), String> {
        match *self {
            FieldSpec::Bump { amplitude, width } if width.is_nan() || width <= 0.0 || !amplitude.is_finite() => {
                Err(format!("bump needs width > 0 and finite amplitude (got {amplitude}, {width})"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSection {
    pub c_plus: f64,
    pub c_minus: f64,
    /// Pair constants; each defaults to the Poisson value (product of intensities).
    pub c_pp: Option<f64>,
    pub c_pm: Option<f64>,
    pub c_mm: Option<f64>,
    pub psi_plus: FieldSpec,
    pub psi_minus: FieldSpec,
    pub phi_pp: FieldSpec,
    pub phi_pm: FieldSpec,
    pub phi_mm: FieldSpec,
}

impl Default for InitSection {
    fn default() -> Self {
        Self {
            c_plus: 1.0,
            c_minus: 1.0,
            c_pp: None,
            c_pm: None,
            c_mm: None,
            psi_plus: FieldSpec::Zero,
            psi_minus: FieldSpec::Zero,
            phi_pp: FieldSpec::Zero,
            phi_pm: FieldSpec::Zero,
            phi_mm: FieldSpec::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub n: usize,
    pub length: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { n: 32, length: 30.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveSection {
    pub times: Vec<f64>,
    /// Also write axis profiles of every field at each time.
    pub fields: bool,
}

impl Default for EvolveSection {
    fn default() -> Self {
        Self {
            times: vec![0.0, 1.0, 2.0, 5.0, 10.0],
            fields: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub box_length: f64,
    pub snapshots: Vec<f64>,
    pub seed: u64,
    pub replicas: usize,
    pub bin_width: Option<f64>,
    pub r_max: Option<f64>,
    pub pairs: bool,
    pub max_population: Option<usize>,
    /// Compare: largest admissible |z|.
    pub z_threshold: f64,
    /// Compare: points per axis of the grid behind the analytic pair bins.
    pub grid_n: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            box_length: 20.0,
            snapshots: vec![1.0],
            seed: 1,
            replicas: 100,
            bin_width: None,
            r_max: None,
            pairs: true,
            max_population: None,
            z_threshold: 4.0,
            grid_n: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lemma {
    Boundint,
    IntA,
    Majorant,
}

impl Lemma {
    pub fn name(&self) -> &'static str {
        match self {
            Lemma::Boundint => "boundint",
            Lemma::IntA => "int_a",
            Lemma::Majorant => "majorant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSection {
    pub lemmas: Vec<Lemma>,
    pub boundint_cases: usize,
    pub seed: u64,
    /// Dimension of the int_a study; defaults to the model dimension.
    pub int_a_dim: Option<usize>,
    /// Run int_a below d = 3 and expect the lattice sums to blow up.
    pub negative_control: bool,
    pub majorant_times: Vec<f64>,
}

impl Default for CheckSection {
    fn default() -> Self {
        Self {
            lemmas: vec![Lemma::Boundint, Lemma::IntA],
            boundint_cases: 10_000,
            seed: 7,
            int_a_dim: None,
            negative_control: false,
            majorant_times: vec![0.1, 1.0, 10.0, 100.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub directory: String,
    pub formats: Vec<Format>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: "out".into(),
            formats: vec![Format::Csv, Format::Json],
        }
    }
}

/// A parsed configuration together with its source text and content hash.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub text: String,
    pub hash: String,
}

/// Git-style content hash: SHA-256 over `"blob <len>\0" + bytes`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `key` inside `[section]`, or of the section header when the key is absent.
pub fn key_line(text: &str, section: &str, key: Option<&str>) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            current = rest.trim_end_matches(']').trim().to_string();
            if current == section {
                header = Some(i + 1);
            }
            continue;
        }
        if current != section {
            continue;
        }
        if let Some(k) = key {
            if let Some(after) = line.strip_prefix(k) {
                if after.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    header
}

impl Loaded {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            line: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let syntax = |e: toml::de::Error| ConfigError {
            line: e.span().map(|s| line_of_offset(text, s.start)),
            message: e.message().trim().to_string(),
        };
        let config: RunConfig = toml::from_str(text).map_err(syntax)?;
        let loaded = Self {
            config,
            text: text.to_string(),
            hash: content_hash(text.as_bytes()),
        };
        loaded.validate()?;
        Ok(loaded)
    }

    fn err(&self, section: &str, key: Option<&str>, message: impl Into<String>) -> ConfigError {
        ConfigError {
            line: key_line(&self.text, section, key),
            message: format!("[{section}] {}", message.into()),
        }
    }

    /// Every check that does not depend on the subcommand.
    fn validate(&self) -> Result<(), ConfigError> {
        let grid = self.grid()?;
        self.params()?;
        let init1 = self.first_order_init(&grid)?;
        self.second_order_init(&grid, &init1)?;
        let times = &self.config.evolve.times;
        if times.is_empty() || times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
            return Err(self.err("evolve", Some("times"), "times must be a non-empty, non-decreasing list of t >= 0"));
        }
        if self.config.check.majorant_times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(self.err("check", Some("majorant_times"), "times must be finite and >= 0"));
        }
        if self.config.output.formats.is_empty() {
            return Err(self.err("output", Some("formats"), "at least one format is required"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<FourierGrid, ConfigError> {
        let g = &self.config.grid;
        FourierGrid::new(self.config.model.dim, g.n, g.length).map_err(|e| self.err("grid", Some("n"), e.to_string()))
    }

    pub fn params(&self) -> Result<ModelParams, ConfigError> {
        let m = &self.config.model;
        let kernel = |key: &'static str, spec: Option<KernelFamily>| -> Result<Kernel, ConfigError> {
            let family = spec
                .or(m.kernel)
                .ok_or_else(|| self.err("model", Some(key), format!("{key} is missing and no shared `kernel` is given")))?;
            let line_key = if spec.is_some() { key } else { "kernel" };
            Kernel::new(family, m.dim).map_err(|e| self.err("model", Some(line_key), e.to_string()))
        };
        let kp = kernel("kernel_plus", m.kernel_plus)?;
        let km = kernel("kernel_minus", m.kernel_minus)?;
        let ka = kernel("kernel_cross", m.kernel_cross)?;
        ModelParams::new(m.lambda_plus, m.lambda_minus, m.lambda_cross, kp, km, ka)
            .map_err(|e| self.err("model", Some("lambda_plus"), e.to_string()))
    }

    pub fn form(&self) -> SpectrumForm {
        self.config.model.form.into()
    }

    pub fn first_order_init(&self, grid: &FourierGrid) -> Result<FirstOrderInit, ConfigError> {
        let i = &self.config.init;
        for (key, f) in [("psi_plus", i.psi_plus), ("psi_minus", i.psi_minus)] {
            f.check().map_err(|m| self.err("init", Some(key), m))?;
        }
        let mut init = FirstOrderInit::constant(i.c_plus, i.c_minus);
        init.psi_plus = i.psi_plus.sample(grid);
        init.psi_minus = i.psi_minus.sample(grid);
        init.validate(grid).map_err(|e| self.err("init", Some("c_plus"), e.to_string()))?;
        Ok(init)
    }

    pub fn second_order_init(&self, grid: &FourierGrid, first: &FirstOrderInit) -> Result<SecondOrderInit, ConfigError> {
        let i = &self.config.init;
        for (key, f) in [("phi_pp", i.phi_pp), ("phi_pm", i.phi_pm), ("phi_mm", i.phi_mm)] {
            f.check().map_err(|m| self.err("init", Some(key), m))?;
        }
        let poisson = SecondOrderInit::poissonian(first);
        let mut init = SecondOrderInit::constant(
            i.c_pp.unwrap_or(poisson.c_pp),
            i.c_pm.unwrap_or(poisson.c_pm),
            i.c_mm.unwrap_or(poisson.c_mm),
        );
        init.phi_pp = i.phi_pp.sample(grid);
        init.phi_pm = i.phi_pm.sample(grid);
        init.phi_mm = i.phi_mm.sample(grid);
        init.validate(grid).map_err(|e| self.err("init", Some("c_pp"), e.to_string()))?;
        Ok(init)
    }

    /// Simulator settings, validated against the configured intensities.
    pub fn sim_config(&self) -> Result<SimConfig, ConfigError> {
        let s = &self.config.sim;
        let mut cfg = SimConfig::new(s.box_length, self.config.model.dim, s.snapshots.clone(), s.seed, s.replicas);
        if let Some(b) = s.bin_width {
            cfg.bin_width = b;
        }
        if let Some(r) = s.r_max {
            cfg.r_max = r;
        }
        if let Some(m) = s.max_population {
            cfg.max_population = m;
        }
        cfg.pairs = s.pairs;
        let i = &self.config.init;
        cfg.validate(i.c_plus, i.c_minus).map_err(|e| self.err("sim", None, e.to_string()))?;
        Ok(cfg)
    }

    pub fn wants(&self, f: Format) -> bool {
        self.config.output.formats.contains(&f)
    }
}
