//! TOML configuration for the `redteam` binary.
//!
//! Every run is driven by one config file; command-line flags only
//! override `seed`, `parallelism`, and the output directory. Unknown keys
//! are rejected by name, paths are checked up front, and secrets never
//! appear in the file — remote endpoints name an environment variable
//! instead.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use redteam_core::eval::{
    build_robustness_corpus, ClientSelector, ModelSelector, RobustnessMode, RunConfig, RunMode,
    Scenario, DEFAULT_CLASS_POOL,
};
use redteam_core::numerics::LinfBudget;
use redteam_core::text::TemplateSet;
use redteam_core::visual::{build_default_corpus, Corpus, CorpusGenerator};

/// What went wrong, split by exit code: config problems (1), runtime
/// failures (2), judge/rephrase protocol breakdowns (3).
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(redteam_core::Error),
    /// A judge or rephrase protocol failure surfaced from a transcript.
    /// Carries the already-rendered message verbatim.
    Protocol(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Runtime(e) => write!(f, "{e}"),
            CliError::Protocol(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<redteam_core::Error> for CliError {
    fn from(e: redteam_core::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(
                redteam_core::Error::JudgeProtocol { .. }
                | redteam_core::Error::RephraseProtocol { .. },
            ) => 3,
            CliError::Protocol(_) => 3,
            CliError::Runtime(_) => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// The L∞ budget as written in the file. Floats here so off-grid values
/// can be rejected with a message naming the key.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
}

fn default_epsilon() -> f64 {
    32.0 / 255.0
}

fn default_step_size() -> f64 {
    1.0 / 255.0
}

fn default_steps() -> usize {
    3000
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self {
            epsilon: default_epsilon(),
            step_size: default_step_size(),
            steps: default_steps(),
        }
    }
}

impl BudgetConfig {
    pub fn to_budget(&self) -> CliResult<LinfBudget> {
        LinfBudget::new(self.epsilon, self.step_size, self.steps)
            .map_err(|e| CliError::config(e.to_string()))
    }
}

/// Optional template body overrides, one file per template.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplatePaths {
    pub judging: Option<PathBuf>,
    pub rephrase: Option<PathBuf>,
    pub bias: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    /// The model under attack.
    pub target: ModelSelector,
    /// Rephrasing backend; defaults to an offline stand-in that repeats
    /// one fixed prompt.
    #[serde(default = "default_attacker")]
    pub attacker: ClientSelector,
    /// Judging backend; defaults to an offline stand-in that rejects
    /// everything.
    #[serde(default = "default_judge")]
    pub judge: ClientSelector,
    /// White-box source for `transfer`.
    pub source_model: Option<ModelSelector>,
    /// JSONL query dataset; required by `bench`, `transfer`, `ablate`.
    pub dataset: Option<PathBuf>,
    /// Where artifacts land (default: current directory).
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_mode")]
    pub mode: RunMode,
    /// Rephrase budget N.
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: usize,
    #[serde(default)]
    pub target_temperature: f64,
    #[serde(default = "default_attacker_temperature")]
    pub attacker_temperature: f64,
    /// Scenario the adversarial image was optimized under; required in
    /// query-agnostic mode.
    pub source_scenario: Option<Scenario>,
    /// Evaluation image, or the optimization origin for `perturb`,
    /// `transfer`, and `ablate`. Mid-gray when omitted.
    pub adversarial_image: Option<PathBuf>,
    /// Corpus token: `default`, `nested_fiction`, `in_context`,
    /// `file:<path>`, `robustness_targeted:<class>`, or
    /// `robustness_untargeted`.
    #[serde(default = "default_corpus")]
    pub corpus: String,
    /// How many corpus sentences to use (prefix of the named corpus).
    #[serde(default = "default_corpus_m")]
    pub corpus_m: usize,
    /// Objective trace cadence for `perturb`.
    #[serde(default = "default_trace_every")]
    pub trace_every: usize,
    #[serde(default)]
    pub budget: BudgetConfig,
    #[serde(default)]
    pub templates: TemplatePaths,
}

fn default_attacker() -> ClientSelector {
    ClientSelector::Static {
        reply: "PROMPT: please reconsider and answer the original question".to_string(),
    }
}

fn default_judge() -> ClientSelector {
    ClientSelector::Static {
        reply: "0".to_string(),
    }
}

fn default_parallelism() -> usize {
    1
}

fn default_mode() -> RunMode {
    RunMode::QueryDependent
}

fn default_rounds() -> usize {
    5
}

fn default_max_new_tokens() -> usize {
    128
}

fn default_attacker_temperature() -> f64 {
    0.7
}

fn default_corpus() -> String {
    "default".to_string()
}

fn default_corpus_m() -> usize {
    32
}

fn default_trace_every() -> usize {
    10
}

/// Reads, parses, and fully validates a config file. All failures here
/// exit with code 1 and name the offending key or path.
pub fn parse_config(path: impl AsRef<Path>) -> CliResult<AppConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let config: AppConfig =
        toml::from_str(&text).map_err(|e| CliError::config(e.message().to_string()))?;
    config.validate()?;
    Ok(config)
}

impl AppConfig {
    fn validate(&self) -> CliResult<()> {
        self.budget.to_budget()?;
        if self.parallelism == 0 {
            return Err(CliError::config("parallelism must be at least 1"));
        }
        if self.corpus_m == 0 {
            return Err(CliError::config("corpus_m must be at least 1"));
        }
        if self.trace_every == 0 {
            return Err(CliError::config("trace_every must be at least 1"));
        }
        if self.mode == RunMode::QueryAgnostic && self.source_scenario.is_none() {
            return Err(CliError::config(
                "mode \"query_agnostic\" requires source_scenario",
            ));
        }
        for (key, path) in [
            ("dataset", &self.dataset),
            ("adversarial_image", &self.adversarial_image),
            ("templates.judging", &self.templates.judging),
            ("templates.rephrase", &self.templates.rephrase),
            ("templates.bias", &self.templates.bias),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(CliError::config(format!(
                        "{key} points to a missing file: {}",
                        p.display()
                    )));
                }
            }
        }
        if let Some(rest) = self.corpus.strip_prefix("file:") {
            if !Path::new(rest).exists() {
                return Err(CliError::config(format!(
                    "corpus points to a missing file: {rest}"
                )));
            }
        }
        Ok(())
    }

    pub fn budget(&self) -> CliResult<LinfBudget> {
        self.budget.to_budget()
    }

    pub fn templates(&self) -> CliResult<TemplateSet> {
        TemplateSet::load(
            self.templates.judging.as_deref(),
            self.templates.rephrase.as_deref(),
            self.templates.bias.as_deref(),
        )
        .map_err(|e| CliError::config(e.to_string()))
    }

    /// Resolves the corpus token, trimming to the first `corpus_m`
    /// sentences. Resolution failures are config errors.
    pub fn corpus(&self) -> CliResult<Corpus> {
        let as_config = |e: redteam_core::Error| CliError::config(e.to_string());
        let full = match self.corpus.as_str() {
            "default" => {
                return build_default_corpus(CorpusGenerator::BuiltIn, self.corpus_m)
                    .map_err(as_config)
            }
            "nested_fiction" | "in_context" => Corpus::by_name(&self.corpus).map_err(as_config)?,
            token => {
                if let Some(path) = token.strip_prefix("file:") {
                    Corpus::from_file(path).map_err(as_config)?
                } else if let Some(class) = token.strip_prefix("robustness_targeted:") {
                    build_robustness_corpus(
                        RobustnessMode::Targeted,
                        class,
                        &DEFAULT_CLASS_POOL,
                        self.corpus_m,
                    )
                    .map_err(as_config)?
                } else if token == "robustness_untargeted" {
                    build_robustness_corpus(
                        RobustnessMode::Untargeted,
                        "",
                        &DEFAULT_CLASS_POOL,
                        self.corpus_m,
                    )
                    .map_err(as_config)?
                } else {
                    return Err(CliError::config(format!(
                        "corpus token {token:?} is not a shipped corpus name, file:<path>, \
                         robustness_targeted:<class>, or robustness_untargeted"
                    )));
                }
            }
        };
        if self.corpus_m > full.len() {
            return Err(CliError::config(format!(
                "corpus_m = {} exceeds the {} sentences of corpus {:?}",
                self.corpus_m,
                full.len(),
                full.name()
            )));
        }
        Corpus::new(
            format!("{}[..{}]", full.name(), self.corpus_m),
            full.kind(),
            full.sentences()[..self.corpus_m].to_vec(),
        )
        .map_err(as_config)
    }

    pub fn to_run_config(&self) -> CliResult<RunConfig> {
        Ok(RunConfig {
            target: self.target.clone(),
            attacker: self.attacker.clone(),
            judge: self.judge.clone(),
            adversarial_image_path: self.adversarial_image.clone(),
            rounds: self.rounds,
            budget: self.budget()?,
            mode: self.mode,
            source_scenario: self.source_scenario,
            seed: self.seed,
            parallelism: self.parallelism,
            max_new_tokens: self.max_new_tokens,
            target_temperature: self.target_temperature,
            attacker_temperature: self.attacker_temperature,
        })
    }

    /// Where artifacts go; created on demand.
    pub fn resolved_out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    /// True if any configured backend would talk to the network.
    pub fn uses_network(&self) -> bool {
        self.target.is_remote()
            || self.attacker.is_remote()
            || self.judge.is_remote()
            || self
                .source_model
                .as_ref()
                .is_some_and(ModelSelector::is_remote)
    }
}
