//! One-axis ablation sweeps: rerun the benchmark while varying exactly one
//! knob, everything else (including seeds) held fixed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::dataset::QueryRecord;
use crate::eval::report::EvaluationReport;
use crate::eval::runner::{resolve_image, run_records, RunConfig};
use crate::models::TargetModel;
use crate::numerics::{load_png, ImageTensor};
use crate::text::templates::TemplateSet;
use crate::visual::{
    build_default_corpus, optimize_visual_prompt_with, Corpus, CorpusGenerator, PgdOptions,
};

/// The knob a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    /// Which sentence corpus the image is optimized on (values are the
    /// shipped corpus names).
    CorpusVariant,
    /// What image the evaluation uses: `white`, `uniform_noise`,
    /// `original`, `semantic_file:<path>`, or `optimized`.
    VisualPromptVariant,
    /// The rephrase budget N (values are integers).
    #[serde(rename = "n")]
    Rounds,
    /// Attacker sampling temperature (values are floats).
    Temperature,
}

impl AblationAxis {
    pub fn token(&self) -> &'static str {
        match self {
            AblationAxis::CorpusVariant => "corpus_variant",
            AblationAxis::VisualPromptVariant => "visual_prompt_variant",
            AblationAxis::Rounds => "n",
            AblationAxis::Temperature => "temperature",
        }
    }

    pub fn from_token(token: &str) -> Result<Self> {
        match token {
            "corpus_variant" => Ok(AblationAxis::CorpusVariant),
            "visual_prompt_variant" => Ok(AblationAxis::VisualPromptVariant),
            "n" | "rounds" => Ok(AblationAxis::Rounds),
            "temperature" => Ok(AblationAxis::Temperature),
            other => Err(Error::invalid(
                "axis",
                format!("unknown ablation axis {other:?}"),
            )),
        }
    }
}

/// Materializes one visual-prompt variant. The configured image path acts
/// as the origin; `optimized` runs the standard corpus (m = 32) under the
/// configured budget.
pub(crate) fn variant_image(
    token: &str,
    origin: &ImageTensor,
    base: &RunConfig,
    target: &dyn TargetModel,
) -> Result<ImageTensor> {
    match token {
        "white" => Ok(ImageTensor::white(
            origin.height(),
            origin.width(),
            origin.channels(),
        )),
        "uniform_noise" => Ok(ImageTensor::seeded_noise(
            origin.height(),
            origin.width(),
            origin.channels(),
            base.seed,
        )),
        "original" => Ok(origin.clone()),
        "optimized" => {
            let corpus = build_default_corpus(CorpusGenerator::BuiltIn, 32)?;
            let result = optimize_visual_prompt_with(
                target,
                origin,
                &corpus,
                &base.budget,
                &PgdOptions::default(),
            )?;
            Ok(result.adversarial_image)
        }
        other => match other.strip_prefix("semantic_file:") {
            Some(path) => load_png(path),
            None => Err(Error::invalid(
                "visual_prompt_variant",
                format!(
                    "unknown variant {other:?}; expected white, uniform_noise, original, \
                     semantic_file:<path>, or optimized"
                ),
            )),
        },
    }
}

fn transcript_file(dir: Option<&Path>, axis: AblationAxis, index: usize) -> Option<PathBuf> {
    dir.map(|d| d.join(format!("ablation_{}_{index}.jsonl", axis.token())))
}

/// Runs one report per value along the chosen axis. Digest tags record the
/// axis coordinate, so every report in the sweep is distinguishable even
/// when the config itself is unchanged (visual variants).
pub fn ablation_sweep(
    base: &RunConfig,
    axis: AblationAxis,
    values: &[String],
    dataset: &[QueryRecord],
    templates: &TemplateSet,
    transcript_dir: Option<&Path>,
) -> Result<Vec<EvaluationReport>> {
    if values.is_empty() {
        return Err(Error::invalid("values", "sweep needs at least one value"));
    }
    base.validate()?;
    let origin = resolve_image(base)?;
    let mut reports = Vec::with_capacity(values.len());

    for (index, value) in values.iter().enumerate() {
        let tag = format!("{}={value}", axis.token());
        let log = transcript_file(transcript_dir, axis, index);
        let mut config = base.clone();
        let target = config.target.build();

        let image = match axis {
            AblationAxis::Rounds => {
                config.rounds = value.parse().map_err(|_| {
                    Error::invalid("values", format!("{value:?} is not a round count"))
                })?;
                origin.clone()
            }
            AblationAxis::Temperature => {
                let t: f64 = value.parse().map_err(|_| {
                    Error::invalid("values", format!("{value:?} is not a temperature"))
                })?;
                if t.is_nan() || t < 0.0 {
                    return Err(Error::invalid("values", "temperature must be >= 0"));
                }
                config.attacker_temperature = t;
                origin.clone()
            }
            AblationAxis::CorpusVariant => {
                let corpus = Corpus::by_name(value)?;
                let result = optimize_visual_prompt_with(
                    target.as_ref(),
                    &origin,
                    &corpus,
                    &base.budget,
                    &PgdOptions::default(),
                )?;
                result.adversarial_image
            }
            AblationAxis::VisualPromptVariant => {
                variant_image(value, &origin, base, target.as_ref())?
            }
        };

        reports.push(run_records(
            &config,
            dataset,
            target.as_ref(),
            &image,
            templates,
            Some(&tag),
            None,
            log.as_deref(),
        )?);
    }
    Ok(reports)
}
