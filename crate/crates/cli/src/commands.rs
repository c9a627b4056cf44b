//! One function per subcommand. `main` parses flags, loads the config,
//! and dispatches here; everything below returns [`CliError`] so exit
//! codes stay in one place.
//!
//! `--dry-run` resolves the full pipeline — config, dataset, corpus,
//! templates, image, backends — prints the plan, and stops before any
//! model call, so remote configs can be checked without network traffic.
//! Transcript logs are flushed after every record, so an interrupted run
//! keeps everything finished up to that point.

use std::fs;
use std::path::{Path, PathBuf};

use redteam_core::eval::runner::resolve_image;
use redteam_core::eval::{
    ablation_sweep, compute_asr, load_dataset, render_report_table, run_benchmark, run_transfer,
    save_report, AblationAxis, EvaluationReport, QueryRecord, RunMode, Scenario, ScenarioOutcome,
};
use redteam_core::models::toy::ToyLvlm;
use redteam_core::models::vocab::Vocabulary;
use redteam_core::models::TargetModel;
use redteam_core::numerics::{finite_diff_grad, max_relative_error, ImageTensor};
use redteam_core::text::transcript::{
    now_ms, read_transcripts, TranscriptRecord, TranscriptWriter,
};
use redteam_core::text::{run_attack, AttackOutcome, AttackSettings};
use redteam_core::visual::{optimize_visual_prompt, save_visual_attack};

use crate::config::{AppConfig, CliError, CliResult};

fn ensure_out_dir(config: &AppConfig) -> CliResult<PathBuf> {
    let dir = config.resolved_out_dir();
    fs::create_dir_all(&dir)
        .map_err(|e| CliError::config(format!("cannot create out dir {}: {e}", dir.display())))?;
    Ok(dir)
}

fn require_dataset(config: &AppConfig) -> CliResult<Vec<QueryRecord>> {
    let path = config
        .dataset
        .as_ref()
        .ok_or_else(|| CliError::config("this command needs `dataset` in the config"))?;
    let loaded = load_dataset(path).map_err(|e| CliError::config(e.to_string()))?;
    if loaded.duplicates_dropped > 0 {
        eprintln!(
            "note: dropped {} duplicate (scenario, query) line(s)",
            loaded.duplicates_dropped
        );
    }
    Ok(loaded.records)
}

fn attack_settings(config: &AppConfig) -> AttackSettings {
    AttackSettings {
        rounds: config.rounds,
        max_new_tokens: config.max_new_tokens,
        target_temperature: config.target_temperature,
        attacker_temperature: config.attacker_temperature,
    }
}

/// Optimize the visual prompt on the configured (white-box) target and
/// write the PNG plus its JSON sidecar.
pub fn perturb(config: &AppConfig, dry_run: bool) -> CliResult<()> {
    let out = ensure_out_dir(config)?;
    let corpus = config.corpus()?;
    let budget = config.budget()?;
    let run = config.to_run_config()?;
    let origin = resolve_image(&run)?;
    let target = config.target.build();

    if dry_run {
        println!(
            "dry run ok: would optimize {} steps (epsilon {:.4}, step {:.4}) on {} \
             against corpus {:?} ({} sentences), writing to {}",
            budget.steps,
            budget.epsilon,
            budget.step_size,
            target.identity(),
            corpus.name(),
            corpus.len(),
            out.display()
        );
        return Ok(());
    }

    let result = optimize_visual_prompt(
        target.as_ref(),
        &origin,
        &corpus,
        &budget,
        config.trace_every,
    )?;
    let png_path = out.join("adversarial.png");
    let sidecar_path = save_visual_attack(&result, &corpus, &png_path)?;
    println!(
        "objective {:.6} -> {:.6} (best step {}/{})",
        result.initial_objective, result.final_objective, result.best_step, budget.steps
    );
    println!("image:   {}", png_path.display());
    println!("sidecar: {}", sidecar_path.display());
    Ok(())
}

/// Classifies a failed transcript for the exit code: protocol breakdowns
/// exit 3, everything else 2.
fn transcript_error(error: &str) -> CliError {
    if error.starts_with("judge protocol") || error.starts_with("rephrase protocol") {
        CliError::Protocol(error.to_string())
    } else {
        CliError::Runtime(redteam_core::Error::Precondition(error.to_string()))
    }
}

/// Run the judged feedback loop for one query and print the transcript.
pub fn attack(config: &AppConfig, dry_run: bool, query: &str, scenario: &str) -> CliResult<()> {
    let scenario = Scenario::from_code(scenario)
        .map_err(|_| CliError::config(format!("unknown scenario code {scenario:?}")))?;
    let out = ensure_out_dir(config)?;
    let run = config.to_run_config()?;
    let templates = config.templates()?;
    let image = resolve_image(&run)?;
    let target = config.target.build();
    let attacker = config.attacker.build();
    let judge = config.judge.build();

    if dry_run {
        println!(
            "dry run ok: would attack {} ({} rounds max) for scenario {scenario}, \
             judge {}, attacker {}",
            target.identity(),
            config.rounds,
            judge.identity(),
            attacker.identity()
        );
        return Ok(());
    }

    let started_at_ms = now_ms();
    let transcript = run_attack(
        target.as_ref(),
        attacker.as_ref(),
        judge.as_ref(),
        &templates,
        query,
        scenario,
        &image,
        &attack_settings(config),
    );
    let record = TranscriptRecord {
        record_id: format!("cli-{started_at_ms}"),
        started_at_ms,
        finished_at_ms: now_ms(),
        target_identity: target.identity(),
        attacker_identity: attacker.identity(),
        judge_identity: judge.identity(),
        transcript,
    };
    let log_path = out.join("attack_log.jsonl");
    TranscriptWriter::append_to(&log_path)?.write_record(&record)?;

    println!("{}", serde_json::to_string_pretty(&record.transcript)?);
    eprintln!("appended to {}", log_path.display());
    match (&record.transcript.outcome, &record.transcript.error) {
        (AttackOutcome::Error, Some(error)) => Err(transcript_error(error)),
        _ => Ok(()),
    }
}

/// Benchmark the whole dataset; write report JSON, transcripts, and print
/// the per-scenario table.
pub fn bench(config: &AppConfig, dry_run: bool) -> CliResult<()> {
    let out = ensure_out_dir(config)?;
    let records = require_dataset(config)?;
    let run = config.to_run_config()?;
    let templates = config.templates()?;
    let _ = resolve_image(&run)?; // fail early on a bad image

    if dry_run {
        println!(
            "dry run ok: would run {} record(s) at parallelism {} against {} (mode {:?}, N={})",
            records.len(),
            run.parallelism,
            config.target.build().identity(),
            run.mode,
            run.rounds
        );
        return Ok(());
    }

    let log_path = out.join("transcripts.jsonl");
    let report = run_benchmark(&run, &records, &templates, Some(&log_path))?;
    finish_report(&report, &out.join("report.json"))
}

/// Optimize on the white-box source model, evaluate on the configured
/// target.
pub fn transfer(config: &AppConfig, dry_run: bool) -> CliResult<()> {
    let out = ensure_out_dir(config)?;
    let source_selector = config
        .source_model
        .as_ref()
        .ok_or_else(|| CliError::config("transfer needs a [source_model] section"))?;
    let records = require_dataset(config)?;
    let corpus = config.corpus()?;
    let budget = config.budget()?;
    let mut run = config.to_run_config()?;
    run.mode = RunMode::Transfer;
    let templates = config.templates()?;
    let source = source_selector.build();
    let destination = config.target.build();

    if dry_run {
        println!(
            "dry run ok: would optimize on {} and evaluate {} record(s) on {}",
            source.identity(),
            records.len(),
            destination.identity()
        );
        return Ok(());
    }

    let log_path = out.join("transfer_transcripts.jsonl");
    let report = run_transfer(
        source.as_ref(),
        destination.as_ref(),
        &corpus,
        &budget,
        &records,
        &run,
        &templates,
        Some(&log_path),
    )?;
    finish_report(&report, &out.join("transfer_report.json"))
}

/// Sweep one knob and report ASR per value.
pub fn ablate(config: &AppConfig, dry_run: bool, axis: &str, values: &[String]) -> CliResult<()> {
    let axis = AblationAxis::from_token(axis).map_err(|e| CliError::config(e.to_string()))?;
    let out = ensure_out_dir(config)?;
    let records = require_dataset(config)?;
    let run = config.to_run_config()?;
    let templates = config.templates()?;

    if dry_run {
        println!(
            "dry run ok: would sweep {} over {:?} with {} record(s) each",
            axis.token(),
            values,
            records.len()
        );
        return Ok(());
    }

    let reports = ablation_sweep(&run, axis, values, &records, &templates, Some(&out))?;
    for (value, report) in values.iter().zip(&reports) {
        println!("== {} = {value} ==", axis.token());
        println!("{}", render_report_table(report));
    }
    let path = out.join("ablation.json");
    fs::write(&path, serde_json::to_string_pretty(&reports)?).map_err(redteam_core::Error::from)?;
    eprintln!("reports: {}", path.display());
    Ok(())
}

/// Audit the toy model's closed-form gradient against central finite
/// differences across seeded fixtures.
pub fn gradcheck(base_seed: u64, fixtures: usize, dry_run: bool) -> CliResult<()> {
    if dry_run {
        println!("dry run ok: would audit {fixtures} seeded gradient fixture(s)");
        return Ok(());
    }
    let prompts = ["", "what is in the picture", "please explain"];
    let targets = [
        "sure here is the answer",
        "i will help with that",
        "the image shows a horse",
    ];
    let mut worst = 0.0f64;
    for fixture in 0..fixtures {
        let seed = base_seed + fixture as u64;
        let model = ToyLvlm::seeded(seed, 8, 8, 3, 12, Vocabulary::default_toy())
            .map_err(CliError::Runtime)?;
        let image = ImageTensor::seeded_noise(8, 8, 3, seed ^ 0x9e37_79b9);
        let prompt = prompts[fixture % prompts.len()];
        let target = targets[fixture % targets.len()];

        let analytic = model.grad_image(&image, prompt, target)?;
        let numeric = finite_diff_grad(
            |x| {
                model
                    .log_likelihood(x, prompt, target)
                    .expect("valid fixture")
            },
            &image,
            1e-4,
        )?;
        let err = max_relative_error(&analytic, &numeric)?;
        worst = worst.max(err);
        println!("fixture {fixture:>2} seed {seed:>4}: max relative error {err:.3e}");
    }
    println!("worst over {fixtures} fixtures: {worst:.3e}");
    if worst >= 1e-4 {
        return Err(CliError::Runtime(redteam_core::Error::Precondition(
            format!("gradient audit failed: {worst:.3e} >= 1e-4"),
        )));
    }
    Ok(())
}

/// Re-render the ASR table from a transcript log.
pub fn report(log: &Path) -> CliResult<()> {
    let records = read_transcripts(log).map_err(|e| CliError::config(e.to_string()))?;
    if records.is_empty() {
        return Err(CliError::config(format!(
            "{} holds no transcripts",
            log.display()
        )));
    }
    let outcomes: Vec<ScenarioOutcome> = records
        .iter()
        .map(|r| ScenarioOutcome {
            scenario: r.transcript.scenario,
            success: r.transcript.outcome == AttackOutcome::Success,
        })
        .collect();
    let summary = compute_asr(&outcomes);

    let mut identities: Vec<String> = records.iter().map(|r| r.target_identity.clone()).collect();
    identities.sort();
    identities.dedup();
    println!("log:    {}", log.display());
    println!("model:  {}", identities.join(", "));
    println!("\nscenario  attempts  successes    asr%");
    println!("--------  --------  ---------  ------");
    for (code, stats) in &summary.per_scenario {
        println!(
            "{code:<8}  {:>8}  {:>9}  {:>6.2}",
            stats.attempts, stats.successes, stats.asr_percent
        );
    }
    println!(
        "{:<8}  {:>8}  {:>9}  {:>6.2}",
        "overall", summary.overall.attempts, summary.overall.successes, summary.overall.asr_percent
    );
    Ok(())
}

fn finish_report(report: &EvaluationReport, json_path: &Path) -> CliResult<()> {
    save_report(report, json_path)?;
    println!("{}", render_report_table(report));
    eprintln!("report: {}", json_path.display());
    Ok(())
}
