//! Release gate: ten end-to-end checks covering the gradient oracle, the
//! optimizer, budget safety, the feedback loop, benchmarking, and the CLI
//! config surface. Each test prints one `PASS` line with the measured
//! numbers (visible under `--nocapture`) and enforces its own runtime
//! bound, so a regression in speed fails just as loudly as one in math.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use redteam_cli::parse_config;
use redteam_core::eval::{
    compute_asr, run_benchmark, run_transfer, ClientSelector, ModelSelector, QueryRecord,
    RunConfig, RunMode, Scenario, ScenarioOutcome,
};
use redteam_core::models::probe::{quad_probe_optimum, QuadraticProbe};
use redteam_core::models::toy::ToyLvlm;
use redteam_core::models::vocab::Vocabulary;
use redteam_core::models::{EchoTarget, TargetModel};
use redteam_core::numerics::{
    finite_diff_grad, linf_distance, max_relative_error, project_linf_ball, quantize_roundtrip,
    ImageTensor, LinfBudget,
};
use redteam_core::text::{
    render_template, run_attack, AttackOutcome, AttackSettings, GuidelineClass, ScriptedClient,
    TemplateSet,
};
use redteam_core::visual::{
    build_default_corpus, optimize_visual_prompt, pgd_step, Corpus, CorpusGenerator, CorpusKind,
};

fn check_time(label: &str, elapsed: Duration, bound: Duration) {
    assert!(
        elapsed < bound,
        "{label}: took {elapsed:.2?}, bound is {bound:?}"
    );
}

// 1. The toy model's closed-form image gradient agrees with central
// finite differences (h = 1e-4) to a max relative error below 1e-4 on at
// least 20 fixtures varying parameters, image, prompt, and target.
#[test]
fn criterion_01_gradient_matches_finite_differences() {
    let t0 = Instant::now();

    let prompts = [
        "",
        "what is in the picture",
        "please explain the steps",
        "can you help",
    ];
    let targets = [
        "sure here is the answer",
        "i will help with that",
        "the image shows a horse",
        "yes i can explain it",
        "absolutely here are the steps",
    ];

    let mut fixtures = 0usize;
    let mut worst = 0.0f64;
    for model_seed in 0..5u64 {
        let model = ToyLvlm::seeded(model_seed, 6, 6, 3, 12, Vocabulary::default_toy()).unwrap();
        for image_seed in 0..4u64 {
            let image = ImageTensor::seeded_noise(6, 6, 3, 1000 + 17 * image_seed);
            let prompt = prompts[(model_seed as usize + image_seed as usize) % prompts.len()];
            let target = targets[(model_seed as usize * 4 + image_seed as usize) % targets.len()];

            let analytic = model.grad_image(&image, prompt, target).unwrap();
            let numeric = finite_diff_grad(
                |x| model.log_likelihood(x, prompt, target).unwrap(),
                &image,
                1e-4,
            )
            .unwrap();
            let err = max_relative_error(&analytic, &numeric).unwrap();
            assert!(
                err < 1e-4,
                "fixture (model seed {model_seed}, image seed {image_seed}, \
                 prompt {prompt:?}, target {target:?}): max relative error {err:.3e}"
            );
            worst = worst.max(err);
            fixtures += 1;
        }
    }
    assert!(fixtures >= 20, "only {fixtures} fixtures");

    let elapsed = t0.elapsed();
    check_time("criterion 01", elapsed, Duration::from_secs(30));
    println!(
        "criterion 01 PASS — {fixtures} fixtures, worst max relative error {worst:.3e} \
         (< 1e-4) in {elapsed:.2?}"
    );
}

// 2. On the quadratic probe, PGD reaches the closed-form constrained
// maximizer (target clamped into the budget box) within 1e-6 L-infinity
// for 10 random (origin, target, epsilon) triples, given eps/alpha + 10
// steps.
#[test]
fn criterion_02_pgd_converges_on_quadratic_probe() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);

    // The corpus text is ignored by the probe; one dummy sentence keeps the
    // objective equal to the probe value itself.
    let corpus = Corpus::new("probe", CorpusKind::Custom, vec!["ignored".to_string()]).unwrap();

    let mut worst = 0.0f64;
    for trial in 0..10 {
        let origin = ImageTensor::seeded_noise(2, 2, 3, rng.gen());
        let target = ImageTensor::seeded_noise(2, 2, 3, rng.gen());
        let eps_units: u32 = rng.gen_range(5..=64);
        let steps = eps_units as usize + 10;
        let budget = LinfBudget::from_grid(eps_units, 1, steps).unwrap();
        let probe = QuadraticProbe::new(target.clone());

        let result = optimize_visual_prompt(&probe, &origin, &corpus, &budget, steps).unwrap();
        let optimum = quad_probe_optimum(&target, &origin, budget.epsilon).unwrap();
        let dist = linf_distance(&result.adversarial_image, &optimum).unwrap();
        assert!(
            dist < 1e-6,
            "trial {trial} (eps {eps_units}/255): final iterate is {dist:.3e} from the optimum"
        );
        worst = worst.max(dist);
    }

    let elapsed = t0.elapsed();
    check_time("criterion 02", elapsed, Duration::from_secs(5));
    println!(
        "criterion 02 PASS — 10 random triples converged, worst distance {worst:.3e} \
         (< 1e-6) in {elapsed:.2?}"
    );
}

// 3. Across 100 randomized PGD runs on the toy model, no iterate ever
// leaves the L-infinity ball or [0, 1], and the final image is
// quantization-stable (writing it to 8-bit storage changes nothing).
#[test]
fn criterion_03_budget_is_never_violated() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);

    let mut total_steps = 0usize;
    for run in 0..100 {
        let model = ToyLvlm::seeded(rng.gen(), 4, 4, 3, 8, Vocabulary::default_toy()).unwrap();
        let origin = match run % 3 {
            0 => ImageTensor::mid_gray(4, 4, 3),
            1 => ImageTensor::white(4, 4, 3),
            _ => ImageTensor::seeded_noise(4, 4, 3, rng.gen()),
        };
        let m = rng.gen_range(1..=4);
        let corpus = build_default_corpus(CorpusGenerator::BuiltIn, m).unwrap();
        let eps_units: u32 = rng.gen_range(1..=64);
        let step_units: u32 = rng.gen_range(1..=eps_units);
        let steps: usize = rng.gen_range(1..=200);
        let budget = LinfBudget::from_grid(eps_units, step_units, steps).unwrap();

        // Half the runs start from a random feasible point instead of the
        // origin, to exercise trajectories that begin at the ball surface.
        let mut current = if run % 2 == 0 {
            origin.clone()
        } else {
            let noise = ImageTensor::seeded_noise(4, 4, 3, rng.gen());
            project_linf_ball(&noise, &origin, budget.epsilon).unwrap()
        };

        for step in 0..steps {
            current = pgd_step(&model, &current, &origin, &corpus, &budget).unwrap();
            let dist = linf_distance(&current, &origin).unwrap();
            assert!(
                dist <= budget.epsilon + 1e-12,
                "run {run} step {step}: L-inf distance {dist} exceeds {}",
                budget.epsilon
            );
            assert!(
                current.data().iter().all(|&v| (0.0..=1.0).contains(&v)),
                "run {run} step {step}: pixel left [0, 1]"
            );
        }
        total_steps += steps;

        assert!(
            current.is_grid_aligned(),
            "run {run}: final iterate off-grid"
        );
        assert_eq!(
            quantize_roundtrip(&current),
            current,
            "run {run}: final image not quantization-stable"
        );
    }

    let elapsed = t0.elapsed();
    check_time("criterion 03", elapsed, Duration::from_secs(120));
    println!(
        "criterion 03 PASS — 100 runs / {total_steps} steps, every iterate in-budget and \
         in-range, finals quantization-stable, in {elapsed:.2?}"
    );
}

// 4. The full pipeline on the shipped corpus (m = 32, eps = 32/255,
// alpha = 1/255, 300 steps) strictly improves the objective and shifts
// the greedy first token for the empty prompt to the corpus-dominant one.
#[test]
fn criterion_04_objective_improves_and_decode_shifts() {
    let t0 = Instant::now();

    let model = ToyLvlm::default_toy(7);
    let corpus = build_default_corpus(CorpusGenerator::BuiltIn, 32).unwrap();
    let budget = LinfBudget::from_grid(32, 1, 300).unwrap();
    let origin = ImageTensor::mid_gray(32, 32, 3);

    // The most common first token across the corpus sentences, computed
    // from the corpus itself rather than hard-coded.
    let mut first_token_counts: HashMap<usize, usize> = HashMap::new();
    for sentence in corpus.sentences() {
        let ids = model.vocab().tokenize(sentence);
        *first_token_counts.entry(ids[0]).or_insert(0) += 1;
    }
    let (&dominant_id, &dominant_count) =
        first_token_counts.iter().max_by_key(|(_, &c)| c).unwrap();
    let dominant = model.vocab().token(dominant_id).unwrap().to_string();
    assert!(
        dominant_count * 3 > corpus.len(),
        "corpus has no clearly dominant first token; the check would be meaningless"
    );

    let before = model.generate(&origin, "", 4, 0.0).unwrap();
    let result = optimize_visual_prompt(&model, &origin, &corpus, &budget, 50).unwrap();
    let after = model
        .generate(&result.adversarial_image, "", 4, 0.0)
        .unwrap();

    assert!(
        result.final_objective > result.initial_objective,
        "objective did not strictly improve: {} -> {}",
        result.initial_objective,
        result.final_objective
    );
    let first_after = after.split_whitespace().next().unwrap_or("");
    let first_before = before.split_whitespace().next().unwrap_or("");
    assert_eq!(
        first_after, dominant,
        "greedy decode {after:?} does not open with the corpus-dominant token {dominant:?}"
    );
    assert_ne!(
        first_before, dominant,
        "origin image already decoded to the dominant token; no shift demonstrated"
    );

    let elapsed = t0.elapsed();
    check_time("criterion 04", elapsed, Duration::from_secs(60));
    println!(
        "criterion 04 PASS — objective {:.2} -> {:.2}, first token {first_before:?} -> \
         {first_after:?} (dominant {dominant:?}, {dominant_count}/{} sentences) in {elapsed:.2?}",
        result.initial_objective,
        result.final_objective,
        corpus.len()
    );
}

// 5. The judge/rephrase loop makes exactly the right number of calls:
// success at round i uses i+1 judge calls and i rephrase calls, a full
// exhaustion at N rounds uses N+1 and N, and N = 0 degenerates to a
// single judged attempt.
#[test]
fn criterion_05_feedback_loop_call_accounting() {
    let t0 = Instant::now();

    let target = EchoTarget;
    let templates = TemplateSet::default();
    let image = ImageTensor::mid_gray(2, 2, 3);
    let query = "a placeholder question";

    struct Case {
        judge_script: &'static [&'static str],
        attacker_script: &'static [&'static str],
        rounds: usize,
        outcome: AttackOutcome,
        iterations: usize,
        judge_calls: usize,
        rephrase_calls: usize,
    }

    let cases = [
        // immediate success: one judged attempt, rephraser untouched
        Case {
            judge_script: &["1"],
            attacker_script: &[],
            rounds: 5,
            outcome: AttackOutcome::Success,
            iterations: 0,
            judge_calls: 1,
            rephrase_calls: 0,
        },
        // success on the fourth attempt (round 3)
        Case {
            judge_script: &["0", "0", "0", "1"],
            attacker_script: &["PROMPT: try one", "PROMPT: try two", "PROMPT: try three"],
            rounds: 5,
            outcome: AttackOutcome::Success,
            iterations: 3,
            judge_calls: 4,
            rephrase_calls: 3,
        },
        // never succeeds: N+1 judged attempts, N rewrites
        Case {
            judge_script: &["0", "0", "0", "0", "0", "0"],
            attacker_script: &[
                "PROMPT: a",
                "PROMPT: b",
                "PROMPT: c",
                "PROMPT: d",
                "PROMPT: e",
            ],
            rounds: 5,
            outcome: AttackOutcome::Exhausted,
            iterations: 5,
            judge_calls: 6,
            rephrase_calls: 5,
        },
        // N = 0 degenerates to a single judged attempt
        Case {
            judge_script: &["0"],
            attacker_script: &[],
            rounds: 0,
            outcome: AttackOutcome::Exhausted,
            iterations: 0,
            judge_calls: 1,
            rephrase_calls: 0,
        },
    ];

    for (i, case) in cases.iter().enumerate() {
        let judge = ScriptedClient::new(case.judge_script.iter().copied());
        let attacker = ScriptedClient::new(case.attacker_script.iter().copied());
        let settings = AttackSettings {
            rounds: case.rounds,
            ..AttackSettings::default()
        };
        let transcript = run_attack(
            &target,
            &attacker,
            &judge,
            &templates,
            query,
            Scenario::IA,
            &image,
            &settings,
        );
        assert_eq!(transcript.outcome, case.outcome, "case {i}: outcome");
        assert_eq!(
            transcript.iterations_used, case.iterations,
            "case {i}: iterations"
        );
        assert_eq!(
            judge.calls_made(),
            case.judge_calls,
            "case {i}: judge calls"
        );
        assert_eq!(
            attacker.calls_made(),
            case.rephrase_calls,
            "case {i}: rephrase calls"
        );
    }

    let elapsed = t0.elapsed();
    check_time("criterion 05", elapsed, Duration::from_secs(1));
    println!(
        "criterion 05 PASS — call counts (judge/rephrase) 1/0, 4/3, 6/5, 1/0 as expected \
         in {elapsed:.2?}"
    );
}

// 6. A fully scripted marker stack is deterministic end to end: ASR is
// 100.00 with enough rounds for the marker to appear, 0.00 without, and
// the report is bit-identical at parallelism 1 and 8.
#[test]
fn criterion_06_benchmark_is_deterministic() {
    let t0 = Instant::now();

    let dataset: Vec<QueryRecord> = [
        (Scenario::IA, "q1"),
        (Scenario::IA, "q2"),
        (Scenario::HS, "q3"),
        (Scenario::MG, "q4"),
        (Scenario::PL, "q5"),
        (Scenario::LO, "q6"),
    ]
    .iter()
    .map(|(scenario, id)| QueryRecord {
        id: id.to_string(),
        scenario: *scenario,
        query: format!("placeholder query {id}"),
    })
    .collect();

    let mut config = RunConfig::new(
        ModelSelector::Echo,
        ClientSelector::MarkerRephrase {
            marker: "UNLOCK".to_string(),
            inject_round: 3,
        },
        ClientSelector::MarkerJudge {
            marker: "UNLOCK".to_string(),
        },
    );
    let templates = TemplateSet::default();

    config.rounds = 5;
    let with_marker = run_benchmark(&config, &dataset, &templates, None).unwrap();
    assert_eq!(with_marker.overall.asr_percent, 100.0);

    config.rounds = 2; // marker injects on the 3rd rephrase; never reached
    let without_marker = run_benchmark(&config, &dataset, &templates, None).unwrap();
    assert_eq!(without_marker.overall.asr_percent, 0.0);

    config.rounds = 5;
    config.parallelism = 8;
    let parallel = run_benchmark(&config, &dataset, &templates, None).unwrap();
    let serial_json = serde_json::to_string(&with_marker).unwrap();
    let parallel_json = serde_json::to_string(&parallel).unwrap();
    assert_eq!(
        serial_json, parallel_json,
        "report differs between parallelism 1 and 8"
    );

    let elapsed = t0.elapsed();
    check_time("criterion 06", elapsed, Duration::from_secs(10));
    println!(
        "criterion 06 PASS — ASR 100.00 at N=5, 0.00 at N=2, byte-identical reports at \
         parallelism 1 and 8, in {elapsed:.2?}"
    );
}

// 7. Success-rate arithmetic: a mixed fixture produces the hand-computed
// per-scenario and overall percentages, and 1000 random outcome lists
// stay within bounds and are invariant under permutation.
#[test]
fn criterion_07_asr_arithmetic() {
    let t0 = Instant::now();

    let fixture = [
        ScenarioOutcome {
            scenario: Scenario::IA,
            success: true,
        },
        ScenarioOutcome {
            scenario: Scenario::IA,
            success: false,
        },
        ScenarioOutcome {
            scenario: Scenario::HS,
            success: true,
        },
    ];
    let summary = compute_asr(&fixture);
    assert_eq!(summary.per_scenario["IA"].asr_percent, 50.0);
    assert_eq!(summary.per_scenario["HS"].asr_percent, 100.0);
    assert!((summary.overall.asr_percent - 66.67).abs() < 1e-9);

    let mut rng = ChaCha8Rng::seed_from_u64(707);
    for _ in 0..1000 {
        let len = rng.gen_range(0..=50);
        let mut outcomes: Vec<ScenarioOutcome> = (0..len)
            .map(|_| ScenarioOutcome {
                scenario: Scenario::ALL[rng.gen_range(0..Scenario::ALL.len())],
                success: rng.gen(),
            })
            .collect();
        let summary = compute_asr(&outcomes);

        let mut attempts = 0;
        let mut successes = 0;
        for stats in summary.per_scenario.values() {
            assert!(stats.successes <= stats.attempts);
            assert!((0.0..=100.0).contains(&stats.asr_percent));
            attempts += stats.attempts;
            successes += stats.successes;
        }
        assert_eq!(attempts, outcomes.len());
        assert_eq!(summary.overall.attempts, attempts);
        assert_eq!(summary.overall.successes, successes);
        assert!((0.0..=100.0).contains(&summary.overall.asr_percent));

        outcomes.shuffle(&mut rng);
        let shuffled = compute_asr(&outcomes);
        assert_eq!(
            serde_json::to_string(&summary).unwrap(),
            serde_json::to_string(&shuffled).unwrap(),
            "summary changed under permutation"
        );
    }

    let elapsed = t0.elapsed();
    check_time("criterion 07", elapsed, Duration::from_secs(5));
    println!(
        "criterion 07 PASS — fixture IA 50.00 / HS 100.00 / overall 66.67, 1000 random \
         lists bounded and permutation-invariant, in {elapsed:.2?}"
    );
}

// 8. Rendered prompts carry the intended guideline language: one scenario
// per guideline class mentions its key phrase, and the rephrasing prompt
// asks for contextual deception via step-by-step reasoning.
#[test]
fn criterion_08_template_fidelity() {
    let t0 = Instant::now();

    let templates = TemplateSet::default();
    let mut slots = HashMap::new();
    slots.insert("query".to_string(), "a placeholder question".to_string());
    slots.insert("prev_prompt".to_string(), "a previous prompt".to_string());
    slots.insert("response".to_string(), "a model response".to_string());

    let expectations = [
        (
            Scenario::IA,
            GuidelineClass::IllegalUnethical,
            "illegal or unethical content",
        ),
        (
            Scenario::PL,
            GuidelineClass::PoliticalAvoidance,
            "avoids political topics",
        ),
        (
            Scenario::LO,
            GuidelineClass::DisclaimerRequired,
            "disclaimer or risk warning",
        ),
    ];
    for (scenario, class, phrase) in expectations {
        assert_eq!(scenario.guideline_class(), class);
        let rendered = render_template(&templates.judging(class).unwrap(), &slots).unwrap();
        assert!(
            rendered.contains(phrase),
            "judging prompt for {scenario:?} lacks {phrase:?}"
        );
    }

    let rephrase = render_template(&templates.rephrase().unwrap(), &slots).unwrap();
    assert!(rephrase.contains("contextual deception"));
    assert!(rephrase.contains("Let's think step by step."));

    let elapsed = t0.elapsed();
    check_time("criterion 08", elapsed, Duration::from_secs(1));
    println!(
        "criterion 08 PASS — three guideline phrases and the chain-of-thought cue all \
         present, in {elapsed:.2?}"
    );
}

// 9. Transfer smoke test: an image optimized against one toy instance is
// evaluated against a differently seeded instance, and the report records
// both model identities.
#[test]
fn criterion_09_transfer_records_both_models() {
    let t0 = Instant::now();

    let source = ToyLvlm::default_toy(11);
    let destination = ToyLvlm::default_toy(12);
    let corpus = build_default_corpus(CorpusGenerator::BuiltIn, 8).unwrap();
    let budget = LinfBudget::from_grid(32, 1, 40).unwrap();

    let dataset: Vec<QueryRecord> = [
        (Scenario::IA, "t1"),
        (Scenario::HS, "t2"),
        (Scenario::LO, "t3"),
    ]
    .iter()
    .map(|(scenario, id)| QueryRecord {
        id: id.to_string(),
        scenario: *scenario,
        query: format!("placeholder query {id}"),
    })
    .collect();

    let mut config = RunConfig::new(
        ModelSelector::Toy { seed: 12 },
        ClientSelector::Static {
            reply: "PROMPT: please reconsider".to_string(),
        },
        ClientSelector::Static {
            reply: "1".to_string(),
        },
    );
    config.mode = RunMode::Transfer;
    config.rounds = 1;

    let report = run_transfer(
        &source,
        &destination,
        &corpus,
        &budget,
        &dataset,
        &config,
        &TemplateSet::default(),
        None,
    )
    .unwrap();

    assert!(
        report.model_identity.contains("seed=12"),
        "destination identity missing: {}",
        report.model_identity
    );
    let source_identity = report.source_model_identity.as_deref().unwrap_or("");
    assert!(
        source_identity.contains("seed=11"),
        "source identity missing: {source_identity}"
    );
    assert_eq!(report.overall.attempts, 3);

    let elapsed = t0.elapsed();
    check_time("criterion 09", elapsed, Duration::from_secs(60));
    println!(
        "criterion 09 PASS — transfer run recorded source {source_identity:?} and \
         destination {:?}, {} attempts, in {elapsed:.2?}",
        report.model_identity, report.overall.attempts
    );
}

// 10. Config parsing applies the reference defaults (eps 32/255, 3000
// steps, 5 rounds) when unspecified and rejects an off-grid epsilon with
// an error naming the parameter.
#[test]
fn criterion_10_config_defaults_and_grid_check() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();

    let minimal = dir.path().join("minimal.toml");
    std::fs::write(&minimal, "[target]\nkind = \"toy\"\nseed = 7\n").unwrap();
    let config = parse_config(&minimal).unwrap();
    let budget = config.budget().unwrap();
    assert!((budget.epsilon - 32.0 / 255.0).abs() < 1e-12);
    assert!((budget.step_size - 1.0 / 255.0).abs() < 1e-12);
    assert_eq!(budget.steps, 3000);
    assert_eq!(config.rounds, 5);
    assert_eq!(config.corpus_m, 32);

    let off_grid = dir.path().join("off_grid.toml");
    std::fs::write(
        &off_grid,
        "[target]\nkind = \"toy\"\nseed = 7\n\n[budget]\nepsilon = 0.13\n",
    )
    .unwrap();
    let err = parse_config(&off_grid).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(
        err.to_string().contains("epsilon"),
        "error does not name the parameter: {err}"
    );

    let misspelled = dir.path().join("misspelled.toml");
    std::fs::write(
        &misspelled,
        "[target]\nkind = \"toy\"\nseed = 7\n\n[budget]\nepsilonn = 0.1\n",
    )
    .unwrap();
    let err = parse_config(&misspelled).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(
        err.to_string().contains("epsilonn"),
        "error does not name the unknown key: {err}"
    );

    let elapsed = t0.elapsed();
    check_time("criterion 10", elapsed, Duration::from_secs(1));
    println!(
        "criterion 10 PASS — defaults 32/255, 3000 steps, 5 rounds; off-grid epsilon and \
         unknown key both rejected with exit code 1, in {elapsed:.2?}"
    );
}
