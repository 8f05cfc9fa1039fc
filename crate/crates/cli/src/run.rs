//! Subcommand implementations. Everything here is deterministic under the
//! configured seed: per-task streams are derived with `sub_seed` labels, so
//! repeated runs produce byte-identical artifacts.

use std::io::Write;
use std::path::{Path, PathBuf};

use exrec_core::checkpoint::{self, Checkpoint};
use exrec_core::corpus::{self, Exercise, ExerciseBank, StudentHistory};
use exrec_core::eval::{
    self, accuracy_metric, diversity_metric, novelty_metric, synth_generate, MetricRow, ReportFormat,
};
use exrec_core::filter::{candidate_select, ScoredExercise};
use exrec_core::hippo::{run_er_ho, run_ho, HoConfig, Objective};
use exrec_core::mastery::{self, exercise_proficiency, MasteryModel};
use exrec_core::optim::ParamSet;
use exrec_core::progress::{self, ProgressModel};
use exrec_core::seed::{rng_for, sub_seed};
use exrec_core::{Error, Result};
use rand::prelude::*;

use crate::config::RunConfig;

pub const PROGRESS_KIND: &str = "progress-v1";
pub const MASTERY_KIND: &str = "mastery-v1";

fn ensure_out_dir(config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&config.out_dir)?;
    Ok(())
}

/// Generate the synthetic corpus and write bank.csv, log.csv, truth.csv.
pub fn cmd_synth(config: &RunConfig) -> Result<()> {
    ensure_out_dir(config)?;
    let corpus = synth_generate(&config.synth.to_core(config.seed))?;
    corpus::save_bank(&corpus.bank, &config.resolve(&config.paths.bank))?;
    corpus::save_histories(&corpus.histories, &config.resolve(&config.paths.log))?;
    eval::save_truth(&corpus.truth, &config.resolve(&config.paths.truth))?;
    Ok(())
}

fn load_corpus(config: &RunConfig) -> Result<(ExerciseBank, Vec<StudentHistory>)> {
    let bank = corpus::load_bank(&config.resolve(&config.paths.bank), None)?;
    let histories = corpus::load_histories(&config.resolve(&config.paths.log), &bank)?;
    Ok((bank, histories))
}

fn write_loss_trace(config: &RunConfig, start_epoch: u64, trace: &[f64]) -> Result<()> {
    let path = config.out_dir.join("loss_trace.csv");
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "loss"])?;
    for (i, loss) in trace.iter().enumerate() {
        w.write_record(&[(start_epoch + 1 + i as u64).to_string(), format!("{loss:.17}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Checkpoint params must match the freshly constructed model exactly in
/// names, order, and shapes before they may replace it.
fn check_params_compatible(expected: &ParamSet, ckpt: &Checkpoint, kind: &str) -> Result<()> {
    if ckpt.kind != kind {
        return Err(Error::BadCheckpoint(format!("kind {:?}, expected {kind:?}", ckpt.kind)));
    }
    if ckpt.params.names() != expected.names() {
        return Err(Error::BadCheckpoint("parameter names differ from configured model".into()));
    }
    for i in 0..expected.len() {
        if ckpt.params.shape(i) != expected.shape(i) {
            return Err(Error::BadCheckpoint(format!(
                "shape of {} differs from configured model",
                expected.names()[i]
            )));
        }
    }
    Ok(())
}

pub fn cmd_train_progress(config: &RunConfig, resume: bool) -> Result<()> {
    ensure_out_dir(config)?;
    let (bank, histories) = load_corpus(config)?;
    let ckpt_path = config.resolve(&config.paths.progress_checkpoint);
    let epochs = config.progress.epochs;
    let (start_epoch, model) = if resume {
        let ckpt = checkpoint::load(&ckpt_path)?;
        let fresh = ProgressModel::new(bank.n_concepts, config.progress.to_core(), config.seed)?;
        check_params_compatible(&fresh.params, &ckpt, PROGRESS_KIND)?;
        let model =
            ProgressModel::from_params(bank.n_concepts, config.progress.to_core(), ckpt.params)?;
        (ckpt.epoch, model)
    } else {
        (0, ProgressModel::new(bank.n_concepts, config.progress.to_core(), config.seed)?)
    };
    let (model, trace) = progress::train_progress_model(
        model,
        &bank,
        &histories,
        sub_seed(config.seed, &format!("progress-train-from-{start_epoch}")),
        epochs,
    )?;
    write_loss_trace(config, start_epoch, &trace)?;
    checkpoint::save(
        &Checkpoint {
            kind: PROGRESS_KIND.into(),
            seed: config.seed,
            epoch: start_epoch + epochs as u64,
            params: model.params,
        },
        &ckpt_path,
    )?;
    Ok(())
}

pub fn cmd_train_mastery(config: &RunConfig, resume: bool) -> Result<()> {
    ensure_out_dir(config)?;
    let (bank, histories) = load_corpus(config)?;
    let ckpt_path = config.resolve(&config.paths.mastery_checkpoint);
    let epochs = config.mastery.epochs;
    let (start_epoch, model) = if resume {
        let ckpt = checkpoint::load(&ckpt_path)?;
        let fresh = MasteryModel::new(
            bank.n_concepts,
            bank.n_exercises(),
            config.mastery.to_core(),
            config.seed,
        )?;
        check_params_compatible(&fresh.params, &ckpt, MASTERY_KIND)?;
        let model = MasteryModel::from_params(
            bank.n_concepts,
            bank.n_exercises(),
            config.mastery.to_core(),
            ckpt.params,
        )?;
        (ckpt.epoch, model)
    } else {
        let model = MasteryModel::new(
            bank.n_concepts,
            bank.n_exercises(),
            config.mastery.to_core(),
            config.seed,
        )?;
        (0, model)
    };
    let (model, trace) = mastery::train_mastery_model(
        model,
        &bank,
        &histories,
        sub_seed(config.seed, &format!("mastery-train-from-{start_epoch}")),
        epochs,
    )?;
    write_loss_trace(config, start_epoch, &trace)?;
    checkpoint::save(
        &Checkpoint {
            kind: MASTERY_KIND.into(),
            seed: config.seed,
            epoch: start_epoch + epochs as u64,
            params: model.params,
        },
        &ckpt_path,
    )?;
    Ok(())
}

fn load_progress_model(config: &RunConfig, bank: &ExerciseBank) -> Result<ProgressModel> {
    let ckpt = checkpoint::load(&config.resolve(&config.paths.progress_checkpoint))?;
    let fresh = ProgressModel::new(bank.n_concepts, config.progress.to_core(), config.seed)?;
    check_params_compatible(&fresh.params, &ckpt, PROGRESS_KIND)?;
    ProgressModel::from_params(bank.n_concepts, config.progress.to_core(), ckpt.params)
}

fn load_mastery_model(config: &RunConfig, bank: &ExerciseBank) -> Result<MasteryModel> {
    let ckpt = checkpoint::load(&config.resolve(&config.paths.mastery_checkpoint))?;
    let fresh = MasteryModel::new(
        bank.n_concepts,
        bank.n_exercises(),
        config.mastery.to_core(),
        config.seed,
    )?;
    check_params_compatible(&fresh.params, &ckpt, MASTERY_KIND)?;
    MasteryModel::from_params(
        bank.n_concepts,
        bank.n_exercises(),
        config.mastery.to_core(),
        ckpt.params,
    )
}

/// Optional command-line overrides for the optimizer.
#[derive(Debug, Clone, Copy, Default)]
pub struct HoOverrides {
    pub population: Option<usize>,
    pub iterations: Option<usize>,
    pub seed: Option<u64>,
}

fn ho_config(config: &RunConfig, overrides: HoOverrides, label: &str) -> HoConfig {
    let mut ho = config.ho.to_core(sub_seed(overrides.seed.unwrap_or(config.seed), label));
    if let Some(n) = overrides.population {
        ho.population = n;
    }
    if let Some(t) = overrides.iterations {
        ho.iterations = t;
    }
    ho
}

pub struct RecommendOutcome {
    pub candidates: Vec<ScoredExercise>,
    pub list: Vec<u32>,
    pub trace: Vec<f64>,
    pub mastery: Vec<f64>,
}

/// progress → mastery → Ω filter → ER-HO for one student.
fn recommend_for_student(
    config: &RunConfig,
    bank: &ExerciseBank,
    history: &StudentHistory,
    progress_model: &ProgressModel,
    mastery_model: &MasteryModel,
    ho: &HoConfig,
) -> Result<RecommendOutcome> {
    let q = progress_model.progress_vector(bank, history)?;
    let z = mastery_model.evaluate_history(bank, history)?;
    let candidates = candidate_select(
        bank,
        &q,
        |e| Ok(exercise_proficiency(&z, e)?.difficulty),
        config.filter.orientation()?,
        config.filter.keep,
    )?;
    let refs: Vec<&Exercise> = candidates
        .iter()
        .map(|c| bank.get(c.exercise_id).expect("candidate came from the bank"))
        .collect();
    let (list, outcome) = run_er_ho(&refs, ho)?;
    Ok(RecommendOutcome {
        candidates,
        list: list.exercise_ids,
        trace: outcome.trace,
        mastery: z,
    })
}

pub fn cmd_recommend(config: &RunConfig, student_id: u32, overrides: HoOverrides) -> Result<()> {
    ensure_out_dir(config)?;
    let (bank, histories) = load_corpus(config)?;
    let history = histories
        .iter()
        .find(|h| h.student_id == student_id)
        .ok_or(Error::EmptyHistory(student_id))?;
    let progress_model = load_progress_model(config, &bank)?;
    let mastery_model = load_mastery_model(config, &bank)?;
    let ho = ho_config(config, overrides, &format!("recommend-{student_id}"));
    let out = recommend_for_student(config, &bank, history, &progress_model, &mastery_model, &ho)?;

    let mut w = csv::Writer::from_path(config.out_dir.join("candidates.csv"))?;
    w.write_record(["rank", "exercise_id", "omega"])?;
    for (rank, c) in out.candidates.iter().enumerate() {
        w.write_record(&[(rank + 1).to_string(), c.exercise_id.to_string(), format!("{:.17}", c.omega)])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(config.out_dir.join("recommendation.csv"))?;
    w.write_record(["rank", "exercise_id"])?;
    for (rank, id) in out.list.iter().enumerate() {
        w.write_record(&[(rank + 1).to_string(), id.to_string()])?;
    }
    w.flush()?;

    write_trace(&config.out_dir.join("ho_trace.csv"), &out.trace)?;
    Ok(())
}

fn write_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "best_fitness"])?;
    for (i, v) in trace.iter().enumerate() {
        w.write_record(&[i.to_string(), format!("{v:.17}")])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    None,
    ListLen,
    Population,
}

pub struct EvaluateOptions {
    pub students: Option<Vec<u32>>,
    /// Randomly sample this many students when no explicit list is given.
    pub sample: Option<usize>,
    pub sweep: SweepMode,
    pub overrides: HoOverrides,
    pub format: ReportFormat,
}

pub fn cmd_evaluate(config: &RunConfig, opts: &EvaluateOptions) -> Result<Vec<PathBuf>> {
    ensure_out_dir(config)?;
    let (bank, histories) = load_corpus(config)?;
    let progress_model = load_progress_model(config, &bank)?;
    let mastery_model = load_mastery_model(config, &bank)?;

    let selected: Vec<&StudentHistory> = match &opts.students {
        Some(ids) => {
            let mut out = Vec::with_capacity(ids.len());
            for id in ids {
                out.push(
                    histories
                        .iter()
                        .find(|h| h.student_id == *id)
                        .ok_or(Error::EmptyHistory(*id))?,
                );
            }
            out
        }
        None => {
            let mut all: Vec<&StudentHistory> = histories.iter().collect();
            if let Some(n) = opts.sample {
                let mut rng = rng_for(config.seed, "evaluate-sample");
                all.shuffle(&mut rng);
                all.truncate(n);
                all.sort_by_key(|h| h.student_id);
            }
            all
        }
    };

    let ext = match opts.format {
        ReportFormat::Csv => "csv",
        ReportFormat::Json => "json",
    };
    let settings: Vec<(String, usize, usize)> = match opts.sweep {
        SweepMode::None => vec![(format!("report.{ext}"), config.ho.list_len, config.ho.population)],
        SweepMode::ListLen => [2usize, 5, 10, 15, 20]
            .iter()
            .map(|&l| (format!("report_list_{l}.{ext}"), l, config.ho.population))
            .collect(),
        SweepMode::Population => (1..=8)
            .map(|i| {
                let n = i * 10;
                (format!("report_pop_{n}.{ext}"), config.ho.list_len, n)
            })
            .collect(),
    };

    let mut written = Vec::with_capacity(settings.len());
    for (file_name, list_len, population) in &settings {
        let mut rows = Vec::with_capacity(selected.len());
        for history in &selected {
            let sid = history.student_id;
            let mut ho = ho_config(
                config,
                opts.overrides,
                &format!("evaluate-{sid}-d{list_len}-n{population}"),
            );
            ho.dimension = *list_len;
            ho.population = *population;
            let out =
                recommend_for_student(config, &bank, history, &progress_model, &mastery_model, &ho)?;
            let listed: Vec<&Exercise> = out
                .list
                .iter()
                .map(|id| bank.get(*id).expect("recommended from the bank"))
                .collect();
            let difficulties: Vec<f64> = listed
                .iter()
                .map(|e| Ok(exercise_proficiency(&out.mastery, e)?.difficulty))
                .collect::<Result<_>>()?;
            let correct = eval::correct_concept_set(&bank, history)?;
            rows.push(MetricRow {
                student_id: sid,
                accuracy: accuracy_metric(
                    &difficulties,
                    config.filter.target_difficulty,
                    config.filter.difficulty_tolerance,
                )?,
                novelty: novelty_metric(
                    &listed,
                    &correct,
                    &out.mastery,
                    config.filter.mastery_threshold,
                )?,
                diversity: diversity_metric(&listed)?,
            });
        }
        let path = config.out_dir.join(file_name);
        eval::emit_report(&rows, &path, opts.format)?;
        written.push(path);
    }
    Ok(written)
}

struct NegSphere;
impl Objective for NegSphere {
    fn fitness(&self, position: &[f64]) -> f64 {
        -position.iter().map(|v| v * v).sum::<f64>()
    }
}

struct NegRastrigin;
impl Objective for NegRastrigin {
    fn fitness(&self, position: &[f64]) -> f64 {
        let a = 10.0;
        -position
            .iter()
            .map(|&x| x * x - a * (2.0 * std::f64::consts::PI * x).cos() + a)
            .sum::<f64>()
    }
}

pub struct BenchRow {
    pub function: &'static str,
    pub seed: u64,
    pub initial: f64,
    pub final_value: f64,
    pub random_search: f64,
}

/// HO on sphere and Rastrigin over `seeds` seeds, against an equal-budget
/// random-search baseline. Returns the summary rows after writing files.
pub fn cmd_bench_ho(config: &RunConfig, overrides: HoOverrides, seeds: u64) -> Result<Vec<BenchRow>> {
    ensure_out_dir(config)?;
    let mut rows = Vec::new();
    for (name, objective) in [
        ("sphere", &NegSphere as &dyn Objective),
        ("rastrigin", &NegRastrigin as &dyn Objective),
    ] {
        for k in 0..seeds {
            let mut ho = ho_config(config, overrides, &format!("bench-{name}-{k}"));
            ho.lower = -5.12;
            ho.upper = 5.12;
            let out = run_ho(&BenchObjective(objective), &ho)?;
            // matched budget: init + per-iteration candidate evaluations
            let n = ho.population;
            let budget = n + ho.iterations * (2 * (n / 2) + (n - n / 2) + n);
            let mut rng = rng_for(ho.seed, "bench-random-search");
            let mut best = f64::NEG_INFINITY;
            for _ in 0..budget {
                let p: Vec<f64> = (0..ho.dimension).map(|_| rng.random_range(-5.12..5.12)).collect();
                best = best.max(objective.fitness(&p));
            }
            if k == 0 {
                write_trace(&config.out_dir.join(format!("bench_{name}_trace.csv")), &out.trace)?;
            }
            rows.push(BenchRow {
                function: name,
                seed: k,
                initial: -out.trace[0],
                final_value: -out.best_fitness,
                random_search: -best,
            });
        }
    }
    let mut w = csv::Writer::from_path(config.out_dir.join("bench_summary.csv"))?;
    w.write_record(["function", "seed", "initial", "final", "random_search"])?;
    for r in &rows {
        w.write_record(&[
            r.function.to_string(),
            r.seed.to_string(),
            format!("{:.17}", r.initial),
            format!("{:.17}", r.final_value),
            format!("{:.17}", r.random_search),
        ])?;
    }
    w.flush()?;
    Ok(rows)
}

/// Objects can't implement Objective for &dyn directly; forward through.
struct BenchObjective<'a>(&'a dyn Objective);
impl Objective for BenchObjective<'_> {
    fn fitness(&self, position: &[f64]) -> f64 {
        self.0.fitness(position)
    }
}

pub fn print_config(config: &RunConfig) -> Result<()> {
    std::io::stdout().write_all(config.to_toml().as_bytes())?;
    Ok(())
}

/// Exit-code policy: 0 ok, 2 config/validation, 3 numeric, 4 I/O.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::DivergedLoss | Error::NonFiniteGradient(_) => 3,
        Error::Io(_) | Error::Csv(_) => 4,
        _ => 2,
    }
}
