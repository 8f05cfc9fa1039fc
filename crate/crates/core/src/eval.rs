//! Recommendation-quality metrics, a latent-skill synthetic corpus
//! generator, and report emission.
//!
//! The metric formulas are deliberate local definitions (difficulty-window
//! accuracy, correctness/threshold novelty, Jaccard-complement diversity):
//! the quantities are standard but admit many formulas, so each takes its
//! thresholds as arguments and can be swapped without touching the pipeline.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rand::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Exercise, ExerciseBank, InteractionRecord, StudentHistory};
use crate::seed::rng_for;
use crate::{Error, Result};

pub const DEFAULT_DIFFICULTY_TOLERANCE: f64 = 0.2;
pub const DEFAULT_MASTERY_THRESHOLD: f64 = 0.6;

/// Fraction of the list whose difficulty lands within `tolerance` of the
/// desired level `delta`.
pub fn accuracy_metric(difficulties: &[f64], delta: f64, tolerance: f64) -> Result<f64> {
    if difficulties.is_empty() {
        return Err(Error::EmptyList);
    }
    let hits = difficulties.iter().filter(|d| (*d - delta).abs() <= tolerance).count();
    Ok(hits as f64 / difficulties.len() as f64)
}

/// Fraction of concept slots in the list that are novel for the student: the
/// concept was never answered correctly in their history, or its mastery is
/// still below `threshold`. Each covered concept of each listed exercise is
/// one slot.
pub fn novelty_metric(
    list: &[&Exercise],
    correct_concepts: &HashSet<usize>,
    mastery: &[f64],
    threshold: f64,
) -> Result<f64> {
    if list.is_empty() {
        return Err(Error::EmptyList);
    }
    let mut slots = 0usize;
    let mut novel = 0usize;
    for ex in list {
        for c in ex.concepts() {
            if c >= mastery.len() {
                return Err(Error::UnknownConcept(c as u32));
            }
            slots += 1;
            let seen_and_mastered = correct_concepts.contains(&c) && mastery[c] >= threshold;
            if !seen_and_mastered {
                novel += 1;
            }
        }
    }
    if slots == 0 {
        return Err(Error::EmptyList);
    }
    Ok(novel as f64 / slots as f64)
}

fn jaccard(a: &HashSet<usize>, b: &HashSet<usize>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.union(b).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// 1 − mean pairwise Jaccard similarity of the listed concept sets. A
/// single-item list has no pairs and scores 0.
pub fn diversity_metric(list: &[&Exercise]) -> Result<f64> {
    if list.is_empty() {
        return Err(Error::EmptyList);
    }
    if list.len() == 1 {
        return Ok(0.0);
    }
    let sets: Vec<HashSet<usize>> = list.iter().map(|e| e.concepts().collect()).collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            total += jaccard(&sets[i], &sets[j]);
            pairs += 1;
        }
    }
    Ok(1.0 - total / pairs as f64)
}

/// Concepts the student has answered correctly at least once.
pub fn correct_concept_set(bank: &ExerciseBank, history: &StudentHistory) -> Result<HashSet<usize>> {
    let mut set = HashSet::new();
    for r in &history.records {
        if r.response == 1 {
            let ex = bank.get(r.exercise_id).ok_or(Error::UnknownExercise(r.exercise_id))?;
            set.extend(ex.concepts());
        }
    }
    Ok(set)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub concepts: usize,
    pub exercises: usize,
    pub students: usize,
    pub steps: usize,
    /// Max covered concepts per generated exercise (min is 1).
    pub max_kc: usize,
    /// Initial per-(student, concept) mastery is uniform in this range.
    pub mastery_low: f64,
    pub mastery_high: f64,
    /// Mastery gain per practice of a concept, clamped at 1.
    pub learn_increment: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            concepts: 50,
            exercises: 500,
            students: 200,
            steps: 100,
            max_kc: 3,
            mastery_low: 0.2,
            mastery_high: 0.8,
            learn_increment: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.concepts == 0 || self.exercises == 0 || self.students == 0 || self.steps == 0 {
            return Err(Error::InvalidConfig("synthetic corpus counts must be positive".into()));
        }
        if self.max_kc == 0 || self.max_kc > self.concepts {
            return Err(Error::InvalidConfig("max_kc must lie in 1..=concepts".into()));
        }
        if !(0.0..=1.0).contains(&self.mastery_low)
            || !(0.0..=1.0).contains(&self.mastery_high)
            || self.mastery_low > self.mastery_high
        {
            return Err(Error::InvalidConfig("mastery range must satisfy 0 <= low <= high <= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.learn_increment) {
            return Err(Error::InvalidConfig("learn increment must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Ground-truth latent mastery of one covered concept right after a step.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRow {
    pub student_id: u32,
    pub step: u32,
    pub concept_id: u32,
    pub mastery: f64,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub bank: ExerciseBank,
    pub histories: Vec<StudentHistory>,
    pub truth: Vec<TruthRow>,
}

/// Latent-skill simulator: each student holds per-concept mastery; the
/// probability of a correct response is the product of mastery over the
/// exercise's covered concepts (the same product form the tracer's
/// proficiency head assumes), and each practice bumps the covered concepts'
/// mastery by a fixed increment.
pub fn synth_generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let mut bank_rng = rng_for(config.seed, "synth-bank");
    let mut exercises = Vec::with_capacity(config.exercises);
    for id in 0..config.exercises {
        let mut kc = vec![0u8; config.concepts];
        let covered = bank_rng.random_range(1..=config.max_kc);
        while kc.iter().filter(|&&b| b == 1).count() < covered {
            kc[bank_rng.random_range(0..config.concepts)] = 1;
        }
        exercises.push(Exercise { id: id as u32, kc_vector: kc });
    }
    let bank = ExerciseBank { exercises, n_concepts: config.concepts };

    let mut histories = Vec::with_capacity(config.students);
    let mut truth = Vec::new();
    for sid in 0..config.students as u32 {
        let mut rng = rng_for(config.seed, &format!("synth-student-{sid}"));
        let mut mastery: Vec<f64> = (0..config.concepts)
            .map(|_| {
                if config.mastery_low == config.mastery_high {
                    config.mastery_low
                } else {
                    rng.random_range(config.mastery_low..config.mastery_high)
                }
            })
            .collect();
        let mut records = Vec::with_capacity(config.steps);
        for step in 1..=config.steps as u32 {
            let ex = &bank.exercises[rng.random_range(0..bank.exercises.len())];
            let p: f64 = ex.concepts().map(|c| mastery[c]).product();
            let response = u8::from(rng.random_range(0.0..1.0) < p);
            records.push(InteractionRecord { exercise_id: ex.id, response, step });
            for c in ex.concepts() {
                mastery[c] = (mastery[c] + config.learn_increment).min(1.0);
                truth.push(TruthRow { student_id: sid, step, concept_id: c as u32, mastery: mastery[c] });
            }
        }
        histories.push(StudentHistory { student_id: sid, records });
    }
    Ok(SynthCorpus { bank, histories, truth })
}

pub fn save_truth(truth: &[TruthRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["student_id", "step", "concept_id", "mastery"])?;
    for r in truth {
        w.write_record(&[
            r.student_id.to_string(),
            r.step.to_string(),
            r.concept_id.to_string(),
            format!("{:.17}", r.mastery),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub student_id: u32,
    pub accuracy: f64,
    pub novelty: f64,
    pub diversity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Per-student metric rows, sorted by student id for deterministic output.
pub fn emit_report(rows: &[MetricRow], path: &Path, format: ReportFormat) -> Result<()> {
    let mut sorted = rows.to_vec();
    sorted.sort_by_key(|r| r.student_id);
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_path(path)?;
            w.write_record(["student_id", "accuracy", "novelty", "diversity"])?;
            for r in &sorted {
                w.write_record(&[
                    r.student_id.to_string(),
                    format!("{:.17}", r.accuracy),
                    format!("{:.17}", r.novelty),
                    format!("{:.17}", r.diversity),
                ])?;
            }
            w.flush()?;
        }
        ReportFormat::Json => {
            let mut f = std::fs::File::create(path)?;
            let body = serde_json::to_string_pretty(&sorted)
                .map_err(|e| Error::InvalidConfig(format!("report serialization: {e}")))?;
            f.write_all(body.as_bytes())?;
            f.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn parse_report(path: &Path) -> Result<Vec<MetricRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in reader.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}
