//! Exercise bank, concept coverage vectors and student interaction logs.
//!
//! Interchange formats:
//! - `bank.csv`: header `exercise_id,concept_ids`, concept ids `;`-separated.
//! - `log.csv`: header `student_id,exercise_id,response,step`.
//!
//! Loaded corpora are immutable after construction and safe to share across
//! threads; the loaders themselves are single-threaded.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

/// One exercise with its binary concept-coverage vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exercise {
    pub id: u32,
    pub kc_vector: Vec<u8>,
}

impl Exercise {
    /// Indices of the concepts this exercise covers.
    pub fn concepts(&self) -> impl Iterator<Item = usize> + '_ {
        self.kc_vector
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(|(i, _)| i)
    }
}

/// The full exercise bank with dense ids and a fixed concept count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExerciseBank {
    pub exercises: Vec<Exercise>,
    pub n_concepts: usize,
}

impl ExerciseBank {
    pub fn n_exercises(&self) -> usize {
        self.exercises.len()
    }

    pub fn get(&self, id: u32) -> Option<&Exercise> {
        self.exercises.get(id as usize)
    }
}

/// One attempt: which exercise, whether it was answered correctly, and when.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InteractionRecord {
    pub exercise_id: u32,
    pub response: u8,
    pub step: u32,
}

/// Ordered interaction log of a single student.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudentHistory {
    pub student_id: u32,
    pub records: Vec<InteractionRecord>,
}

fn parse_u32(s: &str, row: usize) -> Result<u32> {
    s.trim()
        .parse::<u32>()
        .map_err(|_| Error::MalformedRow { row, reason: format!("bad integer {s:?}") })
}

/// Load an exercise bank from `bank.csv`.
///
/// `n_concepts` defaults to (max concept id)+1 when `None`; real logs may omit
/// trailing concepts, so an explicit override is allowed.
pub fn load_bank(path: &Path, n_concepts: Option<usize>) -> Result<ExerciseBank> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows: Vec<(u32, Vec<u32>)> = Vec::new();
    let mut max_concept: Option<u32> = None;
    for (i, record) in reader.records().enumerate() {
        let row = i + 2; // 1-based, after the header
        let record = record?;
        if record.len() != 2 {
            return Err(Error::MalformedRow { row, reason: format!("expected 2 fields, got {}", record.len()) });
        }
        let id = parse_u32(&record[0], row)?;
        let concept_field = record[1].trim();
        if concept_field.is_empty() {
            return Err(Error::EmptyConceptList(id));
        }
        let mut concepts = Vec::new();
        for part in concept_field.split(';') {
            let c = parse_u32(part, row)?;
            max_concept = Some(max_concept.map_or(c, |m: u32| m.max(c)));
            concepts.push(c);
        }
        rows.push((id, concepts));
    }
    let n_concepts = match n_concepts {
        Some(n) => n,
        None => max_concept.map_or(0, |m| m as usize + 1),
    };
    let mut seen = HashSet::new();
    let mut exercises = Vec::with_capacity(rows.len());
    for (id, concepts) in rows {
        if !seen.insert(id) {
            return Err(Error::DuplicateId(id));
        }
        let mut kc_vector = vec![0u8; n_concepts];
        for c in concepts {
            if c as usize >= n_concepts {
                return Err(Error::UnknownConcept(c));
            }
            kc_vector[c as usize] = 1;
        }
        exercises.push(Exercise { id, kc_vector });
    }
    // Dense ids: after sorting, ids must be exactly 0..n.
    exercises.sort_by_key(|e| e.id);
    for (i, e) in exercises.iter().enumerate() {
        if e.id as usize != i {
            return Err(Error::MalformedRow { row: 0, reason: format!("ids not dense: missing id {i}") });
        }
    }
    Ok(ExerciseBank { exercises, n_concepts })
}

/// Load student histories from `log.csv`, grouping by student and sorting by
/// step. Unknown exercises are hard errors: silent drops would corrupt the
/// per-concept occurrence counts downstream.
pub fn load_histories(path: &Path, bank: &ExerciseBank) -> Result<Vec<StudentHistory>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut by_student: BTreeMap<u32, Vec<InteractionRecord>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record?;
        if record.len() != 4 {
            return Err(Error::MalformedRow { row, reason: format!("expected 4 fields, got {}", record.len()) });
        }
        let student = parse_u32(&record[0], row)?;
        let exercise_id = parse_u32(&record[1], row)?;
        let response = record[2]
            .trim()
            .parse::<i64>()
            .map_err(|_| Error::MalformedRow { row, reason: format!("bad integer {:?}", &record[2]) })?;
        let step = parse_u32(&record[3], row)?;
        if bank.get(exercise_id).is_none() {
            return Err(Error::UnknownExercise(exercise_id));
        }
        if response != 0 && response != 1 {
            return Err(Error::NonBinaryResponse { student, response });
        }
        by_student.entry(student).or_default().push(InteractionRecord {
            exercise_id,
            response: response as u8,
            step,
        });
    }
    let mut histories = Vec::with_capacity(by_student.len());
    for (student_id, mut records) in by_student {
        records.sort_by_key(|r| r.step);
        for pair in records.windows(2) {
            if pair[0].step == pair[1].step {
                return Err(Error::DuplicateStep { student: student_id, step: pair[0].step });
            }
        }
        histories.push(StudentHistory { student_id, records });
    }
    Ok(histories)
}

/// Write a bank back out in the `bank.csv` format. `load(save(x)) == x`.
pub fn save_bank(bank: &ExerciseBank, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "exercise_id,concept_ids")?;
    for e in &bank.exercises {
        let concepts: Vec<String> = e.concepts().map(|c| c.to_string()).collect();
        writeln!(out, "{},{}", e.id, concepts.join(";"))?;
    }
    Ok(())
}

/// Write histories in the `log.csv` format.
pub fn save_histories(histories: &[StudentHistory], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "student_id,exercise_id,response,step")?;
    for h in histories {
        for r in &h.records {
            writeln!(out, "{},{},{},{}", h.student_id, r.exercise_id, r.response, r.step)?;
        }
    }
    Ok(())
}
