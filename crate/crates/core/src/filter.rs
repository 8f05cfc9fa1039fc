//! Candidate pre-filtering: score every exercise in the bank against the
//! learner's progress vector and keep the top slice for the optimizer.
//!
//! Ω(e) = cos(q, kc(e)) · D(e), where D is the model-assessed difficulty.
//! By default low Ω is "best" (well-aligned, currently hard exercises rank
//! first once the learner has progressed); the alternate orientation keeps
//! the highest scores instead.

use crate::corpus::{Exercise, ExerciseBank};
use crate::{Error, Result};

/// Which end of the Ω ranking counts as best.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    LowestFirst,
    HighestFirst,
}

impl Default for Orientation {
    fn default() -> Self {
        Orientation::LowestFirst
    }
}

/// cos(a, b); zero when either vector is all-zero.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "cosine: {} vs {} components",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok(dot / (na * nb))
}

/// Ω(e) = cos(q, kc(e)) · difficulty.
pub fn omega_score(progress: &[f64], exercise: &Exercise, difficulty: f64) -> Result<f64> {
    let kc: Vec<f64> = exercise.kc_vector.iter().map(|&b| b as f64).collect();
    Ok(cosine_similarity(progress, &kc)? * difficulty)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredExercise {
    pub exercise_id: u32,
    pub omega: f64,
}

/// Rank the whole bank by Ω and keep the best `keep` exercises. Ties break
/// toward the smaller exercise id; output is in rank order.
pub fn candidate_select(
    bank: &ExerciseBank,
    progress: &[f64],
    difficulty: impl Fn(&Exercise) -> Result<f64>,
    orientation: Orientation,
    keep: usize,
) -> Result<Vec<ScoredExercise>> {
    if bank.exercises.is_empty() {
        return Err(Error::EmptyBank);
    }
    if progress.len() != bank.n_concepts {
        return Err(Error::ShapeMismatch(format!(
            "progress vector has {} components, bank covers {} concepts",
            progress.len(),
            bank.n_concepts
        )));
    }
    let mut scored = Vec::with_capacity(bank.exercises.len());
    for ex in &bank.exercises {
        let omega = omega_score(progress, ex, difficulty(ex)?)?;
        if !omega.is_finite() {
            return Err(Error::NonFiniteGradient(format!("omega score for exercise {}", ex.id)));
        }
        scored.push(ScoredExercise { exercise_id: ex.id, omega });
    }
    scored.sort_by(|a, b| {
        let ord = a.omega.partial_cmp(&b.omega).expect("finite scores");
        let ord = match orientation {
            Orientation::LowestFirst => ord,
            Orientation::HighestFirst => ord.reverse(),
        };
        ord.then(a.exercise_id.cmp(&b.exercise_id))
    });
    scored.truncate(keep.min(scored.len()));
    Ok(scored)
}
