//! Learning-progress prediction: the tri-directional mixing encoder over the
//! KC-interaction matrix, the per-concept reweighting, and the progress
//! vector Q.
//!
//! A history window is embedded into a (channel × sequence × feature) tensor:
//! channel 0 holds concept embeddings (mean over the concepts an exercise
//! covers), channel 1 the interaction embedding of the response. After layer
//! normalization, three mixing branches each run a two-layer dense stack with
//! GELU along one axis (sequence, feature, channel) and the branch outputs
//! are summed. The hidden state at the last position is projected and dotted
//! with every concept embedding; independent sigmoids turn the similarities
//! into occurrence scores.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{ExerciseBank, StudentHistory};
use crate::optim::{Adam, Grads, ParamSet};
use crate::seed::sub_seed;
use crate::tape::{NodeId, Tape, Tensor3};
use crate::{Error, Result};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct ProgressConfig {
    /// Embedding size d.
    pub embed_dim: usize,
    /// Window length l; shorter windows are left-padded with the null token.
    pub window: usize,
    /// Hidden size of the mixing stacks.
    pub hidden: usize,
    /// Number of stacked mixing layers.
    pub layers: usize,
    /// Negative samples per positive term.
    pub neg_samples: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for ProgressConfig {
    fn default() -> Self {
        ProgressConfig {
            embed_dim: 8,
            window: 15,
            hidden: 16,
            layers: 1,
            neg_samples: 1,
            learning_rate: 1e-4,
            batch_size: 256,
        }
    }
}

impl ProgressConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0
            || self.window == 0
            || self.hidden == 0
            || self.layers == 0
            || self.learning_rate <= 0.0
            || self.batch_size == 0
        {
            return Err(Error::InvalidConfig("progress config fields must be positive".into()));
        }
        Ok(())
    }
}

/// One window step: covered concepts plus the binary response.
#[derive(Debug, Clone)]
pub struct WindowStep {
    pub concepts: Vec<usize>,
    pub response: u8,
}

/// One training sample: a window and the concepts of the following step.
#[derive(Debug, Clone)]
pub struct ProgressSample {
    pub window: Vec<WindowStep>,
    pub targets: Vec<usize>,
}

/// Per-concept occurrence and correct counts over a history.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptStats {
    pub occurrences: Vec<u64>,
    pub correct: Vec<u64>,
}

impl ConceptStats {
    pub fn from_history(bank: &ExerciseBank, history: &StudentHistory) -> Result<Self> {
        let mut occurrences = vec![0u64; bank.n_concepts];
        let mut correct = vec![0u64; bank.n_concepts];
        for r in &history.records {
            let ex = bank.get(r.exercise_id).ok_or(Error::UnknownExercise(r.exercise_id))?;
            for c in ex.concepts() {
                occurrences[c] += 1;
                if r.response == 1 {
                    correct[c] += 1;
                }
            }
        }
        Ok(ConceptStats { occurrences, correct })
    }
}

/// w_i = 1 − α_i/ν_i when the concept was seen, else 1.
pub fn concept_weights(stats: &ConceptStats) -> Vec<f64> {
    stats
        .occurrences
        .iter()
        .zip(&stats.correct)
        .map(|(&nu, &alpha)| if nu > 0 { 1.0 - alpha as f64 / nu as f64 } else { 1.0 })
        .collect()
}

/// q_i = o_i · w_i.
pub fn learning_progress(scores: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    if scores.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "progress: {} scores vs {} weights",
            scores.len(),
            weights.len()
        )));
    }
    Ok(scores.iter().zip(weights).map(|(o, w)| o * w).collect())
}

pub struct ProgressModel {
    pub config: ProgressConfig,
    pub n_concepts: usize,
    pub params: ParamSet,
}

struct Leaves {
    concept_emb: NodeId,
    inter_emb: NodeId,
    ln_gain: NodeId,
    ln_shift: NodeId,
    mixers: Vec<Vec<NodeId>>,
    head_w: NodeId,
    head_b: NodeId,
}

const PAD_RESPONSE: usize = 2;

impl ProgressModel {
    pub fn new(n_concepts: usize, config: ProgressConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "progress-init"));
        let (d, l, r) = (config.embed_dim, config.window, config.hidden);
        let mut params = ParamSet::new();
        let s = 0.1;
        params.add_uniform("concept_emb", vec![n_concepts + 1, d], s, &mut rng);
        params.add_uniform("inter_emb", vec![3, d], s, &mut rng);
        params.add("ln_gain", vec![d], vec![1.0; d]);
        params.add_zeros("ln_shift", vec![d]);
        for layer in 0..config.layers {
            for (axis, n_in) in [("seq", l), ("feat", d), ("chan", 2)] {
                params.add_uniform(&format!("{axis}_w1.{layer}"), vec![r, n_in], s, &mut rng);
                params.add_zeros(&format!("{axis}_b1.{layer}"), vec![r]);
                params.add_uniform(&format!("{axis}_w2.{layer}"), vec![n_in, r], s, &mut rng);
                params.add_zeros(&format!("{axis}_b2.{layer}"), vec![n_in]);
            }
        }
        params.add_uniform("head_w", vec![d, d], s, &mut rng);
        params.add_zeros("head_b", vec![d]);
        Ok(ProgressModel { config, n_concepts, params })
    }

    pub fn from_params(n_concepts: usize, config: ProgressConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        Ok(ProgressModel { config, n_concepts, params })
    }

    fn leaves(&self, tape: &mut Tape) -> (Leaves, Vec<usize>) {
        let mut order = Vec::new();
        let leaf = |tape: &mut Tape, name: &str, order: &mut Vec<usize>| {
            let idx = self.params.index_of(name).expect("param registered in new()");
            order.push(idx);
            tape.leaf(self.params.get(idx).to_vec())
        };
        let concept_emb = leaf(tape, "concept_emb", &mut order);
        let inter_emb = leaf(tape, "inter_emb", &mut order);
        let ln_gain = leaf(tape, "ln_gain", &mut order);
        let ln_shift = leaf(tape, "ln_shift", &mut order);
        let mut mixers = Vec::new();
        for layer in 0..self.config.layers {
            let mut ids = Vec::with_capacity(12);
            for axis in ["seq", "feat", "chan"] {
                for part in ["w1", "b1", "w2", "b2"] {
                    ids.push(leaf(tape, &format!("{axis}_{part}.{layer}"), &mut order));
                }
            }
            mixers.push(ids);
        }
        let head_w = leaf(tape, "head_w", &mut order);
        let head_b = leaf(tape, "head_b", &mut order);
        (Leaves { concept_emb, inter_emb, ln_gain, ln_shift, mixers, head_w, head_b }, order)
    }

    /// Stack a window into the (2, l, d) KC-interaction tensor node.
    fn kc_interaction_node(&self, tape: &mut Tape, leaves: &Leaves, window: &[WindowStep]) -> Result<NodeId> {
        let (d, l) = (self.config.embed_dim, self.config.window);
        if window.len() > l {
            return Err(Error::ShapeMismatch(format!("window {} longer than {}", window.len(), l)));
        }
        let pad = l - window.len();
        let mut rows = Vec::with_capacity(2 * l);
        // channel 0: concept embeddings
        for t in 0..l {
            if t < pad {
                rows.push(tape.slice(leaves.concept_emb, self.n_concepts * d, d));
            } else {
                let step = &window[t - pad];
                if step.concepts.is_empty() {
                    return Err(Error::EmptyConceptList(0));
                }
                let mut acc = None;
                for &c in &step.concepts {
                    if c >= self.n_concepts {
                        return Err(Error::UnknownConcept(c as u32));
                    }
                    let row = tape.slice(leaves.concept_emb, c * d, d);
                    acc = Some(match acc {
                        None => row,
                        Some(a) => tape.add(a, row),
                    });
                }
                let summed = acc.unwrap();
                rows.push(tape.scale(summed, 1.0 / step.concepts.len() as f64));
            }
        }
        // channel 1: interaction embeddings
        for t in 0..l {
            let idx = if t < pad { PAD_RESPONSE } else { window[t - pad].response as usize };
            rows.push(tape.slice(leaves.inter_emb, idx * d, d));
        }
        Ok(tape.stack_rows(rows, d))
    }

    /// Full encoder: returns the pre-sigmoid similarity scores (length N_k).
    fn scores_node(&self, tape: &mut Tape, leaves: &Leaves, window: &[WindowStep]) -> Result<NodeId> {
        let (d, l, r) = (self.config.embed_dim, self.config.window, self.config.hidden);
        let x = self.kc_interaction_node(tape, leaves, window)?;
        let mut y = tape.layer_norm(x, leaves.ln_gain, leaves.ln_shift, LN_EPS);
        let dims = [2, l, d];
        for ids in &leaves.mixers {
            let (sw1, sb1, sw2, sb2) = (ids[0], ids[1], ids[2], ids[3]);
            let (fw1, fb1, fw2, fb2) = (ids[4], ids[5], ids[6], ids[7]);
            let (cw1, cb1, cw2, cb2) = (ids[8], ids[9], ids[10], ids[11]);
            let branch = |tape: &mut Tape, w1, b1, w2, b2, axis: usize, n_in: usize| {
                let h = tape.axis_dense(y, w1, b1, dims, axis, r);
                let mut hd = dims;
                hd[axis] = r;
                let a = tape.gelu(h);
                tape.axis_dense(a, w2, b2, hd, axis, n_in)
            };
            let yp = branch(tape, sw1, sb1, sw2, sb2, 1, l);
            let yf = branch(tape, fw1, fb1, fw2, fb2, 2, d);
            let yc = branch(tape, cw1, cb1, cw2, cb2, 0, 2);
            let pf = tape.add(yp, yf);
            y = tape.add(pf, yc);
        }
        let last0 = tape.slice(y, (l - 1) * d, d);
        let last1 = tape.slice(y, l * d + (l - 1) * d, d);
        let pooled = tape.add(last0, last1);
        let h = tape.dense(leaves.head_w, leaves.head_b, pooled, d, d);
        let emb_main = tape.slice(leaves.concept_emb, 0, self.n_concepts * d);
        Ok(tape.matmul(emb_main, h, self.n_concepts, d, 1, false, false))
    }

    /// Per-concept occurrence scores o ∈ (0,1)^{N_k} for the last window of a
    /// history.
    pub fn predict_next_concept_scores(&self, bank: &ExerciseBank, history: &StudentHistory) -> Result<Vec<f64>> {
        if history.records.is_empty() {
            return Err(Error::EmptyHistory(history.student_id));
        }
        let window = self.last_window(bank, history)?;
        let mut tape = Tape::new();
        let (leaves, _) = self.leaves(&mut tape);
        let scores = self.scores_node(&mut tape, &leaves, &window)?;
        let o = tape.sigmoid(scores);
        Ok(tape.data(o).to_vec())
    }

    /// Q = o ⊙ w for a student, combining the encoder output with the
    /// weights from their full history.
    pub fn progress_vector(&self, bank: &ExerciseBank, history: &StudentHistory) -> Result<Vec<f64>> {
        let o = self.predict_next_concept_scores(bank, history)?;
        let stats = ConceptStats::from_history(bank, history)?;
        learning_progress(&o, &concept_weights(&stats))
    }

    fn last_window(&self, bank: &ExerciseBank, history: &StudentHistory) -> Result<Vec<WindowStep>> {
        let l = self.config.window;
        let start = history.records.len().saturating_sub(l);
        history.records[start..]
            .iter()
            .map(|r| {
                let ex = bank.get(r.exercise_id).ok_or(Error::UnknownExercise(r.exercise_id))?;
                Ok(WindowStep { concepts: ex.concepts().collect(), response: r.response })
            })
            .collect()
    }

    /// Sliding stride-1 windows over every history.
    pub fn training_samples(&self, bank: &ExerciseBank, histories: &[StudentHistory]) -> Result<Vec<ProgressSample>> {
        let l = self.config.window;
        let mut samples = Vec::new();
        for h in histories {
            for i in 1..h.records.len() {
                let start = i.saturating_sub(l);
                let window = h.records[start..i]
                    .iter()
                    .map(|r| {
                        let ex = bank.get(r.exercise_id).ok_or(Error::UnknownExercise(r.exercise_id))?;
                        Ok(WindowStep { concepts: ex.concepts().collect(), response: r.response })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let target_ex =
                    bank.get(h.records[i].exercise_id).ok_or(Error::UnknownExercise(h.records[i].exercise_id))?;
                samples.push(ProgressSample { window, targets: target_ex.concepts().collect() });
            }
        }
        Ok(samples)
    }

    /// Negative-sampled cross-entropy over a set of samples (summed, not
    /// averaged). Returns the loss value and parameter gradients.
    pub fn loss_and_grads(&self, samples: &[ProgressSample], rng: &mut impl Rng) -> Result<(f64, Grads)> {
        let mut tape = Tape::new();
        let (leaves, order) = self.leaves(&mut tape);
        let mut total: Option<NodeId> = None;
        for sample in samples {
            let scores = self.scores_node(&mut tape, &leaves, &sample.window)?;
            for &p in &sample.targets {
                let sp = tape.slice(scores, p, 1);
                let lp = tape.log_sigmoid(sp);
                let mut term = tape.scale(lp, -1.0);
                for _ in 0..self.config.neg_samples {
                    if let Some(neg) = sample_negative(self.n_concepts, &sample.targets, rng) {
                        let sn = tape.slice(scores, neg, 1);
                        let nsn = tape.scale(sn, -1.0);
                        let ln = tape.log_sigmoid(nsn);
                        let nl = tape.scale(ln, -1.0);
                        term = tape.add(term, nl);
                    }
                }
                total = Some(match total {
                    None => term,
                    Some(t) => tape.add(t, term),
                });
            }
        }
        let total = total.ok_or(Error::EmptyCorpus)?;
        let loss = tape.scalar(total);
        if !loss.is_finite() {
            return Err(Error::DivergedLoss);
        }
        let node_grads = tape.backward(total);
        let mut grads = Grads::zeros_like(&self.params);
        for (leaf_pos, &param_idx) in order.iter().enumerate() {
            grads.accumulate(param_idx, &node_grads[leaf_pos]);
        }
        Ok((loss, grads))
    }
}

fn sample_negative(n_concepts: usize, targets: &[usize], rng: &mut impl Rng) -> Option<usize> {
    if targets.len() >= n_concepts {
        return None;
    }
    loop {
        let c = rng.random_range(0..n_concepts);
        if !targets.contains(&c) {
            return Some(c);
        }
    }
}

/// Train with Adam; per-epoch mean per-sample loss is recorded.
pub fn train_progress(
    bank: &ExerciseBank,
    histories: &[StudentHistory],
    config: &ProgressConfig,
    seed: u64,
    epochs: usize,
) -> Result<(ProgressModel, Vec<f64>)> {
    let model = ProgressModel::new(bank.n_concepts, config.clone(), seed)?;
    train_progress_model(model, bank, histories, seed, epochs)
}

/// Continue training an existing model (checkpoint resume path).
pub fn train_progress_model(
    mut model: ProgressModel,
    bank: &ExerciseBank,
    histories: &[StudentHistory],
    seed: u64,
    epochs: usize,
) -> Result<(ProgressModel, Vec<f64>)> {
    let samples = model.training_samples(bank, histories)?;
    if samples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "progress-train"));
    let mut opt = Adam::new(model.config.learning_rate, &model.params);
    let mut trace = Vec::with_capacity(epochs);
    let batch = model.config.batch_size;
    let mut indices: Vec<usize> = (0..samples.len()).collect();
    for _ in 0..epochs {
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in indices.chunks(batch) {
            let chunk_samples: Vec<ProgressSample> =
                chunk.iter().map(|&i| samples[i].clone()).collect();
            let (loss, mut grads) = model.loss_and_grads(&chunk_samples, &mut rng)?;
            if !grads.is_finite() {
                return Err(Error::DivergedLoss);
            }
            grads.scale(1.0 / chunk.len() as f64);
            opt.step(&mut model.params, &grads);
            epoch_loss += loss;
        }
        trace.push(epoch_loss / samples.len() as f64);
    }
    Ok((model, trace))
}

/// Assemble the KC-interaction matrix outside the tape (inspection surface).
pub fn build_kc_interaction(
    model: &ProgressModel,
    window: &[WindowStep],
) -> Result<Tensor3> {
    let mut tape = Tape::new();
    let (leaves, _) = model.leaves(&mut tape);
    let node = model.kc_interaction_node(&mut tape, &leaves, window)?;
    Ok(Tensor3 { dims: [2, model.config.window, model.config.embed_dim], data: tape.data(node).to_vec() })
}
