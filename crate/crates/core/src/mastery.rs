//! Memory-augmented knowledge tracing: context-aware attention encoding of
//! exercises and interactions, a persistent key/value memory that survives
//! window boundaries, and heads producing per-concept mastery Z, per-exercise
//! proficiency R and difficulty D = 1 − R.
//!
//! The value memory is per student and carried forward between consecutive
//! windows of the same history, never reset mid-history; the attention
//! context is window-local. That split is the module's reason to exist:
//! long-range signal survives segmentation through the memory.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Exercise, ExerciseBank, StudentHistory};
use crate::optim::{Adam, Grads, ParamSet};
use crate::seed::sub_seed;
use crate::tape::{softmax, Mask, NodeId, Tape};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct MasteryConfig {
    /// Embedding size d; value memory width matches it.
    pub embed_dim: usize,
    /// Memory slots N.
    pub slots: usize,
    /// Hidden width of the mastery head.
    pub hidden: usize,
    /// Attention window length L.
    pub window: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for MasteryConfig {
    fn default() -> Self {
        MasteryConfig {
            embed_dim: 8,
            slots: 20,
            hidden: 16,
            window: 20,
            learning_rate: 1e-4,
            batch_size: 24,
        }
    }
}

impl MasteryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0
            || self.slots == 0
            || self.hidden == 0
            || self.window == 0
            || self.learning_rate <= 0.0
            || self.batch_size == 0
        {
            return Err(Error::InvalidConfig("mastery config fields must be positive".into()));
        }
        Ok(())
    }
}

/// One interaction, resolved against the bank.
#[derive(Debug, Clone)]
pub struct MasteryStep {
    pub exercise_id: u32,
    pub concepts: Vec<usize>,
    pub response: u8,
}

impl MasteryStep {
    pub fn from_record(bank: &ExerciseBank, r: &crate::corpus::InteractionRecord) -> Result<Self> {
        let ex = bank.get(r.exercise_id).ok_or(Error::UnknownExercise(r.exercise_id))?;
        Ok(MasteryStep {
            exercise_id: r.exercise_id,
            concepts: ex.concepts().collect(),
            response: r.response,
        })
    }
}

/// Per-student value memory, persistent across windows (slots × d).
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState {
    pub values: Vec<f64>,
    pub slots: usize,
    pub dim: usize,
}

impl MemoryState {
    pub fn zeros(slots: usize, dim: usize) -> Self {
        MemoryState { values: vec![0.0; slots * dim], slots, dim }
    }
}

/// R = product of mastery over covered concepts; D = 1 − R.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExerciseAssessment {
    pub proficiency: f64,
    pub difficulty: f64,
}

pub fn exercise_proficiency(z: &[f64], exercise: &Exercise) -> Result<ExerciseAssessment> {
    let mut r = 1.0;
    let mut any = false;
    for c in exercise.concepts() {
        if c >= z.len() {
            return Err(Error::UnknownConcept(c as u32));
        }
        r *= z[c];
        any = true;
    }
    if !any {
        return Err(Error::EmptyConceptList(exercise.id));
    }
    Ok(ExerciseAssessment { proficiency: r, difficulty: 1.0 - r })
}

// Standalone memory formulas; the tape path computes the same quantities.

/// w_t = Softmax(M^k · u).
pub fn correlation_weights(mem_key: &[f64], u: &[f64], slots: usize) -> Result<Vec<f64>> {
    if mem_key.len() != slots * u.len() {
        return Err(Error::ShapeMismatch("correlation weights: key matrix vs query".into()));
    }
    let dim = u.len();
    let logits: Vec<f64> = (0..slots)
        .map(|s| mem_key[s * dim..(s + 1) * dim].iter().zip(u).map(|(k, v)| k * v).sum())
        .collect();
    Ok(softmax(&logits))
}

/// M^s_t = ∂·(s_t ⊗ w_t) ⊕ (1−∂)·M^s_{t−1}, the rank-1 write blended with the
/// carried memory.
pub fn memory_update(prev: &MemoryState, w: &[f64], s: &[f64], delta: f64) -> Result<MemoryState> {
    if w.len() != prev.slots || s.len() != prev.dim {
        return Err(Error::ShapeMismatch("memory update dims".into()));
    }
    let mut values = vec![0.0; prev.values.len()];
    for (slot, &wv) in w.iter().enumerate() {
        for (j, &sv) in s.iter().enumerate() {
            values[slot * prev.dim + j] = delta * wv * sv + (1.0 - delta) * prev.values[slot * prev.dim + j];
        }
    }
    Ok(MemoryState { values, slots: prev.slots, dim: prev.dim })
}

/// m_t = w_t · M^s_t.
pub fn memory_read(w: &[f64], mem: &MemoryState) -> Result<Vec<f64>> {
    if w.len() != mem.slots {
        return Err(Error::ShapeMismatch("memory read dims".into()));
    }
    let mut out = vec![0.0; mem.dim];
    for (slot, &wv) in w.iter().enumerate() {
        for (j, o) in out.iter_mut().enumerate() {
            *o += wv * mem.values[slot * mem.dim + j];
        }
    }
    Ok(out)
}

pub struct MasteryModel {
    pub config: MasteryConfig,
    pub n_concepts: usize,
    pub n_exercises: usize,
    pub params: ParamSet,
}

struct Leaves {
    concept_emb: NodeId,
    exercise_emb: NodeId,
    response_emb: NodeId,
    lambda: NodeId,
    attn_wq: NodeId,
    attn_wk: NodeId,
    attn_wv: NodeId,
    state_wq: NodeId,
    state_wk: NodeId,
    state_wv: NodeId,
    mem_key: NodeId,
    delta_raw: NodeId,
    fc1_w: NodeId,
    fc1_b: NodeId,
    fc2_w: NodeId,
    fc2_b: NodeId,
}

const PARAM_NAMES: [&str; 16] = [
    "concept_emb",
    "exercise_emb",
    "response_emb",
    "lambda",
    "attn_wq",
    "attn_wk",
    "attn_wv",
    "state_wq",
    "state_wk",
    "state_wv",
    "mem_key",
    "delta_raw",
    "fc1_w",
    "fc1_b",
    "fc2_w",
    "fc2_b",
];

struct WindowOut {
    /// Mastery vector node per step.
    z_rows: Vec<NodeId>,
    /// Memory after the window's last step.
    memory_out: NodeId,
}

impl MasteryModel {
    pub fn new(n_concepts: usize, n_exercises: usize, config: MasteryConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "mastery-init"));
        let (d, slots, h) = (config.embed_dim, config.slots, config.hidden);
        let s = 0.1;
        let mut params = ParamSet::new();
        params.add_uniform("concept_emb", vec![n_concepts, d], s, &mut rng);
        params.add_uniform("exercise_emb", vec![n_exercises, d], s, &mut rng);
        params.add_uniform("response_emb", vec![2, d], s, &mut rng);
        params.add("lambda", vec![1], vec![1.0]);
        params.add_uniform("attn_wq", vec![d, 2 * d], s, &mut rng);
        params.add_uniform("attn_wk", vec![d, 2 * d], s, &mut rng);
        params.add_uniform("attn_wv", vec![d, 2 * d], s, &mut rng);
        params.add_uniform("state_wq", vec![d, d], s, &mut rng);
        params.add_uniform("state_wk", vec![d, d], s, &mut rng);
        params.add_uniform("state_wv", vec![d, d], s, &mut rng);
        params.add_uniform("mem_key", vec![slots, 2 * d], s, &mut rng);
        params.add("delta_raw", vec![1], vec![0.0]);
        params.add_uniform("fc1_w", vec![h, 2 * d], s, &mut rng);
        params.add_zeros("fc1_b", vec![h]);
        params.add_uniform("fc2_w", vec![n_concepts, h], s, &mut rng);
        params.add_zeros("fc2_b", vec![n_concepts]);
        Ok(MasteryModel { config, n_concepts, n_exercises, params })
    }

    pub fn from_params(
        n_concepts: usize,
        n_exercises: usize,
        config: MasteryConfig,
        params: ParamSet,
    ) -> Result<Self> {
        config.validate()?;
        Ok(MasteryModel { config, n_concepts, n_exercises, params })
    }

    fn leaves(&self, tape: &mut Tape) -> (Leaves, Vec<usize>) {
        let mut order = Vec::new();
        let mut ids = Vec::new();
        for name in PARAM_NAMES {
            let idx = self.params.index_of(name).expect("param registered in new()");
            order.push(idx);
            ids.push(tape.leaf(self.params.get(idx).to_vec()));
        }
        (
            Leaves {
                concept_emb: ids[0],
                exercise_emb: ids[1],
                response_emb: ids[2],
                lambda: ids[3],
                attn_wq: ids[4],
                attn_wk: ids[5],
                attn_wv: ids[6],
                state_wq: ids[7],
                state_wk: ids[8],
                state_wv: ids[9],
                mem_key: ids[10],
                delta_raw: ids[11],
                fc1_w: ids[12],
                fc1_b: ids[13],
                fc2_w: ids[14],
                fc2_b: ids[15],
            },
            order,
        )
    }

    /// u = Softmax(k ∥ λe), g = Softmax((k⊕r) ∥ λ(e⊕r)). k is the mean
    /// embedding over the exercise's concepts.
    fn embed_pair(&self, tape: &mut Tape, leaves: &Leaves, step: &MasteryStep) -> Result<(NodeId, NodeId)> {
        let d = self.config.embed_dim;
        if step.concepts.is_empty() {
            return Err(Error::EmptyConceptList(step.exercise_id));
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
        let k = {
            let summed = acc.unwrap();
            tape.scale(summed, 1.0 / step.concepts.len() as f64)
        };
        if step.exercise_id as usize >= self.n_exercises {
            return Err(Error::UnknownExercise(step.exercise_id));
        }
        let e = tape.slice(leaves.exercise_emb, step.exercise_id as usize * d, d);
        let r = tape.slice(leaves.response_emb, step.response as usize * d, d);
        let le = tape.mul_scalar(e, leaves.lambda);
        let u_cat = tape.concat(k, le);
        let u = tape.softmax(u_cat);
        let kr = tape.add(k, r);
        let er = tape.add(e, r);
        let ler = tape.mul_scalar(er, leaves.lambda);
        let g_cat = tape.concat(kr, ler);
        let g = tape.softmax(g_cat);
        Ok((u, g))
    }

    /// Forward over one window from a carried memory. The incoming memory is
    /// a constant (gradients truncate at window boundaries).
    fn window_forward(
        &self,
        tape: &mut Tape,
        leaves: &Leaves,
        steps: &[MasteryStep],
        memory_in: &MemoryState,
    ) -> Result<WindowOut> {
        if steps.is_empty() {
            return Err(Error::EmptySequence);
        }
        let (d, slots, h) = (self.config.embed_dim, self.config.slots, self.config.hidden);
        let len = steps.len();
        let mut us = Vec::with_capacity(len);
        let mut gs = Vec::with_capacity(len);
        for step in steps {
            let (u, g) = self.embed_pair(tape, leaves, step)?;
            us.push(u);
            gs.push(g);
        }
        let u_mat = tape.stack_rows(us.clone(), 2 * d);
        let g_mat = tape.stack_rows(gs.clone(), 2 * d);
        // context encoding: causal self-attention, shared projections
        let context = |tape: &mut Tape, x: NodeId| {
            let q = tape.matmul(x, leaves.attn_wq, len, 2 * d, d, false, true);
            let k = tape.matmul(x, leaves.attn_wk, len, 2 * d, d, false, true);
            let v = tape.matmul(x, leaves.attn_wv, len, 2 * d, d, false, true);
            tape.attention(q, k, v, len, d, d, Mask::Causal)
        };
        let u_hat = context(tape, u_mat);
        let g_hat = context(tape, g_mat);
        // knowledge state: queries/keys from û, values from ĝ, strictly past
        let q2 = tape.matmul(u_hat, leaves.state_wq, len, d, d, false, true);
        let k2 = tape.matmul(u_hat, leaves.state_wk, len, d, d, false, true);
        let v2 = tape.matmul(g_hat, leaves.state_wv, len, d, d, false, true);
        let s_mat = tape.attention(q2, k2, v2, len, d, d, Mask::StrictCausal);
        // memory chain
        let delta = tape.sigmoid(leaves.delta_raw);
        let one_minus_delta = tape.scalar_affine(delta, -1.0, 1.0);
        let mut memory = tape.constant(memory_in.values.clone());
        let mut z_rows = Vec::with_capacity(len);
        for t in 0..len {
            let logits = tape.matmul(leaves.mem_key, us[t], slots, 2 * d, 1, false, false);
            let w_t = tape.softmax(logits);
            let s_t = tape.slice(s_mat, t * d, d);
            let write = tape.outer(w_t, s_t);
            let scaled_write = tape.mul_scalar(write, delta);
            let kept = tape.mul_scalar(memory, one_minus_delta);
            memory = tape.add(scaled_write, kept);
            let m_t = tape.vec_mat(w_t, memory, slots, d);
            let head_in = tape.concat(m_t, s_t);
            let pre = tape.dense(leaves.fc1_w, leaves.fc1_b, head_in, h, 2 * d);
            let theta = tape.tanh(pre);
            let logits_z = tape.dense(leaves.fc2_w, leaves.fc2_b, theta, self.n_concepts, h);
            z_rows.push(tape.sigmoid(logits_z));
        }
        Ok(WindowOut { z_rows, memory_out: memory })
    }

    /// Evaluate one window eagerly: per-step Z rows plus the committed memory.
    pub fn evaluate_window(
        &self,
        steps: &[MasteryStep],
        memory_in: &MemoryState,
    ) -> Result<(Vec<Vec<f64>>, MemoryState)> {
        let mut tape = Tape::new();
        let (leaves, _) = self.leaves(&mut tape);
        let out = self.window_forward(&mut tape, &leaves, steps, memory_in)?;
        let z = out.z_rows.iter().map(|&id| tape.data(id).to_vec()).collect();
        let memory = MemoryState {
            values: tape.data(out.memory_out).to_vec(),
            slots: self.config.slots,
            dim: self.config.embed_dim,
        };
        Ok((z, memory))
    }

    pub fn session(&self) -> MasterySession<'_> {
        MasterySession {
            model: self,
            memory: MemoryState::zeros(self.config.slots, self.config.embed_dim),
            buffer: Vec::new(),
            last_z: None,
        }
    }

    /// Final mastery vector for a full history (windowed, memory carried).
    pub fn evaluate_history(&self, bank: &ExerciseBank, history: &StudentHistory) -> Result<Vec<f64>> {
        if history.records.is_empty() {
            return Err(Error::EmptyHistory(history.student_id));
        }
        let mut session = self.session();
        let mut z = Vec::new();
        for r in &history.records {
            z = session.push(MasteryStep::from_record(bank, r)?)?;
        }
        Ok(z)
    }

    /// Windowed BCE on next-response prediction. Returns (loss sum, number of
    /// prediction terms, grads, committed memory).
    fn window_loss(
        &self,
        steps: &[MasteryStep],
        memory_in: &MemoryState,
    ) -> Result<(f64, usize, Grads, MemoryState)> {
        let mut tape = Tape::new();
        let (leaves, order) = self.leaves(&mut tape);
        let out = self.window_forward(&mut tape, &leaves, steps, memory_in)?;
        let mut total: Option<NodeId> = None;
        let mut terms = 0;
        for t in 0..steps.len() - 1 {
            let next = &steps[t + 1];
            let r_node = self.proficiency_node(&mut tape, out.z_rows[t], &next.concepts)?;
            let bce = if next.response == 1 {
                let ln_r = tape.ln(r_node);
                tape.scale(ln_r, -1.0)
            } else {
                let one_minus = tape.scalar_affine(r_node, -1.0, 1.0);
                let ln_m = tape.ln(one_minus);
                tape.scale(ln_m, -1.0)
            };
            terms += 1;
            total = Some(match total {
                None => bce,
                Some(acc) => tape.add(acc, bce),
            });
        }
        let memory = MemoryState {
            values: tape.data(out.memory_out).to_vec(),
            slots: self.config.slots,
            dim: self.config.embed_dim,
        };
        let Some(total) = total else {
            return Ok((0.0, 0, Grads::zeros_like(&self.params), memory));
        };
        let loss = tape.scalar(total);
        if !loss.is_finite() {
            return Err(Error::DivergedLoss);
        }
        let node_grads = tape.backward(total);
        let mut grads = Grads::zeros_like(&self.params);
        for (leaf_pos, &param_idx) in order.iter().enumerate() {
            grads.accumulate(param_idx, &node_grads[leaf_pos]);
        }
        Ok((loss, terms, grads, memory))
    }

    fn proficiency_node(&self, tape: &mut Tape, z: NodeId, concepts: &[usize]) -> Result<NodeId> {
        let mut acc: Option<NodeId> = None;
        for &c in concepts {
            if c >= self.n_concepts {
                return Err(Error::UnknownConcept(c as u32));
            }
            let zc = tape.slice(z, c, 1);
            acc = Some(match acc {
                None => zc,
                Some(a) => tape.mul_scalars(a, zc),
            });
        }
        acc.ok_or(Error::EmptyConceptList(0))
    }

    /// Test-support surface: loss and grads of one window from zero memory.
    pub fn loss_and_grads(&self, steps: &[MasteryStep]) -> Result<(f64, Grads)> {
        let memory = MemoryState::zeros(self.config.slots, self.config.embed_dim);
        let (loss, _, grads, _) = self.window_loss(steps, &memory)?;
        Ok((loss, grads))
    }

    /// Per-step predicted correctness for the next exercise across a history
    /// (windowed, memory carried): pairs of (prediction, observed response).
    pub fn next_response_predictions(
        &self,
        bank: &ExerciseBank,
        history: &StudentHistory,
    ) -> Result<Vec<(f64, u8)>> {
        let steps: Vec<MasteryStep> = history
            .records
            .iter()
            .map(|r| MasteryStep::from_record(bank, r))
            .collect::<Result<_>>()?;
        let mut memory = MemoryState::zeros(self.config.slots, self.config.embed_dim);
        let mut pairs = Vec::new();
        for window in steps.chunks(self.config.window) {
            let (z_rows, mem_out) = self.evaluate_window(window, &memory)?;
            for t in 0..window.len() - 1 {
                let next = &window[t + 1];
                let ex = bank.get(next.exercise_id).ok_or(Error::UnknownExercise(next.exercise_id))?;
                let assess = exercise_proficiency(&z_rows[t], ex)?;
                pairs.push((assess.proficiency, next.response));
            }
            memory = mem_out;
        }
        Ok(pairs)
    }
}

/// Stateful per-student evaluation: one session per student, exclusive
/// mutable state. Feeding interactions one at a time is bit-identical to
/// feeding whole windows, because the session replays the current window
/// prefix from the committed memory on every push.
pub struct MasterySession<'a> {
    model: &'a MasteryModel,
    pub memory: MemoryState,
    buffer: Vec<MasteryStep>,
    last_z: Option<Vec<f64>>,
}

impl MasterySession<'_> {
    pub fn push(&mut self, step: MasteryStep) -> Result<Vec<f64>> {
        self.buffer.push(step);
        let (z_rows, mem_out) = self.model.evaluate_window(&self.buffer, &self.memory)?;
        let z = z_rows.last().expect("non-empty window").clone();
        if self.buffer.len() == self.model.config.window {
            self.memory = mem_out;
            self.buffer.clear();
        }
        self.last_z = Some(z.clone());
        Ok(z)
    }

    pub fn last_mastery(&self) -> Option<&[f64]> {
        self.last_z.as_deref()
    }
}

/// Train on next-response BCE; memory carried across each student's windows.
/// Returns the model and a per-epoch mean-BCE trace.
pub fn train_mastery(
    bank: &ExerciseBank,
    histories: &[StudentHistory],
    config: &MasteryConfig,
    seed: u64,
    epochs: usize,
) -> Result<(MasteryModel, Vec<f64>)> {
    let model = MasteryModel::new(bank.n_concepts, bank.n_exercises(), config.clone(), seed)?;
    train_mastery_model(model, bank, histories, seed, epochs)
}

pub fn train_mastery_model(
    mut model: MasteryModel,
    bank: &ExerciseBank,
    histories: &[StudentHistory],
    seed: u64,
    epochs: usize,
) -> Result<(MasteryModel, Vec<f64>)> {
    let usable: Vec<&StudentHistory> = histories.iter().filter(|h| h.records.len() >= 2).collect();
    if usable.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "mastery-train"));
    let mut opt = Adam::new(model.config.learning_rate, &model.params);
    let mut trace = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let mut order: Vec<usize> = (0..usable.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_terms = 0usize;
        let mut batch_grads = Grads::zeros_like(&model.params);
        let mut batch_count = 0usize;
        for &hi in &order {
            let steps: Vec<MasteryStep> = usable[hi]
                .records
                .iter()
                .map(|r| MasteryStep::from_record(bank, r))
                .collect::<Result<_>>()?;
            let mut memory = MemoryState::zeros(model.config.slots, model.config.embed_dim);
            for window in steps.chunks(model.config.window) {
                let (loss, terms, grads, mem_out) = model.window_loss(window, &memory)?;
                memory = mem_out;
                if terms == 0 {
                    continue;
                }
                if !grads.is_finite() {
                    return Err(Error::DivergedLoss);
                }
                epoch_loss += loss;
                epoch_terms += terms;
                for (acc, g) in batch_grads.data.iter_mut().zip(&grads.data) {
                    for (a, v) in acc.iter_mut().zip(g) {
                        *a += v;
                    }
                }
                batch_count += 1;
                if batch_count == model.config.batch_size {
                    batch_grads.scale(1.0 / batch_count as f64);
                    opt.step(&mut model.params, &batch_grads);
                    batch_grads = Grads::zeros_like(&model.params);
                    batch_count = 0;
                }
            }
        }
        if batch_count > 0 {
            batch_grads.scale(1.0 / batch_count as f64);
            opt.step(&mut model.params, &batch_grads);
        }
        trace.push(if epoch_terms > 0 { epoch_loss / epoch_terms as f64 } else { 0.0 });
    }
    Ok((model, trace))
}

/// Rank-statistic AUC over (score, label) pairs; ties share half credit.
pub fn auc(pairs: &[(f64, u8)]) -> Option<f64> {
    let pos: Vec<f64> = pairs.iter().filter(|(_, r)| *r == 1).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = pairs.iter().filter(|(_, r)| *r == 0).map(|(s, _)| *s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::InteractionRecord;

    fn small_model() -> MasteryModel {
        let config = MasteryConfig {
            embed_dim: 4,
            slots: 3,
            hidden: 5,
            window: 4,
            ..Default::default()
        };
        MasteryModel::new(5, 6, config, 11).unwrap()
    }

    fn step(ex: u32, concepts: &[usize], response: u8) -> MasteryStep {
        MasteryStep { exercise_id: ex, concepts: concepts.to_vec(), response }
    }

    #[test]
    fn embed_pair_sums_to_one_and_zero_response_collapses_g_to_u() {
        let m = small_model();
        let mut tape = Tape::new();
        let (leaves, _) = m.leaves(&mut tape);
        let (u, g) = m.embed_pair(&mut tape, &leaves, &step(1, &[0, 2], 1)).unwrap();
        let su: f64 = tape.data(u).iter().sum();
        let sg: f64 = tape.data(g).iter().sum();
        assert!((su - 1.0).abs() < 1e-9);
        assert!((sg - 1.0).abs() < 1e-9);

        // with a zeroed response embedding, g must equal u elementwise
        let mut m2 = small_model();
        let idx = m2.params.index_of("response_emb").unwrap();
        m2.params.get_mut(idx).iter_mut().for_each(|v| *v = 0.0);
        let mut tape2 = Tape::new();
        let (leaves2, _) = m2.leaves(&mut tape2);
        let (u2, g2) = m2.embed_pair(&mut tape2, &leaves2, &step(1, &[0, 2], 1)).unwrap();
        for (a, b) in tape2.data(u2).iter().zip(tape2.data(g2)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn knowledge_state_is_zero_at_first_step() {
        let m = small_model();
        let mut tape = Tape::new();
        let (leaves, _) = m.leaves(&mut tape);
        let steps = [step(0, &[0], 1)];
        let mem = MemoryState::zeros(3, 4);
        // with one step, s_1 = 0 so the head sees only the memory read of a
        // zero memory; check via the internal matrices instead:
        let out = m.window_forward(&mut tape, &leaves, &steps, &mem).unwrap();
        // memory after one write of s_1 = 0 stays zero
        for v in tape.data(out.memory_out) {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn causality_future_steps_do_not_change_past_mastery() {
        let m = small_model();
        let mem = MemoryState::zeros(3, 4);
        let base = vec![step(0, &[0], 1), step(1, &[1], 0), step(2, &[2], 1)];
        let mut changed = base.clone();
        changed[2] = step(3, &[4], 0);
        let (za, _) = m.evaluate_window(&base, &mem).unwrap();
        let (zb, _) = m.evaluate_window(&changed, &mem).unwrap();
        assert_eq!(za[0], zb[0]);
        assert_eq!(za[1], zb[1]);
        assert_ne!(za[2], zb[2]);
    }

    #[test]
    fn correlation_weights_uniform_for_zero_keys() {
        let w = correlation_weights(&[0.0; 12], &[0.3, -0.1, 0.8, 0.2], 3).unwrap();
        for v in &w {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn correlation_weights_dominant_aligned_slot() {
        let u = [1.0, 0.0, 0.0, 0.0];
        // slot 1 is a large multiple of u; others orthogonal
        let mut key = vec![0.0; 12];
        key[4] = 50.0;
        key[1] = 1.0;
        key[10] = 1.0;
        let w = correlation_weights(&key, &u, 3).unwrap();
        assert!(w[1] > 0.99, "weights {w:?}");
    }

    #[test]
    fn memory_update_blend_endpoints() {
        let prev = MemoryState { values: vec![1.0, 2.0, 3.0, 4.0], slots: 2, dim: 2 };
        let w = [0.25, 0.75];
        let s = [2.0, -2.0];
        let keep = memory_update(&prev, &w, &s, 0.0).unwrap();
        assert_eq!(keep, prev);
        let write = memory_update(&prev, &w, &s, 1.0).unwrap();
        assert_eq!(write.values, vec![0.5, -0.5, 1.5, -1.5]);
        let half = memory_update(&prev, &w, &s, 0.5).unwrap();
        for i in 0..4 {
            assert!((half.values[i] - 0.5 * (prev.values[i] + write.values[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn memory_read_cases() {
        let mem = MemoryState { values: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], slots: 3, dim: 2 };
        assert_eq!(memory_read(&[0.0, 1.0, 0.0], &mem).unwrap(), vec![3.0, 4.0]);
        let third = 1.0 / 3.0;
        let mean = memory_read(&[third, third, third], &mem).unwrap();
        assert!((mean[0] - 3.0).abs() < 1e-12);
        assert!((mean[1] - 4.0).abs() < 1e-12);
        // random case vs explicit loop
        let w = [0.2, 0.5, 0.3];
        let got = memory_read(&w, &mem).unwrap();
        for c in 0..2 {
            let mut expect = 0.0;
            for r in 0..3 {
                expect += w[r] * mem.values[r * 2 + c];
            }
            assert!((got[c] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn zeroed_head_gives_half_mastery() {
        let mut m = small_model();
        for name in ["fc2_w", "fc2_b"] {
            let idx = m.params.index_of(name).unwrap();
            m.params.get_mut(idx).iter_mut().for_each(|v| *v = 0.0);
        }
        let mem = MemoryState::zeros(3, 4);
        let (z, _) = m.evaluate_window(&[step(0, &[0], 1)], &mem).unwrap();
        for v in &z[0] {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn mastery_strictly_inside_unit_interval() {
        let m = small_model();
        let mem = MemoryState::zeros(3, 4);
        let (z, _) = m
            .evaluate_window(&[step(0, &[0], 1), step(1, &[1, 2], 0)], &mem)
            .unwrap();
        for row in &z {
            for &v in row {
                assert!(v > 0.0 && v < 1.0);
            }
        }
    }

    #[test]
    fn proficiency_product_and_difficulty() {
        let ex1 = Exercise { id: 0, kc_vector: vec![0, 1, 0] };
        let a = exercise_proficiency(&[0.2, 0.7, 0.9], &ex1).unwrap();
        assert!((a.proficiency - 0.7).abs() < 1e-12);
        assert!((a.difficulty - 0.3).abs() < 1e-12);
        let ex2 = Exercise { id: 1, kc_vector: vec![1, 1, 0] };
        let b = exercise_proficiency(&[0.5, 0.5, 0.9], &ex2).unwrap();
        assert!((b.proficiency - 0.25).abs() < 1e-12);
        assert!((b.proficiency + b.difficulty - 1.0).abs() < 1e-15);
        // adding a covered concept with z < 1 strictly decreases R
        let ex3 = Exercise { id: 2, kc_vector: vec![1, 1, 1] };
        let c = exercise_proficiency(&[0.5, 0.5, 0.9], &ex3).unwrap();
        assert!(c.proficiency < b.proficiency);
        let empty = Exercise { id: 3, kc_vector: vec![0, 0, 0] };
        assert!(matches!(exercise_proficiency(&[0.1, 0.2, 0.3], &empty), Err(Error::EmptyConceptList(3))));
    }

    #[test]
    fn grad_check_full_mastery_loss() {
        let m = small_model();
        let steps = vec![
            step(0, &[0], 1),
            step(1, &[1, 2], 0),
            step(2, &[3], 1),
            step(3, &[0, 4], 1),
        ];
        let (_, grads) = m.loss_and_grads(&steps).unwrap();
        let analytic = grads.flatten();
        let mut theta = m.params.flatten();
        let report = crate::tape::grad_check(
            &mut theta,
            &analytic,
            |t| {
                let mut params = m.params.clone();
                params.unflatten(t);
                let probe = MasteryModel::from_params(
                    m.n_concepts,
                    m.n_exercises,
                    m.config.clone(),
                    params,
                )
                .unwrap();
                probe.loss_and_grads(&steps).unwrap().0
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn initial_bce_near_log_two_with_zeroed_head_on_single_concept_steps() {
        let mut m = small_model();
        for name in ["fc2_w", "fc2_b"] {
            let idx = m.params.index_of(name).unwrap();
            m.params.get_mut(idx).iter_mut().for_each(|v| *v = 0.0);
        }
        let steps = vec![step(0, &[0], 1), step(1, &[1], 1), step(2, &[2], 0)];
        let (loss, _) = m.loss_and_grads(&steps).unwrap();
        // two prediction terms, each −ln(0.5)
        assert!((loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn always_correct_student_trains_toward_confident_predictions() {
        let bank = ExerciseBank {
            exercises: vec![
                Exercise { id: 0, kc_vector: vec![1, 0] },
                Exercise { id: 1, kc_vector: vec![0, 1] },
            ],
            n_concepts: 2,
        };
        let history = StudentHistory {
            student_id: 0,
            records: (1..=16)
                .map(|s| InteractionRecord { exercise_id: (s % 2) as u32, response: 1, step: s })
                .collect(),
        };
        let config = MasteryConfig {
            embed_dim: 4,
            slots: 3,
            hidden: 6,
            window: 8,
            learning_rate: 0.05,
            batch_size: 2,
            ..Default::default()
        };
        let (model, trace) = train_mastery(&bank, &[history.clone()], &config, 5, 60).unwrap();
        assert!(trace.last().unwrap() < trace.first().unwrap());
        let pairs = model.next_response_predictions(&bank, &history).unwrap();
        let mean: f64 = pairs.iter().map(|(p, _)| p).sum::<f64>() / pairs.len() as f64;
        assert!(mean > 0.9, "mean prediction {mean}");
    }

    #[test]
    fn auc_basics() {
        assert_eq!(auc(&[(0.9, 1), (0.1, 0)]), Some(1.0));
        assert_eq!(auc(&[(0.1, 1), (0.9, 0)]), Some(0.0));
        assert_eq!(auc(&[(0.5, 1), (0.5, 0)]), Some(0.5));
        assert_eq!(auc(&[(0.5, 1)]), None);
    }
}
