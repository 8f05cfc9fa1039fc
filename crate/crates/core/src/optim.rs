//! Named parameter storage and the Adam optimizer.

use std::collections::HashMap;

use rand::prelude::*;

use crate::{Error, Result};

/// Ordered collection of named parameter tensors. Order is the checkpoint
/// serialization order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    data: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { names: Vec::new(), shapes: Vec::new(), data: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> usize {
        assert_eq!(data.len(), shape.iter().product::<usize>(), "param {name} shape");
        assert!(!self.index.contains_key(name), "duplicate param {name}");
        let idx = self.names.len();
        self.index.insert(name.to_string(), idx);
        self.names.push(name.to_string());
        self.shapes.push(shape);
        self.data.push(data);
        idx
    }

    /// Uniform init in [-scale, scale].
    pub fn add_uniform(&mut self, name: &str, shape: Vec<usize>, scale: f64, rng: &mut impl Rng) -> usize {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
        self.add(name, shape, data)
    }

    pub fn add_zeros(&mut self, name: &str, shape: Vec<usize>) -> usize {
        let n: usize = shape.iter().product();
        self.add(name, shape, vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn shape(&self, idx: usize) -> &[usize] {
        &self.shapes[idx]
    }

    pub fn get(&self, idx: usize) -> &[f64] {
        &self.data[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Vec<f64> {
        &mut self.data[idx]
    }

    pub fn by_name(&self, name: &str) -> Option<&[f64]> {
        self.index.get(name).map(|&i| self.data[i].as_slice())
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::BadCheckpoint(format!("missing parameter {name}")))
    }

    pub fn n_scalars(&self) -> usize {
        self.data.iter().map(|d| d.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_scalars());
        for d in &self.data {
            out.extend_from_slice(d);
        }
        out
    }

    pub fn unflatten(&mut self, flat: &[f64]) {
        let mut off = 0;
        for d in &mut self.data {
            let n = d.len();
            d.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        assert_eq!(off, flat.len());
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-parameter gradient buffers aligned with a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Grads {
    pub data: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Grads { data: params.data.iter().map(|d| vec![0.0; d.len()]).collect() }
    }

    pub fn accumulate(&mut self, idx: usize, grad: &[f64]) {
        for (s, g) in self.data[idx].iter_mut().zip(grad) {
            *s += g;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for d in &mut self.data {
            for v in d.iter_mut() {
                *v *= c;
            }
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for d in &self.data {
            out.extend_from_slice(d);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|d| d.iter().all(|v| v.is_finite()))
    }
}

/// Adam with the usual bias correction.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, params: &ParamSet) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.data.iter().map(|d| vec![0.0; d.len()]).collect(),
            v: params.data.iter().map(|d| vec![0.0; d.len()]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Grads) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, d) in params.data.iter_mut().enumerate() {
            for (j, p) in d.iter_mut().enumerate() {
                let g = grads.data[i][j];
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut params = ParamSet::new();
        params.add("x", vec![2], vec![3.0, -2.0]);
        let mut opt = Adam::new(0.1, &params);
        for _ in 0..500 {
            let mut grads = Grads::zeros_like(&params);
            let g: Vec<f64> = params.get(0).iter().map(|v| 2.0 * v).collect();
            grads.accumulate(0, &g);
            opt.step(&mut params, &grads);
        }
        for v in params.get(0) {
            assert!(v.abs() < 1e-3);
        }
    }

    #[test]
    fn flatten_round_trip() {
        let mut params = ParamSet::new();
        params.add("a", vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        params.add("b", vec![3], vec![5.0, 6.0, 7.0]);
        let flat = params.flatten();
        let mut other = params.clone();
        other.unflatten(&vec![0.0; flat.len()]);
        other.unflatten(&flat);
        assert_eq!(other, params);
    }
}
