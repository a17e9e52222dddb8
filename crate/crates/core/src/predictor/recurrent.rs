//! Single-layer Elman network trained with truncated backpropagation.

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encode::encode_events;
use super::{output_states, training_pairs, Classifier, InputRow, PredictError, Prediction};
use crate::event::{Event, EventCatalog, EventTrace};
use crate::model::State;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecurrentConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    /// Longest event window fed through the network.
    pub max_len: usize,
    /// Gradient norm ceiling applied per update; `0` disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for RecurrentConfig {
    fn default() -> Self {
        RecurrentConfig { hidden: 32, learning_rate: 0.05, max_len: 64, clip_norm: 5.0, seed: 0 }
    }
}

/// Network parameters. Matrices are row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    /// hidden × input
    pub wx: Vec<f64>,
    /// hidden × hidden
    pub wh: Vec<f64>,
    pub bh: Vec<f64>,
    /// outputs × hidden
    pub wo: Vec<f64>,
    pub bo: Vec<f64>,
}

/// Gradients share the parameter layout.
pub type Gradients = Weights;

impl Weights {
    fn zeros(input: usize, hidden: usize, outputs: usize) -> Self {
        Weights {
            wx: vec![0.0; hidden * input],
            wh: vec![0.0; hidden * hidden],
            bh: vec![0.0; hidden],
            wo: vec![0.0; outputs * hidden],
            bo: vec![0.0; outputs],
        }
    }

    fn random(input: usize, hidden: usize, outputs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |n: usize, fan_in: usize| {
            let s = 1.0 / (fan_in.max(1) as f64).sqrt();
            let dist = Uniform::new_inclusive(-s, s);
            (0..n).map(|_| dist.sample(&mut rng)).collect::<Vec<_>>()
        };
        Weights {
            wx: fill(hidden * input, input),
            wh: fill(hidden * hidden, hidden),
            bh: vec![0.0; hidden],
            wo: fill(outputs * hidden, hidden),
            bo: vec![0.0; outputs],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.wx.iter().chain(&self.wh).chain(&self.bh).chain(&self.wo).chain(&self.bo)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.wx
            .iter_mut()
            .chain(self.wh.iter_mut())
            .chain(self.bh.iter_mut())
            .chain(self.wo.iter_mut())
            .chain(self.bo.iter_mut())
    }

    pub fn len(&self) -> usize {
        self.wx.len() + self.wh.len() + self.bh.len() + self.wo.len() + self.bo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn norm(&self) -> f64 {
        self.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecurrentModel {
    config: RecurrentConfig,
    catalog: EventCatalog,
    outputs: Vec<State>,
    input_len: usize,
    weights: Weights,
}

fn softsign(x: f64) -> f64 {
    x / (1.0 + x.abs())
}

fn features(row: &InputRow) -> Vec<f64> {
    row.event_onehot.iter().map(|&b| f64::from(b)).chain(row.data.iter().map(|&d| softsign(d))).collect()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|v| v / total).collect()
}

/// One training window: rows fed from a zero state, with the output targets
/// scored inside it as `(offset, output index)`.
struct Window {
    inputs: Vec<Vec<f64>>,
    targets: Vec<(usize, usize)>,
}

impl RecurrentModel {
    pub fn new(catalog: EventCatalog, config: RecurrentConfig) -> Self {
        let outputs = output_states(&catalog);
        let input_len = catalog.onehot_len() + catalog.max_data_arity();
        let weights = Weights::random(input_len, config.hidden, outputs.len(), config.seed);
        RecurrentModel { config, catalog, outputs, input_len, weights }
    }

    pub fn config(&self) -> &RecurrentConfig {
        &self.config
    }

    pub fn catalog(&self) -> &EventCatalog {
        &self.catalog
    }

    pub fn outputs(&self) -> &[State] {
        &self.outputs
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Weights {
        &mut self.weights
    }

    /// Fails when `catalog` would change the network's dimensions or outputs.
    pub fn check_catalog(&self, catalog: &EventCatalog) -> Result<(), PredictError> {
        if catalog.onehot_len() + catalog.max_data_arity() != self.input_len || output_states(catalog) != self.outputs {
            return Err(PredictError::DimensionMismatch);
        }
        Ok(())
    }

    fn encode(&self, events: &[Event]) -> Result<Vec<Vec<f64>>, PredictError> {
        let rows = encode_events(events, &self.catalog)?;
        let inputs: Vec<Vec<f64>> = rows.iter().map(features).collect();
        if inputs.iter().any(|x| x.len() != self.input_len) {
            return Err(PredictError::DimensionMismatch);
        }
        Ok(inputs)
    }

    fn step(&self, x: &[f64], prev: &[f64]) -> Vec<f64> {
        let (h, d) = (self.config.hidden, self.input_len);
        let w = &self.weights;
        (0..h)
            .map(|i| {
                let mut a = w.bh[i];
                a += w.wx[i * d..(i + 1) * d].iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
                a += w.wh[i * h..(i + 1) * h].iter().zip(prev).map(|(w, p)| w * p).sum::<f64>();
                a.tanh()
            })
            .collect()
    }

    fn logits(&self, hidden: &[f64]) -> Vec<f64> {
        let h = self.config.hidden;
        let w = &self.weights;
        (0..self.outputs.len())
            .map(|k| w.bo[k] + w.wo[k * h..(k + 1) * h].iter().zip(hidden).map(|(w, h)| w * h).sum::<f64>())
            .collect()
    }

    fn windows(&self, trace: &EventTrace) -> Result<Vec<Window>, PredictError> {
        let pairs = training_pairs(trace)?;
        let inputs = self.encode(&trace.events)?;
        let mut targets = Vec::with_capacity(pairs.len());
        for pair in pairs {
            let k = self
                .outputs
                .iter()
                .position(|s| *s == pair.target)
                .ok_or_else(|| PredictError::UnknownEventType(pair.target.name().to_owned()))?;
            targets.push((pair.prefix_len - 1, k));
        }
        // Overlapping windows with stride max_len/2. After the first window,
        // only the second half of each is scored so that every scored position
        // sees at least half a window of history, as at prediction time.
        let len = inputs.len();
        let max_len = self.config.max_len.max(2);
        let stride = max_len / 2;
        let mut windows = Vec::new();
        let mut start = 0;
        loop {
            let end = (start + max_len).min(len);
            let scored_from = if start == 0 { 0 } else { start + stride };
            windows.push(Window {
                inputs: inputs[start..end].to_vec(),
                targets: targets
                    .iter()
                    .filter(|(t, _)| *t >= scored_from && *t < end)
                    .map(|&(t, k)| (t - start, k))
                    .collect(),
            });
            if end >= len {
                break;
            }
            start += stride;
        }
        Ok(windows)
    }

    /// Mean cross-entropy over the trace's training pairs and its gradient.
    pub fn loss_and_gradients(&self, trace: &EventTrace) -> Result<(f64, Gradients), PredictError> {
        let windows = self.windows(trace)?;
        let (hn, d, k_out) = (self.config.hidden, self.input_len, self.outputs.len());
        let mut grads = Weights::zeros(d, hn, k_out);
        let n_targets: usize = windows.iter().map(|w| w.targets.len()).sum();
        if n_targets == 0 {
            return Ok((0.0, grads));
        }
        let scale = 1.0 / n_targets as f64;
        let w = &self.weights;
        let mut loss = 0.0;
        for window in &windows {
            let steps = window.inputs.len();
            let mut hs: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
            hs.push(vec![0.0; hn]);
            for x in &window.inputs {
                let next = self.step(x, hs.last().unwrap());
                hs.push(next);
            }
            // dh[t] accumulates dL/dh_t for hs[t + 1].
            let mut dh = vec![vec![0.0; hn]; steps];
            for &(t, k) in &window.targets {
                let h = &hs[t + 1];
                let mut p = softmax(&self.logits(h));
                loss -= p[k].max(f64::MIN_POSITIVE).ln() * scale;
                p[k] -= 1.0;
                for (o, dz) in p.iter().enumerate() {
                    let dz = dz * scale;
                    grads.bo[o] += dz;
                    for i in 0..hn {
                        grads.wo[o * hn + i] += dz * h[i];
                        dh[t][i] += dz * w.wo[o * hn + i];
                    }
                }
            }
            let mut carry = vec![0.0; hn];
            for t in (0..steps).rev() {
                let h = &hs[t + 1];
                let prev = &hs[t];
                let x = &window.inputs[t];
                let da: Vec<f64> = (0..hn).map(|i| (dh[t][i] + carry[i]) * (1.0 - h[i] * h[i])).collect();
                let mut next_carry = vec![0.0; hn];
                for (i, &a) in da.iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    grads.bh[i] += a;
                    for (g, xv) in grads.wx[i * d..(i + 1) * d].iter_mut().zip(x) {
                        *g += a * xv;
                    }
                    for j in 0..hn {
                        grads.wh[i * hn + j] += a * prev[j];
                        next_carry[j] += a * w.wh[i * hn + j];
                    }
                }
                carry = next_carry;
            }
        }
        Ok((loss, grads))
    }

    /// Runs `epochs` passes of online updates over `traces`, shuffled with
    /// the configured seed.
    pub fn train_batch(&mut self, traces: &[EventTrace], epochs: usize) -> Result<(), PredictError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut order: Vec<usize> = (0..traces.len()).collect();
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                self.train_online(&traces[i])?;
            }
        }
        Ok(())
    }
}

impl Classifier for RecurrentModel {
    fn predict(&self, history: &[Event]) -> Result<Prediction, PredictError> {
        let start = history.len().saturating_sub(self.config.max_len);
        let inputs = self.encode(&history[start..])?;
        let mut h = vec![0.0; self.config.hidden];
        for x in &inputs {
            h = self.step(x, &h);
        }
        let mut probs = softmax(&self.logits(&h));
        // Renormalize in case rounding left the row a few ulps off.
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        Prediction::new(self.outputs.iter().cloned().zip(probs).collect())
    }

    fn train_online(&mut self, trace: &EventTrace) -> Result<(), PredictError> {
        let (_, grads) = self.loss_and_gradients(trace)?;
        let norm = grads.norm();
        let mut lr = self.config.learning_rate;
        if self.config.clip_norm > 0.0 && norm > self.config.clip_norm {
            lr *= self.config.clip_norm / norm;
        }
        for (p, g) in self.weights.iter_mut().zip(grads.iter()) {
            *p -= lr * g;
        }
        Ok(())
    }
}
