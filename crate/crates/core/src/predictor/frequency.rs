//! Smoothed n-gram next-step counter.
//!
//! The conditioning context is the last `window` events, intrinsic and context
//! alike, reduced to tokens. Context events with numeric payloads contribute
//! their equal-width bin ids to the token, which makes out-of-range readings
//! distinguishable. When a context was never observed the model backs off to
//! the longest observed suffix of it.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{output_states, training_pairs, Classifier, PredictError, Prediction};
use crate::event::{Event, EventCatalog, EventKind, EventTrace};
use crate::model::State;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyConfig {
    /// Number of trailing events in the conditioning context.
    pub window: usize,
    /// Additive smoothing constant.
    pub alpha: f64,
    /// Equal-width bins per numeric context field.
    pub bins: usize,
}

impl Default for FrequencyConfig {
    fn default() -> Self {
        FrequencyConfig { window: 3, alpha: 1.0, bins: 8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct BinRange {
    lo: f64,
    hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyModel {
    config: FrequencyConfig,
    catalog: EventCatalog,
    outputs: Vec<State>,
    /// `(context type, field key)` → fitted value range.
    bins: BTreeMap<String, BTreeMap<String, BinRange>>,
    vocab: Vec<String>,
    #[serde(skip)]
    vocab_index: HashMap<String, u32>,
    #[serde(with = "count_table")]
    counts: HashMap<Vec<u32>, Vec<u64>>,
    trained_traces: usize,
}

mod count_table {
    use std::collections::HashMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(map: &HashMap<Vec<u32>, Vec<u64>>, s: S) -> Result<S::Ok, S::Error> {
        let mut rows: Vec<_> = map.iter().collect();
        rows.sort();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<HashMap<Vec<u32>, Vec<u64>>, D::Error> {
        let rows: Vec<(Vec<u32>, Vec<u64>)> = Vec::deserialize(d)?;
        Ok(rows.into_iter().collect())
    }
}

impl FrequencyModel {
    pub fn new(catalog: EventCatalog, config: FrequencyConfig) -> Self {
        FrequencyModel {
            outputs: output_states(&catalog),
            config,
            catalog,
            bins: BTreeMap::new(),
            vocab: Vec::new(),
            vocab_index: HashMap::new(),
            counts: HashMap::new(),
            trained_traces: 0,
        }
    }

    pub fn config(&self) -> &FrequencyConfig {
        &self.config
    }

    pub fn catalog(&self) -> &EventCatalog {
        &self.catalog
    }

    pub fn outputs(&self) -> &[State] {
        &self.outputs
    }

    pub fn trained_traces(&self) -> usize {
        self.trained_traces
    }

    pub(crate) fn rebuild_index(&mut self) {
        self.vocab_index = self.vocab.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
    }

    /// Fits the numeric bin ranges of context payloads on `traces`.
    pub fn fit_bins(&mut self, traces: &[EventTrace]) {
        let mut ranges: BTreeMap<String, BTreeMap<String, BinRange>> = BTreeMap::new();
        for event in traces.iter().flat_map(|t| &t.events) {
            if event.kind != EventKind::Context {
                continue;
            }
            for field in &event.payload {
                let Some(v) = field.value.as_f64().filter(|v| v.is_finite()) else { continue };
                ranges
                    .entry(event.name.clone())
                    .or_default()
                    .entry(field.key.clone())
                    .and_modify(|r| {
                        r.lo = r.lo.min(v);
                        r.hi = r.hi.max(v);
                    })
                    .or_insert(BinRange { lo: v, hi: v });
            }
        }
        self.bins = ranges;
    }

    /// Fits bins on the corpus, then trains on every trace in order.
    pub fn train_batch(&mut self, traces: &[EventTrace]) -> Result<(), PredictError> {
        self.fit_bins(traces);
        traces.iter().try_for_each(|t| self.train_online(t))
    }

    fn bin_of(&self, range: &BinRange, v: f64) -> usize {
        let b = self.config.bins.max(1);
        if range.lo.is_nan() || range.hi.is_nan() || range.hi <= range.lo || !v.is_finite() {
            return 0;
        }
        let pos = ((v - range.lo) / (range.hi - range.lo) * b as f64).floor();
        pos.clamp(0.0, (b - 1) as f64) as usize
    }

    /// The conditioning token of one event.
    pub fn token(&self, event: &Event) -> String {
        if event.kind != EventKind::Context {
            return event.name.clone();
        }
        let Some(fields) = self.bins.get(&event.name) else { return event.name.clone() };
        let mut token = event.name.clone();
        for field in &event.payload {
            if let (Some(v), Some(range)) = (field.value.as_f64(), fields.get(&field.key)) {
                token.push_str(&format!("|{}={}", field.key, self.bin_of(range, v)));
            }
        }
        token
    }

    fn intern(&mut self, token: String) -> u32 {
        if let Some(&id) = self.vocab_index.get(&token) {
            return id;
        }
        let id = self.vocab.len() as u32;
        self.vocab_index.insert(token.clone(), id);
        self.vocab.push(token);
        id
    }

    fn window_start(&self, end: usize) -> usize {
        end.saturating_sub(self.config.window)
    }

    /// Raw counts observed after the exact context `tokens`, in output order.
    pub fn counts_for(&self, tokens: &[&str]) -> Option<&[u64]> {
        let ids: Option<Vec<u32>> = tokens.iter().map(|t| self.vocab_index.get(*t).copied()).collect();
        self.counts.get(&ids?).map(Vec::as_slice)
    }

    /// Every observed context with its counts, keyed by tokens rather than
    /// by interning order.
    pub fn count_table(&self) -> BTreeMap<Vec<&str>, &[u64]> {
        self.counts
            .iter()
            .map(|(ids, c)| (ids.iter().map(|&i| self.vocab[i as usize].as_str()).collect(), c.as_slice()))
            .collect()
    }

    /// Smoothed distribution after the exact context `ids`.
    fn smoothed(&self, counts: Option<&[u64]>) -> Vec<f64> {
        let alpha = self.config.alpha;
        let k = self.outputs.len() as f64;
        let total: u64 = counts.map_or(0, |c| c.iter().sum());
        let denom = total as f64 + alpha * k;
        (0..self.outputs.len())
            .map(|i| {
                let c = counts.map_or(0, |c| c[i]) as f64;
                if denom > 0.0 {
                    (c + alpha) / denom
                } else {
                    1.0 / k
                }
            })
            .collect()
    }
}

impl Classifier for FrequencyModel {
    fn predict(&self, history: &[Event]) -> Result<Prediction, PredictError> {
        if self.trained_traces == 0 {
            return Err(PredictError::UntrainedModel);
        }
        let start = self.window_start(history.len());
        let ids: Vec<Option<u32>> =
            history[start..].iter().map(|e| self.vocab_index.get(&self.token(e)).copied()).collect();
        // Longest observed suffix of the window, down to the empty context.
        let mut chosen = None;
        for skip in 0..=ids.len() {
            let suffix = &ids[skip..];
            if suffix.iter().any(Option::is_none) {
                continue;
            }
            let key: Vec<u32> = suffix.iter().map(|id| id.unwrap()).collect();
            if let Some(c) = self.counts.get(&key).filter(|c| c.iter().any(|&n| n > 0)) {
                chosen = Some(c.as_slice());
                break;
            }
        }
        let probs = self.smoothed(chosen);
        Prediction::new(self.outputs.iter().cloned().zip(probs).collect())
    }

    fn train_online(&mut self, trace: &EventTrace) -> Result<(), PredictError> {
        let pairs = training_pairs(trace)?;
        let tokens: Vec<u32> = trace
            .events
            .iter()
            .map(|e| {
                let t = self.token(e);
                self.intern(t)
            })
            .collect();
        let n_out = self.outputs.len();
        for pair in pairs {
            let Some(target) = self.outputs.iter().position(|s| *s == pair.target) else {
                return Err(PredictError::UnknownEventType(pair.target.name().to_owned()));
            };
            let end = pair.prefix_len;
            let start = self.window_start(end);
            for from in start..=end {
                let entry = self.counts.entry(tokens[from..end].to_vec()).or_insert_with(|| vec![0; n_out]);
                entry[target] += 1;
            }
        }
        self.trained_traces += 1;
        Ok(())
    }
}
