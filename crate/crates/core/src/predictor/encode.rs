use serde::{Deserialize, Serialize};

use super::PredictError;
use crate::event::catalog::value_code;
use crate::event::{Event, EventCatalog, EventTrace};

/// One encoded event: a one-hot event vector followed by the padded payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputRow {
    /// `[I_fail, steps…, context…]`, exactly one entry set.
    pub event_onehot: Vec<u8>,
    /// Payload values in schema order, zero-padded to the catalog's arity.
    pub data: Vec<f64>,
}

impl InputRow {
    pub fn hot_index(&self) -> usize {
        self.event_onehot.iter().position(|&b| b == 1).unwrap_or(0)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        self.event_onehot.iter().map(|&b| f64::from(b)).chain(self.data.iter().copied()).collect()
    }
}

pub fn encode_event(event: &Event, catalog: &EventCatalog) -> Result<InputRow, PredictError> {
    let index = catalog.onehot_index(&event.name).ok_or_else(|| PredictError::UnknownEventType(event.name.clone()))?;
    let mut event_onehot = vec![0u8; catalog.onehot_len()];
    event_onehot[index] = 1;
    let mut data = vec![0.0; catalog.max_data_arity()];
    for (slot, field) in data.iter_mut().zip(&event.payload) {
        *slot = value_code(&field.value);
    }
    Ok(InputRow { event_onehot, data })
}

pub fn encode_events(events: &[Event], catalog: &EventCatalog) -> Result<Vec<InputRow>, PredictError> {
    events.iter().map(|e| encode_event(e, catalog)).collect()
}

pub fn encode_trace(trace: &EventTrace, catalog: &EventCatalog) -> Result<Vec<InputRow>, PredictError> {
    encode_events(&trace.events, catalog)
}
