//! Browser bindings. Each export takes and returns JSON so the page can stay
//! plain JavaScript.

mod demo;

pub use demo::{explore_loss, schedule, train_and_score, LossQuery, ScheduleQuery, TrainQuery};

use wasm_bindgen::prelude::*;

fn call<Q: serde::de::DeserializeOwned, R: serde::Serialize>(
    input: &str,
    f: impl FnOnce(Q) -> oodlab::Result<R>,
) -> Result<String, JsValue> {
    let query: Q = serde_json::from_str(input).map_err(|e| JsValue::from_str(&format!("bad request: {e}")))?;
    let reply = f(query).map_err(|e| JsValue::from_str(&e.to_string()))?;
    serde_json::to_string(&reply).map_err(|e| JsValue::from_str(&e.to_string()))
}

/// Trains on one class split of a blob dataset and returns score
/// histograms, ROC and OSCR curves per score function.
#[wasm_bindgen(js_name = trainAndScore)]
pub fn train_and_score_js(query: &str) -> Result<String, JsValue> {
    call(query, train_and_score)
}

/// Loss values and the NMPC penalty for one row of logits.
#[wasm_bindgen(js_name = exploreLoss)]
pub fn explore_loss_js(query: &str) -> Result<String, JsValue> {
    call(query, explore_loss)
}

/// Learning-rate and penalty-weight curves over training.
#[wasm_bindgen(js_name = schedule)]
pub fn schedule_js(query: &str) -> Result<String, JsValue> {
    call(query, schedule)
}
