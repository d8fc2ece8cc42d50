//! Tab-separated tables with one header row. Missing values are empty
//! cells, never zero.

use gsp_core::validation::ValidationState;
use gsp_core::{ExperimentState, SliderGrid, ValidationItem};

pub fn tsv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = header.join("\t");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out
}

pub fn num(v: f64) -> String {
    format!("{v:.6}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn joined<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn weights(indices: &[usize], grid: &SliderGrid) -> String {
    indices.iter().map(|&k| num(grid.position(k))).collect::<Vec<_>>().join(",")
}

pub fn chains(state: &ExperimentState) -> String {
    tsv(
        &["chain_id", "emotion", "sentence", "status", "iteration", "free_dimension", "responses", "point"],
        state.chains.iter().map(|c| {
            vec![
                c.id().to_string(),
                c.spec.emotion.to_string(),
                c.spec.sentence.clone(),
                format!("{:?}", c.status).to_lowercase(),
                c.iteration.to_string(),
                c.free_dimension.to_string(),
                c.responses.len().to_string(),
                joined(c.current_point.indices()),
            ]
        }),
    )
}

pub fn trajectories(state: &ExperimentState) -> String {
    tsv(
        &["chain_id", "emotion", "iteration", "indices", "weights"],
        state.chains.iter().flat_map(|c| {
            c.history.iter().map(move |h| {
                vec![
                    c.id().to_string(),
                    c.spec.emotion.to_string(),
                    h.iteration.to_string(),
                    joined(h.point.indices()),
                    weights(h.point.indices(), &state.grid),
                ]
            })
        }),
    )
}

pub fn validation_items(items: &[ValidationItem], grid: &SliderGrid) -> String {
    tsv(
        &["item_id", "kind", "stimulus_id", "emotion", "chain_id", "iteration", "sentence", "weights"],
        items.iter().map(|i| {
            vec![
                i.item_id.to_string(),
                format!("{:?}", i.kind).to_lowercase(),
                i.stimulus_id.to_string(),
                i.emotion.to_string(),
                i.chain_id.map(|c| c.to_string()).unwrap_or_default(),
                i.iteration.map(|t| t.to_string()).unwrap_or_default(),
                i.sentence.clone(),
                weights(i.point.indices(), grid),
            ]
        }),
    )
}

pub fn ratings(v: &ValidationState) -> String {
    tsv(
        &["rating_id", "participant_id", "item_id", "stimulus_id", "probed_emotion", "rating"],
        v.ratings.iter().map(|r| {
            vec![
                r.rating_id.to_string(),
                r.participant_id.to_string(),
                r.item_id.to_string(),
                r.stimulus_id.to_string(),
                r.probed_emotion.to_string(),
                r.rating.to_string(),
            ]
        }),
    )
}
