//! Writes a demand-survey fixture whose purchase rates first rise and then
//! fall with price, keyed by the exact baseline-design request digests.
//!
//! ```text
//! cargo run -p ctxsim-core --example inverted_u_fixture > fixtures/demand_inverted_u.jsonl
//! ```

use ctxsim_core::agents::{ChatRequest, DecisionRequest, FixtureEntry, LlmEndpointConfig};
use ctxsim_core::game::{default_catalog, demand_grid};
use ctxsim_core::observation::{DemandObservation, ExperimentId, Observation, Vocabulary};
use ctxsim_core::prompt::{assemble_session, render_round, Assignment, PromptDesign, PromptTemplateSet};

/// Purchases out of `ALTERNATIVES` recorded responses at each price level.
pub const PURCHASES_BY_LEVEL: [usize; 11] = [6, 10, 14, 16, 18, 18, 16, 12, 8, 4, 2];
pub const ALTERNATIVES: usize = 20;

fn response(buy: bool) -> String {
    if buy {
        "<reason>At this price the product seems worth it.</reason>\n<answer>PURCHASE</answer>".into()
    } else {
        "<reason>I would rather keep the money.</reason>\n<answer>NOT PURCHASE</answer>".into()
    }
}

pub fn fixture_lines() -> Vec<String> {
    let templates = PromptTemplateSet::bundled(ExperimentId::Demand);
    let design = PromptDesign::Baseline;
    let endpoint = LlmEndpointConfig::for_fixture("fixture");
    let session = assemble_session(design, &templates, &Assignment::Demand).expect("bundled templates render");
    let cells = demand_grid(&default_catalog()).expect("bundled catalog is complete");
    cells
        .into_iter()
        .map(|cell| {
            let observation = Observation::Demand(DemandObservation {
                product_id: cell.product_id,
                product_name: cell.product_name,
                level_index: cell.level_index,
                relative_price: cell.relative_price,
                display_price: cell.display_price,
            });
            let request = DecisionRequest {
                session_messages: session.clone(),
                round_message: render_round(design, &templates, &observation).expect("bundled templates render"),
                followup: Vec::new(),
                experiment: ExperimentId::Demand,
                vocabulary: Vocabulary::Demand,
                observation,
            };
            let digest = ChatRequest::from_decision(&request, &endpoint.model, endpoint.temperature, 0).digest();
            let buys = PURCHASES_BY_LEVEL[cell.level_index as usize];
            let entry = FixtureEntry {
                digest,
                response: None,
                responses: Some((0..ALTERNATIVES).map(|i| response(i < buys)).collect()),
            };
            serde_json::to_string(&entry).expect("fixture entries serialize")
        })
        .collect()
}

#[allow(dead_code)]
fn main() {
    for line in fixture_lines() {
        println!("{line}");
    }
}
