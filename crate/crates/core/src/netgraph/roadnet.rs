//! Roadnet file schema (JSON).
//!
//! ```json
//! { "intersections": [ { "id": "i0", "x": 0.0, "y": 0.0,
//!       "lanes": [ { "id": "i0_W_straight", "length_m": 300.0, "approach": "W", "turn": "straight" } ],
//!       "phases": [ ["W_straight", "E_straight"], ... ] } ],
//!   "links": [ { "from": "i0", "to": "i1" } ] }
//! ```

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::geometry::{Approach, Turn};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadnetFile {
    pub intersections: Vec<IntersectionRecord>,
    #[serde(default)]
    pub links: Vec<LinkRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionRecord {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub lanes: Vec<LaneRecord>,
    pub phases: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneRecord {
    pub id: String,
    pub length_m: f64,
    pub approach: Approach,
    pub turn: Turn,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub from: String,
    pub to: String,
}

const TOP_FIELDS: &[&str] = &["intersections", "links"];
const INTERSECTION_FIELDS: &[&str] = &["id", "x", "y", "lanes", "phases"];
const LANE_FIELDS: &[&str] = &["id", "length_m", "approach", "turn"];
const LINK_FIELDS: &[&str] = &["from", "to"];

fn unknown_keys(value: &Value, known: &[&str], path: &str, out: &mut Vec<String>) {
    if let Value::Object(map) = value {
        for key in map.keys() {
            if !known.contains(&key.as_str()) {
                out.push(format!("{path}.{key}"));
            }
        }
    }
}

/// Paths of fields the schema does not know about, e.g. `intersections[0].speed`.
pub fn unknown_fields(value: &Value) -> Vec<String> {
    let mut out = Vec::new();
    unknown_keys(value, TOP_FIELDS, "$", &mut out);
    if let Some(items) = value.get("intersections").and_then(Value::as_array) {
        for (i, item) in items.iter().enumerate() {
            let path = format!("$.intersections[{i}]");
            unknown_keys(item, INTERSECTION_FIELDS, &path, &mut out);
            if let Some(lanes) = item.get("lanes").and_then(Value::as_array) {
                for (j, lane) in lanes.iter().enumerate() {
                    unknown_keys(lane, LANE_FIELDS, &format!("{path}.lanes[{j}]"), &mut out);
                }
            }
        }
    }
    if let Some(links) = value.get("links").and_then(Value::as_array) {
        for (i, link) in links.iter().enumerate() {
            unknown_keys(link, LINK_FIELDS, &format!("$.links[{i}]"), &mut out);
        }
    }
    out
}
