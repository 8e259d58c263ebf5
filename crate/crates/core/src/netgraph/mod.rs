//! Road network graph: intersections, directed links, Gaussian edge weights and Laplacians.

pub mod geometry;
mod laplacian;
pub mod roadnet;

use std::collections::HashMap;

use thiserror::Error;

use crate::linalg::Matrix;
pub use geometry::{compatible, standard_phases, Approach, Movement, Turn, MOVEMENTS, PHASES};
pub use laplacian::{normalized_laplacian, power_iteration_lambda_max, scale_laplacian, Laplacian};
pub use roadnet::{IntersectionRecord, LaneRecord, LinkRecord, RoadnetFile};

/// Effective vehicle length (car plus gap) used to derive lane capacity.
pub const VEHICLE_SPACING_M: f64 = 7.5;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("roadnet parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("malformed roadnet: {0}")]
    Malformed(String),
    #[error("intersection `{intersection}` phase {phase}: movements {a} and {b} conflict")]
    ConflictingPhase { intersection: String, phase: usize, a: Movement, b: Movement },
    #[error("intersection `{0}` has no links in a multi-intersection network")]
    Disconnected(String),
    #[error("edge-weight sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("negative edge weight {w} between nodes {x} and {y}")]
    NegativeWeight { x: usize, y: usize, w: f64 },
    #[error("lambda_max must be positive, got {0}")]
    NonPositiveLambda(f64),
}

pub type Result<T> = std::result::Result<T, GraphError>;

#[derive(Debug, Clone, PartialEq)]
pub struct LaneSpec {
    pub id: String,
    pub length_m: f64,
}

/// One four-legged intersection: 12 incoming lanes in canonical movement order and 4 phases.
#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionSpec {
    pub id: String,
    pub position: (f64, f64),
    pub lanes: [LaneSpec; MOVEMENTS],
    pub phases: [[Movement; 2]; PHASES],
}

impl IntersectionSpec {
    pub fn lane(&self, m: Movement) -> &LaneSpec {
        &self.lanes[m.index()]
    }
}

#[derive(Debug, Clone)]
pub struct RoadGraph {
    nodes: Vec<IntersectionSpec>,
    edges: Vec<bool>,
    weights: Matrix,
    links: Vec<(usize, usize)>,
    /// `downstream[x][side]`: node reached by leaving `x` through `side`, if linked.
    downstream: Vec<[Option<usize>; 4]>,
    index: HashMap<String, usize>,
}

impl RoadGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[IntersectionSpec] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &IntersectionSpec {
        &self.nodes[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Undirected connectivity `e(x, y)`.
    pub fn edge(&self, x: usize, y: usize) -> bool {
        self.edges[x * self.len() + y]
    }

    pub fn degree(&self, x: usize) -> usize {
        (0..self.len()).filter(|&y| self.edge(x, y)).count()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn links(&self) -> &[(usize, usize)] {
        &self.links
    }

    pub fn position(&self, x: usize) -> (f64, f64) {
        self.nodes[x].position
    }

    pub fn distance(&self, x: usize, y: usize) -> f64 {
        let (ax, ay) = self.position(x);
        let (bx, by) = self.position(y);
        (ax - bx).hypot(ay - by)
    }

    pub fn downstream(&self, x: usize, side: Approach) -> Option<usize> {
        self.downstream[x][side.index()]
    }

    /// Node whose traffic enters `x` on `approach`, if any.
    pub fn upstream(&self, x: usize, approach: Approach) -> Option<usize> {
        (0..self.len()).find(|&y| self.downstream(y, approach.opposite()) == Some(x))
    }

    /// Neighbouring node on each side (either link direction), N/E/S/W order.
    pub fn neighbors(&self, x: usize) -> [Option<usize>; 4] {
        let mut out = [None; 4];
        for side in Approach::ALL {
            out[side.index()] = self.downstream(x, side).or_else(|| self.upstream(x, side));
        }
        out
    }

    /// Replaces the weight matrix after validating it against the edge set.
    pub fn with_weights(mut self, w: Matrix) -> Result<Self> {
        let n = self.len();
        if w.rows() != n || w.cols() != n {
            return Err(GraphError::Malformed(format!("weight matrix must be {n}x{n}")));
        }
        for x in 0..n {
            for y in 0..n {
                let v = w[(x, y)];
                if v < 0.0 {
                    return Err(GraphError::NegativeWeight { x, y, w: v });
                }
                if v != w[(y, x)] || (x == y && v != 0.0) || (v > 0.0 && !self.edge(x, y)) {
                    return Err(GraphError::Malformed(format!("invalid weight at ({x}, {y})")));
                }
            }
        }
        self.weights = w;
        Ok(self)
    }

    /// Stable 64-bit fingerprint of node ids and weights, used to pair checkpoints with graphs.
    pub fn fingerprint(&self) -> u64 {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.len() as u64).to_le_bytes());
        for node in &self.nodes {
            h.update(node.id.as_bytes());
            h.update([0u8]);
        }
        for v in self.weights.as_slice() {
            h.update(v.to_le_bytes());
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }

    /// Mean distance over linked node pairs; 1.0 when there are no links.
    pub fn mean_link_distance(&self) -> f64 {
        if self.links.is_empty() {
            return 1.0;
        }
        self.links.iter().map(|&(a, b)| self.distance(a, b)).sum::<f64>() / self.links.len() as f64
    }
}

/// Parses roadnet JSON, returning the record and the list of ignored unknown fields.
pub fn parse_roadnet(text: &str) -> Result<(RoadnetFile, Vec<String>)> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let unknown = roadnet::unknown_fields(&value);
    if !unknown.is_empty() {
        log::warn!("roadnet: ignoring unknown fields: {}", unknown.join(", "));
    }
    let file: RoadnetFile = serde_json::from_value(value)?;
    Ok((file, unknown))
}

/// Parses and validates a roadnet file, with default Gaussian edge weights.
pub fn build_graph(text: &str) -> Result<RoadGraph> {
    let (file, _) = parse_roadnet(text)?;
    RoadGraph::from_file(&file)
}

fn side_towards(from: (f64, f64), to: (f64, f64)) -> Option<Approach> {
    let dx = to.0 - from.0;
    let dy = to.1 - from.1;
    if dx == 0.0 && dy == 0.0 {
        None
    } else if dx.abs() >= dy.abs() {
        Some(if dx > 0.0 { Approach::E } else { Approach::W })
    } else {
        Some(if dy > 0.0 { Approach::N } else { Approach::S })
    }
}

fn parse_intersection(rec: &IntersectionRecord) -> Result<IntersectionSpec> {
    let malformed = |msg: String| GraphError::Malformed(format!("intersection `{}`: {msg}", rec.id));
    if !rec.x.is_finite() || !rec.y.is_finite() {
        return Err(malformed("non-finite position".into()));
    }
    if rec.lanes.len() != MOVEMENTS {
        return Err(malformed(format!("expected {MOVEMENTS} incoming lanes, got {}", rec.lanes.len())));
    }
    let mut slots: [Option<LaneSpec>; MOVEMENTS] = Default::default();
    for lane in &rec.lanes {
        let m = Movement::new(lane.approach, lane.turn);
        if !(lane.length_m.is_finite() && lane.length_m >= VEHICLE_SPACING_M) {
            return Err(malformed(format!("lane `{}` length {} m is below one vehicle", lane.id, lane.length_m)));
        }
        let slot = &mut slots[m.index()];
        if slot.is_some() {
            return Err(malformed(format!("movement {m} has more than one lane")));
        }
        *slot = Some(LaneSpec { id: lane.id.clone(), length_m: lane.length_m });
    }
    let lanes = slots.map(|s| s.expect("12 distinct movements fill every slot"));

    if rec.phases.len() != PHASES {
        return Err(malformed(format!("expected {PHASES} phases, got {}", rec.phases.len())));
    }
    let mut phases = [[Movement::from_index(0); 2]; PHASES];
    for (p, names) in rec.phases.iter().enumerate() {
        if names.len() != 2 {
            return Err(malformed(format!("phase {p} must pair exactly two movements")));
        }
        let a: Movement = names[0].parse().map_err(malformed)?;
        let b: Movement = names[1].parse().map_err(malformed)?;
        if !compatible(a, b) {
            return Err(GraphError::ConflictingPhase { intersection: rec.id.clone(), phase: p, a, b });
        }
        phases[p] = [a, b];
    }
    Ok(IntersectionSpec { id: rec.id.clone(), position: (rec.x, rec.y), lanes, phases })
}

impl RoadGraph {
    pub fn from_file(file: &RoadnetFile) -> Result<RoadGraph> {
        if file.intersections.is_empty() {
            return Err(GraphError::Malformed("no intersections".into()));
        }
        let mut index = HashMap::new();
        let mut lane_ids = HashMap::new();
        let mut nodes = Vec::with_capacity(file.intersections.len());
        for rec in &file.intersections {
            if index.insert(rec.id.clone(), nodes.len()).is_some() {
                return Err(GraphError::Malformed(format!("duplicate intersection id `{}`", rec.id)));
            }
            let spec = parse_intersection(rec)?;
            for lane in &spec.lanes {
                if lane_ids.insert(lane.id.clone(), ()).is_some() {
                    return Err(GraphError::Malformed(format!("duplicate lane id `{}`", lane.id)));
                }
            }
            nodes.push(spec);
        }

        let n = nodes.len();
        let mut edges = vec![false; n * n];
        let mut downstream = vec![[None; 4]; n];
        let mut links = Vec::with_capacity(file.links.len());
        for link in &file.links {
            let lookup = |id: &str| {
                index.get(id).copied().ok_or_else(|| GraphError::Malformed(format!("link references unknown intersection `{id}`")))
            };
            let (a, b) = (lookup(&link.from)?, lookup(&link.to)?);
            let side = side_towards(nodes[a].position, nodes[b].position)
                .ok_or_else(|| GraphError::Malformed(format!("link {} -> {} joins coincident intersections", link.from, link.to)))?;
            let slot: &mut Option<usize> = &mut downstream[a][side.index()];
            if slot.is_some() {
                return Err(GraphError::Malformed(format!("intersection `{}` has two links leaving {}", link.from, side.as_str())));
            }
            *slot = Some(b);
            edges[a * n + b] = true;
            edges[b * n + a] = true;
            links.push((a, b));
        }

        let mut graph = RoadGraph { nodes, edges, weights: Matrix::zeros(n, n), links, downstream, index };
        if n > 1 {
            if let Some(x) = (0..n).find(|&x| graph.degree(x) == 0) {
                return Err(GraphError::Disconnected(graph.nodes[x].id.clone()));
            }
        }
        let sigma = graph.mean_link_distance();
        graph.weights = edge_weights(&graph, sigma, f64::INFINITY)?;
        Ok(graph)
    }
}

/// Thresholded Gaussian kernel over connected pairs: `exp(-d^2 / sigma^2)` if `d <= cutoff`.
pub fn edge_weights(graph: &RoadGraph, sigma: f64, cutoff: f64) -> Result<Matrix> {
    if !(sigma > 0.0) {
        return Err(GraphError::NonPositiveSigma(sigma));
    }
    let n = graph.len();
    let mut w = Matrix::zeros(n, n);
    for x in 0..n {
        for y in 0..n {
            if x == y || !graph.edge(x, y) {
                continue;
            }
            let d = graph.distance(x, y);
            if d <= cutoff {
                w[(x, y)] = (-(d * d) / (sigma * sigma)).exp();
            }
        }
    }
    Ok(w)
}
