//! Node placement, radio adjacency and hop counts from the source.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_RANGE_M: f64 = 11.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceCorner {
    #[default]
    Origin,
    OppositeX,
    OppositeY,
    Far,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub positions: Vec<(f64, f64)>,
    pub source: usize,
    pub max_range: f64,
    pub adjacency: Vec<Vec<bool>>,
    pub hop_count: Vec<usize>,
    pub diameter: usize,
}

impl Topology {
    pub fn from_positions(positions: Vec<(f64, f64)>, source: usize, max_range: f64) -> Result<Self> {
        let n = positions.len();
        if n == 0 {
            return Err(Error::Topology("no nodes".into()));
        }
        if source >= n {
            return Err(Error::Topology(format!("source {source} outside {n} nodes")));
        }
        if !(max_range > 0.0) {
            return Err(Error::Topology("max range must be positive".into()));
        }
        let mut adjacency = vec![vec![false; n]; n];
        for i in 0..n {
            for j in 0..n {
                adjacency[i][j] = i != j && distance(positions[i], positions[j]) <= max_range;
            }
        }
        let mut hop_count = vec![usize::MAX; n];
        hop_count[source] = 0;
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if adjacency[u][v] && hop_count[v] == usize::MAX {
                    hop_count[v] = hop_count[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        if let Some(lost) = hop_count.iter().position(|&h| h == usize::MAX) {
            return Err(Error::Topology(format!(
                "node {lost} is not reachable from the source within {max_range} m"
            )));
        }
        let diameter = hop_count.iter().copied().max().unwrap_or(0);
        Ok(Self {
            positions,
            source,
            max_range,
            adjacency,
            hop_count,
            diameter,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        distance(self.positions[a], self.positions[b])
    }

    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[node]
            .iter()
            .enumerate()
            .filter(|(_, &a)| a)
            .map(|(j, _)| j)
    }

    pub fn destinations(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| i != self.source)
    }
}

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Regular lattice with node `r * cols + c` at `(c * d, r * d)`.
pub fn build_grid(rows: usize, cols: usize, d: f64, max_range: f64, corner: SourceCorner) -> Result<Topology> {
    if rows == 0 || cols == 0 {
        return Err(Error::Topology("grid needs at least one row and one column".into()));
    }
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::Topology(format!("grid distance must be positive, got {d}")));
    }
    let positions = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (c as f64 * d, r as f64 * d)))
        .collect();
    let source = match corner {
        SourceCorner::Origin => 0,
        SourceCorner::OppositeX => cols - 1,
        SourceCorner::OppositeY => (rows - 1) * cols,
        SourceCorner::Far => rows * cols - 1,
    };
    Topology::from_positions(positions, source, max_range)
}
