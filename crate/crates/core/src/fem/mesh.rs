use crate::error::{invalid, Result};

/// Uniform triangulation of `[0,1]^2` with `ng` cells per side.
///
/// Nodes are numbered row-major: node `j * (ng + 1) + i` sits at
/// `(i / ng, j / ng)`. Every square cell is split along its
/// lower-left to upper-right diagonal, so all interior nodes have the same
/// six-triangle patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    ng: usize,
    nodes: Vec<[f64; 2]>,
    elements: Vec<[usize; 3]>,
    boundary_nodes: Vec<usize>,
    /// Position of each node in the interior numbering, `None` on the boundary.
    interior_index: Vec<Option<usize>>,
    interior_nodes: Vec<usize>,
}

impl Mesh {
    pub fn new(ng: usize) -> Result<Self> {
        if ng < 2 {
            return invalid(format!("mesh needs at least 2 cells per side, got {ng}"));
        }
        let np = ng + 1;
        let h = 1.0 / ng as f64;
        let mut nodes = Vec::with_capacity(np * np);
        for j in 0..np {
            for i in 0..np {
                // exact endpoints so boundary detection is not subject to rounding
                let x = if i == ng { 1.0 } else { i as f64 * h };
                let y = if j == ng { 1.0 } else { j as f64 * h };
                nodes.push([x, y]);
            }
        }
        let mut elements = Vec::with_capacity(2 * ng * ng);
        for j in 0..ng {
            for i in 0..ng {
                let n00 = j * np + i;
                let n10 = n00 + 1;
                let n01 = n00 + np;
                let n11 = n01 + 1;
                elements.push([n00, n10, n11]);
                elements.push([n00, n11, n01]);
            }
        }
        let mut boundary_nodes = Vec::new();
        let mut interior_nodes = Vec::new();
        let mut interior_index = vec![None; np * np];
        for j in 0..np {
            for i in 0..np {
                let k = j * np + i;
                if i == 0 || j == 0 || i == ng || j == ng {
                    boundary_nodes.push(k);
                } else {
                    interior_index[k] = Some(interior_nodes.len());
                    interior_nodes.push(k);
                }
            }
        }
        Ok(Self {
            ng,
            nodes,
            elements,
            boundary_nodes,
            interior_index,
            interior_nodes,
        })
    }

    pub fn ng(&self) -> usize {
        self.ng
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary_nodes
    }

    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior_nodes
    }

    pub fn interior_index(&self, node: usize) -> Option<usize> {
        self.interior_index[node]
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.interior_index[node].is_none()
    }

    /// Signed area of element `e` (positive for counter-clockwise ordering).
    pub fn signed_area(&self, e: usize) -> f64 {
        let [a, b, c] = self.elements[e];
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
    }

    /// Node index closest to `(x, y)`.
    pub fn nearest_node(&self, x: f64, y: f64) -> usize {
        let i = (x * self.ng as f64).round().clamp(0.0, self.ng as f64) as usize;
        let j = (y * self.ng as f64).round().clamp(0.0, self.ng as f64) as usize;
        j * (self.ng + 1) + i
    }
}
