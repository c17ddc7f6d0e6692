//! Structured quadrilateral grid over a rectangular design domain, plus the
//! layer partition used by the layer-by-layer build simulations.
//!
//! Nodes and elements are numbered column-major (the y index runs fastest).
//! With the short axis vertical this keeps the bandwidth of assembled
//! stiffness matrices proportional to the node count of one column, which the
//! banded direct solver relies on.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// One side of the rectangular design domain.
///
/// `D` is the bottom edge (y = 0), `U` the top, `L` the left edge (x = 0),
/// `R` the right. The same enum selects the base plate for build simulations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    U,
    D,
    L,
    R,
}

impl Side {
    /// Unit vector pointing from this side into the domain interior.
    /// When the side is the base plate, this is the build direction.
    pub fn inward(self) -> [f64; 2] {
        match self {
            Side::D => [0.0, 1.0],
            Side::U => [0.0, -1.0],
            Side::L => [1.0, 0.0],
            Side::R => [-1.0, 0.0],
        }
    }
}

impl std::str::FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "U" | "u" => Ok(Side::U),
            "D" | "d" => Ok(Side::D),
            "L" | "l" => Ok(Side::L),
            "R" | "r" => Ok(Side::R),
            other => Err(Error::Mesh(format!(
                "unknown side tag {other:?}; expected one of U, D, L, R"
            ))),
        }
    }
}

/// Uniform grid of 4-node quadrilaterals on `[0, width] x [0, height]`.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub width: f64,
    pub height: f64,
    /// Element counts along x and y.
    pub nx: usize,
    pub ny: usize,
    /// Element edge lengths.
    pub dx: f64,
    pub dy: f64,
}

impl Mesh {
    /// Builds a uniform grid. Extents and element counts must be positive.
    pub fn grid(width: f64, height: f64, nx: usize, ny: usize) -> Result<Mesh> {
        if !(width > 0.0) || !(height > 0.0) {
            return Err(Error::Mesh(format!(
                "domain extents must be positive, got {width} x {height}"
            )));
        }
        if nx == 0 || ny == 0 {
            return Err(Error::Mesh(format!(
                "element counts must be positive, got {nx} x {ny}"
            )));
        }
        Ok(Mesh {
            width,
            height,
            nx,
            ny,
            dx: width / nx as f64,
            dy: height / ny as f64,
        })
    }

    pub fn num_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn num_elements(&self) -> usize {
        self.nx * self.ny
    }

    pub fn element_area(&self) -> f64 {
        self.dx * self.dy
    }

    pub fn domain_area(&self) -> f64 {
        self.width * self.height
    }

    /// Node index for grid coordinates `(ix, iy)`; y runs fastest.
    #[inline]
    pub fn node_at(&self, ix: usize, iy: usize) -> usize {
        ix * (self.ny + 1) + iy
    }

    #[inline]
    pub fn node_grid_coords(&self, node: usize) -> (usize, usize) {
        (node / (self.ny + 1), node % (self.ny + 1))
    }

    #[inline]
    pub fn node_coords(&self, node: usize) -> [f64; 2] {
        let (ix, iy) = self.node_grid_coords(node);
        [ix as f64 * self.dx, iy as f64 * self.dy]
    }

    /// Element index for grid coordinates `(ex, ey)`; y runs fastest.
    #[inline]
    pub fn element_at(&self, ex: usize, ey: usize) -> usize {
        ex * self.ny + ey
    }

    #[inline]
    pub fn element_grid_coords(&self, element: usize) -> (usize, usize) {
        (element / self.ny, element % self.ny)
    }

    /// Counter-clockwise connectivity: bottom-left, bottom-right, top-right,
    /// top-left.
    #[inline]
    pub fn element_nodes(&self, element: usize) -> [usize; 4] {
        let (ex, ey) = self.element_grid_coords(element);
        [
            self.node_at(ex, ey),
            self.node_at(ex + 1, ey),
            self.node_at(ex + 1, ey + 1),
            self.node_at(ex, ey + 1),
        ]
    }

    #[inline]
    pub fn element_centroid(&self, element: usize) -> [f64; 2] {
        let (ex, ey) = self.element_grid_coords(element);
        [
            (ex as f64 + 0.5) * self.dx,
            (ey as f64 + 0.5) * self.dy,
        ]
    }

    /// All node indices lying on the given side, in increasing grid order.
    pub fn side_nodes(&self, side: Side) -> Vec<usize> {
        match side {
            Side::D => (0..=self.nx).map(|ix| self.node_at(ix, 0)).collect(),
            Side::U => (0..=self.nx).map(|ix| self.node_at(ix, self.ny)).collect(),
            Side::L => (0..=self.ny).map(|iy| self.node_at(0, iy)).collect(),
            Side::R => (0..=self.ny).map(|iy| self.node_at(self.nx, iy)).collect(),
        }
    }

    /// Boundary edges (node pairs) of a side, one per boundary element face.
    pub fn side_edges(&self, side: Side) -> Vec<[usize; 2]> {
        let nodes = self.side_nodes(side);
        nodes.windows(2).map(|w| [w[0], w[1]]).collect()
    }

    /// Length of one boundary element face on the given side.
    pub fn side_edge_length(&self, side: Side) -> f64 {
        match side {
            Side::D | Side::U => self.dx,
            Side::L | Side::R => self.dy,
        }
    }

    /// Sorted, deduplicated node indices touched by the given elements.
    pub fn nodes_of_elements(&self, elements: &[usize]) -> Vec<usize> {
        let mut seen = vec![false; self.num_nodes()];
        for &e in elements {
            for n in self.element_nodes(e) {
                seen[n] = true;
            }
        }
        seen.iter()
            .enumerate()
            .filter_map(|(n, &s)| s.then_some(n))
            .collect()
    }

    /// Averages a nodal field to element centroids (mean of corner values).
    pub fn average_to_elements(&self, nodal: &[f64]) -> Vec<f64> {
        assert_eq!(nodal.len(), self.num_nodes(), "nodal field length mismatch");
        (0..self.num_elements())
            .map(|e| {
                let n = self.element_nodes(e);
                0.25 * (nodal[n[0]] + nodal[n[1]] + nodal[n[2]] + nodal[n[3]])
            })
            .collect()
    }

    /// Spreads an element field to nodes by averaging over adjacent elements.
    pub fn average_to_nodes(&self, elemental: &[f64]) -> Vec<f64> {
        assert_eq!(
            elemental.len(),
            self.num_elements(),
            "element field length mismatch"
        );
        let mut sum = vec![0.0; self.num_nodes()];
        let mut count = vec![0u32; self.num_nodes()];
        for e in 0..self.num_elements() {
            for n in self.element_nodes(e) {
                sum[n] += elemental[e];
                count[n] += 1;
            }
        }
        for (s, c) in sum.iter_mut().zip(&count) {
            *s /= f64::from(*c);
        }
        sum
    }
}

/// Assignment of every element to one build layer, ordered from the base
/// plate outward. Layer indices are 1-based.
#[derive(Debug, Clone)]
pub struct LayerPartition {
    pub count: usize,
    pub base: Side,
    /// 1-based layer index per element.
    layer_of: Vec<u32>,
    /// Elements of each layer, grouped; `layers[k]` holds layer `k + 1`.
    layers: Vec<Vec<usize>>,
}

impl LayerPartition {
    /// Splits the mesh into `count` slabs perpendicular to the build
    /// direction. An element belongs to the layer containing its centroid.
    /// Every layer must receive at least one element.
    pub fn new(mesh: &Mesh, count: usize, base: Side) -> Result<LayerPartition> {
        if count == 0 {
            return Err(Error::Mesh("layer count must be at least 1".into()));
        }
        let extent = match base {
            Side::U | Side::D => mesh.height,
            Side::L | Side::R => mesh.width,
        };
        let mut layer_of = Vec::with_capacity(mesh.num_elements());
        let mut layers = vec![Vec::new(); count];
        for e in 0..mesh.num_elements() {
            let c = mesh.element_centroid(e);
            // Distance from the base plate along the build direction.
            let h = match base {
                Side::D => c[1],
                Side::U => mesh.height - c[1],
                Side::L => c[0],
                Side::R => mesh.width - c[0],
            };
            let k = ((h / extent) * count as f64).ceil() as usize;
            let k = k.clamp(1, count);
            layer_of.push(k as u32);
            layers[k - 1].push(e);
        }
        if let Some(empty) = layers.iter().position(Vec::is_empty) {
            return Err(Error::Mesh(format!(
                "layer {} of {count} received no elements; reduce the layer \
                 count below the element count across the build direction",
                empty + 1
            )));
        }
        Ok(LayerPartition {
            count,
            base,
            layer_of,
            layers,
        })
    }

    /// 1-based layer index of an element.
    pub fn layer_of(&self, element: usize) -> usize {
        self.layer_of[element] as usize
    }

    /// Elements deposited at build step `step` (1-based).
    pub fn added_elements(&self, step: usize) -> &[usize] {
        assert!(
            (1..=self.count).contains(&step),
            "build step {step} outside 1..={}",
            self.count
        );
        &self.layers[step - 1]
    }

    /// Elements present after build step `step`: layers `1..=step`.
    pub fn active_elements(&self, step: usize) -> Vec<usize> {
        assert!(
            (1..=self.count).contains(&step),
            "build step {step} outside 1..={}",
            self.count
        );
        let mut out: Vec<usize> = self.layers[..step].iter().flatten().copied().collect();
        out.sort_unstable();
        out
    }

    /// Build direction: unit vector from the base plate into the domain.
    pub fn build_direction(&self) -> [f64; 2] {
        self.base.inward()
    }
}
