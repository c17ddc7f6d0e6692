//! Finite-element assembly on the structured grid: scalar
//! diffusion-reaction operators and plane-stress elasticity, both over
//! arbitrary active element subsets.

pub mod element;
pub mod system;

pub use element::{plane_stress_matrix, ElasticRef, QuadRef};
pub use system::{DofMap, Factored, LinearSystem};

use crate::mesh::Mesh;

/// Extracts the four nodal values of a scalar field on one element.
#[inline]
pub fn gather4(field: &[f64], nodes: &[usize; 4]) -> [f64; 4] {
    [
        field[nodes[0]],
        field[nodes[1]],
        field[nodes[2]],
        field[nodes[3]],
    ]
}

/// Extracts the eight displacement dofs (interleaved x, y) of one element
/// from a full-length vector field.
#[inline]
pub fn gather8(field: &[f64], nodes: &[usize; 4]) -> [f64; 8] {
    let mut u = [0.0; 8];
    for (a, &n) in nodes.iter().enumerate() {
        u[2 * a] = field[2 * n];
        u[2 * a + 1] = field[2 * n + 1];
    }
    u
}

/// Largest compact-index spread of any element: the node-level bandwidth of
/// matrices assembled over `elements` under `map`.
pub fn node_bandwidth(mesh: &Mesh, elements: &[usize], map: &DofMap) -> usize {
    let mut bw = 0;
    for &e in elements {
        let nodes = mesh.element_nodes(e);
        let idx = nodes.map(|n| map.index_of(n));
        let lo = idx.iter().min().copied().unwrap();
        let hi = idx.iter().max().copied().unwrap();
        bw = bw.max(hi - lo);
    }
    bw
}

/// Builds the DofMap over the nodes touched by `elements`.
pub fn active_dof_map(mesh: &Mesh, elements: &[usize]) -> DofMap {
    DofMap::from_active_nodes(mesh.num_nodes(), mesh.nodes_of_elements(elements))
}

/// Assembles `∫ d(e) ∇u·∇v + m(e) u v` over the active elements.
///
/// `diffusivity` and `mass` are evaluated per global element index; the
/// returned system has one dof per active node. Loads are added by the
/// caller.
pub fn assemble_scalar(
    mesh: &Mesh,
    quad: &QuadRef,
    elements: &[usize],
    map: &DofMap,
    diffusivity: impl Fn(usize) -> f64,
    mass: impl Fn(usize) -> f64,
) -> LinearSystem {
    let bw = node_bandwidth(mesh, elements, map);
    let mut sys = LinearSystem::new(map.len(), bw);
    for &e in elements {
        let nodes = mesh.element_nodes(e);
        let idx = nodes.map(|n| map.index_of(n));
        let d = diffusivity(e);
        let m = mass(e);
        for a in 0..4 {
            for b in 0..=a {
                let v = d * quad.k_scalar[a][b] + m * quad.m_scalar[a][b];
                if v != 0.0 {
                    sys.add(idx[a], idx[b], v);
                }
            }
        }
    }
    sys
}

/// Adds the consistent load of an element-constant source density:
/// `rhs_a += s(e) ∫_e N_a`.
pub fn add_element_source(
    sys: &mut LinearSystem,
    mesh: &Mesh,
    quad: &QuadRef,
    elements: &[usize],
    map: &DofMap,
    source: impl Fn(usize) -> f64,
) {
    let quarter = quad.area / 4.0;
    for &e in elements {
        let s = source(e) * quarter;
        if s == 0.0 {
            continue;
        }
        for n in mesh.element_nodes(e) {
            sys.add_rhs(map.index_of(n), s);
        }
    }
}

/// Assembles plane-stress elasticity `∫ scale(e) ε(u):C:ε(v)` over the
/// active elements, two interleaved dofs per active node.
pub fn assemble_elasticity(
    mesh: &Mesh,
    eref: &ElasticRef,
    elements: &[usize],
    map: &DofMap,
    scale: impl Fn(usize) -> f64,
) -> LinearSystem {
    let bw = 2 * node_bandwidth(mesh, elements, map) + 1;
    let mut sys = LinearSystem::new(2 * map.len(), bw);
    for &e in elements {
        let nodes = mesh.element_nodes(e);
        let idx = nodes.map(|n| map.index_of(n));
        let s = scale(e);
        for a in 0..4 {
            for b in 0..4 {
                for ca in 0..2 {
                    for cb in 0..2 {
                        let p = 2 * a + ca;
                        let q = 2 * b + cb;
                        let gi = 2 * idx[a] + ca;
                        let gj = 2 * idx[b] + cb;
                        if gi >= gj {
                            let v = s * eref.ke[p][q];
                            if v != 0.0 {
                                sys.add(gi, gj, v);
                            }
                        }
                    }
                }
            }
        }
    }
    sys
}

/// Adds a uniform traction on a run of boundary edges: each edge spreads
/// `t * edge_length / 2` to its two end nodes (linear shape functions).
pub fn add_edge_traction(
    sys: &mut LinearSystem,
    map: &DofMap,
    edges: &[[usize; 2]],
    edge_length: f64,
    traction: [f64; 2],
) {
    let half = 0.5 * edge_length;
    for edge in edges {
        for &n in edge {
            let i = map.index_of(n);
            sys.add_rhs(2 * i, traction[0] * half);
            sys.add_rhs(2 * i + 1, traction[1] * half);
        }
    }
}

/// Pins both displacement components of the given global nodes to zero.
pub fn clamp_nodes(sys: &mut LinearSystem, map: &DofMap, nodes: &[usize]) {
    for &n in nodes {
        let i = map.index_of(n);
        sys.set_dirichlet(2 * i, 0.0);
        sys.set_dirichlet(2 * i + 1, 0.0);
    }
}
