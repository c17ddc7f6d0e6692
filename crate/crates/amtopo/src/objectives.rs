//! Performance objectives: structural compliance and thermal compliance.
//!
//! Both are self-adjoint — the state solution doubles as its own adjoint —
//! so one linear solve yields the value and the full sensitivity field.
//! Sensitivities follow the convention used across this crate: they are
//! derivatives with respect to presence of material, nonpositive here
//! because removing material can only make a compliant structure worse.

use crate::build_mechanical::polarization_matrix;
use crate::error::{Error, Result};
use crate::fem::{self, DofMap, ElasticRef, QuadRef};
use crate::mesh::{Mesh, Side};

/// Uniform traction applied to the boundary edges of `side` whose nodes lie
/// within the coordinate interval `[from, to]` (x-range for U/D, y-range
/// for L/R).
#[derive(Debug, Clone)]
pub struct EdgeLoad {
    pub side: Side,
    pub from: f64,
    pub to: f64,
    pub traction: [f64; 2],
}

/// Supports and loads of a structural problem.
#[derive(Debug, Clone, Default)]
pub struct ElasticBc {
    /// (node, fix x, fix y)
    pub fixed: Vec<(usize, bool, bool)>,
    /// Concentrated nodal forces.
    pub point_loads: Vec<(usize, [f64; 2])>,
    /// Distributed tractions on boundary segments.
    pub edge_loads: Vec<EdgeLoad>,
}

impl ElasticBc {
    /// Fixes both components of every node on a side.
    pub fn clamp_side(&mut self, mesh: &Mesh, side: Side) {
        for n in mesh.side_nodes(side) {
            self.fixed.push((n, true, true));
        }
    }

    /// Fixes one component (0 = x, 1 = y) of every node on a side.
    pub fn roller_side(&mut self, mesh: &Mesh, side: Side, comp: usize) {
        for n in mesh.side_nodes(side) {
            self.fixed.push((n, comp == 0, comp == 1));
        }
    }

    fn has_support(&self) -> bool {
        self.fixed.iter().any(|&(_, fx, fy)| fx || fy)
    }
}

/// Edges of `side` whose end nodes both lie inside the coordinate range.
fn edges_in_range(mesh: &Mesh, side: Side, from: f64, to: f64) -> Vec<[usize; 2]> {
    let along = |n: usize| {
        let [x, y] = mesh.node_coords(n);
        match side {
            Side::U | Side::D => x,
            Side::L | Side::R => y,
        }
    };
    let tol = 1e-9 * (mesh.width + mesh.height);
    mesh.side_edges(side)
        .into_iter()
        .filter(|e| e.iter().all(|&n| along(n) >= from - tol && along(n) <= to + tol))
        .collect()
}

/// What a compliance analysis returns.
pub struct ComplianceEvaluation {
    /// Mean compliance: work of the applied loads.
    pub value: f64,
    /// Nodal displacements, two per node.
    pub displacement: Vec<f64>,
    /// Strain energy (equals `value` by the weak form; kept for checks).
    pub energy: f64,
    /// d(value)/d(stiff_scale_e): exact discrete derivative per element.
    pub element_sensitivity: Vec<f64>,
    /// Material-insertion derivative density per element:
    /// `-ε(v):A:ε(v)` averaged over the element. Nonpositive.
    pub element_derivative: Vec<f64>,
}

/// Minimum mean compliance analysis on the full fixed domain with ersatz
/// stiffness interpolation.
pub struct ComplianceModel {
    eref: ElasticRef,
    amat: [[f64; 3]; 3],
    map: DofMap,
    bc: ElasticBc,
    elements: Vec<usize>,
    /// Assembled load vector (compact dofs), before supports are applied.
    load: Vec<f64>,
}

impl ComplianceModel {
    pub fn new(mesh: &Mesh, young: f64, poisson: f64, bc: ElasticBc) -> Result<ComplianceModel> {
        if !bc.has_support() {
            return Err(Error::invalid(
                "supports",
                "a structural load case needs at least one fixed displacement",
            ));
        }
        let eref = ElasticRef::new(mesh.dx, mesh.dy, young, poisson);
        let amat = polarization_matrix(young, poisson)?;
        let map = DofMap::full(mesh.num_nodes());
        let mut load = vec![0.0; 2 * mesh.num_nodes()];
        for &(n, f) in &bc.point_loads {
            load[2 * map.index_of(n)] += f[0];
            load[2 * map.index_of(n) + 1] += f[1];
        }
        for el in &bc.edge_loads {
            let half = 0.5 * mesh.side_edge_length(el.side);
            for edge in edges_in_range(mesh, el.side, el.from, el.to) {
                for n in edge {
                    load[2 * map.index_of(n)] += el.traction[0] * half;
                    load[2 * map.index_of(n) + 1] += el.traction[1] * half;
                }
            }
        }
        if load.iter().all(|&v| v == 0.0) {
            log::warn!("structural load case carries no loads; solution will be zero");
        }
        Ok(ComplianceModel {
            eref,
            amat,
            map,
            bc,
            elements: (0..mesh.num_elements()).collect(),
            load,
        })
    }

    /// Static equilibrium displacement under the stored loads.
    pub fn solve(&self, mesh: &Mesh, stiff_scale: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(stiff_scale.len(), mesh.num_elements());
        let mut sys =
            fem::assemble_elasticity(mesh, &self.eref, &self.elements, &self.map, |e| {
                stiff_scale[e]
            });
        for (i, &f) in self.load.iter().enumerate() {
            if f != 0.0 {
                sys.add_rhs(i, f);
            }
        }
        for &(n, fx, fy) in &self.bc.fixed {
            let i = self.map.index_of(n);
            if fx {
                sys.set_dirichlet(2 * i, 0.0);
            }
            if fy {
                sys.set_dirichlet(2 * i + 1, 0.0);
            }
        }
        sys.solve()
    }

    /// Value, displacement, and both sensitivity fields in one pass.
    pub fn evaluate(&self, mesh: &Mesh, stiff_scale: &[f64]) -> Result<ComplianceEvaluation> {
        let v = self.solve(mesh, stiff_scale)?;
        let value: f64 = self.load.iter().zip(&v).map(|(f, u)| f * u).sum();
        let area = mesh.element_area();
        let mut energy = 0.0;
        let mut element_sensitivity = vec![0.0; mesh.num_elements()];
        let mut element_derivative = vec![0.0; mesh.num_elements()];
        for e in 0..mesh.num_elements() {
            let ve = fem::gather8(&v, &mesh.element_nodes(e));
            let mut vkv = 0.0;
            for p in 0..8 {
                let mut kv = 0.0;
                for q in 0..8 {
                    kv += self.eref.ke[p][q] * ve[q];
                }
                vkv += ve[p] * kv;
            }
            energy += stiff_scale[e] * vkv;
            // Self-adjoint: the adjoint is -v, so the stiffness chain gives
            // d(value)/d(scale) = -v K_e v.
            element_sensitivity[e] = -vkv;
            element_derivative[e] = -self.eref.strain_product(&self.amat, &ve, &ve) / area;
        }
        Ok(ComplianceEvaluation {
            value,
            displacement: v,
            energy,
            element_sensitivity,
            element_derivative,
        })
    }
}

/// What a thermal-compliance analysis returns.
pub struct ThermalComplianceEvaluation {
    /// `∫ Q (p - p_amb)`: heat-dissipation performance (lower is better).
    pub value: f64,
    /// Absolute nodal temperature, ambient included.
    pub temperature: Vec<f64>,
    /// d(value)/d(conduct_scale_e) per element; nonpositive.
    pub element_sensitivity: Vec<f64>,
    /// Material-insertion derivative density `-k ∇p·∇p`; nonpositive.
    pub element_derivative: Vec<f64>,
}

/// Steady conduction with a uniform volumetric heat source over the whole
/// fixed domain (void included — the ersatz factor only weakens
/// conduction) and a prescribed-temperature sink.
pub struct ConductionModel {
    quad: QuadRef,
    map: DofMap,
    elements: Vec<usize>,
    pub conductivity: f64,
    pub source: f64,
    pub ambient: f64,
    sink_nodes: Vec<usize>,
}

impl ConductionModel {
    pub fn new(
        mesh: &Mesh,
        conductivity: f64,
        source: f64,
        ambient: f64,
        sink_nodes: Vec<usize>,
    ) -> Result<ConductionModel> {
        if sink_nodes.is_empty() {
            return Err(Error::invalid(
                "sink",
                "a conduction load case needs a nonempty prescribed-temperature set",
            ));
        }
        if conductivity <= 0.0 {
            return Err(Error::invalid(
                "conductivity",
                format!("conductivity must be positive, got {conductivity}"),
            ));
        }
        Ok(ConductionModel {
            quad: QuadRef::new(mesh.dx, mesh.dy),
            map: DofMap::full(mesh.num_nodes()),
            elements: (0..mesh.num_elements()).collect(),
            conductivity,
            source,
            ambient,
            sink_nodes,
        })
    }

    /// Excess temperature (relative to ambient) at the nodes.
    fn solve_excess(&self, mesh: &Mesh, conduct_scale: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(conduct_scale.len(), mesh.num_elements());
        let k = self.conductivity;
        let mut sys = fem::assemble_scalar(
            mesh,
            &self.quad,
            &self.elements,
            &self.map,
            |e| k * conduct_scale[e],
            |_| 0.0,
        );
        fem::add_element_source(&mut sys, mesh, &self.quad, &self.elements, &self.map, |_| {
            self.source
        });
        for &n in &self.sink_nodes {
            sys.set_dirichlet(self.map.index_of(n), 0.0);
        }
        sys.solve()
    }

    pub fn evaluate(&self, mesh: &Mesh, conduct_scale: &[f64]) -> Result<ThermalComplianceEvaluation> {
        let excess = self.solve_excess(mesh, conduct_scale)?;
        // ∫ N_a over a rectangle is area/4, so the source integral is exact.
        let quarter = mesh.element_area() / 4.0;
        let mut value = 0.0;
        let area = mesh.element_area();
        let k = self.conductivity;
        let mut element_sensitivity = vec![0.0; mesh.num_elements()];
        let mut element_derivative = vec![0.0; mesh.num_elements()];
        for e in 0..mesh.num_elements() {
            let pe = fem::gather4(&excess, &mesh.element_nodes(e));
            value += self.source * quarter * pe.iter().sum::<f64>();
            let gg = self.quad.grad_product(&pe, &pe);
            element_sensitivity[e] = -k * gg;
            element_derivative[e] = -k * gg / area;
        }
        let temperature = excess.iter().map(|&p| p + self.ambient).collect();
        Ok(ThermalComplianceEvaluation {
            value,
            temperature,
            element_sensitivity,
            element_derivative,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::element_ersatz;

    fn bar_bc(mesh: &Mesh) -> ElasticBc {
        // Fix axial motion on the left edge, pin one corner vertically, and
        // pull on the right edge.
        let mut bc = ElasticBc::default();
        bc.roller_side(mesh, Side::L, 0);
        bc.fixed.push((mesh.node_at(0, 0), false, true));
        bc.edge_loads.push(EdgeLoad {
            side: Side::R,
            from: 0.0,
            to: mesh.height,
            traction: [0.7, 0.0],
        });
        bc
    }

    #[test]
    fn no_load_means_no_displacement() {
        let mesh = Mesh::grid(1.0, 1.0, 4, 4).unwrap();
        let mut bc = ElasticBc::default();
        bc.clamp_side(&mesh, Side::L);
        let model = ComplianceModel::new(&mesh, 10.0, 0.3, bc).unwrap();
        let eval = model.evaluate(&mesh, &vec![1.0; 16]).unwrap();
        assert_eq!(eval.value, 0.0);
        assert!(eval.displacement.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn supports_are_mandatory() {
        let mesh = Mesh::grid(1.0, 1.0, 2, 2).unwrap();
        assert!(ComplianceModel::new(&mesh, 10.0, 0.3, ElasticBc::default()).is_err());
    }

    #[test]
    fn uniaxial_bar_matches_the_analytic_solution() {
        // With nu = 0 the stretched strip is an exact 1D bar: u_x = t x / E,
        // compliance t^2 L A / E.
        let (young, t, width, height) = (3.0, 0.7, 2.0, 0.4);
        let mesh = Mesh::grid(width, height, 10, 2).unwrap();
        let model = ComplianceModel::new(&mesh, young, 0.0, bar_bc(&mesh)).unwrap();
        let eval = model.evaluate(&mesh, &vec![1.0; mesh.num_elements()]).unwrap();
        for n in 0..mesh.num_nodes() {
            let [x, _] = mesh.node_coords(n);
            assert!(
                (eval.displacement[2 * n] - t * x / young).abs() < 1e-10,
                "axial displacement at x={x}"
            );
            assert!(eval.displacement[2 * n + 1].abs() < 1e-10, "no transverse motion");
        }
        let exact = t * t * width * height / young;
        assert!((eval.value - exact).abs() < 1e-10, "{} vs {exact}", eval.value);
    }

    #[test]
    fn compliance_is_quadratic_in_the_load() {
        let mesh = Mesh::grid(2.0, 0.4, 10, 2).unwrap();
        let model1 = ComplianceModel::new(&mesh, 3.0, 0.2, bar_bc(&mesh)).unwrap();
        let mut bc2 = bar_bc(&mesh);
        for el in &mut bc2.edge_loads {
            el.traction[0] *= 2.0;
        }
        let model2 = ComplianceModel::new(&mesh, 3.0, 0.2, bc2).unwrap();
        let ones = vec![1.0; mesh.num_elements()];
        let e1 = model1.evaluate(&mesh, &ones).unwrap();
        let e2 = model2.evaluate(&mesh, &ones).unwrap();
        for i in 0..e1.displacement.len() {
            assert!((e2.displacement[i] - 2.0 * e1.displacement[i]).abs() < 1e-9);
        }
        assert!((e2.value - 4.0 * e1.value).abs() < 1e-9 * e1.value.abs());
    }

    #[test]
    fn compliance_equals_strain_energy() {
        let mesh = Mesh::grid(2.0, 1.0, 12, 6).unwrap();
        let phi: Vec<f64> = (0..mesh.num_nodes())
            .map(|n| {
                let [x, y] = mesh.node_coords(n);
                (3.0 * x).sin() + 0.3 * y
            })
            .collect();
        let scale = element_ersatz(&mesh, &phi, 0.5, 1e-3);
        let model = ComplianceModel::new(&mesh, 75.0, 0.34, bar_bc(&mesh)).unwrap();
        let eval = model.evaluate(&mesh, &scale).unwrap();
        assert!(eval.value > 0.0);
        assert!(
            (eval.value - eval.energy).abs() < 1e-8 * eval.value,
            "load work {} vs strain energy {}",
            eval.value,
            eval.energy
        );
    }

    #[test]
    fn compliance_derivatives_are_nonpositive_and_match_differences() {
        let mesh = Mesh::grid(1.0, 0.8, 10, 8).unwrap();
        let phi: Vec<f64> = (0..mesh.num_nodes())
            .map(|n| {
                let [x, y] = mesh.node_coords(n);
                if y > 0.3 + 0.2 * (6.0 * x).sin() { -1.0 } else { 1.0 }
            })
            .collect();
        let scale = element_ersatz(&mesh, &phi, 0.5, 1e-3);
        let model = ComplianceModel::new(&mesh, 75.0, 0.34, bar_bc(&mesh)).unwrap();
        let eval = model.evaluate(&mesh, &scale).unwrap();
        assert!(eval.element_sensitivity.iter().all(|&s| s <= 0.0));
        assert!(eval.element_derivative.iter().all(|&s| s <= 0.0));
        let max_sens = eval.element_sensitivity.iter().fold(0.0_f64, |m, &s| m.max(s.abs()));
        let candidates: Vec<usize> = (0..mesh.num_elements())
            .filter(|&e| eval.element_sensitivity[e].abs() >= 1e-3 * max_sens)
            .collect();
        assert!(candidates.len() >= 10, "need probe candidates");
        let stride = candidates.len() / 10;
        for i in 0..10 {
            let e = candidates[i * stride];
            let h = 1e-5_f64.max(1e-4 * scale[e]);
            let mut hi = scale.clone();
            hi[e] += h;
            let mut lo = scale.clone();
            lo[e] -= h;
            let fd = (model.evaluate(&mesh, &hi).unwrap().value
                - model.evaluate(&mesh, &lo).unwrap().value)
                / (2.0 * h);
            let pred = eval.element_sensitivity[e];
            assert!(
                (fd - pred).abs() <= 1e-3 * pred.abs(),
                "element {e}: fd {fd} vs self-adjoint {pred}"
            );
        }
    }

    #[test]
    fn zero_source_rests_at_ambient() {
        let mesh = Mesh::grid(1.0, 1.0, 5, 5).unwrap();
        let sink = mesh.side_nodes(Side::L);
        let model = ConductionModel::new(&mesh, 2.0, 0.0, 7.5, sink).unwrap();
        let eval = model.evaluate(&mesh, &vec![1.0; 25]).unwrap();
        assert_eq!(eval.value, 0.0);
        assert!(eval.temperature.iter().all(|&p| (p - 7.5).abs() < 1e-14));
    }

    #[test]
    fn heated_rod_matches_the_closed_form() {
        // Sink at x=0, insulated elsewhere, uniform source: the excess
        // temperature is parabolic and the thermal compliance integrates to
        // Q^2 L^3 / (3k) per unit width.
        let (length, k, q) = (1.0, 2.0, 3.0);
        let mesh = Mesh::grid(length, 0.05, 100, 1).unwrap();
        let model = ConductionModel::new(&mesh, k, q, 0.0, mesh.side_nodes(Side::L)).unwrap();
        let eval = model.evaluate(&mesh, &vec![1.0; mesh.num_elements()]).unwrap();
        let exact = q * q * length.powi(3) / (3.0 * k) * 0.05;
        let rel = (eval.value - exact).abs() / exact;
        assert!(rel < 0.01, "thermal compliance {} vs {exact} (rel {rel})", eval.value);
        // Peak excess at the far end: Q L^2 / (2k).
        let far = eval.temperature[mesh.node_at(100, 0)];
        assert!((far - q * length * length / (2.0 * k)).abs() < 0.01 * far);
    }

    #[test]
    fn thermal_compliance_scales_with_the_square_of_the_source() {
        let mesh = Mesh::grid(1.0, 1.0, 8, 8).unwrap();
        let sink = mesh.side_nodes(Side::D);
        let scale = vec![1.0; mesh.num_elements()];
        let j1 = ConductionModel::new(&mesh, 1.5, 1.0, 0.0, sink.clone())
            .unwrap()
            .evaluate(&mesh, &scale)
            .unwrap()
            .value;
        let j3 = ConductionModel::new(&mesh, 1.5, 3.0, 0.0, sink)
            .unwrap()
            .evaluate(&mesh, &scale)
            .unwrap()
            .value;
        assert!(j1 > 0.0);
        assert!((j3 - 9.0 * j1).abs() < 1e-9 * j1, "{j3} vs {}", 9.0 * j1);
    }

    #[test]
    fn ambient_offset_does_not_change_the_value() {
        let mesh = Mesh::grid(1.0, 1.0, 6, 6).unwrap();
        let scale = vec![1.0; mesh.num_elements()];
        let cold = ConductionModel::new(&mesh, 1.0, 2.0, 0.0, mesh.side_nodes(Side::D))
            .unwrap()
            .evaluate(&mesh, &scale)
            .unwrap();
        let warm = ConductionModel::new(&mesh, 1.0, 2.0, 20.0, mesh.side_nodes(Side::D))
            .unwrap()
            .evaluate(&mesh, &scale)
            .unwrap();
        assert!((cold.value - warm.value).abs() < 1e-12 * cold.value);
        for (c, w) in cold.temperature.iter().zip(&warm.temperature) {
            assert!((w - c - 20.0).abs() < 1e-12);
        }
    }

    #[test]
    fn conduction_derivatives_match_differences() {
        let mesh = Mesh::grid(1.0, 1.0, 10, 10).unwrap();
        let phi: Vec<f64> = (0..mesh.num_nodes())
            .map(|n| {
                let [x, y] = mesh.node_coords(n);
                if x < 0.35 || y < 0.4 { 1.0 } else { -1.0 }
            })
            .collect();
        let scale = element_ersatz(&mesh, &phi, 0.5, 1e-3);
        let model = ConductionModel::new(&mesh, 2.0, 1.0, 0.0, mesh.side_nodes(Side::L)).unwrap();
        let eval = model.evaluate(&mesh, &scale).unwrap();
        assert!(eval.element_sensitivity.iter().all(|&s| s <= 0.0));
        let max_sens = eval.element_sensitivity.iter().fold(0.0_f64, |m, &s| m.max(s.abs()));
        let candidates: Vec<usize> = (0..mesh.num_elements())
            .filter(|&e| eval.element_sensitivity[e].abs() >= 1e-3 * max_sens)
            .collect();
        let stride = candidates.len() / 10;
        for i in 0..10 {
            let e = candidates[i * stride];
            let h = 1e-5_f64.max(1e-4 * scale[e]);
            let mut hi = scale.clone();
            hi[e] += h;
            let mut lo = scale.clone();
            lo[e] -= h;
            let fd = (model.evaluate(&mesh, &hi).unwrap().value
                - model.evaluate(&mesh, &lo).unwrap().value)
                / (2.0 * h);
            let pred = eval.element_sensitivity[e];
            assert!(
                (fd - pred).abs() <= 1e-3 * pred.abs(),
                "element {e}: fd {fd} vs self-adjoint {pred}"
            );
        }
    }
}
