//! Layer-by-layer thermal model of the build process.
//!
//! The domain is built bottom-up in slabs. At each step the slab added last
//! is flash-heated along its downward-facing boundary (where deposited
//! material sits over void and heat cannot sink), the already-built region
//! conducts, and the base plate acts as a heat sink. The constraint sums the
//! squared excess temperature over every added slab, so geometries whose
//! overhanging regions lack a conduction path to the base are penalized.
//!
//! All temperatures here are excess over the base-plate temperature; the
//! base plate is held at zero.

use crate::error::Result;
use crate::fem::{self, DofMap, QuadRef};
use crate::field::smoothed_heaviside_deriv;
use crate::mesh::{LayerPartition, Mesh};
use rayon::prelude::*;

/// The flux boundary is selected by the sign of `∇ψ·d`; discrete gradients
/// on exactly vertical walls fluctuate at rounding level around zero, so the
/// gate opens only above this tolerance on the unit normal projection.
const DIRECTION_GATE_TOL: f64 = 1e-6;

/// Gradient-norm floor below which no interface direction is defined.
const GRAD_NORM_FLOOR: f64 = 1e-12;

/// Parameters of the thermal build model.
#[derive(Debug, Clone)]
pub struct ThermalBuildParams {
    /// Thermal conductivity of the bulk material.
    pub conductivity: f64,
    /// Heat flux per unit length of overhang boundary.
    pub flux: f64,
    /// Half-width of the smoothed Heaviside converting the boundary flux into
    /// a volumetric load around the `ψ = 0.5` level set.
    pub interface_width: f64,
}

impl Default for ThermalBuildParams {
    fn default() -> Self {
        ThermalBuildParams {
            conductivity: 1.0,
            flux: 1.0,
            interface_width: 0.5,
        }
    }
}

/// Pointwise flux weight: a smeared boundary delta (`dH/dψ · |∇ψ|`) gated to
/// downward-facing interfaces (`∇ψ·d > 0`: material above, void below).
///
/// Integrated across a resolved downward-facing interface the weight yields
/// 1 per unit interface length; upward faces and vertical walls contribute
/// nothing.
pub fn flux_weight_at(grad: [f64; 2], psi: f64, width: f64, build_dir: [f64; 2]) -> f64 {
    let norm = (grad[0] * grad[0] + grad[1] * grad[1]).sqrt();
    if norm < GRAD_NORM_FLOOR {
        return 0.0;
    }
    let cos = (grad[0] * build_dir[0] + grad[1] * build_dir[1]) / norm;
    if cos <= DIRECTION_GATE_TOL {
        return 0.0;
    }
    smoothed_heaviside_deriv(psi - 0.5, width) * norm
}

/// Element-mean flux weight field for a filtered density `psi` (nodal).
pub fn overhang_flux_weight(
    mesh: &Mesh,
    psi: &[f64],
    width: f64,
    build_dir: [f64; 2],
) -> Vec<f64> {
    let quad = QuadRef::new(mesh.dx, mesh.dy);
    let mut out = vec![0.0; mesh.num_elements()];
    for (e, w) in out.iter_mut().enumerate() {
        let p = fem::gather4(psi, &mesh.element_nodes(e));
        let mut mean = 0.0;
        for gp in &quad.gauss {
            let mut g = [0.0; 2];
            let mut v = 0.0;
            for a in 0..4 {
                g[0] += gp.dndx[a] * p[a];
                g[1] += gp.dndy[a] * p[a];
                v += gp.n[a] * p[a];
            }
            mean += 0.25 * flux_weight_at(g, v, width, build_dir);
        }
        *w = mean;
    }
    out
}

/// Exact integral of `t²` over the listed elements (consistent mass).
pub fn squared_excess_integral(mesh: &Mesh, elements: &[usize], t: &[f64]) -> f64 {
    let quad = QuadRef::new(mesh.dx, mesh.dy);
    elements
        .iter()
        .map(|&e| {
            let te = fem::gather4(t, &mesh.element_nodes(e));
            quad.mass_product(&te, &te)
        })
        .sum()
}

struct StepData {
    active: Vec<usize>,
    map: DofMap,
    base_compact: Vec<usize>,
}

struct StepResult {
    value: f64,
    /// Per active element: contribution to `dG_t/d(conduct_scale_e)`.
    sensitivity: Vec<(usize, f64)>,
    /// Full-length nodal excess temperature of this step.
    temperature: Vec<f64>,
    /// Element flux weights on the added slab (one entry per added element).
    weight: Vec<(usize, f64)>,
}

/// Everything one thermal evaluation produces.
pub struct ThermalEvaluation {
    /// Constraint value: sum of squared excess temperatures over added slabs.
    pub value: f64,
    /// Per-step contributions (sum equals `value`).
    pub step_values: Vec<f64>,
    /// `dG_t/d(conduct_scale_e)` per element, accumulated over steps.
    pub element_sensitivity: Vec<f64>,
    /// Sensitivity density (per unit area): the topological-derivative field
    /// `-k ∇T·∇T̃` element-averaged and summed over steps.
    pub element_derivative: Vec<f64>,
    /// Nodal maximum excess temperature over all steps (diagnostics).
    pub peak_excess: Vec<f64>,
    /// Element flux-weight field (each element sampled at the step that
    /// added it).
    pub flux_weight: Vec<f64>,
}

/// Thermal build model bound to one mesh and layer partition.
pub struct ThermalBuildModel {
    pub params: ThermalBuildParams,
    partition: LayerPartition,
    quad: QuadRef,
    steps: Vec<StepData>,
    build_dir: [f64; 2],
}

impl ThermalBuildModel {
    pub fn new(
        mesh: &Mesh,
        partition: LayerPartition,
        params: ThermalBuildParams,
    ) -> Result<ThermalBuildModel> {
        let base_nodes = mesh.side_nodes(partition.base);
        let steps = (1..=partition.count)
            .map(|i| {
                let active = partition.active_elements(i);
                let map = fem::active_dof_map(mesh, &active);
                let base_compact = base_nodes
                    .iter()
                    .filter(|&&n| map.contains(n))
                    .map(|&n| map.index_of(n))
                    .collect();
                StepData {
                    active,
                    map,
                    base_compact,
                }
            })
            .collect();
        Ok(ThermalBuildModel {
            params,
            build_dir: partition.build_direction(),
            partition,
            quad: QuadRef::new(mesh.dx, mesh.dy),
            steps,
        })
    }

    pub fn step_count(&self) -> usize {
        self.partition.count
    }

    fn solve_step(
        &self,
        mesh: &Mesh,
        step: usize,
        conduct_scale: &[f64],
        psi: &[f64],
        with_adjoint: bool,
    ) -> Result<StepResult> {
        let data = &self.steps[step - 1];
        let k = self.params.conductivity;
        let mut sys = fem::assemble_scalar(
            mesh,
            &self.quad,
            &data.active,
            &data.map,
            |e| k * conduct_scale[e],
            |_| 0.0,
        );

        // Volumetric flux load on the slab added this step.
        let added = self.partition.added_elements(step);
        let mut weight = Vec::with_capacity(added.len());
        for &e in added {
            let nodes = mesh.element_nodes(e);
            let p = fem::gather4(psi, &nodes);
            let mut mean = 0.0;
            for gp in &self.quad.gauss {
                let mut g = [0.0; 2];
                let mut v = 0.0;
                for a in 0..4 {
                    g[0] += gp.dndx[a] * p[a];
                    g[1] += gp.dndy[a] * p[a];
                    v += gp.n[a] * p[a];
                }
                let w = flux_weight_at(g, v, self.params.interface_width, self.build_dir);
                mean += 0.25 * w;
                if w > 0.0 {
                    let load = gp.wdet * self.params.flux * w;
                    for a in 0..4 {
                        sys.add_rhs(data.map.index_of(nodes[a]), load * gp.n[a]);
                    }
                }
            }
            weight.push((e, mean));
        }

        for &i in &data.base_compact {
            sys.set_dirichlet(i, 0.0);
        }
        let factored = sys.factor()?;
        let t = factored.solve_base()?;

        // Constraint contribution: squared excess over the added slab.
        let mut value = 0.0;
        for &e in added {
            let idx = mesh.element_nodes(e).map(|n| data.map.index_of(n));
            let te = idx.map(|i| t[i]);
            value += self.quad.mass_product(&te, &te);
        }

        let mut sensitivity = Vec::new();
        if with_adjoint {
            // Adjoint of the same operator, loaded by 2 M T on the added slab.
            let mut rhs = vec![0.0; data.map.len()];
            for &e in added {
                let idx = mesh.element_nodes(e).map(|n| data.map.index_of(n));
                let te = idx.map(|i| t[i]);
                for a in 0..4 {
                    let mut v = 0.0;
                    for b in 0..4 {
                        v += self.quad.m_scalar[a][b] * te[b];
                    }
                    rhs[idx[a]] += 2.0 * v;
                }
            }
            let adj = factored.solve(rhs)?;
            sensitivity.reserve(data.active.len());
            for &e in &data.active {
                let idx = mesh.element_nodes(e).map(|n| data.map.index_of(n));
                let te = idx.map(|i| t[i]);
                let ae = idx.map(|i| adj[i]);
                sensitivity.push((e, -k * self.quad.grad_product(&te, &ae)));
            }
        }

        Ok(StepResult {
            value,
            sensitivity,
            temperature: data.map.scatter(&t, mesh.num_nodes(), 0.0),
            weight,
        })
    }

    /// Nodal excess temperature of one build step (zero on inactive nodes).
    pub fn layer_temperature(
        &self,
        mesh: &Mesh,
        step: usize,
        conduct_scale: &[f64],
        psi: &[f64],
    ) -> Result<Vec<f64>> {
        assert!(step >= 1 && step <= self.partition.count, "step out of range");
        Ok(self
            .solve_step(mesh, step, conduct_scale, psi, false)?
            .temperature)
    }

    /// Constraint value only (state solves, no adjoints).
    pub fn value(&self, mesh: &Mesh, conduct_scale: &[f64], psi: &[f64]) -> Result<f64> {
        let vals: Vec<f64> = (1..=self.partition.count)
            .into_par_iter()
            .map(|i| Ok(self.solve_step(mesh, i, conduct_scale, psi, false)?.value))
            .collect::<Result<_>>()?;
        Ok(vals.iter().sum())
    }

    /// Full evaluation: value, adjoints, and sensitivity fields.
    ///
    /// The flux weight and the slab membership are treated as fixed data of
    /// the current design; the sensitivities differentiate the conduction
    /// path only, so they answer "how does the constraint change if this
    /// element conducts better".
    pub fn evaluate(
        &self,
        mesh: &Mesh,
        conduct_scale: &[f64],
        psi: &[f64],
    ) -> Result<ThermalEvaluation> {
        assert_eq!(conduct_scale.len(), mesh.num_elements());
        assert_eq!(psi.len(), mesh.num_nodes());
        let results: Vec<StepResult> = (1..=self.partition.count)
            .into_par_iter()
            .map(|i| self.solve_step(mesh, i, conduct_scale, psi, true))
            .collect::<Result<_>>()?;

        // Sequential fold in step order keeps results identical for any
        // thread count.
        let area = mesh.element_area();
        let mut value = 0.0;
        let mut step_values = Vec::with_capacity(results.len());
        let mut element_sensitivity = vec![0.0; mesh.num_elements()];
        let mut peak_excess = vec![0.0_f64; mesh.num_nodes()];
        let mut flux_weight = vec![0.0; mesh.num_elements()];
        for r in &results {
            value += r.value;
            step_values.push(r.value);
            for &(e, s) in &r.sensitivity {
                element_sensitivity[e] += s;
            }
            for (p, &t) in peak_excess.iter_mut().zip(&r.temperature) {
                *p = (*p).max(t);
            }
            for &(e, w) in &r.weight {
                flux_weight[e] = w;
            }
        }
        let element_derivative = element_sensitivity.iter().map(|&s| s / area).collect();
        Ok(ThermalEvaluation {
            value,
            step_values,
            element_sensitivity,
            element_derivative,
            peak_excess,
            flux_weight,
        })
    }
}
