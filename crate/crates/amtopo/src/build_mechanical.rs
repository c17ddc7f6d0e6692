//! Layer-by-layer mechanical model of the build process.
//!
//! Deposited material shrinks as it cools; the inherent-strain method
//! applies that contraction strain to each newly added slab and solves a
//! small-strain elasticity problem on the region built so far, clamped at
//! the base plate. The increments sum to the final distortion, and a P-norm
//! of each increment forms a constraint that steers the optimizer away from
//! warp-prone layouts.

use crate::error::{Error, Result};
use crate::fem::{self, DofMap, ElasticRef};
use crate::mesh::{LayerPartition, Mesh};
use rayon::prelude::*;

/// Inherent-strain and P-norm parameters.
#[derive(Debug, Clone)]
pub struct InherentStrainParams {
    /// Contraction strain applied to each added slab (Voigt: x, y, shear).
    pub strain: [f64; 3],
    /// P-norm exponent of the per-step distortion measure.
    pub pnorm: f64,
}

impl Default for InherentStrainParams {
    fn default() -> Self {
        InherentStrainParams {
            strain: [-0.0025, -0.0025, 0.0],
            pnorm: 5.0,
        }
    }
}

/// Displacement magnitudes below this value carry no usable direction and
/// are flattened in the adjoint load.
const U_FLOOR: f64 = 1e-12;

/// Polarization tensor of plane elasticity in Voigt form (engineering
/// shear): contract strains against it to get the energy-like density that
/// drives material insertion/removal decisions for displacement-based
/// functionals.
///
/// `A = pref (c_d δ⊗δ + 5E (δδ + δδ))` with
/// `pref = 3(1-ν)/(2(1+ν)(7-5ν))` and `c_d = -(1-14ν+15ν²)E/(1-2ν)²`.
pub fn polarization_matrix(young: f64, poisson: f64) -> Result<[[f64; 3]; 3]> {
    if !(0.0..0.5).contains(&poisson) {
        return Err(Error::invalid(
            "poisson",
            format!("polarization tensor requires 0 <= nu < 0.5, got {poisson}"),
        ));
    }
    if young <= 0.0 {
        return Err(Error::invalid(
            "young",
            format!("Young's modulus must be positive, got {young}"),
        ));
    }
    let pref = 3.0 * (1.0 - poisson) / (2.0 * (1.0 + poisson) * (7.0 - 5.0 * poisson));
    let cd = -(1.0 - 14.0 * poisson + 15.0 * poisson * poisson) * young
        / ((1.0 - 2.0 * poisson) * (1.0 - 2.0 * poisson));
    let e10 = 10.0 * young;
    Ok([
        [pref * (cd + e10), pref * cd, 0.0],
        [pref * cd, pref * (cd + e10), 0.0],
        [0.0, 0.0, pref * 0.5 * e10],
    ])
}

/// P-norm of the displacement magnitude over the listed elements:
/// `(∫ |u|^b)^(1/b)` by Gauss quadrature.
pub fn displacement_pnorm(mesh: &Mesh, elements: &[usize], u: &[f64], b: f64) -> f64 {
    let eref = ElasticRef::new(mesh.dx, mesh.dy, 1.0, 0.0);
    let mut integral = 0.0;
    for &e in elements {
        let ue = fem::gather8(u, &mesh.element_nodes(e));
        for gp in &eref.quad.gauss {
            let mut ux = 0.0;
            let mut uy = 0.0;
            for a in 0..4 {
                ux += gp.n[a] * ue[2 * a];
                uy += gp.n[a] * ue[2 * a + 1];
            }
            integral += gp.wdet * (ux * ux + uy * uy).sqrt().powf(b);
        }
    }
    integral.powf(1.0 / b)
}

struct StepData {
    active: Vec<usize>,
    map: DofMap,
    base_nodes: Vec<usize>,
}

struct StepResult {
    value: f64,
    /// Per active element contribution to `dG_u/d(stiff_scale_e)`.
    sensitivity: Vec<(usize, f64)>,
    /// Per active element polarization-contracted derivative density.
    derivative: Vec<(usize, f64)>,
    /// Full-length nodal displacement increment of this step.
    displacement: Vec<f64>,
    /// Centroid stress increment per active element.
    stress: Vec<(usize, [f64; 3])>,
}

/// Everything one distortion evaluation produces.
pub struct MechanicalEvaluation {
    /// Constraint value: sum of per-step P-norms.
    pub value: f64,
    /// Per-step P-norm terms (sum equals `value`).
    pub step_values: Vec<f64>,
    /// Accumulated distortion: sum of all increments (2 dofs per node).
    pub displacement: Vec<f64>,
    /// Accumulated centroid stress per element (Voigt).
    pub stress: Vec<[f64; 3]>,
    /// `dG_u/d(stiff_scale_e)` per element: the exact discrete derivative,
    /// suitable for finite-difference verification.
    pub element_sensitivity: Vec<f64>,
    /// Polarization-tensor derivative density per element (per unit area):
    /// `ε(u_j):A:ε(ũ_j) - ε_inh:A:ε(ũ_j)`, accumulated over steps.
    pub element_derivative: Vec<f64>,
}

/// Mechanical build model bound to one mesh and layer partition.
pub struct MechanicalBuildModel {
    pub params: InherentStrainParams,
    partition: LayerPartition,
    eref: ElasticRef,
    amat: [[f64; 3]; 3],
    f_inh: [f64; 8],
    steps: Vec<StepData>,
}

impl MechanicalBuildModel {
    pub fn new(
        mesh: &Mesh,
        partition: LayerPartition,
        young: f64,
        poisson: f64,
        params: InherentStrainParams,
    ) -> Result<MechanicalBuildModel> {
        if params.pnorm < 2.0 {
            return Err(Error::invalid(
                "pnorm",
                format!("P-norm exponent must be >= 2, got {}", params.pnorm),
            ));
        }
        let amat = polarization_matrix(young, poisson)?;
        let eref = ElasticRef::new(mesh.dx, mesh.dy, young, poisson);
        let f_inh = eref.initial_strain_load(params.strain);
        let base = mesh.side_nodes(partition.base);
        let steps = (1..=partition.count)
            .map(|j| {
                let active = partition.active_elements(j);
                let map = fem::active_dof_map(mesh, &active);
                let base_nodes = base.iter().copied().filter(|&n| map.contains(n)).collect();
                StepData {
                    active,
                    map,
                    base_nodes,
                }
            })
            .collect();
        Ok(MechanicalBuildModel {
            params,
            partition,
            eref,
            amat,
            f_inh,
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
        stiff_scale: &[f64],
        with_adjoint: bool,
    ) -> Result<StepResult> {
        let data = &self.steps[step - 1];
        let b = self.params.pnorm;
        let mut sys =
            fem::assemble_elasticity(mesh, &self.eref, &data.active, &data.map, |e| stiff_scale[e]);

        let added = self.partition.added_elements(step);
        for &e in added {
            let s = stiff_scale[e];
            let nodes = mesh.element_nodes(e);
            for (a, &n) in nodes.iter().enumerate() {
                let i = data.map.index_of(n);
                sys.add_rhs(2 * i, s * self.f_inh[2 * a]);
                sys.add_rhs(2 * i + 1, s * self.f_inh[2 * a + 1]);
            }
        }
        fem::clamp_nodes(&mut sys, &data.map, &data.base_nodes);
        let factored = sys.factor()?;
        let u = factored.solve_base()?;

        let gather = |field: &[f64], nodes: &[usize; 4]| {
            let mut out = [0.0; 8];
            for (a, &n) in nodes.iter().enumerate() {
                let i = data.map.index_of(n);
                out[2 * a] = field[2 * i];
                out[2 * a + 1] = field[2 * i + 1];
            }
            out
        };

        // P-norm of |u| over the active region.
        let mut integral = 0.0;
        for &e in &data.active {
            let ue = gather(&u, &mesh.element_nodes(e));
            for gp in &self.eref.quad.gauss {
                let mut ux = 0.0;
                let mut uy = 0.0;
                for a in 0..4 {
                    ux += gp.n[a] * ue[2 * a];
                    uy += gp.n[a] * ue[2 * a + 1];
                }
                integral += gp.wdet * (ux * ux + uy * uy).sqrt().powf(b);
            }
        }
        let value = integral.powf(1.0 / b);

        // Stress increment at centroids: scaled elastic stress minus the
        // inherent-strain preload on the slab added this step.
        let mut stress = Vec::with_capacity(data.active.len());
        let added_set: std::collections::HashSet<usize> = added.iter().copied().collect();
        for &e in &data.active {
            let ue = gather(&u, &mesh.element_nodes(e));
            let mut eps = [0.0; 3];
            for r in 0..3 {
                for p in 0..8 {
                    eps[r] += self.eref.b_center[r][p] * ue[p];
                }
            }
            if added_set.contains(&e) {
                for (r, s) in eps.iter_mut().zip(self.params.strain) {
                    *r -= s;
                }
            }
            let mut sig = [0.0; 3];
            for r in 0..3 {
                for t in 0..3 {
                    sig[r] += stiff_scale[e] * self.eref.c[r][t] * eps[t];
                }
            }
            stress.push((e, sig));
        }

        let mut sensitivity = Vec::new();
        let mut derivative = Vec::new();
        if with_adjoint && value > 1e-14 {
            // Adjoint load: the exact gradient of the P-norm with respect to
            // nodal displacements, negated. Direction opposes u pointwise.
            let coeff = value.powf(1.0 - b);
            let mut rhs = vec![0.0; 2 * data.map.len()];
            for &e in &data.active {
                let nodes = mesh.element_nodes(e);
                let ue = gather(&u, &nodes);
                for gp in &self.eref.quad.gauss {
                    let mut ux = 0.0;
                    let mut uy = 0.0;
                    for a in 0..4 {
                        ux += gp.n[a] * ue[2 * a];
                        uy += gp.n[a] * ue[2 * a + 1];
                    }
                    let mag = (ux * ux + uy * uy).sqrt().max(U_FLOOR);
                    let g = coeff * mag.powf(b - 2.0);
                    let (gx, gy) = (g * ux, g * uy);
                    for (a, &n) in nodes.iter().enumerate() {
                        let i = data.map.index_of(n);
                        rhs[2 * i] -= gp.wdet * gx * gp.n[a];
                        rhs[2 * i + 1] -= gp.wdet * gy * gp.n[a];
                    }
                }
            }
            let adj = factored.solve(rhs)?;

            let area = mesh.element_area();
            sensitivity.reserve(data.active.len());
            derivative.reserve(data.active.len());
            for &e in &data.active {
                let nodes = mesh.element_nodes(e);
                let ue = gather(&u, &nodes);
                let ae = gather(&adj, &nodes);
                // Exact discrete chain: stiffness term plus, on the added
                // slab, the load's own scale dependence.
                let mut s = 0.0;
                for p in 0..8 {
                    let mut kv = 0.0;
                    for q in 0..8 {
                        kv += self.eref.ke[p][q] * ue[q];
                    }
                    s += ae[p] * kv;
                }
                if added_set.contains(&e) {
                    for p in 0..8 {
                        s -= ae[p] * self.f_inh[p];
                    }
                }
                sensitivity.push((e, s));

                let mut d = self.eref.strain_product(&self.amat, &ue, &ae);
                if added_set.contains(&e) {
                    d -= self
                        .eref
                        .uniform_strain_product(&self.amat, self.params.strain, &ae);
                }
                derivative.push((e, d / area));
            }
        }

        Ok(StepResult {
            value,
            sensitivity,
            derivative,
            displacement: scatter_vector(&data.map, &u, mesh.num_nodes()),
            stress,
        })
    }

    /// Displacement increment of one build step (zero on inactive nodes).
    pub fn layer_increment(&self, mesh: &Mesh, step: usize, stiff_scale: &[f64]) -> Result<Vec<f64>> {
        assert!(step >= 1 && step <= self.partition.count, "step out of range");
        Ok(self
            .solve_step(mesh, step, stiff_scale, false)?
            .displacement)
    }

    /// Constraint value only (state solves, no adjoints).
    pub fn value(&self, mesh: &Mesh, stiff_scale: &[f64]) -> Result<f64> {
        let vals: Vec<f64> = (1..=self.partition.count)
            .into_par_iter()
            .map(|j| Ok(self.solve_step(mesh, j, stiff_scale, false)?.value))
            .collect::<Result<_>>()?;
        Ok(vals.iter().sum())
    }

    /// Full evaluation: value, accumulated fields, adjoints, sensitivities.
    pub fn evaluate(&self, mesh: &Mesh, stiff_scale: &[f64]) -> Result<MechanicalEvaluation> {
        assert_eq!(stiff_scale.len(), mesh.num_elements());
        let results: Vec<StepResult> = (1..=self.partition.count)
            .into_par_iter()
            .map(|j| self.solve_step(mesh, j, stiff_scale, true))
            .collect::<Result<_>>()?;

        let mut value = 0.0;
        let mut step_values = Vec::with_capacity(results.len());
        let mut displacement = vec![0.0; 2 * mesh.num_nodes()];
        let mut stress = vec![[0.0; 3]; mesh.num_elements()];
        let mut element_sensitivity = vec![0.0; mesh.num_elements()];
        let mut element_derivative = vec![0.0; mesh.num_elements()];
        for r in &results {
            value += r.value;
            step_values.push(r.value);
            for (acc, &inc) in displacement.iter_mut().zip(&r.displacement) {
                *acc += inc;
            }
            for &(e, sig) in &r.stress {
                for c in 0..3 {
                    stress[e][c] += sig[c];
                }
            }
            for &(e, s) in &r.sensitivity {
                element_sensitivity[e] += s;
            }
            for &(e, d) in &r.derivative {
                element_derivative[e] += d;
            }
        }
        Ok(MechanicalEvaluation {
            value,
            step_values,
            displacement,
            stress,
            element_sensitivity,
            element_derivative,
        })
    }
}

fn scatter_vector(map: &DofMap, compact: &[f64], num_nodes: usize) -> Vec<f64> {
    let mut out = vec![0.0; 2 * num_nodes];
    for (ci, &n) in map.active_nodes.iter().enumerate() {
        out[2 * n] = compact[2 * ci];
        out[2 * n + 1] = compact[2 * ci + 1];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::element_ersatz;
    use crate::mesh::Side;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn polarization_matches_reference_coefficients() {
        let m = polarization_matrix(1.0, 0.3).unwrap();
        let pref = 2.1 / 14.3;
        let cd = 1.85 / 0.16; // -(1 - 14*0.3 + 15*0.09)/(0.4)^2, positive here
        assert!((m[0][1] - pref * cd).abs() < 1e-12, "dyadic part {}", m[0][1]);
        assert!((m[0][0] - pref * (cd + 10.0)).abs() < 1e-12);
        assert!((m[2][2] - pref * 5.0).abs() < 1e-12, "shear part {}", m[2][2]);
        assert_eq!(m[0][1], m[1][0], "major symmetry");
        assert_eq!(m[0][0], m[1][1]);
        // Linear in the modulus.
        let m2 = polarization_matrix(2.0, 0.3).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert!((m2[r][c] - 2.0 * m[r][c]).abs() < 1e-12);
            }
        }
        assert!(polarization_matrix(1.0, 0.5).is_err(), "incompressible limit");
        assert!(polarization_matrix(1.0, -0.1).is_err());
        assert!(polarization_matrix(0.0, 0.3).is_err());
    }

    #[test]
    fn polarization_energy_is_positive() {
        // The contraction must act like an energy density on symmetric
        // strains for the moduli range used here.
        for &nu in &[0.0, 0.2, 0.34, 0.45] {
            let m = polarization_matrix(1.0, nu).unwrap();
            let mut state = 0x2545f4914f6cdd1d_u64;
            for _ in 0..100 {
                let mut eps = [0.0; 3];
                for v in eps.iter_mut() {
                    state ^= state << 13;
                    state ^= state >> 7;
                    state ^= state << 17;
                    *v = (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
                }
                if eps.iter().all(|&v| v.abs() < 1e-3) {
                    continue;
                }
                let mut q = 0.0;
                for r in 0..3 {
                    for c in 0..3 {
                        q += eps[r] * m[r][c] * eps[c];
                    }
                }
                assert!(q > 0.0, "nu {nu}: quadratic form {q} on {eps:?}");
            }
        }
    }

    #[test]
    fn pnorm_closed_form_and_bound() {
        let mesh = Mesh::grid(2.0, 1.0, 8, 4).unwrap();
        let elements: Vec<usize> = (0..mesh.num_elements()).collect();
        // Constant magnitude u0: P-norm = u0 * A^(1/b).
        let u0 = 0.37;
        let mut u = vec![0.0; 2 * mesh.num_nodes()];
        for n in 0..mesh.num_nodes() {
            u[2 * n] = u0 * 0.6;
            u[2 * n + 1] = u0 * 0.8;
        }
        let b = 5.0;
        let t = displacement_pnorm(&mesh, &elements, &u, b);
        let exact = u0 * mesh.domain_area().powf(1.0 / b);
        assert!((t - exact).abs() < 1e-12, "{t} vs {exact}");
        // Any field is bounded by its max magnitude times A^(1/b).
        for (n, v) in u.iter_mut().enumerate() {
            *v *= ((n % 7) as f64) / 7.0;
        }
        let t = displacement_pnorm(&mesh, &elements, &u, b);
        assert!(t <= u0 * mesh.domain_area().powf(1.0 / b) + 1e-12);
    }

    fn dense_oracle(
        mesh: &Mesh,
        eref: &ElasticRef,
        active: &[usize],
        added: &[usize],
        scale: &[f64],
        strain: [f64; 3],
        clamped: &[usize],
    ) -> Vec<f64> {
        let n = 2 * mesh.num_nodes();
        let mut k = DMatrix::<f64>::zeros(n, n);
        let mut f = DVector::<f64>::zeros(n);
        for &e in active {
            let nodes = mesh.element_nodes(e);
            for a in 0..4 {
                for bb in 0..4 {
                    for ca in 0..2 {
                        for cb in 0..2 {
                            k[(2 * nodes[a] + ca, 2 * nodes[bb] + cb)] +=
                                scale[e] * eref.ke[2 * a + ca][2 * bb + cb];
                        }
                    }
                }
            }
        }
        let load = eref.initial_strain_load(strain);
        for &e in added {
            let nodes = mesh.element_nodes(e);
            for a in 0..4 {
                f[2 * nodes[a]] += scale[e] * load[2 * a];
                f[2 * nodes[a] + 1] += scale[e] * load[2 * a + 1];
            }
        }
        // Inactive dofs get a unit diagonal; clamped dofs are pinned to zero.
        let active_nodes = mesh.nodes_of_elements(active);
        let mut is_active = vec![false; mesh.num_nodes()];
        for &a in &active_nodes {
            is_active[a] = true;
        }
        for node in 0..mesh.num_nodes() {
            let pin = !is_active[node] || clamped.contains(&node);
            if pin {
                for c in 0..2 {
                    let d = 2 * node + c;
                    for j in 0..n {
                        k[(d, j)] = 0.0;
                        k[(j, d)] = 0.0;
                    }
                    k[(d, d)] = 1.0;
                    f[d] = 0.0;
                }
            }
        }
        k.lu().solve(&f).expect("oracle solve").iter().copied().collect()
    }

    #[test]
    fn single_element_matches_dense_oracle() {
        let mesh = Mesh::grid(1.0, 1.0, 1, 1).unwrap();
        let partition = LayerPartition::new(&mesh, 1, Side::D).unwrap();
        let model =
            MechanicalBuildModel::new(&mesh, partition, 75.0, 0.34, InherentStrainParams::default())
                .unwrap();
        let scale = vec![1.0; 1];
        let u = model.layer_increment(&mesh, 1, &scale).unwrap();
        let eref = ElasticRef::new(1.0, 1.0, 75.0, 0.34);
        let oracle = dense_oracle(
            &mesh,
            &eref,
            &[0],
            &[0],
            &scale,
            [-0.0025, -0.0025, 0.0],
            &mesh.side_nodes(Side::D),
        );
        for (i, (&a, &b)) in u.iter().zip(oracle.iter()).enumerate() {
            assert!((a - b).abs() < 1e-12, "dof {i}: {a} vs {b}");
        }
        // The slab contracts: the free top edge moves down and inward.
        let top_left_y = u[2 * mesh.node_at(0, 1) + 1];
        assert!(top_left_y < 0.0, "contraction must pull the top down");
    }

    #[test]
    fn zero_strain_means_zero_distortion() {
        let mesh = Mesh::grid(1.0, 1.0, 4, 4).unwrap();
        let partition = LayerPartition::new(&mesh, 2, Side::D).unwrap();
        let params = InherentStrainParams {
            strain: [0.0; 3],
            pnorm: 5.0,
        };
        let model = MechanicalBuildModel::new(&mesh, partition, 10.0, 0.3, params).unwrap();
        let scale = vec![1.0; mesh.num_elements()];
        let eval = model.evaluate(&mesh, &scale).unwrap();
        assert_eq!(eval.value, 0.0, "no strain, no distortion");
        assert!(eval.displacement.iter().all(|&v| v == 0.0));
        assert!(eval.element_sensitivity.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn distortion_is_homogeneous_in_the_strain() {
        let mesh = Mesh::grid(1.0, 1.0, 6, 6).unwrap();
        let scale = vec![1.0; mesh.num_elements()];
        let base = InherentStrainParams::default();
        let build = |strain: [f64; 3]| {
            let partition = LayerPartition::new(&mesh, 3, Side::D).unwrap();
            let params = InherentStrainParams { strain, ..base.clone() };
            MechanicalBuildModel::new(&mesh, partition, 75.0, 0.34, params).unwrap()
        };
        let g1 = build(base.strain).value(&mesh, &scale).unwrap();
        let g2 = build([-0.005, -0.005, 0.0]).value(&mesh, &scale).unwrap();
        let gneg = build([0.0025, 0.0025, 0.0]).value(&mesh, &scale).unwrap();
        assert!(g1 > 0.0);
        assert!((g2 - 2.0 * g1).abs() < 1e-9 * g1, "doubling: {g2} vs {}", 2.0 * g1);
        assert!((gneg - g1).abs() < 1e-9 * g1, "sign flip: {gneg} vs {g1}");
    }

    #[test]
    fn increments_vanish_above_their_layer() {
        let mesh = Mesh::grid(1.0, 1.0, 6, 6).unwrap();
        let partition = LayerPartition::new(&mesh, 3, Side::D).unwrap();
        let model =
            MechanicalBuildModel::new(&mesh, partition, 75.0, 0.34, InherentStrainParams::default())
                .unwrap();
        let scale = vec![1.0; mesh.num_elements()];
        for step in 1..=3 {
            let u = model.layer_increment(&mesh, step, &scale).unwrap();
            let top = step as f64 / 3.0;
            for n in 0..mesh.num_nodes() {
                let [_, y] = mesh.node_coords(n);
                if y > top + 1e-12 {
                    assert_eq!(u[2 * n], 0.0, "step {step}: node above the build front");
                    assert_eq!(u[2 * n + 1], 0.0);
                }
            }
            // The built part does deform.
            assert!(u.iter().any(|&v| v.abs() > 1e-9), "step {step} inert");
        }
    }

    #[test]
    fn full_chain_matches_dense_reproduction() {
        // Reproduce value, adjoint, and sensitivities densely on a small
        // two-step build and compare everything.
        let mesh = Mesh::grid(1.0, 1.0, 2, 2).unwrap();
        let partition = LayerPartition::new(&mesh, 2, Side::D).unwrap();
        let (young, poisson) = (10.0, 0.25);
        let params = InherentStrainParams::default();
        let b = params.pnorm;
        let model =
            MechanicalBuildModel::new(&mesh, partition, young, poisson, params.clone()).unwrap();
        let scale = vec![1.0, 0.7, 0.9, 1.0];
        let eval = model.evaluate(&mesh, &scale).unwrap();

        let eref = ElasticRef::new(mesh.dx, mesh.dy, young, poisson);
        let clamped = mesh.side_nodes(Side::D);
        let p2 = LayerPartition::new(&mesh, 2, Side::D).unwrap();
        let mut value = 0.0;
        for step in 1..=2 {
            let active = p2.active_elements(step);
            let added: Vec<usize> = p2.added_elements(step).to_vec();
            let u = dense_oracle(&mesh, &eref, &active, &added, &scale, params.strain, &clamped);
            let t = displacement_pnorm(&mesh, &active, &u, b);
            value += t;
            // Adjoint load in the K-inner product opposes the state.
            let coeff = t.powf(1.0 - b);
            let mut dot = 0.0;
            for &e in &active {
                let ue = fem::gather8(&u, &mesh.element_nodes(e));
                for gp in &eref.quad.gauss {
                    let mut ux = 0.0;
                    let mut uy = 0.0;
                    for a in 0..4 {
                        ux += gp.n[a] * ue[2 * a];
                        uy += gp.n[a] * ue[2 * a + 1];
                    }
                    let mag = (ux * ux + uy * uy).sqrt().max(U_FLOOR);
                    dot += gp.wdet * coeff * mag.powf(b - 2.0) * (ux * ux + uy * uy);
                }
            }
            assert!(dot > 0.0, "P-norm gradient aligns with u, so its negation opposes it");
        }
        assert!(
            (eval.value - value).abs() < 1e-12 * value,
            "value: {} vs dense {}",
            eval.value,
            value
        );

        // Finite differences over every element against the reported
        // sensitivities (exact discrete chain, so the match is tight).
        for e in 0..mesh.num_elements() {
            let h = 1e-6;
            let mut hi = scale.clone();
            hi[e] += h;
            let mut lo = scale.clone();
            lo[e] -= h;
            let fd =
                (model.value(&mesh, &hi).unwrap() - model.value(&mesh, &lo).unwrap()) / (2.0 * h);
            let pred = eval.element_sensitivity[e];
            assert!(
                (fd - pred).abs() <= 1e-6 * pred.abs().max(1e-9),
                "element {e}: fd {fd} vs adjoint {pred}"
            );
        }
    }

    #[test]
    fn adjoint_predicts_stiffness_perturbations() {
        // The 16x16, four-step configuration exercises partial activation,
        // ersatz voids, and multiple slabs at once.
        let mesh = Mesh::grid(1.0, 1.0, 16, 16).unwrap();
        let phi: Vec<f64> = (0..mesh.num_nodes())
            .map(|n| {
                let [x, y] = mesh.node_coords(n);
                if y < 0.4 || (x > 0.4 && y < 0.85) {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        let scale = element_ersatz(&mesh, &phi, 0.5, 1e-3);
        let partition = LayerPartition::new(&mesh, 4, Side::D).unwrap();
        let model =
            MechanicalBuildModel::new(&mesh, partition, 75.0, 0.34, InherentStrainParams::default())
                .unwrap();
        let eval = model.evaluate(&mesh, &scale).unwrap();
        assert!(eval.value > 0.0);
        let max_sens = eval
            .element_sensitivity
            .iter()
            .fold(0.0_f64, |m, &s| m.max(s.abs()));
        let candidates: Vec<usize> = (0..mesh.num_elements())
            .filter(|&e| eval.element_sensitivity[e].abs() >= 1e-3 * max_sens)
            .collect();
        assert!(candidates.len() >= 10);
        let stride = candidates.len() / 10;
        for i in 0..10 {
            let e = candidates[i * stride];
            let h = 1e-5_f64.max(1e-4 * scale[e]);
            let mut hi = scale.clone();
            hi[e] += h;
            let mut lo = scale.clone();
            lo[e] -= h;
            let fd =
                (model.value(&mesh, &hi).unwrap() - model.value(&mesh, &lo).unwrap()) / (2.0 * h);
            let pred = eval.element_sensitivity[e];
            assert!(
                (fd - pred).abs() <= 1e-3 * pred.abs(),
                "element {e}: fd {fd} vs adjoint {pred}"
            );
        }
    }
}
