//! Overhang-angle constraint.
//!
//! The design's characteristic function is smoothed by a Helmholtz filter so
//! its gradient carries boundary orientation over a controllable transition
//! width `sqrt(a) * L`. A downward-facing surface shallower than the
//! printable threshold angle makes the outward-oriented gradient fall inside
//! a cone around the negative build direction; two threshold vectors span
//! that cone and the constraint integrates the product of smoothed ramps of
//! both projections. Vertical walls and tops leave at least one projection
//! negative, so their contribution collapses to the smoothing floor.

use crate::error::Result;
use crate::fem::{self, DofMap, Factored, QuadRef};
use crate::mesh::Mesh;

/// Smoothed positive-part function `(s + sqrt(s^2 + eps)) / 2`.
///
/// Tends to `max(s, 0)` as `eps -> 0` while staying differentiable;
/// `smooth_ramp(0, eps) = sqrt(eps) / 2`.
pub fn smooth_ramp(s: f64, eps: f64) -> f64 {
    debug_assert!(eps > 0.0, "ramp smoothing must be positive");
    0.5 * (s + (s * s + eps).sqrt())
}

/// Derivative of [`smooth_ramp`] with respect to `s`: a smoothed unit step.
pub fn smooth_ramp_deriv(s: f64, eps: f64) -> f64 {
    debug_assert!(eps > 0.0, "ramp smoothing must be positive");
    0.5 * (1.0 + s / (s * s + eps).sqrt())
}

/// The pair of 2D threshold vectors for printable angle `theta0` (radians)
/// when building along `+y`: both point into the lower half-plane, spread
/// symmetrically about straight down. An outward surface direction lying
/// inside the cone they span (within `theta0` of straight down) marks an
/// unprintable overhang.
pub fn threshold_vectors(theta0: f64) -> [[f64; 2]; 2] {
    threshold_vectors_for(theta0, [0.0, 1.0])
}

/// Threshold vectors for an arbitrary unit build direction.
pub fn threshold_vectors_for(theta0: f64, build_dir: [f64; 2]) -> [[f64; 2]; 2] {
    let (sin, cos) = theta0.sin_cos();
    let b = build_dir;
    // In-plane direction perpendicular to the build axis.
    let t = [b[1], -b[0]];
    [
        [-cos * t[0] - sin * b[0], -cos * t[1] - sin * b[1]],
        [cos * t[0] - sin * b[0], cos * t[1] - sin * b[1]],
    ]
}

/// 3D threshold vectors for building along `+z`: the 2D pair replicated in
/// the x-z and y-z planes, with the build-axis component `-sin(theta0)` in
/// all four vectors.
pub fn threshold_vectors_3d(theta0: f64) -> [[f64; 3]; 4] {
    let (sin, cos) = theta0.sin_cos();
    [
        [-cos, 0.0, -sin],
        [cos, 0.0, -sin],
        [0.0, -cos, -sin],
        [0.0, cos, -sin],
    ]
}

/// Parameters of the overhang constraint.
#[derive(Debug, Clone)]
pub struct OverhangParams {
    /// Helmholtz diffusion coefficient `a`; the filter transition width is
    /// `sqrt(a) * length_scale`.
    pub diffusion: f64,
    /// Representative length `L` of the filter.
    pub length_scale: f64,
    /// Printable angle threshold, radians from the base plate.
    pub threshold_angle: f64,
    /// Ramp smoothing `eps`; the integrand floor is `eps / 4`.
    pub ramp_smoothing: f64,
    /// Unit build direction (from the base plate into the domain).
    pub build_dir: [f64; 2],
}

impl OverhangParams {
    fn scaled_vectors(&self) -> ([[f64; 2]; 2], f64) {
        (
            threshold_vectors_for(self.threshold_angle, self.build_dir),
            self.diffusion.sqrt() * self.length_scale,
        )
    }
}

/// Overhang integrand for one outward-oriented filtered-density gradient.
///
/// `outward_grad` must point from material into void (the negated gradient
/// of the filtered density); at a downward-facing horizontal surface it is
/// `(0, -|g|)` when building along `+y`.
pub fn overhang_integrand(outward_grad: [f64; 2], params: &OverhangParams) -> f64 {
    let (d, sal) = params.scaled_vectors();
    integrand_scaled(outward_grad, &d, sal, params.ramp_smoothing)
}

#[inline]
fn integrand_scaled(g: [f64; 2], d: &[[f64; 2]; 2], sal: f64, eps: f64) -> f64 {
    let s1 = sal * (g[0] * d[0][0] + g[1] * d[0][1]);
    let s2 = sal * (g[0] * d[1][0] + g[1] * d[1][1]);
    smooth_ramp(s1, eps) * smooth_ramp(s2, eps)
}

/// Helmholtz filter `-a L^2 lap(psi) + psi = chi` with natural (zero-flux)
/// boundaries, discretized on the design mesh. The operator is independent
/// of the design, so it is factored once and reused for filter and adjoint
/// solves.
pub struct HelmholtzFilter {
    factored: Factored,
    map: DofMap,
    quad: QuadRef,
}

impl HelmholtzFilter {
    pub fn new(mesh: &Mesh, diffusion: f64, length_scale: f64) -> Result<HelmholtzFilter> {
        let quad = QuadRef::new(mesh.dx, mesh.dy);
        let map = DofMap::full(mesh.num_nodes());
        let elements: Vec<usize> = (0..mesh.num_elements()).collect();
        let al2 = diffusion * length_scale * length_scale;
        let sys = fem::assemble_scalar(mesh, &quad, &elements, &map, |_| al2, |_| 1.0);
        Ok(HelmholtzFilter {
            factored: sys.factor()?,
            map,
            quad,
        })
    }

    /// Filters an element-constant density field to a nodal field.
    pub fn filter(&self, mesh: &Mesh, chi_elem: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(chi_elem.len(), mesh.num_elements());
        let mut rhs = vec![0.0; self.map.len()];
        let quarter = self.quad.area / 4.0;
        for (e, &chi) in chi_elem.iter().enumerate() {
            let s = chi * quarter;
            for n in mesh.element_nodes(e) {
                rhs[self.map.index_of(n)] += s;
            }
        }
        self.factored.solve(rhs)
    }

    /// Solves the (self-adjoint) filter operator for an arbitrary load.
    pub fn solve_adjoint(&self, rhs: Vec<f64>) -> Result<Vec<f64>> {
        self.factored.solve(rhs)
    }
}

/// Convenience wrapper: build the filter and run it once.
pub fn helmholtz_filter(
    mesh: &Mesh,
    chi_elem: &[f64],
    diffusion: f64,
    length_scale: f64,
) -> Result<Vec<f64>> {
    HelmholtzFilter::new(mesh, diffusion, length_scale)?.filter(mesh, chi_elem)
}

/// Everything one overhang evaluation produces.
pub struct OverhangEvaluation {
    /// Filtered density field (nodal).
    pub psi: Vec<f64>,
    /// Constraint value: the integrand integrated over the domain.
    pub value: f64,
    /// Integrand averaged per element (diagnostics, audits, exports).
    pub integrand: Vec<f64>,
    /// Adjoint field of the constraint (nodal).
    pub adjoint: Vec<f64>,
    /// Topological derivative `d G / d chi` as a nodal density: `-adjoint`.
    pub derivative: Vec<f64>,
    /// Element-mean of [`Self::derivative`]; multiplied by the element area
    /// it predicts the change of the constraint per unit change of that
    /// element's density.
    pub element_sensitivity: Vec<f64>,
}

/// Overhang constraint bound to one mesh: holds the factored filter.
pub struct OverhangModel {
    pub params: OverhangParams,
    filter: HelmholtzFilter,
}

impl OverhangModel {
    pub fn new(mesh: &Mesh, params: OverhangParams) -> Result<OverhangModel> {
        let filter = HelmholtzFilter::new(mesh, params.diffusion, params.length_scale)?;
        Ok(OverhangModel { params, filter })
    }

    pub fn filter(&self, mesh: &Mesh, chi_elem: &[f64]) -> Result<Vec<f64>> {
        self.filter.filter(mesh, chi_elem)
    }

    /// Evaluates constraint value, integrand, and the adjoint-based
    /// topological derivative for an element-constant density field.
    pub fn evaluate(&self, mesh: &Mesh, chi_elem: &[f64]) -> Result<OverhangEvaluation> {
        let psi = self.filter(mesh, chi_elem)?;
        let (d, sal) = self.params.scaled_vectors();
        let eps = self.params.ramp_smoothing;
        let quad = &self.filter.quad;

        let mut value = 0.0;
        let mut integrand = vec![0.0; mesh.num_elements()];
        let mut rhs = vec![0.0; mesh.num_nodes()];
        for e in 0..mesh.num_elements() {
            let nodes = mesh.element_nodes(e);
            let p = fem::gather4(&psi, &nodes);
            let mut mean = 0.0;
            for gp in &quad.gauss {
                let mut g = [0.0; 2];
                for a in 0..4 {
                    g[0] -= gp.dndx[a] * p[a];
                    g[1] -= gp.dndy[a] * p[a];
                }
                let s1 = sal * (g[0] * d[0][0] + g[1] * d[0][1]);
                let s2 = sal * (g[0] * d[1][0] + g[1] * d[1][1]);
                let r1 = smooth_ramp(s1, eps);
                let r2 = smooth_ramp(s2, eps);
                let val = r1 * r2;
                value += gp.wdet * val;
                mean += 0.25 * val;

                // Adjoint load: the exact derivative of the quadrature sum
                // with respect to nodal psi, negated so the final derivative
                // field is -adjoint. d(val)/dg = sal (r1' r2 d1 + r1 r2' d2),
                // and dg/dpsi_a = -grad(N_a).
                let h1 = smooth_ramp_deriv(s1, eps);
                let h2 = smooth_ramp_deriv(s2, eps);
                let wx = sal * (h1 * r2 * d[0][0] + r1 * h2 * d[1][0]);
                let wy = sal * (h1 * r2 * d[0][1] + r1 * h2 * d[1][1]);
                for a in 0..4 {
                    rhs[nodes[a]] += gp.wdet * (wx * gp.dndx[a] + wy * gp.dndy[a]);
                }
            }
            integrand[e] = mean;
        }

        let adjoint = self.filter.solve_adjoint(rhs)?;
        let derivative: Vec<f64> = adjoint.iter().map(|&v| -v).collect();
        let element_sensitivity = mesh.average_to_elements(&derivative);
        Ok(OverhangEvaluation {
            psi,
            value,
            integrand,
            adjoint,
            derivative,
            element_sensitivity,
        })
    }
}

/// Total area of elements whose integrand exceeds `fraction` of its maximum.
pub fn detected_area(mesh: &Mesh, integrand: &[f64], fraction: f64) -> f64 {
    let max = integrand.iter().cloned().fold(0.0_f64, f64::max);
    if max <= 0.0 {
        return 0.0;
    }
    let cut = fraction * max;
    integrand.iter().filter(|&&v| v > cut).count() as f64 * mesh.element_area()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    const DEG: f64 = std::f64::consts::PI / 180.0;

    #[test]
    fn ramp_values_and_identities() {
        assert!((smooth_ramp(0.0, 1e-4) - 0.005).abs() < 1e-15);
        // Tends to the positive part for |s| >> sqrt(eps).
        assert!((smooth_ramp(10.0, 1e-4) - 10.0).abs() < 1e-5);
        assert!(smooth_ramp(-10.0, 1e-4) < 3e-6);
        for s in [-2.0, -0.3, 0.0, 0.7, 5.0] {
            let eps = 1e-4;
            // R(s) - R(-s) = s and R(s) * R(-s) = eps / 4, both exact.
            assert!((smooth_ramp(s, eps) - smooth_ramp(-s, eps) - s).abs() < 1e-12);
            assert!((smooth_ramp(s, eps) * smooth_ramp(-s, eps) - eps / 4.0).abs() < 1e-12);
            assert!(smooth_ramp(s, eps) > 0.0);
        }
    }

    #[test]
    fn ramp_derivative_matches_finite_differences() {
        let eps = 1e-4;
        for s in [-0.5, -0.01, 0.0, 0.02, 1.3] {
            let h = 1e-6;
            let fd = (smooth_ramp(s + h, eps) - smooth_ramp(s - h, eps)) / (2.0 * h);
            assert!((fd - smooth_ramp_deriv(s, eps)).abs() < 1e-9);
        }
    }

    #[test]
    fn threshold_vectors_at_reference_angles() {
        let d = threshold_vectors(45.0 * DEG);
        assert!((d[0][0] + 0.70711).abs() < 1e-5);
        assert!((d[0][1] + 0.70711).abs() < 1e-5);
        assert!((d[1][0] - 0.70711).abs() < 1e-5);
        assert!((d[1][1] + 0.70711).abs() < 1e-5);
        let d30 = threshold_vectors(30.0 * DEG);
        assert!((d30[1][0] - 0.86603).abs() < 1e-5);
        assert!((d30[1][1] + 0.5).abs() < 1e-6);
        // Unit length and mirror symmetry in the build axis.
        for v in d30 {
            assert!((v[0] * v[0] + v[1] * v[1] - 1.0).abs() < 1e-12);
        }
        assert_eq!(d30[0][1], d30[1][1]);
        assert_eq!(d30[0][0], -d30[1][0]);
    }

    #[test]
    fn threshold_vectors_rotate_with_build_direction() {
        // Building along +x (base plate on the left): "down" is -x.
        let d = threshold_vectors_for(45.0 * DEG, [1.0, 0.0]);
        for v in d {
            assert!(v[0] < 0.0, "vectors must oppose the build direction");
        }
        // The pair stays mirror-symmetric about the build axis.
        assert!((d[0][0] - d[1][0]).abs() < 1e-12);
        assert!((d[0][1] + d[1][1]).abs() < 1e-12);
    }

    #[test]
    fn threshold_vectors_3d_mirror_both_planes() {
        let d = threshold_vectors_3d(45.0 * DEG);
        for v in d {
            let norm: f64 = v.iter().map(|c| c * c).sum::<f64>();
            assert!((norm - 1.0).abs() < 1e-12);
            assert!((v[2] + FRAC_PI_4.sin()).abs() < 1e-12, "build-axis component");
        }
        assert_eq!(d[0][0], -d[1][0]);
        assert_eq!(d[2][1], -d[3][1]);
        assert_eq!(d[0][1], 0.0);
        assert_eq!(d[2][0], 0.0);
    }

    fn params(eps: f64, theta_deg: f64, a: f64, l: f64) -> OverhangParams {
        OverhangParams {
            diffusion: a,
            length_scale: l,
            threshold_angle: theta_deg * DEG,
            ramp_smoothing: eps,
            build_dir: [0.0, 1.0],
        }
    }

    #[test]
    fn integrand_detects_flat_downward_surface() {
        // Outward gradient straight down, sharp ramps: the integrand tends
        // to a L^2 sin^2(theta0).
        let p = params(1e-12, 45.0, 1e-4, 1.0);
        let v = overhang_integrand([0.0, -1.0], &p);
        let exact = 1e-4 * (45.0 * DEG).sin().powi(2);
        assert!((v - exact).abs() < 1e-3 * exact, "{v} vs {exact}");
    }

    #[test]
    fn integrand_floor_at_zero_gradient_is_quarter_eps() {
        for eps in [1e-4, 1e-8] {
            let p = params(eps, 45.0, 1e-4, 1.0);
            let v = overhang_integrand([0.0, 0.0], &p);
            assert!((v - eps / 4.0).abs() < 1e-18, "{v} vs {}", eps / 4.0);
        }
    }

    #[test]
    fn integrand_ignores_vertical_walls_and_tops() {
        let p = params(1e-8, 45.0, 1e-3, 1.0);
        let peak = overhang_integrand([0.0, -1.0], &p);
        // Vertical wall: outward gradient horizontal. Exactly the eps/4
        // floor because the two projections are opposite.
        for g in [[1.0, 0.0], [-1.0, 0.0]] {
            let v = overhang_integrand(g, &p);
            assert!((v - 1e-8 / 4.0).abs() < 1e-12);
            assert!(v < 1e-4 * peak);
        }
        // Top surface: outward gradient up, both projections negative.
        let v = overhang_integrand([0.0, 1.0], &p);
        assert!(v < peak * 1e-6);
    }

    #[test]
    fn integrand_respects_threshold_angle() {
        let p = params(1e-10, 45.0, 1e-4, 1.0);
        let down = |alpha: f64| [alpha.sin(), -alpha.cos()];
        // Undersides shallower than 45 degrees are detected.
        let shallow = overhang_integrand(down(30.0 * DEG), &p);
        // Steeper than 45 degrees: printable, collapses to the floor.
        let steep = overhang_integrand(down(60.0 * DEG), &p);
        assert!(shallow > 1e3 * steep, "shallow {shallow} vs steep {steep}");
        // Mirror symmetry across the build axis.
        let m = overhang_integrand([-(30.0 * DEG).sin(), -(30.0 * DEG).cos()], &p);
        assert!((m - shallow).abs() < 1e-15);
    }

    #[test]
    fn filter_of_uniform_density_is_identity() {
        let mesh = Mesh::grid(2.0, 1.0, 8, 4).unwrap();
        let chi = vec![1.0; mesh.num_elements()];
        let psi = helmholtz_filter(&mesh, &chi, 5e-4, 1.0).unwrap();
        for v in psi {
            assert!((v - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn filter_decay_matches_1d_oracle() {
        // Step density in x on a quasi-1D strip; compare the midline profile
        // with a fine 1D finite-difference solution of -aL^2 psi'' + psi = chi.
        let (w, a, l) = (1.0, 6.25e-4, 1.0);
        let nx = 200;
        let mesh = Mesh::grid(w, w / nx as f64, nx, 1).unwrap();
        let chi: Vec<f64> = (0..mesh.num_elements())
            .map(|e| {
                if mesh.element_centroid(e)[0] < 0.5 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let psi = helmholtz_filter(&mesh, &chi, a, l).unwrap();

        // 1D oracle on a 20x finer grid: tridiagonal FD with natural ends.
        let nf = 4000;
        let h = w / nf as f64;
        let al2 = a * l * l;
        let mut main = vec![0.0; nf + 1];
        let mut off = vec![0.0; nf];
        let mut rhs = vec![0.0; nf + 1];
        for i in 0..=nf {
            let hl = if i > 0 { h } else { 0.0 };
            let hr = if i < nf { h } else { 0.0 };
            main[i] = al2 * ((if i > 0 { 1.0 / h } else { 0.0 }) + (if i < nf { 1.0 / h } else { 0.0 }));
            // Lumped reaction term over the node's support.
            main[i] += 0.5 * (hl + hr);
            if i < nf {
                off[i] = -al2 / h;
            }
            let xl = (i as f64 - 0.5) * h;
            let xr = (i as f64 + 0.5) * h;
            let chi_l = if i > 0 && xl < 0.5 { 1.0 } else { 0.0 };
            let chi_r = if i < nf && xr < 0.5 { 1.0 } else { 0.0 };
            rhs[i] = 0.5 * (hl * chi_l + hr * chi_r);
        }
        // Thomas elimination.
        for i in 1..=nf {
            let m = off[i - 1] / main[i - 1];
            main[i] -= m * off[i - 1];
            rhs[i] -= m * rhs[i - 1];
        }
        let mut oracle = vec![0.0; nf + 1];
        oracle[nf] = rhs[nf] / main[nf];
        for i in (0..nf).rev() {
            oracle[i] = (rhs[i] - off[i] * oracle[i + 1]) / main[i];
        }

        let mut max_err = 0.0_f64;
        for ix in 0..=nx {
            let x = ix as f64 * mesh.dx;
            let fine = ((x / h).round() as usize).min(nf);
            let err = (psi[mesh.node_at(ix, 0)] - oracle[fine]).abs();
            max_err = max_err.max(err);
        }
        assert!(max_err < 0.01, "filter profile deviates from oracle: {max_err}");
    }

    #[test]
    fn constraint_of_uniform_design_sits_at_the_floor() {
        let mesh = Mesh::grid(2.0, 1.0, 10, 5).unwrap();
        let eps = 1e-8;
        let model = OverhangModel::new(&mesh, params(eps, 45.0, 5e-4, 1.0)).unwrap();
        let chi = vec![1.0; mesh.num_elements()];
        let eval = model.evaluate(&mesh, &chi).unwrap();
        let floor = eps / 4.0 * mesh.domain_area();
        assert!((eval.value - floor).abs() < 1e-6 * floor, "{} vs {floor}", eval.value);
    }

    #[test]
    fn adjoint_predicts_density_perturbations() {
        // Central finite differences on a handful of element densities must
        // match the adjoint element sensitivities.
        let mesh = Mesh::grid(1.0, 1.2, 10, 12).unwrap();
        let model = OverhangModel::new(&mesh, params(1e-4, 45.0, 1e-2, 1.0)).unwrap();
        // Two-block design: a wide overhanging slab on a narrow column.
        let mut chi = vec![0.0; mesh.num_elements()];
        for e in 0..mesh.num_elements() {
            let c = mesh.element_centroid(e);
            if c[1] > 0.7 || (c[0] < 0.4 && c[1] <= 0.7) {
                chi[e] = 1.0;
            }
        }
        let eval = model.evaluate(&mesh, &chi).unwrap();
        let h = 1e-5;
        for &e in &[45usize, 61, 77, 90, 118] {
            let mut hi = chi.clone();
            hi[e] += h;
            let mut lo = chi.clone();
            lo[e] -= h;
            let fd = (model.evaluate(&mesh, &hi).unwrap().value
                - model.evaluate(&mesh, &lo).unwrap().value)
                / (2.0 * h);
            let pred = eval.element_sensitivity[e] * mesh.element_area();
            assert!(
                (fd - pred).abs() <= 1e-3 * pred.abs().max(1e-12),
                "element {e}: fd {fd} vs adjoint {pred}"
            );
        }
    }
}
