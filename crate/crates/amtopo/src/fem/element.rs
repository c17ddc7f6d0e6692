//! Reference matrices for 4-node bilinear quadrilaterals on a uniform grid.
//!
//! Every element of a structured grid shares the same rectangle geometry, so
//! shape-function derivatives, stiffness, and mass matrices are computed once
//! per mesh and scaled per element during assembly. Quadrature is 2x2 Gauss
//! throughout, which integrates all bilinear products exactly.

/// Shape-function data at one Gauss point of the reference rectangle.
#[derive(Debug, Clone, Copy)]
pub struct GaussPoint {
    /// Quadrature weight times the Jacobian determinant.
    pub wdet: f64,
    /// Shape function values, node order: BL, BR, TR, TL.
    pub n: [f64; 4],
    /// Physical x-derivatives of the shape functions.
    pub dndx: [f64; 4],
    /// Physical y-derivatives of the shape functions.
    pub dndy: [f64; 4],
    /// Position of the Gauss point relative to the element's lower-left
    /// corner, in physical coordinates.
    pub local: [f64; 2],
}

/// Precomputed integrals for one rectangle size `dx` x `dy`.
#[derive(Debug, Clone)]
pub struct QuadRef {
    pub dx: f64,
    pub dy: f64,
    pub area: f64,
    pub gauss: [GaussPoint; 4],
    /// Scalar stiffness for unit diffusivity: `K[a][b] = ∫ ∇N_a · ∇N_b`.
    pub k_scalar: [[f64; 4]; 4],
    /// Consistent scalar mass for a unit coefficient: `M[a][b] = ∫ N_a N_b`.
    pub m_scalar: [[f64; 4]; 4],
    /// Shape-function derivatives at the element center (for centroid
    /// gradients).
    pub center_dndx: [f64; 4],
    pub center_dndy: [f64; 4],
}

fn shape_and_derivs(xi: f64, eta: f64, dx: f64, dy: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
    let n = [
        0.25 * (1.0 - xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 + eta),
        0.25 * (1.0 - xi) * (1.0 + eta),
    ];
    // d/dx = d/dxi * 2/dx on an axis-aligned rectangle.
    let dndx = [
        -0.25 * (1.0 - eta) * 2.0 / dx,
        0.25 * (1.0 - eta) * 2.0 / dx,
        0.25 * (1.0 + eta) * 2.0 / dx,
        -0.25 * (1.0 + eta) * 2.0 / dx,
    ];
    let dndy = [
        -0.25 * (1.0 - xi) * 2.0 / dy,
        -0.25 * (1.0 + xi) * 2.0 / dy,
        0.25 * (1.0 + xi) * 2.0 / dy,
        0.25 * (1.0 - xi) * 2.0 / dy,
    ];
    (n, dndx, dndy)
}

impl QuadRef {
    pub fn new(dx: f64, dy: f64) -> QuadRef {
        assert!(dx > 0.0 && dy > 0.0, "element sides must be positive");
        let g = 1.0 / 3.0_f64.sqrt();
        let pts = [(-g, -g), (g, -g), (g, g), (-g, g)];
        let detj = dx * dy / 4.0;

        let mut gauss = [GaussPoint {
            wdet: 0.0,
            n: [0.0; 4],
            dndx: [0.0; 4],
            dndy: [0.0; 4],
            local: [0.0; 2],
        }; 4];
        let mut k = [[0.0; 4]; 4];
        let mut m = [[0.0; 4]; 4];
        for (gp, &(xi, eta)) in gauss.iter_mut().zip(&pts) {
            let (n, dndx, dndy) = shape_and_derivs(xi, eta, dx, dy);
            *gp = GaussPoint {
                wdet: detj,
                n,
                dndx,
                dndy,
                local: [(xi + 1.0) * dx / 2.0, (eta + 1.0) * dy / 2.0],
            };
            for a in 0..4 {
                for b in 0..4 {
                    k[a][b] += detj * (dndx[a] * dndx[b] + dndy[a] * dndy[b]);
                    m[a][b] += detj * n[a] * n[b];
                }
            }
        }
        let (_, cx, cy) = shape_and_derivs(0.0, 0.0, dx, dy);
        QuadRef {
            dx,
            dy,
            area: dx * dy,
            gauss,
            k_scalar: k,
            m_scalar: m,
            center_dndx: cx,
            center_dndy: cy,
        }
    }

    /// Gradient of a nodal scalar field at the element center.
    #[inline]
    pub fn centroid_gradient(&self, u: &[f64; 4]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for a in 0..4 {
            g[0] += self.center_dndx[a] * u[a];
            g[1] += self.center_dndy[a] * u[a];
        }
        g
    }

    /// `∫_e ∇u · ∇v` for two nodal fields on this element (unit coefficient).
    #[inline]
    pub fn grad_product(&self, u: &[f64; 4], v: &[f64; 4]) -> f64 {
        let mut s = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                s += u[a] * self.k_scalar[a][b] * v[b];
            }
        }
        s
    }

    /// `∫_e u v` for two nodal fields on this element (consistent mass).
    #[inline]
    pub fn mass_product(&self, u: &[f64; 4], v: &[f64; 4]) -> f64 {
        let mut s = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                s += u[a] * self.m_scalar[a][b] * v[b];
            }
        }
        s
    }
}

/// Plane-stress constitutive matrix in Voigt order `[e_xx, e_yy, g_xy]`.
pub fn plane_stress_matrix(young: f64, poisson: f64) -> [[f64; 3]; 3] {
    assert!(young > 0.0, "Young's modulus must be positive");
    assert!(
        (-1.0..0.5).contains(&poisson),
        "Poisson's ratio must lie in [-1, 0.5) for plane stress, got {poisson}"
    );
    let f = young / (1.0 - poisson * poisson);
    [
        [f, f * poisson, 0.0],
        [f * poisson, f, 0.0],
        [0.0, 0.0, f * (1.0 - poisson) / 2.0],
    ]
}

/// Elasticity reference data for one rectangle size and material.
///
/// Displacement dofs are interleaved `[u_x0, u_y0, u_x1, u_y1, ...]` in the
/// element's node order.
#[derive(Debug, Clone)]
pub struct ElasticRef {
    pub quad: QuadRef,
    /// Constitutive matrix the stiffness was built with.
    pub c: [[f64; 3]; 3],
    /// Element stiffness for the unscaled material: `∫ B^T C B`.
    pub ke: [[f64; 8]; 8],
    /// Strain-displacement matrices at the four Gauss points.
    pub b: [[[f64; 8]; 3]; 4],
    /// Strain-displacement matrix at the element center.
    pub b_center: [[f64; 8]; 3],
}

fn b_matrix(dndx: &[f64; 4], dndy: &[f64; 4]) -> [[f64; 8]; 3] {
    let mut b = [[0.0; 8]; 3];
    for a in 0..4 {
        b[0][2 * a] = dndx[a];
        b[1][2 * a + 1] = dndy[a];
        b[2][2 * a] = dndy[a];
        b[2][2 * a + 1] = dndx[a];
    }
    b
}

impl ElasticRef {
    pub fn new(dx: f64, dy: f64, young: f64, poisson: f64) -> ElasticRef {
        let quad = QuadRef::new(dx, dy);
        let c = plane_stress_matrix(young, poisson);
        let mut ke = [[0.0; 8]; 8];
        let mut bs = [[[0.0; 8]; 3]; 4];
        for (g, gp) in quad.gauss.iter().enumerate() {
            let b = b_matrix(&gp.dndx, &gp.dndy);
            bs[g] = b;
            for p in 0..8 {
                for q in 0..8 {
                    let mut s = 0.0;
                    for r in 0..3 {
                        for t in 0..3 {
                            s += b[r][p] * c[r][t] * b[t][q];
                        }
                    }
                    ke[p][q] += gp.wdet * s;
                }
            }
        }
        let b_center = b_matrix(&quad.center_dndx, &quad.center_dndy);
        ElasticRef {
            quad,
            c,
            ke,
            b: bs,
            b_center,
        }
    }

    /// Consistent load `∫ B^T C e0` for a uniform initial strain `e0`
    /// (Voigt), for the unscaled material.
    pub fn initial_strain_load(&self, e0: [f64; 3]) -> [f64; 8] {
        let mut s0 = [0.0; 3];
        for r in 0..3 {
            for t in 0..3 {
                s0[r] += self.c[r][t] * e0[t];
            }
        }
        let mut f = [0.0; 8];
        for gp in 0..4 {
            let wdet = self.quad.gauss[gp].wdet;
            for p in 0..8 {
                let mut v = 0.0;
                for r in 0..3 {
                    v += self.b[gp][r][p] * s0[r];
                }
                f[p] += wdet * v;
            }
        }
        f
    }

    /// Strain (Voigt) at Gauss point `gp` for element displacements `u`.
    #[inline]
    pub fn strain_at(&self, gp: usize, u: &[f64; 8]) -> [f64; 3] {
        let mut e = [0.0; 3];
        for r in 0..3 {
            for p in 0..8 {
                e[r] += self.b[gp][r][p] * u[p];
            }
        }
        e
    }

    /// `∫_e ε(u) : T : ε(v)` with a Voigt contraction matrix `T`
    /// (engineering shear convention, matching [`plane_stress_matrix`]).
    pub fn strain_product(&self, t: &[[f64; 3]; 3], u: &[f64; 8], v: &[f64; 8]) -> f64 {
        let mut s = 0.0;
        for gp in 0..4 {
            let eu = self.strain_at(gp, u);
            let ev = self.strain_at(gp, v);
            let mut q = 0.0;
            for r in 0..3 {
                for w in 0..3 {
                    q += eu[r] * t[r][w] * ev[w];
                }
            }
            s += self.quad.gauss[gp].wdet * q;
        }
        s
    }

    /// `∫_e e0 : T : ε(v)` for a uniform Voigt strain `e0`.
    pub fn uniform_strain_product(&self, t: &[[f64; 3]; 3], e0: [f64; 3], v: &[f64; 8]) -> f64 {
        let mut s = 0.0;
        for gp in 0..4 {
            let ev = self.strain_at(gp, v);
            let mut q = 0.0;
            for r in 0..3 {
                for w in 0..3 {
                    q += e0[r] * t[r][w] * ev[w];
                }
            }
            s += self.quad.gauss[gp].wdet * q;
        }
        s
    }
}
