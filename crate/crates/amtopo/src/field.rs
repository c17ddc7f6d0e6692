//! Level-set design field and the smoothed interpolations derived from it.
//!
//! The design is a nodal field `phi` in `[-1, 1]`: positive in material,
//! negative in void, with the structural boundary at `phi = 0`. Density-like
//! quantities (characteristic function, ersatz stiffness factor) come from a
//! quintic smoothed Heaviside of `phi`.

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use serde::{Deserialize, Serialize};

/// Quintic smoothed Heaviside with half-width `w`.
///
/// Zero for `x <= -w`, one for `x >= w`, and a quintic polynomial in between
/// whose first derivative vanishes at both ends, so the function is C^1
/// across the transition.
pub fn smoothed_heaviside(x: f64, w: f64) -> f64 {
    debug_assert!(w > 0.0, "heaviside half-width must be positive");
    if x <= -w {
        return 0.0;
    }
    if x >= w {
        return 1.0;
    }
    let t = x / w;
    let t2 = t * t;
    0.5 + t * (15.0 / 16.0 - t2 * (5.0 / 8.0 - 3.0 / 16.0 * t2))
}

/// Derivative of [`smoothed_heaviside`] with respect to `x`.
///
/// Equals `15/(16 w) * (1 - (x/w)^2)^2` inside the transition band and zero
/// outside; integrating it across the band gives exactly 1, which is what
/// lets it act as a smeared boundary delta.
pub fn smoothed_heaviside_deriv(x: f64, w: f64) -> f64 {
    debug_assert!(w > 0.0, "heaviside half-width must be positive");
    if x.abs() >= w {
        return 0.0;
    }
    let t = x / w;
    let s = 1.0 - t * t;
    15.0 / (16.0 * w) * s * s
}

/// Smoothed characteristic function of the material domain, nodewise.
pub fn characteristic(phi: &[f64], xi: f64) -> Vec<f64> {
    phi.iter().map(|&p| smoothed_heaviside(p, xi)).collect()
}

/// Ersatz material factor `(1 - c) H(phi; w) + c`, nodewise.
///
/// Void elements keep a small stiffness/conductivity fraction `c` so the
/// analysis domain stays connected and the system matrices stay positive
/// definite.
pub fn ersatz_factor(phi: f64, w: f64, c: f64) -> f64 {
    debug_assert!((0.0..1.0).contains(&c), "ersatz floor must be in [0, 1)");
    (1.0 - c) * smoothed_heaviside(phi, w) + c
}

/// Per-element ersatz factors: nodal `phi` is mapped through
/// [`ersatz_factor`] and averaged over each element's corners.
pub fn element_ersatz(mesh: &Mesh, phi: &[f64], w: f64, c: f64) -> Vec<f64> {
    let nodal: Vec<f64> = phi.iter().map(|&p| ersatz_factor(p, w, c)).collect();
    mesh.average_to_elements(&nodal)
}

/// Per-element characteristic values (nodal map, then corner average).
pub fn element_characteristic(mesh: &Mesh, phi: &[f64], xi: f64) -> Vec<f64> {
    let nodal = characteristic(phi, xi);
    mesh.average_to_elements(&nodal)
}

/// Material volume fraction of the design: mean element characteristic.
pub fn volume_fraction(mesh: &Mesh, phi: &[f64], xi: f64) -> f64 {
    let chi = element_characteristic(mesh, phi, xi);
    chi.iter().sum::<f64>() / chi.len() as f64
}

/// Clamps the level-set field to its admissible range `[-1, 1]` in place.
pub fn clamp_levelset(phi: &mut [f64]) {
    for p in phi.iter_mut() {
        *p = p.clamp(-1.0, 1.0);
    }
}

/// Initial design selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialDesign {
    /// Fully solid domain: `phi = 1` everywhere.
    Full,
    /// Solid domain seeded with a staggered lattice of circular holes
    /// (`phi = -1` inside each circle).
    Pattern,
}

impl std::str::FromStr for InitialDesign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(InitialDesign::Full),
            "pattern" => Ok(InitialDesign::Pattern),
            other => Err(Error::invalid(
                "initial_design",
                format!("unknown mode {other:?}; expected \"full\" or \"pattern\""),
            )),
        }
    }
}

/// Builds the initial nodal level-set field for a mesh.
pub fn initialize(mesh: &Mesh, mode: InitialDesign) -> Vec<f64> {
    match mode {
        InitialDesign::Full => vec![1.0; mesh.num_nodes()],
        InitialDesign::Pattern => {
            let spacing = mesh.width.min(mesh.height) / 3.0;
            let radius = spacing / 3.0;
            let cols = (mesh.width / spacing).ceil() as i64 + 1;
            let rows = (mesh.height / spacing).ceil() as i64 + 1;
            let mut centers = Vec::new();
            for r in 0..rows {
                let offset = if r % 2 == 0 { 0.0 } else { 0.5 * spacing };
                for c in 0..cols {
                    centers.push([
                        c as f64 * spacing + offset,
                        (r as f64 + 0.5) * spacing,
                    ]);
                }
            }
            (0..mesh.num_nodes())
                .map(|n| {
                    let p = mesh.node_coords(n);
                    let inside = centers.iter().any(|c| {
                        let dx = p[0] - c[0];
                        let dy = p[1] - c[1];
                        dx * dx + dy * dy < radius * radius
                    });
                    if inside {
                        -1.0
                    } else {
                        1.0
                    }
                })
                .collect()
        }
    }
}
