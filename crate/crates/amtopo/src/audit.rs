//! Manufacturability audit of a design: extract the material boundary as a
//! polyline contour and measure how much of it faces downward too steeply
//! or bottoms out in unprintable valleys.
//!
//! The contour is the zero level set of the nodal field, traced cell by
//! cell with material kept on the left of each segment, so the outward
//! normal is always the travel direction rotated clockwise.

use crate::mesh::Mesh;
use crate::optimizer::Problem;
use crate::Result;
use std::collections::HashMap;

/// One oriented piece of the material boundary; material lies to the left
/// of `a → b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Segment {
    pub fn length(&self) -> f64 {
        let dx = self.b[0] - self.a[0];
        let dy = self.b[1] - self.a[1];
        (dx * dx + dy * dy).sqrt()
    }

    /// Unit normal pointing out of the material (right of travel).
    pub fn outward_normal(&self) -> [f64; 2] {
        let dx = self.b[0] - self.a[0];
        let dy = self.b[1] - self.a[1];
        let len = (dx * dx + dy * dy).sqrt();
        if len == 0.0 {
            return [0.0, 0.0];
        }
        [dy / len, -dx / len]
    }
}

/// Zero-crossing position between two nodal values of opposite sign.
fn cross(v0: f64, v1: f64) -> f64 {
    v0 / (v0 - v1)
}

/// Traces the zero contour of a nodal field over the structured grid.
///
/// Nodes holding exactly zero are treated as (barely) material so the case
/// table never sees a zero sign. Saddle cells are disambiguated with the
/// cell-center average.
pub fn contour_segments(mesh: &Mesh, phi: &[f64]) -> Vec<Segment> {
    assert_eq!(phi.len(), mesh.num_nodes(), "field size mismatch");
    let value = |n: usize| {
        let v = phi[n];
        if v == 0.0 {
            1e-30
        } else {
            v
        }
    };
    let mut segments = Vec::new();
    for e in 0..mesh.num_elements() {
        let nodes = mesh.element_nodes(e);
        let v = [value(nodes[0]), value(nodes[1]), value(nodes[2]), value(nodes[3])];
        let mut case = 0usize;
        for (bit, &vi) in v.iter().enumerate() {
            if vi > 0.0 {
                case |= 1 << bit;
            }
        }
        if case == 0 || case == 15 {
            continue;
        }
        let (ex, ey) = mesh.element_grid_coords(e);
        let x0 = ex as f64 * mesh.dx;
        let y0 = ey as f64 * mesh.dy;
        // Crossing points on the four cell edges (bottom, right, top, left).
        let bottom = || [x0 + mesh.dx * cross(v[0], v[1]), y0];
        let right = || [x0 + mesh.dx, y0 + mesh.dy * cross(v[1], v[2])];
        let top = || [x0 + mesh.dx * cross(v[3], v[2]), y0 + mesh.dy];
        let left = || [x0, y0 + mesh.dy * cross(v[0], v[3])];
        // A contour passing exactly through a node yields a point-like
        // segment; those carry no length and would break chain tracing.
        let tiny = 1e-12 * (mesh.dx + mesh.dy);
        let mut emit = |a: [f64; 2], b: [f64; 2]| {
            let seg = Segment { a, b };
            if seg.length() > tiny {
                segments.push(seg);
            }
        };
        match case {
            1 => emit(bottom(), left()),
            2 => emit(right(), bottom()),
            3 => emit(right(), left()),
            4 => emit(top(), right()),
            6 => emit(top(), bottom()),
            7 => emit(top(), left()),
            8 => emit(left(), top()),
            9 => emit(bottom(), top()),
            11 => emit(right(), top()),
            12 => emit(left(), right()),
            13 => emit(bottom(), right()),
            14 => emit(left(), bottom()),
            5 => {
                // Material at BL and TR; connectivity decided at the center.
                if v.iter().sum::<f64>() > 0.0 {
                    emit(top(), left());
                    emit(bottom(), right());
                } else {
                    emit(bottom(), left());
                    emit(top(), right());
                }
            }
            10 => {
                if v.iter().sum::<f64>() > 0.0 {
                    emit(left(), bottom());
                    emit(right(), top());
                } else {
                    emit(right(), bottom());
                    emit(left(), top());
                }
            }
            _ => unreachable!("cases 0 and 15 are filtered above"),
        }
    }
    segments
}

/// Boundary-orientation audit of one design.
#[derive(Debug, Clone, Default)]
pub struct ContourAudit {
    /// Total length of the material boundary.
    pub total_length: f64,
    /// Length facing downward at all (outward normal against the build
    /// direction).
    pub downward_length: f64,
    /// Length facing downward more steeply than the threshold allows.
    pub violating_length: f64,
    /// `violating_length / total_length` (zero for an empty contour).
    pub violating_fraction: f64,
    /// Number of local minima of the boundary height along the build
    /// direction — candidate heat-trapping valleys.
    pub downward_minima: usize,
}

/// Angle slack (radians) forgiving surfaces within measurement resolution
/// of the threshold: about two degrees.
pub const ANGLE_SLACK: f64 = 2.0 * std::f64::consts::PI / 180.0;

/// Audits the zero contour of `phi` against an overhang threshold.
///
/// A downward-facing piece violates when its inclination from the base
/// plate falls below the threshold minus the slack, i.e. when its outward
/// normal `n` satisfies `-n·d > cos(θ0 - slack)`: flat undersides score 1,
/// vertical walls 0, and a surface inclined exactly at the threshold is
/// forgiven.
pub fn audit_contour(
    mesh: &Mesh,
    phi: &[f64],
    threshold_angle: f64,
    build_dir: [f64; 2],
) -> ContourAudit {
    let segments = contour_segments(mesh, phi);
    let limit = threshold_angle - ANGLE_SLACK;
    let mut audit = ContourAudit::default();
    for s in &segments {
        let len = s.length();
        if len == 0.0 {
            continue;
        }
        audit.total_length += len;
        let n = s.outward_normal();
        let down = -(n[0] * build_dir[0] + n[1] * build_dir[1]);
        if down > 0.0 {
            audit.downward_length += len;
            if limit > 0.0 && down > limit.cos() {
                audit.violating_length += len;
            }
        }
    }
    if audit.total_length > 0.0 {
        audit.violating_fraction = audit.violating_length / audit.total_length;
    }
    audit.downward_minima = downward_minima(mesh, &segments, build_dir);
    audit
}

/// Counts local minima of the contour height along the build direction.
///
/// Segments are joined into chains at shared endpoints; within each chain
/// a vertex (or plateau of equal-height vertices) counts when both sides
/// rise. Open-chain endpoints never count.
pub fn downward_minima(mesh: &Mesh, segments: &[Segment], build_dir: [f64; 2]) -> usize {
    if segments.is_empty() {
        return 0;
    }
    let scale = mesh.width.max(mesh.height);
    let quant = |p: [f64; 2]| {
        (
            (p[0] / scale * 1e9).round() as i64,
            (p[1] / scale * 1e9).round() as i64,
        )
    };
    // Outgoing segment index per start point; contours traced with a
    // consistent orientation give each point at most one outgoing edge
    // (shared corners are measure-zero exceptions we tolerate by keeping
    // the first).
    let mut outgoing: HashMap<(i64, i64), usize> = HashMap::new();
    let mut has_incoming: HashMap<(i64, i64), bool> = HashMap::new();
    for (i, s) in segments.iter().enumerate() {
        outgoing.entry(quant(s.a)).or_insert(i);
        has_incoming.insert(quant(s.b), true);
    }
    let mut used = vec![false; segments.len()];
    let mut count = 0;

    let mut trace = |start: usize, used: &mut Vec<bool>| {
        let mut chain: Vec<[f64; 2]> = vec![segments[start].a];
        let mut cur = start;
        loop {
            used[cur] = true;
            chain.push(segments[cur].b);
            match outgoing.get(&quant(segments[cur].b)) {
                Some(&next) if !used[next] => cur = next,
                _ => break,
            }
        }
        let closed = quant(chain[0]) == quant(*chain.last().unwrap());
        count += chain_minima(&chain, closed, build_dir, 1e-7 * scale);
    };

    // Open chains first (their starts have no incoming segment), then any
    // remaining loops.
    for (i, s) in segments.iter().enumerate() {
        if !used[i] && !has_incoming.contains_key(&quant(s.a)) {
            trace(i, &mut used);
        }
    }
    for i in 0..segments.len() {
        if !used[i] {
            trace(i, &mut used);
        }
    }
    count
}

/// Local minima of vertex height along one chain, merging plateaus.
fn chain_minima(chain: &[[f64; 2]], closed: bool, build_dir: [f64; 2], tol: f64) -> usize {
    let height = |p: &[f64; 2]| p[0] * build_dir[0] + p[1] * build_dir[1];
    // Collapse consecutive near-equal heights into plateau runs.
    let mut runs: Vec<f64> = Vec::new();
    let n = if closed { chain.len() - 1 } else { chain.len() };
    if n == 0 {
        return 0;
    }
    for p in &chain[..n] {
        let h = height(p);
        match runs.last() {
            Some(&last) if (h - last).abs() <= tol => {}
            _ => runs.push(h),
        }
    }
    if closed && runs.len() > 1 {
        // The seam may merge first and last plateaus.
        if (runs[0] - *runs.last().unwrap()).abs() <= tol {
            runs.pop();
        }
    }
    let m = runs.len();
    if m < 2 {
        // A flat closed loop has a single plateau: one minimum.
        return if closed && m == 1 { 1 } else { 0 };
    }
    let mut count = 0;
    let range = if closed { 0..m } else { 1..m - 1 };
    for i in range {
        let prev = runs[(i + m - 1) % m];
        let next = runs[(i + 1) % m];
        if runs[i] < prev - tol && runs[i] < next - tol {
            count += 1;
        }
    }
    count
}

/// Constraint values of a design, evaluated without optimizing.
#[derive(Debug, Clone)]
pub struct DesignAudit {
    pub volume: f64,
    pub objective: f64,
    pub overhang: Option<f64>,
    pub thermal: Option<f64>,
    pub distortion: Option<f64>,
    pub contour: ContourAudit,
}

/// Evaluates every enabled model of the problem on a given design and runs
/// the contour audit. Used by the `audit` command and the end-of-run
/// report.
pub fn audit_design(problem: &Problem, phi: &[f64]) -> Result<DesignAudit> {
    use crate::field::{element_characteristic, element_ersatz, volume_fraction};
    let mesh = &problem.mesh;
    let ersatz = &problem.ersatz;
    let scale = element_ersatz(mesh, phi, ersatz.transition, ersatz.floor);
    let chi = element_characteristic(mesh, phi, ersatz.projection);
    let volume = volume_fraction(mesh, phi, ersatz.projection);

    let objective = problem.objective.evaluate(mesh, &scale)?.value;
    let (overhang, psi, theta, dir) = match &problem.overhang {
        Some(model) => {
            let eval = model.evaluate(mesh, &chi)?;
            (
                Some(eval.value),
                Some(eval.psi),
                model.params.threshold_angle,
                model.params.build_dir,
            )
        }
        None => (None, None, std::f64::consts::FRAC_PI_4, [0.0, 1.0]),
    };
    let thermal = match (&problem.thermal, &psi) {
        (Some(model), Some(psi)) => Some(model.value(mesh, &scale, psi)?),
        _ => None,
    };
    let distortion = match &problem.mechanical {
        Some(model) => Some(model.value(mesh, &scale)?),
        None => None,
    };
    Ok(DesignAudit {
        volume,
        objective,
        overhang,
        thermal,
        distortion,
        contour: audit_contour(mesh, phi, theta, dir),
    })
}
