//! Result output: legacy-ASCII VTK snapshots and a CSV iteration history.
//!
//! Both formats are written with Rust's shortest round-trip float
//! formatting, so files are byte-for-byte reproducible across runs and
//! platforms.

use crate::error::Result;
use crate::mesh::Mesh;
use crate::optimizer::{IterationRecord, IterationState, ObjectiveField};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Builder for one VTK snapshot of a structured-quad mesh and its fields.
///
/// The legacy ASCII `UNSTRUCTURED_GRID` dialect is the least common
/// denominator every viewer reads. Point fields must have one entry per
/// node (two for interleaved vectors), cell fields one per element.
pub struct VtkWriter<'a> {
    mesh: &'a Mesh,
    title: String,
    point_scalars: Vec<(String, &'a [f64])>,
    /// Interleaved `[x0, y0, x1, y1, …]`; written with a zero z-component.
    point_vectors: Vec<(String, &'a [f64])>,
    cell_scalars: Vec<(String, &'a [f64])>,
}

fn checked_name(name: &str) -> String {
    assert!(
        !name.is_empty() && !name.contains(char::is_whitespace),
        "VTK field names must be nonempty and free of whitespace, got {name:?}"
    );
    name.to_string()
}

impl<'a> VtkWriter<'a> {
    pub fn new(mesh: &'a Mesh, title: &str) -> VtkWriter<'a> {
        VtkWriter {
            mesh,
            title: title.lines().next().unwrap_or("snapshot").to_string(),
            point_scalars: Vec::new(),
            point_vectors: Vec::new(),
            cell_scalars: Vec::new(),
        }
    }

    pub fn point_scalar(mut self, name: &str, data: &'a [f64]) -> Self {
        assert_eq!(data.len(), self.mesh.num_nodes(), "nodal field length");
        self.point_scalars.push((checked_name(name), data));
        self
    }

    pub fn point_vector(mut self, name: &str, data: &'a [f64]) -> Self {
        assert_eq!(data.len(), 2 * self.mesh.num_nodes(), "interleaved length");
        self.point_vectors.push((checked_name(name), data));
        self
    }

    pub fn cell_scalar(mut self, name: &str, data: &'a [f64]) -> Self {
        assert_eq!(data.len(), self.mesh.num_elements(), "element field length");
        self.cell_scalars.push((checked_name(name), data));
        self
    }

    /// Renders the complete file contents.
    pub fn render(&self) -> String {
        let mesh = self.mesh;
        let mut out = String::new();
        out.push_str("# vtk DataFile Version 3.0\n");
        let _ = writeln!(out, "{}", self.title);
        out.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");

        let _ = writeln!(out, "POINTS {} double", mesh.num_nodes());
        for n in 0..mesh.num_nodes() {
            let [x, y] = mesh.node_coords(n);
            let _ = writeln!(out, "{x} {y} 0");
        }

        let m = mesh.num_elements();
        let _ = writeln!(out, "CELLS {m} {}", 5 * m);
        for e in 0..m {
            let [a, b, c, d] = mesh.element_nodes(e);
            let _ = writeln!(out, "4 {a} {b} {c} {d}");
        }
        let _ = writeln!(out, "CELL_TYPES {m}");
        for _ in 0..m {
            out.push_str("9\n");
        }

        if !self.point_scalars.is_empty() || !self.point_vectors.is_empty() {
            let _ = writeln!(out, "POINT_DATA {}", mesh.num_nodes());
            for (name, data) in &self.point_scalars {
                let _ = writeln!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default");
                for v in *data {
                    let _ = writeln!(out, "{v}");
                }
            }
            for (name, data) in &self.point_vectors {
                let _ = writeln!(out, "VECTORS {name} double");
                for pair in data.chunks_exact(2) {
                    let _ = writeln!(out, "{} {} 0", pair[0], pair[1]);
                }
            }
        }
        if !self.cell_scalars.is_empty() {
            let _ = writeln!(out, "CELL_DATA {m}");
            for (name, data) in &self.cell_scalars {
                let _ = writeln!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default");
                for v in *data {
                    let _ = writeln!(out, "{v}");
                }
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }
}

/// Column order of the history CSV.
const HISTORY_COLUMNS: &str = "iteration,combined,objective,distortion,overhang,thermal,volume,volume_target,multiplier,change,wall_seconds";

/// Renders the iteration history as CSV: a header line plus one row per
/// record.
pub fn history_csv(records: &[IterationRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(HISTORY_COLUMNS);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            r.combined,
            r.objective,
            r.distortion,
            r.overhang,
            r.thermal,
            r.volume,
            r.volume_target,
            r.multiplier,
            r.change,
            r.wall_seconds
        );
    }
    out
}

pub fn write_history(path: &Path, records: &[IterationRecord]) -> Result<()> {
    std::fs::write(path, history_csv(records))?;
    Ok(())
}

/// Snapshot file name for an iteration, e.g. `iter_0040.vtk`.
pub fn snapshot_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join(format!("iter_{iteration:04}.vtk"))
}

/// Writes one optimization state: the level set, the filtered material
/// field when present, the combined derivative density, and the physical
/// field of the performance objective.
pub fn write_state(path: &Path, mesh: &Mesh, state: &IterationState) -> Result<()> {
    let title = format!("iteration {}", state.record.iteration);
    let mut writer = VtkWriter::new(mesh, &title)
        .point_scalar("phi", state.phi)
        .cell_scalar("sensitivity", state.derivative);
    if let Some(psi) = state.psi {
        writer = writer.point_scalar("psi", psi);
    }
    writer = match state.objective_field {
        ObjectiveField::Displacement(u) => writer.point_vector("displacement", u),
        ObjectiveField::Temperature(t) => writer.point_scalar("temperature", t),
    };
    writer.write(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_element_snapshot_is_byte_stable() {
        let mesh = Mesh::grid(2.0, 1.0, 1, 1).unwrap();
        let phi = [1.0, -0.5, 0.25, 0.0];
        let chi = [0.75];
        let text = VtkWriter::new(&mesh, "unit cell")
            .point_scalar("phi", &phi)
            .cell_scalar("chi", &chi)
            .render();
        // Node order is y-fastest: (0,0), (0,1), (2,0), (2,1); the quad
        // lists its corners counter-clockwise from the lower left.
        let expected = "\
# vtk DataFile Version 3.0
unit cell
ASCII
DATASET UNSTRUCTURED_GRID
POINTS 4 double
0 0 0
0 1 0
2 0 0
2 1 0
CELLS 1 5
4 0 2 3 1
CELL_TYPES 1
9
POINT_DATA 4
SCALARS phi double 1
LOOKUP_TABLE default
1
-0.5
0.25
0
CELL_DATA 1
SCALARS chi double 1
LOOKUP_TABLE default
0.75
";
        assert_eq!(text, expected, "golden VTK layout must not drift");
    }

    #[test]
    fn snapshot_counts_match_the_mesh() {
        let mesh = Mesh::grid(3.0, 2.0, 3, 2).unwrap();
        let phi = vec![0.5; mesh.num_nodes()];
        let u = vec![0.125; 2 * mesh.num_nodes()];
        let sens = vec![-1.0; mesh.num_elements()];
        let text = VtkWriter::new(&mesh, "counts")
            .point_scalar("phi", &phi)
            .point_vector("displacement", &u)
            .cell_scalar("sensitivity", &sens)
            .render();
        assert!(text.contains("POINTS 12 double"), "4x3 nodes");
        assert!(text.contains("CELLS 6 30"), "6 quads, 5 ints each");
        assert!(text.contains("POINT_DATA 12"));
        assert!(text.contains("CELL_DATA 6"));
        assert!(text.contains("VECTORS displacement double"));
        let vector_rows = text
            .lines()
            .filter(|l| *l == "0.125 0.125 0")
            .count();
        assert_eq!(vector_rows, 12, "one vector row per node");
        // Every cell's connectivity references valid nodes.
        for line in text.lines().filter(|l| l.starts_with("4 ")) {
            for id in line.split_whitespace().skip(1) {
                let id: usize = id.parse().unwrap();
                assert!(id < mesh.num_nodes(), "node id {id} in range");
            }
        }
    }

    #[test]
    fn history_has_header_plus_one_row_per_record() {
        let record = |i: usize, j: f64| IterationRecord {
            iteration: i,
            combined: j,
            objective: j,
            distortion: 0.0,
            overhang: 0.125,
            thermal: 0.0,
            volume: 0.5,
            volume_target: 0.5,
            multiplier: 1.5,
            change: 0.01,
            wall_seconds: 0.25,
        };
        let records = vec![record(0, 2.0), record(1, 1.5), record(2, 1.25)];
        let csv = history_csv(&records);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4, "3 records produce 4 lines");
        assert_eq!(lines[0], HISTORY_COLUMNS);
        assert_eq!(lines[2], "1,1.5,1.5,0,0.125,0,0.5,0.5,1.5,0.01,0.25");
        assert!(csv.ends_with('\n'), "file ends with a newline");
    }

    #[test]
    fn files_land_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = Mesh::grid(1.0, 1.0, 2, 2).unwrap();
        let phi = vec![-1.0; mesh.num_nodes()];
        let path = snapshot_path(dir.path(), 40);
        assert_eq!(path.file_name().unwrap(), "iter_0040.vtk");
        VtkWriter::new(&mesh, "disk")
            .point_scalar("phi", &phi)
            .write(&path)
            .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# vtk DataFile Version 3.0\n"));

        let history = dir.path().join("history.csv");
        write_history(&history, &[]).unwrap();
        assert_eq!(
            std::fs::read_to_string(&history).unwrap(),
            format!("{HISTORY_COLUMNS}\n"),
            "empty history still carries the header"
        );
    }
}
