//! Run configuration: JSON schema, defaults, validation, and the built-in
//! benchmark problems.
//!
//! A configuration document is a single JSON object; every field is
//! optional and falls back to the defaults below, so `{}` (or just
//! `{"problem": "mbb"}`) is a complete, runnable configuration. The
//! `benchmark` constructor produces the same presets programmatically,
//! with layer counts that depend on the chosen base-plate side.

use crate::build_mechanical::{InherentStrainParams, MechanicalBuildModel};
use crate::build_thermal::{ThermalBuildModel, ThermalBuildParams};
use crate::error::{Error, Result};
use crate::field::{initialize, InitialDesign};
use crate::mesh::{LayerPartition, Mesh, Side};
use crate::objectives::{ComplianceModel, ConductionModel, EdgeLoad, ElasticBc};
use crate::optimizer::{
    ErsatzParams, LoopControls, ObjectiveModel, Problem, WeightParams,
};
use crate::overhang::{OverhangModel, OverhangParams};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Which problem the configuration describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    /// Symmetric half of the MBB beam: symmetry plane on the left edge,
    /// roller under the right corner, load at the top-left.
    #[default]
    Mbb,
    /// Cantilever clamped on the left edge, loaded mid-right.
    Cantilever,
    /// Heat-dissipating structure: uniform source, sink at the base side.
    Heatsink,
    /// User-described boundary conditions (`custom` section required).
    Custom,
}

/// Domain extents and resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub width: f64,
    pub height: f64,
    pub nx: usize,
    pub ny: usize,
}

/// Bulk material constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialConfig {
    /// Young's modulus (GPa).
    pub young: f64,
    /// Poisson's ratio.
    pub poisson: f64,
    /// Thermal conductivity (W/mK).
    pub conductivity: f64,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        // AlSi10Mg.
        MaterialConfig {
            young: 75.0,
            poisson: 0.34,
            conductivity: 119.0,
        }
    }
}

/// Scalarization weights and evolution parameters (see `WeightParams`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub mobility: f64,
    pub regularization: f64,
    pub dt: f64,
    pub volume_max: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        let w = WeightParams::default();
        WeightConfig {
            alpha: w.alpha,
            beta: w.beta,
            gamma: w.gamma,
            mobility: w.mobility,
            regularization: w.regularization,
            dt: w.dt,
            volume_max: w.volume_max,
        }
    }
}

/// Manufacturing-constraint parameters and per-constraint toggles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstraintConfig {
    /// Helmholtz diffusion coefficient of the overhang filter.
    pub diffusion: f64,
    /// Representative length of the overhang filter (mm).
    pub length_scale: f64,
    /// Printable angle threshold (degrees from the base plate).
    pub threshold_deg: f64,
    /// Ramp smoothing of the overhang integrand.
    pub ramp_smoothing: f64,
    /// P-norm exponent of the distortion measure.
    pub pnorm: f64,
    /// Layer count of the thermal build model.
    pub thermal_layers: usize,
    /// Layer count of the mechanical build model.
    pub mechanical_layers: usize,
    /// Interface heat flux of the thermal model (W).
    pub flux: f64,
    /// Half-width of the interface detection band.
    pub interface_width: f64,
    /// Inherent contraction strain (Voigt x, y, shear).
    pub inherent_strain: [f64; 3],
    /// Enables the overhang-angle penalty (β term).
    pub overhang_enabled: bool,
    /// Enables the layer-thermal penalty (γ term); needs the overhang
    /// filter.
    pub thermal_enabled: bool,
    /// Enables the distortion penalty (α term).
    pub distortion_enabled: bool,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        ConstraintConfig {
            diffusion: 5.0e-4,
            length_scale: 25.0,
            threshold_deg: 45.0,
            ramp_smoothing: 1.0e-4,
            pnorm: 5.0,
            thermal_layers: 50,
            mechanical_layers: 50,
            flux: 10.0,
            interface_width: 0.5,
            inherent_strain: [-0.0025, -0.0025, 0.0],
            overhang_enabled: true,
            thermal_enabled: true,
            distortion_enabled: false,
        }
    }
}

/// Loop and output controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    pub max_iters: usize,
    /// Field snapshots are written every this many iterations (0 = none).
    pub snapshot_stride: usize,
    /// Output directory; when absent the CLI falls back to `--out`, the
    /// `AMTOPO_OUT` environment variable, then `./out`.
    pub output_dir: Option<String>,
    /// Worker threads for the layer solves.
    pub threads: Option<usize>,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            max_iters: 300,
            snapshot_stride: 10,
            output_dir: None,
            threads: None,
        }
    }
}

/// Boundary conditions of a custom problem. Sides with prescribed
/// temperature make the objective thermal compliance; otherwise the
/// objective is structural compliance and at least one support is needed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct CustomProblem {
    /// Fully clamped sides.
    pub clamp_sides: Vec<Side>,
    /// Sides with one fixed component (0 = x, 1 = y).
    pub roller_sides: Vec<(Side, usize)>,
    /// Distributed edge loads.
    pub loads: Vec<EdgeLoadConfig>,
    /// Heat-sink sides (selects the thermal-compliance objective).
    pub sink_sides: Vec<Side>,
    /// Volumetric heat source of the thermal objective.
    pub heat_source: f64,
}

/// Serializable mirror of an edge traction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeLoadConfig {
    pub side: Side,
    pub from: f64,
    pub to: f64,
    pub traction: [f64; 2],
}

/// A complete run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizationConfig {
    pub problem: ProblemKind,
    /// Domain and resolution; `None` uses the problem's preset.
    pub geometry: Option<Geometry>,
    /// Base-plate side (build direction points inward from it).
    pub build_side: Option<Side>,
    pub material: MaterialConfig,
    pub weights: WeightConfig,
    pub constraints: ConstraintConfig,
    pub controls: ControlConfig,
    /// Required when `problem` is `custom`.
    pub custom: Option<CustomProblem>,
    /// Boundary sides held at void during the evolution.
    pub void_sides: Vec<Side>,
    pub initial: Option<InitialDesign>,
}

impl OptimizationConfig {
    /// Benchmark preset with side-dependent layer counts.
    pub fn benchmark(problem: ProblemKind, side: Side) -> OptimizationConfig {
        let mut config = OptimizationConfig {
            problem,
            build_side: Some(side),
            ..OptimizationConfig::default()
        };
        match problem {
            ProblemKind::Mbb => {
                // Layer thickness 2 mm across the 50 mm height, 3 mm across
                // the 150 mm width.
                config.constraints.thermal_layers = match side {
                    Side::U | Side::D => 25,
                    Side::L | Side::R => 50,
                };
                config.constraints.mechanical_layers = config.constraints.thermal_layers;
            }
            ProblemKind::Cantilever => {
                config.constraints.thermal_layers = 25;
                config.constraints.mechanical_layers = 50;
                config.constraints.distortion_enabled = true;
            }
            ProblemKind::Heatsink => {
                config.constraints.thermal_layers = 50;
                config.constraints.mechanical_layers = 50;
            }
            ProblemKind::Custom => {}
        }
        config
    }

    /// The geometry in effect: explicit, or the problem preset.
    pub fn resolved_geometry(&self) -> Geometry {
        if let Some(g) = &self.geometry {
            return g.clone();
        }
        match self.problem {
            ProblemKind::Mbb => Geometry {
                width: 150.0,
                height: 50.0,
                nx: 150,
                ny: 50,
            },
            ProblemKind::Cantilever => Geometry {
                width: 100.0,
                height: 50.0,
                nx: 100,
                ny: 50,
            },
            ProblemKind::Heatsink | ProblemKind::Custom => Geometry {
                width: 50.0,
                height: 50.0,
                nx: 50,
                ny: 50,
            },
        }
    }

    /// The base-plate side in effect.
    pub fn resolved_side(&self) -> Side {
        self.build_side.unwrap_or(Side::D)
    }

    /// Checks every range invariant and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems: Vec<String> = Vec::new();
        let g = self.resolved_geometry();
        if !(g.width > 0.0) || !(g.height > 0.0) {
            problems.push(format!(
                "geometry extents must be positive (width {}, height {})",
                g.width, g.height
            ));
        }
        if g.nx == 0 || g.ny == 0 {
            problems.push("geometry needs at least one element per direction".into());
        }
        let m = &self.material;
        if !(m.young > 0.0) {
            problems.push(format!("young must be positive, got {}", m.young));
        }
        if !(0.0..0.5).contains(&m.poisson) {
            problems.push(format!("poisson must be in [0, 0.5), got {}", m.poisson));
        }
        if !(m.conductivity > 0.0) {
            problems.push(format!("conductivity must be positive, got {}", m.conductivity));
        }
        let w = &self.weights;
        if !(0.0..=1.0).contains(&w.alpha) {
            problems.push(format!("alpha must be in [0, 1], got {}", w.alpha));
        }
        if w.beta < 0.0 {
            problems.push(format!("beta must be >= 0, got {}", w.beta));
        }
        if w.gamma < 0.0 {
            problems.push(format!("gamma must be >= 0, got {}", w.gamma));
        }
        if !(w.mobility > 0.0) {
            problems.push(format!("mobility must be positive, got {}", w.mobility));
        }
        if !(w.regularization > 0.0) {
            problems.push(format!("regularization must be positive, got {}", w.regularization));
        }
        if !(w.dt > 0.0) {
            problems.push(format!("dt must be positive, got {}", w.dt));
        }
        if !(w.volume_max > 0.0 && w.volume_max <= 1.0) {
            problems.push(format!("volume_max must be in (0, 1], got {}", w.volume_max));
        }
        let c = &self.constraints;
        if !(c.diffusion > 0.0) {
            problems.push(format!("diffusion must be positive, got {}", c.diffusion));
        }
        if !(c.length_scale > 0.0) {
            problems.push(format!("length_scale must be positive, got {}", c.length_scale));
        }
        if !(0.0..=90.0).contains(&c.threshold_deg) {
            problems.push(format!("threshold_deg must be in [0, 90], got {}", c.threshold_deg));
        }
        if !(c.ramp_smoothing > 0.0) {
            problems.push(format!("ramp_smoothing must be positive, got {}", c.ramp_smoothing));
        }
        if c.pnorm < 2.0 {
            problems.push(format!("pnorm must be >= 2, got {}", c.pnorm));
        }
        let side = self.resolved_side();
        let along = match side {
            Side::U | Side::D => g.ny,
            Side::L | Side::R => g.nx,
        };
        for (label, layers, enabled) in [
            ("thermal_layers", c.thermal_layers, c.thermal_enabled),
            (
                "mechanical_layers",
                c.mechanical_layers,
                c.distortion_enabled,
            ),
        ] {
            if enabled && (layers == 0 || along % layers != 0) {
                problems.push(format!(
                    "{label} ({layers}) must evenly divide the {along} elements along the build direction"
                ));
            }
        }
        if c.thermal_enabled && !c.overhang_enabled {
            problems.push(
                "thermal_enabled requires overhang_enabled (the thermal loads live on the filtered interface)"
                    .into(),
            );
        }
        if !(c.flux >= 0.0) {
            problems.push(format!("flux must be >= 0, got {}", c.flux));
        }
        if !(c.interface_width > 0.0) {
            problems.push(format!("interface_width must be positive, got {}", c.interface_width));
        }
        if self.problem == ProblemKind::Custom {
            match &self.custom {
                None => problems.push("problem \"custom\" needs a custom section".into()),
                Some(cp) => {
                    let structural = cp.sink_sides.is_empty();
                    if structural && cp.clamp_sides.is_empty() && cp.roller_sides.is_empty() {
                        problems.push("custom structural problem needs a clamp or roller side".into());
                    }
                    for (_, comp) in &cp.roller_sides {
                        if *comp > 1 {
                            problems.push(format!(
                                "roller component must be 0 (x) or 1 (y), got {comp}"
                            ));
                        }
                    }
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Serializes to pretty JSON.
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// Loads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<OptimizationConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let config: OptimizationConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

/// Spread of the load patch realizing a drawn point load, in elements.
const LOAD_SPAN_ELEMENTS: usize = 3;

fn mbb_bc(mesh: &Mesh) -> ElasticBc {
    let mut bc = ElasticBc::default();
    // Symmetry plane: no axial motion through the left edge.
    bc.roller_side(mesh, Side::L, 0);
    // Roller under the outboard bottom corner.
    bc.fixed.push((mesh.node_at(mesh.nx, 0), false, true));
    // Downward load next to the symmetry plane, spread over a short span.
    bc.edge_loads.push(EdgeLoad {
        side: Side::U,
        from: 0.0,
        to: LOAD_SPAN_ELEMENTS as f64 * mesh.dx,
        traction: [0.0, -1.0],
    });
    bc
}

fn cantilever_bc(mesh: &Mesh) -> ElasticBc {
    let mut bc = ElasticBc::default();
    bc.clamp_side(mesh, Side::L);
    let mid = mesh.height / 2.0;
    let half = 0.5 * LOAD_SPAN_ELEMENTS as f64 * mesh.dy;
    bc.edge_loads.push(EdgeLoad {
        side: Side::R,
        from: mid - half,
        to: mid + half,
        traction: [0.0, -1.0],
    });
    bc
}

/// Assembles the runnable problem a configuration describes.
pub fn build_problem(config: &OptimizationConfig) -> Result<Problem> {
    config.validate()?;
    let g = config.resolved_geometry();
    let mesh = Mesh::grid(g.width, g.height, g.nx, g.ny)?;
    let side = config.resolved_side();
    let mat = &config.material;
    let c = &config.constraints;

    let objective = match config.problem {
        ProblemKind::Mbb => ObjectiveModel::Compliance(ComplianceModel::new(
            &mesh,
            mat.young,
            mat.poisson,
            mbb_bc(&mesh),
        )?),
        ProblemKind::Cantilever => ObjectiveModel::Compliance(ComplianceModel::new(
            &mesh,
            mat.young,
            mat.poisson,
            cantilever_bc(&mesh),
        )?),
        ProblemKind::Heatsink => {
            let sink = mesh.side_nodes(side);
            ObjectiveModel::ThermalCompliance(ConductionModel::new(
                &mesh,
                mat.conductivity,
                1.0,
                0.0,
                sink,
            )?)
        }
        ProblemKind::Custom => {
            let cp = config.custom.as_ref().expect("validated above");
            if cp.sink_sides.is_empty() {
                let mut bc = ElasticBc::default();
                for &s in &cp.clamp_sides {
                    bc.clamp_side(&mesh, s);
                }
                for &(s, comp) in &cp.roller_sides {
                    bc.roller_side(&mesh, s, comp);
                }
                for l in &cp.loads {
                    bc.edge_loads.push(EdgeLoad {
                        side: l.side,
                        from: l.from,
                        to: l.to,
                        traction: l.traction,
                    });
                }
                ObjectiveModel::Compliance(ComplianceModel::new(
                    &mesh,
                    mat.young,
                    mat.poisson,
                    bc,
                )?)
            } else {
                let mut sink = Vec::new();
                for &s in &cp.sink_sides {
                    sink.extend(mesh.side_nodes(s));
                }
                sink.sort_unstable();
                sink.dedup();
                ObjectiveModel::ThermalCompliance(ConductionModel::new(
                    &mesh,
                    mat.conductivity,
                    cp.heat_source,
                    0.0,
                    sink,
                )?)
            }
        }
    };

    let overhang = if c.overhang_enabled {
        Some(OverhangModel::new(
            &mesh,
            OverhangParams {
                diffusion: c.diffusion,
                length_scale: c.length_scale,
                threshold_angle: c.threshold_deg.to_radians(),
                ramp_smoothing: c.ramp_smoothing,
                build_dir: side.inward(),
            },
        )?)
    } else {
        None
    };
    let thermal = if c.thermal_enabled {
        let partition = LayerPartition::new(&mesh, c.thermal_layers, side)?;
        Some(ThermalBuildModel::new(
            &mesh,
            partition,
            ThermalBuildParams {
                conductivity: mat.conductivity,
                flux: c.flux,
                interface_width: c.interface_width,
            },
        )?)
    } else {
        None
    };
    let mechanical = if c.distortion_enabled {
        let partition = LayerPartition::new(&mesh, c.mechanical_layers, side)?;
        Some(MechanicalBuildModel::new(
            &mesh,
            partition,
            mat.young,
            mat.poisson,
            InherentStrainParams {
                strain: c.inherent_strain,
                pnorm: c.pnorm,
            },
        )?)
    } else {
        None
    };

    let weights = WeightParams {
        alpha: if c.distortion_enabled { config.weights.alpha } else { 0.0 },
        beta: if c.overhang_enabled { config.weights.beta } else { 0.0 },
        gamma: if c.thermal_enabled { config.weights.gamma } else { 0.0 },
        mobility: config.weights.mobility,
        regularization: config.weights.regularization,
        dt: config.weights.dt,
        volume_max: config.weights.volume_max,
    };
    let controls = LoopControls {
        max_iters: config.controls.max_iters,
        threads: config.controls.threads,
        ..LoopControls::default()
    };
    let initial = config.initial.unwrap_or(InitialDesign::Full);
    let initial_phi = initialize(&mesh, initial);
    Ok(Problem {
        mesh,
        objective,
        overhang,
        thermal,
        mechanical,
        weights,
        ersatz: ErsatzParams::default(),
        controls,
        void_sides: config.void_sides.clone(),
        initial_phi,
    })
}
