//! Typed scenario description shared by the parser, the serializer and the runner.

use crate::bounds::BoundKind;
use crate::coefficients::Models;
use crate::geometry::DomainSpec;
use crate::solver::{Facing, SimConfig};

/// What a scenario does when run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Simulate,
    Sweep,
    WaveTable,
    VerifyBounds,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Simulate => "simulate",
            Task::Sweep => "sweep",
            Task::WaveTable => "wave-table",
            Task::VerifyBounds => "verify-bounds",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Task::Simulate, Task::Sweep, Task::WaveTable, Task::VerifyBounds].into_iter().find(|t| t.name() == s)
    }

    pub(crate) fn needs_run(self) -> bool {
        matches!(self, Task::Simulate | Task::Sweep)
    }
}

/// Initial data recipe. Branch indices are zero-based.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialRecipe {
    Front { branch: usize, position: f64, facing: Facing },
    /// Inward front minus exponential floors, a time-increasing start.
    Emanation { branch: usize, position: f64, amp: f64, rate: f64 },
    Block { branch: usize, range: (f64, f64), level: f64, floor: f64 },
    Plateau { cuts: Vec<(usize, f64)>, level: f64, floor: f64 },
    Constant { level: f64 },
    /// The candidate of `kind` (on the bounds branch) sampled at `time`.
    Bound { kind: BoundKind, time: f64 },
}

impl InitialRecipe {
    pub fn kind_name(&self) -> &'static str {
        match self {
            InitialRecipe::Front { .. } => "front",
            InitialRecipe::Emanation { .. } => "emanation",
            InitialRecipe::Block { .. } => "block",
            InitialRecipe::Plateau { .. } => "plateau",
            InitialRecipe::Constant { .. } => "constant",
            InitialRecipe::Bound { .. } => "bound",
        }
    }

    pub(crate) fn branches(&self) -> Vec<usize> {
        match self {
            InitialRecipe::Front { branch, .. }
            | InitialRecipe::Emanation { branch, .. }
            | InitialRecipe::Block { branch, .. } => vec![*branch],
            InitialRecipe::Plateau { cuts, .. } => cuts.iter().map(|c| c.0).collect(),
            InitialRecipe::Constant { .. } | InitialRecipe::Bound { .. } => Vec::new(),
        }
    }
}

/// Diagnostics computed during and after a run.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticPlan {
    /// Write every k-th probe as a field file; 0 writes only the final field.
    pub snapshot_every: usize,
    pub speed_branches: Vec<usize>,
    pub speed_window: Option<(f64, f64)>,
    pub distance_branches: Vec<usize>,
    pub distance_facing: Facing,
    pub certify_eps: Vec<f64>,
    /// Probes before this time are left out of the certification.
    pub certify_from: f64,
    /// Track the smallest per-step change of every cell.
    pub monotone: bool,
    pub blocking_eps: Option<f64>,
    /// Compare the trajectory with the initial candidate bound.
    pub bound_ordering: bool,
}

impl Default for DiagnosticPlan {
    fn default() -> Self {
        Self {
            snapshot_every: 0,
            speed_branches: Vec::new(),
            speed_window: None,
            distance_branches: Vec::new(),
            distance_facing: Facing::Outward,
            certify_eps: Vec::new(),
            certify_from: 0.0,
            monotone: false,
            blocking_eps: None,
            bound_ordering: false,
        }
    }
}

/// Optional assertions; an absent entry is reported but never fails.
#[derive(Debug, Clone, PartialEq)]
pub struct Expectations {
    pub invariant_tol: f64,
    pub monotone_tol: Option<f64>,
    pub speed_rel_tol: Option<f64>,
    pub speed_r2_min: Option<f64>,
    pub distance_max: Option<f64>,
    /// Band widths within `2h + slack` of the profile widths.
    pub certify_slack: bool,
    /// Fitted shifts of the distance branches agree within `h / |c|`.
    pub shift_agreement: bool,
    pub ordering_tol: Option<f64>,
    pub sweep_monotone: bool,
    pub sweep_min_invaded: Option<usize>,
    pub sweep_stability_tol: Option<f64>,
    pub wave_speed_tol: Option<f64>,
    pub wave_zero_tol: Option<f64>,
    pub residuals: bool,
    pub weight: bool,
}

impl Default for Expectations {
    fn default() -> Self {
        Self {
            invariant_tol: 1e-12,
            monotone_tol: None,
            speed_rel_tol: None,
            speed_r2_min: None,
            distance_max: None,
            certify_slack: false,
            shift_agreement: false,
            ordering_tol: None,
            sweep_monotone: false,
            sweep_min_invaded: None,
            sweep_stability_tol: None,
            wave_speed_tol: None,
            wave_zero_tol: None,
            residuals: false,
            weight: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepParameter {
    /// Width of `branch` jumps from its base value to `ratio` times that over `neck`.
    ChamberRatio { branch: usize, neck: (f64, f64) },
    Theta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    /// Branch whose blocking outcome is reported.
    pub branch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WavePlan {
    pub thetas: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualMode {
    Auto,
    Differences,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundPlan {
    pub branch: usize,
    pub kinds: Vec<BoundKind>,
    pub delta_factor: f64,
    /// Axial sample count and time sample count.
    pub samples: (usize, usize),
    /// Length of the sampled time window inside the validity interval.
    pub span: f64,
    pub slab: Option<(f64, f64)>,
    pub anchor_time: f64,
    pub residual_mode: ResidualMode,
}

/// A fully validated scenario with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub task: Task,
    pub models: Models,
    pub domain: Option<DomainSpec>,
    pub h: Option<f64>,
    pub sim: Option<SimConfig>,
    pub initial: Option<InitialRecipe>,
    pub diagnostics: DiagnosticPlan,
    pub expect: Expectations,
    pub sweep: Option<SweepPlan>,
    pub waves: Option<WavePlan>,
    pub bounds: Option<BoundPlan>,
}
