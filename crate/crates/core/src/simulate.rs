//! Step loop, trajectory recording and per-step invariant diagnostics.

use serde::Serialize;
use thiserror::Error;

use crate::flow::{bilipschitz_estimate, BiLipschitz, FlowContext, FlowError, MERGE_REL_TOL};
use crate::input::{InputError, InputSchedule, MeanRule};
use crate::measure::{extract_clusters, ClusterSet, OpinionPartition};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("step {step}: {source}")]
    Flow { step: usize, source: FlowError },
    #[error("step {step}: {source}")]
    Schedule { step: usize, source: InputError },
}

impl SimError {
    pub fn step(&self) -> Option<usize> {
        match self {
            SimError::Flow { step, .. } | SimError::Schedule { step, .. } => Some(*step),
            SimError::InvalidConfig(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationConfig {
    /// Confidence bound.
    pub r: f64,
    /// Initial grid resolution used when the caller builds the initial measure.
    pub n_cells: usize,
    pub max_steps: usize,
    /// Cluster width tolerance (absolute).
    pub eps_cluster: f64,
    /// Width under which a single cluster counts as consensus (absolute).
    pub eps_consensus: f64,
    /// Mapped edges closer than this fuse into one point (absolute).
    pub eps_merge: f64,
    /// Cells stretched beyond this width are replaced by two atoms.
    pub atomize_width: Option<f64>,
    pub record_every: usize,
    /// Run the per-step invariant checks (support shrink, range containment).
    pub check_invariants: bool,
    /// Pairs sampled per step for the bi-Lipschitz estimate; 0 disables it.
    pub bilipschitz_samples: usize,
    pub rng_seed: u64,
}

impl SimulationConfig {
    /// Defaults scaled to the support width of the initial measure.
    pub fn new(r: f64, mu0: &OpinionPartition) -> Self {
        let width = mu0.support_width().max(f64::MIN_POSITIVE);
        Self {
            r,
            n_cells: mu0.n_cells().max(16),
            max_steps: 2000,
            eps_cluster: 1e-6 * width,
            eps_consensus: 1e-9 * width,
            eps_merge: MERGE_REL_TOL * width,
            atomize_width: Some(0.5 * r),
            record_every: 1,
            check_invariants: true,
            bilipschitz_samples: 0,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidConfig(msg));
        if !(self.r > 0.0 && self.r.is_finite()) {
            return bad(format!("r must be positive, got {}", self.r));
        }
        if self.n_cells < 16 {
            return bad(format!("n_cells must be at least 16, got {}", self.n_cells));
        }
        if self.max_steps < 1 {
            return bad("max_steps must be at least 1".into());
        }
        for (name, v) in [
            ("eps_cluster", self.eps_cluster),
            ("eps_consensus", self.eps_consensus),
            ("eps_merge", self.eps_merge),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if let Some(w) = self.atomize_width {
            if !(w > 0.0) {
                return bad(format!("atomize_width must be positive, got {w}"));
            }
        }
        if self.record_every < 1 {
            return bad("record_every must be at least 1".into());
        }
        Ok(())
    }
}

/// What happened during the step from `mu_t` to `mu_{t+1}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub step: usize,
    /// Support hull of `mu_t`.
    pub support: (f64, f64),
    pub support_width: f64,
    pub density_bounds: Option<(f64, f64)>,
    pub has_atoms: bool,
    pub input_mean: Option<f64>,
    /// Input support inside the population support; `None` without input.
    pub assumption2: Option<bool>,
    /// Support wider than `2r`, no atoms, and population plus input cover
    /// one interval.
    pub theorem3_regime: bool,
    /// No mapped edge fell below its predecessor by more than the merge tolerance.
    pub monotone: bool,
    /// Every positive-width cell maps to a positive-width image before fusion.
    pub strictly_increasing: bool,
    pub fused: usize,
    pub atomized: usize,
    pub lemma4_applicable: bool,
    pub support_shrunk: Option<bool>,
    pub endpoint_error: Option<f64>,
    /// Every mapped edge stays within `[x - r, x + r]` and the hull of the
    /// combined support.
    pub range_contained: Option<bool>,
    pub bilipschitz: Option<BiLipschitz>,
    /// `|int eta d mu_{t+1} - int eta d mu_t|` for eta = z, z^2, sin z.
    pub weak_star: [f64; 3],
    pub max_displacement: f64,
    /// Total mass after the step equals the total before, bit for bit.
    pub mass_conserved: bool,
}

/// Output of a single step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub partition: OpinionPartition,
    pub diagnostics: StepDiagnostics,
    pub edge_map: Vec<usize>,
}

fn hull_union(a: (f64, f64), b: (f64, f64)) -> Option<(f64, f64)> {
    // closed intervals form one interval iff they touch or overlap
    (a.0 <= b.1 && b.0 <= a.1).then(|| (a.0.min(b.0), a.1.max(b.1)))
}

pub fn default_test_functions() -> [(&'static str, fn(f64) -> f64); 3] {
    [("z", |z| z), ("z^2", |z| z * z), ("sin z", f64::sin)]
}

fn weak_star_values(part: &OpinionPartition) -> [f64; 3] {
    default_test_functions().map(|(_, f)| part.integrate(f))
}

/// Advance `part` by one step at time `t`.
pub fn step(
    part: &OpinionPartition,
    cfg: &SimulationConfig,
    sched: &InputSchedule,
    t: usize,
) -> Result<StepOutcome, SimError> {
    let support = part.support();
    let support_width = support.1 - support.0;
    let input = sched.schedule_at(t, support).map_err(|source| SimError::Schedule { step: t, source })?;
    let flow_err = |source| SimError::Flow { step: t, source };
    let ctx = FlowContext::new(part, input, cfg.r)
        .map_err(flow_err)?
        .with_merge_tolerance(cfg.eps_merge)
        .with_atomize_width(cfg.atomize_width);
    let out = ctx.push_forward().map_err(flow_err)?;
    let next = out.partition;

    let assumption2 = input.map(|u| u.assumption2_check(part));
    let absolutely_continuous = part.is_absolutely_continuous();
    let combined = match input {
        Some(u) => hull_union(support, u.support()),
        None => Some(support),
    };
    let theorem3_regime = support_width > 2.0 * cfg.r && absolutely_continuous && combined.is_some();
    let lemma4_applicable = support_width > 2.0 * cfg.r && absolutely_continuous && assumption2.unwrap_or(true);

    let edges = part.edges();
    let mapped = &out.mapped_edges;
    let monotone = mapped.windows(2).all(|w| w[1] - w[0] >= -cfg.eps_merge);
    let strictly_increasing = (0..part.n_cells()).all(|i| edges[i + 1] == edges[i] || mapped[i + 1] > mapped[i]);

    let (support_shrunk, endpoint_error) = if lemma4_applicable {
        let (lo, hi) = next.support();
        let first = edges.iter().position(|&e| e == support.0).unwrap_or(0);
        let last = edges.iter().rposition(|&e| e == support.1).unwrap_or(edges.len() - 1);
        let err = (lo - mapped[first]).abs().max((hi - mapped[last]).abs());
        (Some(lo > support.0 && hi < support.1), Some(err))
    } else {
        (None, None)
    };

    let range_contained = if cfg.check_invariants {
        let hull = combined.unwrap_or(support);
        let slack = 1e-12 * (1.0 + support.0.abs().max(support.1.abs()));
        let masses = part.masses();
        let n = part.n_cells();
        Some((0..edges.len()).all(|i| {
            let supported = (i > 0 && masses[i - 1] > 0.0) || (i < n && masses[i] > 0.0);
            let x = edges[i];
            let lo = (x - cfg.r).max(hull.0);
            let hi = (x + cfg.r).min(hull.1);
            !supported || (mapped[i] >= lo - slack && mapped[i] <= hi + slack)
        }))
    } else {
        None
    };

    let bilipschitz = if cfg.bilipschitz_samples >= 2 && theorem3_regime {
        Some(
            bilipschitz_estimate(&ctx, cfg.bilipschitz_samples, cfg.rng_seed.wrapping_add(t as u64))
                .map_err(flow_err)?,
        )
    } else {
        None
    };

    let before = weak_star_values(part);
    let after = weak_star_values(&next);
    let weak_star = [0, 1, 2].map(|k| (after[k] - before[k]).abs());

    let new_edges = next.edges();
    let masses = part.masses();
    let max_displacement = (0..edges.len())
        .filter(|&i| (i > 0 && masses[i - 1] > 0.0) || (i < part.n_cells() && masses[i] > 0.0))
        .map(|i| (new_edges[out.edge_map[i]] - edges[i]).abs())
        .fold(0.0, f64::max);

    let diagnostics = StepDiagnostics {
        step: t,
        support,
        support_width,
        density_bounds: part.density_bounds().ok().map(|d| (d.min, d.max)),
        has_atoms: part.has_atoms(),
        input_mean: input.map(|u| u.mean()),
        assumption2,
        theorem3_regime,
        monotone,
        strictly_increasing,
        fused: out.fused,
        atomized: out.atomized,
        lemma4_applicable,
        support_shrunk,
        endpoint_error,
        range_contained,
        bilipschitz,
        weak_star,
        max_displacement,
        mass_conserved: next.total_mass().to_bits() == part.total_mass().to_bits(),
    };
    Ok(StepOutcome { partition: next, diagnostics, edge_map: out.edge_map })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Clustered, separated by more than `r`, and stationary.
    Converged,
    MaxSteps,
    /// A phased schedule ran to its last step.
    Horizon,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub step: usize,
    pub partition: OpinionPartition,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Recorded states; the first is `mu_0` and the last the final state.
    pub snapshots: Vec<Snapshot>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub termination: Termination,
    /// Number of steps taken.
    pub steps: usize,
    pub initial_edges: Vec<f64>,
    /// Final position of every initial edge.
    pub final_edge_positions: Vec<f64>,
    pub clusters: ClusterSet,
}

impl Trajectory {
    pub fn initial(&self) -> &OpinionPartition {
        &self.snapshots[0].partition
    }

    pub fn last(&self) -> &OpinionPartition {
        &self.snapshots.last().expect("trajectory holds at least mu_0").partition
    }

    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    /// A single cluster no wider than `eps_consensus`.
    pub fn is_consensus(&self, eps_consensus: f64) -> bool {
        self.last().support_width() <= eps_consensus
    }

    /// Largest weak-star delta over the default test functions at the last step.
    pub fn final_weak_star(&self) -> Option<f64> {
        self.diagnostics.last().map(|d| d.weak_star.iter().copied().fold(0.0, f64::max))
    }

    /// CSV rows `step,cell_left,cell_right,mass` for every recorded state.
    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::from("step,cell_left,cell_right,mass\n");
        for snap in &self.snapshots {
            for (l, r, m) in snap.partition.cells() {
                let _ = writeln!(out, "{},{l},{r},{m}", snap.step);
            }
        }
        out
    }
}

pub fn is_converged(part: &OpinionPartition, cfg: &SimulationConfig) -> bool {
    extract_clusters(part, cfg.eps_cluster, cfg.r).converged
}

/// Iterate `step` from `mu0` until convergence, the schedule horizon or
/// `max_steps`.
///
/// Early stopping only applies to time-invariant schedules; a phased
/// schedule always runs to its horizon (or `max_steps`). Convergence needs
/// the clustered state of [`is_converged`] and a step that moved no edge by
/// more than `eps_cluster`.
pub fn run(mu0: &OpinionPartition, cfg: &SimulationConfig, sched: &InputSchedule) -> Result<Trajectory, SimError> {
    cfg.validate()?;
    let limit = match sched.horizon() {
        Some(h) => h.min(cfg.max_steps),
        None => cfg.max_steps,
    };
    let mut current = mu0.clone();
    let mut snapshots = vec![Snapshot { step: 0, partition: mu0.clone() }];
    let mut diagnostics = Vec::new();
    let mut track: Vec<usize> = (0..mu0.edges().len()).collect();
    let mut termination = if sched.horizon().is_some_and(|h| h <= cfg.max_steps) {
        Termination::Horizon
    } else {
        Termination::MaxSteps
    };
    let mut t = 0;
    while t < limit {
        let out = step(&current, cfg, sched, t)?;
        for k in track.iter_mut() {
            *k = out.edge_map[*k];
        }
        let stationary = out.diagnostics.max_displacement <= cfg.eps_cluster;
        diagnostics.push(out.diagnostics);
        current = out.partition;
        t += 1;
        let done = sched.is_time_invariant() && stationary && is_converged(&current, cfg);
        if done || t == limit {
            if done {
                termination = Termination::Converged;
            }
            break;
        }
        if t % cfg.record_every == 0 {
            snapshots.push(Snapshot { step: t, partition: current.clone() });
        }
    }
    if snapshots.last().map(|s| s.step) != Some(t) {
        snapshots.push(Snapshot { step: t, partition: current.clone() });
    }
    let final_edge_positions = track.iter().map(|&k| current.edges()[k]).collect();
    Ok(Trajectory {
        clusters: extract_clusters(&current, cfg.eps_cluster, cfg.r),
        snapshots,
        diagnostics,
        termination,
        steps: t,
        initial_edges: mu0.edges().to_vec(),
        final_edge_positions,
    })
}

/// Sufficient condition for finite-time consensus: support narrower than
/// `2r`, initial measure and every input symmetric about the support
/// centre, and inputs supported inside the population.
pub fn consensus_sufficient(mu0: &OpinionPartition, sched: &InputSchedule, r: f64) -> bool {
    let (lo, hi) = mu0.support();
    let center = 0.5 * (lo + hi);
    let tol = 1e-12 * (hi - lo).max(1.0);
    if !(hi - lo < 2.0 * r) || !mu0.is_symmetric_about(center, tol) {
        return false;
    }
    if let InputSchedule::Phased(phases) = sched {
        if phases.iter().any(|p| matches!(p.mean, MeanRule::Tracking { .. })) {
            return false;
        }
    }
    sched
        .inputs_for_support((lo, hi))
        .iter()
        .all(|u| (u.mean() - center).abs() <= tol && u.assumption2_check(mu0))
}

/// Per-step weak-star deltas between consecutive recorded states.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakStarRow {
    pub step: usize,
    pub deltas: Vec<f64>,
}

pub fn weak_star_diagnostic(traj: &Trajectory, test_fns: &[&dyn Fn(f64) -> f64]) -> Vec<WeakStarRow> {
    traj.snapshots
        .windows(2)
        .map(|w| WeakStarRow {
            step: w[0].step,
            deltas: test_fns
                .iter()
                .map(|f| (w[1].partition.integrate(f) - w[0].partition.integrate(f)).abs())
                .collect(),
        })
        .collect()
}
