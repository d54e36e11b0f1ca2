//! Attraction ranges, the linear-law sweep and strategy comparison.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::input::{InputError, InputSchedule, TruncatedGaussianInput};
use crate::measure::{MeasureError, OpinionPartition};
use crate::simulate::{run, SimError, SimulationConfig, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("input mean {mean} lies outside the initial support [{lo}, {hi}]")]
    MeanOutsideSupport { mean: f64, lo: f64, hi: f64 },
    #[error("simulation stopped after {0} steps without converging")]
    NotConverged(usize),
    #[error("no initial opinion ends within {tol} of the input mean")]
    NoBasin { tol: f64 },
    #[error("only {kept} sweep points left after filtering ({filtered_out} removed); need at least 3")]
    InsufficientPoints { kept: usize, filtered_out: usize },
    #[error("sigma and r are collinear over the sweep; coefficients are not identifiable")]
    SingularDesign,
    #[error("invalid strategy setup: {0}")]
    InvalidStrategy(String),
    #[error("cannot start worker pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Input(#[from] InputError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttractionOptions {
    /// Final positions within `tol` of the input mean count as attracted.
    pub tol: f64,
    /// Extra runs that subdivide the cells just outside the basin.
    pub refine_rounds: usize,
    pub refine_factor: usize,
}

impl AttractionOptions {
    pub fn for_config(cfg: &SimulationConfig) -> Self {
        Self { tol: 10.0 * cfg.eps_cluster, refine_rounds: 0, refine_factor: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttractionRangeResult {
    pub lo: f64,
    pub hi: f64,
    pub length: f64,
    /// Initial mass of `[lo, hi]`.
    pub attracted_mass: f64,
    /// Position of the final cluster nearest the input mean.
    pub converged_center: f64,
    pub tol_used: f64,
    pub steps: usize,
    pub refine_rounds: usize,
    /// Width of the initial cells bounding the basin on each side.
    pub resolution: f64,
}

/// Indices of the outermost initial edges whose final position is within
/// `tol` of `mean`. Order preservation makes the attracted edges contiguous.
fn basin(traj: &Trajectory, mean: f64, tol: f64) -> Option<(usize, usize)> {
    let pos = &traj.final_edge_positions;
    let hit = |k: usize| (pos[k] - mean).abs() <= tol;
    let seed = (0..pos.len())
        .filter(|&k| hit(k))
        .min_by(|&a, &b| (pos[a] - mean).abs().total_cmp(&(pos[b] - mean).abs()))?;
    let mut lo = seed;
    while lo > 0 && hit(lo - 1) {
        lo -= 1;
    }
    let mut hi = seed;
    while hi + 1 < pos.len() && hit(hi + 1) {
        hi += 1;
    }
    Some((lo, hi))
}

/// The maximal interval of initial opinions that end at the input mean
/// under a constant input, resolved to one initial cell (or finer with
/// refinement rounds).
pub fn attraction_range(
    mu0: &OpinionPartition,
    u: &TruncatedGaussianInput,
    cfg: &SimulationConfig,
    opts: &AttractionOptions,
) -> Result<AttractionRangeResult, AnalysisError> {
    let (s_lo, s_hi) = mu0.support();
    if u.mean() < s_lo || u.mean() > s_hi {
        return Err(AnalysisError::MeanOutsideSupport { mean: u.mean(), lo: s_lo, hi: s_hi });
    }
    let sched = InputSchedule::Constant(*u);
    let mut grid = mu0.clone();
    let mut rounds = 0;
    loop {
        let traj = run(&grid, cfg, &sched)?;
        if !traj.converged() {
            return Err(AnalysisError::NotConverged(traj.steps));
        }
        let (k_lo, k_hi) = basin(&traj, u.mean(), opts.tol).ok_or(AnalysisError::NoBasin { tol: opts.tol })?;
        let edges = grid.edges();
        let n = grid.n_cells();
        if rounds == opts.refine_rounds {
            let (lo, hi) = (edges[k_lo], edges[k_hi]);
            let left_cell = if k_lo > 0 { edges[k_lo] - edges[k_lo - 1] } else { 0.0 };
            let right_cell = if k_hi < n { edges[k_hi + 1] - edges[k_hi] } else { 0.0 };
            let center = traj
                .clusters
                .nearest(u.mean())
                .map_or(f64::NAN, |c| c.position);
            return Ok(AttractionRangeResult {
                lo,
                hi,
                length: hi - lo,
                attracted_mass: mu0.window_moments(lo, hi)?.mass,
                converged_center: center,
                tol_used: opts.tol,
                steps: traj.steps,
                refine_rounds: rounds,
                resolution: left_cell.max(right_cell),
            });
        }
        let mut split = Vec::new();
        if k_lo > 0 {
            split.push(k_lo - 1);
        }
        if k_hi < n {
            split.push(k_hi);
        }
        grid = grid.subdivide(&split, opts.refine_factor).0;
        rounds += 1;
    }
}

/// One grid point of an attraction-range sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub sigma: f64,
    pub r: f64,
    pub range_length: f64,
    pub attracted_mass: f64,
    pub converged: bool,
}

/// Attraction range for every `(sigma, r)` pair with the input centred at
/// `mean`. Points run on a pool of `jobs` workers; the output keeps the grid
/// order.
pub fn run_sweep(
    mu0: &OpinionPartition,
    mean: f64,
    weight: f64,
    grid: &[(f64, f64)],
    configure: &(dyn Fn(f64) -> (SimulationConfig, AttractionOptions) + Sync),
    jobs: usize,
) -> Result<Vec<SweepPoint>, AnalysisError> {
    let one = |&(sigma, r): &(f64, f64)| -> Result<SweepPoint, AnalysisError> {
        let u = TruncatedGaussianInput::new(mean, sigma, weight)?;
        let (cfg, opts) = configure(r);
        match attraction_range(mu0, &u, &cfg, &opts) {
            Ok(res) => Ok(SweepPoint {
                sigma,
                r,
                range_length: res.length,
                attracted_mass: res.attracted_mass,
                converged: true,
            }),
            Err(AnalysisError::NotConverged(_)) | Err(AnalysisError::NoBasin { .. }) => Ok(SweepPoint {
                sigma,
                r,
                range_length: f64::NAN,
                attracted_mass: f64::NAN,
                converged: false,
            }),
            Err(e) => Err(e),
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| AnalysisError::ThreadPool(e.to_string()))?;
    pool.install(|| grid.par_iter().map(one).collect())
}

/// Least-squares fit of `range = a sigma + b r + c`. A variable that is
/// constant over the retained points gets no coefficient.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearFit {
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub c: f64,
    pub r_squared: f64,
    pub n_points: usize,
    pub filtered_out: usize,
    /// `(sigma, r)` ranges of the retained points.
    pub sigma_domain: (f64, f64),
    pub r_domain: (f64, f64),
    pub points: Vec<SweepPoint>,
}

/// Keep converged points with `range < 0.6 |supp mu0|` and fit them.
pub fn sweep_fit(points: &[SweepPoint], support_width: f64) -> Result<LinearFit, AnalysisError> {
    let kept: Vec<SweepPoint> = points
        .iter()
        .filter(|p| p.converged && p.range_length.is_finite() && p.range_length < 0.6 * support_width)
        .cloned()
        .collect();
    let filtered_out = points.len() - kept.len();
    if kept.len() < 3 {
        return Err(AnalysisError::InsufficientPoints { kept: kept.len(), filtered_out });
    }
    let n = kept.len() as f64;
    let mean = |f: &dyn Fn(&SweepPoint) -> f64| kept.iter().map(f).sum::<f64>() / n;
    let (ms, mr, my) = (mean(&|p| p.sigma), mean(&|p| p.r), mean(&|p| p.range_length));
    let spread = |f: &dyn Fn(&SweepPoint) -> f64, m: f64| kept.iter().map(|p| (f(p) - m).powi(2)).sum::<f64>();
    let sss = spread(&|p| p.sigma, ms);
    let srr = spread(&|p| p.r, mr);
    let syy = spread(&|p| p.range_length, my);
    let cross = |f: &dyn Fn(&SweepPoint) -> f64, mf: f64, g: &dyn Fn(&SweepPoint) -> f64, mg: f64| {
        kept.iter().map(|p| (f(p) - mf) * (g(p) - mg)).sum::<f64>()
    };
    let ssr = cross(&|p| p.sigma, ms, &|p| p.r, mr);
    let ssy = cross(&|p| p.sigma, ms, &|p| p.range_length, my);
    let sry = cross(&|p| p.r, mr, &|p| p.range_length, my);

    let scale = |s: f64, m: f64| s <= 1e-24 * n * (1.0 + m * m);
    let (a, b) = match (scale(sss, ms), scale(srr, mr)) {
        (true, true) => (None, None),
        (false, true) => (Some(ssy / sss), None),
        (true, false) => (None, Some(sry / srr)),
        (false, false) => {
            let det = sss * srr - ssr * ssr;
            if det.abs() <= 1e-12 * sss * srr {
                return Err(AnalysisError::SingularDesign);
            }
            (Some((ssy * srr - sry * ssr) / det), Some((sry * sss - ssy * ssr) / det))
        }
    };
    let c = my - a.unwrap_or(0.0) * ms - b.unwrap_or(0.0) * mr;
    let predict = |p: &SweepPoint| a.unwrap_or(0.0) * p.sigma + b.unwrap_or(0.0) * p.r + c;
    let ss_res: f64 = kept.iter().map(|p| (p.range_length - predict(p)).powi(2)).sum();
    let r_squared = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
    let domain = |f: &dyn Fn(&SweepPoint) -> f64| {
        kept.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    Ok(LinearFit {
        a,
        b,
        c,
        r_squared,
        n_points: kept.len(),
        filtered_out,
        sigma_domain: domain(&|p| p.sigma),
        r_domain: domain(&|p| p.r),
        points: kept,
    })
}

/// Population with nonnegative opinions up to 1: `mu([0, 1])`.
pub fn positive_mass(part: &OpinionPartition) -> f64 {
    part.window_moments(0.0, 1.0).map(|w| w.mass).unwrap_or(0.0)
}

/// Mass of `part` that has gathered at `center`: the closed window of
/// half-width `radius` around it.
pub fn attracted_mass(part: &OpinionPartition, center: f64, radius: f64) -> f64 {
    part.window_moments(center - radius, center + radius).map(|w| w.mass).unwrap_or(0.0)
}

#[derive(Debug, Clone)]
pub struct StrategyArm {
    pub name: &'static str,
    /// `mu_T([0, 1])`.
    pub objective: f64,
    /// Mass gathered at the final input mean.
    pub attracted: f64,
    pub final_input_mean: f64,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone)]
pub struct StrategyReport {
    pub direct: StrategyArm,
    pub distracting: StrategyArm,
    pub attract_radius: f64,
}

impl StrategyReport {
    /// Arm with the larger objective; `None` on a tie.
    pub fn winner(&self) -> Option<&'static str> {
        use std::cmp::Ordering::*;
        match self.distracting.objective.total_cmp(&self.direct.objective) {
            Greater => Some(self.distracting.name),
            Less => Some(self.direct.name),
            Equal => None,
        }
    }
}

/// Run both schedules to their common horizon and score them.
pub fn compare_strategies(
    mu0: &OpinionPartition,
    cfg: &SimulationConfig,
    direct: &InputSchedule,
    distracting: &InputSchedule,
    attract_radius: f64,
) -> Result<StrategyReport, AnalysisError> {
    let horizon = match (direct.horizon(), distracting.horizon()) {
        (Some(a), Some(b)) if a == b => a,
        (a, b) => {
            return Err(AnalysisError::InvalidStrategy(format!(
                "both schedules need the same finite horizon (got {a:?} and {b:?})"
            )))
        }
    };
    let width = mu0.support_width();
    for sched in [direct, distracting] {
        for u in sched.inputs_for_support(mu0.support()) {
            if !(u.sigma() < width / 12.0) {
                return Err(AnalysisError::InvalidStrategy(format!(
                    "sigma {} must be below |supp mu0|/12 = {}",
                    u.sigma(),
                    width / 12.0
                )));
            }
        }
    }
    let mut cfg = cfg.clone();
    cfg.max_steps = cfg.max_steps.max(horizon);
    let arm = |name: &'static str, sched: &InputSchedule| -> Result<StrategyArm, AnalysisError> {
        let trajectory = run(mu0, &cfg, sched)?;
        let last = trajectory.last();
        let final_input_mean = sched
            .schedule_at(horizon, last.support())?
            .map_or(f64::NAN, |u| u.mean());
        Ok(StrategyArm {
            name,
            objective: positive_mass(last),
            attracted: attracted_mass(last, final_input_mean, attract_radius),
            final_input_mean,
            trajectory,
        })
    };
    let (direct, distracting) = rayon::join(|| arm("direct", direct), || arm("distracting", distracting));
    Ok(StrategyReport { direct: direct?, distracting: distracting?, attract_radius })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(sigma: f64, r: f64, range_length: f64) -> SweepPoint {
        SweepPoint { sigma, r, range_length, attracted_mass: range_length / 2.0, converged: true }
    }

    #[test]
    fn exact_fit_on_collinear_points() {
        // range = 3 sigma + 2 r + 0.1
        let pts = [point(0.01, 0.1, 0.33), point(0.05, 0.1, 0.45), point(0.02, 0.3, 0.76)];
        let fit = sweep_fit(&pts, 2.0).unwrap();
        assert!((fit.a.unwrap() - 3.0).abs() < 1e-10);
        assert!((fit.b.unwrap() - 2.0).abs() < 1e-10);
        assert!((fit.c - 0.1).abs() < 1e-10);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_variable_fit_and_filter() {
        let mut pts: Vec<SweepPoint> = (1..=10).map(|i| point(0.01 * i as f64, 0.1, 0.2 + 5.0 * 0.01 * i as f64)).collect();
        pts.push(point(0.5, 0.1, 1.9));
        pts.push(SweepPoint { converged: false, ..point(0.6, 0.1, f64::NAN) });
        let fit = sweep_fit(&pts, 2.0).unwrap();
        assert_eq!(fit.n_points, 10);
        assert_eq!(fit.filtered_out, 2);
        assert!(fit.b.is_none());
        assert!((fit.a.unwrap() - 5.0).abs() < 1e-10);
        assert!((fit.c - 0.2).abs() < 1e-10);
    }

    #[test]
    fn fit_needs_three_points() {
        let pts = [point(0.01, 0.1, 0.3), point(0.02, 0.1, 0.4), point(0.03, 0.1, 1.5)];
        assert_eq!(
            sweep_fit(&pts, 2.0).unwrap_err(),
            AnalysisError::InsufficientPoints { kept: 2, filtered_out: 1 }
        );
    }

    #[test]
    fn diagonal_grid_is_singular() {
        let pts: Vec<SweepPoint> = (1..=5).map(|i| point(0.01 * i as f64, 0.03 * i as f64, 0.1 * i as f64)).collect();
        assert_eq!(sweep_fit(&pts, 2.0).unwrap_err(), AnalysisError::SingularDesign);
    }

    #[test]
    fn positive_mass_examples() {
        let u = OpinionPartition::from_uniform(-1.0, 1.0, 1.0, 100).unwrap();
        assert!((positive_mass(&u) - 0.5).abs() < 1e-14);
        assert_eq!(positive_mass(&OpinionPartition::from_atoms(&[(0.2, 1.0)]).unwrap()), 1.0);
        let two = OpinionPartition::from_atoms(&[(-0.5, 0.3), (0.2, 0.7)]).unwrap();
        assert_eq!(positive_mass(&two), 0.7);
    }

    #[test]
    fn consensus_basin_is_everything() {
        let mu0 = OpinionPartition::from_uniform(-0.4, 0.4, 1.0, 200).unwrap();
        let u = TruncatedGaussianInput::new(0.0, 0.05, 1.0).unwrap();
        let cfg = SimulationConfig::new(0.5, &mu0);
        let res = attraction_range(&mu0, &u, &cfg, &AttractionOptions::for_config(&cfg)).unwrap();
        assert_eq!((res.lo, res.hi), (-0.4, 0.4));
        assert_eq!(res.attracted_mass, mu0.total_mass());
        assert!(res.converged_center.abs() <= res.tol_used);
    }

    #[test]
    fn mean_outside_support_is_rejected() {
        let mu0 = OpinionPartition::from_uniform(-0.4, 0.4, 1.0, 64).unwrap();
        let u = TruncatedGaussianInput::new(0.9, 0.05, 1.0).unwrap();
        let cfg = SimulationConfig::new(0.5, &mu0);
        assert!(matches!(
            attraction_range(&mu0, &u, &cfg, &AttractionOptions::for_config(&cfg)),
            Err(AnalysisError::MeanOutsideSupport { .. })
        ));
    }

    #[test]
    fn identical_arms_tie() {
        let mu0 = OpinionPartition::from_uniform(-1.0, 1.0, 1.0, 200).unwrap();
        let cfg = SimulationConfig::new(0.1, &mu0);
        let s = InputSchedule::direct(0.2, 0.1, 1.0, 5).unwrap();
        let rep = compare_strategies(&mu0, &cfg, &s, &s, 0.05).unwrap();
        assert_eq!(rep.direct.objective, rep.distracting.objective);
        assert_eq!(rep.winner(), None);
        let wide = InputSchedule::direct(0.2, 0.3, 1.0, 5).unwrap();
        assert!(compare_strategies(&mu0, &cfg, &wide, &wide, 0.05).is_err());
        let other = InputSchedule::direct(0.2, 0.1, 1.0, 6).unwrap();
        assert!(compare_strategies(&mu0, &cfg, &s, &other, 0.05).is_err());
    }
}
