//! The confidence-window flow map and the push-forward of a partition.
//!
//! Each opinion `x` moves to the average of population plus input over the
//! closed window `[x - r, x + r]`. The partition is pushed forward by moving
//! every cell edge through the map and carrying cell masses over unchanged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::input::TruncatedGaussianInput;
use crate::measure::{MomentTable, OpinionPartition, WindowMoments};

/// Window mass below this fraction of the total mass is treated as empty.
pub const DEN_REL_TOL: f64 = 1e-15;
/// Mapped edges closer than this fraction of the initial support width fuse.
pub const MERGE_REL_TOL: f64 = 1e-12;

const PARALLEL_EDGES: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("confidence bound must be positive and finite (got {0})")]
    InvalidRadius(f64),
    #[error("window around {x} holds mass {mass}, below the threshold {threshold}")]
    DegenerateWindow { x: f64, mass: f64, threshold: f64 },
    #[error("mapped edge {edge} moved below its predecessor by {drop}")]
    MonotonicityViolation { edge: usize, drop: f64 },
    #[error("support has zero width")]
    DegenerateSupport,
    #[error("need at least two samples")]
    TooFewSamples,
}

/// Everything needed to evaluate one step of the flow map.
#[derive(Debug, Clone)]
pub struct FlowContext<'a> {
    table: MomentTable<'a>,
    input: Option<TruncatedGaussianInput>,
    r: f64,
    eps_den: f64,
    eps_merge: f64,
    atomize_width: Option<f64>,
}

impl<'a> FlowContext<'a> {
    pub fn new(part: &'a OpinionPartition, input: Option<TruncatedGaussianInput>, r: f64) -> Result<Self, FlowError> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(FlowError::InvalidRadius(r));
        }
        Ok(Self {
            table: MomentTable::new(part),
            input,
            r,
            eps_den: DEN_REL_TOL * part.total_mass(),
            eps_merge: MERGE_REL_TOL * part.support_width(),
            atomize_width: None,
        })
    }

    /// Absolute distance under which mapped edges are fused into one point.
    pub fn with_merge_tolerance(mut self, eps: f64) -> Self {
        self.eps_merge = eps;
        self
    }

    /// Cells stretched wider than `width` are split into two half-mass atoms
    /// at their mapped edges. Such a cell straddles a gap that is opening
    /// between two groups, and a uniform density across it no longer
    /// describes where its mass goes.
    pub fn with_atomize_width(mut self, width: Option<f64>) -> Self {
        self.atomize_width = width;
        self
    }

    pub fn partition(&self) -> &'a OpinionPartition {
        self.table.partition()
    }

    pub fn input(&self) -> Option<&TruncatedGaussianInput> {
        self.input.as_ref()
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn merge_tolerance(&self) -> f64 {
        self.eps_merge
    }

    /// Combined moments of population and input over `[x - r, x + r]`.
    pub fn window(&self, x: f64) -> WindowMoments {
        let (a, b) = (x - self.r, x + self.r);
        // a <= b always holds for finite x and r > 0
        let mu = self.table.window_moments(a, b).unwrap_or_default();
        match &self.input {
            Some(u) => mu + u.window_moments(a, b).unwrap_or_default(),
            None => mu,
        }
    }

    pub fn flow_map(&self, x: f64) -> Result<f64, FlowError> {
        let (a, b) = (x - self.r, x + self.r);
        let (mut mass, mut centered) = self.table.centered_window(x, a, b).unwrap_or_default();
        if let Some(u) = &self.input {
            let w = u.window_moments(a, b).unwrap_or_default();
            mass += w.mass;
            centered += (-x).mul_add(w.mass, w.moment);
        }
        if !(mass >= self.eps_den && mass > 0.0) {
            return Err(FlowError::DegenerateWindow { x, mass, threshold: self.eps_den });
        }
        Ok(x + centered / mass)
    }

    /// Images of all edges. Edges not touching a positive-mass cell are
    /// outside the support; they follow their nearest supported neighbour.
    pub fn map_edges(&self) -> Result<Vec<f64>, FlowError> {
        let part = self.partition();
        let masses = part.masses();
        let edges = part.edges();
        let n = part.n_cells();
        let supported = |i: usize| (i > 0 && masses[i - 1] > 0.0) || (i < n && masses[i] > 0.0);
        let eval = |i: usize| -> Result<Option<f64>, FlowError> {
            if supported(i) {
                self.flow_map(edges[i]).map(Some)
            } else {
                Ok(None)
            }
        };
        let images: Vec<Option<f64>> = if edges.len() >= PARALLEL_EDGES {
            (0..edges.len()).into_par_iter().map(eval).collect::<Result<_, _>>()?
        } else {
            (0..edges.len()).map(eval).collect::<Result<_, _>>()?
        };
        let mut out = Vec::with_capacity(images.len());
        let mut last = None;
        for img in &images {
            last = img.or(last);
            out.push(last);
        }
        // Leading unsupported edges take the first supported image.
        let first = images.iter().flatten().next().copied().ok_or(FlowError::DegenerateSupport)?;
        Ok(out.into_iter().map(|v| v.unwrap_or(first)).collect())
    }

    /// Push the partition forward by one step.
    pub fn push_forward(&self) -> Result<PushForward, FlowError> {
        let part = self.partition();
        let mapped = self.map_edges()?;

        for i in 1..mapped.len() {
            let drop = mapped[i - 1] - mapped[i];
            if drop > self.eps_merge {
                return Err(FlowError::MonotonicityViolation { edge: i, drop });
            }
        }

        // Fuse runs of numerically coincident edges at the run's midpoint.
        let mut snapped = mapped.clone();
        let mut fused = 0;
        let mut start = 0;
        while start < snapped.len() {
            let anchor = mapped[start];
            let mut end = start + 1;
            while end < mapped.len() && mapped[end] - anchor < self.eps_merge {
                end += 1;
            }
            if end - start > 1 {
                let mid = 0.5 * (mapped[start] + mapped[end - 1]);
                for v in &mut snapped[start..end] {
                    *v = mid;
                }
                fused += end - start - 1;
            }
            start = end;
        }

        let mut edges = Vec::with_capacity(snapped.len() + 8);
        let mut masses = Vec::with_capacity(part.n_cells() + 8);
        let mut edge_map = Vec::with_capacity(snapped.len());
        let mut atomized = 0;
        edge_map.push(0);
        edges.push(snapped[0]);
        for (i, &m) in part.masses().iter().enumerate() {
            let (a, b) = (snapped[i], snapped[i + 1]);
            let stretched = self.atomize_width.is_some_and(|w| b - a > w);
            if m > 0.0 && stretched {
                // [a,a] m/2, [a,b] empty, [b,b] m/2 -- halving is exact
                edges.extend([a, b, b]);
                masses.extend([0.5 * m, 0.0, 0.5 * m]);
                atomized += 1;
            } else {
                edges.push(b);
                masses.push(m);
            }
            edge_map.push(edges.len() - 1);
        }
        let partition = OpinionPartition::new(edges, masses)
            .expect("push-forward preserves partition invariants");
        Ok(PushForward { partition, mapped_edges: mapped, edge_map, fused, atomized })
    }
}

/// Result of one push-forward.
#[derive(Debug, Clone)]
pub struct PushForward {
    pub partition: OpinionPartition,
    /// Raw images of the old edges, before fusion.
    pub mapped_edges: Vec<f64>,
    /// Index in the new edge list of every old edge.
    pub edge_map: Vec<usize>,
    /// Number of edges absorbed into a neighbour.
    pub fused: usize,
    /// Number of stretched cells replaced by atoms.
    pub atomized: usize,
}

/// Empirical bi-Lipschitz bounds of the flow map on the support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiLipschitz {
    pub l_low: f64,
    pub l_high: f64,
    /// The support is no wider than `2r`, outside the regime where the map
    /// is guaranteed to be bi-Lipschitz.
    pub hypothesis_violated: bool,
}

impl BiLipschitz {
    /// Smallest `L >= 1` with `|y-x|/L <= |g(y)-g(x)| <= L|y-x|` on the sample.
    pub fn certificate(&self) -> Option<f64> {
        (self.l_low > 0.0).then(|| self.l_high.max(1.0 / self.l_low).max(1.0))
    }
}

/// Sample points of the support and report the extreme difference quotients
/// of the flow map over consecutive and random pairs.
pub fn bilipschitz_estimate(ctx: &FlowContext<'_>, n_samples: usize, rng_seed: u64) -> Result<BiLipschitz, FlowError> {
    if n_samples < 2 {
        return Err(FlowError::TooFewSamples);
    }
    let part = ctx.partition();
    let (lo, hi) = part.support();
    if hi <= lo {
        return Err(FlowError::DegenerateSupport);
    }
    // Support points: atoms and the interiors of positive-mass cells.
    let pieces: Vec<(f64, f64)> = part.cells().filter(|&(_, _, m)| m > 0.0).map(|(l, r, _)| (l, r)).collect();
    let total_width: f64 = pieces.iter().map(|(l, r)| r - l).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut xs = vec![lo, hi];
    while xs.len() < n_samples {
        let x = if total_width > 0.0 {
            let mut target = rng.random::<f64>() * total_width;
            let mut pick = lo;
            for &(l, r) in &pieces {
                if target <= r - l {
                    pick = l + target;
                    break;
                }
                target -= r - l;
            }
            pick
        } else {
            pieces[rng.random_range(0..pieces.len())].0
        };
        xs.push(x);
    }
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let gs = xs.iter().map(|&x| ctx.flow_map(x)).collect::<Result<Vec<_>, _>>()?;

    let mut pairs: Vec<(usize, usize)> = (1..xs.len()).map(|i| (i - 1, i)).collect();
    for _ in 0..xs.len() {
        let i = rng.random_range(0..xs.len());
        let j = rng.random_range(0..xs.len());
        if i != j {
            pairs.push((i.min(j), i.max(j)));
        }
    }
    let (mut l_low, mut l_high) = (f64::INFINITY, 0.0f64);
    for (i, j) in pairs {
        let ratio = (gs[j] - gs[i]) / (xs[j] - xs[i]);
        l_low = l_low.min(ratio);
        l_high = l_high.max(ratio);
    }
    Ok(BiLipschitz { l_low: l_low.max(0.0), l_high, hypothesis_violated: hi - lo <= 2.0 * ctx.r })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(n: usize) -> OpinionPartition {
        OpinionPartition::from_uniform(-1.0, 1.0, 1.0, n).unwrap()
    }

    #[test]
    fn flow_map_on_uniform() {
        let p = uniform(400);
        let ctx = FlowContext::new(&p, None, 0.1).unwrap();
        assert!(ctx.flow_map(0.0).unwrap().abs() < 1e-14);
        assert!((ctx.flow_map(-1.0).unwrap() + 0.95).abs() < 1e-13);
        assert!((ctx.flow_map(-0.95).unwrap() + 0.925).abs() < 1e-13);

        let wide = FlowContext::new(&p, None, 2.0).unwrap();
        for x in [-1.0, -0.3, 0.7, 1.0] {
            assert!(wide.flow_map(x).unwrap().abs() < 1e-14);
        }
    }

    #[test]
    fn flow_map_off_support_is_degenerate() {
        let p = uniform(40);
        let ctx = FlowContext::new(&p, None, 0.1).unwrap();
        assert!(matches!(ctx.flow_map(3.0), Err(FlowError::DegenerateWindow { .. })));
        assert!(matches!(FlowContext::new(&p, None, 0.0), Err(FlowError::InvalidRadius(_))));
    }

    #[test]
    fn global_mean_collapse() {
        let p = uniform(400);
        let out = FlowContext::new(&p, None, 2.0).unwrap().push_forward().unwrap();
        let q = out.partition;
        assert_eq!(q.support_width(), 0.0);
        assert!(q.support().0.abs() < 1e-14);
        assert_eq!(q.total_mass().to_bits(), p.total_mass().to_bits());
        assert!(q.density_bounds().is_err());
    }

    #[test]
    fn one_step_support() {
        let p = uniform(400);
        let q = FlowContext::new(&p, None, 0.1).unwrap().push_forward().unwrap().partition;
        let (lo, hi) = q.support();
        assert!((lo + 0.95).abs() < 1e-13 && (hi - 0.95).abs() < 1e-13);
        assert_eq!(q.total_mass().to_bits(), p.total_mass().to_bits());
        assert_eq!(q.masses(), p.masses());
    }

    #[test]
    fn input_pulls_toward_its_mean() {
        let p = uniform(400);
        let u = TruncatedGaussianInput::new(0.2, 0.1, 1.0).unwrap();
        let ctx = FlowContext::new(&p, Some(u), 0.1).unwrap();
        let g = ctx.flow_map(0.15).unwrap();
        assert!(g > 0.15 && g < 0.25);
        let g = ctx.flow_map(0.25).unwrap();
        assert!(g < 0.25 && g > 0.15);
    }

    #[test]
    fn atomization_splits_stretched_cells() {
        // two blocks with a thin bridge: the bridge cell is stretched apart
        let p = OpinionPartition::new(vec![-0.5, -0.4, 0.4, 0.5], vec![0.45, 0.1, 0.45]).unwrap();
        let ctx = FlowContext::new(&p, None, 0.1).unwrap().with_atomize_width(Some(0.5));
        let out = ctx.push_forward().unwrap();
        assert_eq!(out.atomized, 1);
        let q = &out.partition;
        assert_eq!(q.n_cells(), 5);
        assert_eq!(q.masses(), &[0.45, 0.05, 0.0, 0.05, 0.45]);
        assert_eq!(q.total_mass().to_bits(), p.total_mass().to_bits());
        assert_eq!(out.edge_map, vec![0, 1, 4, 5]);
        for (i, &j) in out.edge_map.iter().enumerate() {
            assert_eq!(out.mapped_edges[i], q.edges()[j]);
        }
    }

    #[test]
    fn unsupported_edges_follow_neighbours() {
        let p = OpinionPartition::new(vec![-3.0, -1.0, 1.0, 4.0], vec![0.0, 1.0, 0.0]).unwrap();
        let ctx = FlowContext::new(&p, None, 0.1).unwrap();
        let g = ctx.map_edges().unwrap();
        assert_eq!(g[0], g[1]);
        assert_eq!(g[2], g[3]);
    }

    #[test]
    fn bilipschitz_regimes() {
        let p = uniform(400);
        let ctx = FlowContext::new(&p, None, 0.1).unwrap();
        let bl = bilipschitz_estimate(&ctx, 200, 7).unwrap();
        assert!(!bl.hypothesis_violated);
        assert!(bl.l_low > 0.0 && bl.l_high < 2.0);
        assert!(bl.certificate().unwrap() >= 1.0);

        let wide = FlowContext::new(&p, None, 2.0).unwrap();
        let bl = bilipschitz_estimate(&wide, 50, 7).unwrap();
        assert!(bl.hypothesis_violated);
        assert!(bl.l_low.abs() < 1e-12);

        // Interior points never see the boundary: averaging is a translation.
        let interior = OpinionPartition::from_uniform(-0.3, 0.3, 1.0, 600).unwrap();
        let ctx = FlowContext::new(&interior, None, 0.05).unwrap();
        for (x, y) in [(-0.2, -0.1), (0.0, 0.17), (-0.24, 0.24)] {
            let ratio = (ctx.flow_map(y).unwrap() - ctx.flow_map(x).unwrap()) / (y - x);
            assert!((ratio - 1.0).abs() < 1e-9);
        }
        assert!(matches!(bilipschitz_estimate(&ctx, 1, 0), Err(FlowError::TooFewSamples)));
    }
}
