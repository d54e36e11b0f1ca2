//! Finite-agent (Lagrangian) bounded-confidence model, used to cross-check
//! the measure-valued engine.
//!
//! Agents are placed deterministically at mass quantiles of the initial
//! measure and update synchronously. The input enters through the same
//! closed-form window moments as in the measure engine, so the two engines
//! differ only in how the population is discretised.

use thiserror::Error;

use crate::input::{InputError, InputSchedule, TruncatedGaussianInput};
use crate::measure::{extract_clusters, ClusterSet, OpinionPartition};
use crate::numeric::DoubleDouble;

/// Displacement below which the agent dynamics count as stationary.
pub const STATIONARY_TOL: f64 = 1e-12;
/// Relative slack on the confidence radius for neighbour tests.
pub const TIE_SLACK: f64 = 1e-12;
/// Agents closer than this are reported as one cluster.
pub const AGENT_CLUSTER_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("need at least one agent")]
    NoAgents,
    #[error("agents still moving after {0} steps")]
    NotConverged(usize),
    #[error(transparent)]
    Schedule(#[from] InputError),
}

/// Sorted agent opinions, each agent carrying the same mass.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentPopulation {
    opinions: Vec<f64>,
    mass: f64,
}

impl AgentPopulation {
    pub fn new(mut opinions: Vec<f64>, total_mass: f64) -> Result<Self, OracleError> {
        if opinions.is_empty() || !(total_mass > 0.0) {
            return Err(OracleError::NoAgents);
        }
        opinions.sort_by(f64::total_cmp);
        let mass = total_mass / opinions.len() as f64;
        Ok(Self { opinions, mass })
    }

    pub fn opinions(&self) -> &[f64] {
        &self.opinions
    }

    pub fn len(&self) -> usize {
        self.opinions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opinions.is_empty()
    }

    pub fn agent_mass(&self) -> f64 {
        self.mass
    }

    pub fn total_mass(&self) -> f64 {
        self.mass * self.opinions.len() as f64
    }

    pub fn support(&self) -> (f64, f64) {
        (self.opinions[0], *self.opinions.last().unwrap())
    }

    /// The population as an atomic measure (coincident agents merged).
    pub fn to_partition(&self) -> OpinionPartition {
        let mut atoms: Vec<(f64, f64)> = Vec::new();
        for &x in &self.opinions {
            match atoms.last_mut() {
                Some((p, m)) if *p == x => *m += self.mass,
                _ => atoms.push((x, self.mass)),
            }
        }
        OpinionPartition::from_atoms(&atoms).expect("sorted positive-mass atoms")
    }

    pub fn clusters(&self, gap_min: f64) -> ClusterSet {
        extract_clusters(&self.to_partition(), AGENT_CLUSTER_TOL, gap_min)
    }
}

/// Agent `i` of `n` (from 0) sits at the `(i + 1/2)/n` mass quantile of `mu0`.
pub fn sample_agents(mu0: &OpinionPartition, n: usize) -> Result<AgentPopulation, OracleError> {
    if n == 0 {
        return Err(OracleError::NoAgents);
    }
    // The upper half is located from the right end so that mirror-symmetric
    // measures give exactly mirrored agents.
    let opinions = (0..n)
        .map(|i| {
            if 2 * i < n {
                mu0.quantile((i as f64 + 0.5) / n as f64)
            } else {
                mu0.upper_quantile(((n - i) as f64 - 0.5) / n as f64)
            }
        })
        .collect();
    AgentPopulation::new(opinions, mu0.total_mass())
}

/// One synchronous update. Neighbour sums come from a sliding window over
/// the sorted opinions.
pub fn agent_step(pop: &AgentPopulation, input: Option<&TruncatedGaussianInput>, r: f64) -> AgentPopulation {
    let (next, _) = agent_step_checked(pop, input, r);
    next
}

/// Like [`agent_step`], also reporting whether the update kept the agents
/// in order before re-sorting.
fn agent_step_checked(pop: &AgentPopulation, input: Option<&TruncatedGaussianInput>, r: f64) -> (AgentPopulation, bool) {
    let x = &pop.opinions;
    let n = x.len();
    let mut prefix = Vec::with_capacity(n + 1);
    let mut acc = DoubleDouble::default();
    prefix.push(acc);
    for &v in x {
        acc = acc + DoubleDouble::new(v);
        prefix.push(acc);
    }
    // Quantile lattices often put neighbours exactly r apart; count those
    // as inside the closed window whichever way the subtraction rounds.
    let reach = r * (1.0 + TIE_SLACK);
    let (mut lo, mut hi) = (0, 0);
    let mut next = Vec::with_capacity(n);
    for i in 0..n {
        // differences rather than x[i] ± r keep mirrored populations mirrored
        while x[i] - x[lo] > reach {
            lo += 1;
        }
        if hi < i {
            hi = i;
        }
        while hi + 1 < n && x[hi + 1] - x[i] <= reach {
            hi += 1;
        }
        let count = (hi + 1 - lo) as f64;
        // sum of (x_j - x_i) over the neighbours
        let offset = prefix[hi + 1] - prefix[lo] - DoubleDouble::product(count, x[i]);
        // without input the common agent mass cancels
        let (centered, mass) = match input {
            None => (offset, DoubleDouble::new(count)),
            Some(u) => {
                let w = u.window_moments(x[i] - r, x[i] + r).unwrap_or_default();
                (
                    offset.scale(pop.mass) + DoubleDouble::new((-x[i]).mul_add(w.mass, w.moment)),
                    DoubleDouble::product(pop.mass, count) + DoubleDouble::new(w.mass),
                )
            }
        };
        // one rounding, so agents with the same exact target agree bitwise
        next.push((DoubleDouble::new(x[i]) + centered / mass).value());
    }
    let ordered = next.windows(2).all(|w| w[0] <= w[1]);
    if !ordered {
        next.sort_by(f64::total_cmp);
    }
    (AgentPopulation { opinions: next, mass: pop.mass }, ordered)
}

#[derive(Debug, Clone)]
pub struct AgentRun {
    pub population: AgentPopulation,
    pub steps: usize,
    pub clusters: ClusterSet,
    /// Steps whose update changed the agents' order.
    pub order_violations: usize,
}

/// Iterate [`agent_step`] until no agent moves by more than
/// [`STATIONARY_TOL`], or to the horizon of a phased schedule.
pub fn agent_run(
    pop: &AgentPopulation,
    sched: &InputSchedule,
    r: f64,
    max_steps: usize,
) -> Result<AgentRun, OracleError> {
    let limit = sched.horizon().map_or(max_steps, |h| h.min(max_steps));
    let mut current = pop.clone();
    let mut order_violations = 0;
    for t in 0..limit {
        let input = sched.schedule_at(t, current.support())?;
        let (next, ordered) = agent_step_checked(&current, input.as_ref(), r);
        if !ordered {
            order_violations += 1;
        }
        let moved = next
            .opinions
            .iter()
            .zip(&current.opinions)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        current = next;
        if sched.is_time_invariant() && moved < STATIONARY_TOL {
            return Ok(AgentRun { clusters: current.clusters(r), population: current, steps: t + 1, order_violations });
        }
    }
    if sched.is_time_invariant() {
        return Err(OracleError::NotConverged(limit));
    }
    Ok(AgentRun { clusters: current.clusters(r), population: current, steps: limit, order_violations })
}
