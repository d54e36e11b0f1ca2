//! Eulerian bounded-confidence (Hegselmann–Krause) opinion dynamics with
//! exogenous truncated-Gaussian inputs.
//!
//! The population is a finite measure on the opinion line, stored as a
//! piecewise-constant density over sorted cells (zero-width cells are
//! atoms). Each step evaluates the confidence-window flow map at every cell
//! edge and transports the cells, which conserves mass exactly.

pub mod analysis;
pub mod cli;
pub mod flow;
pub mod input;
pub mod measure;
pub mod numeric;
pub mod oracle;
pub mod simulate;

pub use analysis::{
    attracted_mass, attraction_range, compare_strategies, positive_mass, run_sweep, sweep_fit,
    AnalysisError, AttractionOptions, AttractionRangeResult, LinearFit, StrategyReport, SweepPoint,
};
pub use flow::{bilipschitz_estimate, BiLipschitz, FlowContext, FlowError, PushForward};
pub use input::{InputSchedule, MeanRule, Phase, TruncatedGaussianInput};
pub use measure::{
    extract_clusters, lemma1_bounds, Cluster, ClusterSet, MeasureError, MomentTable,
    OpinionPartition,
};
pub use oracle::{agent_run, agent_step, sample_agents, AgentPopulation, AgentRun};
pub use simulate::{
    consensus_sufficient, is_converged, run, step, weak_star_diagnostic, SimError,
    SimulationConfig, StepDiagnostics, Termination, Trajectory,
};
