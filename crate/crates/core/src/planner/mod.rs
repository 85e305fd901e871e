pub mod bnb;
pub mod nlp;
pub mod policy;
pub mod problem;

pub use bnb::{branch_and_bound, BnbOptions, BnbResult, BnbStatus, Clock, IntegerStructure, NoClock};
pub use nlp::{augmented_lagrangian, ConstrainedProblem, NlpOptions, NlpResult, NlpStatus};
pub use policy::{
    fallback_plan, perfect_info_tree, plan, postprocess_curtailment, scenario_tree, solve_continuous, Mode, Planner, PlannerConfig, PlannerMemory,
    PlannerSolution, ScenarioPlan, SolveStatus,
};
pub use problem::{LookaheadProblem, ProblemOptions, ProblemStructure, Variable};
