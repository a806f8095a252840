//! Robust least-squares policy evaluation and iteration.
//!
//! The crate covers tabular robust MDPs with rectangular uncertainty sets,
//! exact robust dynamic programming, linear value-function approximation,
//! the online RLSPE(lambda) learner, robust least-squares policy iteration
//! and the environments used to exercise them.

pub mod dp;
pub mod envs;
pub mod error;
pub mod features;
pub mod learner;
pub mod linalg;
pub mod linear_fa;
pub mod policy_chain;
pub mod rlspi;
pub mod rmdp;
pub mod uncertainty;

pub use dp::{
    nonrobust_value, policy_iteration, robust_bellman_optimal, robust_bellman_policy,
    robust_policy_evaluation_exact, robust_td_lambda_apply, robust_value_iteration, PolicyIterationResult,
};
pub use error::{Error, Result};
pub use features::{FeatureMap, FeatureMatrix, Observation};
pub use learner::{
    learner_init, ExplicitSupport, GramSupport, LearnerState, NoUncertainty, StepSchedule, SupportOracle,
    TransitionSample,
};
pub use linear_fa::{
    approx_robust_td_apply, exact_projected_fixed_point, project, steady_state, verify_exploration_assumption,
    ContractionCheck, ExplorationCheck, FixedPointOptions, SteadyDistribution,
};
pub use policy_chain::PolicyChain;
pub use rlspi::{
    evaluate_policy_robust, greedy_policy, lspi_run, rlspi_run, IterationRecord, PolicyIterationConfig,
    UncertaintyBinding,
};
pub use rmdp::{Policy, RmdpDocument, TabularRmdp, TransitionKernel, ValueVector};
pub use uncertainty::{
    contraction_coefficient, model_set_distance, set_distance_rho, support_inf_gram, ContractionCoefficient,
    ContractionInputs, GramSign, Support, UncertaintySet,
};
