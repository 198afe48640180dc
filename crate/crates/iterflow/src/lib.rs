//! iterflow: a bounded-workspace iterative research runtime and the
//! efficiency-weighted training-corpus pipeline built on top of it.
//!
//! The runtime executes research episodes as a Markov decision loop whose
//! state is reconstructed every round from the question, a policy-written
//! report, and the last tool interaction — so context stays constant no
//! matter how deep the episode goes. Trajectories are then decomposed into
//! per-round training samples with geometrically discounted rewards,
//! group-normalized advantages, and adaptive downsampling to a
//! data-parallel multiple.

pub mod codec;
pub mod config;
pub mod eapo;
pub mod mdp;
pub mod metrics;
pub mod orchestrator;
pub mod policy;
pub mod store;
pub mod template;
pub mod tools;

pub use mdp::{
    initial_state, mono_append, transition, Action, Decision, Question, Report, Termination,
    ToolResponse, ToolStatus, Trajectory, Workspace,
};
pub use template::{default_template, render_workspace, PromptTemplate};
