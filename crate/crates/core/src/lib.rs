//! Learning manipulation skills from demonstrations and planning multi-step
//! tasks over a symbolic action graph with cross-entropy trajectory search.

pub mod assembly;
pub mod cem;
pub mod demos;
pub mod density;
pub mod dmp;
pub mod features;
pub mod pddl;
pub mod sim;
pub mod task;
pub mod treeplan;
pub mod pipeline;
