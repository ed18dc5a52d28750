//! Energy-aware motion planning for uncrewed aerial systems.
//!
//! The planner couples a reduced-order motion/energy model with
//! constrained-zonotope state and input sets and a hybrid-zonotope map of
//! the environment, and solves the resulting multistage mixed-integer QP
//! with a structure-exploiting branch and bound.

pub mod export;
pub mod geomap;
pub mod lp;
pub mod miqp;
pub mod msqp;
pub mod planner;
pub mod scenario;
pub mod uasmodel;
pub mod zonoset;
