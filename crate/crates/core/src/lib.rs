//! Config-driven synthesis of robot manipulation episodes.
//!
//! A task document names robots, objects, randomization ranges, cameras and a
//! skill program. Each episode samples a scene, compiles the skills into
//! waypoints, plans and validates joint trajectories, renders camera frames and
//! stores the result. [`pipeline`] runs planning and rendering as separate
//! stages on worker pools.

pub mod assets;
pub mod config;
pub mod geometry;
pub mod kinematics;
pub mod randomize;
pub mod scene;
pub mod skills;
pub mod planner;
pub mod episode;
pub mod render;
pub mod store;
pub mod pipeline;
pub mod cluster;
