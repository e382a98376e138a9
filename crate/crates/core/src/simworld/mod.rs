//! Procedural 2D multi-room worlds, trajectories and panoramic raycasting.

mod episode;
mod geometry;
pub mod io;
mod motion;
mod planner;
mod raycast;
mod vocab;
mod world;

pub use episode::{generate_episode, generate_episode_set, Episode, EpisodeConfig, SubInstruction};
pub use geometry::{wrap_angle, Pose, Rect, RelPose, Segment, Waypoint};
pub use motion::step_agent;
pub use planner::{
    geodesic_distance, line_of_sight, path_length, plan_path, snap_to_cell, DistanceField,
    GeodesicField,
};
pub use raycast::{cast_ray, raycast_fov, raycast_panorama, Observation};
pub use vocab::{class_name, Vocab, PAD, SEP, UNK};
pub use world::{class_embeddings, generate_world, Door, Grid, Object, World, WorldConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("world generation failed for seed {seed} after {attempts} attempts")]
    GenerationFailed { seed: u64, attempts: usize },
    #[error("invalid world: {0}")]
    InvalidWorld(String),
    #[error("invalid episode: {0}")]
    InvalidEpisode(String),
    #[error("pose ({x:.3}, {y:.3}) is not in free space")]
    PoseInObstacle { x: f64, y: f64 },
    #[error("goal ({:.3}, {:.3}) is unreachable from ({:.3}, {:.3})", to.0, to.1, from.0, from.1)]
    Unreachable { from: (f64, f64), to: (f64, f64) },
    #[error("malformed observation file at offset {offset}: {reason}")]
    Format { offset: usize, reason: String },
    #[error("io: {0}")]
    Io(String),
}
