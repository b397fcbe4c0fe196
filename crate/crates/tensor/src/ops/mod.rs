mod elementwise;
mod linalg;
mod movement;
mod norm;

pub use norm::BatchStats;
