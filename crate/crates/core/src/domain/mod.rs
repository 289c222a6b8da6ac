//! Domain types shared by every other module.

pub mod distribution;
pub mod sampler;
pub mod student;
pub mod synthetic;
pub mod weights;
pub mod world;

pub use distribution::{
    cross_entropy, entropy, kl_divergence, total_variation, validate_distribution, TokenDistribution,
};
pub use sampler::Sampler;
pub use student::{log_softmax, softmax, StudentParams};
pub use synthetic::SyntheticWorld;
pub use weights::{WeightBounds, WeightVector};
pub use world::{ContextSpec, InputSpec, TaskSpec, TeacherBank, VocabularySpec, World, WorldPoint};
