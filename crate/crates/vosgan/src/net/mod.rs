//! Network architectures: sizing profiles, parameterized layers, the video
//! generator and the multi-headed discriminator family.

pub mod discriminator;
pub mod generator;
pub mod layers;
pub mod profile;

pub use discriminator::{ActionClassifier, Discriminator, DiscriminatorOutput, LinearProbe, Segmenter, SegmenterOutput};
pub use generator::{composite, Generator, GeneratorOutput};
pub use profile::{Act, ConvSpec, DiscriminatorPlan, GeneratorPlan, NetProfile, PlanItem, ResSpec};
