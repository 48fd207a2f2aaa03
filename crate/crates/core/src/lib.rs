pub mod blocks;
pub mod data;
pub mod experiment;
pub mod gp;
pub mod gradcheck;
pub mod graph;
pub mod hash;
pub mod optim;
pub mod params;
pub mod recipes;
pub mod space;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod trainer;
pub mod tuners;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/gradients.md")]
    struct Gradients;
    #[doc = include_str!("../../../book/src/blocks.md")]
    struct Blocks;
    #[doc = include_str!("../../../book/src/search-space.md")]
    struct SearchSpace;
    #[doc = include_str!("../../../book/src/tuners.md")]
    struct Tuners;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/experiments.md")]
    struct Experiments;
}
