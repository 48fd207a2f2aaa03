//! Pipeline blocks: mappers, interactors and optimizer heads.
//!
//! Mappers turn feature columns into embeddings, interactors combine an
//! ordered set of embeddings into one tensor, and a head turns that tensor
//! into predictions plus the task loss. Each block type declares its own
//! tunable hyperparameters; [`crate::graph`] wires blocks together.

pub mod heads;
pub mod interactors;
pub mod mappers;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::space::{HpKind, HyperParamDecl};
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

pub use heads::{ctr_head, logloss, mse_loss, rating_head, Linear, RatingHeadType};
pub use interactors::{
    concatenate_interaction, crossnet_interaction, elementwise_interaction, fm_interaction,
    mlp_interaction, random_select_interaction, self_attention_interaction, ElementwiseMode,
    HeadParams, Interactor,
};
pub use mappers::{dense_feature_mapper, latent_factor_mapper, sparse_feature_mapper};

/// Ordered embeddings flowing into an interactor.
pub type EmbeddingSet = [Var];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BlockError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("schema: {0}")]
    Schema(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Mapper,
    Interactor,
    Head,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockType {
    LatentFactor,
    DenseFeature,
    SparseFeature,
    Mlp,
    Concatenate,
    Fm,
    CrossNet,
    SelfAttention,
    Elementwise,
    RandomSelect,
    Hyper,
    RatingHead,
    CtrHead,
}

impl BlockType {
    pub const ALL: [BlockType; 13] = [
        Self::LatentFactor,
        Self::DenseFeature,
        Self::SparseFeature,
        Self::Mlp,
        Self::Concatenate,
        Self::Fm,
        Self::CrossNet,
        Self::SelfAttention,
        Self::Elementwise,
        Self::RandomSelect,
        Self::Hyper,
        Self::RatingHead,
        Self::CtrHead,
    ];

    /// Interactors the hyper interactor can dispatch to, in choice order.
    pub const HYPER_CHOICES: [BlockType; 6] = [
        Self::Mlp,
        Self::Concatenate,
        Self::Fm,
        Self::CrossNet,
        Self::SelfAttention,
        Self::Elementwise,
    ];

    pub fn kind(self) -> BlockKind {
        match self {
            Self::LatentFactor | Self::DenseFeature | Self::SparseFeature => BlockKind::Mapper,
            Self::RatingHead | Self::CtrHead => BlockKind::Head,
            _ => BlockKind::Interactor,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::LatentFactor => "latent_factor",
            Self::DenseFeature => "dense_feature",
            Self::SparseFeature => "sparse_feature",
            Self::Mlp => "mlp",
            Self::Concatenate => "concatenate",
            Self::Fm => "fm",
            Self::CrossNet => "cross_net",
            Self::SelfAttention => "self_attention",
            Self::Elementwise => "elementwise",
            Self::RandomSelect => "random_select",
            Self::Hyper => "hyper",
            Self::RatingHead => "rating_head",
            Self::CtrHead => "ctr_head",
        }
    }

    /// Default hyperparameter declarations with block-local names.
    ///
    /// `n_inputs` is the number of embeddings wired into the block; only
    /// `random_select` depends on it.
    pub fn declarations(self, n_inputs: usize) -> Vec<HyperParamDecl> {
        match self {
            Self::Mlp => vec![
                HyperParamDecl::new("layers", HpKind::choice([1_i64, 2, 3])),
                HyperParamDecl::new("units", HpKind::choice([16_i64, 32, 64, 128, 256])),
            ],
            Self::CrossNet => vec![HyperParamDecl::new(
                "layers",
                HpKind::choice([1_i64, 2, 3, 4]),
            )],
            Self::SelfAttention => vec![
                HyperParamDecl::new("heads", HpKind::choice([1_i64, 2, 4])),
                HyperParamDecl::new("blocks", HpKind::choice([1_i64, 2, 3])),
            ],
            Self::Elementwise => vec![HyperParamDecl::new(
                "mode",
                HpKind::choice(ElementwiseMode::ALL.map(ElementwiseMode::name)),
            )],
            Self::RandomSelect => vec![HyperParamDecl::new(
                "index",
                HpKind::choice((0..n_inputs.max(1) as i64).collect::<Vec<_>>()),
            )],
            Self::Hyper => {
                let mut out = vec![HyperParamDecl::new(
                    "interactor_type",
                    HpKind::choice(Self::HYPER_CHOICES.map(BlockType::name)),
                )];
                for child in Self::HYPER_CHOICES {
                    for d in child.declarations(n_inputs) {
                        out.push(
                            HyperParamDecl::new(format!("{}/{}", child.name(), d.name), d.kind)
                                .when("interactor_type", child.name()),
                        );
                    }
                }
                out
            }
            Self::RatingHead => vec![HyperParamDecl::new(
                "head_type",
                HpKind::choice(["sum", "linear"]),
            )],
            _ => Vec::new(),
        }
    }
}

impl fmt::Display for BlockType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BlockType {
    type Err = BlockError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| BlockError::Config(format!("unknown block type `{s}`")))
    }
}

/// How a parameter is initialized at materialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Normal(0, 0.05²).
    Normal,
    Zeros,
}

/// Shape and initializer of one parameter, named relative to its block.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn weight(name: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init: Init::Normal,
        }
    }

    pub fn bias(name: impl Into<String>, width: usize) -> Self {
        Self {
            name: name.into(),
            shape: vec![1, width],
            init: Init::Zeros,
        }
    }
}

/// `x · w + b`, with `b` (shape `1 × n`) repeated over the batch.
pub fn affine(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
    let xw = tape.matmul(x, w)?;
    let rows = tape.value(x).rows();
    let bias = broadcast_rows(tape, b, rows)?;
    tape.add(xw, bias)
}

/// Repeats a `1 × n` row `rows` times via a product with a ones column.
pub(crate) fn broadcast_rows(tape: &mut Tape, row: Var, rows: usize) -> Result<Var, TensorError> {
    let ones = tape.constant(Tensor::filled(&[rows, 1], 1.0));
    tape.matmul(ones, row)
}

/// Repeats a `batch × 1` column `cols` times.
pub(crate) fn broadcast_cols(tape: &mut Tape, col: Var, cols: usize) -> Result<Var, TensorError> {
    let ones = tape.constant(Tensor::filled(&[1, cols], 1.0));
    tape.matmul(col, ones)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for t in BlockType::ALL {
            assert_eq!(t.name().parse::<BlockType>().unwrap(), t);
        }
        assert!("resnet".parse::<BlockType>().is_err());
    }

    #[test]
    fn hyper_declares_six_choices_with_conditional_children() {
        let decls = BlockType::Hyper.declarations(2);
        assert_eq!(decls[0].name, "interactor_type");
        match &decls[0].kind {
            HpKind::Choice(v) => assert_eq!(v.len(), 6),
            other => panic!("unexpected {other:?}"),
        }
        assert!(decls[1..].iter().all(|d| d.condition.is_some()));
        assert!(decls.iter().any(|d| d.name == "self_attention/heads"));
    }

    #[test]
    fn random_select_space_has_one_value_per_input() {
        let decls = BlockType::RandomSelect.declarations(3);
        assert_eq!(decls[0].kind, HpKind::choice([0_i64, 1, 2]));
    }
}
