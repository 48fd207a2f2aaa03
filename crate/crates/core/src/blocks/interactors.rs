//! Interactors: blocks that combine an ordered set of embeddings.
//!
//! | interactor     | output width | notes                                  |
//! |----------------|--------------|----------------------------------------|
//! | mlp            | `units`      | concat, then `layers` × (affine, ReLU) |
//! | concatenate    | `Σ dᵢ`       | wiring order preserved                 |
//! | fm             | 1            | `Σ_{i<j} ⟨vᵢ, vⱼ⟩`, equal widths       |
//! | cross_net      | `Σ dᵢ`       | `x₀ (wₗᵀ xₗ) + bₗ + xₗ` per layer      |
//! | self_attention | `n · d`      | multi-head, residual + ReLU per block  |
//! | elementwise    | `d`          | sum/average/multiply/max/min           |
//! | random_select  | `d_index`    | the index is a searched value          |

use super::{
    affine, broadcast_cols, broadcast_rows, BlockError, BlockType, EmbeddingSet, ParamSpec,
};
use crate::params::ParamStore;
use crate::space::Assignment;
use crate::tape::{Tape, Var};
#[cfg(test)]
use crate::tensor::Tensor;
use crate::tensor::TensorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseMode {
    Sum,
    Average,
    Multiply,
    Max,
    Min,
}

impl ElementwiseMode {
    pub const ALL: [ElementwiseMode; 5] = [
        Self::Sum,
        Self::Average,
        Self::Multiply,
        Self::Max,
        Self::Min,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sum => "sum",
            Self::Average => "average",
            Self::Multiply => "multiply",
            Self::Max => "max",
            Self::Min => "min",
        }
    }

    pub fn from_name(s: &str) -> Result<Self, BlockError> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| BlockError::Config(format!("unknown elementwise mode `{s}`")))
    }
}

/// Query/key/value projections of one attention head, each `d × d/heads`.
#[derive(Debug, Clone, Copy)]
pub struct HeadParams {
    pub query: Var,
    pub key: Var,
    pub value: Var,
}

/// An interactor with every hyperparameter bound.
#[derive(Debug, Clone, PartialEq)]
pub enum Interactor {
    Mlp { layers: usize, units: usize },
    Concatenate,
    Fm,
    CrossNet { layers: usize },
    SelfAttention { heads: usize, blocks: usize },
    Elementwise(ElementwiseMode),
    RandomSelect { index: usize },
}

fn positive(name: &str, v: i64) -> Result<usize, BlockError> {
    usize::try_from(v)
        .ok()
        .filter(|&v| v > 0)
        .ok_or_else(|| BlockError::Config(format!("`{name}` must be positive, got {v}")))
}

impl Interactor {
    /// Binds the interactor of type `ty` whose hyperparameters live under
    /// `prefix/` in `assignment`. The hyper interactor resolves to its
    /// chosen child.
    pub fn resolve(ty: BlockType, prefix: &str, a: &Assignment) -> Result<Self, BlockError> {
        let hp = |local: &str| format!("{prefix}/{local}");
        let int = |local: &str| -> Result<i64, BlockError> {
            a.int(&hp(local))
                .map_err(|e| BlockError::Config(e.to_string()))
        };
        Ok(match ty {
            BlockType::Mlp => Self::Mlp {
                layers: positive(&hp("layers"), int("layers")?)?,
                units: positive(&hp("units"), int("units")?)?,
            },
            BlockType::Concatenate => Self::Concatenate,
            BlockType::Fm => Self::Fm,
            BlockType::CrossNet => Self::CrossNet {
                layers: positive(&hp("layers"), int("layers")?)?,
            },
            BlockType::SelfAttention => Self::SelfAttention {
                heads: positive(&hp("heads"), int("heads")?)?,
                blocks: positive(&hp("blocks"), int("blocks")?)?,
            },
            BlockType::Elementwise => {
                let mode = a
                    .str(&hp("mode"))
                    .map_err(|e| BlockError::Config(e.to_string()))?;
                Self::Elementwise(ElementwiseMode::from_name(mode)?)
            }
            BlockType::RandomSelect => {
                let index = int("index")?;
                Self::RandomSelect {
                    index: usize::try_from(index)
                        .map_err(|_| BlockError::Config(format!("negative index {index}")))?,
                }
            }
            BlockType::Hyper => {
                let name = a
                    .str(&hp("interactor_type"))
                    .map_err(|e| BlockError::Config(e.to_string()))?;
                let child = BlockType::HYPER_CHOICES
                    .into_iter()
                    .find(|t| t.name() == name)
                    .ok_or_else(|| {
                        BlockError::Config(format!("`{name}` is not a hyper interactor choice"))
                    })?;
                Self::resolve(child, &hp(child.name()), a)?
            }
            other => {
                return Err(BlockError::Config(format!(
                    "`{other}` is not an interactor"
                )));
            }
        })
    }

    pub fn block_type(&self) -> BlockType {
        match self {
            Self::Mlp { .. } => BlockType::Mlp,
            Self::Concatenate => BlockType::Concatenate,
            Self::Fm => BlockType::Fm,
            Self::CrossNet { .. } => BlockType::CrossNet,
            Self::SelfAttention { .. } => BlockType::SelfAttention,
            Self::Elementwise(_) => BlockType::Elementwise,
            Self::RandomSelect { .. } => BlockType::RandomSelect,
        }
    }

    /// Output width for inputs of the given widths, checking every
    /// precondition that depends only on widths.
    pub fn output_dim(&self, dims: &[usize]) -> Result<usize, BlockError> {
        if dims.is_empty() {
            return Err(BlockError::Config(format!(
                "{} needs at least one input",
                self.block_type()
            )));
        }
        let total: usize = dims.iter().sum();
        Ok(match self {
            Self::Mlp { units, .. } => *units,
            Self::Concatenate | Self::CrossNet { .. } => total,
            Self::Fm => {
                equal_width("fm", dims)?;
                1
            }
            Self::Elementwise(_) => equal_width("elementwise", dims)?,
            Self::SelfAttention { heads, .. } => {
                let d = equal_width("self_attention", dims)?;
                if d % heads != 0 {
                    return Err(BlockError::Config(format!(
                        "self_attention: width {d} is not divisible by {heads} heads"
                    )));
                }
                dims.len() * d
            }
            Self::RandomSelect { index } => *dims.get(*index).ok_or_else(|| {
                BlockError::Config(format!(
                    "random_select index {index} out of range for {} inputs",
                    dims.len()
                ))
            })?,
        })
    }

    pub fn param_specs(&self, dims: &[usize]) -> Vec<ParamSpec> {
        let total: usize = dims.iter().sum();
        match self {
            Self::Mlp { layers, units } => (0..*layers)
                .flat_map(|l| {
                    let fan_in = if l == 0 { total } else { *units };
                    [
                        ParamSpec::weight(format!("layer{l}/kernel"), &[fan_in, *units]),
                        ParamSpec::bias(format!("layer{l}/bias"), *units),
                    ]
                })
                .collect(),
            Self::CrossNet { layers } => (0..*layers)
                .flat_map(|l| {
                    [
                        ParamSpec::weight(format!("layer{l}/weight"), &[total, 1]),
                        ParamSpec::bias(format!("layer{l}/bias"), total),
                    ]
                })
                .collect(),
            Self::SelfAttention { heads, blocks } => {
                let d = dims[0];
                let dh = d / heads;
                let mut out = Vec::new();
                for b in 0..*blocks {
                    for h in 0..*heads {
                        for role in ["query", "key", "value"] {
                            out.push(ParamSpec::weight(
                                format!("block{b}/head{h}/{role}"),
                                &[d, dh],
                            ));
                        }
                    }
                }
                out
            }
            _ => Vec::new(),
        }
    }

    /// Runs the interactor with parameters read from `store` under `prefix/`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        prefix: &str,
        inputs: &EmbeddingSet,
    ) -> Result<Var, BlockError> {
        let p = |tape: &mut Tape, local: String| tape.param(store, &format!("{prefix}/{local}"));
        match self {
            Self::Mlp { layers, .. } => {
                let mut ps = Vec::with_capacity(*layers);
                for l in 0..*layers {
                    ps.push((
                        p(tape, format!("layer{l}/kernel"))?,
                        p(tape, format!("layer{l}/bias"))?,
                    ));
                }
                mlp_interaction(tape, inputs, &ps)
            }
            Self::Concatenate => concatenate_interaction(tape, inputs),
            Self::Fm => fm_interaction(tape, inputs),
            Self::CrossNet { layers } => {
                let mut ps = Vec::with_capacity(*layers);
                for l in 0..*layers {
                    ps.push((
                        p(tape, format!("layer{l}/weight"))?,
                        p(tape, format!("layer{l}/bias"))?,
                    ));
                }
                crossnet_interaction(tape, inputs, &ps)
            }
            Self::SelfAttention { heads, blocks } => {
                let mut ps = Vec::with_capacity(*blocks);
                for b in 0..*blocks {
                    let mut hs = Vec::with_capacity(*heads);
                    for h in 0..*heads {
                        hs.push(HeadParams {
                            query: p(tape, format!("block{b}/head{h}/query"))?,
                            key: p(tape, format!("block{b}/head{h}/key"))?,
                            value: p(tape, format!("block{b}/head{h}/value"))?,
                        });
                    }
                    ps.push(hs);
                }
                self_attention_interaction(tape, inputs, &ps)
            }
            Self::Elementwise(mode) => elementwise_interaction(tape, inputs, *mode),
            Self::RandomSelect { index } => random_select_interaction(inputs, *index),
        }
    }
}

fn widths(tape: &Tape, inputs: &EmbeddingSet) -> Vec<usize> {
    inputs.iter().map(|&v| tape.value(v).cols()).collect()
}

fn equal_width(op: &str, dims: &[usize]) -> Result<usize, BlockError> {
    let d = dims[0];
    if dims.iter().any(|&x| x != d) {
        return Err(BlockError::Tensor(TensorError::DimensionMismatch {
            op: match op {
                "fm" => "fm_interaction",
                "elementwise" => "elementwise_interaction",
                _ => "self_attention_interaction",
            },
            left: vec![d],
            right: dims.to_vec(),
        }));
    }
    Ok(d)
}

fn nonempty(op: &str, inputs: &EmbeddingSet) -> Result<(), BlockError> {
    if inputs.is_empty() {
        return Err(BlockError::Config(format!("{op} needs at least one input")));
    }
    Ok(())
}

/// Concatenation followed by `layers.len()` affine + ReLU stages.
pub fn mlp_interaction(
    tape: &mut Tape,
    inputs: &EmbeddingSet,
    layers: &[(Var, Var)],
) -> Result<Var, BlockError> {
    nonempty("mlp", inputs)?;
    let mut x = tape.concat(inputs)?;
    for &(w, b) in layers {
        let z = affine(tape, x, w, b)?;
        x = tape.relu(z)?;
    }
    Ok(x)
}

pub fn concatenate_interaction(tape: &mut Tape, inputs: &EmbeddingSet) -> Result<Var, BlockError> {
    nonempty("concatenate", inputs)?;
    Ok(tape.concat(inputs)?)
}

/// Second-order factorization machine term `½ Σ_k [(Σᵢ vᵢₖ)² − Σᵢ vᵢₖ²]`.
pub fn fm_interaction(tape: &mut Tape, inputs: &EmbeddingSet) -> Result<Var, BlockError> {
    nonempty("fm", inputs)?;
    equal_width("fm", &widths(tape, inputs))?;
    let mut sum = inputs[0];
    let mut sq_sum = tape.mul(inputs[0], inputs[0])?;
    for &v in &inputs[1..] {
        sum = tape.add(sum, v)?;
        let sq = tape.mul(v, v)?;
        sq_sum = tape.add(sq_sum, sq)?;
    }
    let sum_sq = tape.mul(sum, sum)?;
    let diff = tape.sub(sum_sq, sq_sum)?;
    let total = tape.sum_last(diff)?;
    Ok(tape.scale(total, 0.5)?)
}

/// Cross layers over `x₀ = concat(inputs)`: `x_{l+1} = x₀ (x_l · w_l) + b_l + x_l`.
pub fn crossnet_interaction(
    tape: &mut Tape,
    inputs: &EmbeddingSet,
    layers: &[(Var, Var)],
) -> Result<Var, BlockError> {
    nonempty("cross_net", inputs)?;
    let x0 = tape.concat(inputs)?;
    let (rows, width) = (tape.value(x0).rows(), tape.value(x0).cols());
    let mut x = x0;
    for &(w, b) in layers {
        let s = tape.matmul(x, w)?;
        let s = broadcast_cols(tape, s, width)?;
        let cross = tape.mul(x0, s)?;
        let bias = broadcast_rows(tape, b, rows)?;
        let cross = tape.add(cross, bias)?;
        x = tape.add(cross, x)?;
    }
    Ok(x)
}

/// Multi-head self-attention over the fields, flattened to `batch × (n·d)`.
///
/// Each entry of `blocks` holds the heads of one attention block. Per head,
/// `softmax(Q Kᵀ / √(d/heads)) V` is computed for every sample; head outputs
/// are concatenated back to width `d`, the block input is added and ReLU
/// applied.
pub fn self_attention_interaction(
    tape: &mut Tape,
    inputs: &EmbeddingSet,
    blocks: &[Vec<HeadParams>],
) -> Result<Var, BlockError> {
    nonempty("self_attention", inputs)?;
    let d = equal_width("self_attention", &widths(tape, inputs))?;
    let n = inputs.len();
    let batch = tape.value(inputs[0]).rows();
    let stacked = tape.concat(inputs)?;
    // One row per (sample, field).
    let mut x = tape.reshape(stacked, &[batch * n, d])?;
    for heads in blocks {
        if heads.is_empty() || d % heads.len() != 0 {
            return Err(BlockError::Config(format!(
                "self_attention: width {d} is not divisible by {} heads",
                heads.len()
            )));
        }
        let dh = d / heads.len();
        let mut outs = Vec::with_capacity(heads.len());
        for h in heads {
            let q = tape.matmul(x, h.query)?;
            let k = tape.matmul(x, h.key)?;
            let v = tape.matmul(x, h.value)?;
            let q = tape.reshape(q, &[batch, n * dh])?;
            let k = tape.reshape(k, &[batch, n * dh])?;
            let v = tape.reshape(v, &[batch, n * dh])?;
            let scores = tape.row_matmul(q, k, (n, dh, n), true)?;
            let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
            let scores = tape.reshape(scores, &[batch * n, n])?;
            let attn = tape.softmax_last(scores)?;
            let attn = tape.reshape(attn, &[batch, n * n])?;
            let o = tape.row_matmul(attn, v, (n, n, dh), false)?;
            outs.push(tape.reshape(o, &[batch * n, dh])?);
        }
        let merged = tape.concat(&outs)?;
        let residual = tape.add(merged, x)?;
        x = tape.relu(residual)?;
    }
    Ok(tape.reshape(x, &[batch, n * d])?)
}

pub fn elementwise_interaction(
    tape: &mut Tape,
    inputs: &EmbeddingSet,
    mode: ElementwiseMode,
) -> Result<Var, BlockError> {
    nonempty("elementwise", inputs)?;
    equal_width("elementwise", &widths(tape, inputs))?;
    let mut acc = inputs[0];
    for &v in &inputs[1..] {
        acc = match mode {
            ElementwiseMode::Sum | ElementwiseMode::Average => tape.add(acc, v)?,
            ElementwiseMode::Multiply => tape.mul(acc, v)?,
            ElementwiseMode::Max => tape.max(acc, v)?,
            ElementwiseMode::Min => tape.min(acc, v)?,
        };
    }
    if mode == ElementwiseMode::Average && inputs.len() > 1 {
        acc = tape.scale(acc, 1.0 / inputs.len() as f64)?;
    }
    Ok(acc)
}

pub fn random_select_interaction(inputs: &EmbeddingSet, index: usize) -> Result<Var, BlockError> {
    inputs.get(index).copied().ok_or_else(|| {
        BlockError::Config(format!(
            "random_select index {index} out of range for {} inputs",
            inputs.len()
        ))
    })
}
