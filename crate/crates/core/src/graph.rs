//! Block graphs: validation, the hyperparameter space they induce, and
//! materialization of concrete models.
//!
//! A [`GraphSpec`] lists blocks in evaluation order. Mappers read feature
//! columns, interactors and heads read the outputs of earlier blocks, and
//! exactly one head ends the graph. Every block hyperparameter is exposed
//! under `"<block id>/<name>"`; `learning_rate` and `embedding_dim` are
//! global.

use std::collections::{HashMap, HashSet};
use std::fmt;

use indexmap::IndexMap;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blocks::{
    self, ctr_head, heads::linear_params, interactors::Interactor, mappers, rating_head,
    BlockError, BlockKind, BlockType, Init, Linear, ParamSpec, RatingHeadType,
};
use crate::data::{Batch, FeatureInfo, Task};
use crate::hash::rng_for;
use crate::params::ParamStore;
use crate::space::{Assignment, HpKind, HpValue, HyperParamDecl, HyperSpace, SpaceError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Standard deviation of initial weights.
pub const INIT_STD: f64 = 0.05;
pub const LEARNING_RATE: &str = "learning_rate";
pub const EMBEDDING_DIM: &str = "embedding_dim";

/// Replacement domain for a declared hyperparameter: a scalar fixes it, an
/// array makes it a choice, and a table gives a full domain such as
/// `{ int_range = { lo = 1, hi = 4 } }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HpOverride {
    Value(HpValue),
    Values(Vec<HpValue>),
    Kind(HpKind),
}

impl HpOverride {
    pub fn into_kind(self) -> HpKind {
        match self {
            Self::Value(v) => HpKind::Fixed(v),
            Self::Values(v) => HpKind::Choice(v),
            Self::Kind(k) => k,
        }
    }
}

impl From<HpKind> for HpOverride {
    fn from(k: HpKind) -> Self {
        Self::Kind(k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub id: String,
    #[serde(rename = "type")]
    pub block_type: BlockType,
    /// Upstream block ids, for interactors and heads.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<String>,
    /// Feature column names, for mappers.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub columns: Vec<String>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub hyperparameters: IndexMap<String, HpOverride>,
}

impl BlockSpec {
    pub fn new(id: impl Into<String>, block_type: BlockType) -> Self {
        Self {
            id: id.into(),
            block_type,
            inputs: Vec::new(),
            columns: Vec::new(),
            hyperparameters: IndexMap::new(),
        }
    }

    pub fn inputs<S: Into<String>>(mut self, ids: impl IntoIterator<Item = S>) -> Self {
        self.inputs = ids.into_iter().map(Into::into).collect();
        self
    }

    pub fn columns<S: Into<String>>(mut self, names: impl IntoIterator<Item = S>) -> Self {
        self.columns = names.into_iter().map(Into::into).collect();
        self
    }

    pub fn hp(mut self, name: impl Into<String>, value: impl Into<HpOverride>) -> Self {
        self.hyperparameters.insert(name.into(), value.into());
        self
    }

    /// Number of embeddings this block emits.
    fn output_count(&self) -> usize {
        match self.block_type {
            BlockType::SparseFeature => self.columns.len(),
            _ => 1,
        }
    }
}

impl From<HpValue> for HpOverride {
    fn from(v: HpValue) -> Self {
        Self::Value(v)
    }
}

impl From<i64> for HpOverride {
    fn from(v: i64) -> Self {
        Self::Value(v.into())
    }
}

impl From<f64> for HpOverride {
    fn from(v: f64) -> Self {
        Self::Value(v.into())
    }
}

impl From<&str> for HpOverride {
    fn from(v: &str) -> Self {
        Self::Value(v.into())
    }
}

fn default_learning_rate() -> HpKind {
    HpKind::FloatRange {
        lo: 1e-4,
        hi: 1e-1,
        log: true,
    }
}

fn default_embedding_dim() -> HpKind {
    HpKind::fixed(64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub blocks: Vec<BlockSpec>,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: HpKind,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: HpKind,
}

impl GraphSpec {
    pub fn new(blocks: Vec<BlockSpec>) -> Self {
        Self {
            blocks,
            learning_rate: default_learning_rate(),
            embedding_dim: default_embedding_dim(),
        }
    }

    pub fn block(&self, id: &str) -> Option<&BlockSpec> {
        self.blocks.iter().find(|b| b.id == id)
    }

    pub fn head(&self) -> Option<&BlockSpec> {
        self.blocks
            .iter()
            .find(|b| b.block_type.kind() == BlockKind::Head)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateId(String),
    InvalidId(String),
    UnknownInput { block: String, input: String },
    Cycle { block: String, input: String },
    NoHead,
    MultipleHeads(Vec<String>),
    Unreachable(String),
    WrongInputs { block: String, reason: String },
    DimMismatch { block: String, reason: String },
    UnknownHyperparameter { block: String, name: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DuplicateId(id) => write!(f, "duplicate block id `{id}`"),
            Self::InvalidId(id) => write!(f, "invalid block id `{id}` (empty or contains `/`)"),
            Self::UnknownInput { block, input } => {
                write!(f, "block `{block}` reads unknown block `{input}`")
            }
            Self::Cycle { block, input } => write!(
                f,
                "cycle: block `{block}` reads `{input}`, which is not declared before it"
            ),
            Self::NoHead => write!(f, "graph has no head"),
            Self::MultipleHeads(ids) => write!(f, "multiple heads: {}", ids.join(", ")),
            Self::Unreachable(id) => write!(f, "block `{id}` is unreachable from the head"),
            Self::WrongInputs { block, reason } => write!(f, "block `{block}`: {reason}"),
            Self::DimMismatch { block, reason } => {
                write!(f, "dimension mismatch at block `{block}`: {reason}")
            }
            Self::UnknownHyperparameter { block, name } => {
                write!(f, "block `{block}` has no hyperparameter `{name}`")
            }
        }
    }
}

fn list(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("invalid graph: {}", list(.0))]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("block `{block}`: {source}")]
    Block {
        block: String,
        #[source]
        source: BlockError,
    },
    #[error("block `{block}`: {reason}")]
    Features { block: String, reason: String },
    #[error("graph ends in a {head} head but the data is a {data:?} task")]
    TaskMismatch { head: &'static str, data: Task },
}

/// Widths known without an assignment; `None` where a free hyperparameter
/// decides.
type Widths = Vec<Option<usize>>;

fn fixed_value(kind: &HpKind) -> Option<HpValue> {
    match kind {
        HpKind::Fixed(v) => Some(v.clone()),
        HpKind::Choice(v) if v.len() == 1 => Some(v[0].clone()),
        _ => None,
    }
}

/// Checks structure and statically visible widths, returning block ids in
/// evaluation order. All violations are reported together.
pub fn validate_graph(graph: &GraphSpec) -> Result<Vec<String>, GraphError> {
    let mut v = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, b) in graph.blocks.iter().enumerate() {
        if b.id.is_empty() || b.id.contains('/') {
            v.push(Violation::InvalidId(b.id.clone()));
        }
        if index.insert(b.id.as_str(), i).is_some() {
            v.push(Violation::DuplicateId(b.id.clone()));
        }
    }
    // Resolved, backward-pointing edges only.
    let mut edges: Vec<Vec<usize>> = vec![Vec::new(); graph.blocks.len()];
    for (i, b) in graph.blocks.iter().enumerate() {
        let wrong = |reason: &str| Violation::WrongInputs {
            block: b.id.clone(),
            reason: reason.to_string(),
        };
        match b.block_type.kind() {
            BlockKind::Mapper => {
                if !b.inputs.is_empty() {
                    v.push(wrong("mappers read feature columns, not blocks"));
                }
                if b.columns.is_empty() {
                    v.push(wrong("mapper has no feature columns"));
                }
                if b.block_type == BlockType::LatentFactor && b.columns.len() > 1 {
                    v.push(wrong("latent_factor maps exactly one column"));
                }
            }
            BlockKind::Interactor | BlockKind::Head => {
                if !b.columns.is_empty() {
                    v.push(wrong("only mappers read feature columns"));
                }
                if b.inputs.is_empty() {
                    v.push(wrong("no input blocks"));
                }
            }
        }
        for input in &b.inputs {
            match index.get(input.as_str()) {
                None => v.push(Violation::UnknownInput {
                    block: b.id.clone(),
                    input: input.clone(),
                }),
                Some(&j) if j >= i => v.push(Violation::Cycle {
                    block: b.id.clone(),
                    input: input.clone(),
                }),
                Some(&j) => {
                    if graph.blocks[j].block_type.kind() == BlockKind::Head {
                        v.push(wrong(&format!("reads head `{input}`")));
                    }
                    edges[i].push(j);
                }
            }
        }
        let declared: HashSet<String> = b
            .block_type
            .declarations(1)
            .into_iter()
            .map(|d| d.name)
            .collect();
        for name in b.hyperparameters.keys() {
            if !declared.contains(name) {
                v.push(Violation::UnknownHyperparameter {
                    block: b.id.clone(),
                    name: name.clone(),
                });
            }
        }
    }
    let heads: Vec<usize> = graph
        .blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| b.block_type.kind() == BlockKind::Head)
        .map(|(i, _)| i)
        .collect();
    match heads.len() {
        0 => v.push(Violation::NoHead),
        1 => {}
        _ => v.push(Violation::MultipleHeads(
            heads.iter().map(|&i| graph.blocks[i].id.clone()).collect(),
        )),
    }
    if !heads.is_empty() {
        let mut seen = vec![false; graph.blocks.len()];
        let mut stack = heads.clone();
        while let Some(i) = stack.pop() {
            if !std::mem::replace(&mut seen[i], true) {
                stack.extend(&edges[i]);
            }
        }
        for (i, b) in graph.blocks.iter().enumerate() {
            if !seen[i] {
                v.push(Violation::Unreachable(b.id.clone()));
            }
        }
    }
    if v.is_empty() {
        static_widths(graph, &edges, &mut v);
    }
    if v.is_empty() {
        Ok(graph.blocks.iter().map(|b| b.id.clone()).collect())
    } else {
        Err(GraphError::Invalid(v))
    }
}

fn embedding_counts(graph: &GraphSpec, edges: &[Vec<usize>]) -> Vec<usize> {
    edges
        .iter()
        .map(|e| e.iter().map(|&j| graph.blocks[j].output_count()).sum())
        .collect()
}

/// Propagates widths fixed by the declarations and reports mismatches.
fn static_widths(graph: &GraphSpec, edges: &[Vec<usize>], v: &mut Vec<Violation>) {
    let counts = embedding_counts(graph, edges);
    let dim = fixed_value(&graph.embedding_dim).and_then(|x| match x {
        HpValue::Int(d) if d > 0 => Some(d as usize),
        _ => None,
    });
    let mut out: Vec<Widths> = Vec::with_capacity(graph.blocks.len());
    for (i, b) in graph.blocks.iter().enumerate() {
        let inputs: Widths = edges[i].iter().flat_map(|&j| out[j].clone()).collect();
        let widths = match b.block_type.kind() {
            BlockKind::Mapper => vec![dim; b.output_count()],
            BlockKind::Head => vec![Some(1)],
            BlockKind::Interactor => {
                let mut fixed = Assignment::new();
                for d in block_decls(b, counts[i]) {
                    if let Some(x) = fixed_value(&d.kind) {
                        fixed.set(format!("{}/{}", b.id, d.name), x);
                    }
                }
                let known: Option<Vec<usize>> = inputs.iter().copied().collect();
                match (Interactor::resolve(b.block_type, &b.id, &fixed), known) {
                    (Ok(it), Some(dims)) => match it.output_dim(&dims) {
                        Ok(w) => vec![Some(w)],
                        Err(e) => {
                            v.push(Violation::DimMismatch {
                                block: b.id.clone(),
                                reason: e.to_string(),
                            });
                            vec![None]
                        }
                    },
                    _ => {
                        let needs_equal = matches!(
                            b.block_type,
                            BlockType::Fm | BlockType::Elementwise | BlockType::SelfAttention
                        );
                        let mut known = inputs.iter().flatten();
                        if let Some(first) = known.next() {
                            if needs_equal && known.any(|w| w != first) {
                                v.push(Violation::DimMismatch {
                                    block: b.id.clone(),
                                    reason: format!(
                                        "{} needs equal input widths, got {:?}",
                                        b.block_type, inputs
                                    ),
                                });
                            }
                        }
                        vec![None]
                    }
                }
            }
        };
        out.push(widths);
    }
}

/// The block's declarations with overrides applied, names still local.
fn block_decls(b: &BlockSpec, n_inputs: usize) -> Vec<HyperParamDecl> {
    b.block_type
        .declarations(n_inputs)
        .into_iter()
        .map(|mut d| {
            if let Some(o) = b.hyperparameters.get(&d.name) {
                d.kind = o.clone().into_kind();
            }
            d
        })
        .collect()
}

/// Hyperparameter space induced by a valid graph.
pub fn build_space(graph: &GraphSpec) -> Result<HyperSpace, GraphError> {
    validate_graph(graph)?;
    let index: HashMap<&str, usize> = graph
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| (b.id.as_str(), i))
        .collect();
    let edges: Vec<Vec<usize>> = graph
        .blocks
        .iter()
        .map(|b| b.inputs.iter().map(|s| index[s.as_str()]).collect())
        .collect();
    let counts = embedding_counts(graph, &edges);
    let mut space = HyperSpace::new();
    space.declare(HyperParamDecl::new(
        LEARNING_RATE,
        graph.learning_rate.clone(),
    ))?;
    space.declare(HyperParamDecl::new(
        EMBEDDING_DIM,
        graph.embedding_dim.clone(),
    ))?;
    for (i, b) in graph.blocks.iter().enumerate() {
        for mut d in block_decls(b, counts[i]) {
            d.name = format!("{}/{}", b.id, d.name);
            if let Some(c) = &mut d.condition {
                c.parent = format!("{}/{}", b.id, c.parent);
            }
            space.declare(d)?;
        }
    }
    Ok(space)
}

#[derive(Debug, Clone, PartialEq)]
enum Resolved {
    Latent {
        column: usize,
    },
    /// Column index and full table parameter id per field.
    Sparse {
        fields: Vec<(usize, String)>,
    },
    Dense {
        columns: Vec<usize>,
    },
    Interactor(Interactor),
    Rating(RatingHeadType),
    Ctr,
}

#[derive(Debug, Clone, PartialEq)]
struct ResolvedBlock {
    id: String,
    inputs: Vec<usize>,
    op: Resolved,
}

/// One model of the search space: bound hyperparameters plus parameters.
#[derive(Debug, Clone)]
pub struct ConcreteModel {
    pub task: Task,
    pub learning_rate: f64,
    pub embedding_dim: usize,
    pub store: ParamStore,
    blocks: Vec<ResolvedBlock>,
}

/// Predictions and loss recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct ModelOutput {
    pub prediction: Var,
    pub loss: Var,
}

fn init_tensor(spec: &ParamSpec, seed: u64, id: &str) -> Tensor {
    match spec.init {
        Init::Zeros => Tensor::zeros(&spec.shape),
        Init::Normal => {
            let mut rng = rng_for(seed, id);
            let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
            let n: usize = spec.shape.iter().product();
            let data = (0..n).map(|_| normal.sample(&mut rng)).collect();
            Tensor::new(spec.shape.clone(), data).expect("shape matches data")
        }
    }
}

/// Builds the model selected by `assignment`.
///
/// Weights and embedding tables are drawn from Normal(0, 0.05²) with a
/// generator keyed by `(seed, parameter id)`; biases start at zero.
pub fn materialize_model(
    graph: &GraphSpec,
    assignment: &Assignment,
    seed: u64,
    features: &FeatureInfo,
) -> Result<ConcreteModel, GraphError> {
    let space = build_space(graph)?;
    space.validate(assignment)?;
    let learning_rate = assignment.float(LEARNING_RATE)?;
    let dim = assignment.int(EMBEDDING_DIM)?;
    let dim = usize::try_from(dim)
        .ok()
        .filter(|&d| d > 0)
        .ok_or_else(|| {
            SpaceError::InvalidAssignment(format!("embedding_dim must be positive, got {dim}"))
        })?;
    let index: HashMap<&str, usize> = graph
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| (b.id.as_str(), i))
        .collect();

    let mut store = ParamStore::new();
    let mut add = |block: &str, specs: Vec<ParamSpec>| -> Result<(), GraphError> {
        for s in specs {
            let id = format!("{block}/{}", s.name);
            let t = init_tensor(&s, seed, &id);
            store.insert(&id, t, true).map_err(|e| GraphError::Block {
                block: block.to_string(),
                source: e.into(),
            })?;
        }
        Ok(())
    };

    let mut blocks = Vec::with_capacity(graph.blocks.len());
    let mut widths: Vec<Vec<usize>> = Vec::with_capacity(graph.blocks.len());
    for b in &graph.blocks {
        let inputs: Vec<usize> = b.inputs.iter().map(|s| index[s.as_str()]).collect();
        let in_dims: Vec<usize> = inputs.iter().flat_map(|&j| widths[j].clone()).collect();
        let block_err = |source: BlockError| GraphError::Block {
            block: b.id.clone(),
            source,
        };
        let feature_err = |reason: String| GraphError::Features {
            block: b.id.clone(),
            reason,
        };
        let categorical = |name: &String| {
            features
                .categorical_index(name)
                .ok_or_else(|| feature_err(format!("`{name}` is not a categorical column")))
        };
        let (op, out) = match b.block_type {
            BlockType::LatentFactor => {
                let column = categorical(&b.columns[0])?;
                let vocab = features.categorical[column].vocab_size;
                add(&b.id, vec![mappers::embedding_table(vocab, dim)])?;
                (Resolved::Latent { column }, vec![dim])
            }
            BlockType::SparseFeature => {
                let columns = b
                    .columns
                    .iter()
                    .map(categorical)
                    .collect::<Result<Vec<_>, _>>()?;
                let specs = columns
                    .iter()
                    .map(|&c| {
                        let f = &features.categorical[c];
                        let mut s = mappers::embedding_table(f.vocab_size, dim);
                        s.name = format!("{}/table", f.name);
                        s
                    })
                    .collect();
                add(&b.id, specs)?;
                let fields = columns
                    .iter()
                    .map(|&c| {
                        (
                            c,
                            format!("{}/{}/table", b.id, features.categorical[c].name),
                        )
                    })
                    .collect();
                let n = columns.len();
                (Resolved::Sparse { fields }, vec![dim; n])
            }
            BlockType::DenseFeature => {
                let columns = b
                    .columns
                    .iter()
                    .map(|name| {
                        features
                            .dense_index(name)
                            .ok_or_else(|| feature_err(format!("`{name}` is not a dense column")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                add(
                    &b.id,
                    mappers::dense_params(columns.len(), dim).map_err(block_err)?,
                )?;
                (Resolved::Dense { columns }, vec![dim])
            }
            BlockType::RatingHead | BlockType::CtrHead => {
                let ctr = b.block_type == BlockType::CtrHead;
                let want = if ctr { Task::Ctr } else { Task::Rating };
                if features.task != want {
                    return Err(GraphError::TaskMismatch {
                        head: b.block_type.name(),
                        data: features.task,
                    });
                }
                let width: usize = in_dims.iter().sum();
                let op = if ctr {
                    add(&b.id, linear_params(width))?;
                    Resolved::Ctr
                } else {
                    let ty =
                        RatingHeadType::from_name(assignment.str(&format!("{}/head_type", b.id))?)
                            .map_err(block_err)?;
                    if ty == RatingHeadType::Linear {
                        add(&b.id, linear_params(width))?;
                    }
                    Resolved::Rating(ty)
                };
                (op, vec![1])
            }
            ty => {
                let it = Interactor::resolve(ty, &b.id, assignment).map_err(block_err)?;
                let w = it.output_dim(&in_dims).map_err(block_err)?;
                add(&b.id, it.param_specs(&in_dims))?;
                (Resolved::Interactor(it), vec![w])
            }
        };
        widths.push(out);
        blocks.push(ResolvedBlock {
            id: b.id.clone(),
            inputs,
            op,
        });
    }
    Ok(ConcreteModel {
        task: features.task,
        learning_rate,
        embedding_dim: dim,
        store,
        blocks,
    })
}

impl ConcreteModel {
    /// Number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Records the forward pass and loss for `batch` on `tape`.
    pub fn forward(&self, tape: &mut Tape, batch: &Batch) -> Result<ModelOutput, GraphError> {
        let mut outputs: Vec<Vec<Var>> = Vec::with_capacity(self.blocks.len());
        let mut result = None;
        for b in &self.blocks {
            let err = |source: BlockError| GraphError::Block {
                block: b.id.clone(),
                source,
            };
            let param = |tape: &mut Tape, name: &str| {
                tape.param(&self.store, &format!("{}/{name}", b.id))
                    .map_err(|e| err(e.into()))
            };
            let inputs: Vec<Var> = b.inputs.iter().flat_map(|&j| outputs[j].clone()).collect();
            let out = match &b.op {
                Resolved::Latent { column } => {
                    let table = param(tape, "table")?;
                    vec![
                        mappers::latent_factor_mapper(tape, table, &batch.cat[*column])
                            .map_err(err)?,
                    ]
                }
                Resolved::Sparse { fields } => {
                    let mut out = Vec::with_capacity(fields.len());
                    for (c, id) in fields {
                        let table = tape.param(&self.store, id).map_err(|e| err(e.into()))?;
                        let c = *c;
                        out.push(
                            mappers::latent_factor_mapper(tape, table, &batch.cat[c])
                                .map_err(err)?,
                        );
                    }
                    out
                }
                Resolved::Dense { columns } => {
                    let n = batch.len();
                    let f = columns.len();
                    let mut data = vec![0.0; n * f];
                    for (k, &c) in columns.iter().enumerate() {
                        for (r, &x) in batch.dense[c].iter().enumerate() {
                            data[r * f + k] = x;
                        }
                    }
                    let x = tape.constant(Tensor::matrix(n, f, data).map_err(|e| err(e.into()))?);
                    let kernel = param(tape, "kernel")?;
                    let bias = param(tape, "bias")?;
                    vec![mappers::dense_feature_mapper(tape, x, kernel, bias).map_err(err)?]
                }
                Resolved::Interactor(it) => {
                    vec![it.forward(tape, &self.store, &b.id, &inputs).map_err(err)?]
                }
                Resolved::Rating(ty) => {
                    let x = join(tape, &inputs).map_err(err)?;
                    let linear = match ty {
                        RatingHeadType::Sum => None,
                        RatingHeadType::Linear => Some(Linear {
                            kernel: param(tape, "kernel")?,
                            bias: param(tape, "bias")?,
                        }),
                    };
                    let (prediction, loss) =
                        rating_head(tape, x, linear, &batch.target).map_err(err)?;
                    result = Some(ModelOutput { prediction, loss });
                    vec![prediction]
                }
                Resolved::Ctr => {
                    let x = join(tape, &inputs).map_err(err)?;
                    let linear = Linear {
                        kernel: param(tape, "kernel")?,
                        bias: param(tape, "bias")?,
                    };
                    let (prediction, loss) =
                        ctr_head(tape, x, linear, &batch.target).map_err(err)?;
                    result = Some(ModelOutput { prediction, loss });
                    vec![prediction]
                }
            };
            outputs.push(out);
        }
        result.ok_or_else(|| GraphError::Invalid(vec![Violation::NoHead]))
    }
}

fn join(tape: &mut Tape, inputs: &[Var]) -> Result<Var, BlockError> {
    if inputs.len() == 1 {
        Ok(inputs[0])
    } else {
        blocks::concatenate_interaction(tape, inputs)
    }
}
