//! The nine named pipelines.

use thiserror::Error;

use crate::blocks::BlockType;
use crate::data::{Role, Schema, Task};
use crate::graph::{validate_graph, BlockSpec, GraphError, GraphSpec};

pub const RECIPES: [&str; 9] = [
    "mf",
    "mlp",
    "ncf",
    "deepfm",
    "dlrm",
    "autoint",
    "crossnet",
    "autorec_rp",
    "autorec_ctr",
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecipeError {
    #[error("unknown recipe `{0}`; expected one of {}", RECIPES.join(", "))]
    Unknown(String),
    #[error(
        "recipe `{recipe}` is a {expected:?} recipe but the schema describes a {found:?} task"
    )]
    TaskMismatch {
        recipe: String,
        expected: Task,
        found: Task,
    },
    #[error("recipe `{recipe}` needs a column with role {role:?}")]
    MissingRole { recipe: String, role: Role },
    #[error("schema: {0}")]
    Schema(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Task a recipe predicts.
pub fn recipe_task(name: &str) -> Result<Task, RecipeError> {
    match name {
        "mf" | "mlp" | "ncf" | "autorec_rp" => Ok(Task::Rating),
        "deepfm" | "dlrm" | "autoint" | "crossnet" | "autorec_ctr" => Ok(Task::Ctr),
        other => Err(RecipeError::Unknown(other.to_string())),
    }
}

struct Columns<'a> {
    user: Option<&'a str>,
    item: Option<&'a str>,
    other: Vec<&'a str>,
    categorical: Vec<&'a str>,
    dense: Vec<&'a str>,
}

impl<'a> Columns<'a> {
    fn of(schema: &'a Schema) -> Self {
        let named = |f: &dyn Fn(Role) -> bool| -> Vec<&'a str> {
            schema
                .columns
                .iter()
                .filter(|c| f(c.role))
                .map(|c| c.name.as_str())
                .collect()
        };
        Self {
            user: named(&|r| r == Role::UserId).first().copied(),
            item: named(&|r| r == Role::ItemId).first().copied(),
            other: named(&|r| r == Role::Categorical),
            categorical: named(&Role::is_categorical),
            dense: named(&|r| r == Role::Dense),
        }
    }
}

/// Mappers for rating recipes: one latent-factor mapper per id column, a
/// sparse mapper over the remaining categorical columns and a dense
/// mapper, the last two only when such columns exist.
fn rating_mappers(recipe: &str, c: &Columns) -> Result<Vec<BlockSpec>, RecipeError> {
    let missing = |role| RecipeError::MissingRole {
        recipe: recipe.to_string(),
        role,
    };
    let user = c.user.ok_or_else(|| missing(Role::UserId))?;
    let item = c.item.ok_or_else(|| missing(Role::ItemId))?;
    let mut out = vec![
        BlockSpec::new("user", BlockType::LatentFactor).columns([user]),
        BlockSpec::new("item", BlockType::LatentFactor).columns([item]),
    ];
    if !c.other.is_empty() {
        out.push(BlockSpec::new("fields", BlockType::SparseFeature).columns(c.other.clone()));
    }
    if !c.dense.is_empty() {
        out.push(BlockSpec::new("dense", BlockType::DenseFeature).columns(c.dense.clone()));
    }
    Ok(out)
}

/// Mappers for CTR recipes: a sparse mapper over every categorical column
/// plus a dense mapper when dense columns exist.
fn ctr_mappers(recipe: &str, c: &Columns) -> Result<Vec<BlockSpec>, RecipeError> {
    let mut out = Vec::new();
    if !c.categorical.is_empty() {
        out.push(BlockSpec::new("sparse", BlockType::SparseFeature).columns(c.categorical.clone()));
    }
    if !c.dense.is_empty() {
        out.push(BlockSpec::new("dense", BlockType::DenseFeature).columns(c.dense.clone()));
    }
    if out.is_empty() {
        return Err(RecipeError::MissingRole {
            recipe: recipe.to_string(),
            role: Role::Categorical,
        });
    }
    Ok(out)
}

fn ids(blocks: &[BlockSpec]) -> Vec<String> {
    blocks.iter().map(|b| b.id.clone()).collect()
}

/// Builds and validates the recipe's searchable graph for `schema`.
pub fn build_recipe(name: &str, schema: &Schema) -> Result<GraphSpec, RecipeError> {
    let expected = recipe_task(name)?;
    let found = schema
        .task()
        .map_err(|e| RecipeError::Schema(e.to_string()))?;
    if expected != found {
        return Err(RecipeError::TaskMismatch {
            recipe: name.to_string(),
            expected,
            found,
        });
    }
    let c = Columns::of(schema);
    let rating_head = |head_type: Option<&str>, input: &str| {
        let b = BlockSpec::new("head", BlockType::RatingHead).inputs([input]);
        match head_type {
            Some(t) => b.hp("head_type", t),
            None => b,
        }
    };
    let ctr_head = |input: &str| BlockSpec::new("head", BlockType::CtrHead).inputs([input]);
    let mut blocks;
    match name {
        "mf" => {
            blocks = rating_mappers(name, &c)?;
            blocks.truncate(2);
            blocks.push(
                BlockSpec::new("interaction", BlockType::Elementwise)
                    .inputs(["user", "item"])
                    .hp("mode", "multiply"),
            );
            blocks.push(rating_head(Some("sum"), "interaction"));
        }
        "mlp" => {
            blocks = rating_mappers(name, &c)?;
            let m = ids(&blocks);
            blocks.push(BlockSpec::new("mlp", BlockType::Mlp).inputs(m));
            blocks.push(rating_head(Some("linear"), "mlp"));
        }
        "ncf" => {
            blocks = rating_mappers(name, &c)?;
            let m = ids(&blocks);
            blocks.push(
                BlockSpec::new("gmf", BlockType::Elementwise)
                    .inputs(["user", "item"])
                    .hp("mode", "multiply"),
            );
            blocks.push(BlockSpec::new("mlp", BlockType::Mlp).inputs(m));
            blocks.push(BlockSpec::new("concat", BlockType::Concatenate).inputs(["gmf", "mlp"]));
            blocks.push(rating_head(Some("linear"), "concat"));
        }
        "autorec_rp" => {
            blocks = rating_mappers(name, &c)?;
            let m = ids(&blocks);
            blocks.push(BlockSpec::new("hyper", BlockType::Hyper).inputs(m));
            blocks.push(rating_head(None, "hyper"));
        }
        "deepfm" => {
            blocks = ctr_mappers(name, &c)?;
            let m = ids(&blocks);
            blocks.push(BlockSpec::new("fm", BlockType::Fm).inputs(m.clone()));
            blocks.push(BlockSpec::new("mlp", BlockType::Mlp).inputs(m));
            blocks.push(BlockSpec::new("concat", BlockType::Concatenate).inputs(["fm", "mlp"]));
            blocks.push(ctr_head("concat"));
        }
        "dlrm" => {
            blocks = ctr_mappers(name, &c)?;
            let m = ids(&blocks);
            let mut bottom = vec!["fm".to_string()];
            if m.iter().any(|id| id == "dense") {
                bottom.push("dense".into());
            }
            blocks.push(BlockSpec::new("fm", BlockType::Fm).inputs(m));
            blocks.push(BlockSpec::new("concat", BlockType::Concatenate).inputs(bottom));
            blocks.push(BlockSpec::new("mlp", BlockType::Mlp).inputs(["concat"]));
            blocks.push(ctr_head("mlp"));
        }
        "autoint" => {
            blocks = ctr_mappers(name, &c)?;
            let m = ids(&blocks);
            blocks.push(BlockSpec::new("attention", BlockType::SelfAttention).inputs(m));
            blocks.push(ctr_head("attention"));
        }
        "crossnet" => {
            blocks = ctr_mappers(name, &c)?;
            let m = ids(&blocks);
            blocks.push(BlockSpec::new("cross", BlockType::CrossNet).inputs(m));
            blocks.push(ctr_head("cross"));
        }
        "autorec_ctr" => {
            blocks = ctr_mappers(name, &c)?;
            let m = ids(&blocks);
            blocks.push(BlockSpec::new("hyper", BlockType::Hyper).inputs(m));
            blocks.push(ctr_head("hyper"));
        }
        other => return Err(RecipeError::Unknown(other.to_string())),
    }
    let graph = GraphSpec::new(blocks);
    validate_graph(&graph)?;
    Ok(graph)
}
