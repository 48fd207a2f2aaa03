#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use recsearch::blocks::heads::{ctr_head, rating_head, Linear};
use recsearch::blocks::interactors::{ElementwiseMode, Interactor};
use recsearch::blocks::mappers::{
    dense_feature_mapper, latent_factor_mapper, sparse_feature_mapper,
};
use recsearch::blocks::BlockType;
use recsearch::gradcheck::{grad_check_store, DEFAULT_STEP};
use recsearch::params::ParamStore;
use recsearch::space::Assignment;
use recsearch::tape::{Tape, Var};
use recsearch::tensor::{Tensor, TensorError};

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Reduces any `batch × w` value to a scalar through fixed random weights,
/// so every output coordinate reaches the loss with a distinct coefficient.
pub fn weighted_sum(tape: &mut Tape, v: Var, weights: &Tensor) -> Result<Var, TensorError> {
    let w = tape.constant(weights.clone());
    let prod = tape.mul(v, w)?;
    let rows = tape.sum_last(prod)?;
    let n = tape.value(rows).rows();
    let flat = tape.reshape(rows, &[1, n])?;
    tape.sum_last(flat)
}

/// Brute-force `Σ_{i<j} ⟨vᵢ, vⱼ⟩` per row.
pub fn fm_oracle(fields: &[Tensor]) -> Vec<f64> {
    let rows = fields[0].rows();
    (0..rows)
        .map(|r| {
            let mut total = 0.0;
            for i in 0..fields.len() {
                for j in i + 1..fields.len() {
                    total += fields[i]
                        .row(r)
                        .iter()
                        .zip(fields[j].row(r))
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                }
            }
            total
        })
        .collect()
}

const BATCH: usize = 3;

/// Store holding `n` trainable `BATCH × d` inputs named `in/<i>`.
fn inputs(rng: &mut ChaCha8Rng, dims: &[usize]) -> ParamStore {
    let mut s = ParamStore::new();
    for (i, &d) in dims.iter().enumerate() {
        s.insert(
            format!("in/{i}"),
            random_tensor(rng, &[BATCH, d], 1.0),
            true,
        )
        .unwrap();
    }
    s
}

fn input_vars(tape: &mut Tape, store: &ParamStore, n: usize) -> Result<Vec<Var>, TensorError> {
    (0..n)
        .map(|i| tape.param(store, &format!("in/{i}")))
        .collect()
}

fn interactor_case(rng: &mut ChaCha8Rng, it: &Interactor, dims: &[usize]) -> f64 {
    let mut store = inputs(rng, dims);
    for spec in it.param_specs(dims) {
        store
            .insert(
                format!("blk/{}", spec.name),
                random_tensor(rng, &spec.shape, 0.5),
                true,
            )
            .unwrap();
    }
    let width = it.output_dim(dims).unwrap();
    let weights = random_tensor(rng, &[BATCH, width], 1.0);
    grad_check_store(
        &store,
        |tape, store| {
            let xs = input_vars(tape, store, dims.len())?;
            let out = it
                .forward(tape, store, "blk", &xs)
                .map_err(|e| TensorError::Contract(e.to_string()))?;
            weighted_sum(tape, out, &weights)
        },
        DEFAULT_STEP,
    )
    .unwrap()
}

fn head_case(rng: &mut ChaCha8Rng, kind: &str) -> f64 {
    let width = 4;
    let mut store = inputs(rng, &[width]);
    let linear = kind != "rating_sum";
    if linear {
        store
            .insert("head/kernel", random_tensor(rng, &[width, 1], 0.5), true)
            .unwrap();
        store
            .insert("head/bias", random_tensor(rng, &[1, 1], 0.5), true)
            .unwrap();
    }
    let targets: Vec<f64> = match kind {
        "ctr" => (0..BATCH)
            .map(|_| f64::from(rng.gen_range(0..2_u8)))
            .collect(),
        _ => (0..BATCH).map(|_| rng.gen_range(1.0..5.0)).collect(),
    };
    grad_check_store(
        &store,
        |tape, store| {
            let x = tape.param(store, "in/0")?;
            let lin = if linear {
                Some(Linear {
                    kernel: tape.param(store, "head/kernel")?,
                    bias: tape.param(store, "head/bias")?,
                })
            } else {
                None
            };
            let res = match kind {
                "ctr" => ctr_head(tape, x, lin.unwrap(), &targets),
                _ => rating_head(tape, x, lin, &targets),
            };
            res.map(|(_, loss)| loss)
                .map_err(|e| TensorError::Contract(e.to_string()))
        },
        DEFAULT_STEP,
    )
    .unwrap()
}

fn latent_case(rng: &mut ChaCha8Rng) -> f64 {
    let mut store = ParamStore::new();
    store
        .insert("table", random_tensor(rng, &[5, 3], 1.0), true)
        .unwrap();
    // Repeated ids exercise scatter-add.
    let ids: Vec<usize> = (0..BATCH + 2).map(|_| rng.gen_range(0..5)).collect();
    let weights = random_tensor(rng, &[ids.len(), 3], 1.0);
    grad_check_store(
        &store,
        |tape, store| {
            let t = tape.param(store, "table")?;
            let e = latent_factor_mapper(tape, t, &ids)
                .map_err(|e| TensorError::Contract(e.to_string()))?;
            weighted_sum(tape, e, &weights)
        },
        DEFAULT_STEP,
    )
    .unwrap()
}

fn dense_case(rng: &mut ChaCha8Rng) -> f64 {
    let mut store = inputs(rng, &[2]);
    store
        .insert("kernel", random_tensor(rng, &[2, 3], 0.5), true)
        .unwrap();
    store
        .insert("bias", random_tensor(rng, &[1, 3], 0.5), true)
        .unwrap();
    let weights = random_tensor(rng, &[BATCH, 3], 1.0);
    grad_check_store(
        &store,
        |tape, store| {
            let x = tape.param(store, "in/0")?;
            let k = tape.param(store, "kernel")?;
            let b = tape.param(store, "bias")?;
            let e = dense_feature_mapper(tape, x, k, b)
                .map_err(|e| TensorError::Contract(e.to_string()))?;
            weighted_sum(tape, e, &weights)
        },
        DEFAULT_STEP,
    )
    .unwrap()
}

fn sparse_case(rng: &mut ChaCha8Rng) -> f64 {
    let mut store = ParamStore::new();
    store
        .insert("t0", random_tensor(rng, &[4, 2], 1.0), true)
        .unwrap();
    store
        .insert("t1", random_tensor(rng, &[6, 2], 1.0), true)
        .unwrap();
    let c0: Vec<usize> = (0..BATCH).map(|_| rng.gen_range(0..4)).collect();
    let c1: Vec<usize> = (0..BATCH).map(|_| rng.gen_range(0..6)).collect();
    let w0 = random_tensor(rng, &[BATCH, 2], 1.0);
    let w1 = random_tensor(rng, &[BATCH, 2], 1.0);
    grad_check_store(
        &store,
        |tape, store| {
            let tables = [tape.param(store, "t0")?, tape.param(store, "t1")?];
            let es = sparse_feature_mapper(tape, &tables, &[&c0, &c1])
                .map_err(|e| TensorError::Contract(e.to_string()))?;
            let a = weighted_sum(tape, es[0], &w0)?;
            let b = weighted_sum(tape, es[1], &w1)?;
            tape.add(a, b)
        },
        DEFAULT_STEP,
    )
    .unwrap()
}

/// A named gradient check that draws a fresh random point on every call and
/// returns the worst relative error there.
pub type GradCase = (String, Box<dyn Fn(&mut ChaCha8Rng) -> f64>);

/// Every mapper, interactor and head, including the hyper interactor
/// dispatching to each of its children.
pub fn gradient_cases() -> Vec<GradCase> {
    let mut cases: Vec<GradCase> = vec![
        ("latent_factor".into(), Box::new(latent_case)),
        ("dense_feature".into(), Box::new(dense_case)),
        ("sparse_feature".into(), Box::new(sparse_case)),
    ];
    let interactors: Vec<(&str, Interactor, Vec<usize>)> = vec![
        (
            "mlp",
            Interactor::Mlp {
                layers: 2,
                units: 3,
            },
            vec![2, 3],
        ),
        ("concatenate", Interactor::Concatenate, vec![2, 3]),
        ("fm", Interactor::Fm, vec![3, 3, 3]),
        ("cross_net", Interactor::CrossNet { layers: 2 }, vec![2, 2]),
        (
            "self_attention",
            Interactor::SelfAttention {
                heads: 2,
                blocks: 2,
            },
            vec![4, 4, 4],
        ),
        (
            "random_select",
            Interactor::RandomSelect { index: 1 },
            vec![2, 3],
        ),
    ];
    for (name, it, dims) in interactors {
        cases.push((
            name.into(),
            Box::new(move |rng| interactor_case(rng, &it, &dims)),
        ));
    }
    for mode in [
        ElementwiseMode::Sum,
        ElementwiseMode::Average,
        ElementwiseMode::Multiply,
        ElementwiseMode::Max,
        ElementwiseMode::Min,
    ] {
        let it = Interactor::Elementwise(mode);
        cases.push((
            format!("elementwise/{}", mode.name()),
            Box::new(move |rng| interactor_case(rng, &it, &[3, 3])),
        ));
    }
    let hyper: Vec<(&str, Assignment)> = vec![
        (
            "mlp",
            Assignment::new()
                .with("h/interactor_type", "mlp")
                .with("h/mlp/layers", 1_i64)
                .with("h/mlp/units", 3_i64),
        ),
        (
            "concatenate",
            Assignment::new().with("h/interactor_type", "concatenate"),
        ),
        ("fm", Assignment::new().with("h/interactor_type", "fm")),
        (
            "cross_net",
            Assignment::new()
                .with("h/interactor_type", "cross_net")
                .with("h/cross_net/layers", 1_i64),
        ),
        (
            "self_attention",
            Assignment::new()
                .with("h/interactor_type", "self_attention")
                .with("h/self_attention/heads", 1_i64)
                .with("h/self_attention/blocks", 1_i64),
        ),
        (
            "elementwise",
            Assignment::new()
                .with("h/interactor_type", "elementwise")
                .with("h/elementwise/mode", "multiply"),
        ),
    ];
    for (child, a) in hyper {
        let it = Interactor::resolve(BlockType::Hyper, "h", &a).unwrap();
        cases.push((
            format!("hyper/{child}"),
            Box::new(move |rng| interactor_case(rng, &it, &[4, 4])),
        ));
    }
    for head in ["rating_sum", "rating_linear", "ctr"] {
        cases.push((head.into(), Box::new(move |rng| head_case(rng, head))));
    }
    cases
}

/// Small MovieLens-format ratings, prepared with an 8:1:1 split.
pub fn rating_data(
    rows: usize,
    seed: u64,
) -> (recsearch::data::Schema, recsearch::data::PreparedData) {
    use recsearch::data::{prepare, RawTable, Schema, VocabOptions};
    use recsearch::synth::{ratings, RatingSpec};
    let schema = Schema::movielens();
    let raw = ratings(RatingSpec {
        rows,
        users: 30,
        items: 20,
        seed,
        ..RatingSpec::default()
    });
    let table = RawTable::from_rows(&schema, &raw).unwrap();
    let data = prepare(&schema, &table, seed, VocabOptions::default()).unwrap();
    (schema, data)
}

/// Synthetic clicks with `fields` categorical and `dense` dense columns.
pub fn ctr_data(
    rows: usize,
    fields: usize,
    dense: usize,
    seed: u64,
) -> (recsearch::data::Schema, recsearch::data::PreparedData) {
    use recsearch::data::{prepare, VocabOptions};
    use recsearch::synth::{ctr, CtrSpec};
    let synth = ctr(CtrSpec {
        rows,
        fields,
        vocab: 6,
        dense,
        seed,
        ..CtrSpec::default()
    });
    let schema = synth.schema();
    let data = prepare(&schema, &synth.table(), seed, VocabOptions::default()).unwrap();
    (schema, data)
}
