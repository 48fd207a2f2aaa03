//! Feature-column mappers.

use super::{affine, BlockError, ParamSpec};
use crate::tape::{Tape, Var};

/// Looks up one embedding row per id; row 0 of the table is the
/// out-of-vocabulary row.
pub fn latent_factor_mapper(tape: &mut Tape, table: Var, ids: &[usize]) -> Result<Var, BlockError> {
    Ok(tape.gather(table, ids)?)
}

/// Affine map of a `batch × f` dense block onto the embedding width.
pub fn dense_feature_mapper(
    tape: &mut Tape,
    x: Var,
    kernel: Var,
    bias: Var,
) -> Result<Var, BlockError> {
    Ok(affine(tape, x, kernel, bias)?)
}

/// One independent embedding lookup per categorical field, in field order.
///
/// `columns` holds the encoded ids column by column.
pub fn sparse_feature_mapper(
    tape: &mut Tape,
    tables: &[Var],
    columns: &[&[usize]],
) -> Result<Vec<Var>, BlockError> {
    if columns.len() != tables.len() {
        return Err(BlockError::Schema(format!(
            "sparse mapper has {} tables but received {} columns",
            tables.len(),
            columns.len()
        )));
    }
    tables
        .iter()
        .zip(columns)
        .map(|(&t, ids)| latent_factor_mapper(tape, t, ids))
        .collect()
}

pub(crate) fn embedding_table(vocab_size: usize, dim: usize) -> ParamSpec {
    ParamSpec::weight("table", &[vocab_size + 1, dim])
}

pub(crate) fn dense_params(features: usize, dim: usize) -> Result<Vec<ParamSpec>, BlockError> {
    if dim == 0 {
        return Err(BlockError::Config(
            "dense mapper dim must be positive".into(),
        ));
    }
    if features == 0 {
        return Err(BlockError::Config(
            "dense mapper needs at least one column".into(),
        ));
    }
    Ok(vec![
        ParamSpec::weight("kernel", &[features, dim]),
        ParamSpec::bias("bias", dim),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tensor, TensorError};

    fn count(specs: &[ParamSpec]) -> usize {
        specs
            .iter()
            .map(|s| s.shape.iter().product::<usize>())
            .sum()
    }

    #[test]
    fn latent_factor_table_reserves_oov_row() {
        let spec = embedding_table(2, 3);
        assert_eq!(spec.shape, vec![3, 3]);
        assert_eq!(count(&[spec]), 9);

        let mut tape = Tape::new();
        let table =
            tape.constant(Tensor::from_rows(&[[9.0, 9.0], [1.0, 2.0], [3.0, 4.0]]).unwrap());
        let out = latent_factor_mapper(&mut tape, table, &[0]).unwrap();
        assert_eq!(tape.value(out).data(), &[9.0, 9.0]);
        let again = latent_factor_mapper(&mut tape, table, &[0]).unwrap();
        assert_eq!(tape.value(out), tape.value(again));
        let err = latent_factor_mapper(&mut tape, table, &[3]).unwrap_err();
        assert!(matches!(
            err,
            BlockError::Tensor(TensorError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn dense_identity_and_zero_input() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[[1.0, -2.0], [0.5, 3.0]]).unwrap());
        let w = tape.constant(Tensor::identity(2));
        let b = tape.constant(Tensor::zeros(&[1, 2]));
        let out = dense_feature_mapper(&mut tape, x, w, b).unwrap();
        assert_eq!(tape.value(out), tape.value(x));

        let zero = tape.constant(Tensor::zeros(&[3, 2]));
        let bias = tape.constant(Tensor::from_rows(&[[0.25, -1.0]]).unwrap());
        let out = dense_feature_mapper(&mut tape, zero, w, bias).unwrap();
        for r in 0..3 {
            assert_eq!(tape.value(out).row(r), &[0.25, -1.0]);
        }
    }

    #[test]
    fn dense_parameter_count() {
        assert_eq!(count(&dense_params(13, 64).unwrap()), 896);
        assert!(matches!(dense_params(13, 0), Err(BlockError::Config(_))));
    }

    #[test]
    fn sparse_mapper_order_and_schema() {
        let mut tape = Tape::new();
        let t0 = tape.constant(Tensor::from_rows(&[[0.0], [1.0], [2.0]]).unwrap());
        let t1 = tape.constant(Tensor::from_rows(&[[0.0], [10.0], [20.0]]).unwrap());
        let c0: &[usize] = &[1, 2];
        let c1: &[usize] = &[2, 1];
        let out = sparse_feature_mapper(&mut tape, &[t0, t1], &[c0, c1]).unwrap();
        assert_eq!(tape.value(out[0]).data(), &[1.0, 2.0]);
        assert_eq!(tape.value(out[1]).data(), &[20.0, 10.0]);

        let swapped = sparse_feature_mapper(&mut tape, &[t1, t0], &[c1, c0]).unwrap();
        assert_eq!(tape.value(swapped[0]), tape.value(out[1]));
        assert_eq!(tape.value(swapped[1]), tape.value(out[0]));

        let single = sparse_feature_mapper(&mut tape, &[t0], &[c0]).unwrap();
        let direct = latent_factor_mapper(&mut tape, t0, c0).unwrap();
        assert_eq!(tape.value(single[0]), tape.value(direct));

        let err = sparse_feature_mapper(&mut tape, &[t0, t1], &[c0]).unwrap_err();
        assert!(matches!(err, BlockError::Schema(_)));
    }

    #[test]
    fn criteo_sized_tables() {
        let specs: Vec<_> = (0..26).map(|_| embedding_table(10, 64)).collect();
        assert!(specs.iter().all(|s| s.shape == vec![11, 64]));
    }
}
