//! Synthetic datasets with known generating models.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Column, RawTable, Role, Schema};
use crate::hash::rng_for;
use crate::tape::sigmoid;

/// Parameters of the logistic factorization-machine click generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtrSpec {
    pub rows: usize,
    pub fields: usize,
    pub vocab: usize,
    pub dim: usize,
    /// Standard deviation of the latent factors.
    pub factor_std: f64,
    pub bias: f64,
    /// Extra dense columns of pure noise.
    pub dense: usize,
    pub seed: u64,
}

impl Default for CtrSpec {
    fn default() -> Self {
        Self {
            rows: 200_000,
            fields: 10,
            vocab: 50,
            dim: 8,
            factor_std: 0.28,
            bias: -1.5,
            dense: 0,
            seed: 0,
        }
    }
}

/// Generated click log with the true click probability of every row.
#[derive(Debug, Clone)]
pub struct SynthCtr {
    pub spec: CtrSpec,
    /// Per row: label, dense values, then one token per field.
    pub rows: Vec<Vec<String>>,
    pub probabilities: Vec<f64>,
    pub labels: Vec<f64>,
}

/// `P(click) = σ(bias + Σ_{i<j} ⟨v_{i,tᵢ}, v_{j,tⱼ}⟩)` with every token
/// drawn uniformly from its field's vocabulary.
pub fn ctr(spec: CtrSpec) -> SynthCtr {
    let mut rng = rng_for(spec.seed, "synth/ctr");
    let normal = Normal::new(0.0, spec.factor_std).expect("positive std");
    let factors: Vec<Vec<Vec<f64>>> = (0..spec.fields)
        .map(|_| {
            (0..spec.vocab)
                .map(|_| (0..spec.dim).map(|_| normal.sample(&mut rng)).collect())
                .collect()
        })
        .collect();
    let mut rows = Vec::with_capacity(spec.rows);
    let mut probabilities = Vec::with_capacity(spec.rows);
    let mut labels = Vec::with_capacity(spec.rows);
    let mut tokens = vec![0usize; spec.fields];
    let mut sum = vec![0.0; spec.dim];
    for _ in 0..spec.rows {
        for t in tokens.iter_mut() {
            *t = rng.gen_range(0..spec.vocab);
        }
        sum.iter_mut().for_each(|s| *s = 0.0);
        let mut sq = 0.0;
        for (f, &t) in tokens.iter().enumerate() {
            for (k, v) in factors[f][t].iter().enumerate() {
                sum[k] += v;
                sq += v * v;
            }
        }
        let pair = 0.5 * (sum.iter().map(|s| s * s).sum::<f64>() - sq);
        let p = sigmoid(spec.bias + pair);
        let y = if rng.gen::<f64>() < p { 1.0 } else { 0.0 };
        let mut row = Vec::with_capacity(1 + spec.dense + spec.fields);
        row.push(format!("{}", y as u8));
        for _ in 0..spec.dense {
            row.push(format!("{}", rng.gen_range(0..100)));
        }
        for (f, &t) in tokens.iter().enumerate() {
            row.push(format!("f{f}_{t}"));
        }
        rows.push(row);
        probabilities.push(p);
        labels.push(y);
    }
    SynthCtr {
        spec,
        rows,
        probabilities,
        labels,
    }
}

impl SynthCtr {
    pub fn schema(&self) -> Schema {
        let mut columns = vec![Column::new("label", Role::LabelTarget)];
        columns.extend((0..self.spec.dense).map(|i| Column::new(format!("d{i}"), Role::Dense)));
        columns
            .extend((0..self.spec.fields).map(|i| Column::new(format!("f{i}"), Role::Categorical)));
        Schema {
            columns,
            delimiter: "\t".into(),
            header: false,
        }
    }

    pub fn table(&self) -> RawTable {
        RawTable::from_rows(&self.schema(), &self.rows).expect("generated rows match the schema")
    }

    /// Log loss of the generating probabilities on the given rows.
    pub fn bayes_logloss(&self, rows: &[usize]) -> f64 {
        let total: f64 = rows
            .iter()
            .map(|&r| {
                let p = self.probabilities[r];
                if self.labels[r] == 1.0 {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum();
        total / rows.len() as f64
    }

    /// Mean binary entropy of the generating probabilities on the rows.
    pub fn bayes_entropy(&self, rows: &[usize]) -> f64 {
        let total: f64 = rows
            .iter()
            .map(|&r| {
                let p = self.probabilities[r];
                -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
            })
            .sum();
        total / rows.len() as f64
    }

    pub fn write_tsv(&self, path: &Path) -> std::io::Result<()> {
        write_rows(path, &self.rows, "\t")
    }
}

fn write_rows(path: &Path, rows: &[Vec<String>], delimiter: &str) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in rows {
        writeln!(w, "{}", r.join(delimiter))?;
    }
    w.flush()
}

/// Parameters of the explicit-rating generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingSpec {
    pub rows: usize,
    pub users: usize,
    pub items: usize,
    pub dim: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for RatingSpec {
    fn default() -> Self {
        Self {
            rows: 10_000,
            users: 200,
            items: 100,
            dim: 4,
            noise_std: 0.5,
            seed: 0,
        }
    }
}

/// MovieLens-style rows `user::item::rating::timestamp` with ratings
/// `clamp(round(3.5 + ⟨u, v⟩ + ε), 1, 5)`.
pub fn ratings(spec: RatingSpec) -> Vec<Vec<String>> {
    let mut rng = rng_for(spec.seed, "synth/ratings");
    let factor = Normal::new(0.0, (1.0 / spec.dim as f64).sqrt()).expect("positive std");
    let noise = Normal::new(0.0, spec.noise_std.max(1e-12)).expect("positive std");
    let users: Vec<Vec<f64>> = (0..spec.users)
        .map(|_| (0..spec.dim).map(|_| factor.sample(&mut rng)).collect())
        .collect();
    let items: Vec<Vec<f64>> = (0..spec.items)
        .map(|_| (0..spec.dim).map(|_| factor.sample(&mut rng)).collect())
        .collect();
    (0..spec.rows)
        .map(|i| {
            let u = rng.gen_range(0..spec.users);
            let v = rng.gen_range(0..spec.items);
            let dot: f64 = users[u].iter().zip(&items[v]).map(|(a, b)| a * b).sum();
            let r = (3.5 + dot + noise.sample(&mut rng)).round().clamp(1.0, 5.0);
            vec![
                (u + 1).to_string(),
                (v + 1).to_string(),
                format!("{}", r as u8),
                (978_300_000 + i).to_string(),
            ]
        })
        .collect()
}

pub fn write_ratings(path: &Path, rows: &[Vec<String>]) -> std::io::Result<()> {
    write_rows(path, rows, "::")
}
