//! Comparison baselines and algebraic oracles for meta-mapping.
//!
//! The vector-analogy transformer and the affine least-squares fit ground
//! what a meta-mapping architecture must be able to represent: vector
//! addition is commutative while task transformations are not, and affine
//! maps suffice in coefficient space (with a product-augmented space for
//! squaring).

use autodiff::{Array, Tape};
use domains::poly::{PolyMapping, Polynomial, NUM_MONOMIALS};

use crate::config::{ExperimentConfig, Variant};
use crate::model::{InputBatch, LatentVector, Model, ModelDims};
use crate::CoreError;

/// Analogy-vector transformation: source plus the mean (target - source)
/// difference over the training pairs. Exactly additive-commutative, which
/// is what makes it inadequate for non-commuting mappings.
pub fn vector_analogy_mm(pairs: &[(Array, Array)], source: &Array) -> Array {
    assert!(!pairs.is_empty(), "vector_analogy_mm precondition error: empty pairs");
    let d = source.len();
    let mut offset = vec![0.0; d];
    for (s, t) in pairs {
        for ((o, tv), sv) in offset.iter_mut().zip(t.data()).zip(s.data()) {
            *o += tv - sv;
        }
    }
    let n = pairs.len() as f64;
    let data = source.data().iter().zip(&offset).map(|(s, o)| s + o / n).collect();
    Array::new(source.shape().to_vec(), data)
}

/// An affine map t = A s + c fitted by ridge-regularized least squares.
#[derive(Debug, Clone)]
pub struct AffineMap {
    /// Row-major [out_dim, in_dim].
    pub a: Array,
    pub c: Vec<f64>,
}

impl AffineMap {
    pub fn apply(&self, s: &[f64]) -> Vec<f64> {
        let (m, d) = (self.a.rows(), self.a.cols());
        assert_eq!(s.len(), d);
        (0..m)
            .map(|i| {
                self.c[i]
                    + (0..d).map(|j| self.a.at(i, j) * s[j]).sum::<f64>()
            })
            .collect()
    }
}

/// Solve G X = B for square G via Gaussian elimination with partial
/// pivoting; B holds one right-hand side per column.
fn solve_system(mut g: Vec<Vec<f64>>, mut b: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>, CoreError> {
    let n = g.len();
    let k = b[0].len();
    for col in 0..n {
        let (pivot_row, pivot_val) = (col..n)
            .map(|r| (r, g[r][col].abs()))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        if pivot_val < 1e-300 {
            return Err(CoreError::Io(format!(
                "affine fit solver error: rank-deficient system at column {col}"
            )));
        }
        g.swap(col, pivot_row);
        b.swap(col, pivot_row);
        let diag = g[col][col];
        for r in 0..n {
            if r == col {
                continue;
            }
            let factor = g[r][col] / diag;
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                let v = g[col][c];
                g[r][c] -= factor * v;
            }
            for c in 0..k {
                let v = b[col][c];
                b[r][c] -= factor * v;
            }
        }
    }
    for (r, row) in b.iter_mut().enumerate() {
        for v in row.iter_mut() {
            *v /= g[r][r];
        }
    }
    Ok(b)
}

/// Fit min_A,c sum ||A s + c - t||^2 + lambda ||A||^2 over the pairs.
pub fn affine_fit_mm(
    pairs: &[(Vec<f64>, Vec<f64>)],
    lambda: f64,
) -> Result<AffineMap, CoreError> {
    assert!(!pairs.is_empty(), "affine_fit_mm needs pairs");
    let d = pairs[0].0.len();
    let m = pairs[0].1.len();
    let da = d + 1; // augmented with the bias coordinate

    // normal equations: (S S^T + lambda R) M^T = S T^T with S = [s;1]
    let mut gram = vec![vec![0.0; da]; da];
    let mut rhs = vec![vec![0.0; m]; da];
    for (s, t) in pairs {
        let aug: Vec<f64> = s.iter().copied().chain([1.0]).collect();
        for i in 0..da {
            for j in 0..da {
                gram[i][j] += aug[i] * aug[j];
            }
            for (jj, tv) in t.iter().enumerate() {
                rhs[i][jj] += aug[i] * tv;
            }
        }
    }
    for (i, row) in gram.iter_mut().enumerate().take(d) {
        row[i] += lambda; // no penalty on the bias coordinate
    }

    let mt = solve_system(gram, rhs)?; // [da, m]
    let mut a = vec![0.0; m * d];
    let mut c = vec![0.0; m];
    for i in 0..m {
        for j in 0..d {
            a[i * d + j] = mt[j][i];
        }
        c[i] = mt[d][i];
    }
    Ok(AffineMap { a: Array::matrix(m, d, a), c })
}

/// Mean per-element squared residual of the fit over the pairs.
pub fn affine_residual(map: &AffineMap, pairs: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (s, t) in pairs {
        let pred = map.apply(s);
        for (p, tv) in pred.iter().zip(t) {
            total += (p - tv) * (p - tv);
            count += 1;
        }
    }
    total / count as f64
}

/// Coefficient-space features: the 15 monomial coefficients.
pub fn poly_features(p: &Polynomial) -> Vec<f64> {
    p.coeffs.to_vec()
}

/// Product-augmented features: the 15 coefficients plus all 120 unordered
/// pairwise coefficient products (including squares). Squaring becomes
/// linear in this space.
pub fn poly_features_augmented(p: &Polynomial) -> Vec<f64> {
    let mut v = p.coeffs.to_vec();
    for i in 0..NUM_MONOMIALS {
        for j in i..NUM_MONOMIALS {
            v.push(p.coeffs[i] * p.coeffs[j]);
        }
    }
    v
}

/// Exhaustive coefficient-space pairs for a mapping: the 15 basis monomials,
/// the zero polynomial, and random samples for conditioning.
pub fn mapping_pairs(
    mapping: &PolyMapping,
    extra: &[Polynomial],
    augmented: bool,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut sources: Vec<Polynomial> = Vec::new();
    sources.push(Polynomial::zero());
    for i in 0..NUM_MONOMIALS {
        let mut c = [0.0; NUM_MONOMIALS];
        c[i] = 1.0;
        sources.push(Polynomial::from_coeffs(c));
    }
    sources.extend_from_slice(extra);
    sources
        .into_iter()
        .filter(|p| mapping.applicable_to(p))
        .map(|p| {
            let t = mapping.apply(&p).expect("applicability filtered");
            let feat = if augmented { poly_features_augmented(&p) } else { poly_features(&p) };
            (feat, poly_features(&t))
        })
        .collect()
}

/// Score a target task using the untransformed source representation: the
/// no-adaptation baseline. Returns the mean squared error of the
/// predictions against the targets.
pub fn no_adaptation_eval(
    model: &Model,
    z_source: &LatentVector,
    inputs: &InputBatch,
    targets: &Array,
) -> f64 {
    let pred = model.predict(z_source, inputs);
    let mut tape = Tape::new();
    let p = tape.leaf(pred);
    let t = tape.leaf(targets.clone());
    let loss = tape.mse(p, t);
    tape.value(loss).item()
}

/// Construct a model of the requested architecture variant.
pub fn build_variant(
    cfg: &ExperimentConfig,
    variant: Variant,
    input_dim: usize,
    target_dim: usize,
    output_dim: usize,
    vocab: &[String],
    seed: u64,
) -> Model {
    let dims = ModelDims::from_config(cfg, input_dim, target_dim, output_dim);
    Model::new(dims, variant, vocab, seed)
}
