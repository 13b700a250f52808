//! Property-based invariant checks over randomized inputs.

use jarf::eval::{accuracy, cohen_kappa, macro_f1};
use jarf::linalg::{dot_col, sym_eigen, transform, trace_mean, Matrix, SymMatrix};
use proptest::prelude::*;

fn finite_f64() -> impl Strategy<Value = f64> {
    (-100.0f64..100.0).prop_filter("finite", |v| v.is_finite())
}

fn sym_matrix(max_d: usize) -> impl Strategy<Value = SymMatrix> {
    (1..=max_d).prop_flat_map(|d| {
        prop::collection::vec(finite_f64(), d * d).prop_map(move |vals| {
            let mut s = SymMatrix::zeros(d);
            for i in 0..d {
                for j in i..d {
                    // Symmetrize by using the same source value for (i,j) and (j,i).
                    s.set(i, j, vals[i * d + j]);
                    s.set(j, i, vals[i * d + j]);
                }
            }
            s
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Each entry of the batched transform matches the dot product with the
    /// corresponding matrix column bit-for-bit (identical summation order).
    #[test]
    fn transform_matches_per_column_dot(
        s in sym_matrix(8),
        rows in prop::collection::vec(prop::collection::vec(finite_f64(), 8), 1..12),
    ) {
        let d = s.size;
        let trimmed: Vec<Vec<f64>> = rows.iter().map(|r| r[..d].to_vec()).collect();
        let x = Matrix::from_rows(&trimmed);
        let h = s.to_matrix();
        let out = transform(&x, &h).unwrap();
        for i in 0..x.rows {
            for j in 0..d {
                let direct = dot_col(x.row(i), &h, j);
                prop_assert_eq!(out.get(i, j).to_bits(), direct.to_bits());
            }
        }
    }

    /// Identity transform returns the input unchanged.
    #[test]
    fn transform_identity_is_noop(
        rows in prop::collection::vec(prop::collection::vec(finite_f64(), 5), 1..10),
    ) {
        let x = Matrix::from_rows(&rows);
        let out = transform(&x, &Matrix::identity(5)).unwrap();
        prop_assert_eq!(&out.data, &x.data);
    }

    /// Eigendecomposition reconstructs the input, the basis is orthonormal,
    /// and the eigenvalue sum matches the trace.
    #[test]
    fn eigen_reconstruction_and_orthonormality(s in sym_matrix(8)) {
        let d = s.size;
        let dec = sym_eigen(&s).unwrap();
        let scale = s.frobenius().max(1.0);
        let u = &dec.eigenvectors;
        let lam = Matrix::from_rows(
            &(0..d)
                .map(|i| {
                    let mut r = vec![0.0; d];
                    r[i] = dec.eigenvalues[i];
                    r
                })
                .collect::<Vec<_>>(),
        );
        let recon = u.matmul(&lam).unwrap().matmul(&u.transpose()).unwrap();
        for i in 0..d {
            for j in 0..d {
                prop_assert!((recon.get(i, j) - s.get(i, j)).abs() <= 1e-9 * scale);
            }
        }
        let gram = u.transpose().matmul(u).unwrap();
        for i in 0..d {
            for j in 0..d {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((gram.get(i, j) - want).abs() <= 1e-10);
            }
        }
        let eig_sum: f64 = dec.eigenvalues.iter().sum();
        prop_assert!((eig_sum - trace_mean(&s) * d as f64).abs() <= 1e-9 * scale);
    }

    /// Classification metrics stay in range, and perfect agreement on a
    /// non-degenerate label vector scores exactly 1 across the board.
    #[test]
    fn classification_metric_ranges(
        y_true in prop::collection::vec(0usize..4, 2..80),
        y_pred_seed in prop::collection::vec(0usize..4, 2..80),
    ) {
        let n = y_true.len().min(y_pred_seed.len());
        let yt = &y_true[..n];
        let yp = &y_pred_seed[..n];
        let acc = accuracy(yt, yp).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
        let f1 = macro_f1(yt, yp).unwrap();
        prop_assert!((0.0..=1.0).contains(&f1));
        let k = cohen_kappa(yt, yp).unwrap();
        prop_assert!((-1.0..=1.0).contains(&k));
        if yt.iter().any(|&v| v != yt[0]) {
            prop_assert_eq!(cohen_kappa(yt, yt).unwrap(), 1.0);
            prop_assert_eq!(accuracy(yt, yt).unwrap(), 1.0);
            // Macro F1 averages over all classes up to the max label, so an
            // absent class pulls it below 1 even under perfect agreement.
            let max = *yt.iter().max().unwrap();
            if (0..=max).all(|c| yt.contains(&c)) {
                prop_assert_eq!(macro_f1(yt, yt).unwrap(), 1.0);
            }
        }
    }
}
