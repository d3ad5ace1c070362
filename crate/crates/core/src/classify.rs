use nalgebra::DMatrix;

/// 1-nearest-neighbor labels for the columns of `queries` under Euclidean
/// distance to the columns of `train`. Ties go to the lowest train index.
pub fn nearest_neighbor(train: &DMatrix<f64>, train_labels: &[usize], queries: &DMatrix<f64>) -> Vec<usize> {
    assert_eq!(train.ncols(), train_labels.len());
    assert_eq!(train.nrows(), queries.nrows());
    queries
        .column_iter()
        .map(|q| {
            let mut best = (f64::INFINITY, 0usize);
            for (i, t) in train.column_iter().enumerate() {
                let d2: f64 = t.iter().zip(q.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                if d2 < best.0 {
                    best = (d2, i);
                }
            }
            train_labels[best.1]
        })
        .collect()
}
