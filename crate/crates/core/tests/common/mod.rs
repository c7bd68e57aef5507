#![allow(dead_code)]

use ldp_quantile::pivot::{PivotKind, PivotTable};

/// A hand-written squared-integral table. Good enough for transport tests,
/// which never look at interval coverage.
pub fn coarse_table() -> PivotTable {
    PivotTable {
        kind: PivotKind::SquaredIntegral,
        alpha: vec![0.05, 0.1, 0.2],
        u: vec![6.73, 5.31, 3.89],
        std_err: vec![0.02, 0.02, 0.02],
        paths: 200_000,
        grid_steps: 4096,
        seed: 0,
    }
}

/// Mean and standard error of a sample.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}
