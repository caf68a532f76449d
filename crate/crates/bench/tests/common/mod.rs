use crtre_bench::experiments::HyperCell;

/// Reference grid: selection metrics for every (gamma, lambda, C) cell.
pub fn reference_hyper_table() -> Vec<HyperCell> {
    let blocks: [(f64, [f64; 9], [f64; 9], [f64; 9]); 3] = [
        (
            600.0,
            [1.956, 1.919, 1.996, 1.769, 1.926, 2.003, 1.956, 2.026, 2.073],
            [0.238, 0.179, 0.166, 0.245, 0.187, 0.178, 0.246, 0.199, 0.175],
            [4.943, 4.732, 4.680, 4.854, 4.726, 4.675, 4.951, 4.856, 4.808],
        ),
        (
            800.0,
            [1.954, 2.022, 2.070, 1.784, 2.025, 2.068, 1.960, 2.019, 2.009],
            [0.240, 0.197, 0.172, 0.234, 0.195, 0.176, 0.245, 0.195, 0.174],
            [4.945, 4.859, 4.825, 4.849, 4.860, 4.793, 4.961, 4.858, 4.674],
        ),
        (
            1000.0,
            [1.962, 2.022, 2.075, 1.959, 1.928, 2.073, 1.962, 2.024, 2.006],
            [0.242, 0.196, 0.173, 0.250, 0.187, 0.178, 0.244, 0.189, 0.169],
            [4.938, 4.859, 4.812, 4.950, 4.726, 4.811, 4.947, 4.854, 4.672],
        ),
    ];
    let (lambdas, cs) = ([0.0001, 0.0005, 0.001], [0.0, 0.5, 1.0]);
    let mut cells = Vec::new();
    for (gamma, bs, bv, rmse) in blocks {
        for (k, (lambda, c)) in lambdas.iter().flat_map(|l| cs.iter().map(move |c| (*l, *c))).enumerate() {
            cells.push(HyperCell { gamma, lambda, c, beta_s_error: bs[k], beta_v_error: bv[k], rmse: rmse[k] });
        }
    }
    cells
}
