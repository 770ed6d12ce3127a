use super::OUTPUTS;

/// Mean absolute error over the outputs of one example.
pub fn l1_loss(pred: &[f64; OUTPUTS], target: &[f64; OUTPUTS]) -> f64 {
    pred.iter()
        .zip(target)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / OUTPUTS as f64
}

/// Loss and its gradient with respect to `pred`. The subgradient at
/// pred == target is 0.
pub fn l1_loss_grad(pred: &[f64; OUTPUTS], target: &[f64; OUTPUTS]) -> (f64, [f64; OUTPUTS]) {
    let scale = 1.0 / OUTPUTS as f64;
    let grad = std::array::from_fn(|k| {
        let d = pred[k] - target[k];
        if d > 0.0 {
            scale
        } else if d < 0.0 {
            -scale
        } else {
            0.0
        }
    });
    (l1_loss(pred, target), grad)
}
