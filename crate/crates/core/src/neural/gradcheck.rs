use super::Param;

pub const GRADCHECK_DELTA: f64 = 1e-5;

/// A scalar loss over one example with dropout disabled.
pub trait Differentiable {
    type Input;

    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn loss(&self, input: &Self::Input, class: usize) -> f64;

    /// Adds the loss gradient to every [`Param::grad`] and returns the loss.
    fn accumulate_gradients(&mut self, input: &Self::Input, class: usize) -> f64;
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Largest relative error between analytic gradients and central differences over
/// every parameter entry. A model without parameters scores 0.
pub fn gradient_check<M: Differentiable>(model: &mut M, input: &M::Input, class: usize, delta: f64) -> f64 {
    for p in model.params_mut() {
        p.zero_grad();
    }
    model.accumulate_gradients(input, class);
    let analytic: Vec<Vec<f64>> = model
        .params_mut()
        .iter()
        .map(|p| p.grad.as_slice().to_vec())
        .collect();

    let mut worst = 0.0f64;
    for (pi, grads) in analytic.iter().enumerate() {
        for (e, &a) in grads.iter().enumerate() {
            let original = model.params_mut()[pi].value.as_slice()[e];
            model.params_mut()[pi].value.as_mut_slice()[e] = original + delta;
            let plus = model.loss(input, class);
            model.params_mut()[pi].value.as_mut_slice()[e] = original - delta;
            let minus = model.loss(input, class);
            model.params_mut()[pi].value.as_mut_slice()[e] = original;
            let numeric = (plus - minus) / (2.0 * delta);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    worst
}
