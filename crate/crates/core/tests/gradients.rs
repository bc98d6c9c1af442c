mod support;

use opinion_core::models::Architecture;
use opinion_core::neural::{Differentiable, GRADCHECK_DELTA};
use support::grad::{check_layer, layer_probes, toy_model_case};

const TOLERANCE: f64 = 1e-4;

#[test]
fn every_layer_matches_finite_differences() {
    for seed in 0..20 {
        for mut p in layer_probes(seed) {
            let err = check_layer(&mut p, (seed % 3) as usize);
            assert!(err < TOLERANCE, "{} seed {seed}: {err:e}", p.name);
        }
    }
}

/// Central differences carry roughly 1e-11 of absolute roundoff at this step, so
/// the relative test is applied where the gradient clears that noise by five orders
/// and the absolute gap is bounded everywhere.
#[test]
fn every_architecture_matches_finite_differences_above_roundoff() {
    for arch in Architecture::ALL {
        for seed in 0..20 {
            let (mut m, doc, class) = toy_model_case(arch, seed);
            for p in m.params_mut() {
                p.zero_grad();
            }
            m.accumulate_gradients(&doc, class);
            let n = m.params_mut().len();
            for pi in 0..n {
                for e in 0..m.params_mut()[pi].value.len() {
                    let a = m.params_mut()[pi].grad.as_slice()[e];
                    let o = m.params_mut()[pi].value.as_slice()[e];
                    m.params_mut()[pi].value.as_mut_slice()[e] = o + GRADCHECK_DELTA;
                    let plus = m.loss(&doc, class);
                    m.params_mut()[pi].value.as_mut_slice()[e] = o - GRADCHECK_DELTA;
                    let minus = m.loss(&doc, class);
                    m.params_mut()[pi].value.as_mut_slice()[e] = o;
                    let num = (plus - minus) / (2.0 * GRADCHECK_DELTA);
                    let name = &m.params_mut()[pi].name.clone();
                    assert!((a - num).abs() < 1e-9, "{arch} seed {seed} {name}[{e}]: {a:e} vs {num:e}");
                    if a.abs().max(num.abs()) >= 1e-6 {
                        let rel = (a - num).abs() / a.abs().max(num.abs());
                        assert!(rel < TOLERANCE, "{arch} seed {seed} {name}[{e}]: {rel:e}");
                    }
                }
            }
        }
    }
}
