use super::{ParamStore, Tape, Var};
use crate::error::Result;

/// Compares reverse-mode gradients of a scalar loss with central finite
/// differences. Returns the worst per-parameter relative error
/// `|g - n| / (|g| + |n|)` measured in the L2 norm over each tensor.
pub fn gradient_check<F>(store: &ParamStore, eps: f64, loss: F) -> Result<f64>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = loss(store, &mut tape)?;
    let analytic = tape.backward(out)?.for_params(&tape, store);
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let v = loss(s, &mut t)?;
        Ok(t.value(v).get(0, 0))
    };
    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    for id in store.ids() {
        let n = store.get(id).data().len();
        let mut diff = 0.0;
        let mut scale = 0.0;
        for k in 0..n {
            let original = store.get(id).data()[k];
            probe.get_mut(id).data_mut()[k] = original + eps;
            let plus = eval(&probe)?;
            probe.get_mut(id).data_mut()[k] = original - eps;
            let minus = eval(&probe)?;
            probe.get_mut(id).data_mut()[k] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            let g = analytic[id.0].data()[k];
            diff += (g - numeric).powi(2);
            scale += g.powi(2) + numeric.powi(2);
        }
        let denom = scale.sqrt();
        if denom > 1e-12 {
            worst = worst.max(diff.sqrt() / denom);
        }
    }
    Ok(worst)
}
