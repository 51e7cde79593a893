/// First and second moment estimates for [`adam_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> AdamState {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One AdamW update with decoupled weight decay:
/// `p -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)`.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, weight_decay: f64) {
    assert_eq!(params.len(), grads.len(), "adam: params and grads differ in length");
    assert_eq!(params.len(), state.m.len(), "adam: state has the wrong length");
    state.step += 1;
    let b1 = state.beta1;
    let b2 = state.beta2;
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for k in 0..params.len() {
        let g = grads[k];
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g;
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g;
        let m_hat = state.m[k] / c1;
        let v_hat = state.v[k] / c2;
        params[k] -= lr * (m_hat / (v_hat.sqrt() + state.eps) + weight_decay * params[k]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut p = vec![0.3, -1.2];
        let mut s = AdamState::new(2);
        for _ in 0..10 {
            adam_step(&mut p, &[0.0, 0.0], &mut s, 0.01, 0.0);
        }
        assert_eq!(p, vec![0.3, -1.2]);
    }

    #[test]
    fn decoupled_decay_shrinks_geometrically() {
        let mut p = vec![2.0];
        let mut s = AdamState::new(1);
        let lr = 0.05;
        for k in 1..=5 {
            adam_step(&mut p, &[0.0], &mut s, lr, 0.001);
            let want = 2.0 * (1.0f64 - lr * 0.001).powi(k);
            assert!((p[0] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn minimises_square() {
        let mut w = vec![1.0];
        let mut s = AdamState::new(1);
        let mut hit = None;
        for k in 0..2000 {
            let g = 2.0 * w[0];
            adam_step(&mut w, &[g], &mut s, 0.01, 0.0);
            if w[0].abs() < 1e-3 && hit.is_none() {
                hit = Some(k);
            }
        }
        assert!(hit.is_some(), "w = {}", w[0]);
    }
}
