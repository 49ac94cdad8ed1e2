use crate::param::Param;

/// First and second moment estimates for one parameter list.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

/// Adaptive moment estimation with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub state: AdamState,
}

impl Adam {
    pub fn new(beta1: f32, beta2: f32) -> Self {
        Adam { beta1, beta2, eps: 1e-8, state: AdamState::default() }
    }

    /// Applies one update with learning rate `lr` using the gradients
    /// currently stored in `params`. The parameter order must be stable
    /// across calls.
    pub fn step(&mut self, params: &mut [&mut Param], lr: f32) {
        let st = &mut self.state;
        if st.m.is_empty() {
            st.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            st.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        assert_eq!(st.m.len(), params.len(), "optimizer bound to a different parameter list");
        st.step += 1;
        let t = st.step as i32;
        let bc1 = 1.0 - (self.beta1 as f64).powi(t);
        let bc2 = 1.0 - (self.beta2 as f64).powi(t);
        let step_size = (lr as f64 / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for ((p, m), v) in params.iter_mut().zip(st.m.iter_mut()).zip(st.v.iter_mut()) {
            assert_eq!(m.len(), p.len(), "optimizer state does not match {}", p.name);
            for i in 0..p.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let denom = v[i].sqrt() / bc2_sqrt + eps;
                p.value[i] -= step_size * m[i] / denom;
            }
        }
    }
}
