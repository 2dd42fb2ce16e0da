use super::{SubstrateError, Tensor};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Default::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter first/second moment accumulators plus the shared step
/// counter. Moments are indexed by position; callers must keep a stable
/// parameter order across steps.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, shapes: &[Vec<usize>]) -> Self {
        let m: Vec<Tensor> = shapes.iter().map(|s| Tensor::zeros(s)).collect();
        let v = m.clone();
        AdamState { config, step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn param_count(&self) -> usize {
        self.m.len()
    }

    pub fn moments(&self, index: usize) -> (&Tensor, &Tensor) {
        (&self.m[index], &self.v[index])
    }

    /// Restores saved state (checkpoint loading).
    pub fn restore(&mut self, step: u64, m: Vec<Tensor>, v: Vec<Tensor>) -> Result<(), SubstrateError> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(SubstrateError::shape(
                "adam",
                format!("restored moment count {} != {}", m.len(), self.m.len()),
            ));
        }
        for (a, b) in m.iter().zip(&self.m) {
            if a.shape() != b.shape() {
                return Err(SubstrateError::shape("adam", "restored moment shape differs"));
            }
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }

    /// Advances the shared step counter; call once per optimization step
    /// before [`update`](AdamState::update).
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Applies the bias-corrected Adam update to one parameter in place.
    pub fn update(&mut self, index: usize, param: &mut Tensor, grad: &Tensor) -> Result<(), SubstrateError> {
        if param.shape() != grad.shape() {
            return Err(SubstrateError::shape(
                "adam",
                format!("param {:?} vs grad {:?}", param.shape(), grad.shape()),
            ));
        }
        if param.shape() != self.m[index].shape() {
            return Err(SubstrateError::shape(
                "adam",
                format!("param {:?} vs moment {:?}", param.shape(), self.m[index].shape()),
            ));
        }
        let AdamConfig { lr, beta1, beta2, epsilon } = self.config;
        let t = self.step.max(1) as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let m = self.m[index].data_mut();
        let v = self.v[index].data_mut();
        for ((p, g), (mi, vi)) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mi = beta1 * *mi + (1.0 - beta1) * g;
            *vi = beta2 * *vi + (1.0 - beta2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }

    /// One full optimization step over an aligned parameter/gradient list.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<(), SubstrateError> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(SubstrateError::shape(
                "adam",
                format!("{} params, {} grads, {} moments", params.len(), grads.len(), self.m.len()),
            ));
        }
        self.begin_step();
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            self.update(i, p, g)?;
        }
        Ok(())
    }
}
