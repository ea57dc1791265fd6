//! SGD with Nesterov momentum for model weights, Adam for morphism
//! parameters. Both operate on lists of flat parameter slices so they work
//! for the whole network and for a single θ alike.

#[derive(Clone, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SgdState {
    pub config: SgdConfig,
    velocity: Vec<Vec<f64>>,
}

impl SgdState {
    pub fn new(config: SgdConfig) -> Self {
        SgdState {
            config,
            velocity: Vec::new(),
        }
    }

    /// One Nesterov step: `g ← g + wd·x; v ← μv + g; x ← x − lr(g + μv)`.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), grads.len(), "parameter and gradient lists differ");
        if self.velocity.len() != params.len()
            || self.velocity.iter().zip(params.iter()).any(|(v, p)| v.len() != p.len())
        {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        let SgdConfig {
            lr,
            momentum,
            weight_decay,
        } = self.config;
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            assert_eq!(p.len(), g.len());
            for ((x, &gi), vi) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                let d = gi + weight_decay * *x;
                *vi = momentum * *vi + d;
                *x -= lr * (d + momentum * *vi);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Bias-corrected Adam update.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), grads.len(), "parameter and gradient lists differ");
        if self.m.len() != params.len() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
            self.step = 0;
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(p.len(), g.len());
            for (((x, &gi), mi), vi) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *x -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sgd_once(state: &mut SgdState, x: &mut f64, g: f64) {
        let mut p = [*x];
        state.step(&mut [&mut p[..]], &[&[g]]);
        *x = p[0];
    }

    #[test]
    fn sgd_zero_everything_is_noop() {
        let mut s = SgdState::new(SgdConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        });
        let mut x = 1.25;
        sgd_once(&mut s, &mut x, 0.0);
        assert_eq!(x, 1.25);
    }

    #[test]
    fn sgd_plain_step() {
        let mut s = SgdState::new(SgdConfig {
            lr: 0.5,
            momentum: 0.0,
            weight_decay: 0.0,
        });
        let mut x = 1.0;
        sgd_once(&mut s, &mut x, 0.25);
        assert_eq!(x, 1.0 - 0.5 * 0.25);
    }

    #[test]
    fn sgd_matches_reference_recursion() {
        let (lr, mu, wd) = (0.1, 0.9, 1e-2);
        let grads = [0.3, -0.7, 0.2];
        let mut s = SgdState::new(SgdConfig {
            lr,
            momentum: mu,
            weight_decay: wd,
        });
        let mut x = 2.0;
        let (mut rx, mut rv) = (2.0f64, 0.0f64);
        for g in grads {
            sgd_once(&mut s, &mut x, g);
            let d = g + wd * rx;
            rv = mu * rv + d;
            rx -= lr * (d + mu * rv);
            assert!((x - rx).abs() <= 1e-15);
        }
    }

    #[test]
    fn adam_zero_gradient_first_step_is_noop() {
        let mut a = AdamState::new(AdamConfig::default());
        let mut p = [3.0];
        a.step(&mut [&mut p[..]], &[&[0.0]]);
        assert_eq!(p[0], 3.0);
    }

    #[test]
    fn adam_first_step_has_magnitude_lr() {
        let mut a = AdamState::new(AdamConfig::default());
        let mut p = [1.0, -1.0];
        a.step(&mut [&mut p[..]], &[&[5.0, -0.01]]);
        assert!((p[0] - (1.0 - 1e-2)).abs() < 1e-8);
        assert!((p[1] - (-1.0 + 1e-2)).abs() < 1e-5);
    }

    #[test]
    fn adam_matches_reference_recursion() {
        let cfg = AdamConfig::default();
        let grads = [0.5, -0.2, 0.9, 0.0, -1.3];
        let mut a = AdamState::new(cfg.clone());
        let mut p = [0.7];
        let (mut x, mut m, mut v) = (0.7f64, 0.0f64, 0.0f64);
        for (t, g) in grads.iter().enumerate() {
            a.step(&mut [&mut p[..]], &[&[*g]]);
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let mh = m / (1.0 - cfg.beta1.powi(t as i32 + 1));
            let vh = v / (1.0 - cfg.beta2.powi(t as i32 + 1));
            x -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
            assert!((p[0] - x).abs() <= 1e-12);
        }
    }
}
