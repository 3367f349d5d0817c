use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, Param};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First-order optimizer over the parameters of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {lr}")));
        }
        Ok(Optimizer {
            kind,
            lr,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        })
    }

    pub fn adam(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::adam(), lr)
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update to every parameter of `net` using its accumulated
    /// gradients, then clears them. Parameters without a gradient are treated
    /// as having a zero gradient.
    pub fn step(&mut self, net: &mut Mlp) -> Result<()> {
        let mut params: Vec<&mut Param> = net.params_mut().collect();
        self.step_params(&mut params)
    }

    pub fn step_params(&mut self, params: &mut [&mut Param]) -> Result<()> {
        for p in params.iter() {
            if let Some(g) = &p.grad {
                if g.dim() != p.value.dim() {
                    return Err(Error::shape(
                        "gradient",
                        format!("{:?}", p.value.dim()),
                        format!("{:?}", g.dim()),
                    ));
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Training {
                        param: p.name.clone(),
                        reason: "non-finite gradient".into(),
                    });
                }
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Array2::zeros(p.value.dim())).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len() {
            return Err(Error::Usage(format!(
                "optimizer tracks {} parameters, got {}",
                self.first.len(),
                params.len()
            )));
        }
        self.steps += 1;
        let t = self.steps as i32;
        for (i, p) in params.iter_mut().enumerate() {
            let Some(g) = p.grad.take() else { continue };
            match self.kind {
                OptimizerKind::Sgd => {
                    p.value.scaled_add(-self.lr, &g);
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    let lr = self.lr;
                    Zip::from(&mut p.value)
                        .and(&mut self.first[i])
                        .and(&mut self.second[i])
                        .and(&g)
                        .for_each(|w, m, v, &g| {
                            *m = beta1 * *m + (1.0 - beta1) * g;
                            *v = beta2 * *v + (1.0 - beta2) * g * g;
                            let m_hat = *m / c1;
                            let v_hat = *v / c2;
                            *w -= lr * m_hat / (v_hat.sqrt() + eps);
                        });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::mlp::{Activation, Dense};
    use ndarray::array;

    fn single_param_net(value: Array2<f64>) -> Mlp {
        let cols = value.ncols();
        Mlp::from_layers(
            vec![Dense {
                weight: Param::new("w", value),
                bias: Param::new("b", Array2::zeros((1, cols))),
            }],
            Activation::Tanh,
            Activation::Identity,
        )
        .unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        for mut opt in [Optimizer::sgd(0.1).unwrap(), Optimizer::adam(0.1).unwrap()] {
            let mut net = single_param_net(array![[1.0, -2.0]]);
            let before = net.clone();
            for p in net.params_mut() {
                p.grad = Some(Array2::zeros(p.value.dim()));
            }
            opt.step(&mut net).unwrap();
            assert_eq!(net, before);
        }
    }

    #[test]
    fn sgd_is_plain_gradient_descent() {
        let mut net = single_param_net(array![[1.0, -2.0]]);
        let g = array![[0.5, -4.0]];
        net.params_mut().next().unwrap().grad = Some(g.clone());
        Optimizer::sgd(0.1).unwrap().step(&mut net).unwrap();
        let w = &net.layers()[0].weight.value;
        assert_eq!(w, &(array![[1.0, -2.0]] - &g * 0.1));
        assert!(net.params().all(|p| p.grad.is_none()));
    }

    #[test]
    fn adam_converges_on_quadratic() {
        // f(p) = ||p - c||^2, gradient 2(p - c).
        let c = array![[0.7, -1.3, 2.0]];
        let mut net = single_param_net(array![[0.0, 0.0, 0.0]]);
        let mut opt = Optimizer::adam(0.1).unwrap();
        for _ in 0..300 {
            let p = net.params_mut().next().unwrap();
            p.grad = Some((&p.value - &c) * 2.0);
            opt.step(&mut net).unwrap();
        }
        let w = &net.layers()[0].weight.value;
        assert!((w - &c).iter().all(|d| d.abs() < 1e-3), "{w:?}");
    }

    #[test]
    fn sgd_converges_in_fifty_steps() {
        let c = array![[0.7, -1.3, 2.0]];
        let mut net = single_param_net(array![[0.0, 0.0, 0.0]]);
        let mut opt = Optimizer::sgd(0.1).unwrap();
        for _ in 0..50 {
            let p = net.params_mut().next().unwrap();
            p.grad = Some((&p.value - &c) * 2.0);
            opt.step(&mut net).unwrap();
        }
        let w = &net.layers()[0].weight.value;
        assert!((w - &c).iter().all(|d| d.abs() < 1e-3), "{w:?}");
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut net = single_param_net(array![[1.0]]);
        net.params_mut().nth(1).unwrap().grad = Some(array![[f64::NAN]]);
        let err = Optimizer::adam(0.01).unwrap().step(&mut net).unwrap_err();
        match err {
            Error::Training { param, .. } => assert_eq!(param, "b"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(net.layers()[0].weight.value, array![[1.0]]);
    }
}
