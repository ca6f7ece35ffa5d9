//! Adam optimizer with bias-corrected first and second moments. State is
//! keyed by parameter name so it survives independently of visit order and
//! can be inspected in tests.

use std::collections::BTreeMap;

use crate::autodiff::param::ParamSet;
use crate::autodiff::tape::Gradients;

#[derive(Clone, Debug)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Serializable optimizer state, ordered by parameter name.
pub struct AdamState {
    pub t: u64,
    /// (parameter name, first moment, second moment)
    pub slots: Vec<(String, Vec<f64>, Vec<f64>)>,
}

pub struct Adam {
    config: AdamConfig,
    slots: BTreeMap<String, Slot>,
    /// Completed steps; bias correction uses t+1 inside `step`.
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            slots: BTreeMap::new(),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn export(&self) -> AdamState {
        AdamState {
            t: self.t,
            slots: self
                .slots
                .iter()
                .map(|(name, s)| (name.clone(), s.m.clone(), s.v.clone()))
                .collect(),
        }
    }

    pub fn from_state(config: AdamConfig, state: AdamState) -> Self {
        Adam {
            config,
            slots: state
                .slots
                .into_iter()
                .map(|(name, m, v)| (name, Slot { m, v }))
                .collect(),
            t: state.t,
        }
    }

    /// Rounds every moment through f32, matching what a checkpoint stores.
    /// Training quantizes at each epoch boundary so that resuming from the
    /// checkpoint continues bit-identically.
    pub fn quantize(&mut self) {
        for slot in self.slots.values_mut() {
            for x in slot.m.iter_mut().chain(slot.v.iter_mut()) {
                *x = *x as f32 as f64;
            }
        }
    }

    /// One update over every parameter in `model`. A parameter that received
    /// no gradient this pass is treated as having gradient zero, so its
    /// moments still decay and two identical parameters with identical
    /// gradients stay identical.
    pub fn step(&mut self, model: &mut dyn ParamSet, grads: &Gradients, lr: f64) {
        self.t += 1;
        let t = self.t as f64;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powf(t);
        let bc2 = 1.0 - beta2.powf(t);
        let slots = &mut self.slots;
        model.visit_mut(&mut |name, param| {
            let g = param.grad(grads).map(|g| g.to_vec());
            let n = param.data().len();
            let slot = slots.entry(name.to_string()).or_insert_with(|| Slot {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            let data = param.data_mut();
            for i in 0..n {
                let gi = g.as_ref().map_or(0.0, |g| g[i]);
                slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * gi;
                slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::param::Parameter;
    use crate::autodiff::tape::Tape;

    struct One {
        w: Parameter,
    }

    impl ParamSet for One {
        fn visit(&self, f: &mut dyn FnMut(&str, &Parameter)) {
            f("w", &self.w);
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Parameter)) {
            f("w", &mut self.w);
        }
    }

    /// First step against hand-evaluated Adam: with fresh moments the
    /// bias-corrected update is exactly lr * g / (|g| + eps) elementwise.
    #[test]
    fn first_step_matches_hand_evaluation() {
        let mut model = One {
            w: Parameter::new(vec![1.0, -2.0], &[2]).unwrap(),
        };
        let tape = Tape::new();
        let w = model.w.tracked(&tape).unwrap();
        // loss = 3*w0 - 0.5*w1 has constant gradient [3.0, -0.5]
        let coef = tensor_of(&[3.0, -0.5]);
        let loss = tape.sum(&tape.mul(&w, &coef).unwrap(), None).unwrap();
        let grads = tape.backward(&loss).unwrap();
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut model, &grads, 0.1);
        let eps = 1e-8;
        let expect0 = 1.0 - 0.1 * 3.0 / (3.0 + eps);
        let expect1 = -2.0 + 0.1 * 0.5 / (0.5 + eps);
        assert!((model.w.data()[0] - expect0).abs() < 1e-12);
        assert!((model.w.data()[1] - expect1).abs() < 1e-12);
        assert_eq!(adam.steps_taken(), 1);
    }

    fn tensor_of(v: &[f64]) -> crate::autodiff::tensor::Tensor {
        crate::autodiff::tensor::Tensor::new(v.to_vec(), &[v.len()]).unwrap()
    }

    /// Identical parameters receiving identical gradients must stay identical
    /// step after step.
    #[test]
    fn twin_parameters_stay_identical() {
        struct Two {
            a: Parameter,
            b: Parameter,
        }
        impl ParamSet for Two {
            fn visit(&self, f: &mut dyn FnMut(&str, &Parameter)) {
                f("a", &self.a);
                f("b", &self.b);
            }
            fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Parameter)) {
                f("a", &mut self.a);
                f("b", &mut self.b);
            }
        }
        let mut model = Two {
            a: Parameter::new(vec![0.5], &[1]).unwrap(),
            b: Parameter::new(vec![0.5], &[1]).unwrap(),
        };
        let mut adam = Adam::new(AdamConfig::default());
        for step in 0..20 {
            let tape = Tape::new();
            let a = model.a.tracked(&tape).unwrap();
            let b = model.b.tracked(&tape).unwrap();
            let c = (step as f64 * 0.3).sin() + 1.5;
            let sum = tape.add(&a, &b).unwrap();
            let loss = tape.sum(&tape.scale(&sum, c).unwrap(), None).unwrap();
            let grads = tape.backward(&loss).unwrap();
            adam.step(&mut model, &grads, 0.01);
            assert_eq!(model.a.data()[0].to_bits(), model.b.data()[0].to_bits());
        }
    }

    /// Quantize, export, restore: the restored optimizer must continue
    /// exactly like the original one continues after quantization.
    #[test]
    fn exported_state_resumes_bit_identically() {
        let mut model = One {
            w: Parameter::new(vec![1.0, -0.5, 2.0], &[3]).unwrap(),
        };
        let mut adam = Adam::new(AdamConfig::default());
        let run_step = |model: &mut One, adam: &mut Adam, k: f64| {
            let tape = Tape::new();
            let w = model.w.tracked(&tape).unwrap();
            let loss = tape.sum(&tape.scale(&tape.mul(&w, &w).unwrap(), k).unwrap(), None).unwrap();
            let grads = tape.backward(&loss).unwrap();
            adam.step(model, &grads, 0.02);
        };
        for i in 0..7 {
            run_step(&mut model, &mut adam, 1.0 + 0.1 * i as f64);
        }
        adam.quantize();
        model.w.quantize();

        let mut twin_model = One {
            w: Parameter::new(model.w.data().to_vec(), &[3]).unwrap(),
        };
        let mut twin = Adam::from_state(AdamConfig::default(), adam.export());
        assert_eq!(twin.steps_taken(), adam.steps_taken());

        run_step(&mut model, &mut adam, 2.5);
        run_step(&mut twin_model, &mut twin, 2.5);
        let bits = |p: &Parameter| p.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&model.w), bits(&twin_model.w));
    }

    /// Adam on a convex quadratic decreases the loss.
    #[test]
    fn quadratic_descends() {
        let mut model = One {
            w: Parameter::new(vec![5.0], &[1]).unwrap(),
        };
        let mut adam = Adam::new(AdamConfig::default());
        let eval = |w: f64| (w - 2.0) * (w - 2.0);
        let start = eval(model.w.data()[0]);
        for _ in 0..200 {
            let tape = Tape::new();
            let w = model.w.tracked(&tape).unwrap();
            let shifted = tape.offset(&w, -2.0).unwrap();
            let loss = tape
                .sum(&tape.mul(&shifted, &shifted).unwrap(), None)
                .unwrap();
            let grads = tape.backward(&loss).unwrap();
            adam.step(&mut model, &grads, 0.05);
        }
        let end = eval(model.w.data()[0]);
        assert!(end < start * 0.01, "start {start}, end {end}");
    }
}
