//! Optimization steps and split evaluation on in-memory batches.

use alloc::vec::Vec;

use crate::autodiff::Var;
use crate::error::{config_err, Error, Result};
use crate::loss::{dice_ce_logits, one_hot};
use crate::metrics::{argmax_channels, ConfusionMatrix};
use crate::model::{ModelState, SecondInput};
use crate::nn::Mode;
use crate::optim::{AdamW, AdamWConfig};
use crate::raster::Batch;
use crate::tensor::Tensor;

/// The inputs `state` consumes from `batch`.
pub fn model_inputs<'a>(state: &ModelState, batch: &'a Batch) -> (Option<&'a Tensor>, Option<&'a Tensor>) {
    let cfg = state.config();
    let x1 = cfg.variant.uses_aerial().then_some(&batch.aerial);
    let x2 = (cfg.variant.uses_second() && cfg.second_input == SecondInput::Satellite).then_some(&batch.satellite);
    let x1 = match (x1, cfg.variant.uses_second(), cfg.second_input) {
        (None, true, SecondInput::DownsampledAerial) => Some(&batch.aerial),
        (x1, _, _) => x1,
    };
    (x1, x2)
}

fn label_shape(batch: &Batch) -> [usize; 3] {
    let [n, _, h, w] = batch.aerial.shape();
    [n, h, w]
}

/// Eval-mode logits for a batch.
pub fn predict(state: &ModelState, batch: &Batch) -> Result<Tensor> {
    let (x1, x2) = model_inputs(state, batch);
    state.infer(x1, x2)
}

/// Result of one optimization step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub loss: f64,
    /// Train-mode predictions against the batch labels.
    pub confusion: ConfusionMatrix,
}

pub struct Trainer {
    state: ModelState,
    opt: AdamW,
    weights: Vec<f64>,
}

impl Trainer {
    pub fn new(state: ModelState, opt: AdamWConfig, class_weights: Vec<f64>) -> Result<Self> {
        if class_weights.len() != state.config().num_classes {
            return Err(config_err!(
                "{} class weights for {} classes",
                class_weights.len(),
                state.config().num_classes
            ));
        }
        let opt = AdamW::new(opt, state.specs())?;
        Ok(Self { state, opt, weights: class_weights })
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn into_state(self) -> ModelState {
        self.state
    }

    pub fn steps(&self) -> u64 {
        self.opt.steps()
    }

    /// One training-mode forward/backward/update.
    pub fn step(&mut self, batch: &Batch) -> Result<StepOutcome> {
        let step = self.opt.steps() + 1;
        let classes = self.state.config().num_classes;
        let target = one_hot(&batch.labels, label_shape(batch), classes)?;
        let (x1, x2) = model_inputs(&self.state, batch);
        let x1 = x1.cloned().map(Var::constant);
        let x2 = x2.cloned().map(Var::constant);
        let mut session = self.state.session(Mode::Train, true);
        let logits = self.state.forward(&mut session, x1.as_ref(), x2.as_ref()).map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(alloc::format!("step {step}: {m}")),
            e => e,
        })?;
        let loss = dice_ce_logits(&logits, &target, &self.weights)?;
        let value = loss.value().data()[0];
        if !value.is_finite() {
            return Err(Error::Numeric(alloc::format!("step {step}: loss is {value}")));
        }
        let mut confusion = ConfusionMatrix::new(classes);
        confusion.accumulate(&argmax_channels(logits.value()), &batch.labels)?;
        drop(logits);
        loss.backward()?;
        let grads = session.gradients(self.state.specs());
        for (g, s) in grads.iter().zip(self.state.specs()) {
            if let Some(g) = g {
                g.ensure_finite(&alloc::format!("step {step}: gradient of {}", s.name))?;
            }
        }
        let updates = session.take_bn_updates();
        drop(session);
        self.opt.step(self.state.tensors_mut(), &grads)?;
        self.state.apply_bn_updates(&updates)?;
        Ok(StepOutcome { loss: value, confusion })
    }
}

/// Confusion matrix and mean loss of eval-mode predictions.
pub fn evaluate<'a>(
    state: &ModelState,
    batches: impl IntoIterator<Item = &'a Batch>,
    class_weights: &[f64],
) -> Result<(ConfusionMatrix, f64)> {
    let classes = state.config().num_classes;
    let mut cm = ConfusionMatrix::new(classes);
    let (mut loss, mut n) = (0.0, 0usize);
    for batch in batches {
        let logits = predict(state, batch)?;
        cm.accumulate(&argmax_channels(&logits), &batch.labels)?;
        let target = one_hot(&batch.labels, label_shape(batch), classes)?;
        let l = dice_ce_logits(&Var::constant(logits), &target, class_weights)?;
        loss += l.value().data()[0] * batch.aerial.batch() as f64;
        n += batch.aerial.batch();
    }
    Ok((cm, if n == 0 { 0.0 } else { loss / n as f64 }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bands::BandSelection;
    use crate::model::{DifdConfig, Variant};
    use crate::raster::{make_batch, normalize_pair};
    use crate::synth::{synth_generate, SynthSpec};

    fn batch(n: usize) -> Batch {
        let pairs: Vec<_> = synth_generate(1, n, &SynthSpec::toy(), BandSelection::B4)
            .unwrap()
            .iter()
            .map(|p| normalize_pair(p).unwrap())
            .collect();
        make_batch(&pairs.iter().collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn loss_decreases_on_a_fixed_batch() {
        let b = batch(2);
        let state = ModelState::init(&DifdConfig::toy(Variant::UpConvT, 4), 3).unwrap();
        let mut t = Trainer::new(state, AdamWConfig::default(), alloc::vec![0.2; 5]).unwrap();
        let first = t.step(&b).unwrap().loss;
        let mut last = first;
        for _ in 0..15 {
            last = t.step(&b).unwrap().loss;
        }
        assert!(last < first, "{first} -> {last}");
        assert_eq!(t.steps(), 16);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let b = batch(2);
        let state = ModelState::init(&DifdConfig::toy(Variant::SatOnly, 4), 3).unwrap();
        let a = evaluate(&state, [&b], &[0.2; 5]).unwrap();
        let c = evaluate(&state, [&b], &[0.2; 5]).unwrap();
        assert_eq!(a, c);
        assert_eq!(a.0.total(), 2 * 64 * 64);
    }

    #[test]
    fn non_finite_input_is_a_numeric_failure() {
        let mut b = batch(1);
        b.aerial.data_mut()[5] = f64::NAN;
        let state = ModelState::init(&DifdConfig::toy(Variant::UpConvT, 4), 3).unwrap();
        let mut t = Trainer::new(state, AdamWConfig::default(), alloc::vec![0.2; 5]).unwrap();
        match t.step(&b) {
            Err(Error::Numeric(m)) => assert!(m.contains("step 1"), "{m}"),
            other => panic!("{other:?}"),
        }
    }
}
