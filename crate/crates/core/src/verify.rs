//! Numerical self-checks used by the test suites and the acceptance run.

use rand::seq::index::sample;

use crate::error::Result;
use crate::network::{LayerKind, Mode, Network, Trace};
use crate::relevance::{lrp_explain, RuleAssignment};
use crate::rng;
use crate::tensor::Tensor;
use crate::train::{backward, cross_entropy_loss};

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub checked: usize,
    pub max_relative_error: f64,
    /// Parameters passed over because a nudge crossed a relu or max-pool kink,
    /// where the loss is not differentiable.
    pub skipped_at_kinks: usize,
    /// `(layer, is_bias, index, analytic, numeric)` of the worst parameter.
    pub worst: Option<(usize, bool, usize, f64, f64)>,
}

/// Relative error with a small absolute floor so vanishing gradients do not
/// divide by zero.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Which side of every relu and max-pool decision a forward pass took.
fn decision_pattern(net: &Network<f64>, trace: &Trace<f64>) -> (Vec<bool>, Vec<usize>) {
    let mut active = Vec::new();
    for (layer, out) in net.layers().iter().zip(&trace.outputs) {
        if layer.kind == LayerKind::Relu {
            active.extend(out.data().iter().map(|&v| v > 0.0));
        }
    }
    let switches = trace.switches.iter().flatten().flatten().copied().collect();
    (active, switches)
}

/// Compares backprop with central differences of the inference-mode loss on
/// `count` parameters drawn without replacement. Parameters whose nudges change
/// a relu or max-pool decision are skipped and replaced by further draws.
pub fn gradient_check(
    net: &Network<f64>,
    input: &Tensor<f64>,
    target: usize,
    count: usize,
    step: f64,
    seed: u64,
) -> Result<GradientCheck> {
    let trace = net.forward(input, Mode::Infer)?;
    let grads = backward(net, &trace, target)?;
    let all: Vec<(usize, bool, usize, f64)> = grads.iter().collect();
    let base = decision_pattern(net, &trace);
    let picks = sample(&mut rng::rng(seed), all.len(), all.len());
    let loss = |n: &Network<f64>| -> Result<(f64, bool)> {
        let t = n.forward(input, Mode::Infer)?;
        let smooth = decision_pattern(n, &t) == base;
        Ok((cross_entropy_loss(&t.probabilities, target)?, smooth))
    };
    let mut report = GradientCheck {
        checked: 0,
        max_relative_error: 0.0,
        skipped_at_kinks: 0,
        worst: None,
    };
    let mut probe = net.clone();
    for p in picks.into_iter() {
        if report.checked == count {
            break;
        }
        let (layer, is_bias, i, analytic) = all[p];
        let original = *param(&mut probe, layer, is_bias, i);
        *param(&mut probe, layer, is_bias, i) = original + step;
        let plus = loss(&probe)?;
        *param(&mut probe, layer, is_bias, i) = original - step;
        let minus = loss(&probe)?;
        *param(&mut probe, layer, is_bias, i) = original;
        let ((plus, smooth_plus), (minus, smooth_minus)) = (plus, minus);
        if !(smooth_plus && smooth_minus) {
            report.skipped_at_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * step);
        let rel = relative_error(analytic, numeric);
        report.checked += 1;
        if report.worst.is_none() || rel > report.max_relative_error {
            report.max_relative_error = rel;
            report.worst = Some((layer, is_bias, i, analytic, numeric));
        }
    }
    Ok(report)
}

fn param(net: &mut Network<f64>, layer: usize, is_bias: bool, i: usize) -> &mut f64 {
    let p = net.params_mut(layer).expect("parameterized layer");
    let t = if is_bias { &mut p.bias } else { &mut p.weight };
    &mut t.data_mut()[i]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConservationCheck {
    pub logit: f64,
    pub relevance_sum: f64,
    pub total_deficit: f64,
    /// Largest `|in − out − deficit|` over the backward steps.
    pub worst_step_imbalance: f64,
}

impl ConservationCheck {
    /// `|Σ R − f_c|` scaled by `max(1, |f_c|)`.
    pub fn relative_gap(&self) -> f64 {
        (self.relevance_sum - self.logit).abs() / self.logit.abs().max(1.0)
    }

    /// Same, after crediting the reported deficits back.
    pub fn reconciled_gap(&self) -> f64 {
        (self.relevance_sum + self.total_deficit - self.logit).abs() / self.logit.abs().max(1.0)
    }
}

pub fn conservation_check(
    net: &Network<f64>,
    input: &Tensor<f64>,
    class: usize,
    assignment: &RuleAssignment,
) -> Result<ConservationCheck> {
    let trace = net.forward(input, Mode::Infer)?;
    let map = lrp_explain(net, &trace, class, assignment)?;
    let worst = map
        .steps
        .iter()
        .map(|s| (s.relevance_in - s.relevance_out - s.deficit).abs())
        .fold(0.0, f64::max);
    Ok(ConservationCheck {
        logit: map.logit,
        relevance_sum: map.sum(),
        total_deficit: map.total_deficit(),
        worst_step_imbalance: worst,
    })
}
