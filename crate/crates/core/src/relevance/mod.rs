//! Layer-wise relevance propagation over frozen networks, plus gradient-based
//! saliency baselines.
//!
//! Explanation starts at the logits (the softmax is removed), keeps only the
//! explained class and walks the graph in reverse. Linear layers apply their
//! assigned [`Rule`]; pooling is unpooled, concatenations are split by channel
//! range, and relu, dropout and flatten pass relevance through unchanged.
//! Relevance absorbed by biases and stabilizers is reported per layer so the
//! books balance: `Σ input relevance + Σ deficits = f_c(x)`.

mod rules;

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use rules::{propagate_rule, unpool_relevance, LinearView, Rule, DEFAULT_EPSILON, DEFAULT_GAMMA};

use crate::error::{Error, Result};
use crate::network::{LayerKind, Network, Trace};
use crate::tensor::{Real, Tensor};
use crate::train::{backprop, ReluBackward};

/// Which rule each parameterized layer receives.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RuleAssignment {
    rules: BTreeMap<usize, Rule>,
}

impl RuleAssignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn uniform<T: Real>(net: &Network<T>, rule: Rule) -> Self {
        RuleAssignment {
            rules: net.parameterized_layers().map(|id| (id, rule)).collect(),
        }
    }

    pub fn set(&mut self, layer: usize, rule: Rule) -> &mut Self {
        self.rules.insert(layer, rule);
        self
    }

    pub fn get(&self, layer: usize) -> Option<Rule> {
        self.rules.get(&layer).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, Rule)> + '_ {
        self.rules.iter().map(|(&l, &r)| (l, r))
    }

    /// Every parameterized layer must have a valid rule, and nothing else may.
    pub fn validate<T: Real>(&self, net: &Network<T>) -> Result<()> {
        for id in net.parameterized_layers() {
            let rule = self.get(id).ok_or(Error::MissingRule(id))?;
            rule.validate()?;
            if rule == Rule::Passthrough {
                return Err(Error::RuleNotApplicable {
                    layer: id,
                    rule: rule.to_string(),
                });
            }
        }
        for (id, rule) in self.iter() {
            if net.params(id).is_none() {
                return Err(Error::RuleNotApplicable {
                    layer: id,
                    rule: rule.to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Named rule compositions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Flat on the layers reading the raw input, αβ(1,0) on the remaining
    /// convolutions, epsilon on dense layers.
    LrpSpf,
    EpsilonOnly,
    ZPlusOnly,
    Gamma,
    /// The z⁺ rule everywhere, which is Deep Taylor decomposition on relu networks.
    DeepTaylor,
}

pub fn composite_preset<T: Real>(net: &Network<T>, preset: Preset) -> RuleAssignment {
    match preset {
        Preset::EpsilonOnly => RuleAssignment::uniform(net, Rule::Epsilon { eps: DEFAULT_EPSILON }),
        Preset::ZPlusOnly | Preset::DeepTaylor => RuleAssignment::uniform(net, Rule::ZPlus),
        Preset::Gamma => RuleAssignment::uniform(net, Rule::Gamma { gamma: DEFAULT_GAMMA }),
        Preset::LrpSpf => {
            let mut a = RuleAssignment::new();
            for id in net.parameterized_layers() {
                let layer = &net.layers()[id];
                let rule = match layer.kind {
                    _ if layer.inputs == [0] => Rule::Flat,
                    LayerKind::Conv { .. } => Rule::AlphaBeta { alpha: 1.0, beta: 0.0 },
                    _ => Rule::Epsilon { eps: DEFAULT_EPSILON },
                };
                a.set(id, rule);
            }
            a
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaliencyVariant {
    Deconvnet,
    GuidedBackprop,
    GradientXInput,
}

/// Any explanation method the tools can ask for by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Lrp(Preset),
    Saliency(SaliencyVariant),
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Lrp(Preset::LrpSpf),
        Method::Lrp(Preset::EpsilonOnly),
        Method::Lrp(Preset::ZPlusOnly),
        Method::Lrp(Preset::Gamma),
        Method::Lrp(Preset::DeepTaylor),
        Method::Saliency(SaliencyVariant::Deconvnet),
        Method::Saliency(SaliencyVariant::GuidedBackprop),
        Method::Saliency(SaliencyVariant::GradientXInput),
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Lrp(Preset::LrpSpf) => "lrp_spf",
            Method::Lrp(Preset::EpsilonOnly) => "epsilon_only",
            Method::Lrp(Preset::ZPlusOnly) => "zplus_only",
            Method::Lrp(Preset::Gamma) => "gamma",
            Method::Lrp(Preset::DeepTaylor) => "deep_taylor",
            Method::Saliency(SaliencyVariant::Deconvnet) => "deconvnet",
            Method::Saliency(SaliencyVariant::GuidedBackprop) => "guided_backprop",
            Method::Saliency(SaliencyVariant::GradientXInput) => "gradient_x_input",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim())
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(Method::as_str).collect();
                Error::invalid(format!("unknown method {s:?}; valid names: {}", names.join(", ")))
            })
    }
}

/// Bookkeeping for one backward step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStep {
    pub layer: usize,
    pub kind: String,
    pub rule: Option<String>,
    /// Relevance arriving at the layer's output.
    pub relevance_in: f64,
    /// Relevance handed to the layer's inputs.
    pub relevance_out: f64,
    /// Relevance absorbed by biases, stabilizers or empty denominators.
    pub deficit: f64,
}

/// An input-shaped explanation of one class score.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMap<T = f32> {
    pub relevance: Tensor<T>,
    pub class: usize,
    pub method: String,
    /// Rules used, for LRP maps.
    pub assignment: Option<RuleAssignment>,
    pub sample_id: Option<String>,
    /// The explained logit `f_c(x)`.
    pub logit: f64,
    /// Per-layer bookkeeping, in the order layers were visited. Empty for
    /// gradient maps, which make no conservation claim.
    pub steps: Vec<LayerStep>,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    class: usize,
    logit: f64,
    method: &'a str,
    sample_id: Option<&'a str>,
    shape: &'a [usize],
    relevance_sum: f64,
    total_deficit: f64,
    rule_assignment: BTreeMap<String, String>,
    layers: &'a [LayerStep],
}

impl<T: Real> RelevanceMap<T> {
    pub fn sum(&self) -> f64 {
        self.relevance.sum_f64()
    }

    pub fn total_deficit(&self) -> f64 {
        self.steps.iter().map(|s| s.deficit).sum()
    }

    pub fn with_sample_id(mut self, id: impl Into<String>) -> Self {
        self.sample_id = Some(id.into());
        self
    }

    /// CSV with one row per input element. The flat element order is read back
    /// as `frames × sensors`; `channel` is the element's channel in the model
    /// input tensor.
    pub fn to_csv(&self, sensors: usize) -> Result<String> {
        let n = self.relevance.len();
        if sensors == 0 || n % sensors != 0 {
            return Err(Error::invalid(format!(
                "{n} relevance values do not split into rows of {sensors} sensors"
            )));
        }
        let channels = *self.relevance.shape().last().expect("non-empty shape");
        let mut out = String::from("frame,sensor,channel,relevance\n");
        for (i, v) in self.relevance.data().iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{:e}", i / sensors, i % sensors, i % channels, v.as_f64());
        }
        Ok(out)
    }

    pub fn sidecar_json(&self) -> String {
        let sidecar = Sidecar {
            class: self.class,
            logit: self.logit,
            method: &self.method,
            sample_id: self.sample_id.as_deref(),
            shape: self.relevance.shape(),
            relevance_sum: self.sum(),
            total_deficit: self.total_deficit(),
            rule_assignment: self
                .assignment
                .iter()
                .flat_map(|a| a.iter())
                .map(|(l, r)| (l.to_string(), r.to_string()))
                .collect(),
            layers: &self.steps,
        };
        serde_json::to_string_pretty(&sidecar).expect("plain data serializes")
    }
}

fn check_explainable<T: Real>(net: &Network<T>, trace: &Trace<T>, class: usize) -> Result<()> {
    if class >= net.n_classes() {
        return Err(Error::invalid(format!(
            "class {class} out of range for {} classes",
            net.n_classes()
        )));
    }
    let matches = trace.outputs.len() == net.layers().len()
        && net
            .layers()
            .iter()
            .zip(&trace.outputs)
            .all(|(l, o)| l.output_shape == o.shape());
    if !matches {
        return Err(Error::invalid("trace was not produced by this network"));
    }
    if trace.dropout_masks.iter().any(Option::is_some) {
        return Err(Error::invalid("explanations need an inference-mode trace"));
    }
    Ok(())
}

fn sum_f64<T: Real>(v: &[T]) -> f64 {
    v.iter().map(|x| x.as_f64()).sum()
}

/// Explains the logit of `class` with the given rule assignment.
pub fn lrp_explain<T: Real>(
    net: &Network<T>,
    trace: &Trace<T>,
    class: usize,
    assignment: &RuleAssignment,
) -> Result<RelevanceMap<T>> {
    check_explainable(net, trace, class)?;
    assignment.validate(net)?;
    let layers = net.layers();
    let logits = net.logits_layer();
    let mut rel: Vec<Option<Vec<T>>> = vec![None; layers.len()];
    let mut start = vec![T::zero(); trace.logits.len()];
    start[class] = trace.logits[class];
    rel[logits] = Some(start);

    fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, r: Vec<T>) {
        match slot {
            Some(acc) => acc.iter_mut().zip(r).for_each(|(a, b)| *a += b),
            None => *slot = Some(r),
        }
    }

    let mut steps = Vec::new();
    for id in (1..=logits).rev() {
        let Some(r) = rel[id].take() else {
            continue;
        };
        let layer = &layers[id];
        let src = layer.inputs[0];
        let relevance_in = sum_f64(&r);
        let mut rule = None;
        let mut deficit = 0.0;
        let mut relevance_out = relevance_in;
        match &layer.kind {
            LayerKind::Input | LayerKind::Softmax => unreachable!("validated graph"),
            LayerKind::Conv { .. } | LayerKind::Dense { .. } => {
                let chosen = assignment.get(id).ok_or(Error::MissingRule(id))?;
                let view = LinearView::of(net, id)?;
                let (down, d) = propagate_rule(id, &view, trace.outputs[src].data(), &r, chosen)?;
                rule = Some(chosen.to_string());
                deficit = d.as_f64();
                relevance_out = sum_f64(&down);
                accumulate(&mut rel[src], down);
            }
            LayerKind::Pool { mode } => {
                let x = &trace.outputs[src];
                let down = unpool_relevance(x.shape(), x.data(), &r, *mode, trace.switches[id].as_deref())?;
                relevance_out = sum_f64(&down);
                accumulate(&mut rel[src], down);
            }
            LayerKind::Relu | LayerKind::Dropout { .. } | LayerKind::Flatten => {
                accumulate(&mut rel[src], r);
            }
            LayerKind::Concat => {
                let total_c = *layer.output_shape.last().expect("non-empty");
                let mut offset = 0;
                for &i in &layer.inputs {
                    let c = *layers[i].output_shape.last().expect("non-empty");
                    let part: Vec<T> = r
                        .chunks_exact(total_c)
                        .flat_map(|px| px[offset..offset + c].iter().copied())
                        .collect();
                    accumulate(&mut rel[i], part);
                    offset += c;
                }
            }
        }
        steps.push(LayerStep {
            layer: id,
            kind: layer.kind.name().to_string(),
            rule,
            relevance_in,
            relevance_out,
            deficit,
        });
    }
    let input = rel[0]
        .take()
        .unwrap_or_else(|| vec![T::zero(); trace.outputs[0].len()]);
    Ok(RelevanceMap {
        relevance: Tensor::new(net.input_shape(), input)?,
        class,
        method: "lrp".into(),
        assignment: Some(assignment.clone()),
        sample_id: None,
        logit: trace.logits[class].as_f64(),
        steps,
    })
}

/// Backward-signal explanations of the logit of `class`. These make no
/// conservation claim.
pub fn gradient_saliency<T: Real>(
    net: &Network<T>,
    trace: &Trace<T>,
    class: usize,
    variant: SaliencyVariant,
) -> Result<RelevanceMap<T>> {
    check_explainable(net, trace, class)?;
    let mut seed = vec![T::zero(); net.n_classes()];
    seed[class] = T::one();
    let relu = match variant {
        SaliencyVariant::Deconvnet => ReluBackward::Deconvnet,
        SaliencyVariant::GuidedBackprop => ReluBackward::Guided,
        SaliencyVariant::GradientXInput => ReluBackward::Gradient,
    };
    let mut map = backprop(net, trace, &seed, relu, None, true)?.expect("input gradient requested");
    if variant == SaliencyVariant::GradientXInput {
        for (g, &x) in map.data_mut().iter_mut().zip(trace.input().data()) {
            *g *= x;
        }
    }
    Ok(RelevanceMap {
        relevance: map,
        class,
        method: Method::Saliency(variant).to_string(),
        assignment: None,
        sample_id: None,
        logit: trace.logits[class].as_f64(),
        steps: Vec::new(),
    })
}

/// Dispatches a named method.
pub fn explain<T: Real>(
    net: &Network<T>,
    trace: &Trace<T>,
    class: usize,
    method: Method,
) -> Result<RelevanceMap<T>> {
    match method {
        Method::Lrp(preset) => {
            let mut map = lrp_explain(net, trace, class, &composite_preset(net, preset))?;
            map.method = method.to_string();
            Ok(map)
        }
        Method::Saliency(v) => gradient_saliency(net, trace, class, v),
    }
}
