use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{LayerKind, Network};
use crate::tensor::{pool_output_shape, pool_window, ConvGeometry, PoolMode, Real};

/// Default relative stabilizer of the epsilon rule.
pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_GAMMA: f64 = 0.25;

/// Per-layer relevance redistribution rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Rule {
    /// Stabilized proportional split. `eps` is relative: the stabilizer added to a
    /// denominator `z` is `eps · mean|z| · sign(z)` over the layer.
    Epsilon { eps: f64 },
    /// Positive and negative contributions split separately, weighted `α` and `β`.
    AlphaBeta { alpha: f64, beta: f64 },
    ZPlus,
    /// Positive contributions boosted by a factor `1 + γ`.
    Gamma { gamma: f64 },
    /// Uniform over every connected input, ignoring weights and activations.
    Flat,
    Passthrough,
}

impl Rule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Rule::Epsilon { eps } if !(eps >= 0.0 && eps.is_finite()) => {
                Err(Error::invalid(format!("epsilon must be finite and non-negative, got {eps}")))
            }
            Rule::Gamma { gamma } if !(gamma >= 0.0 && gamma.is_finite()) => {
                Err(Error::invalid(format!("gamma must be finite and non-negative, got {gamma}")))
            }
            Rule::AlphaBeta { alpha, beta } => {
                if !(beta >= 0.0) || !((alpha - beta) - 1.0).abs().le(&1e-12) {
                    Err(Error::invalid(format!(
                        "alpha-beta rule needs alpha - beta = 1 and beta >= 0, got ({alpha}, {beta})"
                    )))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::Epsilon { eps } => write!(f, "epsilon({eps})"),
            Rule::AlphaBeta { alpha, beta } => write!(f, "alphabeta({alpha},{beta})"),
            Rule::ZPlus => f.write_str("zplus"),
            Rule::Gamma { gamma } => write!(f, "gamma({gamma})"),
            Rule::Flat => f.write_str("flat"),
            Rule::Passthrough => f.write_str("passthrough"),
        }
    }
}

impl FromStr for Rule {
    type Err = Error;

    /// Parses the [`Display`](fmt::Display) form; bare `epsilon` and `gamma` take defaults.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = match s.split_once('(') {
            Some((name, rest)) => {
                let args = rest
                    .strip_suffix(')')
                    .ok_or_else(|| Error::invalid(format!("unbalanced parentheses in rule {s:?}")))?;
                let args = args
                    .split(',')
                    .map(|a| {
                        a.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::invalid(format!("bad number {a:?} in rule {s:?}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                (name.trim(), args)
            }
            None => (s, Vec::new()),
        };
        let rule = match (name, args.as_slice()) {
            ("epsilon", []) => Rule::Epsilon { eps: DEFAULT_EPSILON },
            ("epsilon", &[eps]) => Rule::Epsilon { eps },
            ("alphabeta", &[alpha, beta]) => Rule::AlphaBeta { alpha, beta },
            ("zplus", []) => Rule::ZPlus,
            ("gamma", []) => Rule::Gamma { gamma: DEFAULT_GAMMA },
            ("gamma", &[gamma]) => Rule::Gamma { gamma },
            ("flat", []) => Rule::Flat,
            ("passthrough", []) => Rule::Passthrough,
            _ => {
                return Err(Error::invalid(format!(
                    "unknown rule {s:?}; expected epsilon[(e)], alphabeta(a,b), zplus, gamma[(g)], flat or passthrough"
                )))
            }
        };
        rule.validate()?;
        Ok(rule)
    }
}

/// A conv or dense layer seen as the linear map `z_k = Σ_j a_j·w_jk + b_k`.
pub struct LinearView<'a, T> {
    shape: LinearShape,
    weight: &'a [T],
    bias: &'a [T],
}

enum LinearShape {
    Dense { inputs: usize, outputs: usize },
    Conv { geo: ConvGeometry, out_w: usize },
}

impl<'a, T: Real> LinearView<'a, T> {
    pub fn of(net: &'a Network<T>, layer: usize) -> Result<Self> {
        let l = &net.layers()[layer];
        let params = net.params(layer);
        let shape = match (&l.kind, params) {
            (&LayerKind::Dense { inputs, outputs }, Some(_)) => LinearShape::Dense { inputs, outputs },
            (
                &LayerKind::Conv {
                    kernel_h,
                    kernel_w,
                    in_channels,
                    out_channels,
                    stride,
                    padding,
                },
                Some(_),
            ) => {
                let input_shape = &net.layers()[l.inputs[0]].output_shape;
                let geo = ConvGeometry::new(
                    input_shape,
                    &[kernel_h, kernel_w, in_channels, out_channels],
                    stride,
                    padding,
                )?;
                let out_w = geo.output_shape()[1];
                LinearShape::Conv { geo, out_w }
            }
            _ => {
                return Err(Error::invalid(format!(
                    "layer {layer} ({}) is not a linear layer",
                    l.kind.name()
                )))
            }
        };
        let p = params.expect("checked above");
        Ok(LinearView {
            shape,
            weight: p.weight.data(),
            bias: p.bias.data(),
        })
    }

    pub fn n_outputs(&self) -> usize {
        match &self.shape {
            LinearShape::Dense { outputs, .. } => *outputs,
            LinearShape::Conv { geo, .. } => geo.output_shape().iter().product(),
        }
    }

    pub fn bias(&self, k: usize) -> T {
        match &self.shape {
            LinearShape::Dense { .. } => self.bias[k],
            LinearShape::Conv { geo, .. } => self.bias[k % geo.out_channels],
        }
    }

    /// Calls `f(j, w_jk)` for every input `j` connected to output `k`.
    pub fn for_each_input(&self, k: usize, mut f: impl FnMut(usize, T)) {
        match &self.shape {
            LinearShape::Dense { inputs, outputs } => {
                for j in 0..*inputs {
                    f(j, self.weight[j * outputs + k]);
                }
            }
            LinearShape::Conv { geo, out_w } => {
                let cout = geo.out_channels;
                let o = k % cout;
                let px = k / cout;
                geo.for_each_tap(px / out_w, px % out_w, |in_off, k_off| {
                    for ci in 0..geo.in_channels {
                        f(in_off + ci, self.weight[k_off + ci * cout + o]);
                    }
                });
            }
        }
    }
}

fn pos<T: Real>(v: T) -> T {
    v.max(T::zero())
}

fn neg<T: Real>(v: T) -> T {
    v.min(T::zero())
}

/// Redistributes `relevance` (one value per output of `view`) onto the inputs
/// `activations`. Returns the input relevance and the relevance that was not
/// passed down (absorbed by biases, stabilizers or empty denominators).
pub fn propagate_rule<T: Real>(
    layer: usize,
    view: &LinearView<'_, T>,
    activations: &[T],
    relevance: &[T],
    rule: Rule,
) -> Result<(Vec<T>, T)> {
    rule.validate()?;
    let n_out = view.n_outputs();
    if relevance.len() != n_out {
        return Err(Error::ShapeMismatch {
            op: "propagate_rule",
            left: vec![relevance.len()],
            right: vec![n_out],
        });
    }
    if rule == Rule::Passthrough {
        return Err(Error::RuleNotApplicable {
            layer,
            rule: rule.to_string(),
        });
    }
    let zero = T::zero();
    let one = T::one();
    let mut out = vec![zero; activations.len()];
    let mut deficit = zero;

    let stabilizer_scale = match rule {
        Rule::Epsilon { eps } if eps > 0.0 => {
            let mut total = zero;
            for k in 0..n_out {
                let mut z = view.bias(k);
                view.for_each_input(k, |j, w| z += activations[j] * w);
                total += z.abs();
            }
            T::lit(eps) * total / T::lit(n_out as f64)
        }
        _ => zero,
    };

    for (k, &r) in relevance.iter().enumerate() {
        if r == zero {
            continue;
        }
        let b = view.bias(k);
        match rule {
            Rule::Passthrough => unreachable!("rejected above"),
            Rule::Epsilon { .. } | Rule::Gamma { .. } => {
                let g = match rule {
                    Rule::Gamma { gamma } => T::lit(gamma),
                    _ => zero,
                };
                let contribution = |z: T| z + g * pos(z);
                let mut s = zero;
                view.for_each_input(k, |j, w| s += contribution(activations[j] * w));
                let z = s + contribution(b);
                let sign = if z >= zero { one } else { -one };
                let den = z + stabilizer_scale * sign;
                if den == zero {
                    return Err(Error::ZeroDenominator { layer });
                }
                let scale = r / den;
                view.for_each_input(k, |j, w| out[j] += contribution(activations[j] * w) * scale);
                deficit += r - s * scale;
            }
            Rule::ZPlus => {
                let mut s = zero;
                view.for_each_input(k, |j, w| s += pos(activations[j] * w));
                let den = s + pos(b);
                if den == zero {
                    deficit += r;
                    continue;
                }
                view.for_each_input(k, |j, w| out[j] += pos(activations[j] * w) / den * r);
                deficit += r - s / den * r;
            }
            Rule::AlphaBeta { alpha, beta } => {
                let (alpha, beta) = (T::lit(alpha), T::lit(beta));
                let mut sp = zero;
                let mut sn = zero;
                view.for_each_input(k, |j, w| {
                    let z = activations[j] * w;
                    sp += pos(z);
                    sn += neg(z);
                });
                let dp = sp + pos(b);
                let dn = sn + neg(b);
                // One-sided neurons route all relevance through the side that
                // exists; without a negative side (β = 0) this reduces to z⁺.
                let (wp, wn) = if dp != zero && (dn != zero || beta == zero) {
                    (alpha, beta)
                } else if dp != zero {
                    (one, zero)
                } else if dn != zero && beta != zero {
                    (zero, -one)
                } else {
                    deficit += r;
                    continue;
                };
                let mut passed = zero;
                if wp != zero {
                    view.for_each_input(k, |j, w| out[j] += wp * (pos(activations[j] * w) / dp) * r);
                    passed += wp * (sp / dp) * r;
                }
                if wn != zero {
                    view.for_each_input(k, |j, w| out[j] -= wn * (neg(activations[j] * w) / dn) * r);
                    passed -= wn * (sn / dn) * r;
                }
                deficit += r - passed;
            }
            Rule::Flat => {
                let mut count = 0usize;
                view.for_each_input(k, |_, _| count += 1);
                if count == 0 {
                    deficit += r;
                    continue;
                }
                let share = r / T::lit(count as f64);
                view.for_each_input(k, |j, _| out[j] += share);
            }
        }
    }
    Ok((out, deficit))
}

/// Maps relevance on a pooled tensor back onto the pooling input.
///
/// Max pooling hands each window's relevance to the recorded winner. Average
/// pooling splits it in proportion to the input activations, uniformly when the
/// window sums to zero.
pub fn unpool_relevance<T: Real>(
    input_shape: &[usize],
    activations: &[T],
    relevance: &[T],
    mode: PoolMode,
    switches: Option<&[usize]>,
) -> Result<Vec<T>> {
    let &[h, w, c] = input_shape else {
        return Err(Error::InvalidShape {
            shape: input_shape.to_vec(),
            reason: "expected rank 3 [H, W, C]".into(),
        });
    };
    let [oh, ow, _] = pool_output_shape(h, w, c);
    if relevance.len() != oh * ow * c || activations.len() != h * w * c {
        return Err(Error::ShapeMismatch {
            op: "unpool_relevance",
            left: vec![relevance.len(), activations.len()],
            right: vec![oh * ow * c, h * w * c],
        });
    }
    let mut out = vec![T::zero(); h * w * c];
    match mode {
        PoolMode::Max => {
            let sw = switches.ok_or_else(|| Error::invalid("max unpooling needs the forward switches"))?;
            if sw.len() != relevance.len() {
                return Err(Error::invalid("switch count does not match the pooled relevance"));
            }
            for (&idx, &r) in sw.iter().zip(relevance) {
                out[idx] += r;
            }
        }
        PoolMode::Avg => {
            let quarter = T::lit(0.25);
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let r = relevance[(oy * ow + ox) * c + ch];
                        if r == T::zero() {
                            continue;
                        }
                        let cells = pool_window(h, w, c, oy, ox, ch);
                        let s: T = cells.iter().map(|&i| activations[i]).sum();
                        for idx in cells {
                            out[idx] += if s == T::zero() {
                                r * quarter
                            } else {
                                activations[idx] / s * r
                            };
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Architecture, GraphBuilder};
    use crate::tensor::{Padding, Tensor};
    use proptest::prelude::*;

    fn dense_net(inputs: usize, outputs: usize, w: Vec<f64>, b: Vec<f64>) -> Network<f64> {
        let mut g = GraphBuilder::new(&[1, 1, inputs]);
        let f = g.flatten(0).unwrap();
        let d = g.dense(f, outputs).unwrap();
        // A two-way head keeps the graph valid; the layer under test is `d`.
        let head = g.dense(d, 2).unwrap();
        g.softmax(head).unwrap();
        let mut net = g.finish::<f64>(Architecture::Custom, 0).unwrap();
        let p = net.params_mut(d).unwrap();
        p.weight = Tensor::new(&[inputs, outputs], w).unwrap();
        p.bias = Tensor::new(&[outputs], b).unwrap();
        net
    }

    fn conv_net(shape: [usize; 3], out: usize, seed: u64) -> Network<f64> {
        let mut g = GraphBuilder::new(&shape);
        let c = g.conv(0, (3, 3), out, Padding::Same).unwrap();
        let f = g.flatten(c).unwrap();
        let d = g.dense(f, 2).unwrap();
        g.softmax(d).unwrap();
        let mut net = g.finish::<f64>(Architecture::Custom, 0).unwrap();
        net.init_parameters(seed);
        net
    }

    #[test]
    fn zplus_dense_example() {
        // a = [1, 1], w = [[2], [3]], R_out = 5 → [2, 3].
        let net = dense_net(2, 1, vec![2.0, 3.0], vec![0.0]);
        let view = LinearView::of(&net, 2).unwrap();
        let (r, deficit) = propagate_rule(2, &view, &[1.0, 1.0], &[5.0], Rule::ZPlus).unwrap();
        assert_eq!(r, vec![2.0, 3.0]);
        assert_eq!(deficit, 0.0);
    }

    #[test]
    fn flat_splits_uniformly() {
        let net = dense_net(4, 1, vec![0.1, -5.0, 2.0, 0.0], vec![0.3]);
        let view = LinearView::of(&net, 2).unwrap();
        let (r, deficit) = propagate_rule(2, &view, &[0.0, 1.0, 7.0, -2.0], &[8.0], Rule::Flat).unwrap();
        assert_eq!(r, vec![2.0, 2.0, 2.0, 2.0]);
        assert_eq!(deficit, 0.0);
    }

    #[test]
    fn flat_on_conv_counts_in_bounds_taps() {
        // A 3×3 same-padded kernel at a corner of a 2×2 single-channel input sees 4 taps.
        let net = conv_net([2, 2, 1], 1, 3);
        let view = LinearView::of(&net, 1).unwrap();
        let rel = [4.0, 0.0, 0.0, 0.0];
        let (r, _) = propagate_rule(1, &view, &[1.0; 4], &rel, Rule::Flat).unwrap();
        assert_eq!(r, vec![1.0; 4]);
    }

    #[test]
    fn bias_deficits_are_exact() {
        let net = dense_net(2, 1, vec![2.0, -1.0], vec![1.0]);
        let view = LinearView::of(&net, 2).unwrap();
        let a = [1.0, 1.0];
        // z⁺ denominator 2 + 1 = 3: inputs get 2/3·6 = 4, bias keeps 2.
        let (r, d) = propagate_rule(2, &view, &a, &[6.0], Rule::ZPlus).unwrap();
        assert_eq!((r[0], r[1], d), (4.0, 0.0, 2.0));
        // z = 2 − 1 + 1 = 2 with no stabilizer: [2, −1]·6/2 = [6, −3], bias keeps 3.
        let (r, d) = propagate_rule(2, &view, &a, &[6.0], Rule::Epsilon { eps: 0.0 }).unwrap();
        assert_eq!((r[0], r[1], d), (6.0, -3.0, 3.0));
    }

    #[test]
    fn epsilon_zero_denominator_names_layer() {
        let net = dense_net(2, 1, vec![1.0, -1.0], vec![0.0]);
        let view = LinearView::of(&net, 2).unwrap();
        let err = propagate_rule(2, &view, &[1.0, 1.0], &[1.0], Rule::Epsilon { eps: 0.0 }).unwrap_err();
        assert!(matches!(err, Error::ZeroDenominator { layer: 2 }));
        // The default relative stabilizer cannot rescue a layer whose every z is 0.
        assert!(propagate_rule(2, &view, &[1.0, 1.0], &[1.0], Rule::Epsilon { eps: 1e-6 }).is_err());
        // z⁺ drops the neuron instead.
        let (r, d) = propagate_rule(2, &view, &[0.0, 1.0], &[1.0], Rule::ZPlus).unwrap();
        assert_eq!((r, d), (vec![0.0, 0.0], 1.0));
    }

    #[test]
    fn alphabeta_one_sided_fallback_conserves() {
        let net = dense_net(2, 1, vec![2.0, 3.0], vec![0.0]);
        let view = LinearView::of(&net, 2).unwrap();
        let (r, d) =
            propagate_rule(2, &view, &[1.0, 1.0], &[5.0], Rule::AlphaBeta { alpha: 2.0, beta: 1.0 }).unwrap();
        assert_eq!((r, d), (vec![2.0, 3.0], 0.0));
        let (r, d) =
            propagate_rule(2, &view, &[-1.0, -1.0], &[5.0], Rule::AlphaBeta { alpha: 2.0, beta: 1.0 }).unwrap();
        assert_eq!((r, d), (vec![2.0, 3.0], 0.0));
    }

    #[test]
    fn alphabeta_two_one_by_hand() {
        // Contributions [2, −1]: positives get 2·R·2/2 = 2R, negatives −1·R·(−1)/(−1) = −R.
        let net = dense_net(2, 1, vec![2.0, -1.0], vec![0.0]);
        let view = LinearView::of(&net, 2).unwrap();
        let (r, d) =
            propagate_rule(2, &view, &[1.0, 1.0], &[3.0], Rule::AlphaBeta { alpha: 2.0, beta: 1.0 }).unwrap();
        assert_eq!(r, vec![6.0, -3.0]);
        assert_eq!(d, 0.0);
    }

    #[test]
    fn rule_text_round_trip() {
        for rule in [
            Rule::Epsilon { eps: 0.25 },
            Rule::AlphaBeta { alpha: 2.0, beta: 1.0 },
            Rule::ZPlus,
            Rule::Gamma { gamma: 0.5 },
            Rule::Flat,
            Rule::Passthrough,
        ] {
            assert_eq!(rule.to_string().parse::<Rule>().unwrap(), rule);
        }
        assert_eq!("epsilon".parse::<Rule>().unwrap(), Rule::Epsilon { eps: DEFAULT_EPSILON });
        assert!("alphabeta(2,2)".parse::<Rule>().is_err());
        assert!("alphabeta(0.5,-0.5)".parse::<Rule>().is_err());
        assert!("lrp".parse::<Rule>().is_err());
    }

    #[test]
    fn unpool_examples() {
        let shape = [2, 2, 1];
        let r = unpool_relevance(&shape, &[1.0, 9.0, 3.0, 2.0], &[5.0], PoolMode::Max, Some(&[1])).unwrap();
        assert_eq!(r, vec![0.0, 5.0, 0.0, 0.0]);
        let r = unpool_relevance(&shape, &[1.0; 4], &[4.0], PoolMode::Avg, None).unwrap();
        assert_eq!(r, vec![1.0; 4]);
        let r = unpool_relevance(&shape, &[3.0, 1.0, 0.0, 0.0], &[4.0], PoolMode::Avg, None).unwrap();
        assert_eq!(r, vec![3.0, 1.0, 0.0, 0.0]);
        let r = unpool_relevance(&shape, &[0.0; 4], &[4.0], PoolMode::Avg, None).unwrap();
        assert_eq!(r, vec![1.0; 4]);
        assert!(unpool_relevance(&shape, &[0.0; 4], &[4.0], PoolMode::Max, None).is_err());
    }

    #[test]
    fn unpool_odd_extent_conserves() {
        let shape = [3, 3, 1];
        let a: Vec<f64> = (1..=9).map(f64::from).collect();
        let r = unpool_relevance(&shape, &a, &[1.0, 2.0, 3.0, 4.0], PoolMode::Avg, None).unwrap();
        assert!((r.iter().sum::<f64>() - 10.0).abs() < 1e-12);
    }

    fn layer_case() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
        (1usize..6, 1usize..5).prop_flat_map(|(n_in, n_out)| {
            (
                Just(n_in),
                Just(n_out),
                prop::collection::vec(-2.0f64..2.0, n_in * n_out),
                prop::collection::vec(-1.0f64..1.0, n_out),
                prop::collection::vec(-3.0f64..3.0, n_in),
                prop::collection::vec(-4.0f64..4.0, n_out),
            )
        })
    }

    proptest! {
        #[test]
        fn alphabeta_one_zero_is_zplus((n_in, n_out, w, b, a, r) in layer_case()) {
            let net = dense_net(n_in, n_out, w, b);
            let view = LinearView::of(&net, 2).unwrap();
            let zp = propagate_rule(2, &view, &a, &r, Rule::ZPlus).unwrap();
            let ab = propagate_rule(2, &view, &a, &r, Rule::AlphaBeta { alpha: 1.0, beta: 0.0 }).unwrap();
            prop_assert_eq!(zp.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            ab.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(zp.1.to_bits(), ab.1.to_bits());
        }

        #[test]
        fn gamma_zero_is_epsilon_zero((n_in, n_out, w, b, a, r) in layer_case()) {
            let a: Vec<f64> = a.iter().map(|v| v.abs() + 0.01).collect();
            let net = dense_net(n_in, n_out, w, b);
            let view = LinearView::of(&net, 2).unwrap();
            let g = propagate_rule(2, &view, &a, &r, Rule::Gamma { gamma: 0.0 });
            let e = propagate_rule(2, &view, &a, &r, Rule::Epsilon { eps: 0.0 });
            match (g, e) {
                (Ok(g), Ok(e)) => {
                    prop_assert_eq!(g.0, e.0);
                    prop_assert_eq!(g.1, e.1);
                }
                (g, e) => prop_assert_eq!(g.is_err(), e.is_err()),
            }
        }

        #[test]
        fn conserving_rules_account_for_everything((n_in, n_out, w, b, a, r) in layer_case()) {
            let net = dense_net(n_in, n_out, w, b);
            let view = LinearView::of(&net, 2).unwrap();
            let total: f64 = r.iter().sum();
            for rule in [Rule::ZPlus, Rule::Flat, Rule::AlphaBeta { alpha: 2.0, beta: 1.0 }, Rule::Epsilon { eps: 1e-6 }] {
                let Ok((out, deficit)) = propagate_rule(2, &view, &a, &r, rule) else { continue };
                let passed: f64 = out.iter().sum();
                prop_assert!((passed + deficit - total).abs() <= 1e-9 * (1.0 + total.abs()),
                    "{}: {} + {} vs {}", rule, passed, deficit, total);
            }
        }

        #[test]
        fn conv_view_matches_forward(seed in any::<u64>(), x in prop::collection::vec(-1.0f64..1.0, 5 * 4 * 2)) {
            let net = conv_net([5, 4, 2], 3, seed);
            let input = Tensor::new(&[5, 4, 2], x).unwrap();
            let trace = net.forward(&input, crate::network::Mode::Infer).unwrap();
            let view = LinearView::of(&net, 1).unwrap();
            for (k, &z) in trace.outputs[1].data().iter().enumerate() {
                let mut s = view.bias(k);
                view.for_each_input(k, |j, w| s += input.data()[j] * w);
                prop_assert!((s - z).abs() < 1e-12);
            }
        }
    }
}
