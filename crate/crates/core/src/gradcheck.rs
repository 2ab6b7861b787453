//! Central finite-difference verification of analytic gradients.
//!
//! Every check compares the gradient produced by [`Graph::backward`] with
//! `(L(θ+h) − L(θ−h)) / 2h` element by element, using the relative error
//! `|a − n| / max(|a|, |n|, floor)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::audio::Spectrogram;
use crate::error::{Error, Result};
use crate::model::{Ablation, ForwardOptions, LgfaConfig, LgfaModel, Variant};
use crate::nn::{Bound, Mlp, ParamStore, SelfAttention, LAYER_NORM_EPS};
use crate::tensor::{Graph, OpKind, Tensor, Var};

pub const PRIMITIVE_TOLERANCE: f64 = 1e-4;
pub const END_TO_END_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Copy, Debug)]
pub struct CheckSettings {
    pub step: f64,
    pub floor: f64,
    /// Corrupts the backward rule of this primitive in the analytic pass.
    pub fault: Option<OpKind>,
}

impl Default for CheckSettings {
    fn default() -> Self {
        CheckSettings {
            step: 1e-4,
            floor: 1e-6,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Input holding the worst element, and its flat index.
    pub worst_input: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub n_checked: usize,
}

pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Checks `build` against finite differences with respect to every input.
///
/// `build` receives one graph variable per input, in order, and must return
/// a scalar.
pub fn check_gradients<F>(
    name: &str,
    inputs: &[(String, Tensor)],
    tolerance: f64,
    settings: CheckSettings,
    build: F,
) -> Result<CheckResult>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let loss = build(&mut g, &vars)?;
        Ok(g.value(loss).data()[0])
    };

    let mut g = Graph::new();
    g.inject_gradient_fault(settings.fault);
    let vars: Vec<Var> = inputs.iter().map(|(_, t)| g.variable(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let mut values: Vec<Tensor> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut result = CheckResult {
        name: name.to_string(),
        max_rel_error: 0.0,
        tolerance,
        passed: true,
        worst_input: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        n_checked: 0,
    };
    for (k, (input_name, _)) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .ok_or_else(|| Error::Usage(format!("no gradient for {input_name}")))?
            .to_vec();
        for (i, &a) in analytic.iter().enumerate() {
            let orig = values[k].data()[i];
            values[k].data_mut()[i] = orig + settings.step;
            let plus = eval(&values)?;
            values[k].data_mut()[i] = orig - settings.step;
            let minus = eval(&values)?;
            values[k].data_mut()[i] = orig;
            let n = (plus - minus) / (2.0 * settings.step);
            let err = relative_error(a, n, settings.floor);
            result.n_checked += 1;
            if err > result.max_rel_error || result.worst_input.is_empty() {
                result.max_rel_error = err;
                result.worst_input = input_name.clone();
                result.worst_index = i;
                result.analytic = a;
                result.numeric = n;
            }
        }
    }
    result.passed = result.max_rel_error.is_finite() && result.max_rel_error < tolerance;
    Ok(result)
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

/// `Σ w ⊙ y` with fixed random weights, so every output element carries a
/// distinct upstream gradient.
fn weighted_sum(g: &mut Graph, y: Var, rng_seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let w = Tensor::uniform(g.shape(y), 1.0, &mut rng);
    let w = g.constant(w);
    let prod = g.mul(y, w)?;
    Ok(g.sum(prod))
}

type Builder = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

struct Case {
    name: &'static str,
    inputs: Vec<(String, Tensor)>,
    build: Builder,
}

fn named(items: Vec<(&str, Tensor)>) -> Vec<(String, Tensor)> {
    items.into_iter().map(|(n, t)| (n.to_string(), t)).collect()
}

fn primitive_cases(seed: u64) -> Result<Vec<Case>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();

    cases.push(Case {
        name: "matmul",
        inputs: named(vec![("a", random(&mut rng, &[3, 4])), ("b", random(&mut rng, &[4, 2]))]),
        build: Box::new(|g, v| {
            let y = g.matmul(v[0], v[1])?;
            weighted_sum(g, y, 1)
        }),
    });
    cases.push(Case {
        name: "matmul_nt",
        inputs: named(vec![("a", random(&mut rng, &[3, 4])), ("b", random(&mut rng, &[5, 4]))]),
        build: Box::new(|g, v| {
            let y = g.matmul_nt(v[0], v[1])?;
            weighted_sum(g, y, 2)
        }),
    });
    cases.push(Case {
        name: "add_bias",
        inputs: named(vec![("x", random(&mut rng, &[3, 4])), ("b", random(&mut rng, &[4]))]),
        build: Box::new(|g, v| {
            let y = g.add_bias(v[0], v[1])?;
            weighted_sum(g, y, 3)
        }),
    });
    cases.push(Case {
        name: "linear",
        inputs: named(vec![
            ("x", random(&mut rng, &[3, 4])),
            ("w", random(&mut rng, &[4, 2])),
            ("b", random(&mut rng, &[2])),
        ]),
        build: Box::new(|g, v| {
            let y = g.linear(v[0], v[1], v[2])?;
            weighted_sum(g, y, 4)
        }),
    });
    cases.push(Case {
        name: "add",
        inputs: named(vec![("a", random(&mut rng, &[2, 3])), ("b", random(&mut rng, &[2, 3]))]),
        build: Box::new(|g, v| {
            let y = g.add(v[0], v[1])?;
            weighted_sum(g, y, 5)
        }),
    });
    cases.push(Case {
        name: "mul",
        inputs: named(vec![("a", random(&mut rng, &[2, 3])), ("b", random(&mut rng, &[2, 3]))]),
        build: Box::new(|g, v| {
            let y = g.mul(v[0], v[1])?;
            weighted_sum(g, y, 6)
        }),
    });
    cases.push(Case {
        name: "scale",
        inputs: named(vec![("x", random(&mut rng, &[2, 3]))]),
        build: Box::new(|g, v| {
            let y = g.scale(v[0], -0.7);
            weighted_sum(g, y, 7)
        }),
    });
    cases.push(Case {
        name: "transpose",
        inputs: named(vec![("x", random(&mut rng, &[2, 3]))]),
        build: Box::new(|g, v| {
            let y = g.transpose(v[0])?;
            weighted_sum(g, y, 8)
        }),
    });
    cases.push(Case {
        name: "reshape",
        inputs: named(vec![("x", random(&mut rng, &[4, 3]))]),
        build: Box::new(|g, v| {
            let y = g.reshape(v[0], &[2, 6])?;
            weighted_sum(g, y, 9)
        }),
    });
    cases.push(Case {
        name: "slice_rows",
        inputs: named(vec![("x", random(&mut rng, &[4, 3]))]),
        build: Box::new(|g, v| {
            let y = g.slice_rows(v[0], 1, 2)?;
            weighted_sum(g, y, 10)
        }),
    });
    cases.push(Case {
        name: "slice_cols",
        inputs: named(vec![("x", random(&mut rng, &[3, 5]))]),
        build: Box::new(|g, v| {
            let y = g.slice_cols(v[0], 2, 2)?;
            weighted_sum(g, y, 11)
        }),
    });
    cases.push(Case {
        name: "concat_rows",
        inputs: named(vec![("a", random(&mut rng, &[1, 3])), ("b", random(&mut rng, &[2, 3]))]),
        build: Box::new(|g, v| {
            let y = g.concat_rows(&[v[0], v[1]])?;
            weighted_sum(g, y, 12)
        }),
    });
    cases.push(Case {
        name: "concat_cols",
        inputs: named(vec![("a", random(&mut rng, &[2, 3])), ("b", random(&mut rng, &[2, 1]))]),
        build: Box::new(|g, v| {
            let y = g.concat_cols(&[v[0], v[1]])?;
            weighted_sum(g, y, 13)
        }),
    });
    let mut gamma = random(&mut rng, &[5]);
    gamma.data_mut().iter_mut().for_each(|v| *v += 1.5);
    cases.push(Case {
        name: "layer_norm",
        inputs: named(vec![
            ("x", random(&mut rng, &[3, 5])),
            ("gamma", gamma),
            ("beta", random(&mut rng, &[5])),
        ]),
        build: Box::new(|g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], LAYER_NORM_EPS)?;
            weighted_sum(g, y, 14)
        }),
    });
    cases.push(Case {
        name: "softmax_rows",
        inputs: named(vec![("x", random(&mut rng, &[3, 4]))]),
        build: Box::new(|g, v| {
            let y = g.softmax_rows(v[0])?;
            weighted_sum(g, y, 15)
        }),
    });
    let mut gelu_in = random(&mut rng, &[3, 4]);
    gelu_in.data_mut().iter_mut().for_each(|v| *v *= 3.0);
    cases.push(Case {
        name: "gelu",
        inputs: named(vec![("x", gelu_in)]),
        build: Box::new(|g, v| {
            let y = g.gelu(v[0]);
            weighted_sum(g, y, 16)
        }),
    });
    cases.push(Case {
        name: "sum",
        inputs: named(vec![("x", random(&mut rng, &[2, 3]))]),
        build: Box::new(|g, v| {
            let sq = g.mul(v[0], v[0])?;
            Ok(g.sum(sq))
        }),
    });
    cases.push(Case {
        name: "mean",
        inputs: named(vec![("x", random(&mut rng, &[2, 3]))]),
        build: Box::new(|g, v| {
            let sq = g.mul(v[0], v[0])?;
            Ok(g.mean(sq))
        }),
    });
    cases.push(Case {
        name: "cross_entropy",
        inputs: named(vec![("logits", random(&mut rng, &[3, 4]))]),
        build: Box::new(|g, v| g.cross_entropy(v[0], &[2, 0, 3])),
    });

    // Composite layers: parameters and input are all checked.
    let mut store = ParamStore::new();
    let attn = SelfAttention::new(&mut store, "attn", 8, 2, &mut rng)?;
    let attn_inputs = layer_inputs(&store, random(&mut rng, &[3, 8]));
    let n_attn = store.len();
    cases.push(Case {
        name: "multi_head_self_attention",
        inputs: attn_inputs,
        build: Box::new(move |g, v| {
            let p = Bound::from_vars(v[..n_attn].to_vec());
            let y = attn.forward(g, &p, v[n_attn])?;
            weighted_sum(g, y, 17)
        }),
    });

    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, "mlp", 4, &mut rng);
    let mlp_inputs = layer_inputs(&store, random(&mut rng, &[4, 4]));
    let n_mlp = store.len();
    cases.push(Case {
        name: "mlp_block",
        inputs: mlp_inputs,
        build: Box::new(move |g, v| {
            let p = Bound::from_vars(v[..n_mlp].to_vec());
            let y = mlp.forward(g, &p, v[n_mlp])?;
            weighted_sum(g, y, 18)
        }),
    });
    Ok(cases)
}

fn layer_inputs(store: &ParamStore, x: Tensor) -> Vec<(String, Tensor)> {
    let mut inputs: Vec<(String, Tensor)> = store
        .iter()
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect();
    inputs.push(("x".to_string(), x));
    inputs
}

/// Every differentiable primitive plus the attention and MLP layers.
pub fn primitive_suite(seed: u64, settings: CheckSettings) -> Result<Vec<CheckResult>> {
    primitive_cases(seed)?
        .into_iter()
        .map(|c| check_gradients(c.name, &c.inputs, PRIMITIVE_TOLERANCE, settings, c.build))
        .collect()
}

fn random_spec(cfg: &LgfaConfig, rng: &mut ChaCha8Rng) -> Result<Spectrogram> {
    let n = cfg.n_mels * cfg.n_frames * cfg.channels;
    let values = (0..n).map(|_| rng.gen_range(-2.0f32..2.0)).collect();
    Spectrogram::new(values, cfg.n_mels, cfg.n_frames, cfg.channels, "gradcheck", 0.01)
}

/// Cross-entropy of the full model on two random samples, differentiated
/// with respect to every parameter.
///
/// Class tokens and position encodings are randomised first so that the
/// check does not run at the special all-zero point.
pub fn end_to_end_check(cfg: &LgfaConfig, seed: u64, settings: CheckSettings) -> Result<CheckResult> {
    let mut model = LgfaModel::new(cfg.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for id in model.learned_offsets() {
        let t = model.params_mut().get_mut(id);
        t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
    }
    let specs = [random_spec(cfg, &mut rng)?, random_spec(cfg, &mut rng)?];
    let labels = [0, cfg.n_classes - 1];
    let inputs: Vec<(String, Tensor)> = model
        .params()
        .iter()
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect();
    let name = format!("lgfa[{}/{}]", cfg.variant, cfg.ablation);
    check_gradients(&name, &inputs, END_TO_END_TOLERANCE, settings, |g, vars| {
        let p = Bound::from_vars(vars.to_vec());
        let mut losses = Vec::new();
        for (spec, &label) in specs.iter().zip(&labels) {
            let out = model.forward_bound(g, &p, spec, ForwardOptions::default())?;
            losses.push(g.cross_entropy(out.logits, &[label])?);
        }
        g.add(losses[0], losses[1])
    })
}

/// Reduced configurations covered by the end-to-end check: the three
/// variants of the nested model and the three single-scale ablations.
pub fn end_to_end_configs() -> Vec<LgfaConfig> {
    let base = LgfaConfig::gradcheck();
    let mut out: Vec<LgfaConfig> = [Variant::TimeOnly, Variant::FrequencyOnly, Variant::TimeFrequency]
        .into_iter()
        .map(|variant| LgfaConfig {
            variant,
            ..base.clone()
        })
        .collect();
    for ablation in [Ablation::FrameOnly, Ablation::SegmentOnly, Ablation::VitSquare] {
        out.push(LgfaConfig {
            ablation,
            ..base.clone()
        });
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub step: f64,
    pub floor: f64,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<36} {:>12} {:>9}  {}\n", "check", "max rel err", "tolerance", "status");
        for c in &self.checks {
            s.push_str(&format!(
                "{:<36} {:>12.3e} {:>9.0e}  {}",
                c.name,
                c.max_rel_error,
                c.tolerance,
                if c.passed { "ok" } else { "FAIL" }
            ));
            if !c.passed {
                s.push_str(&format!(
                    "  worst {}[{}] analytic {:.6e} numeric {:.6e}",
                    c.worst_input, c.worst_index, c.analytic, c.numeric
                ));
            }
            s.push('\n');
        }
        s
    }
}

/// Primitive suite followed by the end-to-end checks.
pub fn run_suite(seed: u64, settings: CheckSettings) -> Result<GradcheckReport> {
    let mut checks = primitive_suite(seed, settings)?;
    for cfg in end_to_end_configs() {
        checks.push(end_to_end_check(&cfg, seed, settings)?);
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(GradcheckReport {
        seed,
        step: settings.step,
        floor: settings.floor,
        checks,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(0.0, 0.0, 1e-6), 0.0);
        assert!((relative_error(1e-9, 0.0, 1e-6) - 1e-3).abs() < 1e-15);
        assert!((relative_error(2.0, 1.0, 1e-6) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn square_passes() {
        let x = Tensor::new(vec![3], vec![0.3, -1.2, 2.0]).unwrap();
        let r = check_gradients(
            "square",
            &[("x".into(), x)],
            PRIMITIVE_TOLERANCE,
            CheckSettings::default(),
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                Ok(g.sum(sq))
            },
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.n_checked, 3);
    }
}
