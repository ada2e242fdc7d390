#![allow(dead_code)]

use iacos::encoder::EncoderConfig;
use iacos::model::{Model, ModelConfig};
use iacos::synthetic;
use iacos::tensor::{Graph, ParamId, Var};

pub const FD_EPS: f64 = 1e-3;
pub const GRAD_REL_TOL: f64 = 1e-4;
/// Below this magnitude a gradient entry is compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-4;

pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

/// d = 8 tiny model over the synthetic categories.
pub fn toy_model(seed: u64) -> Model {
    let config = ModelConfig {
        encoder: EncoderConfig {
            tiny_buckets: 64,
            ..EncoderConfig::tiny(8)
        },
        head_count: 2,
        ..Default::default()
    };
    Model::new(config, synthetic::vocab(), seed).unwrap()
}

#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub worst: f64,
    pub worst_at: String,
}

fn eval<F>(model: &Model, loss: &F) -> f64
where
    F: for<'a> Fn(&'a Model) -> (Graph<'a>, Var),
{
    let (g, l) = loss(model);
    g.value(l).item()
}

/// Compares analytic gradients with central differences on up to
/// `per_param` entries of every parameter whose name starts with `prefix`.
pub fn grad_check<F>(model: &mut Model, prefix: &str, per_param: usize, loss: F) -> GradReport
where
    F: for<'a> Fn(&'a Model) -> (Graph<'a>, Var),
{
    let grads = {
        let (g, l) = loss(model);
        g.backward(l)
    };
    let ids: Vec<ParamId> = model.store.trainable_ids(prefix);
    let mut report = GradReport::default();
    for id in ids {
        let n = model.store.get(id).len();
        let step = (n / per_param).max(1);
        for k in (0..n).step_by(step).take(per_param) {
            let analytic = grads.get(id).map_or(0.0, |m| m.data()[k]);
            let orig = model.store.get(id).data()[k];
            model.store.get_mut(id).data_mut()[k] = orig + FD_EPS;
            let up = eval(model, &loss);
            model.store.get_mut(id).data_mut()[k] = orig - FD_EPS;
            let down = eval(model, &loss);
            model.store.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * FD_EPS);
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR);
            report.checked += 1;
            if err > report.worst {
                report.worst = err;
                report.worst_at = format!("{}[{k}] analytic {analytic:e} numeric {numeric:e}", model.store.name(id));
            }
        }
    }
    report
}
