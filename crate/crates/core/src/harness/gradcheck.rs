//! Finite-difference check of every differentiable layer at tiny shapes.

use crate::autodiff::{BatchNormMode, Faults, GradCheck, Graph, Var};
use crate::capsules::{concrete_dropout_mask, dynamic_route, Activation, ConcreteForm, RoutingOptions};
use crate::error::Result;
use crate::layers::dense_forward;
use crate::siamese::{contrastive_loss, distance, double_margin_loss, Metric};
use crate::tensor::{Init, Tensor};

/// Pass bound on the maximum relative error of any layer.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerReport {
    pub layer: &'static str,
    pub max_rel_error: f64,
}

impl LayerReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    Tensor::new(shape, Init::Uniform { lo, hi, seed }).expect("non-empty shape")
}

/// Weighted sum with fixed pseudo-random weights, so every output element
/// contributes a distinct amount to the scalar.
fn readout<'g>(y: Var<'g>, seed: u64) -> Result<Var<'g>> {
    let w = y.graph().constant(uniform(&y.shape(), -1.0, 1.0, seed));
    Ok(y.mul(w)?.sum_all())
}

type Check = for<'g> fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>;

fn conv<'g>(_: &'g Graph, v: &[Var<'g>]) -> Result<Var<'g>> {
    readout(v[0].conv2d(v[1], v[2], 2, 1)?, 11)
}

fn batch_norm<'g>(_: &'g Graph, v: &[Var<'g>]) -> Result<Var<'g>> {
    let mode = BatchNormMode {
        training: true,
        running_mean: &[0.0; 3],
        running_var: &[1.0; 3],
        eps: 1e-5,
    };
    readout(v[0].batch_norm(v[1], v[2], mode)?.0, 12)
}

fn dense<'g>(_: &'g Graph, v: &[Var<'g>]) -> Result<Var<'g>> {
    readout(dense_forward(v[0], v[1], v[2])?, 13)
}

fn squash<'g>(_: &'g Graph, v: &[Var<'g>]) -> Result<Var<'g>> {
    readout(v[0].squash(2)?, 14)
}

fn routing<'g>(_: &'g Graph, v: &[Var<'g>]) -> Result<Var<'g>> {
    let (out, _) = dynamic_route(v[0], RoutingOptions::new(2, Activation::Squash))?;
    readout(out, 15)
}

fn tanh_capsules<'g>(_: &'g Graph, v: &[Var<'g>]) -> Result<Var<'g>> {
    let votes = v[0].capsule_predict(v[1])?;
    let (out, _) = dynamic_route(votes, RoutingOptions::new(3, Activation::Tanh))?;
    readout(out, 16)
}

fn contrastive<'g>(_: &'g Graph, v: &[Var<'g>]) -> Result<Var<'g>> {
    let d = distance(v[0], v[1], Metric::EuclideanSq)?;
    contrastive_loss(d, &[0, 1, 1, 0, 1], 2.0)
}

fn double_margin<'g>(_: &'g Graph, v: &[Var<'g>]) -> Result<Var<'g>> {
    let d = distance(v[0].l2norm(1)?, v[1].l2norm(1)?, Metric::EuclideanSq)?;
    double_margin_loss(d, &[0, 1, 1, 0, 1], 0.2, 0.5)
}

fn concrete<'g>(_: &'g Graph, v: &[Var<'g>]) -> Result<Var<'g>> {
    let u = uniform(&[3, 4], 0.05, 0.95, 17);
    let mask = concrete_dropout_mask(v[0], &u, 0.5, ConcreteForm::Standard)?;
    readout(v[1].mul(mask)?, 18)
}

fn suite() -> Vec<(&'static str, Check, Vec<Tensor>)> {
    vec![
        ("conv2d", conv, vec![uniform(&[2, 2, 5, 5], -1.0, 1.0, 1), uniform(&[3, 2, 3, 3], -0.5, 0.5, 2), uniform(&[3], -0.1, 0.1, 3)]),
        ("batch_norm", batch_norm, vec![uniform(&[4, 3, 2, 2], -2.0, 2.0, 4), uniform(&[3], 0.5, 1.5, 5), uniform(&[3], -0.5, 0.5, 6)]),
        ("dense", dense, vec![uniform(&[3, 4], -1.0, 1.0, 7), uniform(&[4, 5], -0.5, 0.5, 8), uniform(&[5], -0.1, 0.1, 9)]),
        ("squash", squash, vec![uniform(&[2, 3, 4], -2.0, 2.0, 10)]),
        ("routing_squash_2iter", routing, vec![uniform(&[2, 3, 2, 4], -1.0, 1.0, 19)]),
        ("capsule_layer_tanh", tanh_capsules, vec![uniform(&[2, 3, 4], -1.0, 1.0, 20), uniform(&[3, 2, 4, 5], -0.5, 0.5, 21)]),
        ("contrastive_loss", contrastive, vec![uniform(&[5, 3], -0.7, 0.7, 22), uniform(&[5, 3], -0.7, 0.7, 23)]),
        ("double_margin_loss", double_margin, vec![uniform(&[5, 3], -1.0, 1.0, 24), uniform(&[5, 3], -1.0, 1.0, 25)]),
        ("concrete_dropout", concrete, vec![uniform(&[1, 4], 0.2, 0.8, 26), uniform(&[3, 4], -1.0, 1.0, 27)]),
    ]
}

/// Names of the checked layers, in report order.
pub fn layer_names() -> Vec<&'static str> {
    suite().into_iter().map(|(n, _, _)| n).collect()
}

pub fn run_suite(faults: Faults) -> Result<Vec<LayerReport>> {
    let check = GradCheck {
        eps: 1e-6,
        max_coords: None,
        faults,
    };
    suite()
        .into_iter()
        .map(|(layer, f, inputs)| {
            Ok(LayerReport {
                layer,
                max_rel_error: check.run(f, &inputs)?,
            })
        })
        .collect()
}

/// Human-readable report, one line per layer.
pub fn format_report(reports: &[LayerReport]) -> String {
    let mut out = String::new();
    for r in reports {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        out.push_str(&format!("{:<22} {:.3e}  {verdict}\n", r.layer, r.max_rel_error));
    }
    out
}

