//! Per-component gradient verification used by the `gradcheck` command and
//! the test suites. Everything runs in f64 on inputs drawn from [−1, 1].

use crate::blocks::{BsmeBlock, RseBlock, SeBlock};
use crate::error::Result;
use crate::gradcheck::{check_graph_fn, GradCheckConfig, GradCheckReport};
use crate::init::SplitMix64;
use crate::loss::{temporal_weights, tw_mpjpe_loss, WeightScheme, DEFAULT_ALPHA};
use crate::network::{Model, ModelHyper};
use crate::params::{Graph, ParamStore};
use crate::tape::Var;
use crate::tensor::{Dims, Tensor};

/// Pass threshold on the maximum relative error.
pub const GRAD_TOL: f64 = 1e-3;
/// Seeds per component.
pub const SUITE_SEEDS: u64 = 5;

pub const COMPONENTS: [&str; 8] = [
    "se",
    "rse",
    "bsme",
    "level_feature",
    "aggregate",
    "decode",
    "full_model",
    "tw_mpjpe_loss",
];

const C: usize = 4;
const JOINTS: usize = 5;

/// Model configuration of the full-model check.
pub fn suite_hyper() -> ModelHyper {
    ModelHyper {
        frames: 4,
        horizon: 2,
        joints: JOINTS,
        channels: C,
        kernel: 3,
        enc_layers: 1,
        dec_layers: 1,
        stack_len: 2,
        ..ModelHyper::default()
    }
}

#[derive(Clone, Debug)]
pub struct ComponentCheck {
    pub component: &'static str,
    pub report: GradCheckReport,
}

impl ComponentCheck {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < GRAD_TOL
    }
}

fn uniform(dims: Dims, rng: &mut SplitMix64) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| rng.uniform(-1.0, 1.0))
}

/// Scalar readout `Σ r ⊙ y` with a fixed random `r`, so every output
/// element contributes with its own weight.
fn readout(g: &mut Graph<'_, f64>, y: Var, rng: &mut SplitMix64) -> Result<Var> {
    let dims = g.dims(y);
    let r = g.constant(uniform(dims, rng));
    let p = g.mul(y, r)?;
    Ok(g.sum(p))
}

fn feature_dims() -> Dims {
    Dims::new(1, C, JOINTS, 3)
}

fn check_component(component: &str, seed: u64, coords: usize) -> Result<GradCheckReport> {
    let config = |seed, only| GradCheckConfig {
        seed,
        only,
        max_coords_per_param: coords,
        ..GradCheckConfig::default()
    };
    let mut rng = SplitMix64::keyed(seed, component);
    let x = uniform(feature_dims(), &mut rng);
    let readout_seed = rng.next_u64();
    let fresh = || SplitMix64::new(readout_seed);
    match component {
        "se" => {
            let mut s = ParamStore::new();
            let se = SeBlock::create(&mut s, "se", C, C, 3, seed)?;
            check_graph_fn(
                &s,
                |g| {
                    let xv = g.input(x.clone());
                    let y = se.forward(g, xv)?;
                    readout(g, y, &mut fresh())
                },
                &config(seed, None),
            )
        }
        "rse" => {
            let mut s = ParamStore::new();
            let rse = RseBlock::create(&mut s, "rse", C, 3, seed)?;
            check_graph_fn(
                &s,
                |g| {
                    let xv = g.input(x.clone());
                    let y = rse.forward(g, xv)?;
                    readout(g, y, &mut fresh())
                },
                &config(seed, None),
            )
        }
        "bsme" => {
            let mut s = ParamStore::new();
            let b = BsmeBlock::create(&mut s, "bsme", C, 3, 2, true, seed)?;
            let (cur, extra) = (
                uniform(feature_dims(), &mut rng),
                uniform(feature_dims(), &mut rng),
            );
            check_graph_fn(
                &s,
                |g| {
                    let (p, c, e) = (
                        g.input(x.clone()),
                        g.input(cur.clone()),
                        g.input(extra.clone()),
                    );
                    let y = b.forward(g, p, c, e)?;
                    readout(g, y, &mut fresh())
                },
                &config(seed, None),
            )
        }
        "level_feature" => {
            let m = Model::<f64>::new(suite_hyper(), seed)?;
            let outs: Vec<_> = (0..2).map(|_| uniform(feature_dims(), &mut rng)).collect();
            let only = m.layout.traj_convs[0].param_ids().to_vec();
            check_graph_fn(
                &m.params,
                |g| {
                    let ov: Vec<Var> = outs.iter().map(|o| g.input(o.clone())).collect();
                    let y = m.level_feature(g, 0, &ov)?;
                    readout(g, y, &mut fresh())
                },
                &config(seed, Some(only)),
            )
        }
        "aggregate" => {
            let m = Model::<f64>::new(suite_hyper(), seed)?;
            let feats: Vec<_> = (0..m.hyper.levels())
                .map(|_| uniform(feature_dims(), &mut rng))
                .collect();
            let only = m.layout.agg.iter().flat_map(|l| l.param_ids()).collect();
            check_graph_fn(
                &m.params,
                |g| {
                    let fv: Vec<Var> = feats.iter().map(|f| g.input(f.clone())).collect();
                    let (y, _) = m.aggregate(g, &fv)?;
                    readout(g, y, &mut fresh())
                },
                &config(seed, Some(only)),
            )
        }
        "decode" => {
            let m = Model::<f64>::new(suite_hyper(), seed)?;
            let only = (0..m.hyper.horizon)
                .flat_map(|i| m.decoder_param_ids(i))
                .collect();
            check_graph_fn(
                &m.params,
                |g| {
                    let f = g.input(x.clone());
                    let poses = m.decode(g, f)?;
                    let y = g.concat_channels(&poses)?;
                    readout(g, y, &mut fresh())
                },
                &config(seed, Some(only)),
            )
        }
        "full_model" => {
            let m = Model::<f64>::new(suite_hyper(), seed)?;
            let window = uniform(m.input_dims(1), &mut rng);
            let target = uniform(m.output_dims(1), &mut rng);
            let w = temporal_weights(m.hyper.horizon, DEFAULT_ALPHA, WeightScheme::Exp)?;
            check_graph_fn(
                &m.params,
                |g| {
                    let trace = m.forward(g, &window)?;
                    tw_mpjpe_loss(g, trace.prediction, &target, &w)
                },
                &config(seed, None),
            )
        }
        "tw_mpjpe_loss" => {
            let dims = Dims::new(2, 3, JOINTS, 3);
            let mut s = ParamStore::new();
            let pred = s.insert("pred", uniform(dims, &mut rng))?;
            let target = uniform(dims, &mut rng);
            let w = temporal_weights(3, DEFAULT_ALPHA, WeightScheme::Exp)?;
            check_graph_fn(
                &s,
                |g| {
                    let p = g.param(pred);
                    tw_mpjpe_loss(g, p, &target, &w)
                },
                &config(seed, None),
            )
        }
        other => Err(crate::error::Error::Config(format!(
            "unknown gradient component {other:?}"
        ))),
    }
}

/// Worst report over [`SUITE_SEEDS`] seeds starting at `seed`, checking at
/// most `coords` coordinates per parameter tensor.
pub fn check(component: &'static str, seed: u64, coords: usize) -> Result<ComponentCheck> {
    let mut worst: Option<GradCheckReport> = None;
    for s in seed..seed + SUITE_SEEDS {
        let r = check_component(component, s, coords)?;
        let checked = worst.as_ref().map_or(0, |w| w.checked) + r.checked;
        let skipped = worst.as_ref().map_or(0, |w| w.skipped_kinks) + r.skipped_kinks;
        let mut next = match worst {
            Some(w) if w.max_rel_error >= r.max_rel_error => w,
            _ => r,
        };
        next.checked = checked;
        next.skipped_kinks = skipped;
        worst = Some(next);
    }
    Ok(ComponentCheck {
        component,
        report: worst.expect("at least one seed"),
    })
}

/// Every component in [`COMPONENTS`] order.
pub fn run_all(seed: u64, coords: usize) -> Result<Vec<ComponentCheck>> {
    COMPONENTS.iter().map(|c| check(c, seed, coords)).collect()
}
