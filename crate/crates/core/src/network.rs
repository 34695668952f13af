//! The full predictor: shared per-frame encoder, multi-grained trajectory
//! pyramid, per-level trajectory features, learned multi-granularity
//! aggregation and one decoder per predicted step.

use std::fmt;

use crate::blocks::{act, run_stack, BsmeBlock, SeBlock, SQRT_HALF};
use crate::error::{Error, Result};
use crate::params::{Conv, Graph, Linear, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::schedule::{build_schedule, LevelSchedule, NodeKind, NodeRef};
use crate::tape::Var;
use crate::tensor::{Dims, Tensor};

/// Hidden widths of the aggregation FC stack.
pub const AGG_HIDDEN: [usize; 2] = [128, 64];

/// Structural ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Ablation {
    /// Sum level outputs instead of concatenating and convolving them.
    pub ted_off: bool,
    /// Use the top level feature alone instead of the weighted sum.
    pub amg_off: bool,
    /// Drop the BSME shortcut convs.
    pub rc_off: bool,
    /// Feed zeros into every BSME extra interface.
    pub ei_off: bool,
}

impl Ablation {
    pub fn bits(&self) -> u32 {
        self.ted_off as u32
            | (self.amg_off as u32) << 1
            | (self.rc_off as u32) << 2
            | (self.ei_off as u32) << 3
    }

    pub fn from_bits(bits: u32) -> Result<Self> {
        if bits & !0xf != 0 {
            return Err(Error::Config(format!("unknown ablation bits {bits:#x}")));
        }
        Ok(Ablation {
            ted_off: bits & 1 != 0,
            amg_off: bits & 2 != 0,
            rc_off: bits & 4 != 0,
            ei_off: bits & 8 != 0,
        })
    }

    /// Parses one of `ted`, `amg`, `rc`, `ei` and switches it on.
    pub fn enable(&mut self, tag: &str) -> Result<()> {
        match tag {
            "ted" => self.ted_off = true,
            "amg" => self.amg_off = true,
            "rc" => self.rc_off = true,
            "ei" => self.ei_off = true,
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation {other:?} (expected ted, amg, rc or ei)"
                )))
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelHyper {
    /// Observed frames T.
    pub frames: usize,
    /// Predicted frames T'.
    pub horizon: usize,
    pub joints: usize,
    pub channels: usize,
    pub kernel: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    /// BSME current-input stack length n.
    pub stack_len: usize,
    pub ablation: Ablation,
}

impl Default for ModelHyper {
    fn default() -> Self {
        ModelHyper {
            frames: 10,
            horizon: 10,
            joints: 22,
            channels: 64,
            kernel: 3,
            enc_layers: 1,
            dec_layers: 1,
            stack_len: 2,
            ablation: Ablation::default(),
        }
    }
}

impl ModelHyper {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.frames < 2 {
            return fail(format!("frames must be >= 2, got {}", self.frames));
        }
        if self.horizon == 0 {
            return fail("horizon must be >= 1".into());
        }
        if self.joints == 0 || self.channels == 0 {
            return fail("joints and channels must be positive".into());
        }
        if self.kernel.is_multiple_of(2) {
            return fail(format!("kernel size must be odd, got {}", self.kernel));
        }
        if self.stack_len == 0 {
            return fail("BSME stack length must be >= 1".into());
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.frames - 1
    }
}

impl fmt::Display for ModelHyper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "T={} T'={} joints={} C={} k={} l_en={} l_de={} n={} ablation={:#x}",
            self.frames,
            self.horizon,
            self.joints,
            self.channels,
            self.kernel,
            self.enc_layers,
            self.dec_layers,
            self.stack_len,
            self.ablation.bits()
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decoder {
    pub layers: Vec<SeBlock>,
    pub out: Conv,
}

/// Parameter handles of every sub-network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelLayout {
    pub enc_in: Conv,
    pub enc_layers: Vec<SeBlock>,
    /// One shared parameter set per pyramid level.
    pub pyramid: Vec<BsmeBlock>,
    /// Per-level trajectory conv (empty with `ted_off`).
    pub traj_convs: Vec<Conv>,
    /// Aggregation FCs (empty with `amg_off`).
    pub agg: Vec<Linear>,
    pub decoders: Vec<Decoder>,
}

/// Model parameters together with their structure.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub hyper: ModelHyper,
    pub schedule: LevelSchedule,
    pub layout: ModelLayout,
    pub params: ParamStore<T>,
}

/// Every intermediate of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub encodings: Vec<Var>,
    pub levels: Vec<Vec<Var>>,
    pub level_features: Vec<Var>,
    /// Aggregation weights, (batch, T−1, 1, 1); `None` with `amg_off`.
    pub weights: Option<Var>,
    pub fused: Var,
    pub poses: Vec<Var>,
    /// All predicted poses stacked as (batch, T', joints, 3).
    pub prediction: Var,
}

/// The network sees each window relative to its last pose and predicts
/// displacements from that pose, so absolute limb offsets never have to pass
/// through the convolution stack.
fn relative_to_last<T: Scalar>(window: &Tensor<T>) -> Tensor<T> {
    let last = window.dims().channel() - 1;
    Tensor::from_fn(window.dims(), |[b, f, j, c]| {
        window.at([b, f, j, c]) - window.at([b, last, j, c])
    })
}

fn last_pose_repeated<T: Scalar>(window: &Tensor<T>, horizon: usize) -> Tensor<T> {
    let d = window.dims();
    let last = d.channel() - 1;
    Tensor::from_fn(
        Dims::new(d.batch(), horizon, d.joint(), d.coord()),
        |[b, _, j, c]| window.at([b, last, j, c]),
    )
}

fn level_tag(l: usize) -> String {
    format!("l{l:02}")
}

impl<T: Scalar> Model<T> {
    pub fn new(hyper: ModelHyper, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let schedule = build_schedule(hyper.frames)?;
        let mut store = ParamStore::new();
        let (c, k) = (hyper.channels, hyper.kernel);
        let s = &mut store;

        let enc_in = Conv::create_scaled(s, "enc.in", 1, c, 1, seed, SQRT_HALF)?;
        let enc_layers = (0..hyper.enc_layers)
            .map(|i| SeBlock::create(s, &format!("enc.se{i}"), c, c, k, seed))
            .collect::<Result<_>>()?;

        let mut pyramid = Vec::with_capacity(hyper.levels());
        let mut traj_convs = Vec::new();
        for (l, level) in schedule.levels.iter().enumerate() {
            let tag = level_tag(l + 1);
            pyramid.push(BsmeBlock::create(
                s,
                &format!("pyr.{tag}"),
                c,
                k,
                hyper.stack_len,
                !hyper.ablation.rc_off,
                seed,
            )?);
            if !hyper.ablation.ted_off {
                let n = level.nodes.len();
                traj_convs.push(Conv::create(s, &format!("traj.{tag}"), n * c, c, k, seed)?);
            }
        }

        let agg = if hyper.ablation.amg_off {
            Vec::new()
        } else {
            let widths = [
                c * hyper.joints * 3,
                AGG_HIDDEN[0],
                AGG_HIDDEN[1],
                hyper.levels(),
            ];
            widths
                .windows(2)
                .enumerate()
                .map(|(i, w)| Linear::create(s, &format!("agg.fc{}", i + 1), w[0], w[1], seed))
                .collect::<Result<_>>()?
        };

        let decoders = (0..hyper.horizon)
            .map(|i| {
                let layers = (0..hyper.dec_layers)
                    .map(|j| SeBlock::create(s, &format!("dec.s{:02}.se{j}", i + 1), c, c, k, seed))
                    .collect::<Result<_>>()?;
                let out = Conv::create_scaled(
                    s,
                    &format!("dec.s{:02}.out", i + 1),
                    c,
                    1,
                    1,
                    seed,
                    SQRT_HALF,
                )?;
                Ok(Decoder { layers, out })
            })
            .collect::<Result<_>>()?;

        Ok(Model {
            hyper,
            schedule,
            layout: ModelLayout {
                enc_in,
                enc_layers,
                pyramid,
                traj_convs,
                agg,
                decoders,
            },
            params: store,
        })
    }

    /// Same structure with a different scalar type.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            hyper: self.hyper,
            schedule: self.schedule.clone(),
            layout: self.layout.clone(),
            params: self.params.cast(),
        }
    }

    pub fn input_dims(&self, batch: usize) -> Dims {
        Dims::new(batch, self.hyper.frames, self.hyper.joints, 3)
    }

    pub fn output_dims(&self, batch: usize) -> Dims {
        Dims::new(batch, self.hyper.horizon, self.hyper.joints, 3)
    }

    /// Encodes one frame, (batch, 1, joints, 3) → (batch, C, joints, 3).
    pub fn encode(&self, g: &mut Graph<'_, T>, frame: Var) -> Result<Var> {
        let d = g.dims(frame);
        let want = Dims::new(d.batch(), 1, self.hyper.joints, 3);
        if d != want {
            return Err(Error::shape("encode", d, want));
        }
        let h = self.layout.enc_in.forward(g, frame)?;
        run_stack(g, &self.layout.enc_layers, h)
    }

    /// Runs every schedule node. `extra_sources` supplies the tensors routed
    /// into the extra interfaces (the encodings in a normal pass).
    pub fn run_pyramid(
        &self,
        g: &mut Graph<'_, T>,
        encodings: &[Var],
        extra_sources: &[Var],
    ) -> Result<Vec<Vec<Var>>> {
        let t = self.hyper.frames;
        if encodings.len() != t || extra_sources.len() != t {
            return Err(Error::Config(format!(
                "pyramid needs {t} encodings, got {} (+{} extra sources)",
                encodings.len(),
                extra_sources.len()
            )));
        }
        if self.schedule.level_count() != self.layout.pyramid.len() {
            return Err(Error::Config(format!(
                "schedule has {} levels, parameters cover {}",
                self.schedule.level_count(),
                self.layout.pyramid.len()
            )));
        }
        let zeros = if self.hyper.ablation.ei_off {
            Some(g.input(Tensor::zeros(g.dims(encodings[0]))))
        } else {
            None
        };
        let mut outputs: Vec<Vec<Var>> = vec![encodings.to_vec()];
        let at = |outputs: &Vec<Vec<Var>>, r: NodeRef| outputs[r.level][r.index];
        for (level, block) in self.schedule.levels.iter().zip(&self.layout.pyramid) {
            let mut outs = Vec::with_capacity(level.nodes.len());
            for node in &level.nodes {
                let v = match node.kind {
                    NodeKind::Carry { from } => at(&outputs, from),
                    NodeKind::Bsme {
                        prev,
                        cur,
                        extra_frame,
                    } => {
                        let extra = zeros.unwrap_or(extra_sources[extra_frame]);
                        block.forward(g, at(&outputs, prev), at(&outputs, cur), extra)?
                    }
                };
                outs.push(v);
            }
            outputs.push(outs);
        }
        outputs.remove(0);
        Ok(outputs)
    }

    /// Trajectory feature of pyramid level `level` (0-based).
    pub fn level_feature(
        &self,
        g: &mut Graph<'_, T>,
        level: usize,
        outputs: &[Var],
    ) -> Result<Var> {
        if outputs.is_empty() {
            return Err(Error::Config(format!("level {} has no outputs", level + 1)));
        }
        let pre = if self.hyper.ablation.ted_off {
            g.add_all(outputs)?
        } else {
            let conv = self.layout.traj_convs.get(level).ok_or_else(|| {
                Error::Config(format!("no trajectory conv for level {}", level + 1))
            })?;
            let cat = g.concat_channels(outputs)?;
            conv.forward(g, cat)?
        };
        Ok(act(g, pre))
    }

    /// Learned per-level weights in (0, 1), shape (batch, T−1, 1, 1).
    pub fn aggregation_weights(&self, g: &mut Graph<'_, T>, top: Var) -> Result<Var> {
        let mut h = top;
        for fc in &self.layout.agg {
            let z = fc.forward(g, h)?;
            h = g.sigmoid(z);
        }
        Ok(h)
    }

    /// `Σ_l α_l F^l` for explicit weights of shape (batch, L, 1, 1).
    pub fn weighted_sum(
        &self,
        g: &mut Graph<'_, T>,
        features: &[Var],
        weights: Var,
    ) -> Result<Var> {
        let wd = g.dims(weights);
        if wd.channel() != features.len() {
            return Err(Error::Config(format!(
                "{} aggregation weights for {} level features",
                wd.channel(),
                features.len()
            )));
        }
        let mut terms = Vec::with_capacity(features.len());
        for (l, &f) in features.iter().enumerate() {
            let a = g.slice_channel(weights, l)?;
            terms.push(g.scale_by(f, a)?);
        }
        g.add_all(&terms)
    }

    /// Fuses the level features; returns the fused feature and the weights.
    pub fn aggregate(&self, g: &mut Graph<'_, T>, features: &[Var]) -> Result<(Var, Option<Var>)> {
        let levels = self.hyper.levels();
        if features.len() != levels {
            return Err(Error::Config(format!(
                "expected {levels} level features, got {}",
                features.len()
            )));
        }
        let top = features[levels - 1];
        if self.hyper.ablation.amg_off {
            return Ok((top, None));
        }
        let w = self.aggregation_weights(g, top)?;
        Ok((self.weighted_sum(g, features, w)?, Some(w)))
    }

    /// One pose per decoder, each (batch, 1, joints, 3).
    pub fn decode(&self, g: &mut Graph<'_, T>, fused: Var) -> Result<Vec<Var>> {
        self.layout
            .decoders
            .iter()
            .map(|d| {
                let h = run_stack(g, &d.layers, fused)?;
                d.out.forward(g, h)
            })
            .collect()
    }

    /// Full pass on a batch of windows shaped (batch, T, joints, 3).
    pub fn forward(&self, g: &mut Graph<'_, T>, window: &Tensor<T>) -> Result<ForwardTrace> {
        let d = window.dims();
        let want = self.input_dims(d.batch());
        if d != want {
            return Err(Error::shape("forward", d, want));
        }
        let input = g.input(relative_to_last(window));
        let encodings = (0..self.hyper.frames)
            .map(|f| {
                let frame = g.slice_channel(input, f)?;
                self.encode(g, frame)
            })
            .collect::<Result<Vec<_>>>()?;
        let levels = self.run_pyramid(g, &encodings, &encodings)?;
        let level_features = levels
            .iter()
            .enumerate()
            .map(|(l, outs)| self.level_feature(g, l, outs))
            .collect::<Result<Vec<_>>>()?;
        let (fused, weights) = self.aggregate(g, &level_features)?;
        let poses = self.decode(g, fused)?;
        let offsets = g.concat_channels(&poses)?;
        let anchor = g.constant(last_pose_repeated(window, self.hyper.horizon));
        let prediction = g.add(offsets, anchor)?;
        Ok(ForwardTrace {
            encodings,
            levels,
            level_features,
            weights,
            fused,
            poses,
            prediction,
        })
    }

    /// Inference without gradient bookkeeping beyond the tape itself.
    pub fn predict(&self, window: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new(&self.params);
        let trace = self.forward(&mut g, window)?;
        Ok(g.value(trace.prediction).clone())
    }

    pub fn pyramid_param_sets(&self) -> usize {
        self.layout.pyramid.len()
    }

    pub fn decoder_param_ids(&self, step: usize) -> Vec<ParamId> {
        let d = &self.layout.decoders[step];
        d.layers
            .iter()
            .flat_map(SeBlock::param_ids)
            .chain(d.out.param_ids())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::SplitMix64;

    fn tiny(ablation: Ablation) -> ModelHyper {
        ModelHyper {
            frames: 4,
            horizon: 2,
            joints: 5,
            channels: 4,
            kernel: 3,
            enc_layers: 1,
            dec_layers: 1,
            stack_len: 1,
            ablation,
        }
    }

    fn rand_window(dims: Dims, seed: u64) -> Tensor<f64> {
        let mut r = SplitMix64::new(seed);
        Tensor::from_fn(dims, |_| r.uniform(-1.0, 1.0))
    }

    #[test]
    fn output_shape_and_determinism() {
        let m = Model::<f32>::new(
            ModelHyper {
                frames: 10,
                horizon: 10,
                joints: 6,
                channels: 4,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        let x = rand_window(m.input_dims(2), 3).cast::<f32>();
        let a = m.predict(&x).unwrap();
        let b = m.predict(&x).unwrap();
        assert_eq!(a.dims(), Dims::new(2, 10, 6, 3));
        assert_eq!(a, b);
        assert!(a.all_finite());
    }

    #[test]
    fn one_param_set_per_level() {
        let m = Model::<f32>::new(
            ModelHyper {
                frames: 10,
                channels: 4,
                joints: 3,
                ..Default::default()
            },
            0,
        )
        .unwrap();
        assert_eq!(m.pyramid_param_sets(), 9);
        assert_eq!(m.layout.traj_convs.len(), 9);
        assert_eq!(m.layout.decoders.len(), 10);
        assert_eq!(m.layout.traj_convs[0].in_channels, 5 * 4);
        assert_eq!(m.layout.agg.len(), 3);
        assert_eq!(m.layout.agg[0].inputs, 4 * 3 * 3);
        assert_eq!(m.layout.agg[2].outputs, 9);
    }

    #[test]
    fn ablations_remove_parameters() {
        let full = Model::<f32>::new(tiny(Ablation::default()), 0).unwrap();
        let ted = Model::<f32>::new(
            tiny(Ablation {
                ted_off: true,
                ..Default::default()
            }),
            0,
        )
        .unwrap();
        let amg = Model::<f32>::new(
            tiny(Ablation {
                amg_off: true,
                ..Default::default()
            }),
            0,
        )
        .unwrap();
        let rc = Model::<f32>::new(
            tiny(Ablation {
                rc_off: true,
                ..Default::default()
            }),
            0,
        )
        .unwrap();
        assert!(ted.layout.traj_convs.is_empty());
        assert!(amg.layout.agg.is_empty());
        assert!(rc.layout.pyramid.iter().all(|b| b.shortcuts.is_none()));
        for m in [&ted, &amg, &rc] {
            assert!(m.params.len() < full.params.len());
        }
    }

    #[test]
    fn zero_frame_encodes_to_zero() {
        let mut m = Model::<f64>::new(tiny(Ablation::default()), 2).unwrap();
        let bias_ids: Vec<_> = m
            .params
            .ids()
            .filter(|&id| m.params.name(id).ends_with(".b"))
            .collect();
        for id in bias_ids {
            assert!(m.params.get(id).data().iter().all(|&v| v == 0.0));
        }
        let mut g = Graph::new(&m.params);
        let f = g.input(Tensor::zeros(Dims::new(1, 1, 5, 3)));
        let e = m.encode(&mut g, f).unwrap();
        assert!(g.value(e).data().iter().all(|&v| v == 0.0));
        drop(g);
        m.hyper.joints = 6;
        let mut g = Graph::new(&m.params);
        let f = g.input(Tensor::zeros(Dims::new(1, 1, 5, 3)));
        assert!(matches!(m.encode(&mut g, f), Err(Error::Shape { .. })));
    }

    #[test]
    fn support_locality() {
        let m = Model::<f64>::new(
            ModelHyper {
                frames: 6,
                ..tiny(Ablation::default())
            },
            5,
        )
        .unwrap();
        let run = |bump: f64| {
            let mut g = Graph::new(&m.params);
            let encs: Vec<Var> = (0..6)
                .map(|f| {
                    let mut t = rand_window(Dims::new(1, 4, 5, 3), 10 + f as u64);
                    if f == 0 {
                        t.data_mut()[0] += bump;
                    }
                    g.input(t)
                })
                .collect();
            let lv = m.run_pyramid(&mut g, &encs, &encs).unwrap();
            (g.value(lv[0][0]).clone(), g.value(lv[0][2]).clone())
        };
        let (a0, a2) = run(0.0);
        let (b0, b2) = run(0.5);
        assert_ne!(a0, b0);
        assert_eq!(a2, b2);
    }

    #[test]
    fn zero_params_zero_pyramid() {
        let mut m = Model::<f64>::new(tiny(Ablation::default()), 5).unwrap();
        let ids: Vec<_> = m.params.ids().collect();
        for id in ids {
            m.params
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new(&m.params);
        let encs: Vec<Var> = (0..4)
            .map(|f| g.input(rand_window(Dims::new(1, 4, 5, 3), f)))
            .collect();
        let lv = m.run_pyramid(&mut g, &encs, &encs).unwrap();
        assert_eq!(lv.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 1, 1]);
        for v in lv.iter().flatten() {
            assert!(g.value(*v).data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn pyramid_rejects_wrong_encoding_count() {
        let m = Model::<f64>::new(tiny(Ablation::default()), 5).unwrap();
        let mut g = Graph::new(&m.params);
        let e = g.input(Tensor::zeros(Dims::new(1, 4, 5, 3)));
        assert!(matches!(
            m.run_pyramid(&mut g, &[e, e, e], &[e, e, e]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn level_feature_zero_conv_and_ted_sum() {
        let mut m = Model::<f64>::new(tiny(Ablation::default()), 5).unwrap();
        let conv = m.layout.traj_convs[2];
        for id in conv.param_ids() {
            m.params
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        let o = rand_window(Dims::new(1, 4, 5, 3), 1);
        let mut g = Graph::new(&m.params);
        let ov = g.input(o.clone());
        let f = m.level_feature(&mut g, 2, &[ov]).unwrap();
        assert!(g.value(f).data().iter().all(|&v| v == 0.0));

        let ted = Model::<f64>::new(
            tiny(Ablation {
                ted_off: true,
                ..Default::default()
            }),
            5,
        )
        .unwrap();
        let mut g = Graph::new(&ted.params);
        let ov = g.input(o.clone());
        let f = ted.level_feature(&mut g, 0, &[ov, ov]).unwrap();
        let expect = o.map(|v| {
            let s = 2.0 * v;
            if s > 0.0 {
                s
            } else {
                s * LEAKY
            }
        });
        assert_eq!(g.value(f), &expect);
    }

    const LEAKY: f64 = crate::blocks::LEAKY_SLOPE;

    #[test]
    fn forced_weights_average_levels() {
        let m = Model::<f64>::new(
            ModelHyper {
                frames: 3,
                ..tiny(Ablation::default())
            },
            5,
        )
        .unwrap();
        let mut g = Graph::new(&m.params);
        let d = Dims::new(1, 4, 5, 3);
        let f1 = g.input(Tensor::full(d, 1.0));
        let f2 = g.input(Tensor::full(d, 3.0));
        let w = g.input(Tensor::full(Dims::new(1, 2, 1, 1), 0.5));
        let f = m.weighted_sum(&mut g, &[f1, f2], w).unwrap();
        assert_eq!(g.value(f), &Tensor::full(d, 2.0));
    }

    #[test]
    fn zero_fc_params_give_half_weights() {
        let mut m = Model::<f64>::new(tiny(Ablation::default()), 5).unwrap();
        for fc in m.layout.agg.clone() {
            for id in fc.param_ids() {
                m.params
                    .get_mut(id)
                    .data_mut()
                    .iter_mut()
                    .for_each(|v| *v = 0.0);
            }
        }
        let mut g = Graph::new(&m.params);
        let top = g.input(rand_window(Dims::new(2, 4, 5, 3), 4));
        let w = m.aggregation_weights(&mut g, top).unwrap();
        assert_eq!(g.dims(w), Dims::new(2, 3, 1, 1));
        assert!(g.value(w).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn aggregate_checks_level_count() {
        let m = Model::<f64>::new(tiny(Ablation::default()), 5).unwrap();
        let mut g = Graph::new(&m.params);
        let f = g.input(Tensor::zeros(Dims::new(1, 4, 5, 3)));
        assert!(matches!(
            m.aggregate(&mut g, &[f, f]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn decoders_are_isolated() {
        let mut m = Model::<f64>::new(
            ModelHyper {
                horizon: 4,
                ..tiny(Ablation::default())
            },
            6,
        )
        .unwrap();
        let x = rand_window(m.input_dims(1), 2);
        let before = m.predict(&x).unwrap();
        let id = m.decoder_param_ids(2)[0];
        m.params.get_mut(id).data_mut()[0] += 0.25;
        let after = m.predict(&x).unwrap();
        let plane = 5 * 3;
        for step in 0..4 {
            let a = &before.data()[step * plane..(step + 1) * plane];
            let b = &after.data()[step * plane..(step + 1) * plane];
            assert_eq!(a == b, step != 2, "step {step}");
        }
    }

    #[test]
    fn zero_fused_feature_decodes_to_zero() {
        let m = Model::<f64>::new(
            ModelHyper {
                horizon: 25,
                ..tiny(Ablation::default())
            },
            6,
        )
        .unwrap();
        let mut g = Graph::new(&m.params);
        let f = g.input(Tensor::zeros(Dims::new(1, 4, 5, 3)));
        let poses = m.decode(&mut g, f).unwrap();
        assert_eq!(poses.len(), 25);
        for p in poses {
            assert_eq!(g.dims(p), Dims::new(1, 1, 5, 3));
            assert!(g.value(p).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn ablation_bits_roundtrip() {
        for bits in 0..16 {
            assert_eq!(Ablation::from_bits(bits).unwrap().bits(), bits);
        }
        assert!(Ablation::from_bits(16).is_err());
        let mut a = Ablation::default();
        a.enable("amg").unwrap();
        assert!(a.amg_off);
        assert!(a.enable("bogus").is_err());
    }
}
