//! Spatial encoding (SE), residual spatial encoding (RSE) and semi-decoupled
//! motion-sensitive encoding (BSME) blocks.

use crate::error::{Error, Result};
use crate::params::{Conv, Graph, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::Var;

/// Negative-side slope of every leaky ReLU in the network.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Init gain for a layer with no activation after it.
pub(crate) const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

pub(crate) fn act<T: Scalar>(g: &mut Graph<'_, T>, x: Var) -> Var {
    g.leaky_relu(x, T::lit(LEAKY_SLOPE))
}

/// Residual conv block without normalization: two activated k×k convs plus
/// an unactivated 1×1 conv on the skip path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeBlock {
    pub conv_a: Conv,
    pub conv_b: Conv,
    pub skip: Conv,
}

impl SeBlock {
    pub fn create<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        seed: u64,
    ) -> Result<Self> {
        Self::create_scaled(store, name, in_channels, out_channels, kernel, seed, 1.0)
    }

    /// Both summands are initialized at half the input variance, so the
    /// block roughly preserves activation scale; `out_gain` then scales the
    /// whole output.
    pub fn create_scaled<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        seed: u64,
        out_gain: f64,
    ) -> Result<Self> {
        let (i, o) = (in_channels, out_channels);
        Ok(SeBlock {
            conv_a: Conv::create(store, &format!("{name}.conv_a"), i, o, kernel, seed)?,
            conv_b: Conv::create_scaled(
                store,
                &format!("{name}.conv_b"),
                o,
                o,
                kernel,
                seed,
                out_gain * SQRT_HALF,
            )?,
            skip: Conv::create_scaled(
                store,
                &format!("{name}.skip"),
                i,
                o,
                1,
                seed,
                out_gain * 0.5,
            )?,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.conv_a.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.conv_b.out_channels
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let a = self.conv_a.forward(g, x)?;
        let a = act(g, a);
        let b = self.conv_b.forward(g, a)?;
        let b = act(g, b);
        let s = self.skip.forward(g, x)?;
        g.add(b, s)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        [self.conv_a, self.conv_b, self.skip]
            .iter()
            .flat_map(Conv::param_ids)
            .collect()
    }
}

pub(crate) fn run_stack<T: Scalar>(g: &mut Graph<'_, T>, stack: &[SeBlock], x: Var) -> Result<Var> {
    stack.iter().try_fold(x, |h, se| se.forward(g, h))
}

/// SE stack with a halve-then-restore channel squeeze.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RseBlock {
    pub reduce: SeBlock,
    pub inner: [SeBlock; 2],
    pub restore: SeBlock,
}

/// Intermediate activations of an RSE pass.
#[derive(Clone, Copy, Debug)]
pub struct RseTrace {
    pub reduced: Var,
    pub inner: Var,
    pub out: Var,
}

impl RseBlock {
    pub fn create<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        kernel: usize,
        seed: u64,
    ) -> Result<Self> {
        if !channels.is_multiple_of(2) || channels == 0 {
            return Err(Error::Config(format!(
                "RSE needs an even, positive channel count, got {channels}"
            )));
        }
        let half = channels / 2;
        Ok(RseBlock {
            reduce: SeBlock::create(
                store,
                &format!("{name}.reduce"),
                channels,
                half,
                kernel,
                seed,
            )?,
            inner: [
                SeBlock::create(store, &format!("{name}.inner0"), half, half, kernel, seed)?,
                SeBlock::create(store, &format!("{name}.inner1"), half, half, kernel, seed)?,
            ],
            restore: SeBlock::create(
                store,
                &format!("{name}.restore"),
                half,
                channels,
                kernel,
                seed,
            )?,
        })
    }

    pub fn forward_traced<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<RseTrace> {
        let reduced = self.reduce.forward(g, x)?;
        let inner = run_stack(g, &self.inner, reduced)?;
        let out = self.restore.forward(g, inner)?;
        Ok(RseTrace {
            reduced,
            inner,
            out,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        Ok(self.forward_traced(g, x)?.out)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        std::iter::once(&self.reduce)
            .chain(&self.inner)
            .chain(std::iter::once(&self.restore))
            .flat_map(SeBlock::param_ids)
            .collect()
    }
}

/// Unactivated 1×1 shortcut convs fusing spatial features into a BSME output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BsmeShortcuts {
    pub prev: Conv,
    pub cur: Conv,
    pub extra: Conv,
}

/// Semi-decoupled motion-sensitive encoding block.
///
/// The previous input runs through one more SE than the current input. The
/// difference of the two spatial encodings feeds the motion stack, and the
/// shortcuts add back both spatial encodings and the extra-interface input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BsmeBlock {
    pub prev_stack: Vec<SeBlock>,
    pub cur_stack: Vec<SeBlock>,
    pub motion_stack: Vec<SeBlock>,
    /// `None` for the residual-connection ablation (output is the motion
    /// stack alone).
    pub shortcuts: Option<BsmeShortcuts>,
}

/// Output of a BSME pass together with the motion-branch input.
#[derive(Clone, Copy, Debug)]
pub struct BsmeTrace {
    pub out: Var,
    /// `s_prev − s_cur`, the tensor entering the motion stack.
    pub motion_input: Var,
}

impl BsmeBlock {
    /// `depth` is the current-input stack length n (n ≥ 1).
    pub fn create<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        kernel: usize,
        depth: usize,
        residual: bool,
        seed: u64,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Config("BSME stack length must be at least 1".into()));
        }
        // With shortcuts the output sums four terms; each starts at a
        // quarter of the variance.
        let branch_gain = if residual { 0.5 } else { 1.0 };
        let mut stack = |tag: &str, len: usize, last_gain: f64| -> Result<Vec<SeBlock>> {
            (0..len)
                .map(|i| {
                    let gain = if i + 1 == len { last_gain } else { 1.0 };
                    let se_name = format!("{name}.{tag}{i}");
                    SeBlock::create_scaled(store, &se_name, channels, channels, kernel, seed, gain)
                })
                .collect()
        };
        let prev_stack = stack("prev", depth + 1, 1.0)?;
        let cur_stack = stack("cur", depth, 1.0)?;
        let motion_stack = stack("motion", depth, branch_gain)?;
        let shortcuts = if residual {
            let mut short = |tag: &str| {
                let gain = SQRT_HALF * branch_gain;
                Conv::create_scaled(
                    store,
                    &format!("{name}.short_{tag}"),
                    channels,
                    channels,
                    1,
                    seed,
                    gain,
                )
            };
            Some(BsmeShortcuts {
                prev: short("prev")?,
                cur: short("cur")?,
                extra: short("extra")?,
            })
        } else {
            None
        };
        Ok(BsmeBlock {
            prev_stack,
            cur_stack,
            motion_stack,
            shortcuts,
        })
    }

    pub fn forward_traced<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        f_prev: Var,
        f_cur: Var,
        x_extra: Var,
    ) -> Result<BsmeTrace> {
        let pd = g.dims(f_prev);
        for other in [f_cur, x_extra] {
            let od = g.dims(other);
            if od != pd {
                return Err(Error::shape("bsme inputs", pd, od));
            }
        }
        let s_prev = run_stack(g, &self.prev_stack, f_prev)?;
        let s_cur = run_stack(g, &self.cur_stack, f_cur)?;
        let motion_input = g.sub(s_prev, s_cur)?;
        let m = run_stack(g, &self.motion_stack, motion_input)?;
        let out = match &self.shortcuts {
            Some(sc) => {
                let p = sc.prev.forward(g, s_prev)?;
                let c = sc.cur.forward(g, s_cur)?;
                let e = sc.extra.forward(g, x_extra)?;
                g.add_all(&[m, p, c, e])?
            }
            None => m,
        };
        Ok(BsmeTrace { out, motion_input })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        f_prev: Var,
        f_cur: Var,
        x_extra: Var,
    ) -> Result<Var> {
        Ok(self.forward_traced(g, f_prev, f_cur, x_extra)?.out)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self
            .prev_stack
            .iter()
            .chain(&self.cur_stack)
            .chain(&self.motion_stack)
            .flat_map(SeBlock::param_ids)
            .collect();
        if let Some(sc) = &self.shortcuts {
            ids.extend([sc.prev, sc.cur, sc.extra].iter().flat_map(Conv::param_ids));
        }
        ids
    }

    pub fn motion_param_ids(&self) -> Vec<ParamId> {
        self.motion_stack
            .iter()
            .flat_map(SeBlock::param_ids)
            .collect()
    }

    pub fn spatial_param_ids(&self) -> Vec<ParamId> {
        self.prev_stack
            .iter()
            .chain(&self.cur_stack)
            .flat_map(SeBlock::param_ids)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_graph_fn, GradCheckConfig};
    use crate::init::SplitMix64;
    use crate::tensor::{Dims, Tensor};

    fn rand_tensor(dims: Dims, seed: u64) -> Tensor<f64> {
        let mut r = SplitMix64::new(seed);
        Tensor::from_fn(dims, |_| r.uniform(-1.0, 1.0))
    }

    fn zero_all(store: &mut ParamStore<f64>) {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            store
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
    }

    fn sq_loss(g: &mut Graph<'_, f64>, y: Var) -> Result<Var> {
        let sq = g.mul(y, y)?;
        let s = g.sum(sq);
        Ok(g.scale(s, 0.5))
    }

    #[test]
    fn se_zero_params_give_zero() {
        let mut s = ParamStore::<f64>::new();
        let se = SeBlock::create(&mut s, "se", 4, 4, 3, 1).unwrap();
        zero_all(&mut s);
        let mut g = Graph::new(&s);
        let x = g.input(rand_tensor(Dims::new(2, 4, 5, 3), 2));
        let y = se.forward(&mut g, x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn se_skip_isolation() {
        let mut s = ParamStore::<f64>::new();
        let se = SeBlock::create(&mut s, "se", 3, 3, 3, 1).unwrap();
        zero_all(&mut s);
        let w = s.get_mut(se.skip.weight);
        for c in 0..3 {
            w.set([c, c, 0, 0], 1.0);
        }
        let xv = rand_tensor(Dims::new(1, 3, 6, 3), 3);
        let mut g = Graph::new(&s);
        let x = g.input(xv.clone());
        let y = se.forward(&mut g, x).unwrap();
        assert_eq!(g.value(y), &xv);
    }

    #[test]
    fn se_rejects_channel_mismatch() {
        let mut s = ParamStore::<f64>::new();
        let se = SeBlock::create(&mut s, "se", 4, 4, 3, 1).unwrap();
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::zeros(Dims::new(1, 3, 5, 3)));
        assert!(matches!(se.forward(&mut g, x), Err(Error::Shape { .. })));
    }

    #[test]
    fn se_gradient_check() {
        for seed in 0..5 {
            let mut s = ParamStore::<f64>::new();
            let se = SeBlock::create(&mut s, "se", 3, 3, 3, seed).unwrap();
            let xv = rand_tensor(Dims::new(2, 3, 5, 3), 100 + seed);
            let r = check_graph_fn(
                &s,
                |g| {
                    let x = g.input(xv.clone());
                    let y = se.forward(g, x)?;
                    sq_loss(g, y)
                },
                &GradCheckConfig {
                    seed,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(r.max_rel_error < 1e-3, "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn rse_squeezes_to_half_channels() {
        let mut s = ParamStore::<f64>::new();
        let rse = RseBlock::create(&mut s, "rse", 4, 3, 1).unwrap();
        let mut g = Graph::new(&s);
        let x = g.input(rand_tensor(Dims::new(1, 4, 5, 3), 1));
        let t = rse.forward_traced(&mut g, x).unwrap();
        assert_eq!(g.dims(t.reduced).channel(), 2);
        assert_eq!(g.dims(t.inner).channel(), 2);
        assert_eq!(g.dims(t.out), Dims::new(1, 4, 5, 3));
    }

    #[test]
    fn rse_zero_params_and_odd_channels() {
        let mut s = ParamStore::<f64>::new();
        assert!(matches!(
            RseBlock::create(&mut s, "bad", 5, 3, 1),
            Err(Error::Config(_))
        ));
        let mut s = ParamStore::<f64>::new();
        let rse = RseBlock::create(&mut s, "rse", 4, 3, 1).unwrap();
        zero_all(&mut s);
        let mut g = Graph::new(&s);
        let x = g.input(rand_tensor(Dims::new(1, 4, 5, 3), 1));
        let y = rse.forward(&mut g, x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rse_gradient_check() {
        let mut s = ParamStore::<f64>::new();
        let rse = RseBlock::create(&mut s, "rse", 4, 3, 9).unwrap();
        let xv = rand_tensor(Dims::new(2, 4, 5, 3), 9);
        let r = check_graph_fn(
            &s,
            |g| {
                let x = g.input(xv.clone());
                let y = rse.forward(g, x)?;
                sq_loss(g, y)
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-3, "{r:?}");
    }

    fn bsme_inputs(g: &mut Graph<'_, f64>, seed: u64) -> (Var, Var, Var) {
        let d = Dims::new(2, 4, 5, 3);
        (
            g.input(rand_tensor(d, seed)),
            g.input(rand_tensor(d, seed + 1)),
            g.input(rand_tensor(d, seed + 2)),
        )
    }

    #[test]
    fn bsme_tied_stacks_cancel_motion_input() {
        let mut s = ParamStore::<f64>::new();
        let mut b = BsmeBlock::create(&mut s, "b", 4, 3, 2, true, 1).unwrap();
        b.prev_stack = b.cur_stack.clone();
        let mut g = Graph::new(&s);
        let f = g.input(rand_tensor(Dims::new(1, 4, 5, 3), 5));
        let x = g.input(rand_tensor(Dims::new(1, 4, 5, 3), 6));
        let t = b.forward_traced(&mut g, f, f, x).unwrap();
        assert!(g.value(t.motion_input).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bsme_zero_params_and_dims() {
        let mut s = ParamStore::<f64>::new();
        let b = BsmeBlock::create(&mut s, "b", 4, 3, 2, true, 1).unwrap();
        assert_eq!(b.prev_stack.len(), 3);
        assert_eq!(b.cur_stack.len(), 2);
        let mut g = Graph::new(&s);
        let (p, c, x) = bsme_inputs(&mut g, 1);
        let y = b.forward(&mut g, p, c, x).unwrap();
        assert_eq!(g.dims(y), Dims::new(2, 4, 5, 3));
        drop(g);
        zero_all(&mut s);
        let mut g = Graph::new(&s);
        let (p, c, x) = bsme_inputs(&mut g, 1);
        let y = b.forward(&mut g, p, c, x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bsme_rejects_mismatched_inputs() {
        let mut s = ParamStore::<f64>::new();
        let b = BsmeBlock::create(&mut s, "b", 4, 3, 1, true, 1).unwrap();
        let mut g = Graph::new(&s);
        let p = g.input(Tensor::zeros(Dims::new(1, 4, 5, 3)));
        let c = g.input(Tensor::zeros(Dims::new(1, 4, 6, 3)));
        assert!(matches!(
            b.forward(&mut g, p, c, p),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn zeroed_extra_shortcut_ignores_extra_input() {
        let mut s = ParamStore::<f64>::new();
        let b = BsmeBlock::create(&mut s, "b", 4, 3, 2, true, 3).unwrap();
        let sc = b.shortcuts.unwrap();
        s.get_mut(sc.extra.weight)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
        let run = |extra_seed: u64| {
            let mut g = Graph::new(&s);
            let p = g.input(rand_tensor(Dims::new(1, 4, 5, 3), 1));
            let c = g.input(rand_tensor(Dims::new(1, 4, 5, 3), 2));
            let x = g.input(rand_tensor(Dims::new(1, 4, 5, 3), extra_seed));
            let y = b.forward(&mut g, p, c, x).unwrap();
            g.value(y).clone()
        };
        assert_eq!(run(10), run(11));
    }

    #[test]
    fn bsme_gradient_check_all_params() {
        for (seed, residual) in [(0, true), (1, true), (2, false)] {
            let mut s = ParamStore::<f64>::new();
            let b = BsmeBlock::create(&mut s, "b", 4, 3, 2, residual, seed).unwrap();
            let r = check_graph_fn(
                &s,
                |g| {
                    let (p, c, x) = bsme_inputs(g, 40 + seed);
                    let y = b.forward(g, p, c, x)?;
                    sq_loss(g, y)
                },
                &GradCheckConfig {
                    seed,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(r.max_rel_error < 1e-3, "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn motion_and_spatial_params_disjoint() {
        let mut s = ParamStore::<f64>::new();
        let b = BsmeBlock::create(&mut s, "b", 4, 3, 2, true, 1).unwrap();
        let motion = b.motion_param_ids();
        let spatial = b.spatial_param_ids();
        assert!(motion.iter().all(|m| !spatial.contains(m)));
        assert_eq!(b.param_ids().len(), s.len());
        // 7 SEs × 3 convs + 3 shortcuts, each weight + bias.
        assert_eq!(s.len(), (7 * 3 + 3) * 2);
    }
}
