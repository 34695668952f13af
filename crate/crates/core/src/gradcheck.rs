//! Central finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::init::SplitMix64;
use crate::params::{Graph, ParamGrads, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::Var;

/// One evaluation of the function under test.
#[derive(Clone, Copy, Debug)]
pub struct Probe<T> {
    pub value: T,
    /// Activation sign fingerprint (see [`crate::tape::Tape::kink_signature`]).
    pub signature: u64,
}

/// Coordinates sampled per parameter tensor by default.
pub const DEFAULT_COORDS: usize = 12;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Coordinates checked per parameter tensor; larger tensors are
    /// subsampled deterministically from `seed`.
    pub max_coords_per_param: usize,
    pub seed: u64,
    /// Restrict the check to these parameters (all when `None`).
    pub only: Option<Vec<ParamId>>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-3,
            max_coords_per_param: DEFAULT_COORDS,
            seed: 0,
            only: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub checked: usize,
    /// Coordinates whose ±eps evaluations crossed an activation kink, where
    /// a central difference does not estimate the derivative.
    pub skipped_kinks: usize,
}

/// `|a − n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares `analytic` gradients against central differences of `eval`.
pub fn grad_check<T, F>(
    store: &ParamStore<T>,
    analytic: &ParamGrads<T>,
    mut eval: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&ParamStore<T>) -> Result<Probe<T>>,
{
    if !(1e-4..=1e-2).contains(&cfg.eps) {
        return Err(Error::Contract(format!(
            "finite-difference step {} outside [1e-4, 1e-2]",
            cfg.eps
        )));
    }
    let ids: Vec<ParamId> = match &cfg.only {
        Some(ids) => ids.clone(),
        None => store.sorted_ids().collect(),
    };
    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        checked: 0,
        skipped_kinks: 0,
    };
    let eps = T::from_f64_lossy(cfg.eps);
    let two_eps = (T::one() + T::one()) * eps;

    for id in ids {
        let name = store.name(id).to_owned();
        let len = store.get(id).len();
        let coords: Vec<usize> = if len <= cfg.max_coords_per_param {
            (0..len).collect()
        } else {
            let mut rng = SplitMix64::keyed(cfg.seed, &name);
            let mut all: Vec<usize> = (0..len).collect();
            rng.shuffle(&mut all);
            all.truncate(cfg.max_coords_per_param);
            all.sort_unstable();
            all
        };
        for i in coords {
            let orig = store.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + eps;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig - eps;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig;

            if !plus.value.is_finite() || !minus.value.is_finite() {
                return Err(Error::Numeric(format!(
                    "function value non-finite while perturbing {name}[{i}]"
                )));
            }
            if plus.signature != minus.signature {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = ((plus.value - minus.value) / two_eps).to_f64_lossy();
            let a = analytic.get(id).data()[i].to_f64_lossy();
            if !a.is_finite() {
                return Err(Error::Numeric(format!(
                    "analytic gradient of {name}[{i}] is {a}"
                )));
            }
            let err = relative_error(a, numeric);
            report.checked += 1;
            if report.checked == 1 || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = format!("{name}[{i}]");
            }
        }
    }
    Ok(report)
}

/// Builds the scalar returned by `build` on a fresh graph, backpropagates,
/// and checks the result against finite differences.
pub fn check_graph_fn<T, F>(
    store: &ParamStore<T>,
    mut build: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&mut Graph<'_, T>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(store);
        let loss = build(&mut g)?;
        g.param_grads(loss)?
    };
    grad_check(
        store,
        &analytic,
        |s| {
            let mut g = Graph::new(s);
            let loss = build(&mut g)?;
            Ok(Probe {
                value: g.value(loss).data()[0],
                signature: g.kink_signature(),
            })
        },
        cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Conv;
    use crate::tensor::{Dims, Tensor};

    #[test]
    fn linear_sum_is_exact() {
        let mut s = ParamStore::<f64>::new();
        let a = s
            .insert(
                "a",
                Tensor::from_fn(Dims::new(1, 2, 3, 3), |[_, c, j, d]| (c + j + d) as f64),
            )
            .unwrap();
        let r = check_graph_fn(
            &s,
            |g| {
                let v = g.param(a);
                Ok(g.sum(v))
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert_eq!(r.skipped_kinks, 0);
    }

    #[test]
    fn single_conv_layer() {
        let mut s = ParamStore::<f64>::new();
        let conv = Conv::create(&mut s, "conv", 2, 3, 3, 4).unwrap();
        let x = Tensor::from_fn(Dims::new(2, 2, 5, 3), |[b, c, j, d]| {
            ((b * 7 + c * 5 + j * 3 + d) as f64 * 0.37).sin()
        });
        let r = check_graph_fn(
            &s,
            |g| {
                let xi = g.input(x.clone());
                let y = conv.forward(g, xi)?;
                let sq = g.mul(y, y)?;
                Ok(g.sum(sq))
            },
            &GradCheckConfig {
                max_coords_per_param: 1000,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-3, "{r:?}");
        assert_eq!(r.checked, 3 * 2 * 9 + 3);
    }

    #[test]
    fn eps_range_enforced() {
        let s = ParamStore::<f64>::new();
        let cfg = GradCheckConfig {
            eps: 0.5,
            ..Default::default()
        };
        assert!(check_graph_fn(&s, |g| Ok(g.input(Tensor::scalar(0.0))), &cfg).is_err());
    }

    #[test]
    fn non_finite_is_numeric_error() {
        let mut s = ParamStore::<f64>::new();
        let a = s.insert("a", Tensor::scalar(1.0)).unwrap();
        let store = s.clone();
        let grads = {
            let mut g = Graph::new(&store);
            let v = g.param(a);
            let l = g.sum(v);
            g.param_grads(l).unwrap()
        };
        let err = grad_check(
            &s,
            &grads,
            |_| {
                Ok(Probe {
                    value: f64::NAN,
                    signature: 0,
                })
            },
            &GradCheckConfig::default(),
        );
        assert!(matches!(err, Err(Error::Numeric(_))));
    }
}
