use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Element, Graph, Var};
use crate::error::{Error, Result};
use crate::imp::store::{OptimaStore, StoredOptimum};
use crate::pruning::Mask;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepellenceMode {
    AllPrevious,
    LastOnly,
    #[default]
    Off,
}

/// Positive `lambda_r` repels from stored optima, negative attracts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepellenceConfig {
    pub lambda_r: f64,
    pub mode: RepellenceMode,
}

impl Default for RepellenceConfig {
    fn default() -> Self {
        RepellenceConfig {
            lambda_r: 2.0,
            mode: RepellenceMode::Off,
        }
    }
}

impl RepellenceConfig {
    pub fn repel(lambda_r: f64) -> Self {
        RepellenceConfig {
            lambda_r,
            mode: RepellenceMode::AllPrevious,
        }
    }

    pub fn is_off(&self) -> bool {
        self.mode == RepellenceMode::Off
    }

    /// The optima `Θ'` the term averages over.
    pub fn selected<'a>(&self, store: &'a OptimaStore) -> &'a [StoredOptimum] {
        let e = store.entries();
        match self.mode {
            RepellenceMode::Off => &[],
            RepellenceMode::AllPrevious => e,
            RepellenceMode::LastOnly => &e[e.len().saturating_sub(1)..],
        }
    }
}

/// Precomputed constants for the repellence term under one mask.
#[derive(Clone, Debug)]
pub struct Repeller<T: Element> {
    scale: T,
    mask: Arc<[T]>,
    // (θ_r ⊙ m, 1 / ‖θ_r ⊙ m‖)
    targets: Vec<(Arc<[T]>, T)>,
}

impl<T: Element> Repeller<T> {
    /// `None` when the term is identically zero (mode off or empty store).
    pub fn new(store: &OptimaStore, mask: &Mask, cfg: &RepellenceConfig) -> Result<Option<Self>> {
        let chosen = cfg.selected(store);
        if chosen.is_empty() {
            return Ok(None);
        }
        let m: Arc<[T]> = mask.bits().iter().map(|&b| if b { T::one() } else { T::zero() }).collect();
        let mut targets = Vec::with_capacity(chosen.len());
        for opt in chosen {
            if opt.theta.len() != mask.len() {
                return Err(Error::dim("repellence", &[opt.theta.len()], &[mask.len()]));
            }
            let u: Arc<[T]> = opt
                .theta
                .iter()
                .zip(mask.bits())
                .map(|(&v, &b)| if b { T::from_f64_lossy(v as f64) } else { T::zero() })
                .collect();
            let norm = u.iter().map(|&x| x * x).sum::<T>().sqrt();
            if norm == T::zero() {
                return Err(Error::Degenerate(format!("stored optimum of round {} under the current mask", opt.round)));
            }
            targets.push((u, T::one() / norm));
        }
        Ok(Some(Repeller {
            scale: T::from_f64_lossy(cfg.lambda_r / chosen.len() as f64),
            mask: m,
            targets,
        }))
    }

    /// Adds `J_r` for the parameter leaves `params` (layout order) to `g`.
    pub fn term(&self, g: &mut Graph<T>, params: &[Var]) -> Result<Var> {
        let theta = g.concat(params);
        let tm = g.mul_const(theta, self.mask.clone())?;
        let norm = g.l2_norm(tm);
        if g.value(norm).item()? == T::zero() {
            return Err(Error::Degenerate("current masked weights".into()));
        }
        let mut acc: Option<Var> = None;
        for (u, inv) in &self.targets {
            let d = g.dot_const(tm, u.clone())?;
            let d = g.scale(d, *inv);
            let c = g.div(d, norm)?;
            let sq = g.mul(c, c)?;
            acc = Some(match acc {
                None => sq,
                Some(a) => g.add(a, sq)?,
            });
        }
        let acc = acc.expect("at least one target");
        Ok(g.scale(acc, self.scale))
    }
}

/// Squared masked cosine similarity of `theta` to each selected optimum, with its round.
pub fn squared_cosines(
    theta: &[f32],
    mask: &Mask,
    store: &OptimaStore,
    cfg: &RepellenceConfig,
) -> Result<Vec<(usize, f64)>> {
    let masked = |v: &[f32]| -> Vec<f64> {
        v.iter().zip(mask.bits()).map(|(&x, &b)| if b { x as f64 } else { 0.0 }).collect()
    };
    let a = masked(theta);
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 {
        return Err(Error::Degenerate("current masked weights".into()));
    }
    cfg.selected(store)
        .iter()
        .map(|opt| {
            let b = masked(&opt.theta);
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nb == 0.0 {
                return Err(Error::Degenerate(format!("stored optimum of round {}", opt.round)));
            }
            let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            Ok((opt.round, (dot / (na * nb)).powi(2)))
        })
        .collect()
}

/// `J_r` evaluated in f64 without a graph.
pub fn repellence_value(theta: &[f32], mask: &Mask, store: &OptimaStore, cfg: &RepellenceConfig) -> Result<f64> {
    let sq = squared_cosines(theta, mask, store, cfg)?;
    if sq.is_empty() {
        return Ok(0.0);
    }
    Ok(cfg.lambda_r * sq.iter().map(|(_, s)| s).sum::<f64>() / sq.len() as f64)
}
