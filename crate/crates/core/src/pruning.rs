//! Global unstructured magnitude pruning over weights only.
//!
//! Masks cover the whole flat parameter vector; bias positions stay at 1.
//! The number of weights kept after round `r` is `round((1 − rate)^r · W)`
//! with `W` the model's weight count, so densities follow the schedule
//! exactly instead of drifting through per-round rounding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary keep-mask aligned with a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    bits: Vec<bool>,
    round: usize,
}

impl Mask {
    pub fn full(len: usize) -> Self {
        Mask {
            bits: vec![true; len],
            round: 0,
        }
    }

    pub fn from_bits(bits: Vec<bool>, round: usize) -> Self {
        Mask { bits, round }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// IMP round that produced this mask (0 for the dense mask).
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn with_round(mut self, round: usize) -> Self {
        self.round = round;
        self
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Surviving entries among the positions flagged in `is_weight`.
    pub fn surviving_weights(&self, is_weight: &[bool]) -> usize {
        self.bits.iter().zip(is_weight).filter(|(&b, &w)| b && w).count()
    }

    /// Fraction of weights kept.
    pub fn density(&self, is_weight: &[bool]) -> f64 {
        let total = is_weight.iter().filter(|&&w| w).count();
        self.surviving_weights(is_weight) as f64 / total.max(1) as f64
    }

    /// `self ≤ parent` elementwise.
    pub fn is_nested_in(&self, parent: &Mask) -> bool {
        self.len() == parent.len() && self.bits.iter().zip(&parent.bits).all(|(&c, &p)| !c || p)
    }

    /// Every bias position is kept.
    pub fn keeps_biases(&self, is_weight: &[bool]) -> bool {
        self.bits.iter().zip(is_weight).all(|(&b, &w)| w || b)
    }

    pub fn as_f32(&self) -> Vec<f32> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    /// Surviving weight count.
    pub surviving: usize,
    /// Surviving weights over all weights.
    pub density: f64,
    /// Smallest surviving weight magnitude after pruning.
    pub threshold: f64,
}

/// Number of weights kept after `round` rounds at `rate`.
pub fn scheduled_survivors(weight_count: usize, rate: f64, round: usize) -> usize {
    ((1.0 - rate).powi(round as i32) * weight_count as f64).round() as usize
}

/// Prunes the smallest-magnitude surviving weights across all layers.
///
/// Moves `mask` from round `r` to `r + 1`, keeping
/// [`scheduled_survivors`]`(W, rate, r + 1)` weights. Ties in magnitude are
/// pruned in ascending flat-index order. Bias positions are never touched.
pub fn global_magnitude_prune(
    theta: &[f32],
    mask: &Mask,
    is_weight: &[bool],
    rate: f64,
) -> Result<(Mask, PruneReport)> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::Parameter(format!("prune rate {rate} not in (0, 1)")));
    }
    if theta.len() != mask.len() || is_weight.len() != mask.len() {
        return Err(Error::dim("global_magnitude_prune", &[theta.len()], &[mask.len(), is_weight.len()]));
    }
    let mut candidates: Vec<usize> = (0..theta.len()).filter(|&i| is_weight[i] && mask.bits[i]).collect();
    if candidates.is_empty() {
        return Err(Error::State("mask has no surviving weights".into()));
    }
    let weight_count = is_weight.iter().filter(|&&w| w).count();
    let target = scheduled_survivors(weight_count, rate, mask.round + 1);
    if target >= candidates.len() {
        return Err(Error::Parameter(format!(
            "rate {rate} strips no weight at round {} ({} surviving, {target} scheduled)",
            mask.round + 1,
            candidates.len()
        )));
    }
    if target == 0 {
        return Err(Error::Parameter(format!(
            "rate {rate} would prune all {} surviving weights",
            candidates.len()
        )));
    }
    // stable sort keeps index order among equal magnitudes
    candidates.sort_by(|&a, &b| theta[a].abs().total_cmp(&theta[b].abs()));
    let cut = candidates.len() - target;
    let mut bits = mask.bits.clone();
    for &i in &candidates[..cut] {
        bits[i] = false;
    }
    let threshold = theta[candidates[cut]].abs() as f64;
    let next = Mask {
        bits,
        round: mask.round + 1,
    };
    let report = PruneReport {
        surviving: target,
        density: target as f64 / weight_count as f64,
        threshold,
    };
    Ok((next, report))
}

pub fn mask_intersection(a: &Mask, b: &Mask) -> Result<Mask> {
    if a.len() != b.len() {
        return Err(Error::dim("mask_intersection", &[a.len()], &[b.len()]));
    }
    Ok(Mask {
        bits: a.bits.iter().zip(&b.bits).map(|(&x, &y)| x && y).collect(),
        round: a.round.max(b.round),
    })
}

/// `θ ⊙ m`
pub fn apply_mask(theta: &[f32], mask: &Mask) -> Result<Vec<f32>> {
    let mut out = theta.to_vec();
    apply_mask_in_place(&mut out, mask)?;
    Ok(out)
}

pub fn apply_mask_in_place(theta: &mut [f32], mask: &Mask) -> Result<()> {
    if theta.len() != mask.len() {
        return Err(Error::dim("apply_mask", &[theta.len()], &[mask.len()]));
    }
    for (v, &keep) in theta.iter_mut().zip(&mask.bits) {
        if !keep {
            *v = 0.0;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "style", rename_all = "snake_case")]
pub enum PruneStyle {
    Iterative { rate: f64 },
    OneShot { target: f64 },
}

impl PruneStyle {
    /// Fraction of surviving weights removed per round.
    pub fn rate(&self) -> f64 {
        match *self {
            PruneStyle::Iterative { rate } => rate,
            PruneStyle::OneShot { target } => 1.0 - target,
        }
    }
}

/// Densities after rounds `0..=rounds`.
pub fn schedule_sparsity(rounds: usize, style: PruneStyle) -> Vec<f64> {
    match style {
        PruneStyle::Iterative { rate } => (0..=rounds).map(|r| (1.0 - rate).powi(r as i32)).collect(),
        PruneStyle::OneShot { target } => {
            if rounds == 0 {
                vec![1.0]
            } else {
                vec![1.0, target]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn all_weights(n: usize) -> Vec<bool> {
        vec![true; n]
    }

    #[test]
    fn hand_enumerated_example() {
        let theta = [0.5, -0.1, 0.3, 0.2];
        let (m, r) = global_magnitude_prune(&theta, &Mask::full(4), &all_weights(4), 0.5).unwrap();
        assert_eq!(m.bits(), &[true, false, true, false]);
        assert_eq!(r.threshold, 0.3f32 as f64);
        assert_eq!(r.surviving, 2);
        assert_eq!(r.density, 0.5);
        assert_eq!(m.round(), 1);
    }

    #[test]
    fn ties_prune_lowest_indices_first() {
        let theta = [1.0, -1.0, 1.0, 1.0, -1.0];
        let (m, _) = global_magnitude_prune(&theta, &Mask::full(5), &all_weights(5), 0.4).unwrap();
        assert_eq!(m.bits(), &[false, false, true, true, true]);
    }

    #[test]
    fn biases_are_never_pruned() {
        let theta = [0.0, 5.0, 0.0, 6.0, 7.0];
        let is_weight = [false, true, false, true, true];
        let (m, r) = global_magnitude_prune(&theta, &Mask::full(5), &is_weight, 0.3).unwrap();
        assert_eq!(m.bits(), &[true, false, true, true, true]);
        assert_eq!(r.threshold, 6.0);
    }

    #[test]
    fn ten_rounds_at_twenty_percent() {
        let n = 10_000;
        let theta: Vec<f32> = (0..n).map(|i| ((i * 7919) % n) as f32 + 1.0).collect();
        let w = all_weights(n);
        let mut mask = Mask::full(n);
        for _ in 0..10 {
            mask = global_magnitude_prune(&theta, &mask, &w, 0.2).unwrap().0;
        }
        let density = mask.density(&w);
        assert_eq!(mask.surviving_weights(&w), (0.8f64.powi(10) * n as f64).round() as usize);
        assert!((density - 0.107).abs() < 5e-4, "{density}");
    }

    #[test]
    fn error_paths() {
        let w = all_weights(3);
        let theta = [1.0, 2.0, 3.0];
        for rate in [0.0, 1.0, -0.5, 1.5] {
            assert!(matches!(
                global_magnitude_prune(&theta, &Mask::full(3), &w, rate),
                Err(Error::Parameter(_))
            ));
        }
        let empty = Mask::from_bits(vec![false; 3], 4);
        assert!(matches!(
            global_magnitude_prune(&theta, &empty, &w, 0.5),
            Err(Error::State(_))
        ));
        // 0.1 of 3 weights rounds to zero removed
        assert!(matches!(
            global_magnitude_prune(&theta, &Mask::full(3), &w, 0.1),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn intersection_cases() {
        let a = Mask::from_bits(vec![true, true, false], 0);
        let b = Mask::from_bits(vec![true, false, true], 0);
        assert_eq!(mask_intersection(&a, &b).unwrap().bits(), &[true, false, false]);
        assert_eq!(mask_intersection(&a, &a).unwrap().bits(), a.bits());
        assert!(mask_intersection(&a, &Mask::full(2)).is_err());
    }

    #[test]
    fn apply_mask_cases() {
        let theta = [1.5f32, -2.0, 3.25];
        assert_eq!(apply_mask(&theta, &Mask::full(3)).unwrap(), theta.to_vec());
        let m = Mask::from_bits(vec![false, true, false], 1);
        assert_eq!(apply_mask(&theta, &m).unwrap(), vec![0.0, -2.0, 0.0]);
        assert!(apply_mask(&theta, &Mask::full(2)).is_err());
    }

    #[test]
    fn schedules() {
        let it = schedule_sparsity(25, PruneStyle::Iterative { rate: 0.2 });
        assert_eq!(it.len(), 26);
        assert!((it[25] - 0.0038).abs() < 5e-5);
        assert!((it[10] - 0.107).abs() < 5e-4);
        assert_eq!(schedule_sparsity(1, PruneStyle::OneShot { target: 0.3 }), vec![1.0, 0.3]);
        assert_eq!(schedule_sparsity(0, PruneStyle::Iterative { rate: 0.2 }), vec![1.0]);
    }

    fn arb_problem() -> impl Strategy<Value = (Vec<f32>, Vec<bool>)> {
        (20usize..200).prop_flat_map(|n| {
            (
                proptest::collection::vec(-4.0f32..4.0, n),
                proptest::collection::vec(proptest::bool::weighted(0.85), n),
            )
        })
    }

    proptest! {
        #[test]
        fn rounds_are_nested_exact_and_keep_biases((theta, is_weight) in arb_problem()) {
            let wcount = is_weight.iter().filter(|&&w| w).count();
            prop_assume!(wcount >= 20);
            let mut mask = Mask::full(theta.len());
            for r in 1..=5 {
                let target = scheduled_survivors(wcount, 0.2, r);
                if target == 0 || target >= mask.surviving_weights(&is_weight) { break; }
                let (next, rep) = global_magnitude_prune(&theta, &mask, &is_weight, 0.2).unwrap();
                prop_assert!(next.is_nested_in(&mask));
                let inter = mask_intersection(&next, &mask).unwrap();
                prop_assert_eq!(inter.bits(), next.bits());
                prop_assert!(next.keeps_biases(&is_weight));
                prop_assert_eq!(next.surviving_weights(&is_weight), target);
                prop_assert!(rep.threshold >= 0.0);
                mask = next;
            }
        }

        #[test]
        fn positive_scaling_scales_threshold((theta, is_weight) in arb_problem(), k in -4i32..5) {
            prop_assume!(is_weight.iter().filter(|&&w| w).count() >= 20);
            let c = 2f32.powi(k);
            let scaled: Vec<f32> = theta.iter().map(|v| v * c).collect();
            let full = Mask::full(theta.len());
            let (m1, r1) = global_magnitude_prune(&theta, &full, &is_weight, 0.2).unwrap();
            let (m2, r2) = global_magnitude_prune(&scaled, &full, &is_weight, 0.2).unwrap();
            prop_assert_eq!(m1.bits(), m2.bits());
            prop_assert_eq!(r2.threshold, r1.threshold * c as f64);
        }

        #[test]
        fn apply_mask_keeps_survivors_bit_exact(theta in proptest::collection::vec(-1e3f32..1e3, 1..100), seed in any::<u64>()) {
            let bits: Vec<bool> = (0..theta.len()).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
            let m = Mask::from_bits(bits.clone(), 1);
            let out = apply_mask(&theta, &m).unwrap();
            for i in 0..theta.len() {
                if bits[i] {
                    prop_assert_eq!(out[i].to_bits(), theta[i].to_bits());
                } else {
                    prop_assert_eq!(out[i], 0.0);
                }
            }
        }
    }
}
