//! Self-supervised training targets and complementary views.

use ndarray::{Array2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Window;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Point,
    Block,
}

/// How training targets are drawn from a window's observed cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskStrategy {
    pub kind: MaskKind,
    /// Upper bound of the per-window ratio `r ~ U[0, ratio_max]`.
    pub ratio_max: f64,
    /// Block length range, inclusive. Ignored for point masks.
    pub min_len: usize,
    pub max_len: usize,
}

/// Largest per-position block start probability allowed for block targets.
pub const BLOCK_PROB_LIMIT: f64 = 0.15;

impl MaskStrategy {
    pub fn point() -> Self {
        Self {
            kind: MaskKind::Point,
            ratio_max: 1.0,
            min_len: 1,
            max_len: 1,
        }
    }

    /// Block targets of `[L/2, L]` steps for window length `window`.
    pub fn block(window: usize) -> Self {
        Self {
            kind: MaskKind::Block,
            ratio_max: BLOCK_PROB_LIMIT,
            min_len: (window / 2).max(1),
            max_len: window.max(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let limit = match self.kind {
            MaskKind::Point => 1.0,
            MaskKind::Block => BLOCK_PROB_LIMIT,
        };
        if !(0.0..=limit).contains(&self.ratio_max) {
            let key = match self.kind {
                MaskKind::Point => "mask.point_ratio_max",
                MaskKind::Block => "mask.block_prob_max",
            };
            return Err(Error::Config(format!(
                "{key} = {} outside [0, {limit}]",
                self.ratio_max
            )));
        }
        if self.kind == MaskKind::Block && (self.min_len == 0 || self.min_len > self.max_len) {
            return Err(Error::Config(format!(
                "block target length range [{}, {}] is empty",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }
}

/// Draws a target mask among the `observed` cells; the ratio is drawn once
/// for the whole window.
pub fn sample_training_mask<R: Rng + ?Sized>(
    observed: &Array2<bool>,
    strategy: &MaskStrategy,
    rng: &mut R,
) -> Array2<bool> {
    let ratio = rng.random::<f64>() * strategy.ratio_max;
    sample_training_mask_with_ratio(observed, strategy, ratio, rng)
}

/// As [`sample_training_mask`] with the window ratio fixed to `ratio`.
pub fn sample_training_mask_with_ratio<R: Rng + ?Sized>(
    observed: &Array2<bool>,
    strategy: &MaskStrategy,
    ratio: f64,
    rng: &mut R,
) -> Array2<bool> {
    let ratio = ratio.clamp(0.0, 1.0);
    let (len, c) = observed.dim();
    let mut m = Array2::from_elem((len, c), false);
    match strategy.kind {
        MaskKind::Point => {
            for (t, &o) in m.iter_mut().zip(observed.iter()) {
                *t = o && rng.random_bool(ratio);
            }
        }
        MaskKind::Block => {
            for t in 0..len {
                for j in 0..c {
                    if rng.random_bool(ratio) {
                        let block = rng.random_range(strategy.min_len..=strategy.max_len);
                        for tt in t..(t + block).min(len) {
                            m[[tt, j]] |= observed[[tt, j]];
                        }
                    }
                }
            }
        }
    }
    m
}

/// One side of a complementary pair: which cells are denoised and which
/// condition the denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingView {
    pub target_mask: Array2<bool>,
    pub cond_mask: Array2<bool>,
}

/// Two views of one window whose target and conditioning roles are swapped.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplementaryViews {
    pub m: Array2<bool>,
    pub view1: TrainingView,
    pub view2: TrainingView,
}

/// Splits the window's usable observations (observed and not held out for
/// evaluation) by `m`: view 1 targets `m`, view 2 targets the rest.
pub fn complementary_views(window: &Window, m: &Array2<bool>) -> Result<ComplementaryViews> {
    let observed = window.cond_mask();
    if observed.dim() != m.dim() {
        return Err(Error::Shape(format!(
            "mask {:?} vs window {:?}",
            m.dim(),
            observed.dim()
        )));
    }
    let outside = Zip::from(m)
        .and(&observed)
        .fold(0usize, |acc, &t, &o| acc + usize::from(t && !o));
    if outside > 0 {
        return Err(Error::Invariant(format!(
            "target mask selects {outside} cells outside the observed set"
        )));
    }
    let rest = Zip::from(m).and(&observed).map_collect(|&t, &o| o && !t);
    Ok(ComplementaryViews {
        m: m.clone(),
        view1: TrainingView {
            target_mask: m.clone(),
            cond_mask: rest.clone(),
        },
        view2: TrainingView {
            target_mask: rest,
            cond_mask: m.clone(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use ndarray::array;

    fn window(obs: Array2<bool>) -> Window {
        let dim = obs.dim();
        Window {
            values: Array2::zeros(dim),
            obs_mask: obs,
            eval_mask: Array2::from_elem(dim, false),
            start_index: 0,
        }
    }

    #[test]
    fn full_ratio_selects_everything_observed() {
        let obs = array![[true, false], [true, true], [false, true]];
        let mut rng = rng_from_seed(1);
        let m = sample_training_mask_with_ratio(&obs, &MaskStrategy::point(), 1.0, &mut rng);
        assert_eq!(m, obs);
        let m = sample_training_mask_with_ratio(&obs, &MaskStrategy::point(), 0.0, &mut rng);
        assert!(m.iter().all(|&x| !x));
    }

    #[test]
    fn point_ratio_concentrates() {
        let obs = Array2::from_elem((1000, 100), true);
        let mut rng = rng_from_seed(2);
        let m = sample_training_mask_with_ratio(&obs, &MaskStrategy::point(), 0.5, &mut rng);
        let frac = m.iter().filter(|&&x| x).count() as f64 / 1e5;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
    }

    #[test]
    fn block_targets_stay_inside_observed() {
        let mut obs = Array2::from_elem((24, 4), true);
        obs[[5, 1]] = false;
        obs[[6, 1]] = false;
        let mut rng = rng_from_seed(3);
        let strat = MaskStrategy::block(24);
        for _ in 0..50 {
            let m = sample_training_mask_with_ratio(&obs, &strat, 0.15, &mut rng);
            assert!(!m[[5, 1]] && !m[[6, 1]]);
        }
    }

    #[test]
    fn strategy_range_checked() {
        let mut s = MaskStrategy::block(24);
        s.ratio_max = 0.2;
        assert!(s.validate().is_err());
        let mut p = MaskStrategy::point();
        p.ratio_max = 1.0;
        assert!(p.validate().is_ok());
    }

    #[test]
    fn whole_mask_gives_empty_second_view() {
        let w = window(Array2::from_elem((3, 2), true));
        let views = complementary_views(&w, &w.obs_mask).unwrap();
        assert_eq!(views.view1.target_mask, w.obs_mask);
        assert!(views.view2.target_mask.iter().all(|&x| !x));
    }

    #[test]
    fn checkerboard_views_are_the_diagonals() {
        let w = window(Array2::from_elem((2, 2), true));
        let m = array![[true, false], [false, true]];
        let views = complementary_views(&w, &m).unwrap();
        assert_eq!(views.view1.target_mask, m);
        assert_eq!(views.view2.target_mask, array![[false, true], [true, false]]);
        assert_eq!(views.view1.cond_mask, views.view2.target_mask);
    }

    #[test]
    fn exhaustive_two_by_two_partition() {
        let w = window(Array2::from_elem((2, 2), true));
        for bits in 0u8..16 {
            let m = Array2::from_shape_fn((2, 2), |(i, j)| bits >> (2 * i + j) & 1 == 1);
            let v = complementary_views(&w, &m).unwrap();
            for ((&a, &b), &o) in v
                .view1
                .target_mask
                .iter()
                .zip(v.view2.target_mask.iter())
                .zip(w.obs_mask.iter())
            {
                assert_eq!(u8::from(a) + u8::from(b), u8::from(o));
            }
        }
    }

    #[test]
    fn mask_outside_observed_is_rejected() {
        let w = window(array![[true, false]]);
        let err = complementary_views(&w, &array![[false, true]]).unwrap_err();
        assert!(matches!(err, Error::Invariant(_)));
    }

    #[test]
    fn eval_cells_are_never_conditioning() {
        let mut w = window(Array2::from_elem((2, 2), true));
        w.eval_mask[[0, 0]] = true;
        let m = array![[false, true], [false, false]];
        let v = complementary_views(&w, &m).unwrap();
        assert!(!v.view1.cond_mask[[0, 0]] && !v.view2.cond_mask[[0, 0]]);
        assert!(!v.view1.target_mask[[0, 0]] && !v.view2.target_mask[[0, 0]]);
    }
}
