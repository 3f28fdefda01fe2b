use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::real::Real;
use crate::error::{invalid, Error, Result};
use crate::eval::permutations;
use crate::grid::AngularGrid;

/// Floor applied inside every logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Bce,
    Ce,
    Sce,
    Emd,
    Semd,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [Self::Bce, Self::Ce, Self::Sce, Self::Emd, Self::Semd];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Bce => "bce",
            Self::Ce => "ce",
            Self::Sce => "sce",
            Self::Emd => "emd",
            Self::Semd => "semd",
        }
    }

    /// Whether targets are smoothed by [`soft_target`].
    pub fn is_soft(self) -> bool {
        matches!(self, Self::Sce | Self::Semd)
    }

    /// Target distribution for one source of class `psi`.
    pub fn source_target(self, psi: usize, grid: &AngularGrid) -> Result<Vec<f64>> {
        match self {
            Self::Bce => multi_hot(&[psi], grid.size()),
            Self::Ce | Self::Emd => one_hot(psi, grid.size()),
            Self::Sce | Self::Semd => soft_target(psi, grid),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid(format!("unknown loss '{s}'")))
    }
}

pub fn one_hot(k: usize, size: usize) -> Result<Vec<f64>> {
    multi_hot(&[k], size)
}

/// Ones at every listed class.
pub fn multi_hot(classes: &[usize], size: usize) -> Result<Vec<f64>> {
    let mut v = vec![0.0; size];
    for &k in classes {
        if k >= size {
            return Err(invalid(format!("class {k} outside a grid of {size}")));
        }
        v[k] = 1.0;
    }
    Ok(v)
}

/// Smoothed target: 0.4 at `psi`, 0.2 one class away, 0.1 two classes away
/// (cyclically).
pub fn soft_target(psi: usize, grid: &AngularGrid) -> Result<Vec<f64>> {
    let k = grid.size();
    if k < 5 {
        return Err(invalid(format!(
            "soft targets need at least 5 classes, grid has {k}"
        )));
    }
    if psi >= k {
        return Err(invalid(format!("class {psi} outside a grid of {k}")));
    }
    let mut v = vec![0.0; k];
    v[psi] = 0.4;
    v[(psi + 1) % k] = 0.2;
    v[(psi + k - 1) % k] = 0.2;
    v[(psi + 2) % k] = 0.1;
    v[(psi + k - 2) % k] = 0.1;
    Ok(v)
}

/// Loss value and its gradient with respect to `p`.
pub fn loss_and_grad<T: Real>(kind: LossKind, p: &[T], t: &[T]) -> (T, Vec<T>) {
    assert_eq!(
        p.len(),
        t.len(),
        "loss: prediction and target lengths differ"
    );
    let floor = T::of(LOG_FLOOR);
    let mut grad = vec![T::zero(); p.len()];
    let mut value = T::zero();
    match kind {
        LossKind::Bce => {
            let inv_k = T::one() / T::of(p.len() as f64);
            for i in 0..p.len() {
                let (pi, ti) = (p[i], t[i]);
                let q = T::one() - pi;
                value -= ti * pi.max(floor).ln() + (T::one() - ti) * q.max(floor).ln();
                let mut g = T::zero();
                if pi > floor {
                    g -= ti / pi;
                }
                if q > floor {
                    g += (T::one() - ti) / q;
                }
                grad[i] = g * inv_k;
            }
            value *= inv_k;
        }
        LossKind::Ce | LossKind::Sce => {
            for i in 0..p.len() {
                value -= t[i] * p[i].max(floor).ln();
                if p[i] > floor {
                    grad[i] = -t[i] / p[i];
                }
            }
        }
        LossKind::Emd | LossKind::Semd => {
            let mut c = T::zero();
            let mut cdf_diff = vec![T::zero(); p.len()];
            for i in 0..p.len() {
                c += p[i] - t[i];
                cdf_diff[i] = c;
                value += c * c;
            }
            let mut acc = T::zero();
            for i in (0..p.len()).rev() {
                acc += cdf_diff[i] + cdf_diff[i];
                grad[i] = acc;
            }
        }
    }
    (value, grad)
}

pub fn loss_value(kind: LossKind, p: &[f64], t: &[f64]) -> f64 {
    loss_and_grad(kind, p, t).0
}

/// Minimum summed loss over all assignments of predictions (rows) to
/// targets (columns); `perm[i]` is the target given to prediction `i`.
/// Ties keep the lexicographically first permutation.
pub fn pit_loss(pair_loss: &[Vec<f64>]) -> Result<(f64, Vec<usize>)> {
    let n = pair_loss.len();
    if n == 0 || pair_loss.iter().any(|r| r.len() != n) {
        return Err(invalid("PIT needs a non-empty square loss matrix"));
    }
    let mut best = (f64::INFINITY, Vec::new());
    for perm in permutations(n) {
        let s: f64 = perm.iter().enumerate().map(|(i, &j)| pair_loss[i][j]).sum();
        if s < best.0 || best.1.is_empty() {
            best = (s, perm);
        }
    }
    Ok(best)
}

/// Target angles sorted ascending in degrees (stable).
pub fn fixed_order_targets(doas_deg: &[f64]) -> Vec<f64> {
    let mut v = doas_deg.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn soft_target_examples() {
        let g1 = AngularGrid::new(1).unwrap();
        let t = soft_target(0, &g1).unwrap();
        assert_eq!(
            (t[358], t[359], t[0], t[1], t[2]),
            (0.1, 0.2, 0.4, 0.2, 0.1)
        );
        assert_eq!(t.iter().sum::<f64>(), 1.0);
        let g10 = AngularGrid::new(10).unwrap();
        let t = soft_target(35, &g10).unwrap();
        let nz: Vec<usize> = (0..36).filter(|&i| t[i] > 0.0).collect();
        assert_eq!(nz, vec![0, 1, 33, 34, 35]);
        assert!(soft_target(0, &AngularGrid::new(90).unwrap()).is_err());
        assert!(soft_target(36, &g10).is_err());
    }

    #[test]
    fn emd_examples() {
        let a = one_hot(0, 4).unwrap();
        let b = one_hot(2, 4).unwrap();
        assert_eq!(loss_value(LossKind::Emd, &a, &b), 2.0);
        assert_eq!(loss_value(LossKind::Emd, &a, &a), 0.0);
    }

    #[test]
    fn sce_uniform_is_log_k() {
        let g = AngularGrid::new(10).unwrap();
        let u = vec![1.0 / 36.0; 36];
        let t = soft_target(7, &g).unwrap();
        assert!((loss_value(LossKind::Sce, &u, &t) - 36f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn pit_examples() {
        let (l, p) = pit_loss(&[vec![1.0, 4.0], vec![4.0, 1.0]]).unwrap();
        assert_eq!((l, p), (2.0, vec![0, 1]));
        let (l, p) = pit_loss(&[vec![4.0, 1.0], vec![1.0, 4.0]]).unwrap();
        assert_eq!((l, p), (2.0, vec![1, 0]));
        assert!(pit_loss(&[vec![1.0, 2.0]]).is_err());
        assert!(pit_loss(&[]).is_err());
    }

    #[test]
    fn fixed_order_examples() {
        assert_eq!(fixed_order_targets(&[200.0, 10.0]), vec![10.0, 200.0]);
        assert_eq!(fixed_order_targets(&[0.0, 359.0]), vec![0.0, 359.0]);
    }

    #[test]
    fn loss_kind_parse() {
        for k in LossKind::ALL {
            assert_eq!(k.as_str().parse::<LossKind>().unwrap(), k);
        }
        assert!("mse".parse::<LossKind>().is_err());
    }

    fn distribution(k: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..1.0, k).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn losses_are_nonnegative(p in distribution(12), psi in 0usize..12) {
            let g = AngularGrid::new(30).unwrap();
            for kind in LossKind::ALL {
                let t = kind.source_target(psi, &g).unwrap();
                prop_assert!(loss_value(kind, &p, &t) >= 0.0);
            }
        }

        #[test]
        fn swapping_targets_swaps_permutation(a in 0.0f64..5.0, b in 0.0f64..5.0,
                                               c in 0.0f64..5.0, d in 0.0f64..5.0) {
            let (l1, p1) = pit_loss(&[vec![a, b], vec![c, d]]).unwrap();
            let (l2, p2) = pit_loss(&[vec![b, a], vec![d, c]]).unwrap();
            prop_assert_eq!(l1, l2);
            if (a + d) != (b + c) {
                prop_assert_eq!(p1.iter().map(|&j| 1 - j).collect::<Vec<_>>(), p2);
            }
        }
    }
}
