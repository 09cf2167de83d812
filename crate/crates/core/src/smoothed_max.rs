//! Smoothed max operators over the probability simplex.
//!
//! For a strongly convex regularizer `Ω` on the simplex, the smoothed max is
//!
//! ```text
//! maxΩ(x) = max_{q ∈ Δ} <q, x> - Ω(q)
//! ```
//!
//! and its gradient is the maximizing `q`. Two regularizers are provided:
//!
//! * negative entropy `γ Σ q log q`: `maxΩ` is log-sum-exp at temperature `γ`
//!   and the gradient is the softmax;
//! * squared ℓ2 `(γ/2)‖q‖²`: the gradient is the Euclidean projection of `x/γ`
//!   onto the simplex, which is typically sparse.
//!
//! In both cases the Hessian is `J_Ω(q)` evaluated at the gradient, so
//! Hessian-vector products only need the gradient.
//!
//! Infeasible coordinates are never represented by `-inf`. The `*_masked`
//! variants take an explicit activity mask and give masked coordinates exactly
//! zero weight; the DP engines call the dense variants on parent sub-vectors.
//!
//! A single-coordinate input is a special case worth keeping in mind: the
//! negentropy operator returns `x` unchanged, while squared ℓ2 returns
//! `x - γ/2` (the only feasible `q` is `1`). This shifts DP values on chains.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegKind {
    /// `Ω(q) = γ Σ q_i log q_i`.
    NegEntropy,
    /// `Ω(q) = (γ/2) ‖q‖²`.
    SquaredL2,
}

impl RegKind {
    pub fn name(self) -> &'static str {
        match self {
            RegKind::NegEntropy => "entropy",
            RegKind::SquaredL2 => "l2",
        }
    }
}

impl std::fmt::Display for RegKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for RegKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entropy" | "negentropy" => Ok(RegKind::NegEntropy),
            "l2" | "squared-l2" => Ok(RegKind::SquaredL2),
            other => Err(Error::Domain(format!(
                "unknown regularizer '{other}' (expected 'entropy' or 'l2')"
            ))),
        }
    }
}

/// A regularizer kind together with its temperature `γ > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularizer {
    kind: RegKind,
    gamma: f64,
}

impl Regularizer {
    pub fn new(kind: RegKind, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidGamma(gamma));
        }
        Ok(Self { kind, gamma })
    }

    pub fn negentropy(gamma: f64) -> Result<Self> {
        Self::new(RegKind::NegEntropy, gamma)
    }

    pub fn squared_l2(gamma: f64) -> Result<Self> {
        Self::new(RegKind::SquaredL2, gamma)
    }

    pub fn kind(&self) -> RegKind {
        self.kind
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Same kind at a different temperature.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.kind, gamma)
    }

    /// Lower and upper bounds `(L, U)` of `Ω` on the `d`-dimensional simplex.
    ///
    /// `max(x) - U <= maxΩ(x) <= max(x) - L`.
    pub fn omega_bounds(&self, d: usize) -> (f64, f64) {
        let d = d.max(1) as f64;
        match self.kind {
            RegKind::NegEntropy => (-self.gamma * d.ln(), 0.0),
            RegKind::SquaredL2 => (self.gamma / (2.0 * d), self.gamma / 2.0),
        }
    }

    /// `maxΩ` of a single coordinate minus that coordinate.
    pub(crate) fn singleton_offset(&self) -> f64 {
        match self.kind {
            RegKind::NegEntropy => 0.0,
            RegKind::SquaredL2 => -0.5 * self.gamma,
        }
    }
}

impl Default for Regularizer {
    fn default() -> Self {
        Self {
            kind: RegKind::NegEntropy,
            gamma: 1.0,
        }
    }
}

/// A probability vector: non-negative entries summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    /// Checks membership with a `1e-9` tolerance on the sum.
    pub fn new(q: Vec<f64>) -> Result<Self> {
        let mut sum = 0.0;
        for (index, &value) in q.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite { index, value });
            }
            if value < 0.0 {
                return Err(Error::Domain(format!(
                    "simplex vector has negative entry {value} at index {index}"
                )));
            }
            sum += value;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "simplex vector sums to {sum}, not 1"
            )));
        }
        Ok(Self(q))
    }

    pub(crate) fn from_raw(q: Vec<f64>) -> Self {
        Self(q)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// 0/1 indicator of the non-zero entries.
    pub fn support(&self) -> Vec<bool> {
        self.0.iter().map(|&q| q > 0.0).collect()
    }
}

impl std::ops::Index<usize> for SimplexVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

fn check_finite(x: &[f64]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::EmptySupport);
    }
    for (index, &value) in x.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite { index, value });
        }
    }
    Ok(())
}

/// Smoothed max of a dense vector.
pub fn max_omega(x: &[f64], reg: &Regularizer) -> Result<f64> {
    check_finite(x)?;
    let mut q = vec![0.0; x.len()];
    Ok(value_grad_into(x, reg, &mut q))
}

/// Gradient of the smoothed max of a dense vector.
pub fn grad_max_omega(x: &[f64], reg: &Regularizer) -> Result<SimplexVector> {
    max_omega_with_grad(x, reg).map(|(_, q)| q)
}

/// Value and gradient in one pass.
pub fn max_omega_with_grad(x: &[f64], reg: &Regularizer) -> Result<(f64, SimplexVector)> {
    check_finite(x)?;
    let mut q = vec![0.0; x.len()];
    let v = value_grad_into(x, reg, &mut q);
    Ok((v, SimplexVector::from_raw(q)))
}

/// Smoothed max restricted to the coordinates where `active` is true.
pub fn max_omega_masked(x: &[f64], active: &[bool], reg: &Regularizer) -> Result<f64> {
    max_omega_masked_with_grad(x, active, reg).map(|(v, _)| v)
}

/// Gradient restricted to the active coordinates; masked coordinates get exactly 0.
pub fn grad_max_omega_masked(
    x: &[f64],
    active: &[bool],
    reg: &Regularizer,
) -> Result<SimplexVector> {
    max_omega_masked_with_grad(x, active, reg).map(|(_, q)| q)
}

pub fn max_omega_masked_with_grad(
    x: &[f64],
    active: &[bool],
    reg: &Regularizer,
) -> Result<(f64, SimplexVector)> {
    if active.len() != x.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            got: active.len(),
        });
    }
    let mut dense = Vec::with_capacity(x.len());
    for (index, (&value, &on)) in x.iter().zip(active).enumerate() {
        if on {
            if !value.is_finite() {
                return Err(Error::NonFinite { index, value });
            }
            dense.push(value);
        }
    }
    if dense.is_empty() {
        return Err(Error::EmptySupport);
    }
    let mut q_dense = vec![0.0; dense.len()];
    let v = value_grad_into(&dense, reg, &mut q_dense);
    let mut q = vec![0.0; x.len()];
    let mut it = q_dense.into_iter();
    for (slot, &on) in q.iter_mut().zip(active) {
        if on {
            *slot = it.next().unwrap_or(0.0);
        }
    }
    Ok((v, SimplexVector::from_raw(q)))
}

/// `J_Ω(q) z`, the Hessian of `maxΩ` (at the point whose gradient is `q`) applied to `z`.
pub fn hess_vec(q: &SimplexVector, z: &[f64], reg: &Regularizer) -> Result<Vec<f64>> {
    if q.len() != z.len() {
        return Err(Error::LengthMismatch {
            expected: q.len(),
            got: z.len(),
        });
    }
    let mut out = vec![0.0; z.len()];
    jacobian_apply_into(q.as_slice(), z, reg, &mut out);
    Ok(out)
}

/// Euclidean projection onto the simplex by sorting and thresholding.
pub fn project_simplex(x: &[f64]) -> Result<SimplexVector> {
    check_finite(x)?;
    let mut q = vec![0.0; x.len()];
    let mut scratch = Vec::with_capacity(x.len());
    project_into(x, &mut q, &mut scratch);
    Ok(SimplexVector::from_raw(q))
}

// Unchecked kernels used by the DP engines. Inputs are finite and non-empty.

pub(crate) fn value_grad_into(x: &[f64], reg: &Regularizer, q: &mut [f64]) -> f64 {
    debug_assert_eq!(x.len(), q.len());
    debug_assert!(!x.is_empty());
    let gamma = reg.gamma;
    if x.len() == 1 {
        q[0] = 1.0;
        return x[0] + reg.singleton_offset();
    }
    match reg.kind {
        RegKind::NegEntropy => {
            let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for (qi, &xi) in q.iter_mut().zip(x) {
                let w = ((xi - m) / gamma).exp();
                *qi = w;
                s += w;
            }
            for qi in q.iter_mut() {
                *qi /= s;
            }
            m + gamma * s.ln()
        }
        RegKind::SquaredL2 => {
            let scaled: Vec<f64> = x.iter().map(|&xi| xi / gamma).collect();
            let mut scratch = Vec::with_capacity(x.len());
            project_into(&scaled, q, &mut scratch);
            let mut dot = 0.0;
            let mut sq = 0.0;
            for (&qi, &xi) in q.iter().zip(x) {
                dot += qi * xi;
                sq += qi * qi;
            }
            dot - 0.5 * gamma * sq
        }
    }
}

pub(crate) fn jacobian_apply_into(q: &[f64], z: &[f64], reg: &Regularizer, out: &mut [f64]) {
    let gamma = reg.gamma;
    match reg.kind {
        RegKind::NegEntropy => {
            let qz: f64 = q.iter().zip(z).map(|(a, b)| a * b).sum();
            for ((o, &qi), &zi) in out.iter_mut().zip(q).zip(z) {
                *o = qi * (zi - qz) / gamma;
            }
        }
        RegKind::SquaredL2 => {
            let mut count = 0usize;
            let mut sz = 0.0;
            for (&qi, &zi) in q.iter().zip(z) {
                if qi > 0.0 {
                    count += 1;
                    sz += zi;
                }
            }
            let mean = if count > 0 { sz / count as f64 } else { 0.0 };
            for ((o, &qi), &zi) in out.iter_mut().zip(q).zip(z) {
                *o = if qi > 0.0 { (zi - mean) / gamma } else { 0.0 };
            }
        }
    }
}

pub(crate) fn project_into(x: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
    scratch.clear();
    scratch.extend_from_slice(x);
    scratch.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (k, &u) in scratch.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        } else {
            break;
        }
    }
    for (o, &xi) in out.iter_mut().zip(x) {
        *o = (xi - tau).max(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ent(g: f64) -> Regularizer {
        Regularizer::negentropy(g).unwrap()
    }

    fn l2(g: f64) -> Regularizer {
        Regularizer::squared_l2(g).unwrap()
    }

    // Oracle: brute-force projection by trying every support set.
    fn projection_by_support_enumeration(x: &[f64]) -> Vec<f64> {
        let d = x.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 1u32..(1 << d) {
            let k = mask.count_ones() as f64;
            let s: f64 = (0..d).filter(|i| mask >> i & 1 == 1).map(|i| x[i]).sum();
            let tau = (s - 1.0) / k;
            let q: Vec<f64> = (0..d)
                .map(|i| if mask >> i & 1 == 1 { x[i] - tau } else { 0.0 })
                .collect();
            if q.iter().any(|&v| v < -1e-15) {
                continue;
            }
            let dist: f64 = q.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.as_ref().is_none_or(|(b, _)| dist < *b) {
                best = Some((dist, q));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn negentropy_two_zeros_is_log_two() {
        assert_abs_diff_eq!(max_omega(&[0.0, 0.0], &ent(1.0)).unwrap(), 2f64.ln(), epsilon = 1e-15);
        let q = grad_max_omega(&[0.0, 0.0], &ent(1.0)).unwrap();
        assert_eq!(q.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn squared_l2_two_zeros() {
        assert_abs_diff_eq!(max_omega(&[0.0, 0.0], &l2(1.0)).unwrap(), -0.25, epsilon = 1e-15);
    }

    #[test]
    fn squared_l2_sparse_example() {
        let x = [0.8, 0.2, -5.0];
        let oracle = projection_by_support_enumeration(&x);
        let q = grad_max_omega(&x, &l2(1.0)).unwrap();
        for (a, b) in q.as_slice().iter().zip(&oracle) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(q[2], 0.0);
        // <q,x> - ½‖q‖² with q = (0.8, 0.2, 0)
        let expected = 0.8 * 0.8 + 0.2 * 0.2 - 0.5 * (0.8 * 0.8 + 0.2 * 0.2);
        assert_abs_diff_eq!(max_omega(&x, &l2(1.0)).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 0.34, epsilon = 1e-12);
    }

    #[test]
    fn single_active_coordinate() {
        for reg in [ent(1.0), l2(1.0), ent(0.3), l2(2.0)] {
            let q = grad_max_omega_masked(&[10.0, 123.0], &[true, false], &reg).unwrap();
            assert_eq!(q.as_slice(), &[1.0, 0.0]);
        }
        assert_eq!(max_omega(&[10.0], &ent(0.7)).unwrap(), 10.0);
        assert_eq!(max_omega(&[10.0], &l2(0.7)).unwrap(), 10.0 - 0.35);
    }

    #[test]
    fn masked_entries_are_ignored() {
        let reg = ent(1.0);
        let v = max_omega_masked(&[1.0, f64::NAN, 2.0], &[true, false, true], &reg).unwrap();
        assert_abs_diff_eq!(v, max_omega(&[1.0, 2.0], &reg).unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn errors() {
        assert_eq!(
            max_omega_masked(&[1.0, 2.0], &[false, false], &ent(1.0)),
            Err(Error::EmptySupport)
        );
        assert!(matches!(
            max_omega(&[1.0, f64::INFINITY], &ent(1.0)),
            Err(Error::NonFinite { index: 1, .. })
        ));
        assert!(max_omega(&[], &ent(1.0)).is_err());
        assert!(Regularizer::negentropy(0.0).is_err());
        assert!(Regularizer::squared_l2(-1.0).is_err());
        assert!(Regularizer::squared_l2(f64::NAN).is_err());
        let q = SimplexVector::new(vec![0.5, 0.5]).unwrap();
        assert!(matches!(
            hess_vec(&q, &[1.0], &ent(1.0)),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn hess_vec_examples() {
        let q = SimplexVector::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(hess_vec(&q, &[3.0, -7.0], &ent(1.0)).unwrap(), vec![0.0, 0.0]);

        // (diag(q) - qqᵀ) = [[¼, -¼], [-¼, ¼]]; times (1, -1) = (½, -½).
        let q = SimplexVector::new(vec![0.5, 0.5]).unwrap();
        let hz = hess_vec(&q, &[1.0, -1.0], &ent(1.0)).unwrap();
        assert_abs_diff_eq!(hz[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(hz[1], -0.5, epsilon = 1e-15);

        let q = SimplexVector::new(vec![0.8, 0.2, 0.0]).unwrap();
        assert_eq!(hess_vec(&q, &[1.0, 1.0, 1.0], &l2(1.0)).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_simplex(&[0.3, 0.3, 0.4]).unwrap().as_slice(), &[0.3, 0.3, 0.4]);
        assert_eq!(project_simplex(&[2.0, 0.0]).unwrap().as_slice(), &[1.0, 0.0]);
        assert_eq!(project_simplex(&[0.8, 0.2, -5.0]).unwrap().as_slice(), &[0.8, 0.2, 0.0]);
    }

    #[test]
    fn l2_is_not_associative() {
        // maxΩ(maxΩ(x), c) vs maxΩ(x, c) on (0, 0, 0).
        let reg = l2(1.0);
        let inner = max_omega(&[0.0, 0.0], &reg).unwrap();
        let nested = max_omega(&[inner, 0.0], &reg).unwrap();
        let flat = max_omega(&[0.0, 0.0, 0.0], &reg).unwrap();
        assert!((nested - flat).abs() > 1e-3);
    }

    fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
        (2usize..=10).prop_flat_map(|d| proptest::collection::vec(-5.0f64..5.0, d))
    }

    fn reg_strategy() -> impl Strategy<Value = Regularizer> {
        (prop_oneof![Just(RegKind::NegEntropy), Just(RegKind::SquaredL2)], 0.05f64..3.0)
            .prop_map(|(k, g)| Regularizer::new(k, g).unwrap())
    }

    proptest! {
        #[test]
        fn gradient_is_on_simplex(x in vec_strategy(), reg in reg_strategy()) {
            let q = grad_max_omega(&x, &reg).unwrap();
            let s: f64 = q.as_slice().iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
            prop_assert!(q.as_slice().iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn boundedness(x in vec_strategy(), reg in reg_strategy()) {
            let v = max_omega(&x, &reg).unwrap();
            let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (lo, hi) = reg.omega_bounds(x.len());
            prop_assert!(v >= m - hi - 1e-12);
            prop_assert!(v <= m - lo + 1e-12);
        }

        #[test]
        fn distributivity(x in vec_strategy(), c in -10.0f64..10.0, reg in reg_strategy()) {
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            let a = max_omega(&shifted, &reg).unwrap();
            let b = max_omega(&x, &reg).unwrap() + c;
            prop_assert!((a - b).abs() <= 1e-10);
        }

        #[test]
        fn commutativity(x in vec_strategy(), seed in any::<u64>(), reg in reg_strategy()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut p = x.clone();
            p.shuffle(&mut rng);
            let a = max_omega(&p, &reg).unwrap();
            let b = max_omega(&x, &reg).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn monotonicity(x in vec_strategy(), bumps in proptest::collection::vec(0.0f64..2.0, 10), reg in reg_strategy()) {
            let y: Vec<f64> = x.iter().zip(&bumps).map(|(a, b)| a + b).collect();
            prop_assert!(max_omega(&x, &reg).unwrap() <= max_omega(&y, &reg).unwrap() + 1e-12);
        }

        #[test]
        fn projection_matches_support_enumeration(x in proptest::collection::vec(-3.0f64..3.0, 1..7)) {
            let q = project_simplex(&x).unwrap();
            let oracle = projection_by_support_enumeration(&x);
            for (a, b) in q.as_slice().iter().zip(&oracle) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn negentropy_is_associative(x in vec_strategy(), c in -5.0f64..5.0, g in 0.05f64..3.0) {
            let reg = ent(g);
            let nested = max_omega(&[max_omega(&x, &reg).unwrap(), c], &reg).unwrap();
            let mut flat = x.clone();
            flat.push(c);
            prop_assert!((nested - max_omega(&flat, &reg).unwrap()).abs() <= 1e-10);
        }

        #[test]
        fn gradient_matches_central_differences(x in vec_strategy(), reg in reg_strategy()) {
            let eps = 1e-4;
            let q = grad_max_omega(&x, &reg).unwrap();
            let support = q.support();
            for i in 0..x.len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += eps;
                xm[i] -= eps;
                if reg.kind() == RegKind::SquaredL2
                    && (grad_max_omega(&xp, &reg).unwrap().support() != support
                        || grad_max_omega(&xm, &reg).unwrap().support() != support)
                {
                    continue;
                }
                let fd = (max_omega(&xp, &reg).unwrap() - max_omega(&xm, &reg).unwrap()) / (2.0 * eps);
                let err = (fd - q[i]).abs() / fd.abs().max(q[i].abs()).max(1e-8);
                prop_assert!(err <= 1e-5 || (fd - q[i]).abs() <= 1e-10, "i={} fd={} an={}", i, fd, q[i]);
            }
        }

        #[test]
        fn hessian_matches_central_differences(
            x in vec_strategy(),
            z in proptest::collection::vec(-1.0f64..1.0, 10),
            reg in reg_strategy(),
        ) {
            let z = &z[..x.len()];
            let eps = 1e-4;
            let q = grad_max_omega(&x, &reg).unwrap();
            let xp: Vec<f64> = x.iter().zip(z).map(|(a, b)| a + eps * b).collect();
            let xm: Vec<f64> = x.iter().zip(z).map(|(a, b)| a - eps * b).collect();
            let qp = grad_max_omega(&xp, &reg).unwrap();
            let qm = grad_max_omega(&xm, &reg).unwrap();
            prop_assume!(reg.kind() == RegKind::NegEntropy || (qp.support() == q.support() && qm.support() == q.support()));
            let hz = hess_vec(&q, z, &reg).unwrap();
            for i in 0..x.len() {
                let fd = (qp[i] - qm[i]) / (2.0 * eps);
                prop_assert!((fd - hz[i]).abs() <= 1e-3 * fd.abs().max(hz[i].abs()).max(1e-3));
            }
        }
    }
}
