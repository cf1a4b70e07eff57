//! Cosine-similarity kernels and the two alignment objectives, with analytic
//! gradients with respect to the student embeddings `A`. Targets `T` are
//! constants.
//!
//! Both losses are sums over the batch:
//!
//! ```text
//! CS  = sum_i 1 - sim(A_i, T_i)
//! NCE = sum_i -log( exp(sim(A_i, T_i)/tau) / sum_{b in D(i)} exp(sim(A_i, T_b)/tau) )
//! ```
//!
//! `D(i)` is every index in the batch ([`NceDenominator::Inclusive`]) or every
//! index except `i` ([`NceDenominator::Exclusive`]).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TEMPERATURE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Cs,
    Nce,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Cs => "CS",
            LossKind::Nce => "NCE",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NceDenominator {
    /// The positive pair is part of the softmax normalizer.
    #[default]
    Inclusive,
    /// Only the other targets in the batch are in the normalizer.
    Exclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    pub temperature: f64,
    #[serde(default)]
    pub denominator: NceDenominator,
}

impl LossConfig {
    pub fn cs() -> Self {
        Self {
            kind: LossKind::Cs,
            temperature: DEFAULT_TEMPERATURE,
            denominator: NceDenominator::Inclusive,
        }
    }

    pub fn nce(temperature: f64) -> Self {
        Self {
            kind: LossKind::Nce,
            temperature,
            denominator: NceDenominator::Inclusive,
        }
    }

    pub fn evaluate(&self, a: ArrayView2<f64>, t: ArrayView2<f64>) -> Result<LossResult> {
        match self.kind {
            LossKind::Cs => cs_loss(a, t),
            LossKind::Nce => nce_loss_with(a, t, self.temperature, self.denominator),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    /// Per-pair contributions; `value` is their sum.
    pub terms: Vec<f64>,
    /// d value / d A, same shape as A.
    pub grad: Array2<f64>,
}

fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

pub fn cosine_similarity(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("lengths {} and {}", a.len(), b.len())));
    }
    let (na, nb) = (norm(a), norm(b));
    if !(na > 0.0) {
        return Err(Error::ZeroNorm { what: "first", row: 0 });
    }
    if !(nb > 0.0) {
        return Err(Error::ZeroNorm { what: "second", row: 0 });
    }
    Ok((a.dot(&b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Unit-normalized rows plus the original norms.
fn normalize_rows(m: ArrayView2<f64>, what: &'static str) -> Result<(Array2<f64>, Array1<f64>)> {
    let norms: Array1<f64> = m.rows().into_iter().map(norm).collect();
    if let Some(row) = norms.iter().position(|n| !(*n > 0.0)) {
        return Err(Error::ZeroNorm { what, row });
    }
    if let Some(row) = norms.iter().position(|n| !n.is_finite()) {
        return Err(Error::NonFinite(format!("{what} row {row}")));
    }
    let unit = &m / &norms.view().insert_axis(Axis(1));
    Ok((unit, norms))
}

fn check_pair_shapes(a: ArrayView2<f64>, t: ArrayView2<f64>) -> Result<()> {
    if a.dim() != t.dim() {
        return Err(Error::Shape(format!(
            "student batch {:?} vs target batch {:?}",
            a.dim(),
            t.dim()
        )));
    }
    Ok(())
}

/// Entry (i, j) is `sim(A_i, T_j)`.
pub fn pairwise_similarity(a: ArrayView2<f64>, t: ArrayView2<f64>) -> Result<Array2<f64>> {
    if a.ncols() != t.ncols() {
        return Err(Error::Shape(format!("dims {} and {}", a.ncols(), t.ncols())));
    }
    let (ua, _) = normalize_rows(a, "student")?;
    let (ut, _) = normalize_rows(t, "target")?;
    Ok(ua.dot(&ut.t()))
}

pub fn cs_loss(a: ArrayView2<f64>, t: ArrayView2<f64>) -> Result<LossResult> {
    check_pair_shapes(a, t)?;
    let (ua, na) = normalize_rows(a, "student")?;
    let (ut, _) = normalize_rows(t, "target")?;
    let mut grad = Array2::zeros(a.dim());
    let mut terms = Vec::with_capacity(a.nrows());
    for i in 0..a.nrows() {
        let s = ua.row(i).dot(&ut.row(i));
        terms.push(1.0 - s);
        // d sim / d a = (t_hat - s * a_hat) / |a|
        let g = (&ua.row(i) * s - &ut.row(i)) / na[i];
        grad.row_mut(i).assign(&g);
    }
    Ok(LossResult {
        value: terms.iter().sum(),
        terms,
        grad,
    })
}

/// InfoNCE with the positive included in the normalizer.
pub fn nce_loss(a: ArrayView2<f64>, t: ArrayView2<f64>, temperature: f64) -> Result<LossResult> {
    nce_loss_with(a, t, temperature, NceDenominator::Inclusive)
}

pub fn nce_loss_with(
    a: ArrayView2<f64>,
    t: ArrayView2<f64>,
    temperature: f64,
    denominator: NceDenominator,
) -> Result<LossResult> {
    check_pair_shapes(a, t)?;
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let n = a.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if denominator == NceDenominator::Exclusive && n < 2 {
        return Err(Error::InvalidArgument(
            "exclusive denominator needs at least 2 pairs".into(),
        ));
    }
    let (ua, na) = normalize_rows(a, "student")?;
    let (ut, _) = normalize_rows(t, "target")?;
    let sims = ua.dot(&ut.t());

    let mut grad = Array2::zeros(a.dim());
    let mut terms = Vec::with_capacity(n);
    let mut coef = vec![0.0; n];
    for i in 0..n {
        let in_denominator = |b: usize| denominator == NceDenominator::Inclusive || b != i;
        let logits = sims.row(i).mapv(|s| s / temperature);
        let argmax = (0..n)
            .filter(|&b| in_denominator(b))
            .max_by(|&x, &y| logits[x].total_cmp(&logits[y]))
            .expect("denominator is nonempty");
        let max = logits[argmax];
        // the max term contributes exactly 1; ln_1p keeps tiny remainders
        let rest: f64 = (0..n)
            .filter(|&b| in_denominator(b) && b != argmax)
            .map(|b| (logits[b] - max).exp())
            .sum();
        let sum_exp = 1.0 + rest;
        let lse = max + rest.ln_1p();
        terms.push(lse - logits[i]);

        // d term / d sim_ib = (p_ib - [b == i]) / tau
        for (b, c) in coef.iter_mut().enumerate() {
            let p = if in_denominator(b) {
                (logits[b] - max).exp() / sum_exp
            } else {
                0.0
            };
            *c = (p - if b == i { 1.0 } else { 0.0 }) / temperature;
        }
        let a_hat = ua.row(i);
        let mut g = grad.row_mut(i);
        for (b, &c) in coef.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let s = sims[[i, b]];
            g.scaled_add(c / na[i], &ut.row(b));
            g.scaled_add(-c * s / na[i], &a_hat);
        }
    }
    let value: f64 = terms.iter().sum();
    if !value.is_finite() {
        return Err(Error::NonFinite("NCE loss value".into()));
    }
    Ok(LossResult { value, terms, grad })
}

/// Relative gap between the analytic gradient of `loss_fn` at `a` and
/// central differences with step `eps`, measured as
/// `||g - fd|| / max(||g||, ||fd||, 1e-6)` over the whole matrix. A zero
/// gradient is therefore compared absolutely.
pub fn finite_difference_check<F>(loss_fn: F, a: ArrayView2<f64>, eps: f64) -> Result<f64>
where
    F: Fn(ArrayView2<f64>) -> Result<LossResult>,
{
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::InvalidArgument(format!("eps must be in (0, 1e-3], got {eps}")));
    }
    let analytic = loss_fn(a)?.grad;
    let mut probe = a.to_owned();
    let mut numeric = Array2::zeros(a.dim());
    for idx in ndarray::indices(a.dim()) {
        let orig = probe[idx];
        probe[idx] = orig + eps;
        let plus = loss_fn(probe.view())?.value;
        probe[idx] = orig - eps;
        let minus = loss_fn(probe.view())?.value;
        probe[idx] = orig;
        numeric[idx] = (plus - minus) / (2.0 * eps);
    }
    let norm = |m: &Array2<f64>| m.iter().map(|v| v * v).sum::<f64>().sqrt();
    let gap = norm(&(&analytic - &numeric));
    Ok(gap / norm(&analytic).max(norm(&numeric)).max(1e-6))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn cosine_anchors() {
        let v = |x: &[f64]| Array1::from(x.to_vec());
        assert_eq!(cosine_similarity(v(&[1.0, 0.0]).view(), v(&[1.0, 0.0]).view()).unwrap(), 1.0);
        assert_eq!(cosine_similarity(v(&[1.0, 0.0]).view(), v(&[0.0, 1.0]).view()).unwrap(), 0.0);
        assert_eq!(cosine_similarity(v(&[1.0, 0.0]).view(), v(&[-1.0, 0.0]).view()).unwrap(), -1.0);
        assert!(matches!(
            cosine_similarity(v(&[0.0, 0.0]).view(), v(&[1.0, 0.0]).view()),
            Err(Error::ZeroNorm { .. })
        ));
    }

    #[test]
    fn pairwise_anchors() {
        let eye = Array2::<f64>::eye(2);
        assert_eq!(pairwise_similarity(eye.view(), eye.view()).unwrap(), eye);
        let one = array![[3.0, 4.0]];
        let t = array![[4.0, 3.0]];
        let s = pairwise_similarity(one.view(), t.view()).unwrap();
        assert!((s[[0, 0]] - 24.0 / 25.0).abs() < 1e-15);
        let same = Array2::from_elem((3, 2), 1.5);
        let s = pairwise_similarity(same.view(), same.view()).unwrap();
        assert!(s.iter().all(|v| (v - 1.0).abs() < 1e-15));
        let bad = array![[1.0, 0.0], [0.0, 0.0]];
        assert!(matches!(
            pairwise_similarity(bad.view(), eye.view()),
            Err(Error::ZeroNorm { what: "student", row: 1 })
        ));
    }

    #[test]
    fn cs_anchors() {
        let a = array![[1.0, 2.0], [-3.0, 0.5]];
        let r = cs_loss(a.view(), a.view()).unwrap();
        assert!(r.value.abs() < 1e-15);
        assert!(r.grad.iter().all(|g| g.abs() < 1e-15));
        let t = array![[-2.0, 1.0], [0.5, 3.0]];
        assert!((cs_loss(a.view(), t.view()).unwrap().value - 2.0).abs() < 1e-15);
    }

    #[test]
    fn nce_anchors() {
        let a = array![[0.3, -0.2, 0.9]];
        let t = array![[1.0, 1.0, 1.0]];
        assert_eq!(nce_loss(a.view(), t.view(), 0.1).unwrap().value, 0.0);

        let same = Array2::from_elem((5, 3), 0.7);
        let r = nce_loss(same.view(), same.view(), 0.1).unwrap();
        for term in &r.terms {
            assert!((term - 5f64.ln()).abs() < 1e-12);
        }

        let a = array![[1.0, 0.0], [1.0, 1.0]];
        let t = array![[1.0, 0.0], [0.0, 1.0]];
        let r = nce_loss(a.view(), t.view(), 0.1).unwrap();
        assert!((r.terms[0] - (-10f64).exp().ln_1p()).abs() < 1e-15);
        assert!((r.terms[0] - 4.54e-5).abs() < 1e-7);
    }

    #[test]
    fn nce_argument_errors() {
        let a = array![[1.0, 0.0]];
        assert!(nce_loss(a.view(), a.view(), 0.0).is_err());
        assert!(nce_loss(a.view(), a.view(), -1.0).is_err());
        assert!(nce_loss_with(a.view(), a.view(), 0.1, NceDenominator::Exclusive).is_err());
        let z = array![[0.0, 0.0]];
        assert!(matches!(nce_loss(z.view(), a.view(), 0.1), Err(Error::ZeroNorm { .. })));
    }

    #[test]
    fn exclusive_denominator_drops_positive() {
        // N=2, positive sim 1, negative sim 0: term_1 = -(1/tau) + 0/tau = -10
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        let r = nce_loss_with(a.view(), a.view(), 0.1, NceDenominator::Exclusive).unwrap();
        assert!((r.terms[0] + 10.0).abs() < 1e-12);
        let err = finite_difference_check(
            |x| nce_loss_with(x, a.view(), 0.1, NceDenominator::Exclusive),
            array![[0.8, 0.3], [-0.2, 1.1]].view(),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn gradient_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, t) = (random(&mut rng, 3, 4), random(&mut rng, 3, 4));
        let e = finite_difference_check(|x| cs_loss(x, t.view()), a.view(), 1e-6).unwrap();
        assert!(e < 1e-4, "cs {e}");
        let (a, t) = (random(&mut rng, 5, 4), random(&mut rng, 5, 4));
        let e = finite_difference_check(|x| nce_loss(x, t.view(), 0.1), a.view(), 1e-6).unwrap();
        assert!(e < 1e-4, "nce {e}");
        assert!(finite_difference_check(|x| cs_loss(x, a.view()), a.view(), 1e-2).is_err());
    }

    #[test]
    fn large_temperature_flattens_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (a, t) = (random(&mut rng, 6, 3), random(&mut rng, 6, 3));
        let r = nce_loss(a.view(), t.view(), 1e6).unwrap();
        for term in r.terms {
            assert!((term - 6f64.ln()).abs() < 1e-5);
        }
    }

    fn batch() -> impl Strategy<Value = (Array2<f64>, Array2<f64>)> {
        (2usize..10, 1usize..6, any::<u64>()).prop_map(|(n, d, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut a = random(&mut rng, n, d);
            let mut t = random(&mut rng, n, d);
            // keep rows away from zero
            a.rows_mut().into_iter().for_each(|mut r| r[0] += 2.0);
            t.rows_mut().into_iter().for_each(|mut r| r[0] -= 2.0 * (d as f64 % 2.0 - 0.5));
            (a, t)
        })
    }

    proptest! {
        #[test]
        fn losses_are_row_scale_invariant((a, t) in batch(), k in 0.01f64..100.0, row in 0usize..10) {
            let row = row % a.nrows();
            let mut a2 = a.clone();
            a2.row_mut(row).mapv_inplace(|v| v * k);
            let mut t2 = t.clone();
            t2.row_mut(row).mapv_inplace(|v| v * k);
            for (x, y) in [(&a2, &t), (&a, &t2)] {
                let cs0 = cs_loss(a.view(), t.view()).unwrap().value;
                let cs1 = cs_loss(x.view(), y.view()).unwrap().value;
                prop_assert!((cs0 - cs1).abs() < 1e-9);
                let n0 = nce_loss(a.view(), t.view(), 0.1).unwrap().value;
                let n1 = nce_loss(x.view(), y.view(), 0.1).unwrap().value;
                prop_assert!((n0 - n1).abs() < 1e-9);
            }
        }

        #[test]
        fn loss_bounds((a, t) in batch(), tau in 0.05f64..2.0) {
            let n = a.nrows();
            let cs = cs_loss(a.view(), t.view()).unwrap().value;
            prop_assert!(cs >= -1e-12 && cs <= 2.0 * n as f64 + 1e-12);
            let sims = pairwise_similarity(a.view(), t.view()).unwrap();
            let r = nce_loss(a.view(), t.view(), tau).unwrap();
            for (i, term) in r.terms.iter().enumerate() {
                prop_assert!(*term > 0.0);
                prop_assert!(*term < (n as f64).ln() + 2.0 / tau);
                let pos_is_max = sims.row(i).iter().all(|s| *s <= sims[[i, i]]);
                if pos_is_max {
                    prop_assert!(*term <= (n as f64).ln() + 1e-12);
                }
            }
        }
    }
}
