//! Elementwise kernels on hot paths.

const MAGIC: f64 = 6_755_399_441_055_744.0; // 1.5 · 2^52
const LN2_HI: f64 = 0.693_147_180_369_123_8;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
const UNDERFLOW: f64 = -708.0;
const OVERFLOW: f64 = 709.0;

/// `a·b + c`, fused when `FMA` is set.
#[inline(always)]
fn madd<const FMA: bool>(a: f64, b: f64, c: f64) -> f64 {
    if FMA {
        a.mul_add(b, c)
    } else {
        a * b + c
    }
}

/// `e^x` within 1 ulp over the normal range, written branch-free so the loop
/// in [`exp_affine`] vectorizes. Below `-708` the result is 0.
#[inline(always)]
fn exp_core<const FMA: bool>(x: f64) -> f64 {
    let xc = x.clamp(UNDERFLOW, OVERFLOW);
    let t = xc * std::f64::consts::LOG2_E + MAGIC;
    let k = t - MAGIC;
    let r = xc - k * LN2_HI - k * LN2_LO;
    // Taylor series to degree 13 in Estrin form; |r| <= ln2 / 2
    let r2 = r * r;
    let r4 = r2 * r2;
    let r8 = r4 * r4;
    let a0 = madd::<FMA>(r, 1.0, 1.0);
    let a1 = madd::<FMA>(r, 1.0 / 6.0, 0.5);
    let a2 = madd::<FMA>(r, 1.0 / 120.0, 1.0 / 24.0);
    let a3 = madd::<FMA>(r, 1.0 / 5_040.0, 1.0 / 720.0);
    let a4 = madd::<FMA>(r, 1.0 / 362_880.0, 1.0 / 40_320.0);
    let a5 = madd::<FMA>(r, 1.0 / 39_916_800.0, 1.0 / 3_628_800.0);
    let a6 = madd::<FMA>(r, 1.0 / 6_227_020_800.0, 1.0 / 479_001_600.0);
    let b0 = madd::<FMA>(a1, r2, a0);
    let b1 = madd::<FMA>(a3, r2, a2);
    let b2 = madd::<FMA>(a5, r2, a4);
    let c0 = madd::<FMA>(b1, r4, b0);
    let c1 = madd::<FMA>(a6, r4, b2);
    let p = madd::<FMA>(c1, r8, c0);
    let bits = t.to_bits().wrapping_sub(MAGIC.to_bits()).wrapping_add(1023) << 52;
    let y = p * f64::from_bits(bits);
    if x < UNDERFLOW {
        0.0
    } else {
        y
    }
}

#[inline(always)]
fn exp_affine_generic<const FMA: bool>(xs: &mut [f64], scale: f64, shift: f64) {
    for x in xs.iter_mut() {
        *x = exp_core::<FMA>(madd::<FMA>(scale, *x, -shift));
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
fn exp_affine_fma(xs: &mut [f64], scale: f64, shift: f64) {
    exp_affine_generic::<true>(xs, scale, shift)
}

/// Whether the fused kernels can run on this CPU.
fn has_fma() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
    }
    #[cfg(not(target_arch = "x86_64"))]
    false
}

/// Replaces each `x` with `e^(scale·x − shift)` and returns the sum.
pub(crate) fn exp_affine(xs: &mut [f64], scale: f64, shift: f64) -> f64 {
    #[cfg(target_arch = "x86_64")]
    if has_fma() {
        // SAFETY: the required CPU features were detected at runtime.
        unsafe { exp_affine_fma(xs, scale, shift) };
        return sum(xs);
    }
    exp_affine_generic::<false>(xs, scale, shift);
    sum(xs)
}

const LANES: usize = 8;

#[inline(always)]
fn fold_lanes(acc: [f64; LANES]) -> f64 {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

#[inline(always)]
fn dot<const FMA: bool>(a: &[f64], b: &[f64]) -> f64 {
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    let mut acc = [0.0; LANES];
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] = madd::<FMA>(x[l], y[l], acc[l]);
        }
    }
    fold_lanes(acc) + tail
}

#[inline(always)]
fn sum(a: &[f64]) -> f64 {
    let c = a.chunks_exact(LANES);
    let tail: f64 = c.remainder().iter().sum();
    let mut acc = [0.0; LANES];
    for x in c {
        for l in 0..LANES {
            acc[l] += x[l];
        }
    }
    fold_lanes(acc) + tail
}

/// Largest `scale · a_j`.
#[inline(always)]
fn scaled_max(a: &[f64], scale: f64) -> f64 {
    let c = a.chunks_exact(LANES);
    let tail = c.remainder().iter().fold(f64::NEG_INFINITY, |m, &x| m.max(scale * x));
    let mut acc = [f64::NEG_INFINITY; LANES];
    for x in c {
        for l in 0..LANES {
            let y = scale * x[l];
            acc[l] = if y > acc[l] { y } else { acc[l] };
        }
    }
    acc.iter().fold(tail, |m, &x| m.max(x))
}

#[inline(always)]
fn softmax_rows_generic<const FMA: bool>(w: &mut [f64], len: usize, scale: f64, lse: &mut [f64]) {
    for (row, l) in w.chunks_exact_mut(len).zip(lse) {
        let m = scaled_max(row, scale);
        exp_affine_generic::<FMA>(row, scale, m);
        let s = sum(row);
        let inv = 1.0 / s;
        row.iter_mut().for_each(|x| *x *= inv);
        *l = m + s.ln();
    }
}

#[inline(always)]
fn exp_rows_generic<const FMA: bool>(w: &mut [f64], len: usize, scale: f64, lse: &[f64]) {
    for (row, &l) in w.chunks_exact_mut(len).zip(lse) {
        exp_affine_generic::<FMA>(row, scale, l);
    }
}

#[inline(always)]
fn score_grad_rows_generic<const FMA: bool>(dp: &mut [f64], p: &[f64], len: usize, scale: f64) {
    for (dr, pr) in dp.chunks_exact_mut(len).zip(p.chunks_exact(len)) {
        let rowdot = dot::<FMA>(dr, pr);
        for (d, &pi) in dr.iter_mut().zip(pr) {
            *d = scale * pi * (*d - rowdot);
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
fn softmax_rows_fma(w: &mut [f64], len: usize, scale: f64, lse: &mut [f64]) {
    softmax_rows_generic::<true>(w, len, scale, lse)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
fn exp_rows_fma(w: &mut [f64], len: usize, scale: f64, lse: &[f64]) {
    exp_rows_generic::<true>(w, len, scale, lse)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
fn score_grad_rows_fma(dp: &mut [f64], p: &[f64], len: usize, scale: f64) {
    score_grad_rows_generic::<true>(dp, p, len, scale)
}

/// Turns each `len`-wide row of raw scores into `softmax(scale · row)` and
/// stores the row's log-sum-exp in `lse`.
pub(crate) fn softmax_rows(w: &mut [f64], len: usize, scale: f64, lse: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if has_fma() {
        // SAFETY: the required CPU features were detected at runtime.
        return unsafe { softmax_rows_fma(w, len, scale, lse) };
    }
    softmax_rows_generic::<false>(w, len, scale, lse)
}

/// Rebuilds softmax rows from raw scores and the saved log-sum-exp.
pub(crate) fn exp_rows(w: &mut [f64], len: usize, scale: f64, lse: &[f64]) {
    #[cfg(target_arch = "x86_64")]
    if has_fma() {
        // SAFETY: the required CPU features were detected at runtime.
        return unsafe { exp_rows_fma(w, len, scale, lse) };
    }
    exp_rows_generic::<false>(w, len, scale, lse)
}

/// Maps the gradient `dp` w.r.t. softmax rows `p` onto the raw scores:
/// `scale · p ⊙ (dp − ⟨dp, p⟩)` row by row.
pub(crate) fn score_grad_rows(dp: &mut [f64], p: &[f64], len: usize, scale: f64) {
    #[cfg(target_arch = "x86_64")]
    if has_fma() {
        // SAFETY: the required CPU features were detected at runtime.
        return unsafe { score_grad_rows_fma(dp, p, len, scale) };
    }
    score_grad_rows_generic::<false>(dp, p, len, scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_std_exp() {
        let mut worst: f64 = 0.0;
        let xs: Vec<f64> = (0..200_000).map(|i| -708.0 + i as f64 * 0.00708).collect();
        let mut ys = xs.clone();
        exp_affine(&mut ys, 1.0, 0.0);
        for (x, y) in xs.iter().zip(&ys) {
            worst = worst.max((x.exp() - y).abs() / x.exp());
        }
        assert!(worst < 5e-16, "{worst:e}");
        let mut plain = xs.clone();
        exp_affine_generic::<false>(&mut plain, 1.0, 0.0);
        for (x, y) in xs.iter().zip(&plain) {
            assert!((x.exp() - y).abs() / x.exp() < 5e-16);
        }
    }

    #[test]
    fn edges_and_sum() {
        let mut v = [0.0, -800.0, f64::NEG_INFINITY, 1.0];
        let sum = exp_affine(&mut v, 1.0, 0.0);
        assert_eq!(&v[..3], &[1.0, 0.0, 0.0]);
        assert!((v[3] - std::f64::consts::E).abs() < 1e-15);
        assert_eq!(sum, v.iter().sum::<f64>());
        let mut w = [2.0, 4.0];
        exp_affine(&mut w, 0.5, 1.0);
        assert_eq!(w[0], 1.0);
        assert!((w[1] - std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn lane_reductions_match_plain_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in [0, 1, 7, 8, 9, 31, 256] {
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let plain: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            assert!((dot::<false>(&a, &b) - plain).abs() < 1e-13);
            assert!((dot::<true>(&a, &b) - plain).abs() < 1e-13);
            assert!((sum(&a) - a.iter().sum::<f64>()).abs() < 1e-13);
            for c in [2.0, -0.5] {
                assert_eq!(scaled_max(&a, c), a.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(c * x)));
            }
        }
    }

    #[test]
    fn row_kernels_match_direct_formulas() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (rows, len) = (3, 13);
        let raw: Vec<f64> = (0..rows * len).map(|_| rng.random_range(-3.0..3.0)).collect();
        for scale in [0.7, -1.3] {
            let (mut w, mut lse) = (raw.clone(), vec![0.0; rows]);
            softmax_rows(&mut w, len, scale, &mut lse);
            let mut again = raw.clone();
            exp_rows(&mut again, len, scale, &lse);
            let dp: Vec<f64> = (0..rows * len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut ds = dp.clone();
            score_grad_rows(&mut ds, &w, len, scale);
            for r in 0..rows {
                let s: Vec<f64> = raw[r * len..(r + 1) * len].iter().map(|x| scale * x).collect();
                let z: f64 = s.iter().map(|x| x.exp()).sum();
                assert!((lse[r] - z.ln()).abs() < 1e-14);
                let inner: f64 = (0..len).map(|j| dp[r * len + j] * s[j].exp() / z).sum();
                for j in 0..len {
                    let p = s[j].exp() / z;
                    assert!((w[r * len + j] - p).abs() < 1e-15);
                    assert!((again[r * len + j] - p).abs() < 1e-15);
                    assert!((ds[r * len + j] - scale * p * (dp[r * len + j] - inner)).abs() < 1e-14);
                }
            }
        }
    }
}
