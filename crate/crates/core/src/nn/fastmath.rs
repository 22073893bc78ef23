//! Elementwise transcendental kernels over slices. The bodies are
//! branch-free so they vectorize; on x86-64 an AVX2+FMA build is selected at
//! run time. Results agree with libm to a few ulp.

const LOG2E: f64 = std::f64::consts::LOG2_E;
const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
/// Adding and subtracting this rounds to the nearest integer.
const ROUND_MAGIC: f64 = 6_755_399_441_055_744.0;

/// `1/k!` for `k = 0..=12`.
const EXP_COEFFS: [f64; 13] = [
    1.0,
    1.0,
    0.5,
    1.0 / 6.0,
    1.0 / 24.0,
    1.0 / 120.0,
    1.0 / 720.0,
    1.0 / 5040.0,
    1.0 / 40320.0,
    1.0 / 362880.0,
    1.0 / 3628800.0,
    1.0 / 39916800.0,
    1.0 / 479001600.0,
];

/// `1/(2k+1)` for `k = 0..=17`.
const ATANH_COEFFS: [f64; 18] = [
    1.0,
    1.0 / 3.0,
    1.0 / 5.0,
    1.0 / 7.0,
    1.0 / 9.0,
    1.0 / 11.0,
    1.0 / 13.0,
    1.0 / 15.0,
    1.0 / 17.0,
    1.0 / 19.0,
    1.0 / 21.0,
    1.0 / 23.0,
    1.0 / 25.0,
    1.0 / 27.0,
    1.0 / 29.0,
    1.0 / 31.0,
    1.0 / 33.0,
    1.0 / 35.0,
];

#[inline(always)]
fn madd<const FMA: bool>(a: f64, b: f64, c: f64) -> f64 {
    if FMA {
        a.mul_add(b, c)
    } else {
        a * b + c
    }
}

#[inline(always)]
fn exp_k<const FMA: bool>(x: f64) -> f64 {
    let x = x.max(-708.0).min(709.0);
    let t = x * LOG2E + ROUND_MAGIC;
    let n = t - ROUND_MAGIC;
    // Integer part of x / ln 2, offset by 2048 so that all arithmetic below
    // stays in unsigned 64-bit lanes.
    let k = t
        .to_bits()
        .wrapping_sub(ROUND_MAGIC.to_bits())
        .wrapping_add(2048);
    let r = madd::<FMA>(-n, LN2_LO, madd::<FMA>(-n, LN2_HI, x));
    let mut p = EXP_COEFFS[12];
    for c in EXP_COEFFS[..12].iter().rev() {
        p = madd::<FMA>(p, r, *c);
    }
    // Split the scale in two so that n = 1024 does not overflow the exponent.
    let half = k >> 1;
    let s1 = f64::from_bits((half - 1) << 52);
    let s2 = f64::from_bits((k - half - 1) << 52);
    p * s1 * s2
}

#[inline(always)]
fn sigmoid_k<const FMA: bool>(x: f64) -> f64 {
    1.0 / (1.0 + exp_k::<FMA>(-x))
}

#[inline(always)]
fn tanh_k<const FMA: bool>(x: f64) -> f64 {
    let e = exp_k::<FMA>(-2.0 * x.abs());
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

/// `ln(1 + u)` for `u` in `[0, 1]`, via `2 atanh(u / (2 + u))`.
#[inline(always)]
fn ln_1p_unit_k<const FMA: bool>(u: f64) -> f64 {
    let s = u / (2.0 + u);
    let s2 = s * s;
    let mut p = ATANH_COEFFS[17];
    for c in ATANH_COEFFS[..17].iter().rev() {
        p = madd::<FMA>(p, s2, *c);
    }
    2.0 * s * p
}

/// `ln(1 + e^z) / beta` with `z = beta x`.
#[inline(always)]
fn softplus_k<const FMA: bool>(x: f64, beta: f64) -> f64 {
    let z = beta * x;
    (z.max(0.0) + ln_1p_unit_k::<FMA>(exp_k::<FMA>(-z.abs()))) / beta
}

macro_rules! slice_kernel {
    ($name:ident, $generic:ident, |$v:ident $(, $arg:ident : $ty:ty)*| $body:expr) => {
        fn $generic<const FMA: bool>(xs: &mut [f64] $(, $arg: $ty)*) {
            // Independent chunks give the polynomial chains room to overlap.
            let mut chunks = xs.chunks_exact_mut(16);
            for chunk in &mut chunks {
                for $v in chunk.iter_mut() {
                    *$v = $body;
                }
            }
            for $v in chunks.into_remainder() {
                *$v = $body;
            }
        }

        pub fn $name(xs: &mut [f64] $(, $arg: $ty)*) {
            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx2,fma")]
                unsafe fn wide(xs: &mut [f64] $(, $arg: $ty)*) {
                    $generic::<true>(xs $(, $arg)*)
                }
                if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
                    // SAFETY: the required CPU features were detected above.
                    return unsafe { wide(xs $(, $arg)*) };
                }
            }
            $generic::<false>(xs $(, $arg)*)
        }
    };
}

#[cfg(test)]
slice_kernel!(exp_slice, exp_generic, |v| exp_k::<FMA>(*v));
slice_kernel!(sigmoid_slice, sigmoid_generic, |v| sigmoid_k::<FMA>(*v));
slice_kernel!(tanh_slice, tanh_generic, |v| tanh_k::<FMA>(*v));
slice_kernel!(
    softplus_slice,
    softplus_generic,
    |v, beta: f64| softplus_k::<FMA>(*v, beta)
);
slice_kernel!(
    sigmoid_scaled_slice,
    sigmoid_scaled_generic,
    |v, beta: f64| sigmoid_k::<FMA>(beta * *v)
);

pub fn sigmoid(x: f64) -> f64 {
    let mut v = [x];
    sigmoid_slice(&mut v);
    v[0]
}
