//! Vectorizable `sin`/`cos` for the activation hot loop.
//!
//! Range reduction by `π/2` in three parts, then the Cephes minimax
//! polynomials on `[-π/4, π/4]`. Agrees with the platform libm to a few ulp
//! for `|x| < 2^20`; larger arguments fall back to libm.

const FRAC_2_PI: f64 = std::f64::consts::FRAC_2_PI;
const PIO2_1: f64 = 1.570_796_326_734_125_6;
const PIO2_2: f64 = 6.077_100_506_303_966e-11;
const PIO2_3: f64 = 2.022_266_248_795_950_6e-21;

const S: [f64; 6] = [
    1.589_623_015_765_465_6e-10,
    -2.505_074_776_285_780_7e-8,
    2.755_731_362_138_572_2e-6,
    -1.984_126_982_958_954e-4,
    8.333_333_333_322_118e-3,
    -1.666_666_666_666_663e-1,
];
const C: [f64; 6] = [
    -1.135_853_652_138_768_2e-11,
    2.087_570_084_197_473e-9,
    -2.755_731_417_929_674e-7,
    2.480_158_728_885_170_4e-5,
    -1.388_888_888_887_305_6e-3,
    4.166_666_666_666_659_5e-2,
];

const LIMIT: f64 = 1_048_576.0;

#[inline(always)]
pub fn sin_cos(x: f64) -> (f64, f64) {
    if !(x.abs() < LIMIT) {
        return x.sin_cos();
    }
    sin_cos_reduced(x)
}

/// Branch-free core valid for `|x| < LIMIT`; written so the compiler can
/// vectorize loops over it.
#[inline(always)]
fn sin_cos_reduced(x: f64) -> (f64, f64) {
    // Round-to-nearest via the 1.5·2^52 shift; the low mantissa bits of
    // `t` then hold k mod 4.
    const SHIFT: f64 = 6_755_399_441_055_744.0;
    let t = x * FRAC_2_PI + SHIFT;
    let k = t - SHIFT;
    let q = t.to_bits() & 3;
    let r = ((x - k * PIO2_1) - k * PIO2_2) - k * PIO2_3;
    let z = r * r;
    let ps = ((((S[0] * z + S[1]) * z + S[2]) * z + S[3]) * z + S[4]) * z + S[5];
    let pc = ((((C[0] * z + C[1]) * z + C[2]) * z + C[3]) * z + C[4]) * z + C[5];
    let sr = r + r * z * ps;
    let cr = 1.0 - 0.5 * z + z * z * pc;
    let odd = q & 1 == 1;
    let s = if odd { cr } else { sr };
    let c = if odd { sr } else { cr };
    let s = if q & 2 == 2 { -s } else { s };
    let c = if (q + 1) & 2 == 2 { -c } else { c };
    (s, c)
}

#[inline(always)]
fn activation_kernel(pre: &[f64], post: &mut [f64], slope: &mut [f64], omega: f64, finer: bool) {
    for ((z, a), d) in pre.iter().zip(post.iter_mut()).zip(slope.iter_mut()) {
        let m = if finer { z.abs() + 1.0 } else { 1.0 };
        let dm = if finer { 2.0 * z.abs() + 1.0 } else { 1.0 };
        let (s, c) = sin_cos_reduced(omega * m * z);
        *a = s;
        *d = omega * dm * c;
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn activation_kernel_avx2(pre: &[f64], post: &mut [f64], slope: &mut [f64], omega: f64, finer: bool) {
    activation_kernel(pre, post, slope, omega, finer)
}

/// Fills `post[i] = σ(pre[i])` and `slope[i] = σ'(pre[i])` for the sine
/// (`finer = false`) or FINER activation.
pub fn activate_slice(pre: &[f64], post: &mut [f64], slope: &mut [f64], omega: f64, finer: bool) {
    assert!(pre.len() == post.len() && pre.len() == slope.len());
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU features were detected at runtime.
            unsafe { activation_kernel_avx2(pre, post, slope, omega, finer) };
        } else {
            activation_kernel(pre, post, slope, omega, finer);
        }
    }
    #[cfg(not(target_arch = "x86_64"))]
    activation_kernel(pre, post, slope, omega, finer);

    // rare large arguments go through libm
    for (i, z) in pre.iter().enumerate() {
        let m = if finer { z.abs() + 1.0 } else { 1.0 };
        let x = omega * m * z;
        if !(x.abs() < LIMIT) {
            let (s, c) = x.sin_cos();
            post[i] = s;
            let dm = if finer { 2.0 * z.abs() + 1.0 } else { 1.0 };
            slope[i] = omega * dm * c;
        }
    }
}
