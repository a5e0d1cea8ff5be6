//! Reductions written with fixed independent partial sums so they vectorise
//! while keeping a summation order that does not depend on the target.

#[inline(always)]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline(always)]
pub(crate) fn sum(a: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let ca = a.chunks_exact(8);
    let mut tail = 0.0;
    for x in ca.remainder() {
        tail += x;
    }
    for x in ca {
        for l in 0..8 {
            acc[l] += x[l];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `sum((a - m)^2)`
#[inline(always)]
pub(crate) fn centered_sq(a: &[f64], m: f64) -> f64 {
    let mut acc = [0.0; 8];
    let ca = a.chunks_exact(8);
    let mut tail = 0.0;
    for x in ca.remainder() {
        tail += (x - m) * (x - m);
    }
    for x in ca {
        for l in 0..8 {
            let d = x[l] - m;
            acc[l] += d * d;
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Runs `$body` compiled for AVX2 when the CPU has it. Only plain mul/add
/// are used, so both paths produce identical bits.
macro_rules! multiversion {
    ($name:ident, $ret:ty, ($($arg:ident : $ty:ty),*), $body:ident) => {
        pub(crate) fn $name($($arg: $ty),*) -> $ret {
            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx2")]
                unsafe fn wide($($arg: $ty),*) -> $ret {
                    $body($($arg),*)
                }
                if std::arch::is_x86_feature_detected!("avx2") {
                    // SAFETY: the feature was detected at runtime.
                    return unsafe { wide($($arg),*) };
                }
            }
            $body($($arg),*)
        }
    };
}
pub(crate) use multiversion;
