//! Inner loops shared by the layer implementations.
//!
//! Reductions carry a loop-dependence that the compiler may not reassociate
//! for floating point, so `dot` spreads the sum over eight explicit
//! accumulator lanes and combines them in a fixed order. Together with
//! `mul_add` this compiles to wide FMA on CPUs that have it while keeping
//! results bit-reproducible run to run (the association order is part of the
//! code, not the scheduler).

/// Dot product with a fixed eight-lane accumulation order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    const LANES: usize = 8;
    let mut acc = [0.0f64; LANES];
    let whole = a.len() - a.len() % LANES;
    let (a_main, a_tail) = a.split_at(whole);
    let (b_main, b_tail) = b.split_at(whole);
    for (ca, cb) in a_main.chunks_exact(LANES).zip(b_main.chunks_exact(LANES)) {
        for j in 0..LANES {
            acc[j] = ca[j].mul_add(cb[j], acc[j]);
        }
    }
    let mut tail = 0.0;
    for (x, y) in a_tail.iter().zip(b_tail) {
        tail = x.mul_add(*y, tail);
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `y += alpha * x`, element-wise.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = xi.mul_add(alpha, *yi);
    }
}
