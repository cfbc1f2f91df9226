use crate::estimator::InstanceEstimate;
use crate::num::Real;

/// `T = q + p·(L_in − H) + d·L_out`.
#[inline]
pub fn estimate_latency<T: Real>(q: T, p: T, d: T, input_length: T, hit: T, output_length: T) -> T {
    q + p * (input_length - hit) + d * output_length
}

/// Same, reading the rates from smoothed estimates.
#[inline]
pub fn estimate_from<T: Real>(est: &InstanceEstimate<T>, input_length: u32, hit: u32, output_length: u32) -> T {
    let n = |v: u32| T::from_u32(v).unwrap();
    estimate_latency(est.q(), est.p(), est.d(), n(input_length), n(hit), n(output_length))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        let t = estimate_latency(0.5, 0.001, 0.02, 100.0, 0.0, 200.0);
        assert!((t - 4.6f64).abs() < 1e-12);
        assert_eq!(estimate_latency(0.0f32, 0.0, 0.0, 10.0, 0.0, 10.0), 0.0);
    }

    #[test]
    fn reads_estimates() {
        let est = InstanceEstimate::<f64>::seeded(0.001, 0.02);
        assert!((estimate_from(&est, 100, 0, 200) - 4.1).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn full_hit_removes_prefill(q in 0.0f64..1e4, p in 0.0f64..10.0, d in 0.0f64..100.0, lin in 1u32..10_000, lout in 1u32..10_000) {
            let est = InstanceEstimate { queue_wait: crate::estimator::Channel::seeded(q), ..InstanceEstimate::seeded(p, d) };
            let t: f64 = estimate_from(&est, lin, lin, lout);
            prop_assert_eq!(t, q + d * lout as f64);
        }

        #[test]
        fn generic_agrees_across_precisions(q in 0.0f32..100.0, p in 0.0f32..1.0, d in 0.0f32..50.0, lin in 1u32..1000, lout in 1u32..1000) {
            let hit = lin / 2;
            let a = estimate_latency(q, p, d, lin as f32, hit as f32, lout as f32) as f64;
            let b = estimate_latency(q as f64, p as f64, d as f64, lin as f64, hit as f64, lout as f64);
            prop_assert!((a - b).abs() <= 1e-4 * (1.0 + b.abs()));
        }
    }
}
