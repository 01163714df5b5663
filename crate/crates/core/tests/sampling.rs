//! Subwindow quotas and the density skew they remove.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ttpoint_core::events::{bucket_by_z, slide_windows, subwindow_quotas, subwindow_sample, Event, EventStream, WindowConfig};

/// Equal base shares, remainder to the earliest, then the budget of empty
/// subwindows handed out one point at a time to whichever non-empty subwindow
/// is furthest below its exact proportional share `spare * c / total`.
fn quota_oracle(n: usize, counts: &[usize]) -> Vec<usize> {
    let k = counts.len();
    let mut q: Vec<usize> = (0..k).map(|j| n / k + usize::from(j < n % k)).collect();
    let mut spare = 0;
    for j in 0..k {
        if counts[j] == 0 {
            spare += q[j];
            q[j] = 0;
        }
    }
    let total: usize = counts.iter().sum();
    let mut extra = vec![0usize; k];
    for _ in 0..spare {
        // Deficit of j in units of 1/total: spare*c_j - extra_j*total.
        let j = (0..k)
            .filter(|&j| counts[j] > 0)
            .max_by(|&a, &b| {
                let da = (spare * counts[a]) as i128 - (extra[a] * total) as i128;
                let db = (spare * counts[b]) as i128 - (extra[b] * total) as i128;
                da.cmp(&db).then(b.cmp(&a))
            })
            .unwrap();
        extra[j] += 1;
    }
    q.iter().zip(&extra).map(|(a, b)| a + b).collect()
}

#[test]
fn quota_redistribution_example() {
    assert_eq!(subwindow_quotas(1024, &[100, 0, 300, 100]).unwrap(), vec![307, 0, 410, 307]);
    assert_eq!(quota_oracle(1024, &[100, 0, 300, 100]), vec![307, 0, 410, 307]);
    assert_eq!(subwindow_quotas(10, &[5, 5, 5, 5]).unwrap(), vec![3, 3, 2, 2]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn quotas_match_oracle(
        n in 1usize..5000,
        counts in prop::collection::vec(prop_oneof![Just(0usize), 1usize..2000], 1..12),
    ) {
        prop_assume!(counts.iter().any(|&c| c > 0));
        let q = subwindow_quotas(n, &counts).unwrap();
        prop_assert_eq!(q.iter().sum::<usize>(), n);
        prop_assert_eq!(&q, &quota_oracle(n, &counts));
        for (qj, cj) in q.iter().zip(&counts) {
            prop_assert!(*cj > 0 || *qj == 0);
        }
    }
}

/// 500 ms of motion: 1 event per ms in the first half, 5 per ms in the second.
fn slow_fast_stream() -> EventStream {
    let mut events = Vec::new();
    let mut t = 0u64;
    while t < 500_000 {
        let step = if t < 250_000 { 1000 } else { 200 };
        events.push(Event::new(t, (t / 1000 % 128) as u16, 64, true));
        t += step;
    }
    EventStream::new(events, 128, 128, None).unwrap()
}

fn sample_buckets(cfg: &WindowConfig, seed: u64) -> Vec<usize> {
    let stream = slow_fast_stream();
    let windows = slide_windows(&stream, cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clip = subwindow_sample(&windows[0], cfg, 128, 128, &mut rng).unwrap();
    assert_eq!(clip.points.len(), cfg.num_points);
    let four = WindowConfig { subwindow_len_us: 125_000, ..cfg.clone() };
    bucket_by_z(&clip.points, &four)
}

#[test]
fn subwindows_give_every_bucket_its_quota() {
    let cfg = WindowConfig { window_len_us: 500_000, overlap_us: 250_000, subwindow_len_us: 125_000, num_points: 1024, min_events: 1, start_fraction: 0.0 };
    for seed in 0..20 {
        let buckets = sample_buckets(&cfg, seed);
        for &b in &buckets {
            assert!(b as f64 >= 256.0 * 0.99, "seed {seed}: buckets {buckets:?}");
        }
    }
}

#[test]
fn uniform_sampling_favours_fast_motion() {
    let cfg = WindowConfig { window_len_us: 500_000, overlap_us: 250_000, subwindow_len_us: 0, num_points: 1024, min_events: 1, start_fraction: 0.0 };
    for seed in 0..20 {
        let b = sample_buckets(&cfg, seed);
        let (slow, fast) = (b[0] + b[1], b[2] + b[3]);
        assert!(fast > 2 * slow, "seed {seed}: slow {slow} fast {fast}");
    }
}
