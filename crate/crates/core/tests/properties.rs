use fedsim::data::{partition_noniid, synthetic_dataset, Dataset, PartitionSpec, SyntheticSpec};
use fedsim::model::{
    client_staleness_weight, decay, fedavg_aggregate, server_merge, server_pair_weight, spyker_client_merge, Age,
    ModelVector, StalenessMode,
};
use fedsim::sim::{derive_seed, EventQueue};
use proptest::prelude::*;

fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, dim)
}

fn mv(x: &[f64]) -> ModelVector<f64> {
    ModelVector::from_f64(x).unwrap()
}

fn within_hull(out: &[f64], a: &[f64], b: &[f64]) -> bool {
    out.iter()
        .zip(a.iter().zip(b))
        .all(|(&o, (&x, &y))| o >= x.min(y) - 1e-9 && o <= x.max(y) + 1e-9)
}

proptest! {
    #[test]
    fn pair_weight_grows_with_the_peer_age(a in 0.0f64..1e4, b in 0.0f64..1e4, db in 0.0f64..1e3, phi in 0.1f64..10.0) {
        let w = server_pair_weight(Age(a), Age(b), phi);
        let w_older = server_pair_weight(Age(a), Age(b + db), phi);
        prop_assert!((0.0..=1.0).contains(&w));
        prop_assert!(w_older >= w);
        prop_assert_eq!(server_pair_weight(Age(a), Age(a), phi), 0.5);
        prop_assert!((b > a) == (w > 0.5) || w == 1.0);
    }

    #[test]
    fn server_merge_is_convex(
        (a, b) in (1usize..8).prop_flat_map(|d| (vec_strategy(d), vec_strategy(d))),
        ai in 0.0f64..1e4,
        aj in 0.0f64..1e4,
        alpha in 0.0f64..=1.0,
    ) {
        let (merged, age) = server_merge(&mv(&a), Age(ai), &mv(&b), Age(aj), alpha, 1.5).unwrap();
        prop_assert!(within_hull(merged.as_slice(), &a, &b));
        prop_assert!(age.0 >= ai.min(aj) - 1e-9 && age.0 <= ai.max(aj) + 1e-9);
    }

    #[test]
    fn client_merge_is_convex(
        (s, c) in (1usize..8).prop_flat_map(|d| (vec_strategy(d), vec_strategy(d))),
        weight in 0.0f64..=1.0,
        alpha in 0.0f64..=1.0,
    ) {
        let out = spyker_client_merge(&mv(&s), &mv(&c), weight, alpha).unwrap();
        prop_assert!(within_hull(out.as_slice(), &s, &c));
    }

    #[test]
    fn dampened_staleness_weight_is_in_unit_interval(sent in 0.0f64..1e4, gap in 0.0f64..1e4) {
        let w = client_staleness_weight(Age(sent + gap), Age(sent), StalenessMode::Dampened).unwrap();
        prop_assert!(w > 0.0 && w <= 1.0);
    }

    #[test]
    fn decay_is_monotone_and_floored(
        base in 1e-4f64..1.0,
        mean in 0.0f64..100.0,
        u1 in 0u64..200,
        du in 0u64..50,
        beta in 0.0f64..0.1,
    ) {
        let eta_min = 1e-6;
        let lo = decay(base, u1, mean, beta, eta_min);
        let hi = decay(base, u1 + du, mean, beta, eta_min);
        prop_assert!(hi <= lo);
        prop_assert!(lo <= base && hi >= eta_min.min(base));
    }

    #[test]
    fn fedavg_with_equal_weights_is_the_mean(
        models in (1usize..6).prop_flat_map(|d| prop::collection::vec(vec_strategy(d), 1..6)),
        weight in 1usize..100,
    ) {
        let mvs: Vec<_> = models.iter().map(|m| mv(m)).collect();
        let out = fedavg_aggregate(&mvs.iter().map(|m| (m, weight)).collect::<Vec<_>>()).unwrap();
        for (i, &o) in out.as_slice().iter().enumerate() {
            let mean = models.iter().map(|m| m[i]).sum::<f64>() / models.len() as f64;
            prop_assert!((o - mean).abs() < 1e-9);
        }
    }

    #[test]
    fn event_queue_pops_in_time_then_fifo_order(times in prop::collection::vec(0u8..20, 0..200)) {
        let mut q = EventQueue::new();
        for (i, &t) in times.iter().enumerate() {
            q.push(t as f64, i);
        }
        let mut last: Option<(f64, usize)> = None;
        while let Some(ev) = q.pop() {
            if let Some((t, i)) = last {
                prop_assert!(ev.time > t || (ev.time == t && ev.payload > i));
            }
            last = Some((ev.time, ev.payload));
        }
    }

    #[test]
    fn partition_is_disjoint_and_label_skewed(
        n_clients in 1usize..40,
        labels_per_client in 1usize..4,
        seed in any::<u64>(),
    ) {
        prop_assume!(n_clients * labels_per_client >= 4);
        let data = synthetic_dataset(seed, &SyntheticSpec {
            n_samples: 400,
            dim: 3,
            n_classes: 4,
            separation: 2.0,
            blob_std: 1.0,
        }).unwrap();
        let spec = PartitionSpec { n_clients, labels_per_client, seed: derive_seed(seed, "partition", 0) };
        let p = partition_noniid(&data, &spec).unwrap();
        let mut seen = vec![false; data.len()];
        for (shard, labels) in p.shards.iter().zip(&p.labels) {
            prop_assert!(labels.len() <= labels_per_client);
            for &row in shard {
                prop_assert!(!seen[row], "row {} assigned twice", row);
                seen[row] = true;
                prop_assert!(labels.contains(&data.label(row)));
            }
        }
        prop_assert_eq!(p.sizes().iter().sum::<usize>(), data.len());
        prop_assert_eq!(&p, &partition_noniid(&data, &spec).unwrap());
    }
}

#[test]
fn partition_shards_balance_on_balanced_data() {
    let labels: Vec<u32> = (0..400).map(|i| i % 4).collect();
    let data = Dataset::new("balanced", 1, 4, vec![0.0; 400], labels).unwrap();
    let p = partition_noniid(
        &data,
        &PartitionSpec {
            n_clients: 20,
            labels_per_client: 2,
            seed: 9,
        },
    )
    .unwrap();
    let sizes = p.sizes();
    let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
    assert!(hi - lo <= 1, "{sizes:?}");
}
