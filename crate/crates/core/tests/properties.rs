use proptest::prelude::*;
use skewmix::balance::{
    plan_deficits, run_balance, BalanceConfig, Deficit, SupplyPolicy, Topology,
};
use skewmix::dataset_io::{
    encode_cifar10, encode_idx, idx_to_images, make_toy_dataset, parse_cifar10, parse_idx,
    ClientDataset, IdxMeta, IdxTensor, MAGIC_IMAGES, MAGIC_LABELS,
};
use skewmix::experiment::AblationGrid;
use skewmix::image::{read_tensor, write_tensor};
use skewmix::mixup_dp::DpMixConfig;
use skewmix::natural_noise::{init_generator, GeneratorConfig, GeneratorState};
use skewmix::par::Parallelism;
use skewmix::{Dims, LabeledImage, Provenance};
use std::sync::OnceLock;

const D: Dims = Dims::new(4, 4, 1);

fn generator() -> &'static GeneratorState {
    static G: OnceLock<GeneratorState> = OnceLock::new();
    G.get_or_init(|| init_generator(&GeneratorConfig::new(D, 1)).unwrap())
}

/// Client `id` holding `counts[y]` toy examples of each label `y`.
fn holder(id: usize, counts: &[usize], seed: u64) -> ClientDataset {
    let pool = make_toy_dataset(
        counts.iter().copied().max().unwrap_or(0).max(1),
        counts.len(),
        D,
        seed,
    );
    let mut taken = vec![0; counts.len()];
    let kept: Vec<LabeledImage> = pool
        .into_iter()
        .filter(|i| {
            taken[i.label] += 1;
            taken[i.label] <= counts[i.label]
        })
        .collect();
    ClientDataset::from_examples(id, counts.len(), kept)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn idx_round_trip(n in 1usize..6, h in 1usize..5, w in 1usize..5, seed in any::<u64>()) {
        let mut x = seed;
        let mut next = || { x = x.wrapping_mul(6364136223846793005).wrapping_add(1); (x >> 33) as u8 };
        let pixels: Vec<u8> = (0..n * h * w).map(|_| next()).collect();
        let labels: Vec<u8> = (0..n).map(|_| next() % 10).collect();
        let images = IdxTensor { meta: IdxMeta { magic: MAGIC_IMAGES, dims: vec![n, h, w] }, data: pixels.clone() };
        let label_t = IdxTensor { meta: IdxMeta { magic: MAGIC_LABELS, dims: vec![n] }, data: labels.clone() };
        let back = parse_idx(&encode_idx(&images)).unwrap();
        prop_assert_eq!(&back, &images);
        let imgs = idx_to_images(&back, &parse_idx(&encode_idx(&label_t)).unwrap(), 10).unwrap();
        prop_assert_eq!(imgs.len(), n);
        for (i, img) in imgs.iter().enumerate() {
            prop_assert_eq!(img.label, usize::from(labels[i]));
            let want: Vec<f32> = pixels[i * h * w..(i + 1) * h * w].iter().map(|&p| f32::from(p)).collect();
            prop_assert_eq!(&img.pixels, &want);
        }
    }

    #[test]
    fn cifar_and_tensor_round_trip(n in 1usize..4, seed in any::<u64>()) {
        let imgs = make_toy_dataset(n, 10, Dims::CIFAR10, seed);
        let back = parse_cifar10(&encode_cifar10(&imgs)).unwrap();
        prop_assert_eq!(&back, &imgs);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &imgs[0]).unwrap();
        prop_assert_eq!(read_tensor(&buf[..]).unwrap(), imgs[0].clone());
    }

    #[test]
    fn deficits_are_exact(counts in prop::collection::vec(0usize..20, 2..8), p in 0usize..25) {
        let c = holder(0, &counts, 1);
        let plan = plan_deficits(&c, &vec![p; counts.len()]);
        for (y, &n) in counts.iter().enumerate() {
            let entry = plan.iter().find(|d| d.label == y);
            prop_assert_eq!(entry.map(|d| d.amount), (n < p).then(|| p - n));
        }
        prop_assert!(plan.windows(2).all(|w| (counts[w[0].label], w[0].label) < (counts[w[1].label], w[1].label)));
    }

    #[test]
    fn balance_adds_exactly_p(
        quarters in 0usize..=4,
        p in 1usize..30,
        supply in prop::collection::vec(0usize..25, 1..4),
        capacity in 0.0f64..=1.0,
        deadline in 1u64..4,
        seed in any::<u64>(),
    ) {
        let requester = holder(0, &[6, 0], seed);
        let mut peers = vec![requester.clone()];
        for (i, &n) in supply.iter().enumerate() {
            peers.push(holder(i + 1, &[3, n], seed ^ i as u64));
        }
        let cfg = BalanceConfig {
            mix_fraction: quarters as f64 / 4.0,
            deadline,
            mix: DpMixConfig { k: 2, ..DpMixConfig::default() },
            policy: SupplyPolicy { capacity_fraction: capacity },
            parallelism: Parallelism::Sequential,
        };
        let out = run_balance(requester.clone(), &[Deficit { label: 1, amount: p }], &cfg, &Topology::ServerStar, &peers, generator(), seed).unwrap();
        let f = out.fills[0];
        prop_assert_eq!(out.dataset.len(), requester.len() + p);
        prop_assert_eq!(f.mixups + f.noise, p);
        prop_assert!(f.mixups <= (p * quarters).div_ceil(4));
        prop_assert_eq!(out.dataset.count_by_provenance(Provenance::Real), requester.len());
        prop_assert!(out.trace.iter().all(|r| !r.payload.contains(&Provenance::Real)));
        prop_assert!(out.dataset.histogram_is_consistent());
        prop_assert!(out.rounds <= deadline);
    }

    #[test]
    fn grid_rows_are_the_axis_product(a in 1usize..4, b in 1usize..4, c in 1usize..3) {
        let list = |n: usize, base: usize| (0..n).map(|i| (base + i).to_string()).collect::<Vec<_>>().join(",");
        let text = format!(
            "[grid]\npartition.num_clients = {}\nbalance.supplement_pct = {}\ntrain.rounds = {}\n",
            list(a, 2), list(b, 10), list(c, 1)
        );
        let g: AblationGrid = text.parse().unwrap();
        prop_assert_eq!(g.len(), a * b * c);
        let keys: std::collections::BTreeSet<String> = g.cells().iter().map(|cell| g.cell_key(cell)).collect();
        prop_assert_eq!(keys.len(), a * b * c);
    }
}
