//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any fails.

use rand::Rng;
use skewmix::balance::{run_balance, BalanceConfig, Deficit, SupplyPolicy, Topology};
use skewmix::dataset_io::{make_toy_dataset, ClientDataset};
use skewmix::experiment::{
    parse_ini, run_grid, run_pipeline, AblationGrid, DatasetSource, ExperimentConfig,
};
use skewmix::fed::gradcheck::{gradient_check, GradCheck};
use skewmix::fed::model::batch_from_images;
use skewmix::fed::{
    fedavg_aggregate, run_round, train_local, Batch, FedClient, FedConfig, ModelKind, ModelParams,
    OptState, Schema, TrainSet,
};
use skewmix::mixup_dp::{
    dp_labelhide_with_weights, sample_laplace, sample_mix_weights, select_sources, DpMixConfig,
    MixWeights, WeightMode,
};
use skewmix::natural_noise::{
    generate_batch, init_generator, power_spectrum_slope, slope_of_gray, GeneratorConfig,
};
use skewmix::par::Parallelism;
use skewmix::rng::{rng_from_seed, stream, tag};
use skewmix::stats::{ks_critical_1pct, ks_uniform};
use skewmix::{Dims, LabeledImage, Provenance};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

const DESK: &str = include_str!("../../../configs/desk.ini");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn weight_sampler() -> Outcome {
    let start = Instant::now();
    let draws = 100_000;
    let mut worst_sum = 0.0f64;
    let mut violations = 0usize;
    let mut ks = Vec::new();
    for (m, mode) in [WeightMode::SimplexSorted, WeightMode::DominantUniform]
        .into_iter()
        .enumerate()
    {
        for k in [2usize, 4, 8] {
            let mut rng = stream(1, &[m as u64, k as u64]);
            let mut firsts = Vec::with_capacity(draws);
            for _ in 0..draws {
                let w = sample_mix_weights(k, mode, &mut rng);
                let w = w.as_slice();
                worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
                if w.len() != k || w.iter().any(|&x| x < 0.0) || w.windows(2).any(|p| p[0] < p[1]) {
                    violations += 1;
                }
                firsts.push(w[0]);
            }
            if mode == WeightMode::DominantUniform {
                ks.push((k, ks_uniform(&firsts, 0.5, 0.75)));
            }
        }
    }
    let crit = ks_critical_1pct(draws);
    let secs = start.elapsed().as_secs_f64();
    let ks_ok = ks.iter().all(|&(_, d)| d < crit);
    let ks_text: Vec<String> = ks.iter().map(|(k, d)| format!("k={k} D={d:.5}")).collect();
    outcome(
        violations == 0 && worst_sum <= 1e-9 && ks_ok && secs < 10.0,
        format!(
            "{violations} shape violations, max |sum-1| {worst_sum:.1e}, KS {} (crit {crit:.5}), {secs:.1}s",
            ks_text.join(" ")
        ),
    )
}

fn laplace() -> Outcome {
    let start = Instant::now();
    let eta = sample_laplace(1_000_000, 50.0, &mut rng_from_seed(2));
    let n = eta.len() as f64;
    let mean_abs = eta.iter().map(|&x| f64::from(x).abs()).sum::<f64>() / n;
    let mean = eta.iter().map(|&x| f64::from(x)).sum::<f64>() / n;
    let zeros = sample_laplace(10_000, 0.0, &mut rng_from_seed(3))
        .iter()
        .all(|&x| x == 0.0);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        (49.5..=50.5).contains(&mean_abs) && (-0.5..=0.5).contains(&mean) && zeros && secs < 10.0,
        format!("mean|eta| {mean_abs:.3}, mean {mean:.3}, sigma=0 zeros {zeros}, {secs:.1}s"),
    )
}

fn mixup_oracle() -> Outcome {
    let d = Dims::new(2, 2, 1);
    let fixture: Vec<LabeledImage> = [
        [12.5f32, 200.0, 3.25, 77.0],
        [0.1, 254.9, 128.0, 64.5],
        [33.3, 1.0, 99.9, 180.2],
        [250.0, 5.5, 17.0, 42.42],
    ]
    .iter()
    .enumerate()
    .map(|(i, px)| LabeledImage::new(d, px.to_vec(), usize::from(i > 0), Provenance::Real))
    .collect();
    let client = ClientDataset::from_examples(0, 2, fixture.clone());
    let cfg = DpMixConfig {
        k: 4,
        sigma: 0.0,
        ..DpMixConfig::default()
    };
    let forced = [
        vec![0.55, 0.2, 0.15, 0.1],
        vec![0.7, 0.1, 0.1, 0.1],
        vec![0.25, 0.25, 0.25, 0.25],
    ];
    let mut mismatches = 0;
    for (t, w) in forced.iter().enumerate() {
        let weights = MixWeights::new(w.clone()).expect("valid weights");
        let rng = stream(4, &[t as u64]);
        let order = select_sources(&client, 0, 4, &mut rng.clone()).unwrap();
        let out = dp_labelhide_with_weights(&client, 0, &cfg, &weights, &mut rng.clone()).unwrap();
        for p in 0..4 {
            let x = |j: usize| fixture[order[j]].pixels[p];
            let (w0, w1, w2, w3) = (w[0] as f32, w[1] as f32, w[2] as f32, w[3] as f32);
            let brute = 0.0f32 + w0 * x(0) + w1 * x(1) + w2 * x(2) + w3 * x(3) + 0.0;
            if brute.to_bits() != out.pixels[p].to_bits() {
                mismatches += 1;
            }
        }
        if out.label != 0 || order[0] != 0 {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("{mismatches} bit mismatches over 3 weight vectors x 4 pixels"),
    )
}

fn protocol_conservation() -> Outcome {
    let d = Dims::new(4, 4, 1);
    let mut rng = rng_from_seed(5);
    let generator = init_generator(&GeneratorConfig::new(d, 6)).unwrap();
    let mut failures = Vec::new();
    let mut zero_alpha = 0;
    for s in 0..200u64 {
        // alpha = m / denom so that ceil(alpha * P) is exact integer arithmetic
        let denom = if s % 2 == 0 { 4 } else { 100 };
        let m = rng.random_range(0..=denom);
        let alpha = m as f64 / denom as f64;
        let p = rng.random_range(1..=40usize);
        let capacity = rng.random_range(0.0..=1.0);
        let n_peers = rng.random_range(1..=4usize);
        let mut clients = vec![ClientDataset::from_examples(
            0,
            3,
            make_toy_dataset(rng.random_range(4..20), 1, d, s),
        )];
        for peer in 1..=n_peers {
            let mut imgs = Vec::new();
            for (label, n) in [
                (1usize, rng.random_range(0..30usize)),
                (2, rng.random_range(0..6usize)),
            ] {
                imgs.extend(
                    make_toy_dataset(n.max(1), 3, d, s * 10 + peer as u64)
                        .into_iter()
                        .filter(|i| i.label == label)
                        .take(n),
                );
            }
            clients.push(ClientDataset::from_examples(peer, 3, imgs));
        }
        let topology = match s % 3 {
            0 => Topology::ServerStar,
            1 => Topology::peer_edges(
                (1..=n_peers)
                    .filter(|_| rng.random_bool(0.5))
                    .map(|q| (0, q)),
            ),
            _ => Topology::peer_edges([]),
        };
        let cfg = BalanceConfig {
            mix_fraction: alpha,
            deadline: rng.random_range(1..=3),
            mix: DpMixConfig {
                k: 2,
                ..DpMixConfig::default()
            },
            policy: SupplyPolicy {
                capacity_fraction: capacity,
            },
            parallelism: Parallelism::Sequential,
        };
        let before = clients[0].clone();
        let out = run_balance(
            before.clone(),
            &[Deficit {
                label: 1,
                amount: p,
            }],
            &cfg,
            &topology,
            &clients,
            &generator,
            s,
        )
        .unwrap();
        let quota = (p * m).div_ceil(denom);
        let fill = out.fills[0];
        let added = out.dataset.len() - before.len();
        let real_after = out.dataset.count_by_provenance(Provenance::Real);
        let leaked = out
            .trace
            .iter()
            .any(|r| r.payload.contains(&Provenance::Real))
            || out.dataset.count_by_provenance(Provenance::Mixup) != fill.mixups;
        let requests = out.trace.iter().filter(|r| r.msg_type == "request").count();
        if m == 0 {
            zero_alpha += 1;
        }
        let ok = added == p
            && out.dataset.count(1) == p
            && fill.mixups + fill.noise == p
            && fill.mixups <= quota
            && real_after == before.len()
            && !leaked
            && (m != 0 || requests == 0);
        if !ok {
            failures.push(format!("scenario {s}: alpha {alpha} P {p} added {added} E {} quota {quota} requests {requests}", fill.mixups));
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{} of 200 scenarios violated ({zero_alpha} with alpha=0){}",
            failures.len(),
            failures
                .first()
                .map(|f| format!("; first: {f}"))
                .unwrap_or_default()
        ),
    )
}

fn spectral() -> Outcome {
    let start = Instant::now();
    let dims = Dims::new(32, 32, 3);
    let state = init_generator(&GeneratorConfig::new(dims, 7)).unwrap();
    let images = generate_batch(&state, 100, 8, Parallelism::Rayon).unwrap();
    let slopes: Vec<f64> = images
        .into_iter()
        .map(|u| power_spectrum_slope(&u.with_label(0)).unwrap())
        .collect();
    let steep = slopes.iter().filter(|&&s| s <= -0.5).count();
    let mut rng = rng_from_seed(9);
    let white: Vec<f64> = (0..50)
        .map(|_| {
            let gray: Vec<f64> = (0..32 * 32).map(|_| rng.random_range(0.0..255.0)).collect();
            slope_of_gray(&gray, 32).unwrap().abs()
        })
        .collect();
    let white_mean = white.iter().sum::<f64>() / white.len() as f64;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        steep >= 95 && white_mean < 0.3 && secs < 60.0,
        format!(
            "{steep}/100 noise images with slope <= -0.5 (mean {:.2}), white-noise mean |slope| {white_mean:.3}, {secs:.1}s",
            slopes.iter().sum::<f64>() / 100.0
        ),
    )
}

fn describe(checks: &[GradCheck]) -> String {
    checks
        .iter()
        .map(|c| {
            format!(
                "{} {} coords max rel err {:.1e}",
                c.kind, c.checked, c.max_rel_error
            )
        })
        .collect::<Vec<_>>()
        .join(", ")
}

/// Checked on the model the desk-scale runs train: the 16x16 CNN at its
/// initialization, fed real toy images. A harsher fixture (random inputs,
/// jittered weights) is reported alongside at two step sizes; its residual
/// at h = 1e-3 is central-difference truncation and shrinks as h^2.
fn gradients() -> Outcome {
    let desk: ExperimentConfig = DESK.parse().unwrap();
    let DatasetSource::Toy(toy) = desk.dataset else {
        unreachable!("desk config uses toy data")
    };
    let schema = Schema::for_kind(ModelKind::Cnn, toy.dims, toy.num_classes).unwrap();
    let mut rng = rng_from_seed(10);
    let params: Vec<f64> = ModelParams::init(schema.clone(), &mut rng)
        .params
        .iter()
        .map(|&p| f64::from(p))
        .collect();
    let images = make_toy_dataset(1, toy.num_classes, toy.dims, 10);
    let batch: Batch<f64> = batch_from_images(images.iter().step_by(2));
    let checks = gradient_check(&schema, &params, &batch, 200, 1e-3, 1e-6, &mut rng);
    let pass = checks.len() == 2
        && checks
            .iter()
            .all(|c| c.checked == 200 && c.max_rel_error < 1e-4);

    let dims = Dims::new(8, 8, 3);
    let stress_schema = Schema::for_kind(ModelKind::Cnn, dims, 5).unwrap();
    let stress_params: Vec<f64> = ModelParams::init(stress_schema.clone(), &mut rng)
        .params
        .iter()
        .map(|&p| f64::from(p) + rng.random_range(-0.05..0.05))
        .collect();
    let stress_batch = Batch {
        inputs: (0..4)
            .map(|_| {
                (0..dims.len())
                    .map(|_| rng.random_range(0.0..1.0))
                    .collect()
            })
            .collect(),
        labels: vec![0, 4, 2, 1],
    };
    let worst = |h: f64| {
        gradient_check(
            &stress_schema,
            &stress_params,
            &stress_batch,
            200,
            h,
            1e-6,
            &mut rng_from_seed(11),
        )
        .iter()
        .map(|c| c.max_rel_error)
        .fold(0.0, f64::max)
    };
    outcome(
        pass,
        format!(
            "{}; stress fixture max rel err {:.1e} at h=1e-3, {:.1e} at h=1e-4",
            describe(&checks),
            worst(1e-3),
            worst(1e-4)
        ),
    )
}

fn fedavg_degeneracy() -> Outcome {
    let dims = Dims::new(8, 8, 1);
    let schema = Schema::for_kind(ModelKind::Cnn, dims, 3).unwrap();
    let data = make_toy_dataset(20, 3, dims, 11);
    let test = TrainSet::from_images(&make_toy_dataset(4, 3, dims, 12));
    let cfg = FedConfig {
        batch_size: 16,
        parallelism: Parallelism::Sequential,
        seed: 13,
        ..FedConfig::default()
    };
    let init = ModelParams::init(schema.clone(), &mut rng_from_seed(14));

    // one client through FedAvg vs plain training on the same stream
    let mut clients = vec![FedClient::new(0, &data, &schema, cfg.adam)];
    let mut fed = init.clone();
    let mut central = init.clone();
    let mut opt = OptState::new(cfg.adam, schema.param_count());
    let central_data = TrainSet::from_images(&data);
    let mut worst = 0.0f64;
    for round in 0..5 {
        fed = run_round(&fed, &mut clients, &cfg, round, &test).unwrap().0;
        let mut rng = stream(cfg.seed, &[tag::LOCAL_TRAIN, round as u64, 0]);
        train_local(
            &mut central,
            &mut opt,
            &central_data,
            cfg.local_epochs,
            cfg.batch_size,
            &mut rng,
        )
        .unwrap();
        for (a, b) in fed.params.iter().zip(&central.params) {
            let rel = f64::from((a - b).abs()) / f64::from(a.abs().max(b.abs())).max(1e-12);
            worst = worst.max(rel);
        }
    }

    // three clients: aggregate inside the elementwise hull of the locals
    let shards = [&data[..20], &data[20..45], &data[45..]];
    let mut multi: Vec<FedClient> = shards
        .iter()
        .enumerate()
        .map(|(i, s)| FedClient::new(i, s, &schema, cfg.adam))
        .collect();
    let mut global = init;
    let mut outside = 0usize;
    for round in 0..3 {
        let locals: Vec<ModelParams> = multi
            .iter()
            .map(|c| {
                let (mut m, mut o) = (global.clone(), c.opt.clone());
                let mut rng = stream(cfg.seed, &[tag::LOCAL_TRAIN, round as u64, c.id as u64]);
                train_local(
                    &mut m,
                    &mut o,
                    &c.data,
                    cfg.local_epochs,
                    cfg.batch_size,
                    &mut rng,
                )
                .unwrap();
                m
            })
            .collect();
        global = run_round(&global, &mut multi, &cfg, round, &test)
            .unwrap()
            .0;
        let sizes: Vec<f64> = shards
            .iter()
            .map(|s| s.len() as f64 / data.len() as f64)
            .collect();
        let reference = fedavg_aggregate(&locals.iter().collect::<Vec<_>>(), &sizes).unwrap();
        for (i, &g) in global.params.iter().enumerate() {
            let lo = locals
                .iter()
                .map(|m| m.params[i])
                .fold(f32::INFINITY, f32::min);
            let hi = locals
                .iter()
                .map(|m| m.params[i])
                .fold(f32::NEG_INFINITY, f32::max);
            if g < lo || g > hi || g != reference.params[i] {
                outside += 1;
            }
        }
    }
    outcome(
        worst <= 1e-6 && outside == 0,
        format!("single-client max rel diff {worst:.1e} over 5 rounds, {outside} aggregated params outside the client hull"),
    )
}

fn files_under(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let text = "[data]\nheight = 8\nwidth = 8\nnum_classes = 4\ntrain_per_class = 24\ntest_per_class = 6\n\
                [partition]\nnum_clients = 4\n[train]\nrounds = 3\nbatch_size = 16\nmodel = cnn\n[run]\nseed = 21\n\
                [grid]\npartition.classes_per_client = 1, 2\nbalance.supplement_pct = 0, 20\nbalance.mix_fraction = 0.25, 1.0\n";
    let grid: AblationGrid = text.parse().unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_grid(&grid, a.path()).unwrap();
    run_grid(&grid, b.path()).unwrap();
    let (fa, fb) = (files_under(a.path()), files_under(b.path()));
    let metrics = fa.keys().filter(|k| k.ends_with("metrics.csv")).count();
    outcome(
        fa == fb && metrics == grid.len(),
        format!(
            "{} files compared ({metrics} metrics CSVs), identical: {}",
            fa.len(),
            fa == fb
        ),
    )
}

/// Final accuracies of the desk-scale runs, keyed by variant then seed.
struct DeskRuns {
    acc: BTreeMap<&'static str, Vec<f64>>,
    secs: f64,
}

const SEEDS: [u64; 3] = [0, 1, 2];

fn desk_runs() -> DeskRuns {
    let start = Instant::now();
    type Overrides = &'static [(&'static str, &'static str, &'static str)];
    let variants: [(&str, Overrides); 6] = [
        ("none", &[]),
        (
            "mix",
            &[
                ("balance", "supplement_pct", "10"),
                ("balance", "mix_fraction", "1.0"),
            ],
        ),
        (
            "noise",
            &[
                ("balance", "supplement_pct", "10"),
                ("balance", "mix_fraction", "0.0"),
            ],
        ),
        ("iid", &[("partition", "classes_per_client", "10")]),
        ("c2", &[("partition", "classes_per_client", "2")]),
        ("c3", &[("partition", "classes_per_client", "3")]),
    ];
    let mut acc = BTreeMap::new();
    for (name, overrides) in variants {
        let row = SEEDS
            .iter()
            .map(|&seed| {
                let mut ini = parse_ini(DESK).unwrap();
                for (s, k, v) in overrides {
                    ini.with_section(Some(*s)).set(*k, *v);
                }
                ini.with_section(Some("run")).set("seed", seed.to_string());
                let cfg = ExperimentConfig::from_ini(&ini).unwrap();
                run_pipeline(&cfg).unwrap().final_accuracy
            })
            .collect();
        acc.insert(name, row);
    }
    DeskRuns {
        acc,
        secs: start.elapsed().as_secs_f64(),
    }
}

fn fmt_row(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| format!("{x:.3}"))
        .collect::<Vec<_>>()
        .join("/")
}

fn trend(runs: &DeskRuns) -> Outcome {
    let a = &runs.acc;
    let per_seed: Vec<[bool; 4]> = (0..SEEDS.len())
        .map(|i| {
            let none = a["none"][i];
            [
                none < 0.40,
                a["mix"][i] >= none + 0.20,
                a["noise"][i] >= none + 0.10,
                a["iid"][i] > 0.90,
            ]
        })
        .collect();
    let all = per_seed.iter().filter(|s| s.iter().all(|&b| b)).count();
    let sub: Vec<usize> = (0..4)
        .map(|j| per_seed.iter().filter(|s| s[j]).count())
        .collect();
    outcome(
        all >= 2 && runs.secs < 1800.0,
        format!(
            "seeds passing all of (a)-(d): {all}/3 [a {} b {} c {} d {}]; no-supp {} mix {} noise {} iid {}; {:.0}s for all desk runs",
            sub[0],
            sub[1],
            sub[2],
            sub[3],
            fmt_row(&a["none"]),
            fmt_row(&a["mix"]),
            fmt_row(&a["noise"]),
            fmt_row(&a["iid"]),
            runs.secs
        ),
    )
}

fn skew_monotonicity(runs: &DeskRuns) -> Outcome {
    let a = &runs.acc;
    let ok = (0..SEEDS.len())
        .filter(|&i| a["none"][i] < a["c2"][i] && a["c2"][i] < a["c3"][i])
        .count();
    outcome(
        ok >= 2,
        format!(
            "monotone in {ok}/3 seeds; C=1 {} C=2 {} C=3 {}",
            fmt_row(&a["none"]),
            fmt_row(&a["c2"]),
            fmt_row(&a["c3"])
        ),
    )
}

fn main() {
    // `cargo test` passes harness flags such as `--quiet`; a filter argument
    // that matches no criterion skips the suite.
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    if filter
        .as_deref()
        .is_some_and(|f| !"acceptance".contains(f) && !f.contains("criterion"))
    {
        return;
    }
    let report = |n: usize, name: &str, o: Outcome| {
        println!(
            "criterion {n:>2} {} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        o.pass
    };
    let mut passed = vec![
        report(1, "weight sampler", weight_sampler()),
        report(2, "laplace noise", laplace()),
        report(3, "mixup oracle", mixup_oracle()),
        report(4, "protocol conservation", protocol_conservation()),
        report(5, "spectral slope", spectral()),
        report(6, "gradient check", gradients()),
        report(7, "fedavg degeneracy", fedavg_degeneracy()),
        report(8, "grid determinism", determinism()),
    ];
    let runs = desk_runs();
    passed.push(report(9, "desk-scale trends", trend(&runs)));
    passed.push(report(10, "skew monotonicity", skew_monotonicity(&runs)));
    let failed = passed.iter().filter(|&&p| !p).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        passed.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
