//! One PASS/FAIL line per acceptance criterion. Tolerances are fixed here.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;

use common::{
    empirical_entropy_bits, expected_layout, fd_relative_error, gdn_direct, op_layout, rng,
    sample_coords, transform_ops, uniform, CodecCase, TransformCase, ALL_TRANSFORMS,
};
use modcodec::autograd::Graph;
use modcodec::codec::{compress, decompress, pad_to_factor, CodecModel, NetworkConfig};
use modcodec::entropy::{bin_probability, BitstreamHeader, LIKELIHOOD_FLOOR};
use modcodec::image::RgbImage;
use modcodec::metrics::{bd_rate, channel_energy_ratio, psnr_images, QualityField, RdCurve, RdPoint};
use modcodec::params::ParamStore;
use modcodec::training::{synthetic_corpus, train_loop, Dataset, Distortion, RdLossConfig, TrainConfig, METRICS_FILE};
use modcodec::transforms::{
    gdn_amplitude, gdn_forward, modulate, relu_amplitude, relu_forward, shrinkage_amplitude,
    shrinkage_forward, Branches, GdnParams, Nonlinearity, NonlinearityKind, ShrinkageParams,
};
use modcodec::{Shape, Tensor};

const GRAD_TOL: f64 = 1e-4;
const GRAD_SEEDS: u64 = 20;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const GDN_TOL: f64 = 1e-12;
const PAYLOAD_SLACK_BYTES: f64 = 32.0;
const CODEC_BUDGET: Duration = Duration::from_secs(60);
const TOY_LAMBDAS: [f64; 3] = [0.0018, 0.0130, 0.18];
const TOY_STEPS: usize = 2000;
const TOY_BUDGET: Duration = Duration::from_secs(45 * 60);
const BD_TOL_PERCENT: f64 = 0.1;
const ENERGY_TOL: f64 = 1e-12;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn report(id: usize, name: &str, o: &Outcome, took: Duration) -> bool {
    println!(
        "{} [{id}] {name}: {} ({:.1}s)",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        took.as_secs_f64()
    );
    o.pass
}

fn gradient_suite() -> Outcome {
    let t = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut checks = 0;
    for seed in 0..GRAD_SEEDS {
        for (name, kind, inverse) in ALL_TRANSFORMS {
            let case = TransformCase::new(kind, inverse, 1000 + seed);
            let err = fd_relative_error(&case.inputs(), &case.objective(), None);
            checks += 1;
            if !(err <= worst.0) {
                worst = (err, format!("{name} seed {seed}"));
            }
        }
        let case = CodecCase::new(NonlinearityKind::Gdn, 2000 + seed);
        let inputs = case.inputs();
        let coords = sample_coords(&inputs, 16, &mut rng(seed));
        let err = fd_relative_error(&inputs, &case.objective(), Some(&coords));
        checks += 1;
        if !(err <= worst.0) {
            worst = (err, format!("codec seed {seed}"));
        }
    }
    let took = t.elapsed();
    outcome(
        worst.0 < GRAD_TOL && took < GRAD_BUDGET,
        format!(
            "{checks} checks over {GRAD_SEEDS} seeds, worst relative error {:.2e} ({}) < {GRAD_TOL:e}, {:.0}s < {}s",
            worst.0,
            worst.1,
            took.as_secs_f64(),
            GRAD_BUDGET.as_secs()
        ),
    )
}

fn run_layer(store: &ParamStore, x: &Tensor, f: impl Fn(&mut Graph, &modcodec::params::Bindings, modcodec::autograd::Var) -> Tensor) -> Tensor {
    let mut g = Graph::new();
    let params = store.bind(&mut g, false).unwrap();
    let xv = g.constant(x.clone()).unwrap();
    f(&mut g, &params, xv)
}

fn table_reduction() -> Outcome {
    let (mut relu_exact, mut sa_exact, mut gdn_err) = (true, true, 0.0f64);
    for seed in 0..10u64 {
        let mut r = rng(seed);
        let shape = Shape::new(2, 6, 7, 7);
        let x = uniform(shape, -2.0, 2.0, &mut r);

        let store = ParamStore::new();
        let via_carrier = run_layer(&store, &x, |g, _, v| {
            let a = relu_amplitude(g, v).unwrap();
            let y = modulate(g, v, &Branches::amplitude(a)).unwrap();
            g.value(y).clone()
        });
        let direct = run_layer(&store, &x, |g, _, v| {
            let y = relu_forward(g, v).unwrap();
            g.value(y).clone()
        });
        let plain = x.map(|v| v.max(0.0));
        relu_exact &= via_carrier == direct && via_carrier.data() == plain.data();

        let mut store = ParamStore::new();
        let theta: Vec<f64> = (0..6).map(|_| r.gen_range(0.2..2.0)).collect();
        let sa = ShrinkageParams::new(&mut store, "sa", &theta).unwrap();
        let via_carrier = run_layer(&store, &x, |g, p, v| {
            let a = shrinkage_amplitude(g, p, v, &sa).unwrap();
            let y = modulate(g, v, &Branches::amplitude(a)).unwrap();
            g.value(y).clone()
        });
        let direct = run_layer(&store, &x, |g, p, v| {
            let y = shrinkage_forward(g, p, v, &sa).unwrap();
            g.value(y).clone()
        });
        let theta_used = sa.theta(&store);
        let plain = Tensor::from_fn(shape, |[b, c, i, j]| {
            let v = x.at([b, c, i, j]);
            if (v / theta_used[c]).abs() > 0.5 {
                v
            } else {
                0.0
            }
        });
        sa_exact &= via_carrier == direct && via_carrier.data() == plain.data();

        for inverse in [false, true] {
            let mut store = ParamStore::new();
            let beta: Vec<f64> = (0..6).map(|_| r.gen_range(0.1..2.0)).collect();
            let gamma: Vec<f64> = (0..36).map(|_| r.gen_range(0.0..0.5)).collect();
            let p = GdnParams::with_values(&mut store, "gdn", &beta, &gamma, inverse).unwrap();
            let via_carrier = run_layer(&store, &x, |g, params, v| {
                let a = gdn_amplitude(g, params, v, &p).unwrap();
                let y = modulate(g, v, &Branches::amplitude(a)).unwrap();
                g.value(y).clone()
            });
            let layer = run_layer(&store, &x, |g, params, v| {
                let y = gdn_forward(g, params, v, &p).unwrap();
                g.value(y).clone()
            });
            let plain = gdn_direct(&x, &p.beta(&store), &p.gamma(&store), inverse);
            for (a, b) in [(&via_carrier, &plain), (&layer, &plain)] {
                for (u, v) in a.data().iter().zip(b.data()) {
                    gdn_err = gdn_err.max((u - v).abs());
                }
            }
        }
    }
    outcome(
        relu_exact && sa_exact && gdn_err < GDN_TOL,
        format!(
            "relu exact: {relu_exact}, sa exact: {sa_exact}, gdn/igdn max abs diff {gdn_err:.2e} < {GDN_TOL:e} (10 seeds)"
        ),
    )
}

fn counting() -> Outcome {
    let c = 192;
    let count = |kind| {
        let mut store = ParamStore::new();
        let layer = Nonlinearity::new(kind, c, false, 2, "nl", &mut store, &mut rng(0)).unwrap();
        layer.count_params(&store)
    };
    let (gdn, tpm) = (count(NonlinearityKind::Gdn), count(NonlinearityKind::Tpm));
    // one C x C mixing matrix plus a C vector
    let oracle = c * c + c;
    let gflops = NonlinearityKind::Gdn.flops(c, 128, 128, 2) as f64 / 1e9;
    let tpm_gflops = NonlinearityKind::Tpm.flops(c, 128, 128, 2) as f64 / 1e9;
    outcome(
        gdn == 37_056 && tpm == 37_056 && gdn == oracle && (0.60..=0.62).contains(&gflops),
        format!(
            "params gdn {gdn}, tpm {tpm} (expected 37056); gdn {gflops:.4} GFLOPs in [0.60, 0.62]; tpm {tpm_gflops:.4} GFLOPs"
        ),
    )
}

/// Per-channel payload bound, entropy bound and latent identity for one model.
fn round_trip(model: &CodecModel, images: &[RgbImage], checksum: u64) -> (bool, String) {
    let locs = model.prior().locs(model.store());
    let scales = model.prior().scales(model.store());
    let (mut ok, mut worst_margin, mut min_slack) = (true, f64::NEG_INFINITY, f64::INFINITY);
    let (mut total_bytes, mut total_est) = (0usize, 0.0f64);
    for img in images {
        let coded = compress(model, checksum, img).unwrap();
        let decoded = decompress(model, checksum, &coded.bytes).unwrap();
        ok &= decoded.latent == coded.latent;
        let (_, payloads) = BitstreamHeader::read(&coded.bytes).unwrap();
        let s = coded.latent.shape;
        for c in 0..s.channels() {
            let symbols = coded.latent.channel(0, c);
            // rate oracle straight from the logistic bins
            let est: f64 = symbols
                .iter()
                .map(|&v| -bin_probability(v as f64, locs[c], scales[c]).max(LIKELIHOOD_FLOOR).log2())
                .sum();
            let bytes = payloads[c].len() as f64;
            let margin = bytes - (est / 8.0 + PAYLOAD_SLACK_BYTES);
            worst_margin = worst_margin.max(margin);
            let slack = bytes * 8.0 - empirical_entropy_bits(symbols);
            min_slack = min_slack.min(slack);
            ok &= margin <= 0.0 && slack >= 0.0;
            total_bytes += payloads[c].len();
            total_est += est;
        }
        ok &= (coded.estimated_bits - model.estimate_bits(&coded.latent)).abs() < 1e-9;
    }
    (
        ok,
        format!(
            "payload {total_bytes} B vs estimate {:.0} B; worst channel margin {worst_margin:.1} B (<= 0), min bits over entropy {min_slack:.1} (>= 0)",
            total_est / 8.0
        ),
    )
}

fn random_images(count: usize, seed: u64) -> Vec<RgbImage> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| RgbImage::new(64, 64, (0..64 * 64 * 3).map(|_| r.gen()).collect()).unwrap())
        .collect()
}

fn codec_round_trip(trained: &[(&str, &CodecModel)]) -> Outcome {
    let t = Instant::now();
    let mut images = random_images(6, 42);
    images.extend(synthetic_corpus(6, 64, 4242));
    let fresh = CodecModel::new(
        NetworkConfig { hidden_channels: 32, latent_channels: 48, ..NetworkConfig::default() },
        7,
    )
    .unwrap();
    let mut models = vec![("untrained gdn", &fresh)];
    models.extend_from_slice(trained);
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, m) in models {
        let (ok, detail) = round_trip(m, &images, 0xC0DEC);
        pass &= ok;
        parts.push(format!("{name}: {detail}"));
    }
    let took = t.elapsed();
    pass &= took < CODEC_BUDGET;
    outcome(pass, format!("{} images (6 noise, 6 structured); {}", images.len(), parts.join("; ")))
}

struct ToyRun {
    kind: NonlinearityKind,
    lambda: f64,
    model: CodecModel,
    first_loss: f64,
    last_loss: f64,
    csv: Vec<u8>,
}

fn toy_config() -> TrainConfig {
    TrainConfig { max_steps: Some(TOY_STEPS), ..TrainConfig::desk() }
}

fn toy_network(kind: NonlinearityKind) -> NetworkConfig {
    NetworkConfig { hidden_channels: 32, latent_channels: 48, nonlinearity: kind, ..NetworkConfig::default() }
}

fn train_toy(kind: NonlinearityKind, lambda: f64, ds: &Dataset, dir: &Path) -> ToyRun {
    let cfg = toy_config();
    let mut model = CodecModel::new(toy_network(kind), cfg.seed).unwrap();
    let loss = RdLossConfig { lambda, distortion: Distortion::Mse };
    let report = train_loop(&mut model, ds, &cfg, &loss, Some(dir), None).unwrap();
    ToyRun {
        kind,
        lambda,
        model,
        first_loss: report.rows[0].loss,
        last_loss: report.rows.last().unwrap().loss,
        csv: std::fs::read(dir.join(METRICS_FILE)).unwrap(),
    }
}

/// Mean coded bpp and decoded PSNR over the corpus.
fn rd_point(model: &CodecModel, images: &[RgbImage]) -> RdPoint {
    let (mut bpp, mut psnr) = (0.0, 0.0);
    for img in images {
        let coded = compress(model, 1, img).unwrap();
        let decoded = decompress(model, 1, &coded.bytes).unwrap();
        bpp += coded.bytes.len() as f64 * 8.0 / (img.width() * img.height()) as f64;
        psnr += psnr_images(img, &decoded.image).unwrap();
    }
    let n = images.len() as f64;
    RdPoint { bpp: bpp / n, psnr: psnr / n, msssim: 0.0 }
}

/// Pairs (1,2), (2,3), (1,3) on which `values` strictly increase.
fn increasing_pairs(values: &[f64; 3]) -> usize {
    [(0, 1), (1, 2), (0, 2)].iter().filter(|&&(a, b)| values[b] > values[a]).count()
}

fn toy_rd(runs: &[ToyRun], images: &[RgbImage], took: Duration) -> Outcome {
    let mut pass = took < TOY_BUDGET;
    let mut parts = Vec::new();
    let mut curves = Vec::new();
    for kind in [NonlinearityKind::Gdn, NonlinearityKind::Tpm] {
        let mine: Vec<&ToyRun> = runs.iter().filter(|r| r.kind == kind).collect();
        let points: Vec<RdPoint> = mine.iter().map(|r| rd_point(&r.model, images)).collect();
        let decreased = mine.iter().all(|r| r.last_loss < r.first_loss);
        let bpp = [points[0].bpp, points[1].bpp, points[2].bpp];
        let psnr = [points[0].psnr, points[1].psnr, points[2].psnr];
        let (nb, np) = (increasing_pairs(&bpp), increasing_pairs(&psnr));
        pass &= decreased && nb >= 2 && np >= 2;
        let losses: Vec<String> = mine.iter().map(|r| format!("{:.3}->{:.3}", r.first_loss, r.last_loss)).collect();
        let pts: Vec<String> = mine
            .iter()
            .zip(&points)
            .map(|(r, p)| format!("l={}: {:.4} bpp {:.2} dB", r.lambda, p.bpp, p.psnr))
            .collect();
        parts.push(format!(
            "{kind}: loss {} ; {} ; bpp pairs {nb}/3, psnr pairs {np}/3",
            losses.join(", "),
            pts.join(", ")
        ));
        curves.push(RdCurve::new(points));
    }
    let bd = match (&curves[0], &curves[1]) {
        (Ok(a), Ok(b)) => bd_rate(a, b, QualityField::Psnr).map_err(|e| e.to_string()),
        (Err(e), _) | (_, Err(e)) => Err(e.to_string()),
    };
    let bd_text = match &bd {
        Ok(v) => format!("BD-rate(TPM vs GDN) {v:+.2}%"),
        Err(e) => format!("BD-rate failed: {e}"),
    };
    pass &= bd.is_ok();
    outcome(pass, format!("{} | {bd_text} | training {:.0}s", parts.join(" | "), took.as_secs_f64()))
}

fn bd_oracle() -> Outcome {
    // curved RD relation, sampled at four qualities
    let quality = [28.0, 31.0, 34.5, 37.0];
    let rate = |q: f64| 0.05 * (0.21 * q).exp() * (1.0 + 0.01 * (q - 30.0).powi(2));
    let curve = |k: f64| {
        RdCurve::new(quality.iter().map(|&q| RdPoint { bpp: k * rate(q), psnr: q, msssim: 0.9 }).collect()).unwrap()
    };
    let anchor = curve(1.0);
    let same = bd_rate(&anchor, &curve(1.0), QualityField::Psnr).unwrap();
    let double = bd_rate(&anchor, &curve(2.0), QualityField::Psnr).unwrap();
    let half = bd_rate(&anchor, &curve(0.5), QualityField::Psnr).unwrap();
    outcome(
        same.abs() < 1e-9 && (double - 100.0).abs() < BD_TOL_PERCENT && (half + 50.0).abs() < BD_TOL_PERCENT,
        format!("identical {same:.3}%, x2 {double:.3}% (+100), x0.5 {half:.3}% (-50)"),
    )
}

fn energy(runs: &[ToyRun], images: &[RgbImage]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in [NonlinearityKind::Gdn, NonlinearityKind::Tpm] {
        let run = runs.iter().find(|r| r.kind == kind && r.lambda == TOY_LAMBDAS[1]).unwrap();
        let (mut worst, mut max_sum, mut max_max) = (0.0f64, 0.0, 0.0f64);
        for img in images {
            let (x, _) = pad_to_factor(&img.to_tensor(), 16).unwrap();
            let e = channel_energy_ratio(&run.model.analyse(&x).unwrap()).unwrap();
            worst = worst.max((e.iter().sum::<f64>() - 1.0).abs());
            let m = e.iter().cloned().fold(0.0, f64::max);
            max_sum += m;
            max_max = max_max.max(m);
        }
        pass &= worst <= ENERGY_TOL;
        parts.push(format!(
            "{kind}: |sum-1| <= {worst:.1e}, max e_i mean {:.3} / largest {max_max:.3}",
            max_sum / images.len() as f64
        ));
    }
    outcome(pass, format!("{} (lambda {}, {} images)", parts.join("; "), TOY_LAMBDAS[1], images.len()))
}

fn determinism(runs: &[ToyRun], ds: &Dataset, dir: &Path) -> Outcome {
    let first = runs.iter().find(|r| r.kind == NonlinearityKind::Gdn && r.lambda == TOY_LAMBDAS[1]).unwrap();
    let again = train_toy(first.kind, first.lambda, ds, dir);
    let csv_same = again.csv == first.csv;
    let params_same = again.model.store() == first.model.store();
    let img = &ds.images()[3];
    let a = compress(&first.model, 9, img).unwrap().bytes;
    let b = compress(&first.model, 9, img).unwrap().bytes;
    let c = compress(&again.model, 9, img).unwrap().bytes;
    outcome(
        csv_same && params_same && a == b && a == c,
        format!(
            "rerun of gdn lambda {}: metrics csv identical {csv_same} ({} bytes), parameters identical {params_same}; repeated encode identical {}",
            first.lambda,
            first.csv.len(),
            a == b && a == c
        ),
    )
}

fn structure() -> Outcome {
    let mut pass = true;
    let mut seen = Vec::new();
    for kind in [NonlinearityKind::Gdn, NonlinearityKind::Tpm] {
        for n in 0..=3 {
            let cfg = NetworkConfig { stages: n, hidden_channels: 4, latent_channels: 6, nonlinearity: kind, ..NetworkConfig::default() };
            let model = CodecModel::new(cfg, 1).unwrap();
            let (down, a) = op_layout(&transform_ops(&model, false), "conv2d");
            let (up, s) = op_layout(&transform_ops(&model, true), "conv_transpose2d");
            let ok = down == n + 1 && up == n + 1 && a == expected_layout(n) && s == expected_layout(n);
            pass &= ok;
            seen.push(format!("{kind} n={n}: {down} down/{up} up{}", if ok { "" } else { " MISMATCH" }));
        }
    }
    outcome(pass, seen.join(", "))
}

fn main() {
    let start = Instant::now();
    let mut all = true;

    let t = Instant::now();
    all &= report(1, "gradient suite", &gradient_suite(), t.elapsed());
    let t = Instant::now();
    all &= report(2, "amplitude-only reduction", &table_reduction(), t.elapsed());
    let t = Instant::now();
    all &= report(3, "parameter and FLOP counts", &counting(), t.elapsed());

    // the toy runs feed criteria 4, 5, 7 and 8
    let corpus = synthetic_corpus(64, 64, 1);
    let ds = Dataset::from_images(corpus.clone(), 64, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let mut runs = Vec::new();
    for kind in [NonlinearityKind::Gdn, NonlinearityKind::Tpm] {
        for lambda in TOY_LAMBDAS {
            let sub = dir.path().join(format!("{kind}-{lambda}"));
            let tr = Instant::now();
            runs.push(train_toy(kind, lambda, &ds, &sub));
            eprintln!("trained {kind} lambda {lambda} in {:.0}s", tr.elapsed().as_secs_f64());
        }
    }
    let train_time = t.elapsed();

    let trained: Vec<(&str, &CodecModel)> = vec![
        ("trained gdn", &runs[1].model),
        ("trained tpm", &runs[4].model),
    ];
    let t = Instant::now();
    all &= report(4, "codec round trip", &codec_round_trip(&trained), t.elapsed());
    let t = Instant::now();
    all &= report(5, "toy rate-distortion behaviour", &toy_rd(&runs, &corpus, train_time), t.elapsed() + train_time);
    let t = Instant::now();
    all &= report(6, "BD-rate oracle", &bd_oracle(), t.elapsed());
    let t = Instant::now();
    all &= report(7, "channel energy", &energy(&runs, &corpus), t.elapsed());
    let t = Instant::now();
    all &= report(8, "determinism", &determinism(&runs, &ds, &dir.path().join("rerun")), t.elapsed());
    let t = Instant::now();
    all &= report(9, "analysis/synthesis structure", &structure(), t.elapsed());

    println!("acceptance total {:.1}s", start.elapsed().as_secs_f64());
    if !all {
        std::process::exit(1);
    }
}
