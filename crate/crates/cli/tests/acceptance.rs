//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Criteria 7 and 8 need the MNIST IDX files in `$MNIST_DIR` or
//! `data/mnist` at the workspace root.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use basisnet::accounting::{count_network, count_spec, reduction_pct, LayerCount};
use basisnet::compress::{apply_plan, plan_by_energy};
use basisnet::io::{MNIST_TEST, MNIST_TRAIN};
use basisnet::nn::{basisconv_backward, basisconv_forward, BasisConvLayer, ConvLayer, Layer, LayerSpec, Network};
use basisnet::sft::{ortho_loss, ortho_loss_grad};
use basisnet::spectral::{decompose, eigen_decompose, orthogonality_residual, reconstruct, FilterBank};
use basisnet::tensor::{conv2d_backward, conv2d_forward, conv_output_extent, counter, matmul};
use basisnet::TensorF64 as Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_bank(rng: &mut ChaCha8Rng) -> FilterBank<f64> {
    let p = rng.gen_range(2..=16);
    let l = rng.gen_range(1..=8);
    let d = [1, 3, 5][rng.gen_range(0..3)];
    FilterBank::new(Tensor::randn(&[p, l, d, d], 1.0, rng), Tensor::randn(&[p], 0.1, rng)).unwrap()
}

fn exact_reconstruction() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let bank = random_bank(&mut rng);
        let (basis, weights) = eigen_decompose(&bank, bank.max_rank()).unwrap();
        let pad = bank.kernel() / 2;
        let layer = BasisConvLayer::from_spectral(basis, weights, bank.bias().clone(), 1, pad).unwrap();
        for _ in 0..10 {
            let x = Tensor::randn(&[bank.channels(), 9, 9], 1.0, &mut rng);
            let want = conv2d_forward(&x, bank.filters(), bank.bias(), 1, pad).unwrap();
            let got = basisconv_forward(&layer, &x).unwrap();
            worst = worst.max(want.max_abs_diff(&got).unwrap());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-8 && secs < 60.0,
        format!("50 layers x 10 inputs, max |err| {worst:.2e} (<= 1e-8), {secs:.1} s (< 60 s)"),
    )
}

fn spectral_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut ortho, mut diag): (f64, f64) = (0.0, 0.0);
    for _ in 0..50 {
        let bank = random_bank(&mut rng);
        let dec = decompose(&bank).unwrap();
        let q = dec.max_rank();
        let (basis, weights) = dec.truncate(q).unwrap();
        ortho = ortho.max(orthogonality_residual(&basis.basis));
        let wtw = matmul(&weights.weights.transpose().unwrap(), &weights.weights).unwrap();
        let lmax = dec.eigenvalues()[0];
        for i in 0..q {
            for j in 0..q {
                let want = if i == j { dec.eigenvalues()[i] } else { 0.0 };
                diag = diag.max((wtw.at(&[i, j]) - want).abs() / lmax);
            }
        }
    }
    outcome(
        ortho <= 1e-8 && diag <= 1e-8,
        format!("50 banks, max |F^T F - I| {ortho:.2e}, max |W^T W - diag| / lambda_max {diag:.2e} (both <= 1e-8)"),
    )
}

fn truncation_law() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut worst_rel, mut worst_full): (f64, f64) = (0.0, 0.0);
    let mut cases = 0;
    for _ in 0..20 {
        let bank = random_bank(&mut rng);
        let dec = decompose(&bank).unwrap();
        let norm = bank.filters().frobenius_norm();
        for q in 1..=dec.max_rank() {
            let (basis, weights) = dec.truncate(q).unwrap();
            let rebuilt = reconstruct(&basis, &weights, bank.bias()).unwrap();
            let err = rebuilt.filters().sub(bank.filters()).unwrap().frobenius_norm();
            let want = dec.eigenvalues()[q..].iter().sum::<f64>().sqrt();
            if want > 0.0 {
                worst_rel = worst_rel.max((err - want).abs() / want);
            } else {
                worst_full = worst_full.max(err / norm);
            }
            cases += 1;
        }
    }
    outcome(
        worst_rel <= 1e-6 && worst_full <= 1e-10,
        format!(
            "20 banks, {cases} ranks, max relative deviation {worst_rel:.2e} (<= 1e-6); \
             at full rank error / ||A|| {worst_full:.2e}"
        ),
    )
}

const STEP: f64 = 1e-6;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

fn numeric_grad(x: &Tensor, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut p = x.clone();
            p.data_mut()[k] += STEP;
            let mut m = x.clone();
            m.data_mut()[k] -= STEP;
            (f(&p) - f(&m)) / (2.0 * STEP)
        })
        .collect()
}

fn conv_case(rng: &mut ChaCha8Rng) -> f64 {
    let (l, p) = (rng.gen_range(1..4), rng.gen_range(1..4));
    let d = [1, 2, 3][rng.gen_range(0..3)];
    let (stride, pad) = (rng.gen_range(1..3), rng.gen_range(0..2));
    let (h, w) = (rng.gen_range(d..d + 4), rng.gen_range(d..d + 4));
    let x = Tensor::randn(&[l, h, w], 1.0, rng);
    let f = Tensor::randn(&[p, l, d, d], 1.0, rng);
    let b = Tensor::randn(&[p], 1.0, rng);
    let out = [p, conv_output_extent(h, d, stride, pad).unwrap(), conv_output_extent(w, d, stride, pad).unwrap()];
    let r = Tensor::randn(&out, 1.0, rng);
    let g = conv2d_backward(&x, &f, &r, stride, pad).unwrap();
    let loss = |x: &Tensor, f: &Tensor, b: &Tensor| conv2d_forward(x, f, b, stride, pad).unwrap().dot(&r).unwrap();
    rel_err(g.input.data(), &numeric_grad(&x, |t| loss(t, &f, &b)))
        .max(rel_err(g.filters.data(), &numeric_grad(&f, |t| loss(&x, t, &b))))
        .max(rel_err(g.bias.data(), &numeric_grad(&b, |t| loss(&x, &f, t))))
}

fn basisconv_case(rng: &mut ChaCha8Rng) -> f64 {
    let (l, p) = (rng.gen_range(1..4), rng.gen_range(1..5));
    let d = [1, 3][rng.gen_range(0..2)];
    let q = rng.gen_range(1..=p.min(l * d * d));
    let (stride, pad) = (rng.gen_range(1..3), rng.gen_range(0..2));
    let (h, w) = (rng.gen_range(d..d + 4), rng.gen_range(d..d + 4));
    let layer = BasisConvLayer::new(
        Tensor::randn(&[q, l, d, d], 1.0, rng),
        Tensor::randn(&[p, q], 1.0, rng),
        Tensor::randn(&[p], 1.0, rng),
        stride,
        pad,
    )
    .unwrap();
    let x = Tensor::randn(&[l, h, w], 1.0, rng);
    let r = Tensor::randn(basisconv_forward(&layer, &x).unwrap().shape(), 1.0, rng);
    let g = basisconv_backward(&layer, &x, &r).unwrap();
    let loss = |layer: &BasisConvLayer<f64>, x: &Tensor| basisconv_forward(layer, x).unwrap().dot(&r).unwrap();
    let with = |k: usize, t: &Tensor| {
        let mut l2 = layer.clone();
        *[&mut l2.basis, &mut l2.weights, &mut l2.bias][k] = t.clone();
        loss(&l2, &x)
    };
    rel_err(g.input.data(), &numeric_grad(&x, |t| loss(&layer, t)))
        .max(rel_err(g.basis.data(), &numeric_grad(&layer.basis, |t| with(0, t))))
        .max(rel_err(g.weights.data(), &numeric_grad(&layer.weights, |t| with(1, t))))
        .max(rel_err(g.bias.data(), &numeric_grad(&layer.bias, |t| with(2, t))))
}

fn ortho_case(rng: &mut ChaCha8Rng) -> f64 {
    let q = [1, 2, 3, 5][rng.gen_range(0..4)];
    let alpha = [0.1, 0.5, 0.9][rng.gen_range(0..3)];
    let basis = Tensor::randn(&[q, rng.gen_range(1..3), 3, 3], 0.4, rng);
    rel_err(ortho_loss_grad(&basis, alpha).data(), &numeric_grad(&basis, |b| ortho_loss(b, alpha)))
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut c, mut b, mut o): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..40 {
        c = c.max(conv_case(&mut rng));
        b = b.max(basisconv_case(&mut rng));
        o = o.max(ortho_case(&mut rng));
    }
    let secs = start.elapsed().as_secs_f64();
    let worst = c.max(b).max(o);
    outcome(
        worst <= 1e-5 && secs < 120.0,
        format!(
            "120 cases, max relative error conv2d {c:.2e}, basisconv {b:.2e}, ortho_loss {o:.2e} (<= 1e-5), \
             {secs:.1} s (< 120 s)"
        ),
    )
}

fn ortho_loss_values() -> Outcome {
    let e1 = |s: f64| {
        let mut v = vec![0.0; 9];
        v[0] = s;
        v
    };
    let twin = Tensor::new(vec![2, 1, 3, 3], [e1(1.0), e1(1.0)].concat()).unwrap();
    let single = Tensor::new(vec![1, 1, 3, 3], e1(2.0)).unwrap();
    let a = ortho_loss(&twin, 0.5);
    let b = ortho_loss(&single, 0.5);
    #[rustfmt::skip]
    let hadamard = Tensor::new(vec![4, 1, 2, 2], vec![
        0.5, 0.5, 0.5, 0.5,
        0.5, -0.5, 0.5, -0.5,
        0.5, 0.5, -0.5, -0.5,
        0.5, -0.5, -0.5, 0.5,
    ]).unwrap();
    let identity = Tensor::identity(9).reshape(&[9, 1, 3, 3]).unwrap();
    let signed = Tensor::from_fn(&[3, 3, 1, 1], |k| match k {
        1 => -1.0,
        5 => 1.0,
        6 => 1.0,
        _ => 0.0,
    });
    let mut zeros = true;
    for alpha in [0.1, 0.5, 0.9] {
        for basis in [&hadamard, &identity, &signed] {
            zeros &= ortho_loss(basis, alpha) == 0.0;
        }
    }
    outcome(
        (a - 0.5).abs() <= 1e-12 && (b - 4.5).abs() <= 1e-12 && zeros,
        format!("J(e1, e1) = {a} (0.5), J(2 e1) = {b} (4.5), exactly 0 on orthonormal bases: {zeros}"),
    )
}

fn random_network(rng: &mut ChaCha8Rng) -> Network<f64> {
    let mut specs = Vec::new();
    let mut c = rng.gen_range(1..4);
    let input = vec![c, 12, 12];
    let (mut h, mut w) = (12, 12);
    for _ in 0..rng.gen_range(1..4) {
        let p = rng.gen_range(2..12);
        let fits = [1, 3, 5].iter().filter(|&&d| d <= h.min(w)).count();
        let d = [1, 3, 5][rng.gen_range(0..fits)];
        let (stride, pad) = (rng.gen_range(1..3), rng.gen_range(0..=d / 2));
        specs.push(LayerSpec::conv(c, p, d, stride, pad));
        specs.push(LayerSpec::Relu);
        h = conv_output_extent(h, d, stride, pad).unwrap();
        w = conv_output_extent(w, d, stride, pad).unwrap();
        c = p;
        if h >= 4 && w >= 4 && rng.gen_bool(0.5) {
            specs.push(LayerSpec::max_pool(2));
            h /= 2;
            w /= 2;
        }
    }
    specs.push(LayerSpec::Flatten);
    specs.push(LayerSpec::dense(c * h * w, rng.gen_range(2..6)));
    let net = Network::init(input, &specs, 1.0, rng).unwrap();
    let mut plan = plan_by_energy(&net, rng.gen_range(0.3..1.0)).unwrap();
    for e in &mut plan.entries {
        e.skip = rng.gen_bool(0.3);
    }
    apply_plan(&net, &plan).unwrap()
}

fn accounting_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut mismatches = Vec::new();
    let mut basis_layers = 0;
    for n in 0..20 {
        let net = random_network(&mut rng);
        let counts = count_network(&net).unwrap();
        let mut x = Tensor::randn(net.input_shape(), 1.0, &mut rng);
        for (i, (layer, c)) in net.layers().iter().zip(&counts).enumerate() {
            basis_layers += matches!(layer, Layer::BasisConv(_)) as usize;
            let (y, macs) = counter::measure(|| layer.forward(&x).unwrap());
            let params: usize = layer.params().iter().map(|p| p.len()).sum();
            if macs != c.macs || params as u64 != c.params {
                mismatches.push(format!("net {n} layer {i}"));
            }
            x = y;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(607);
    let bank = FilterBank::new(Tensor::randn(&[8, 4, 3, 3], 1.0, &mut rng), Tensor::zeros(&[8])).unwrap();
    let conv = Layer::Conv(ConvLayer::new(bank.filters().clone(), bank.bias().clone(), 1, 1).unwrap());
    let (basis, weights) = eigen_decompose(&bank, 2).unwrap();
    let bc = Layer::BasisConv(BasisConvLayer::from_spectral(basis, weights, bank.bias().clone(), 1, 1).unwrap());
    let x = Tensor::randn(&[4, 10, 10], 1.0, &mut rng);
    let (_, conv_macs) = counter::measure(|| conv.forward(&x).unwrap());
    let (_, bc_macs) = counter::measure(|| bc.forward(&x).unwrap());
    let before = count_spec(&conv.spec(), &[4, 10, 10]).unwrap();
    let after = count_spec(&bc.spec(), &[4, 10, 10]).unwrap();
    let worked = before == LayerCount { macs: 28_800, params: 296, filters: 8 }
        && after == LayerCount { macs: 8_800, params: 96, filters: 2 }
        && conv_macs == 28_800
        && bc_macs == 8_800
        && conv.param_count() == 296
        && bc.param_count() == 96;
    outcome(
        mismatches.is_empty() && worked,
        format!(
            "20 random networks ({basis_layers} basis_conv layers), mismatches: {}; worked example \
             28800 -> 8800 MACs, 296 -> 96 params ({:.2}% fewer MACs): {}",
            if mismatches.is_empty() { "none".to_string() } else { mismatches.join(", ") },
            reduction_pct(28_800, 8_800),
            if worked { "exact" } else { "WRONG" }
        ),
    )
}

fn mnist_dir() -> PathBuf {
    match std::env::var_os("MNIST_DIR") {
        Some(d) => PathBuf::from(d),
        None => Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"),
    }
}

fn missing_mnist(dir: &Path) -> Option<String> {
    let files = [MNIST_TRAIN.0, MNIST_TRAIN.1, MNIST_TEST.0, MNIST_TEST.1];
    let missing: Vec<_> = files.iter().filter(|f| !dir.join(f).is_file()).collect();
    if missing.is_empty() {
        None
    } else {
        Some(format!(
            "MNIST files {missing:?} not found in {} (set MNIST_DIR or run scripts/fetch-mnist.sh)",
            dir.display()
        ))
    }
}

/// Outputs of one end-to-end run, compared byte for byte across reruns.
const ARTIFACTS: &[&str] = &["base.bnm", "train.json", "comp.bnm", "comp.plan.json", "sft.bnm", "sft.json", "report.json"];

fn basisnet(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_basisnet"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "`basisnet {}` exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn pipeline(dir: &Path, data: &Path) -> Result<(), String> {
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
    let train = format!("mnist:{}", data.display());
    let test = format!("mnist-test:{}", data.display());
    basisnet(&[
        "train", "--data", &train, "--limit", "10000", "--test", &test, "--arch", "mnist-reference",
        "--init-scale", "0.1", "--epochs", "6", "--lr", "0.02", "--momentum", "0.9", "--batch-size", "32",
        "--seed", "0", "--out", &p("base.bnm"), "--log", &p("train.json"),
    ])?;
    basisnet(&[
        "compress", "--model", &p("base.bnm"), "--mode", "energy", "--t-min", "0.9", "--out", &p("comp.bnm"),
        "--plan", &p("comp.plan.json"),
    ])?;
    basisnet(&[
        "finetune", "--model", &p("comp.bnm"), "--data", &train, "--limit", "10000", "--epochs", "1", "--lr",
        "0.002", "--alpha", "0.5", "--ortho-weight", "1000", "--seed", "0", "--out", &p("sft.bnm"), "--log",
        &p("sft.json"),
    ])?;
    basisnet(&[
        "report", "--original", &p("base.bnm"), "--compressed", &p("sft.bnm"), "--data", &test, "--json",
        &p("report.json"),
    ])
}

fn end_to_end(dir: &Path, secs: f64) -> Outcome {
    let read = |name: &str| -> serde_json::Value {
        serde_json::from_slice(&std::fs::read(dir.join(name)).unwrap()).unwrap()
    };
    let report = read("report.json");
    let train = read("train.json");
    let sft = read("sft.json");
    let f = |v: &serde_json::Value| v.as_f64().unwrap_or(f64::NAN);
    let baseline = f(&train["test_accuracy"]);
    let before = f(&report["accuracy_before"]);
    let after = f(&report["accuracy_after"]);
    let params = f(&report["params_reduction_pct"]);
    let macs = reduction_pct(
        report["totals"]["macs_before"].as_u64().unwrap_or(0),
        report["totals"]["macs_after"].as_u64().unwrap_or(0),
    );
    let residual = report["ortho_residuals"]
        .as_array()
        .map(|a| a.iter().map(|r| f(&r["residual"])).fold(0.0, f64::max))
        .unwrap_or(f64::NAN);
    let sft_epochs = sft["report"]["epochs"].as_array().map_or(0, Vec::len);
    let checks = [
        baseline >= 0.97 && before >= 0.97,
        params >= 35.0,
        macs >= 35.0,
        (1..=3).contains(&sft_epochs),
        after >= before - 0.015,
        residual <= 1e-2,
    ];
    outcome(
        checks.iter().all(|&c| c),
        format!(
            "baseline test {:.2}% (saved model {:.2}%, >= 97%), params -{params:.2}% and MACs -{macs:.2}% (>= 35%), \
             {sft_epochs} SFT epoch(s), final test {:.2}% ({:+.2} points, within 1.5), \
             max ortho residual {residual:.2e} (<= 1e-2), {:.0} s",
            100.0 * baseline,
            100.0 * before,
            100.0 * after,
            100.0 * (after - before),
            secs
        ),
    )
}

fn determinism(first: &Path, second: &Path, data: &Path) -> Outcome {
    if let Err(e) = pipeline(second, data) {
        return outcome(false, e);
    }
    let mut differing = Vec::new();
    for name in ARTIFACTS {
        match (std::fs::read(first.join(name)), std::fs::read(second.join(name))) {
            (Ok(a), Ok(b)) if a == b => {}
            _ => differing.push(*name),
        }
    }
    outcome(
        differing.is_empty(),
        format!(
            "rerun with seed 0: {} of {} artifacts byte-identical{}",
            ARTIFACTS.len() - differing.len(),
            ARTIFACTS.len(),
            if differing.is_empty() { String::new() } else { format!(", differing: {differing:?}") }
        ),
    )
}

fn main() {
    let mut results: Vec<(u8, &str, Outcome)> = vec![
        (1, "exact reconstruction", exact_reconstruction()),
        (2, "spectral identities", spectral_identities()),
        (3, "truncation error law", truncation_law()),
        (4, "gradient correctness", gradient_checks()),
        (5, "orthogonality penalty values", ortho_loss_values()),
        (6, "accounting exactness", accounting_exactness()),
    ];

    let data = mnist_dir();
    match missing_mnist(&data) {
        Some(msg) => {
            results.push((7, "end-to-end MNIST", outcome(false, msg.clone())));
            results.push((8, "determinism", outcome(false, msg)));
        }
        None => {
            let first = tempfile::tempdir().unwrap();
            let second = tempfile::tempdir().unwrap();
            let start = Instant::now();
            match pipeline(first.path(), &data) {
                Ok(()) => {
                    let e2e = end_to_end(first.path(), start.elapsed().as_secs_f64());
                    results.push((7, "end-to-end MNIST", e2e));
                    results.push((8, "determinism", determinism(first.path(), second.path(), &data)));
                }
                Err(e) => {
                    results.push((7, "end-to-end MNIST", outcome(false, e)));
                    results.push((8, "determinism", outcome(false, "first pipeline run failed".into())));
                }
            }
        }
    }

    println!();
    for (id, name, o) in &results {
        println!("criterion {id} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
