//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! The ablation criteria train 15 toy runs with `configs/ablation.toml`
//! (about 25 minutes on one core). Tables and run directories are kept
//! under the cargo target's temporary directory.
//! The full-scale run is opt-in: set `MSOREID_SYSU_ROOT` to a SYSU-MM01
//! directory, and optionally `MSOREID_FULL_CONFIG` to a TOML file.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use common::*;
use msoreid::data::{
    generate_synthetic, sample_batch, BatchSpec, IdentityIndex, Modality, ShortfallPolicy, SyntheticDatasetConfig,
};
use msoreid::edge::{luminance_u8, sobel_edges, Raster};
use msoreid::eval::{cmc_map_minp, evaluate, evaluate_trial, rank, EvalMode, EvalProtocol, RankingResult, Shot};
use msoreid::losses::{
    cmcc_loss, id_loss, pef_loss, wrt_loss, PefAdapter, PerceptualNet, PerceptualSource,
};
use msoreid::model::FeatureMatrix;
use msoreid::train::{
    matrix_cells, mean_std, run_experiment, AblationMatrix, AblationRun, DatasetKind, ExperimentConfig,
};
use rand::Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol
}

fn perceptual() -> PerceptualNet {
    PerceptualNet::new(&PerceptualSource::default(), DType::F64).unwrap()
}

fn random_mods(r: &mut rand_chacha::ChaCha8Rng, n: usize) -> Vec<Modality> {
    (0..n).map(|_| if r.random_bool(0.5) { Modality::Rgb } else { Modality::Ir }).collect()
}

fn loss_oracles() -> Outcome {
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    for _ in 0..25 {
        let (p, k, d) = (r.random_range(2..=5), r.random_range(1..=3), r.random_range(2..=8));
        let b = random_pk_batch(&mut r, p, k, d, true);
        let x = tensor(&b.rows);
        let c = scalar(&cmcc_loss(&x, &b.labels, &b.modalities).unwrap()) - cmcc_oracle(&b.rows, &b.labels, &b.modalities);
        let w = scalar(&wrt_loss(&x, &b.labels).unwrap()) - wrt_oracle(&b.rows, &b.labels);
        let n = r.random_range(2..=12);
        let logits: Vec<Vec<f64>> = (0..b.rows.len()).map(|_| normal_vec(&mut r, n)).collect();
        let labels: Vec<usize> = (0..b.rows.len()).map(|_| r.random_range(0..n)).collect();
        let i = scalar(&id_loss(&tensor(&logits), &labels).unwrap()) - id_oracle(&logits, &labels);
        worst = worst.max(c.abs()).max(w.abs()).max(i.abs());
    }
    let net = perceptual();
    let blocks = reference_blocks(&net);
    for _ in 0..25 {
        let (b, c) = (r.random_range(1..=4), r.random_range(1..=3));
        let f: Vec<Map> = (0..b).map(|_| random_map(&mut r, c, 16, 8)).collect();
        let e: Vec<Map> = (0..b).map(|_| random_map(&mut r, 1, 16, 8)).collect();
        let mods = random_mods(&mut r, b);
        let got = scalar(&pef_loss(&maps_to_tensor(&f), &maps_to_tensor(&e), &mods, &net, PefAdapter::ChannelMean).unwrap());
        let want = pef_oracle(&blocks, &f, &e, &mods);
        worst = worst.max((got - want).abs() / want.max(1.0));
    }
    ensure!(worst <= 1e-10, "worst deviation {worst:e}");
    Ok(format!("100 instances, worst deviation {worst:.1e}"))
}

fn gradient_checks() -> Outcome {
    const H: f64 = 1e-5;
    let mut r = rng(102);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (p, k, d) = (r.random_range(2..=5), r.random_range(1..=3), r.random_range(2..=8));
        let b = random_pk_batch(&mut r, p, k, d, true);
        worst = worst.max(gradient_rel_error(&tensor(&b.rows), H, |x| cmcc_loss(x, &b.labels, &b.modalities).unwrap()));
        worst = worst.max(gradient_rel_error(&tensor(&b.rows), H, |x| wrt_loss(x, &b.labels).unwrap()));
        let n = r.random_range(2..=10);
        let logits: Vec<Vec<f64>> = (0..b.rows.len()).map(|_| normal_vec(&mut r, n)).collect();
        let labels: Vec<usize> = (0..b.rows.len()).map(|_| r.random_range(0..n)).collect();
        worst = worst.max(gradient_rel_error(&tensor(&logits), H, |x| id_loss(x, &labels).unwrap()));
    }
    let net = perceptual();
    let (mut straddled, mut total) = (0, 0);
    for _ in 0..20 {
        let c = r.random_range(1..=2);
        let f: Vec<Map> = (0..2).map(|_| random_map(&mut r, c, 16, 8)).collect();
        let e = maps_to_tensor(&(0..2).map(|_| random_map(&mut r, 1, 16, 8)).collect::<Vec<_>>());
        let mods = [Modality::Rgb, Modality::Ir];
        let g = gradient_check(&maps_to_tensor(&f), H, true, |x| pef_loss(x, &e, &mods, &net, PefAdapter::ChannelMean).unwrap());
        worst = worst.max(g.rel_error);
        straddled += g.straddled;
        total += g.compared + g.straddled;
    }
    ensure!(worst < 1e-4, "worst relative error {worst:e}");
    ensure!(straddled * 10 <= total, "{straddled} of {total} perceptual coordinates straddle kinks");
    Ok(format!("80 instances, worst relative error {worst:.1e} ({straddled}/{total} kink coordinates set aside)"))
}

fn closed_forms() -> Outcome {
    let rows = vec![vec![0.0, 1.0], vec![0.0, -1.0], vec![2.0, 1.0], vec![2.0, -1.0]];
    let mods = [Modality::Rgb, Modality::Ir, Modality::Rgb, Modality::Ir];
    let c = scalar(&cmcc_loss(&tensor(&rows), &[0, 0, 1, 1], &mods).unwrap());
    ensure!(within(c, 2f64.ln(), 1e-12), "CMCC tie gave {c}");
    let (p, h) = (1.2f64, 0.3f64);
    let a = p / 2.0;
    let rows = vec![vec![a, 0.0, 0.0], vec![-a, 0.0, 0.0], vec![0.0, a, h], vec![0.0, -a, h]];
    let dn = (2.0 * a * a + h * h).sqrt();
    let w = scalar(&wrt_loss(&tensor(&rows), &[0, 0, 1, 1]).unwrap());
    ensure!(within(w, (1.0 + (p - dn).exp()).ln(), 1e-12), "WRT singleton gave {w}");
    for n in [2usize, 10, 395] {
        let logits = Tensor::full(0.3f64, (4, n), &Device::Cpu).unwrap();
        let l = scalar(&id_loss(&logits, &[0, 1, n - 1, n / 2]).unwrap());
        ensure!(within(l, (n as f64).ln(), 1e-12), "ID uniform over {n} gave {l}");
    }
    let mut r = rng(103);
    let e = maps_to_tensor(&(0..3).map(|_| random_map(&mut r, 1, 16, 8)).collect::<Vec<_>>());
    let l = scalar(&pef_loss(&e, &e, &[Modality::Rgb, Modality::Ir, Modality::Ir], &perceptual(), PefAdapter::ChannelMean).unwrap());
    ensure!(l.abs() <= 1e-12, "PEF on identical inputs gave {l}");
    Ok("CMCC ln 2, WRT singleton, ID ln N, PEF 0".into())
}

fn ranked(mask: &[bool]) -> RankingResult {
    RankingResult {
        order: vec![(0..mask.len()).collect()],
        distances: vec![(0..mask.len()).map(|i| i as f64).collect()],
        matches: vec![mask.to_vec()],
    }
}

fn metric_oracles() -> Outcome {
    let mut masks = 0;
    for g in 1..=6 {
        for bits in 0u32..1 << g {
            let mask: Vec<bool> = (0..g).map(|i| bits >> i & 1 == 1).collect();
            let got = cmc_map_minp(&ranked(&mask));
            match query_oracle(&mask) {
                None => ensure!(got.is_err(), "{mask:?} without positives should be excluded"),
                Some(o) => {
                    let m = got.map_err(|e| e.to_string())?;
                    ensure!(m.cmc == o.cmc && m.map == o.ap && m.minp == o.inp, "{mask:?} differs from enumeration");
                }
            }
            masks += 1;
        }
    }
    // Rank through real features too, so ordering is part of the check.
    let q = FeatureMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
    let g = FeatureMatrix::from_rows(&[vec![1.0, 0.1], vec![1.0, 0.5], vec![0.8, 0.9]]).unwrap();
    let m = cmc_map_minp(&rank(&q, &g, &[7], &[7, 3, 7]).unwrap()).unwrap();
    ensure!(within(m.map, 5.0 / 6.0, 1e-15) && within(m.minp, 2.0 / 3.0, 1e-15), "hand case gave AP {} INP {}", m.map, m.minp);
    Ok(format!("{masks} masks exact, hand case AP 5/6 INP 2/3"))
}

fn sobel_invariants() -> Outcome {
    for v in [0.0, 1.0, -3.25, 1e6 / 3.0] {
        let e = sobel_edges(&Raster::from_fn(9, 7, |_, _| v)).unwrap();
        ensure!(e.raster().data.iter().all(|&x| x == 0.0), "constant {v} has edges");
    }
    let mut r = rng(104);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (h, w) = (r.random_range(3..20), r.random_range(3..20));
        let x = Raster::from_fn(h, w, |_, _| r.random_range(-2.0..2.0));
        let y = Raster::from_fn(h, w, |_, _| r.random_range(-2.0..2.0));
        let (a, b) = (r.random_range(-3.0..3.0), r.random_range(-3.0..3.0));
        let lhs = sobel_edges(&x.scale_add(a, &y, b)).unwrap();
        let rhs = sobel_edges(&x).unwrap().raster().scale_add(a, sobel_edges(&y).unwrap().raster(), b);
        for (u, v) in lhs.raster().data.iter().zip(&rhs.data) {
            worst = worst.max((u - v).abs());
        }
    }
    ensure!(worst <= 1e-12, "linearity error {worst:e}");
    let cfg = SyntheticDatasetConfig { noise_level: 0.0, images_per_id_per_modality: 2, ..Default::default() };
    let recs = generate_synthetic(&cfg).unwrap();
    let n = cfg.images_per_id_per_modality;
    let mut pairs = 0;
    for id in 0..cfg.num_identities {
        for j in 0..n {
            let (vis, ir) = (&recs[id * 2 * n + j], &recs[id * 2 * n + n + j]);
            ensure!(vis.modality == Modality::Rgb && ir.modality == Modality::Ir, "unexpected record order");
            let same = sobel_edges(&luminance_u8(&vis.image)).unwrap() == sobel_edges(&luminance_u8(&ir.image)).unwrap();
            ensure!(same, "identity {id} view {j}: edge maps differ");
            pairs += 1;
        }
    }
    Ok(format!("constant images zero, linearity {worst:.1e}, {pairs} RGB/IR pairs identical"))
}

fn sampler_invariant() -> Outcome {
    let recs = generate_synthetic(&SyntheticDatasetConfig::default()).unwrap();
    let index = IdentityIndex::new(&recs);
    let mut r = rng(105);
    for n in 0..1000 {
        let spec = BatchSpec { p: r.random_range(2..=8), k: r.random_range(1..=4) };
        let batch = sample_batch(&index, spec, ShortfallPolicy::WithReplacement, &mut r).map_err(|e| e.to_string())?;
        let mut per_id = std::collections::BTreeMap::<usize, (usize, usize)>::new();
        for it in &batch.items {
            let c = per_id.entry(it.identity).or_default();
            match it.modality {
                Modality::Rgb => c.0 += 1,
                Modality::Ir => c.1 += 1,
            }
        }
        ensure!(per_id.len() == spec.p, "batch {n}: {} identities, wanted {}", per_id.len(), spec.p);
        ensure!(per_id.values().all(|&c| c == (spec.k, spec.k)), "batch {n}: {per_id:?} with K={}", spec.k);
    }
    Ok("1000 batches with P identities and K RGB + K IR each".into())
}

fn protocol_determinism() -> Outcome {
    let recs = generate_synthetic(&SyntheticDatasetConfig { num_identities: 12, num_train_identities: 4, ..Default::default() }).unwrap();
    let mut r = rng(106);
    let protos: Vec<Vec<f64>> = (0..12).map(|_| normal_vec(&mut r, 16)).collect();
    let rows: Vec<Vec<f64>> = recs
        .iter()
        .map(|rec| protos[rec.identity].iter().map(|p| p + 1.5 * r.sample::<f64, _>(rand_distr::StandardNormal)).collect())
        .collect();
    let feats = FeatureMatrix::from_rows(&rows).unwrap();
    let protocol = EvalProtocol { mode: EvalMode::Synthetic, shot: Shot::Single, num_trials: 10, seed: 9, ..Default::default() };
    let a = evaluate(&feats, &recs, &protocol).map_err(|e| e.to_string())?;
    let b = evaluate(&feats, &recs, &protocol).map_err(|e| e.to_string())?;
    ensure!(a == b, "repeat evaluation differs");
    let singles: Vec<_> = (0..10).map(|t| evaluate_trial(&feats, &recs, &protocol, t).unwrap()).collect();
    let mean = |f: &dyn Fn(&msoreid::eval::TrialMetrics) -> f64| singles.iter().map(f).sum::<f64>() / 10.0;
    let gaps = [
        (a.r1 - mean(&|m| m.rank_k(1))).abs(),
        (a.map - mean(&|m| m.map)).abs(),
        (a.minp - mean(&|m| m.minp)).abs(),
    ];
    let worst = gaps.iter().copied().fold(0.0, f64::max);
    ensure!(worst <= 1e-12, "trial average off by {worst:e}");
    Ok(format!("repeat runs bit-identical, 10-trial average within {worst:.1e}"))
}

/// Rank-1 (and geometry) of every run of the loss matrix plus the classic
/// fusion cell, each at three seeds.
struct AblationResults {
    runs: Vec<AblationRun>,
}

impl AblationResults {
    fn r1(&self, label: &str) -> Vec<f64> {
        self.runs.iter().filter(|r| r.label == label).map(|r| r.r1).collect()
    }

    fn summary(&self, label: &str) -> (f64, f64) {
        mean_std(&self.r1(label))
    }
}

fn run_ablations() -> Result<AblationResults, String> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/ablation.toml");
    let base = ExperimentConfig::load(path.as_ref()).map_err(|e| e.to_string())?;
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let mut cells = matrix_cells(&base, AblationMatrix::Loss);
    let classic = matrix_cells(&base, AblationMatrix::Fusion)
        .into_iter()
        .find(|c| c.config.loss.fusion == msoreid::edge::FusionKind::ClassicFeatureFusion)
        .ok_or("no classic fusion cell")?;
    cells.push(classic);
    let mut runs = Vec::new();
    for cell in &cells {
        for seed in 0..3u64 {
            let mut cfg = cell.config.clone();
            cfg.train.seed = seed;
            let dir = out.join(cell.label.replace(['+', ' '], "_")).join(format!("seed{seed}"));
            let start = Instant::now();
            let m = run_experiment(&cfg, Some(&dir)).map_err(|e| format!("{} seed {seed}: {e}", cell.label))?;
            let run = AblationRun::from_manifest(&cell.label, &m).map_err(|e| e.to_string())?;
            println!(
                "    {:<24} seed {seed}  rank-1 {:6.2}  d_intra {:.3}  d_inter {:.3}  ({:.0}s)",
                cell.label,
                100.0 * run.r1,
                run.d_intra,
                run.d_inter,
                start.elapsed().as_secs_f64()
            );
            runs.push(run);
        }
    }
    Ok(AblationResults { runs })
}

fn pct((m, s): (f64, f64)) -> String {
    format!("{:.2} ± {:.2}", 100.0 * m, 100.0 * s)
}

fn ablation_direction(res: &AblationResults) -> Outcome {
    let b = res.summary("B");
    let pef = res.summary("B+PEF");
    let cmcc = res.summary("B+CMCC");
    let full = res.summary("B+PEF+CMCC");
    let detail = format!("B {}, B+PEF {}, B+CMCC {}, B+PEF+CMCC {}", pct(b), pct(pef), pct(cmcc), pct(full));
    ensure!(full.0 > b.0, "B+PEF+CMCC not above B: {detail}");
    ensure!(cmcc.0 > b.0, "B+CMCC not above B: {detail}");
    ensure!(pef.0 + pef.1 >= b.0, "B+PEF more than one standard deviation below B: {detail}");
    Ok(detail)
}

fn fusion_ordering(res: &AblationResults) -> Outcome {
    let pef = res.summary("B+PEF+CMCC");
    let classic = res.summary(msoreid::edge::FusionKind::ClassicFeatureFusion.label());
    let detail = format!("PEF loss fusion {}, classic feature fusion {}", pct(pef), pct(classic));
    ensure!(pef.0 >= classic.0, "{detail}");
    Ok(detail)
}

fn geometry(res: &AblationResults) -> Outcome {
    let full: Vec<&AblationRun> = res.runs.iter().filter(|r| r.label == "B+PEF+CMCC").collect();
    let intra = full.iter().map(|r| r.d_intra).sum::<f64>() / full.len() as f64;
    let inter = full.iter().map(|r| r.d_inter).sum::<f64>() / full.len() as f64;
    let detail = format!("mean d_intra {intra:.4}, mean d_inter {inter:.4} over {} seeds", full.len());
    ensure!(intra < inter, "{detail}");
    Ok(detail)
}

fn full_scale() -> Option<Outcome> {
    let root = std::env::var_os("MSOREID_SYSU_ROOT")?;
    Some((|| {
        let mut cfg = match std::env::var_os("MSOREID_FULL_CONFIG") {
            Some(p) => ExperimentConfig::load(p.as_ref()).map_err(|e| e.to_string())?,
            None => ExperimentConfig::default(),
        };
        cfg.dataset.kind = DatasetKind::Sysu;
        cfg.dataset.root = Some(PathBuf::from(root));
        let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance_full");
        let m = run_experiment(&cfg, Some(&out)).map_err(|e| e.to_string())?;
        let r = m.final_metrics.ok_or("run finished without metrics")?;
        r.write_all(&out.join("report")).map_err(|e| e.to_string())?;
        Ok(format!(
            "rank-1 {:.2}  rank-10 {:.2}  rank-20 {:.2}  mAP {:.2}  mINP {:.2} (report in {})",
            100.0 * r.r1,
            100.0 * r.r10,
            100.0 * r.r20,
            100.0 * r.map,
            100.0 * r.minp,
            out.join("report").display()
        ))
    })())
}

fn report(failed: &mut usize, n: usize, name: &str, outcome: Outcome) {
    match outcome {
        Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail}"),
        Err(why) => {
            *failed += 1;
            println!("criterion {n:>2} FAIL  {name}: {why}");
        }
    }
}

fn main() {
    // Ignore libtest flags such as --nocapture; only a `--list` needs an answer.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut failed = 0;
    report(&mut failed, 1, "loss oracle equivalence", loss_oracles());
    report(&mut failed, 2, "gradient checks", gradient_checks());
    report(&mut failed, 3, "closed-form values", closed_forms());
    report(&mut failed, 4, "metric oracle equivalence", metric_oracles());
    report(&mut failed, 5, "Sobel invariants", sobel_invariants());
    report(&mut failed, 6, "sampler balance", sampler_invariant());
    println!("    training 15 toy runs for criteria 7-9");
    match run_ablations() {
        Ok(res) => {
            report(&mut failed, 7, "loss ablation direction", ablation_direction(&res));
            report(&mut failed, 8, "fusion ordering", fusion_ordering(&res));
            report(&mut failed, 9, "embedding geometry", geometry(&res));
        }
        Err(e) => {
            for (n, name) in [(7, "loss ablation direction"), (8, "fusion ordering"), (9, "embedding geometry")] {
                report(&mut failed, n, name, Err(e.clone()));
            }
        }
    }
    report(&mut failed, 10, "protocol determinism", protocol_determinism());
    match full_scale() {
        Some(outcome) => report(&mut failed, 11, "full-scale SYSU-MM01 run", outcome),
        None => println!("criterion 11 SKIP  full-scale SYSU-MM01 run: opt-in, set MSOREID_SYSU_ROOT"),
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
