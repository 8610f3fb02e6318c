//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;

use ctwindow::cli::{cmd_sweep, cmd_window, Mode, SweepArgs, WindowArgs};
use ctwindow::config::{RunConfig, StrategySpec};
use ctwindow::metrics::multi_label_dice;
use ctwindow::simulation::{generate_phantom, reference_phantom};
use ctwindow::stats::{fdr_bh, wilcoxon_signed_rank, WilcoxonMethod};
use ctwindow::volume::{save_volume, LabelVolume, Slice2D};
use ctwindow::windowing::{apply_window, Preset, SwnParams, WindowSampler, WindowSpec};
use ctwindow::{rng, Strategy};

const WINDOW_ULP: u32 = 1;
const WINDOW_BUDGET: Duration = Duration::from_secs(1);
const SAMPLER_TOL: f64 = 0.5;
const PVALUE_TOL: f64 = 1e-12;
const FDR_TOL: f64 = 1e-12;
const SWEEP_BUDGET: Duration = Duration::from_secs(60);
const DICE_AT_ZERO: f64 = 0.95;
const TOLERANCE_DICE: f64 = 0.5;
const SATURATED_DICE: f64 = 0.1;

type Check = Result<String, String>;

fn ulp_distance(a: f32, b: f32) -> u32 {
    if a == b {
        return 0;
    }
    let key = |x: f32| {
        let i = x.to_bits() as i32;
        if i < 0 {
            i32::MIN.wrapping_sub(i)
        } else {
            i
        }
    };
    key(a).abs_diff(key(b))
}

/// The windowing pseudo-code, statement by statement.
fn pseudo_code(image: f32, level: f32, width: f32) -> f32 {
    let min_threshold = level - width;
    let max_threshold = level + width;
    let mut image = image;
    if image > max_threshold {
        image = max_threshold;
    }
    if image < min_threshold {
        image = min_threshold;
    }
    255.0 * (image - min_threshold) / (max_threshold - min_threshold)
}

fn windowing_exactness() -> Check {
    let start = Instant::now();
    let mut s = rng::stream(1);
    let n = 100_000;
    let values: Vec<f32> = (0..n).map(|_| s.random_range(-1100.0f32..3100.0)).collect();
    let mut worst = 0;
    for chunk in values.chunks(1000) {
        let level = s.random_range(-600.0f32..600.0);
        let width = s.random_range(1.0f32..1200.0);
        let slice = Slice2D::new([chunk.len(), 1], chunk.to_vec()).unwrap();
        let out = apply_window(&slice, WindowSpec::new(level, width).unwrap());
        for (&v, &o) in chunk.iter().zip(&out.values) {
            worst = worst.max(ulp_distance(o, pseudo_code(v, level, width)));
        }
    }
    let elapsed = start.elapsed();
    let st = Preset::SoftTissue.window();
    let boundaries = [(-160.0, 0.0), (240.0, 255.0), (40.0, 127.5), (-1000.0, 0.0), (3000.0, 255.0)];
    let exact = boundaries.iter().all(|&(v, want)| st.apply(v) == want);
    let msg = format!("max {worst} ulp over {n} triples, boundaries exact={exact}, {elapsed:.2?}");
    if worst <= WINDOW_ULP && exact && elapsed < WINDOW_BUDGET {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn shift_equivariance() -> Check {
    let mut s = rng::stream(2);
    let mut mismatches = 0;
    let trials = 2000;
    for _ in 0..trials {
        let values: Vec<f32> = (0..64).map(|_| s.random_range(-1024i32..=3071) as f32).collect();
        let level = s.random_range(-500i32..=500) as f32;
        let width = s.random_range(1i32..=1000) as f32;
        let d = s.random_range(-300i32..=300) as f32;
        let base = Slice2D::new([8, 8], values.clone()).unwrap();
        let shifted = base.with_values(values.iter().map(|v| v + d).collect());
        let a = apply_window(&base, WindowSpec::new(level, width).unwrap());
        let b = apply_window(&shifted, WindowSpec::new(level + d, width).unwrap());
        let same = a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits());
        mismatches += (!same) as usize;
    }
    let msg = format!("{mismatches} of {trials} shifted slices differ");
    if mismatches == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn swn_degeneracy(dir: &Path) -> Check {
    let (image, _) = generate_phantom(&reference_phantom(15.0)).unwrap();
    let input = dir.join("ct.ctv.json");
    save_volume(&image, &input).unwrap();
    let run = |name: &str, strategy: Strategy, xy: Option<f64>| {
        let output = dir.join(format!("{name}.ctv.json"));
        let args = WindowArgs {
            input: input.clone(),
            output: output.clone(),
            strategy,
            x: xy,
            y: xy,
            seed: 7,
            mode: Mode::Train,
            axis: 2,
        };
        let mut log = Vec::new();
        cmd_window(&args, &mut log).unwrap();
        std::fs::read(dir.join(format!("{name}.raw"))).unwrap()
    };
    let stn = run("stn", Strategy::Stn, None);
    let swn = run("swn", Strategy::Swn, Some(0.0));
    let msg = format!("{} voxel bytes compared", stn.len());
    if stn == swn && !stn.is_empty() {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn sampler_statistics() -> Check {
    let mut sampler = WindowSampler::new(SwnParams::new(50.0, 50.0, 4).unwrap()).unwrap();
    let n = 100_000;
    let draws: Vec<WindowSpec> = (0..n).map(|_| sampler.sample()).collect();
    let levels: Vec<f64> = draws.iter().map(|w| w.level() as f64).collect();
    let mean = levels.iter().sum::<f64>() / n as f64;
    let std = (levels.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let min_w = draws.iter().map(|w| w.half_width()).fold(f32::INFINITY, f32::min);
    // Wide width spread so the abs/floor rule is exercised.
    let mut wide = WindowSampler::new(SwnParams::new(0.0, 400.0, 5).unwrap()).unwrap();
    let min_wide = (0..n).map(|_| wide.sample().half_width()).fold(f32::INFINITY, f32::min);
    let msg = format!("L mean {mean:.3} std {std:.3}, min W {min_w:.2} (wide: {min_wide:.3})");
    if (mean - 40.0).abs() <= SAMPLER_TOL && (std - 50.0).abs() <= SAMPLER_TOL && min_w >= 1.0 && min_wide >= 1.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Average ranks of `abs`, ties sharing the mean of their positions.
fn oracle_ranks(abs: &[f64]) -> Vec<f64> {
    abs.iter()
        .map(|&a| {
            let below = abs.iter().filter(|&&b| b < a).count() as f64;
            let equal = abs.iter().filter(|&&b| b == a).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn brute_force_p(diffs: &[f64]) -> f64 {
    let d: Vec<f64> = diffs.iter().copied().filter(|&x| x != 0.0).collect();
    let ranks = oracle_ranks(&d.iter().map(|x| x.abs()).collect::<Vec<_>>());
    let total: f64 = ranks.iter().sum();
    let observed: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let dev = (2.0 * observed - total).abs();
    let n = d.len();
    let mut extreme = 0u64;
    for mask in 0u32..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if (2.0 * w - total).abs() >= dev - 1e-9 {
            extreme += 1;
        }
    }
    extreme as f64 / (1u64 << n) as f64
}

fn wilcoxon_oracle() -> Check {
    let mut s = rng::stream(6);
    let mut worst = 0.0f64;
    let mut samples = 0;
    while samples < 200 {
        let n = s.random_range(1..=12);
        // Values on a coarse grid so ties and zero differences occur.
        let a: Vec<f64> = (0..n).map(|_| s.random_range(0..20) as f64 / 20.0).collect();
        let b: Vec<f64> = (0..n).map(|_| s.random_range(0..20) as f64 / 20.0).collect();
        let Ok(r) = wilcoxon_signed_rank(&a, &b) else {
            continue;
        };
        if r.method != WilcoxonMethod::Exact {
            return Err(format!("n={n} did not use the exact distribution"));
        }
        let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        worst = worst.max((r.p_two_sided - brute_force_p(&diffs)).abs());
        samples += 1;
    }
    let five = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5]).unwrap().p_two_sided;
    let msg = format!("max |p - brute| {worst:.2e} over {samples} samples, n=5 all-positive p={five}");
    if worst <= PVALUE_TOL && five == 0.0625 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Step-up procedure: adjusted p of rank k is min over j >= k of m p_(j) / j.
fn oracle_bh(p: &[f64], m: usize) -> Vec<f64> {
    let mut sorted: Vec<(usize, f64)> = p.iter().copied().enumerate().collect();
    sorted.sort_by(|x, y| x.1.partial_cmp(&y.1).unwrap());
    let mut out = vec![0.0; p.len()];
    for k in 0..sorted.len() {
        let q = (k..sorted.len())
            .map(|j| sorted[j].1 * m as f64 / (j + 1) as f64)
            .fold(f64::INFINITY, f64::min)
            .min(1.0);
        out[sorted[k].0] = q;
    }
    out
}

fn fdr_oracle() -> Check {
    let mut s = rng::stream(7);
    let mut worst = 0.0f64;
    for t in 0..100 {
        let m = [4, 12, 20][t % 3];
        let len = s.random_range(1..=m);
        let p: Vec<f64> = (0..len).map(|_| s.random_range(1e-6..=1.0)).collect();
        let got = fdr_bh(&p, m).unwrap();
        for (g, w) in got.iter().zip(oracle_bh(&p, m)) {
            worst = worst.max((g - w).abs());
        }
    }
    let single = fdr_bh(&[0.004], 12).unwrap()[0];
    let msg = format!("max deviation {worst:.2e} over 100 vectors, 0.004 at m=12 -> {single}");
    if worst <= FDR_TOL && (single - 0.048).abs() <= FDR_TOL {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn dice_oracle() -> Check {
    let mut s = rng::stream(8);
    let names: BTreeMap<u8, String> = (1..8).map(|l| (l, format!("organ{l}"))).collect();
    let labels: Vec<u8> = (0..8).collect();
    let n = 16;
    let mut mismatches = 0;
    for _ in 0..20 {
        let random = |s: &mut rng::Stream| (0..n * n * n).map(|_| s.random_range(0..8u8)).collect::<Vec<u8>>();
        let p = random(&mut s);
        let t = random(&mut s);
        let pred = LabelVolume::new([n; 3], [1.0; 3], p.clone(), names.clone()).unwrap();
        let truth = LabelVolume::new([n; 3], [1.0; 3], t.clone(), names.clone()).unwrap();
        let got = multi_label_dice("s", &pred, &truth, &labels).unwrap();
        for (rec, &l) in got.iter().zip(&labels) {
            let (mut inter, mut np, mut nt) = (0u64, 0u64, 0u64);
            for z in 0..n {
                for y in 0..n {
                    for x in 0..n {
                        let i = x + n * (y + n * z);
                        let a = p[i] == l;
                        let b = t[i] == l;
                        np += a as u64;
                        nt += b as u64;
                        inter += (a && b) as u64;
                    }
                }
            }
            let want = if np + nt == 0 { 1.0 } else { 2.0 * inter as f64 / (np + nt) as f64 };
            mismatches += (rec.dice != want || rec.label_id != l) as usize;
        }
    }
    let msg = format!("{mismatches} mismatches over 20 volumes x 8 labels");
    if mismatches == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn sweep_config() -> RunConfig {
    RunConfig {
        strategies: vec![StrategySpec::stn(), StrategySpec::wir(), StrategySpec::swn(50.0, 50.0)],
        phantom: reference_phantom(15.0),
        train_subjects: 5,
        test_subjects: 5,
        ..RunConfig::default()
    }
}

fn fig5_analog() -> Check {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let result = pool.install(|| ctwindow::cli::run_sweep(&sweep_config())).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let mut ok = elapsed < SWEEP_BUDGET;
    let mut at_zero = Vec::new();
    for name in ["STN", "WIR", "SWN[50,50]"] {
        for l in 1..=3 {
            let d = result.dice(name, l, 0.0).ok_or("missing shift-0 cell")?;
            ok &= d >= DICE_AT_ZERO;
            at_zero.push(d);
        }
    }
    let min_zero = at_zero.iter().copied().fold(f64::INFINITY, f64::min);
    let swn: Vec<usize> = (1..=3).map(|l| result.tolerance_width("SWN[50,50]", l, TOLERANCE_DICE)).collect();
    let stn: Vec<usize> = (1..=3).map(|l| result.tolerance_width("STN", l, TOLERANCE_DICE)).collect();
    ok &= swn.iter().zip(&stn).all(|(a, b)| a >= b) && swn.iter().zip(&stn).any(|(a, b)| a > b);
    let saturated = result.dice("STN", 1, 300.0).ok_or("missing +300 cell")?;
    ok &= saturated < SATURATED_DICE;
    let msg = format!(
        "min dice@0 {min_zero:.3}; widths SWN {swn:?} vs STN {stn:?}; STN organ40 @+300 {saturated:.3}; {elapsed:.2?}"
    );
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn determinism(dir: &Path) -> Check {
    let cfg_path = dir.join("run.json");
    std::fs::write(&cfg_path, serde_json::to_string(&sweep_config()).unwrap()).unwrap();
    let run = |name: &str, threads: usize| {
        let out = dir.join(name);
        let args = SweepArgs {
            config: Some(cfg_path.clone()),
            output: Some(out.clone()),
        };
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| cmd_sweep(&args)).unwrap();
        std::fs::read(out).unwrap()
    };
    let a = run("a.csv", 1);
    let b = run("b.csv", 4);
    let msg = format!("{} bytes, 1 vs 4 worker threads", a.len());
    if a == b && !a.is_empty() {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let checks: Vec<(&str, Box<dyn Fn() -> Check>)> = vec![
        ("1 windowing exactness", Box::new(windowing_exactness)),
        ("2 shift equivariance", Box::new(shift_equivariance)),
        ("3 SWN[0,0] equals STN", Box::new(|| swn_degeneracy(dir.path()))),
        ("4 sampler statistics", Box::new(sampler_statistics)),
        ("5 Wilcoxon exact oracle", Box::new(wilcoxon_oracle)),
        ("6 BH FDR oracle", Box::new(fdr_oracle)),
        ("7 Dice oracle", Box::new(dice_oracle)),
        ("8 shift sweep ordering", Box::new(fig5_analog)),
        ("9 sweep determinism", Box::new(|| determinism(dir.path()))),
    ];
    let mut failed = 0;
    for (name, check) in &checks {
        match check() {
            Ok(msg) => println!("PASS  {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name}: {msg}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
