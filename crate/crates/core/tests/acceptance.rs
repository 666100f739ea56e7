//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p banner-salience --test acceptance`.

use std::collections::BTreeMap;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use banner_salience::corpus::acquire::{acquire, append_attempt_log, AcquireResult, FetchError, Protocol};
use banner_salience::corpus::annotations::{BannerAnnotation, Locale};
use banner_salience::corpus::probe::{probe, PortOutcome, ProbeConfig};
use banner_salience::corpus::taxonomy::{classify_compliance, Category, ComplianceClass};
use banner_salience::features::Backend;
use banner_salience::perturb::{ensemble_scores, hflip_box, PerturbationConfig};
use banner_salience::pipeline::salience_scores;
use banner_salience::saliency::{compute_salience, fuse_block, fuse_layer, fusion_weight, rarity_map};
use banner_salience::scoring::{
    contrast_baseline, dominates, score_button, threshold_grid, threshold_sweep, verdict, BoundingBox,
    BoxSet, ButtonSalience, Role,
};
use banner_salience::stats::{
    compliance_table, fixed_effects_ols, krippendorff_alpha, mcnemar, mcnemar_counts, transitions,
    wilcoxon_signed_rank, Frame, LocationPair, RegressionSpec,
};
use banner_salience::{Grid, RarityConfig, SalienceMap, Screenshot};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_grid(r: &mut ChaCha8Rng, w: usize, h: usize) -> Grid {
    Grid::from_fn(w, h, |_, _| r.random_range(-5.0..5.0))
}

// ---------------------------------------------------------------- rarity

fn rarity_oracle(values: &[f64], bins: usize) -> Vec<f64> {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (max - min) / bins as f64;
    let bin = |v: f64| -> usize {
        if max == min {
            return 0;
        }
        let mut b = 0;
        for i in 1..bins {
            if v >= min + i as f64 * width {
                b = i;
            }
        }
        b
    };
    let mut hist = vec![0usize; bins];
    for &v in values {
        hist[bin(v)] += 1;
    }
    values
        .iter()
        .map(|&v| -(hist[bin(v)] as f64 / values.len() as f64).ln())
        .collect()
}

fn rarity_oracle_equivalence() -> Check {
    let mut r = rng(1);
    let cfg = RarityConfig::default();
    let start = Instant::now();
    let mut worst = 0.0f64;
    for i in 0..200 {
        let g = if i % 4 == 0 {
            Grid::from_fn(8, 8, |_, _| r.random_range(0..6) as f64)
        } else {
            random_grid(&mut r, 8, 8)
        };
        let got = rarity_map(&g, &cfg).map_err(|e| e.to_string())?;
        for (a, b) in got.data().iter().zip(rarity_oracle(g.data(), 10)) {
            worst = worst.max((a - b).abs());
        }
    }
    let elapsed = start.elapsed();
    ensure!(worst <= 1e-9, "max deviation {worst:e}");
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("max deviation {worst:e}, {elapsed:?}"))
}

// ---------------------------------------------------------------- fusion

fn bilinear_oracle(g: &Grid, w: usize, h: usize) -> Grid {
    let (sw, sh) = g.dims();
    let coord = |i: usize, n: usize, out: usize| -> (usize, usize, f64) {
        if n == 1 {
            return (0, 0, 0.0);
        }
        let p = ((i as f64 + 0.5) * n as f64 / out as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = p.floor() as usize;
        (lo, (lo + 1).min(n - 1), p - lo as f64)
    };
    Grid::from_fn(w, h, |x, y| {
        let (x0, x1, tx) = coord(x, sw, w);
        let (y0, y1, ty) = coord(y, sh, h);
        let top = g.get(x0, y0) * (1.0 - tx) + g.get(x1, y0) * tx;
        let bottom = g.get(x0, y1) * (1.0 - tx) + g.get(x1, y1) * tx;
        top * (1.0 - ty) + bottom * ty
    })
}

fn fusion_oracle(maps: &[Grid]) -> Vec<f64> {
    let weights: Vec<f64> = maps
        .iter()
        .map(|m| {
            let d = m.data();
            let max = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            if max == min {
                0.0
            } else {
                (max - mean).powi(2)
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    (0..maps[0].len())
        .map(|i| {
            if total == 0.0 {
                0.0
            } else {
                maps.iter().zip(&weights).map(|(m, w)| w / total * m.data()[i]).sum()
            }
        })
        .collect()
}

fn fusion_correctness() -> Check {
    let mut r = rng(2);
    let cfg = RarityConfig::default();
    let mut worst = 0.0f64;
    for i in 0..100 {
        let (w, h) = (r.random_range(2..12), r.random_range(2..12));
        let k = r.random_range(1..6);
        let mut maps: Vec<Grid> = (0..k).map(|_| random_grid(&mut r, w, h)).collect();
        if i % 5 == 0 {
            maps.push(Grid::filled(w, h, r.random_range(-3.0..3.0)));
        }
        let got = fuse_layer(&maps, &cfg).map_err(|e| e.to_string())?;
        for (a, b) in got.data().iter().zip(fusion_oracle(&maps)) {
            worst = worst.max((a - b).abs());
        }

        let small = random_grid(&mut r, (w / 2).max(1), (h / 2).max(1));
        let big = random_grid(&mut r, w, h);
        let got = fuse_block(&[small.clone(), big.clone()], &cfg).map_err(|e| e.to_string())?;
        let want = fusion_oracle(&[bilinear_oracle(&small, w, h), big]);
        for (a, b) in got.data().iter().zip(want) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure!(worst <= 1e-9, "max deviation {worst:e}");
    for v in [0.1, 1.0 / 3.0, -7.25, 1e300] {
        let c = Grid::filled(7, 5, v);
        ensure!(fusion_weight(&c) == 0.0, "constant {v} weighs {}", fusion_weight(&c));
    }
    Ok(format!("max deviation {worst:e}; constant maps weigh exactly 0"))
}

// ---------------------------------------------------------------- end to end

fn salience_of(img: &Screenshot) -> Result<SalienceMap, String> {
    let stack = Backend::default().features(img).map_err(|e| e.to_string())?;
    compute_salience(&stack, img.width(), img.height(), &RarityConfig::default()).map_err(|e| e.to_string())
}

fn random_screenshot(r: &mut ChaCha8Rng) -> Screenshot {
    let (w, h) = (r.random_range(32..72), r.random_range(32..64));
    let rects: Vec<(usize, usize, usize, usize, [u8; 3])> = (0..6)
        .map(|_| {
            (
                r.random_range(0..w),
                r.random_range(0..h),
                r.random_range(2..w / 2),
                r.random_range(2..h / 2),
                [r.random(), r.random(), r.random()],
            )
        })
        .collect();
    let noise: Vec<u8> = (0..w * h).map(|_| r.random_range(0..12)).collect();
    Screenshot::from_fn(w, h, "random", |x, y| {
        let mut c = [240u8, 240, 240];
        for &(rx, ry, rw, rh, col) in &rects {
            if x >= rx && x < rx + rw && y >= ry && y < ry + rh {
                c = col;
            }
        }
        let n = noise[y * w + x];
        [c[0].saturating_sub(n), c[1].saturating_sub(n), c[2].saturating_sub(n)]
    })
    .unwrap()
}

fn end_to_end_properties() -> Check {
    for (w, h, c) in [(32, 32, [0u8, 0, 0]), (50, 40, [120, 30, 200]), (64, 33, [255, 255, 255])] {
        let img = Screenshot::from_fn(w, h, "flat", |_, _| c).unwrap();
        let m = salience_of(&img)?;
        ensure!(m.scores().data().iter().all(|v| *v == 0.0), "constant {c:?} image has non-zero salience");
    }
    let mut r = rng(3);
    for i in 0..20 {
        let img = random_screenshot(&mut r);
        let m = salience_of(&img)?;
        let (lo, hi) = (m.scores().min(), m.scores().max());
        ensure!(lo == 0.0 && hi == 255.0, "image {i}: range [{lo}, {hi}]");
        let h = salience_of(&img.flip_horizontal())?;
        ensure!(
            h.scores().flip_horizontal().data() == m.scores().data(),
            "image {i}: horizontal flip not bit-identical"
        );
        let v = salience_of(&img.flip_vertical())?;
        ensure!(
            v.scores().flip_vertical().data() == m.scores().data(),
            "image {i}: vertical flip not bit-identical"
        );
    }
    Ok("3 constant images all zero; 20 random images span [0, 255] and flip bit-identically".into())
}

// ---------------------------------------------------------------- wapo

fn washingtonpost_fixture() -> Check {
    let rows: [(Role, [f64; 10]); 3] = [
        (Role::Accept, [255.0, 151.0, 151.0, 151.0, 151.0, 151.0, 151.0, 151.0, 151.0, 153.0]),
        (Role::Reject, [252.0, 150.0, 150.0, 150.0, 150.0, 150.0, 150.0, 150.0, 150.0, 157.0]),
        (Role::Manage, [169.0, 75.0, 75.0, 75.0, 75.0, 75.0, 75.0, 75.0, 75.0, 76.0]),
    ];
    let grid = Grid::from_fn(12, 4, |x, y| if x < 10 && y < 3 { rows[y].1[x] } else { 0.0 });
    let map = SalienceMap::from_grid(grid).map_err(|e| e.to_string())?;
    let expected = [
        (Role::Accept, 161.6, 255.0, 1.6337),
        (Role::Reject, 160.9, 252.0, 1.6192),
        (Role::Manage, 84.5, 169.0, 0.9941),
    ];
    let mut scores = BTreeMap::new();
    for (y, (role, avg, max, combined)) in expected.into_iter().enumerate() {
        let b = BoundingBox::new(0, y as u32, 10, 1).unwrap();
        let s = score_button(&map, &b, role).map_err(|e| e.to_string())?;
        ensure!((s.avg - avg).abs() < 1e-9 && s.max == max, "{role}: avg {} max {}", s.avg, s.max);
        ensure!((s.combined - combined).abs() <= 1e-4, "{role}: combined {}", s.combined);
        scores.insert(role, s);
    }
    let v = verdict(&scores, 0.07).map_err(|e| e.to_string())?;
    ensure!(v.winner.is_none(), "winner {:?} at 7%", v.winner);
    let ar = verdict(
        &scores.iter().filter(|(r, _)| **r != Role::Manage).map(|(k, v)| (*k, *v)).collect(),
        0.07,
    )
    .map_err(|e| e.to_string())?;
    ensure!(ar.winner.is_none(), "accept vs reject resolved to {:?}", ar.winner);
    let (a, m) = (scores[&Role::Accept].combined, scores[&Role::Manage].combined);
    ensure!(dominates(a, m, 0.07), "accept does not dominate manage");
    Ok(format!(
        "combined {:.4}/{:.4}/{:.4}; no accept-vs-reject winner; accept/manage margin {:.1}%",
        scores[&Role::Accept].combined,
        scores[&Role::Reject].combined,
        scores[&Role::Manage].combined,
        100.0 * (a / m - 1.0)
    ))
}

// ---------------------------------------------------------------- thresholds

fn combined(pairs: &[(Role, f64)]) -> BTreeMap<Role, ButtonSalience> {
    pairs
        .iter()
        .map(|&(r, c)| (r, ButtonSalience { role: r, avg: 0.0, max: 0.0, combined: c }))
        .collect()
}

fn threshold_boundaries() -> Check {
    let konzert = combined(&[(Role::Accept, 1.086), (Role::Reject, 1.0), (Role::Manage, 1.0)]);
    let at = |s: &BTreeMap<Role, ButtonSalience>, t: f64| verdict(s, t).map(|v| v.winner).map_err(|e| e.to_string());
    ensure!(at(&konzert, 0.07)? == Some(Role::Accept), "8.6% not detected at 7%");
    ensure!(at(&konzert, 0.09)?.is_none(), "8.6% detected at 9%");

    let autotrader = combined(&[(Role::Accept, 1.0015), (Role::Reject, 1.0)]);
    ensure!(at(&autotrader, 0.07)?.is_none(), "0.15% detected at 7%");
    let grid = threshold_grid(0.001, 0.10, 0.001).map_err(|e| e.to_string())?;
    let detected: Vec<f64> = grid
        .iter()
        .copied()
        .filter(|&t| at(&autotrader, t).map(|w| w.is_some()).unwrap_or(true))
        .collect();
    ensure!(
        detected.is_empty(),
        "0.15% margin detected at t = {detected:?}; a margin above t satisfies c(r) >= (1+t) c(s)"
    );

    let mut r = rng(5);
    let ts = threshold_grid(0.0, 0.10, 0.001).map_err(|e| e.to_string())?;
    for c in 0..50 {
        let corpus: Vec<_> = (0..r.random_range(1..40))
            .map(|_| {
                let base: f64 = r.random_range(0.2..2.0);
                combined(&[
                    (Role::Accept, base * r.random_range(0.85..1.2)),
                    (Role::Reject, base * r.random_range(0.85..1.2)),
                    (Role::Manage, base * r.random_range(0.85..1.2)),
                ])
            })
            .collect();
        let table = threshold_sweep(&corpus, &ts).map_err(|e| e.to_string())?;
        for w in table.rows.windows(2) {
            let flagged = |r: &banner_salience::scoring::SweepRow| r.accept + r.reject + r.manage;
            ensure!(flagged(&w[1]) <= flagged(&w[0]) + 1e-12, "corpus {c}: prevalence rises at t = {}", w[1].threshold);
        }
    }
    Ok("8.6% detected at 7% and not at 9%; 0.15% never detected; 50 sweeps non-increasing".into())
}

// ---------------------------------------------------------------- perturbation

fn perturbation_determinism() -> Check {
    let mut r = rng(6);
    let img = random_screenshot(&mut r);
    let (w, h) = (img.width() as u32, img.height() as u32);
    let mut boxes = BoxSet::new();
    boxes.insert(Role::Banner, BoundingBox::new(0, h / 2, w, h / 2).unwrap());
    boxes.insert(Role::Accept, BoundingBox::new(2, h - 12, 10, 8).unwrap());
    boxes.insert(Role::Reject, BoundingBox::new(w - 14, h - 12, 10, 8).unwrap());
    let scorer = |im: &Screenshot, b: &BoxSet| salience_scores(&Backend::default(), &RarityConfig::default(), im, b);
    let cfg = PerturbationConfig { ensemble_size: 6, master_seed: 42, ..Default::default() };
    let a = ensemble_scores(&img, &boxes, &cfg, scorer).map_err(|e| e.to_string())?;
    let b = ensemble_scores(&img, &boxes, &cfg, scorer).map_err(|e| e.to_string())?;
    ensure!(a == b, "same seed gave different ensembles");
    let other = ensemble_scores(&img, &boxes, &PerturbationConfig { master_seed: 43, ..cfg }, scorer)
        .map_err(|e| e.to_string())?;
    ensure!(other != a, "seed has no effect");

    for _ in 0..100 {
        let width = r.random_range(10..400usize);
        let bw = r.random_range(1..=width as u32);
        let bx = r.random_range(0..=width as u32 - bw);
        let b = BoundingBox::new(bx, r.random_range(0..50), bw, r.random_range(1..50)).unwrap();
        let f = hflip_box(&b, width);
        ensure!(f.x == width as u32 - b.x - b.w && f.y == b.y && f.w == b.w && f.h == b.h, "{b:?} -> {f:?}");
    }

    let off = PerturbationConfig { per_transform_probability: 0.0, ..cfg };
    let plain = scorer(&img, &boxes).map_err(|e| e.to_string())?;
    let ens = ensemble_scores(&img, &boxes, &off, scorer).map_err(|e| e.to_string())?;
    ensure!(ens == plain, "probability-0 ensemble differs from unperturbed scores");
    Ok("ensembles bit-identical per seed; 100 h-flipped boxes exact; p=0 equals unperturbed".into())
}

// ---------------------------------------------------------------- statistics

fn wilcoxon_enumeration_p(d: &[f64]) -> f64 {
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks: Vec<f64> = abs
        .iter()
        .map(|a| {
            let below = abs.iter().filter(|b| *b < a).count() as f64;
            let tied = abs.iter().filter(|b| *b == a).count() as f64;
            below + (tied + 1.0) / 2.0
        })
        .collect();
    let total: f64 = ranks.iter().sum();
    let pos: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let w = pos.min(total - pos);
    let n = d.len();
    let hits = (0u32..1 << n)
        .filter(|mask| {
            let t: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
            t <= w + 1e-9
        })
        .count();
    (2.0 * hits as f64 / (1u64 << n) as f64).min(1.0)
}

fn dummy_ols(frame: &Frame, k: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let groups: Vec<&String> = {
        let mut g: Vec<&String> = frame.groups.iter().collect();
        g.sort();
        g.dedup();
        g
    };
    let n = frame.len();
    let p = k + groups.len();
    let x = DMatrix::from_fn(n, p, |i, j| {
        if j < k {
            frame.columns[j].1[i]
        } else {
            (frame.groups[i] == *groups[j - k]) as u8 as f64
        }
    });
    let y = DVector::from_vec(frame.response.clone());
    let svd = x.clone().svd(true, true);
    let beta = svd.solve(&y, 1e-12).unwrap();
    let resid = &y - &x * &beta;
    let rss = resid.norm_squared();
    let sigma2 = rss / (n - p) as f64;
    let v_t = svd.v_t.unwrap();
    let s = svd.singular_values;
    let se: Vec<f64> = (0..k)
        .map(|j| (sigma2 * (0..p).map(|m| (v_t[(m, j)] / s[m]).powi(2)).sum::<f64>()).sqrt())
        .collect();
    let mean = y.mean();
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    ((0..k).map(|j| beta[j]).collect(), se, 1.0 - rss / tss)
}

fn random_panel(r: &mut ChaCha8Rng, groups: usize, per: std::ops::Range<usize>, k: usize, beta: &[f64], noise: f64) -> Frame {
    let mut f = Frame::default();
    let mut cols = vec![Vec::new(); k];
    for g in 0..groups {
        let alpha = r.random_range(-2.0..2.0);
        for _ in 0..r.random_range(per.clone()) {
            let xs: Vec<f64> = (0..k).map(|_| r.random_range(-1.0..1.0) + 0.3 * alpha).collect();
            let e: f64 = (0..12).map(|_| r.random_range(-0.5..0.5)).sum::<f64>() * noise;
            f.groups.push(format!("g{g:03}"));
            f.response.push(alpha + xs.iter().zip(beta).map(|(x, b)| x * b).sum::<f64>() + e);
            for (c, x) in cols.iter_mut().zip(xs) {
                c.push(x);
            }
        }
    }
    for (j, c) in cols.into_iter().enumerate() {
        f.push_column(format!("x{j}"), c);
    }
    f
}

fn spec(preds: &[&str]) -> RegressionSpec {
    RegressionSpec { predictors: preds.iter().map(|s| s.to_string()).collect(), ..Default::default() }
}

fn statistics_oracles() -> Check {
    let start = Instant::now();
    let m = mcnemar_counts(10, 0, false).map_err(|e| e.to_string())?;
    ensure!(m.statistic == 10.0, "McNemar {}", m.statistic);
    let m = mcnemar_counts(10, 0, true).map_err(|e| e.to_string())?;
    ensure!(m.statistic == 8.1, "corrected McNemar {}", m.statistic);

    let mut r = rng(7);
    let mut worst_p = 0.0f64;
    for n in 1..=10 {
        for trial in 0..20 {
            let x: Vec<f64> = (0..n)
                .map(|_| if trial % 2 == 0 { r.random_range(-3..4) as f64 } else { r.random_range(-3.0..3.0) })
                .collect();
            let y = vec![0.0; n];
            let d: Vec<f64> = x.iter().copied().filter(|v| *v != 0.0).collect();
            if d.is_empty() {
                continue;
            }
            let got = wilcoxon_signed_rank(&x, &y, 1.0).map_err(|e| e.to_string())?;
            worst_p = worst_p.max((got.p_value - wilcoxon_enumeration_p(&d)).abs());
        }
    }
    ensure!(worst_p <= 1e-12, "Wilcoxon p deviates by {worst_p:e}");

    let labels = ["Full", "Notice", "None", "Paywall", "Full", "Manage"];
    let ratings: Vec<Vec<Option<&str>>> = (0..3)
        .map(|rater| {
            labels.iter().enumerate().map(|(i, l)| if (i + rater) % 5 == 4 { None } else { Some(*l) }).collect()
        })
        .collect();
    let alpha = krippendorff_alpha(&ratings).map_err(|e| e.to_string())?;
    ensure!(alpha == 1.0, "perfect agreement alpha {alpha}");

    let mut worst_b = 0.0f64;
    for _ in 0..50 {
        let k = r.random_range(1..4);
        let beta: Vec<f64> = (0..k).map(|_| r.random_range(-2.0..2.0)).collect();
        let groups = r.random_range(3..9);
        let f = random_panel(&mut r, groups, 2..6, k, &beta, 1.0);
        let names: Vec<String> = (0..k).map(|j| format!("x{j}")).collect();
        let names: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let fe = fixed_effects_ols(&spec(&names), &f).map_err(|e| e.to_string())?;
        let (b, se, r2) = dummy_ols(&f, k);
        for j in 0..k {
            worst_b = worst_b
                .max((fe.coefficients[j].estimate - b[j]).abs())
                .max((fe.coefficients[j].std_error - se[j]).abs());
        }
        worst_b = worst_b.max((fe.r_squared - r2).abs());
    }
    ensure!(worst_b <= 1e-8, "fixed effects vs dummy OLS deviate by {worst_b:e}");

    let planted = [1.5, -0.8, 0.3];
    let f = random_panel(&mut r, 50, 6..11, 3, &planted, 1.0);
    let fit = fixed_effects_ols(&spec(&["x0", "x1", "x2"]), &f).map_err(|e| e.to_string())?;
    for (c, truth) in fit.coefficients.iter().zip(planted) {
        ensure!(
            (c.estimate - truth).abs() <= 3.0 * c.std_error,
            "{}: {} vs planted {truth} (se {})",
            c.name,
            c.estimate,
            c.std_error
        );
    }
    let r2: Vec<f64> = [&[][..], &["x0"][..], &["x0", "x1"][..], &["x0", "x1", "x2"][..]]
        .iter()
        .map(|p| fixed_effects_ols(&spec(p), &f).map(|r| r.r_squared))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    ensure!(r2.windows(2).all(|w| w[1] >= w[0] - 1e-12), "nested R^2 not monotone: {r2:?}");

    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!(
        "McNemar 10.0/8.1; Wilcoxon dp {worst_p:e}; alpha 1; FE vs dummy {worst_b:e}; nested R^2 {:.3}..{:.3}; {elapsed:?}",
        r2[0], r2[3]
    ))
}

// ---------------------------------------------------------------- taxonomy

fn ann(site: String, eu: bool, loc: Locale, category: Category) -> BannerAnnotation {
    BannerAnnotation {
        website_id: site,
        visitor_locale: loc,
        category,
        website_eu: eu,
        image: None,
        image_width: None,
        image_height: None,
        boxes: Default::default(),
        flags: Default::default(),
    }
}

fn taxonomy_totality() -> Check {
    use ComplianceClass::*;
    let table1 = [
        (Category::Notice, NotCompliant),
        (Category::Paywall, LikelyCompliant),
        (Category::Full, Compliant),
        (Category::FullChoices, Compliant),
        (Category::Choices, LikelyCompliant),
        (Category::Manage, NotCompliant),
        (Category::FullManage, LikelyNotCompliant),
        (Category::CornerReject, LikelyCompliant),
        (Category::SettingsOnly, LikelyNotCompliant),
        (Category::Preselected, NotCompliant),
        (Category::Ambiguous, LikelyNotCompliant),
        (Category::TwoBanners, LikelyNotCompliant),
        (Category::FullX, LikelyNotCompliant),
        (Category::FullChoicesX, LikelyNotCompliant),
        (Category::ChoicesX, LikelyNotCompliant),
        (Category::ManageX, LikelyNotCompliant),
        (Category::FullManageX, LikelyNotCompliant),
    ];
    ensure!(Category::BANNERS.len() == 17, "{} banner categories", Category::BANNERS.len());
    for (c, want) in table1 {
        let got = classify_compliance(c).map_err(|e| e.to_string())?;
        ensure!(got == want, "{c}: {got:?}, expected {want:?}");
    }
    ensure!(classify_compliance(Category::None).is_err(), "None classified");

    let mut corpus = Vec::new();
    for (cat, n) in [
        (Category::Full, 449),
        (Category::Paywall, 170),
        (Category::SettingsOnly, 122),
        (Category::Notice, 259),
    ] {
        for i in 0..n {
            corpus.push(ann(format!("{cat}-{i}.de"), true, Locale::Eu, cat));
        }
    }
    let t = compliance_table(&corpus, false).map_err(|e| e.to_string())?;
    let pair = LocationPair { website_eu: true, visitor: Locale::Eu };
    let csv = t.to_csv();
    let want = format!("{},1000,44.9,17.0,12.2,25.9", pair.label());
    ensure!(csv.lines().any(|l| l == want), "row missing from\n{csv}");

    let mut visits = Vec::new();
    for i in 0..1003 {
        let site = format!("site{i}.fr");
        let us = match i {
            _ if i < 100 => Category::None,
            _ if i < 139 => Category::Notice,
            _ => Category::Full,
        };
        visits.push(ann(site.clone(), true, Locale::Eu, Category::Full));
        visits.push(ann(site, true, Locale::Us, us));
    }
    let s = transitions(&visits);
    ensure!(s.paired == 1003 && s.changed == 139, "paired {} changed {}", s.paired, s.changed);
    ensure!((s.change_rate - 13.9).abs() <= 0.05, "change rate {}", s.change_rate);
    Ok(format!("17 labels match; {want}; {} of {} changed ({:.1}%)", s.changed, s.paired, s.change_rate))
}

// ---------------------------------------------------------------- acquisition

fn acquisition_state_machine() -> Check {
    let mut calls = Vec::new();
    let mut failing = |url: &str, t: Duration| -> Result<PathBuf, FetchError> {
        calls.push((url.to_owned(), t.as_secs()));
        Err(FetchError::Failed("timeout".into()))
    };
    let a = acquire("example.org", &mut failing);
    let want = [
        ("https://example.org/", 30),
        ("http://example.org/", 30),
        ("https://example.org/", 60),
        ("http://example.org/", 60),
    ];
    ensure!(
        calls.iter().map(|(u, t)| (u.as_str(), *t)).eq(want.iter().copied()),
        "calls {calls:?}"
    );
    ensure!(a.result == AcquireResult::ManualNeeded, "result {:?}", a.result);
    let ladder: Vec<(Protocol, u64)> = a.attempts.iter().map(|x| (x.protocol, x.timeout_secs)).collect();
    ensure!(
        ladder == [(Protocol::Https, 30), (Protocol::Http, 30), (Protocol::Https, 60), (Protocol::Http, 60)],
        "logged ladder {ladder:?}"
    );

    let mut n = 0;
    let mut third = |_: &str, _: Duration| -> Result<PathBuf, FetchError> {
        n += 1;
        if n == 3 { Ok(PathBuf::from("shot.png")) } else { Err(FetchError::Failed("reset".into())) }
    };
    let b = acquire("late.org", &mut third);
    ensure!(b.attempts.len() == 3, "{} attempts before success", b.attempts.len());

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let log = dir.path().join("attempts.jsonl");
    append_attempt_log(&log, &[a, b]).map_err(|e| e.to_string())?;
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&log)
        .map_err(|e| e.to_string())?
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    ensure!(lines.len() == 7, "{} log lines", lines.len());
    ensure!(
        lines[3]["protocol"] == "HTTP" && lines[3]["timeout_secs"] == 60 && lines[3]["outcome"] == "error",
        "log line {}",
        lines[3]
    );
    ensure!(lines[6]["outcome"] == "ok", "log line {}", lines[6]);

    let open = TcpListener::bind("127.0.0.1:0").map_err(|e| e.to_string())?;
    let closed = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let (hole, _fillers) = black_hole()?;
    let cfg = ProbeConfig {
        ports: vec![closed, hole, open.local_addr().unwrap().port()],
        timeout: Duration::from_secs(1),
    };
    let rep = probe("127.0.0.1", &cfg).map_err(|e| e.to_string())?;
    let outcomes: Vec<&PortOutcome> = rep.ports.iter().map(|(_, o)| o).collect();
    ensure!(
        outcomes == [&PortOutcome::Refused, &PortOutcome::TimedOut, &PortOutcome::Open] && rep.reachable,
        "probe outcomes {outcomes:?}"
    );
    Ok("HTTPS@30 -> HTTP@30 -> HTTPS@60 -> HTTP@60 -> manual; 7 log lines; refused/timed-out/open told apart".into())
}

/// A listener whose accept queue is full, so further SYNs go unanswered.
fn black_hole() -> Result<(u16, (socket2::Socket, Vec<TcpStream>)), String> {
    use socket2::{Domain, Socket, Type};
    let s = Socket::new(Domain::IPV4, Type::STREAM, None).map_err(|e| e.to_string())?;
    let addr: SocketAddr = "127.0.0.1:0".parse().unwrap();
    s.bind(&addr.into()).map_err(|e| e.to_string())?;
    s.listen(0).map_err(|e| e.to_string())?;
    let local = s.local_addr().unwrap().as_socket().unwrap();
    let mut fillers = Vec::new();
    for _ in 0..16 {
        match TcpStream::connect_timeout(&local, Duration::from_millis(200)) {
            Ok(c) => fillers.push(c),
            Err(_) => return Ok((local.port(), (s, fillers))),
        }
    }
    Err("accept queue never filled".into())
}

// ---------------------------------------------------------------- baseline

const BW: usize = 160;
const BH: usize = 100;
const BUTTON: (u32, u32) = (30, 12);

/// Banner across the bottom half with an accept and a reject button of the
/// same grey. With `stripes`, the reject button sits inside a block of text
/// lines while the accept button stands alone.
fn banner(accept_x: usize, reject_x: usize, accept_grey: u8, stripes: bool) -> (Screenshot, BoxSet) {
    let (bw, bh) = (BUTTON.0 as usize, BUTTON.1 as usize);
    let inside = |x: usize, y: usize, bx: usize| x >= bx && x < bx + bw && (70..70 + bh).contains(&y);
    let img = Screenshot::from_fn(BW, BH, "banner", |x, y| {
        if y < 50 {
            [250; 3]
        } else if inside(x, y, accept_x) {
            [accept_grey; 3]
        } else if inside(x, y, reject_x) {
            [150; 3]
        } else if stripes && x + 14 >= reject_x && x < reject_x + 44 && (56..96).contains(&y) && (y / 2) % 2 == 0 {
            [110; 3]
        } else {
            [230; 3]
        }
    })
    .unwrap();
    let mut b = BoxSet::new();
    b.insert(Role::Banner, BoundingBox::new(0, 50, BW as u32, 50).unwrap());
    b.insert(Role::Accept, BoundingBox::new(accept_x as u32, 70, BUTTON.0, BUTTON.1).unwrap());
    b.insert(Role::Reject, BoundingBox::new(reject_x as u32, 70, BUTTON.0, BUTTON.1).unwrap());
    (img, b)
}

fn baseline_divergence() -> Check {
    let mut corpus = Vec::new();
    for v in 0..10 {
        corpus.push(("placement", banner(12 + 2 * v, 100 + (v % 3) * 3, 150, true)));
    }
    for v in 0..20 {
        let ax = 8 + v;
        corpus.push(("neutral", banner(ax, BW - ax - BUTTON.0 as usize, 150, false)));
    }
    for v in 0..10 {
        let ax = 10 + 2 * v;
        corpus.push(("contrast", banner(ax, BW - ax - BUTTON.0 as usize, 40, false)));
    }
    let mut pairs = Vec::new();
    let mut placement_ok = 0;
    for (kind, (img, boxes)) in &corpus {
        let s = salience_scores(&Backend::default(), &RarityConfig::default(), img, boxes).map_err(|e| e.to_string())?;
        let v = verdict(&s, 0.07).map_err(|e| e.to_string())?.manipulation_accept;
        let b = contrast_baseline(img, boxes, 0.10).map_err(|e| e.to_string())?.flagged;
        if *kind == "placement" {
            let c = contrast_baseline(img, boxes, 0.10).unwrap().contrasts;
            ensure!(c[&Role::Accept] == c[&Role::Reject], "placement banner contrasts differ: {c:?}");
            if v && !b {
                placement_ok += 1;
            }
        }
        pairs.push((v, b));
    }
    ensure!(placement_ok == 10, "verdict-only flags on {placement_ok} of 10 placement banners");
    let m = mcnemar(&pairs, false).map_err(|e| e.to_string())?;
    ensure!(m.statistic > 0.0, "McNemar statistic {}", m.statistic);
    let verdict_rate = pairs.iter().filter(|p| p.0).count();
    let baseline_rate = pairs.iter().filter(|p| p.1).count();
    Ok(format!(
        "verdict flags {verdict_rate}/40, baseline {baseline_rate}/40; McNemar chi2 {:.2} (p {:.4})",
        m.statistic, m.p_value
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("rarity oracle equivalence", rarity_oracle_equivalence),
        ("fusion correctness", fusion_correctness),
        ("end-to-end saliency properties", end_to_end_properties),
        ("washingtonpost micro-fixture", washingtonpost_fixture),
        ("threshold boundary fixtures", threshold_boundaries),
        ("perturbation determinism and geometry", perturbation_determinism),
        ("statistics oracles", statistics_oracles),
        ("taxonomy totality", taxonomy_totality),
        ("acquisition state machine", acquisition_state_machine),
        ("baseline-vs-verdict divergence", baseline_divergence),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
