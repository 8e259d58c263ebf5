//! Acceptance report: runs every criterion, prints PASS/FAIL with timings and exits nonzero if
//! any criterion fails. Criteria 5-8 share one full experiment on the `single` scenario.

mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use gplight::control::Mode;
use gplight::experiment::{compare, median, read_action_log, read_summary, read_volume, run, ExperimentConfig};

type Outcome = Result<String, String>;

struct Report {
    failures: usize,
}

impl Report {
    fn check(&mut self, id: u32, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) {
        let t0 = Instant::now();
        let outcome = f();
        let took = t0.elapsed();
        let outcome = match outcome {
            Ok(d) if took > budget => Err(format!("{d}; exceeded {:.0?} budget", budget)),
            o => o,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        if outcome.is_err() {
            self.failures += 1;
        }
        println!("criterion {id} [{tag}] {name} ({:.2?}): {detail}", took);
    }
}

fn spectral() -> Outcome {
    let c = common::spectral_check(2024, 20);
    let msg = format!("{} graphs, worst |cheb - dense| {:.2e}, worst lambda_max rel err {:.2e}", c.graphs, c.worst_conv, c.worst_lambda);
    if c.worst_conv <= 1e-8 && c.worst_lambda <= 1e-6 { Ok(msg) } else { Err(msg) }
}

fn gradients() -> Outcome {
    let s = common::stgcn_gradient_check(1, 120);
    let d = common::dqn_gradient_check(1, 120);
    let msg = format!(
        "stgcn {} params worst rel {:.1e} ({} failing); dqn {} params worst rel {:.1e} ({} failing)",
        s.probed, s.worst, s.failures, d.probed, d.worst, d.failures
    );
    if s.failures == 0 && d.failures == 0 && s.probed >= 100 && d.probed >= 100 { Ok(msg) } else { Err(msg) }
}

fn simulation() -> Outcome {
    let a = common::conserving_single_run(3600)?;
    let b = common::conserving_single_run(3600)?;
    if a != b {
        return Err("event logs differ between identical runs".into());
    }
    Ok(format!("conservation held for 3600 steps; event logs identical ({} bytes)", a.len()))
}

fn pressure() -> Outcome {
    common::pressure_algebra_check().map(|_| "boundaries, monotonicity and N_max -> inf limit within 1e-6".into())
}

fn experiment_config(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        modes: vec![Mode::Gplight, Mode::PresslightDynamic, Mode::Fixedtime],
        seeds: vec![0, 1, 2, 3, 4],
        out_dir: out.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

fn ordering(dir: &Path, cfg: &ExperimentConfig) -> Outcome {
    if cfg.train_episodes > 200 {
        return Err(format!("{} training episodes exceeds 200", cfg.train_episodes));
    }
    let rows = read_summary(dir).map_err(|e| e.to_string())?;
    let med = |mode: Mode| {
        let v: Vec<f64> = rows.iter().filter(|r| r.mode == mode.as_str()).map(|r| r.throughput as f64).collect();
        (median(&v), v)
    };
    let (g, gv) = med(Mode::Gplight);
    let (p, pv) = med(Mode::PresslightDynamic);
    let (f, fv) = med(Mode::Fixedtime);
    let msg = format!(
        "median throughput gplight {g} {gv:?}, presslight-dynamic {p} {pv:?}, fixedtime {f} {fv:?}, gplight/fixedtime {:.3}",
        g / f
    );
    if g >= p && p >= f && g >= 1.3 * f { Ok(msg) } else { Err(msg) }
}

fn gap(dir: &Path, cfg: &ExperimentConfig) -> Outcome {
    let c = compare(dir, dir, Mode::Gplight, Mode::PresslightDynamic, None).map_err(|e| e.to_string())?;
    let early = c.gap.iter().filter(|(t, _, _)| *t < 900).map(|(_, _, m)| m.abs()).fold(0.0, f64::max);
    let (t_end, per_seed, end) = c.gap.last().cloned().ok_or("empty gap series")?;
    let at = |t: u64| c.gap.iter().find(|g| g.0 == t).map(|g| g.2).unwrap_or(f64::NAN);
    let msg = format!(
        "max |median gap| before 900 s = {early}; median gap at 1800 s {}, 2700 s {}, {t_end} s {end} (per seed {per_seed:?})",
        at(1800),
        at(2700)
    );
    if early <= 3.0 && end > 0.0 && t_end == cfg.episode.total_s { Ok(msg) } else { Err(msg) }
}

/// First minute at or after `from` whose value reaches twice the mean over `[from, surge)`.
fn crossing(values: &[Option<f64>], from: usize, surge: usize) -> Option<usize> {
    let pre: Vec<f64> = values[from..surge].iter().flatten().copied().collect();
    let mean = pre.iter().sum::<f64>() / pre.len() as f64;
    (from..values.len()).find(|&m| values[m].is_some_and(|v| v >= 2.0 * mean))
}

fn forecast_lag(dir: &Path, cfg: &ExperimentConfig) -> Outcome {
    let t = cfg.episode.history_minutes;
    let surge = (cfg.scenario_options.surge_start_s / 60) as usize;
    let slack = (cfg.episode.horizon_minutes + cfg.episode.history_minutes) as i64 * 60;
    let mut lags = Vec::new();
    let mut ok = true;
    for &s in &cfg.seeds {
        let vol = read_volume(dir, Mode::Gplight, s).map_err(|e| e.to_string())?;
        let real: Vec<Option<f64>> = vol.iter().map(|v| Some(v.1)).collect();
        let pred: Vec<Option<f64>> = vol.iter().map(|v| v.2).collect();
        match (crossing(&real, t, surge), crossing(&pred, t, surge)) {
            (Some(r), Some(p)) => {
                let lag = (p as i64 - r as i64) * 60;
                ok &= (0..=slack).contains(&lag);
                lags.push(format!("s{s}: real {}s pred {}s", r * 60, p * 60));
            }
            (r, p) => {
                ok = false;
                lags.push(format!("s{s}: real {r:?} pred {p:?} (no crossing)"));
            }
        }
    }
    let msg = format!("allowed lag [0, {slack}] s; {}", lags.join(", "));
    if ok { Ok(msg) } else { Err(msg) }
}

fn duration_bounds(dir: &Path, cfg: &ExperimentConfig) -> Outcome {
    let r = &cfg.episode.duration;
    let warm_up = cfg.episode.history_minutes as u64 * 60;
    let (mut total, mut bad) = (0usize, 0usize);
    for &s in &cfg.seeds {
        for stage in ["train", "eval"] {
            let path = dir.join(format!("actions/{stage}_gplight_s{s}.csv"));
            if !path.exists() {
                continue;
            }
            for a in read_action_log(dir, stage, Mode::Gplight, s).map_err(|e| e.to_string())? {
                if a.time_s < warm_up {
                    continue;
                }
                total += 1;
                if !(a.t_green == a.t_exp.min(a.t_req) && r.t_min_s <= a.t_green && a.t_green <= r.t_max_s) {
                    bad += 1;
                }
            }
        }
    }
    let msg = format!("{} of {total} post-warm-up gplight actions satisfy t_min <= min(t_exp, t_req) <= t_max", total - bad);
    if bad == 0 && total > 0 { Ok(msg) } else { Err(msg) }
}

fn main() {
    let mut report = Report { failures: 0 };
    report.check(1, "Chebyshev recurrence vs dense eigendecomposition", Duration::from_secs(10), spectral);
    report.check(2, "STGCN and DQN gradients vs finite differences", Duration::from_secs(60), gradients);
    report.check(3, "single-intersection hour: conservation and replay", Duration::from_secs(5), simulation);
    report.check(4, "capacity-aware pressure algebra", Duration::from_secs(1), pressure);

    let out: PathBuf = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-run");
    let _ = std::fs::remove_dir_all(&out);
    let cfg = experiment_config(&out);
    println!("running experiment on `single` into {} ...", out.display());
    let mut ran: Result<(), String> = Ok(());
    report.check(5, "throughput ordering gplight >= presslight-dynamic >= fixedtime, gplight >= 1.3x fixedtime", Duration::from_secs(30 * 60), || {
        ran = run(&cfg).map(|_| ()).map_err(|e| e.to_string());
        ran.clone()?;
        ordering(&out, &cfg)
    });
    let after = |f: fn(&Path, &ExperimentConfig) -> Outcome| ran.clone().and_then(|_| f(&out, &cfg));
    report.check(6, "cumulative throughput gap gplight - presslight-dynamic", Duration::from_secs(60), || after(gap));
    report.check(7, "forecast surge detection lag", Duration::from_secs(60), || after(forecast_lag));
    report.check(8, "green duration bounds after warm-up", Duration::from_secs(60), || after(duration_bounds));

    println!("acceptance: {} of 8 criteria passed", 8 - report.failures);
    if report.failures > 0 {
        std::process::exit(1);
    }
}
