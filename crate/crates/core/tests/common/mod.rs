//! Shared oracles for the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use gplight::dqn::{pressure, reward_for, td_loss_and_grad, Experience, QNetwork, RewardKind};
use gplight::linalg::Matrix;
use gplight::microsim::{Observation, SimConfig, Simulator};
use gplight::netgraph::{build_graph, Laplacian, MOVEMENTS, PHASES};
use gplight::nn::Mlp;
use gplight::scenario::{generate_scenario, ScenarioName, ScenarioOptions};
use gplight::stgcn::{cheb_conv, ChebFilter, HistoryWindow, PredictionWindow, StgcnModel, StgcnShape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheck {
    pub probed: usize,
    pub failures: usize,
    pub worst: f64,
    /// Probes whose finite-difference derivative exceeded 1e-8 in magnitude.
    pub nontrivial: usize,
}

impl GradCheck {
    fn record(&mut self, analytic: f64, fd: f64) {
        let rel = (analytic - fd).abs() / fd.abs().max(1.0);
        self.probed += 1;
        if fd.abs() > 1e-8 {
            self.nontrivial += 1;
        }
        self.worst = self.worst.max(rel);
        if rel > FD_TOL {
            self.failures += 1;
        }
    }
}

/// Random symmetric weights on `n` nodes with every node on a path, so the graph is connected.
pub fn random_connected_weights(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut w = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let connect = j + 1 == i || rng.gen_bool(0.4);
            if connect {
                let v = rng.gen_range(0.1..1.0);
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
    }
    w
}

/// Probes `probes` uniformly drawn STGCN parameters on an `N = 4, T = 10, H = 5` toy model.
pub fn stgcn_gradient_check(seed: u64, probes: usize) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lap = Laplacian::from_weights(&random_connected_weights(4, &mut rng)).unwrap();
    let shape = StgcnShape { n: 4, d: 3, t: 10, h: 5, k: 3, kt: 3, channels: [5, 4, 5] };
    let mut model = StgcnModel::new(shape, &lap, 0, &mut rng).unwrap();
    let batch: Vec<(HistoryWindow, PredictionWindow)> = (0..3)
        .map(|_| {
            let mut x = HistoryWindow::zeros(4, 3, 10);
            x.data.iter_mut().for_each(|v| *v = rng.gen_range(0.0..2.0));
            let mut y = PredictionWindow::zeros(4, 3, 5);
            y.data.iter_mut().for_each(|v| *v = rng.gen_range(0.0..2.0));
            (x, y)
        })
        .collect();
    let refs: Vec<_> = batch.iter().map(|(x, y)| (x, y)).collect();
    let (_, grad) = model.loss_and_grad(&refs).unwrap();
    let analytic: Vec<Vec<f64>> = grad.params().into_iter().map(|(_, g)| g.to_vec()).collect();
    let sizes: Vec<usize> = analytic.iter().map(Vec::len).collect();
    let total: usize = sizes.iter().sum();
    let mut check = GradCheck::default();
    for _ in 0..probes {
        let (a, i) = locate(rng.gen_range(0..total), &sizes);
        let orig = model.params_mut()[a][i];
        model.params_mut()[a][i] = orig + FD_STEP;
        let up = model.loss(&refs).unwrap();
        model.params_mut()[a][i] = orig - FD_STEP;
        let down = model.loss(&refs).unwrap();
        model.params_mut()[a][i] = orig;
        check.record(analytic[a][i], (up - down) / (2.0 * FD_STEP));
    }
    check
}

/// Probes `probes` uniformly drawn online Q-network parameters of the TD loss.
pub fn dqn_gradient_check(seed: u64, probes: usize) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let state_len = 28;
    let mut q = QNetwork::new(state_len, &[64, 64], &mut rng);
    // Make the target differ from the online network so both paths are exercised.
    q.target = Mlp::new(&[state_len, 64, 64, 4], &mut rng);
    let batch: Vec<Experience> = (0..8)
        .map(|_| Experience {
            state: (0..state_len).map(|_| rng.gen_range(0.0..1.0)).collect(),
            action: rng.gen_range(0..4),
            reward: rng.gen_range(-20.0..0.0),
            next_state: (0..state_len).map(|_| rng.gen_range(0.0..1.0)).collect(),
        })
        .collect();
    let refs: Vec<&Experience> = batch.iter().collect();
    let loss = |online: &Mlp| td_loss_and_grad(online, &q.target, &refs, 0.8, 0.05).unwrap().0;
    let (_, grad) = td_loss_and_grad(&q.online, &q.target, &refs, 0.8, 0.05).unwrap();
    let analytic: Vec<Vec<f64>> = grad.params().into_iter().map(|(_, g)| g.to_vec()).collect();
    let sizes: Vec<usize> = analytic.iter().map(Vec::len).collect();
    let total: usize = sizes.iter().sum();
    let mut online = q.online.clone();
    let mut check = GradCheck::default();
    for _ in 0..probes {
        let (a, i) = locate(rng.gen_range(0..total), &sizes);
        let orig = online.params_mut()[a][i];
        online.params_mut()[a][i] = orig + FD_STEP;
        let up = loss(&online);
        online.params_mut()[a][i] = orig - FD_STEP;
        let down = loss(&online);
        online.params_mut()[a][i] = orig;
        check.record(analytic[a][i], (up - down) / (2.0 * FD_STEP));
    }
    check
}

fn locate(mut flat: usize, sizes: &[usize]) -> (usize, usize) {
    for (a, &s) in sizes.iter().enumerate() {
        if flat < s {
            return (a, flat);
        }
        flat -= s;
    }
    unreachable!("index beyond parameter count")
}

/// Dense spectral reference for `sum_k T_k(L^) x theta_k + b`: eigendecompose `L`, rescale every
/// eigenvalue with the same `lambda_max`, and apply the Chebyshev polynomials in the spectrum.
pub fn cheb_conv_dense(x: &Matrix, lap: &Laplacian, filt: &ChebFilter) -> Matrix {
    let n = x.rows();
    let l = nalgebra::DMatrix::from_fn(n, n, |i, j| lap.l[(i, j)]);
    let eig = nalgebra::SymmetricEigen::new(l);
    let mut y = Matrix::zeros(n, filt.c_out);
    for v in 0..n {
        for o in 0..filt.c_out {
            y[(v, o)] = filt.bias[o];
        }
    }
    for k in 0..filt.k {
        // T_k(L^) = U diag(T_k(2 lambda / lambda_max - 1)) U^T.
        let tk = |lam: f64| {
            let s = 2.0 * lam / lap.lambda_max - 1.0;
            let (mut a, mut b) = (1.0, s);
            if k == 0 {
                return 1.0;
            }
            for _ in 1..k {
                (a, b) = (b, 2.0 * s * b - a);
            }
            b
        };
        let d = nalgebra::DMatrix::from_diagonal(&eig.eigenvalues.map(tk));
        let t = &eig.eigenvectors * d * eig.eigenvectors.transpose();
        for v in 0..n {
            for o in 0..filt.c_out {
                let mut acc = 0.0;
                for u in 0..n {
                    for i in 0..filt.c_in {
                        acc += t[(v, u)] * x[(u, i)] * filt.theta[(k * filt.c_in + i) * filt.c_out + o];
                    }
                }
                y[(v, o)] += acc;
            }
        }
    }
    y
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SpectralCheck {
    pub graphs: usize,
    /// Largest |recurrence - dense| entry over all graphs.
    pub worst_conv: f64,
    /// Largest relative error of the power-iteration lambda_max against the dense spectrum.
    pub worst_lambda: f64,
}

/// Random graphs with `N` in 1..=8 and `K` in 1..=5, including some with isolated nodes.
pub fn spectral_check(seed: u64, graphs: usize) -> SpectralCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SpectralCheck { graphs, ..Default::default() };
    for g in 0..graphs {
        let n = rng.gen_range(1..=8);
        let k = rng.gen_range(1..=5);
        let mut w = random_connected_weights(n, &mut rng);
        if g % 5 == 4 && n > 2 {
            // Detach the last node.
            for j in 0..n {
                w[(n - 1, j)] = 0.0;
                w[(j, n - 1)] = 0.0;
            }
        }
        let lap = Laplacian::from_weights(&w).unwrap();
        let (c_in, c_out) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let mut filt = ChebFilter::random(k, c_in, c_out, &mut rng);
        filt.bias.iter_mut().for_each(|b| *b = rng.gen_range(-1.0..1.0));
        let mut x = Matrix::zeros(n, c_in);
        for v in 0..n {
            for i in 0..c_in {
                x[(v, i)] = rng.gen_range(-2.0..2.0);
            }
        }
        let fast = cheb_conv(&x, &lap, &filt).unwrap();
        let dense = cheb_conv_dense(&x, &lap, &filt);
        out.worst_conv = out.worst_conv.max(fast.max_abs_diff(&dense));

        let l = nalgebra::DMatrix::from_fn(n, n, |i, j| lap.l[(i, j)]);
        let true_max = nalgebra::SymmetricEigen::new(l).eigenvalues.max();
        if true_max > 1e-12 {
            out.worst_lambda = out.worst_lambda.max((lap.lambda_max - true_max).abs() / true_max);
        }
    }
    out
}

/// Cyclic 30 s fixed-time control of the `single` scenario for `total_s` seconds, checking vehicle
/// conservation after every step. Returns the event log text.
pub fn conserving_single_run(total_s: u64) -> Result<String, String> {
    let s = generate_scenario(ScenarioName::Single, &ScenarioOptions::default());
    let graph = Arc::new(build_graph(&s.roadnet_json()).map_err(|e| e.to_string())?);
    let mut sim = Simulator::from_flow_text(graph, &s.flows_json(), SimConfig::default()).map_err(|e| e.to_string())?;
    sim.enable_event_log();
    let mut phase = 0;
    for t in 0..total_s {
        if sim.signal(0).awaiting_action() {
            sim.apply_action(0, phase, 30);
            phase = (phase + 1) % PHASES;
        }
        sim.step();
        let (sp, bl, inn, done) = (sim.spawned(), sim.backlog_len(), sim.in_network(), sim.completed());
        if sp != bl + inn + done {
            return Err(format!("t={t}: spawned {sp} != backlog {bl} + in network {inn} + completed {done}"));
        }
    }
    if sim.completed() == 0 {
        return Err("no vehicle completed".into());
    }
    Ok(sim.event_log_text())
}

fn obs_with(incoming: f64, outgoing: f64, capacity: f64) -> Observation {
    Observation { phase: 0, incoming: [incoming; MOVEMENTS], outgoing: [outgoing; MOVEMENTS], outgoing_capacity: [capacity; MOVEMENTS] }
}

/// Boundary cases, monotonicity and the unbounded-capacity limit of the capacity-aware pressure.
pub fn pressure_algebra_check() -> Result<(), String> {
    let close = |a: f64, b: f64, what: &str| {
        if (a - b).abs() <= 1e-6 { Ok(()) } else { Err(format!("{what}: {a} vs {b}")) }
    };
    let p = |i: f64, o: f64, m: f64| pressure(i, o, m).map_err(|e| e.to_string());
    close(p(0.0, 5.0, 10.0)?, 0.0, "empty incoming")?;
    close(p(7.0, 0.0, 10.0)?, 7.0, "empty outgoing")?;
    close(p(7.0, 10.0, 10.0)?, 0.0, "saturated outgoing")?;
    close(p(8.0, 5.0, 10.0)?, 4.0, "half-full outgoing")?;
    for bad in [(-1.0, 0.0, 10.0), (1.0, -1.0, 10.0), (1.0, 11.0, 10.0), (1.0, 0.0, 0.0), (1.0, 0.0, f64::NAN)] {
        if pressure(bad.0, bad.1, bad.2).is_ok() {
            return Err(format!("pressure{bad:?} accepted"));
        }
    }
    for o in 0..10 {
        if p(5.0, o as f64 + 1.0, 10.0)? > p(5.0, o as f64, 10.0)? {
            return Err("pressure increases with outgoing load".into());
        }
    }
    // N_max -> infinity: pressure tends to the incoming count and the reward to minus the total queue.
    for (i, o) in [(3.0, 2.0), (40.0, 39.0), (0.0, 7.0)] {
        close(p(i, o, 1e12)?, i, "pressure limit")?;
    }
    let obs = obs_with(4.0, 9.0, 1e12);
    let ca = reward_for(RewardKind::CapacityAware, &obs).map_err(|e| e.to_string())?;
    let q = reward_for(RewardKind::QueueLength, &obs).map_err(|e| e.to_string())?;
    close(ca, q, "reward limit")?;
    close(q, -48.0, "queue reward")?;
    let empty = obs_with(0.0, 0.0, 40.0);
    close(reward_for(RewardKind::CapacityAware, &empty).map_err(|e| e.to_string())?, 0.0, "empty reward")?;
    let full = obs_with(5.0, 40.0, 40.0);
    close(reward_for(RewardKind::CapacityAware, &full).map_err(|e| e.to_string())?, 0.0, "blocked reward")?;
    Ok(())
}
