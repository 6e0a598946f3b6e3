//! Independent oracles shared by the integration and acceptance targets.
#![allow(dead_code)]

use cohvac::ddpg::mlp::BN_EPS;
use cohvac::ddpg::{MlpNet, Mode, OutputActivation};
use cohvac::microgrid::MicrogridState;
use cohvac::mpc::{solve, Forecast, MpcParams};
use cohvac::thermal::{Building, BuildingState, HvacParams, ZoneParams};
use cohvac::Exec;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight-line forward pass over the documented flat layout: hidden
/// layers `W | gamma | beta`, output `W | bias`.
pub fn reference_forward(net: &MlpNet, tanh: bool, x: &[Vec<f64>], train: bool) -> Vec<Vec<f64>> {
    reference_pass(net, tanh, x, train).0
}

/// Output plus the smallest `|pre-ReLU|` seen, i.e. how close the batch
/// sits to a kink.
fn reference_pass(net: &MlpNet, tanh: bool, x: &[Vec<f64>], train: bool) -> (Vec<Vec<f64>>, f64) {
    let mut margin = f64::INFINITY;
    let sizes = net.sizes();
    let p = net.params();
    let (mut off, mut stat) = (0, 0);
    let mut h: Vec<Vec<f64>> = x.to_vec();
    for l in 0..sizes.len() - 1 {
        let (fi, fo) = (sizes[l], sizes[l + 1]);
        let w = &p[off..off + fi * fo];
        off += fi * fo;
        let mut z: Vec<Vec<f64>> = h
            .iter()
            .map(|row| (0..fo).map(|j| (0..fi).map(|k| w[j * fi + k] * row[k]).sum()).collect())
            .collect();
        if l + 2 < sizes.len() {
            let (gamma, beta) = (&p[off..off + fo], &p[off + fo..off + 2 * fo]);
            off += 2 * fo;
            for j in 0..fo {
                let (mean, var) = if train {
                    let n = z.len() as f64;
                    let m = z.iter().map(|r| r[j]).sum::<f64>() / n;
                    (m, z.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n)
                } else {
                    (net.running_mean()[stat + j], net.running_var()[stat + j])
                };
                for r in z.iter_mut() {
                    let pre = gamma[j] * (r[j] - mean) / (var + BN_EPS).sqrt() + beta[j];
                    margin = margin.min(pre.abs());
                    r[j] = pre.max(0.0);
                }
            }
            stat += fo;
        } else {
            let bias = &p[off..off + fo];
            off += fo;
            for r in z.iter_mut() {
                for j in 0..fo {
                    r[j] += bias[j];
                    if tanh {
                        r[j] = r[j].tanh();
                    }
                }
            }
        }
        h = z;
    }
    assert_eq!(off, p.len());
    (h, margin)
}

pub fn to_matrix(rows: &[Vec<f64>]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), rows[0].len()), |(i, j)| rows[i][j])
}

pub fn random_rows(rng: &mut ChaCha8Rng, n: usize, w: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..w).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
}

/// Random rows whose hidden pre-activations stay at least `1e-3` from the
/// ReLU kink in both modes, so central differences do not straddle it.
pub fn kink_free_rows(rng: &mut ChaCha8Rng, net: &MlpNet, n: usize) -> Vec<Vec<f64>> {
    let tanh = false;
    for _ in 0..10_000 {
        let x = random_rows(rng, n, net.input_dim());
        if [true, false].iter().all(|&train| reference_pass(net, tanh, &x, train).1 > 1e-3) {
            return x;
        }
    }
    panic!("no kink-free batch found");
}

/// A net with non-trivial gammas, betas and running statistics.
pub fn random_net(rng: &mut ChaCha8Rng, sizes: &[usize], out: OutputActivation) -> MlpNet {
    let mut net = MlpNet::new(sizes, out, 0.5, 0.1, rng).unwrap();
    for p in net.params_mut() {
        *p += rng.random_range(-0.3..0.3);
    }
    let k = net.running_mean().len();
    let mean: Vec<f64> = (0..k).map(|_| rng.random_range(-0.5..0.5)).collect();
    let var: Vec<f64> = (0..k).map(|_| rng.random_range(0.3..2.0)).collect();
    net.set_running_stats(&mean, &var).unwrap();
    net
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Analytic gradient of `L = Σ c ⊙ output` against central differences,
/// for every parameter and every input entry.
pub fn check_gradients(net: &mut MlpNet, x: &Array2<f64>, c: &Array2<f64>, mode: Mode) -> f64 {
    let loss = |net: &MlpNet, x: &Array2<f64>| -> f64 { (&net.forward(x, mode).unwrap() * c).sum() };
    let cache = match mode {
        Mode::Train => net.forward_train(x).unwrap(),
        Mode::Eval => net.forward_eval_cached(x).unwrap(),
    };
    let g = net.backward(&cache, c).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..net.num_params() {
        let orig = net.params()[i];
        net.params_mut()[i] = orig + h;
        let up = loss(net, x);
        net.params_mut()[i] = orig - h;
        let dn = loss(net, x);
        net.params_mut()[i] = orig;
        worst = worst.max(rel_err(g.params[i], (up - dn) / (2.0 * h)));
    }
    for r in 0..x.nrows() {
        for k in 0..x.ncols() {
            let mut xp = x.clone();
            xp[[r, k]] += h;
            let up = loss(net, &xp);
            xp[[r, k]] -= 2.0 * h;
            let dn = loss(net, &xp);
            worst = worst.max(rel_err(g.input[[r, k]], (up - dn) / (2.0 * h)));
        }
    }
    worst
}

// --- MPC -------------------------------------------------------------------

pub struct Instance {
    pub zone: ZoneParams,
    pub hvac: HvacParams,
    pub params: MpcParams,
    pub t0: f64,
    pub t_out: Vec<f64>,
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let zone = ZoneParams {
        thermal_capacitance: rng.random_range(0.08..0.5),
        envelope_resistance: rng.random_range(8.0..40.0),
        internal_gain_kw: rng.random_range(0.0..0.15),
        desired_temp_c: rng.random_range(23.0..26.0),
        criticality: rng.random_range(0.1..0.9),
    };
    let params = MpcParams {
        horizon: 2,
        w_energy: rng.random_range(0.1..0.9),
        w_comfort: rng.random_range(0.1..0.9),
        ..MpcParams::default()
    };
    Instance {
        zone,
        hvac: HvacParams::default(),
        params,
        t0: rng.random_range(22.0..32.0),
        t_out: (0..2).map(|_| rng.random_range(20.0..38.0)).collect(),
    }
}

/// Straight-line `(E_H, CR/CF)`: Euler zone model at one-minute steps,
/// fan plus chiller energy, comfort factor over the current and predicted
/// temperatures.
pub fn oracle_terms(x: &Instance, mdots: &[f64]) -> (f64, f64) {
    let (z, h, p) = (&x.zone, &x.hvac, &x.params);
    let mut t = x.t0;
    let mut traj = vec![t];
    let mut energy = 0.0;
    for (k, &m) in mdots.iter().enumerate() {
        let t_ret = if h.mixed_return && m > 0.0 { t } else { h.return_temp_c };
        energy += (h.k_fan * m * m + h.cp_air / h.cop * m * (t_ret - h.supply_temp_c)) * p.slot_hours;
        let n = 30;
        let dt = p.slot_hours / n as f64;
        for _ in 0..n {
            t += dt * ((x.t_out[k] - t) / z.envelope_resistance + h.cp_air * m * (h.supply_temp_c - t) + z.internal_gain_kw) / z.thermal_capacitance;
        }
        traj.push(t);
    }
    let cf: f64 = traj.iter().map(|t| 1.0 / (z.desired_temp_c - t).abs().max(p.eps_comfort)).sum();
    (energy, z.criticality / cf)
}

pub fn oracle_objective(x: &Instance, mdots: &[f64]) -> f64 {
    let (e, d) = oracle_terms(x, mdots);
    x.params.w_energy * e + x.params.w_comfort * d
}

/// Minimizer over the 21×21 airflow grid.
pub fn grid_argmin(x: &Instance) -> Vec<f64> {
    let (lo, hi) = (x.hvac.mdot_min, x.hvac.mdot_max);
    let level = |i: usize| lo + (hi - lo) * i as f64 / 20.0;
    let mut best = (f64::INFINITY, vec![]);
    for a in 0..=20 {
        for b in 0..=20 {
            let plan = vec![level(a), level(b)];
            let f = oracle_objective(x, &plan);
            if f < best.0 {
                best = (f, plan);
            }
        }
    }
    best.1
}

pub fn brute_force(x: &Instance) -> f64 {
    oracle_objective(x, &grid_argmin(x))
}

/// Solves an instance with the production solver and returns
/// `(oracle objective of the plan, grid minimum)`.
pub fn solver_vs_grid(x: &Instance) -> (f64, f64) {
    let building = Building::new(vec![x.zone.clone()], x.hvac).unwrap();
    let forecast = Forecast {
        t_out: x.t_out.clone(),
        irradiance: vec![0.0; 2],
        buy_price: vec![0.1; 2],
    };
    let state = BuildingState {
        zone_temps_c: vec![x.t0],
    };
    let sol = solve(&building, None, &state, &MicrogridState::default(), &x.params, &forecast, None, Exec::Sequential).unwrap();
    let plan: Vec<f64> = sol.plan.mdots.iter().map(|r| r[0]).collect();
    assert!(plan.iter().all(|m| (x.hvac.mdot_min..=x.hvac.mdot_max).contains(m)));
    let got = oracle_objective(x, &plan);
    assert!((got - sol.plan.objective_value).abs() < 1e-9 * got.max(1.0), "solver and oracle models disagree");
    (got, brute_force(x))
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
