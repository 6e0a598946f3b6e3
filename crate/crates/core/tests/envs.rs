//! Environment contracts: resets, determinism, clipping, and hand-evaluated
//! slots on both scenario wrappers.

use std::sync::Arc;

use cohvac::data::Dataset;
use cohvac::envs::{combo_reward, comfort_gap, pure_reward, ComboEnv, Environment, InitialConditions, Plant, PureEnv, RewardParams, TimeEncoding};
use cohvac::harness::{self, ExperimentConfig};
use cohvac::microgrid::{Battery, DieselGen, PvPanel};
use cohvac::mpc::MpcParams;
use cohvac::thermal::{Building, HvacParams, ZoneParams};
use cohvac::Exec;
use proptest::prelude::*;

fn data() -> Arc<Dataset> {
    Arc::new(Dataset::bundled(0.5).unwrap())
}

fn plant(n: usize) -> Plant {
    Plant {
        building: Building::new(vec![ZoneParams::default(); n], HvacParams::default()).unwrap(),
        battery: Battery::default(),
        pv: PvPanel::default(),
        diesel: DieselGen::default(),
        p_const_kw: 0.5,
        sell_ratio: 0.3,
        slot_hours: 0.5,
    }
}

fn pure(n: usize) -> PureEnv {
    PureEnv::new(plant(n), data(), RewardParams::default(), InitialConditions::default()).unwrap()
}

fn combo() -> ComboEnv {
    let mpc = MpcParams {
        iters: 20,
        ..MpcParams::default()
    };
    ComboEnv::new(plant(2), data(), RewardParams::default(), mpc, InitialConditions::default(), TimeEncoding::Fraction, Exec::Sequential).unwrap()
}

/// Hottest bundled day by peak outdoor temperature.
fn hot_day(ds: &Dataset) -> usize {
    (0..ds.num_days())
        .max_by(|&a, &b| {
            let peak = |d| ds.day(d, 0).unwrap().t_out.iter().cloned().fold(f64::MIN, f64::max);
            peak(a).total_cmp(&peak(b))
        })
        .unwrap()
}

#[test]
fn reset_is_repeatable_and_shaped() {
    let mut env = pure(3);
    let s0 = env.reset(4).unwrap();
    assert_eq!(s0.len(), 2 + 3 + 2);
    assert_eq!(env.slot().unwrap(), 0);
    env.step(&[0.2, 0.1, 0.1, 0.1]).unwrap();
    assert_eq!(env.reset(4).unwrap(), s0);
    assert_eq!(env.slot().unwrap(), 0);
    assert!(env.reset(10_000).is_err());

    let mut c = combo();
    let s0 = c.reset(4).unwrap();
    assert_eq!(s0.len(), 7);
    assert_eq!(c.reset(4).unwrap(), s0);
}

#[test]
fn stepping_before_reset_is_a_state_error() {
    assert!(matches!(pure(1).step(&[0.0, 0.0]), Err(cohvac::Error::State(_))));
    assert!(matches!(combo().step(&[0.0, 0.5, 0.5]), Err(cohvac::Error::State(_))));
}

#[test]
fn episodes_are_48_slots_and_deterministic() {
    let run = || {
        let mut env = pure(2);
        env.reset(1).unwrap();
        let mut out = Vec::new();
        for k in 0..48 {
            let o = env.step(&[0.3 * ((k % 3) as f64 - 1.0), 0.05, 0.1]).unwrap();
            assert_eq!(o.done, k == 47);
            out.push(o);
        }
        assert!(env.step(&[0.0, 0.0, 0.0]).is_err());
        out
    };
    assert_eq!(run(), run());
}

#[test]
fn clipping_beyond_bounds_changes_nothing() {
    let mut a = pure(2);
    let mut b = pure(2);
    a.reset(2).unwrap();
    b.reset(2).unwrap();
    let max = a.action_bounds().high().to_vec();
    let beyond: Vec<f64> = max.iter().map(|v| v + 7.0).collect();
    assert_eq!(a.step(&max).unwrap(), b.step(&beyond).unwrap());
}

#[test]
fn zero_airflow_on_hot_afternoon_widens_the_gap() {
    let ds = data();
    let day = hot_day(&ds);
    let mut env = PureEnv::new(
        plant(2),
        ds,
        RewardParams::default(),
        InitialConditions {
            zone_temp_c: 27.5,
            ..InitialConditions::default()
        },
    )
    .unwrap();
    let mut s = env.reset(day).unwrap();
    // Morning to mid-afternoon: outdoor air stays above the zones.
    for t in 0..30 {
        let o = env.step(&[0.0, 0.0, 0.0]).unwrap();
        if t >= 18 {
            assert!(o.state[4] >= s[4] - 1e-12, "slot {t}: gap {} -> {}", s[4], o.state[4]);
        }
        s = o.state;
    }
}

#[test]
fn hand_built_pure_slot() {
    let ds = data();
    let mut env = pure(1);
    env.reset(0).unwrap();
    let day = ds.day(0, 1).unwrap();
    let (mdot, p_ess) = (0.1, -0.4);
    let out = env.step(&[p_ess, mdot]).unwrap();

    let z = ZoneParams::default();
    let h = HvacParams::default();
    let p = plant(1);
    let p_hvac = h.k_fan * mdot * mdot + h.cp_air / h.cop * mdot * (h.return_temp_c - h.supply_temp_c);
    let p_solar = p.pv.area_m2 * p.pv.yield_ * p.pv.performance_ratio * day.irradiance[0];
    let p_grid = p_hvac + p.p_const_kw - p_solar + p_ess;
    let v = day.buy_price[0];
    let cost = if p_grid >= 0.0 { p_grid * v * 0.5 } else { p_grid * 0.3 * v * 0.5 };
    let mut t = 27.0;
    for _ in 0..30 {
        t += (1.0 / 60.0) * ((day.t_out[0] - t) / z.envelope_resistance + h.cp_air * mdot * (h.supply_temp_c - t) + z.internal_gain_kw) / z.thermal_capacitance;
    }
    let gap = (23.0 - t).max(0.0) + (t - 27.0).max(0.0);
    let reward = -cost - 0.15 * gap;
    assert!((out.record.p_hvac_kw - p_hvac).abs() < 1e-9);
    assert!((out.record.zone_temps_c[0] - t).abs() < 1e-9);
    assert!((out.record.cost - cost).abs() < 1e-9);
    assert!((out.reward - reward).abs() < 1e-9);
    assert_eq!(out.reward, pure_reward(out.record.cost, comfort_gap(&out.record.zone_temps_c, 23.0, 27.0), 0.15));
}

#[test]
fn pure_state_rotates_with_the_slot() {
    let mut env = pure(3);
    env.reset(0).unwrap();
    // Drive zones apart so rotation is visible.
    let o = env.step(&[0.0, 0.0, 0.15, 0.3]).unwrap();
    let temps = o.record.zone_temps_c.clone();
    // After one step the slot is 1, so zone 2 is in focus: [T3, T1, T2].
    assert_eq!(&o.state[2..5], &[temps[2], temps[0], temps[1]]);
    // The action at rotated position k drives the zone shown there.
    let o2 = env.step(&[0.0, 0.3, 0.0, 0.0]).unwrap();
    assert!(o2.record.mdots[2] > 0.0 && o2.record.mdots[0] == 0.0 && o2.record.mdots[1] == 0.0);
}

#[test]
fn combo_transition_is_deterministic_and_records_weights() {
    let run = || {
        let mut c = combo();
        c.reset(3).unwrap();
        (0..3).map(|_| c.step(&[0.2, 0.4, 0.6]).unwrap()).collect::<Vec<_>>()
    };
    let a = run();
    assert_eq!(a, run());
    assert_eq!(a[0].record.w_comfort, Some(0.6));
    assert_eq!(a[0].state[5], 0.6);
    assert!((0.0..1.0).contains(&a[1].state[6]));
}

#[test]
fn comfort_weight_raises_cooling() {
    let ds = data();
    let day = hot_day(&ds);
    let run = |w_c: f64| {
        let mut c = combo();
        c.reset(day).unwrap();
        let mut airflow = 0.0;
        let mut dev = 0.0;
        for _ in 0..28 {
            let o = c.step(&[0.0, 0.5, w_c]).unwrap();
            airflow += o.record.mdots.iter().sum::<f64>();
            dev += o.record.zone_temps_c.iter().map(|t| (t - 25.0).abs()).sum::<f64>();
        }
        (airflow, dev)
    };
    let (air_hi, dev_hi) = run(0.999);
    let (air_lo, dev_lo) = run(0.001);
    assert!(air_hi > air_lo, "airflow {air_hi} vs {air_lo}");
    assert!(dev_hi <= dev_lo, "deviation {dev_hi} vs {dev_lo}");
}

#[test]
fn combo_reward_hand_values() {
    let p = RewardParams::default();
    let b = Battery {
        capacity_kwh: 1.0,
        ..Battery::default()
    };
    assert!((combo_reward(&p, &b, 0.02, 0.0, 1.0, 0.5) + 0.52).abs() < 1e-9);
    assert!((combo_reward(&p, &b, 0.5, 2.0, 1.0, 0.9) + 2.05).abs() < 1e-9);
    assert!((combo_reward(&p, &b, 0.5, 1.5, 0.2, 0.5) + 0.3).abs() < 1e-9);
}

proptest! {
    #[test]
    fn clip_is_idempotent(a in prop::collection::vec(-5.0f64..5.0, 4)) {
        let b = pure(3).action_bounds();
        let once = b.clip(&a);
        prop_assert_eq!(b.clip(&once), once.clone());
        prop_assert!(once.iter().zip(b.low()).zip(b.high()).all(|((v, l), h)| v >= l && v <= h));
    }

    #[test]
    fn combo_reward_is_continuous_at_weight_edges(soc in 0.2f64..1.8, p_net in -2.0f64..3.0, u in 0.0f64..0.3) {
        let p = RewardParams::default();
        let b = Battery::default();
        for edge in [p.wc_min, p.wc_max] {
            let at = combo_reward(&p, &b, soc, p_net, u, edge);
            for d in [1e-9, -1e-9] {
                prop_assert!((combo_reward(&p, &b, soc, p_net, u, edge + d) - at).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn low_soc_penalty_grows_with_epsilon(soc in 0.0f64..0.1, e1 in 0.0f64..0.5, de in 0.01f64..0.5) {
        let b = Battery::default();
        let r = |e: f64| combo_reward(&RewardParams { penalty_epsilon: e, ..RewardParams::default() }, &b, soc, 0.3, 0.1, 0.5);
        prop_assert!(r(e1 + de) < r(e1));
    }
}

#[test]
fn harness_builds_both_envs_from_config() {
    let cfg = ExperimentConfig::default();
    let ds = cfg.load_dataset().unwrap();
    let c = harness::combo_env(&cfg, ds.clone()).unwrap();
    let p = harness::pure_env(&cfg, ds).unwrap();
    assert_eq!(c.state_dim(), 7);
    assert_eq!(p.state_dim(), cfg.building.n_zones + 4);
    assert_eq!(p.action_bounds().dim(), cfg.building.n_zones + 1);
}
