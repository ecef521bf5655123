use mbp_core::diagnostics::three_node_instance;
use mbp_core::harness::{fluid_requirement, mean_se, ring_city, spp_value};
use mbp_core::simulator::{run_with_travel_times, InitialState, TravelTimes};
use mbp_core::{run, DemandModel, PolicyConfig, PolicyKind, RunConfig};

fn bench() -> (mbp_core::NetworkSpec, DemandModel) {
    let (spec, phi) = three_node_instance(0.05, 1.0).unwrap();
    (spec, DemandModel::stationary(phi))
}

#[test]
fn same_seed_same_run() {
    let (spec, demand) = bench();
    for kind in [PolicyKind::Mbp, PolicyKind::Greedy, PolicyKind::StaticFluid, PolicyKind::Bp] {
        let cfg = RunConfig::new(100, 20_000, 3, PolicyConfig::new(kind));
        let a = run(&spec, &demand, &cfg).unwrap();
        let b = run(&spec, &demand, &cfg).unwrap();
        assert_eq!(a, b, "{kind:?}");
    }
}

#[test]
fn supply_is_conserved() {
    let (spec, demand) = bench();
    for node in 0..3 {
        let mut cfg = RunConfig::new(77, 30_000, node as u64, PolicyConfig::mbp());
        cfg.initial = InitialState::Corner { node };
        let m = run(&spec, &demand, &cfg).unwrap();
        assert_eq!(m.final_state.iter().sum::<usize>(), 77);
        assert!(m.avg_payoff <= spp_value(&spec, &demand.phi_at(0), None).unwrap() + 3.0 * 77.0 / 30_000.0);
    }
}

#[test]
fn zero_travel_times_match_instant_relocation() {
    let (spec, demand) = bench();
    let zero = TravelTimes::zero(3);
    for kind in [PolicyKind::Mbp, PolicyKind::Greedy] {
        let cfg = RunConfig::new(60, 10_000, 9, PolicyConfig::new(kind));
        let a = run(&spec, &demand, &cfg).unwrap();
        let b = run_with_travel_times(&spec, &demand, &cfg, &zero).unwrap();
        assert_eq!(a.total_payoff.to_bits(), b.total_payoff.to_bits(), "{kind:?}");
        assert_eq!(a.final_state, b.final_state);
        assert_eq!(b.max_in_transit, Some(0));
    }
}

#[test]
fn supply_aware_mbp_near_fluid_benchmark() {
    let (spec, phi, travel) = ring_city(5, 1000).unwrap();
    let k = (1.05 * fluid_requirement(&spec, &phi, &travel).unwrap()).ceil() as usize;
    let w = spp_value(&spec, &phi, None).unwrap();
    let demand = DemandModel::stationary(phi);
    let vals: Vec<f64> = (0..3)
        .map(|r| {
            let cfg = RunConfig::new(k, 50 * k, r, PolicyConfig::new(PolicyKind::SupplyAwareMbp));
            run_with_travel_times(&spec, &demand, &cfg, &travel).unwrap().avg_payoff
        })
        .collect();
    let (mean, _) = mean_se(&vals);
    assert!(mean >= 0.9 * w, "W_T / W = {}", mean / w);
}

#[test]
fn greedy_stays_far_from_benchmark() {
    let (spec, demand) = bench();
    let m = run(&spec, &demand, &RunConfig::new(200, 400_000, 1, PolicyConfig::new(PolicyKind::Greedy))).unwrap();
    assert!(m.avg_payoff < 0.5 * 0.475);
}
