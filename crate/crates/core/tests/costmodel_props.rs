use pasm::accelsim::AccelConfig;
use pasm::costmodel::{
    calibrate, config_gates, config_pairs, read_cost_csv, read_pair_csv, sweep, unit_gates, write_cost_csv,
    write_pair_csv, CostUnit, GateConstants, Observation,
};
use proptest::prelude::*;

fn k() -> GateConstants {
    GateConstants::default()
}

fn total(cfg: AccelConfig) -> f64 {
    config_gates(&cfg, &k()).unwrap().gates_total
}

fn constants() -> impl Strategy<Value = GateConstants> {
    (0.5f64..20.0, 0.5f64..20.0, 0.5f64..20.0, 0.1f64..5.0).prop_map(|(a, m, r, p)| GateConstants {
        adder_per_bit: a,
        mult_per_bit_sq: m,
        register_per_bit: r,
        regfile_port_per_bit_entry: p,
    })
}

proptest! {
    #[test]
    fn multiplier_quadruples_and_adder_doubles(w in 2u32..2048, c in constants()) {
        let one = unit_gates(CostUnit::SimpleMac, w, 16, &c).unwrap();
        let two = unit_gates(CostUnit::SimpleMac, 2 * w, 16, &c).unwrap();
        prop_assert_eq!(two.gates_mult / one.gates_mult, 4.0);
        prop_assert_eq!(two.gates_adder / one.gates_adder, 2.0);
    }

    #[test]
    fn pas_is_linear_in_b(w in 2u32..256, wci in 1u32..10, c in constants()) {
        let g = |b: usize| unit_gates(CostUnit::Pas, w, b, &c).unwrap().gates_total;
        let b = 1usize << wci;
        // b must stay a power of two, so compare slopes on b, 2b, 4b
        let (g1, g2, g4) = (g(b), g(2 * b), g(4 * b));
        let slope_lo = (g2 - g1) / b as f64;
        let slope_hi = (g4 - g2) / (2 * b) as f64;
        prop_assert!((slope_lo - slope_hi).abs() <= 1e-9 * slope_lo.abs());
        prop_assert_eq!(unit_gates(CostUnit::Pas, w, b, &c).unwrap().gates_mult, 0.0);
    }

    #[test]
    fn totals_are_sums_of_parts(w in 2u32..128, wci in 1u32..12, c in constants()) {
        let b = 1usize << wci;
        let mut reports: Vec<_> = [CostUnit::SimpleMac, CostUnit::WsMac, CostUnit::Pas]
            .into_iter()
            .map(|u| unit_gates(u, w, b, &c).unwrap())
            .collect();
        reports.push(config_gates(&AccelConfig::mac16(b, w), &c).unwrap());
        reports.push(config_gates(&AccelConfig::pas16_mac4(b, w), &c).unwrap());
        for r in &reports {
            let parts = r.gates_adder + r.gates_mult + r.gates_register + r.gates_regfile_port;
            prop_assert!((r.gates_total - parts).abs() <= 1e-9 * parts);
            prop_assert!(r.gates_total > 0.0);
        }
        let ws = &reports[1];
        let simple = &reports[0];
        prop_assert!((ws.gates_register - simple.gates_register - (b as f64 - 1.0) * w as f64 * c.register_per_bit).abs() < 1e-6 * ws.gates_register);
    }

    #[test]
    fn calibration_recovers_any_constants(c in constants()) {
        let mut obs = Vec::new();
        for w in [4u32, 8, 16, 32] {
            for b in [4usize, 16, 64, 256] {
                for u in [CostUnit::SimpleMac, CostUnit::WsMac, CostUnit::Pas] {
                    let gates = unit_gates(u.clone(), w, b, &c).unwrap().gates_total;
                    obs.push(Observation::Unit { unit: u, w, b, gates });
                }
            }
        }
        let fit = calibrate(&obs).unwrap();
        prop_assert!((fit.adder_per_bit - c.adder_per_bit).abs() < 1e-6);
        prop_assert!((fit.mult_per_bit_sq - c.mult_per_bit_sq).abs() < 1e-6);
        prop_assert!((fit.register_per_bit - c.register_per_bit).abs() < 1e-6);
        prop_assert!((fit.regfile_port_per_bit_entry - c.regfile_port_per_bit_entry).abs() < 1e-6);
    }

    #[test]
    fn csv_outputs_round_trip(ws in proptest::collection::vec(2u32..64, 1..4), wcis in proptest::collection::vec(1u32..12, 1..4)) {
        let bs: Vec<usize> = wcis.iter().map(|&i| 1usize << i).collect();
        let rows: Vec<_> = sweep(&ws, &bs, &k()).unwrap().iter().map(|r| r.row()).collect();
        let mut buf = Vec::new();
        write_cost_csv(&rows, &mut buf).unwrap();
        prop_assert_eq!(read_cost_csv(&buf[..]).unwrap(), rows);
        let points: Vec<_> = ws.iter().flat_map(|&w| bs.iter().map(move |&b| (w, b))).collect();
        let pairs = config_pairs(&points, &k()).unwrap();
        let mut buf = Vec::new();
        write_pair_csv(&pairs, &mut buf).unwrap();
        prop_assert_eq!(read_pair_csv(&buf[..]).unwrap(), pairs);
    }
}

#[test]
fn pasm_wins_at_16_bins_and_loses_past_crossover() {
    assert!(total(AccelConfig::pas16_mac4(16, 32)) < total(AccelConfig::mac16(16, 32)));
    let bins: Vec<usize> = (1..=12).map(|i| 1usize << i).collect();
    let losing: Vec<bool> = bins
        .iter()
        .map(|&b| total(AccelConfig::pas16_mac4(b, 32)) > total(AccelConfig::mac16(b, 32)))
        .collect();
    let first = losing.iter().position(|&l| l).expect("a crossover below 4096");
    assert!(losing[first..].iter().all(|&l| l));
    assert!(losing[..first].iter().all(|&l| !l));
}

#[test]
fn registers_cost_more_under_pasm_at_256_bins() {
    let pasm = config_gates(&AccelConfig::pas16_mac4(256, 32), &k()).unwrap();
    let mac = config_gates(&AccelConfig::mac16(256, 32), &k()).unwrap();
    assert!(pasm.gates_register > mac.gates_register);
}

#[test]
fn smallest_sweep_point_and_singletons() {
    for cfg in [AccelConfig::mac16(4, 4), AccelConfig::pas16_mac4(4, 4)] {
        assert!(total(cfg) > 0.0);
    }
    let one = sweep(&[8], &[16], &k()).unwrap();
    assert!(one.contains(&unit_gates(CostUnit::WsMac, 8, 16, &k()).unwrap()));
    assert!(unit_gates(CostUnit::Pas, 8, 3, &k()).is_err());
    assert!(unit_gates(CostUnit::Pas, 8, 8192, &k()).is_err());
    assert!(unit_gates(CostUnit::Pas, 1, 4, &k()).is_err());
}
