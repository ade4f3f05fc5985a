use std::cell::RefCell;
use std::rc::Rc;

use hxsim::chip::{regmap, Chip, ChipConfig};
use hxsim::executor::{
    execute, parse_program, ExecError, Executor, Instruction, Payload, PlaybackProgram, TraceKind,
};
use hxsim::neuron::NeuronParams;
use hxsim::ppu::{PlasticityContext, Ppu, PpuError};
use hxsim::stpdriver::EventIfWord;
use proptest::prelude::*;
use rand::Rng;

fn lif_chip(i_peak: f64) -> Chip {
    let neuron = NeuronParams {
        a: 0.0,
        b: 0.0,
        delta_t: 0.0,
        ..NeuronParams::default()
    };
    let mut cfg = ChipConfig {
        neuron,
        ..ChipConfig::default()
    };
    cfg.synapse.i_unit = i_peak / 63.0;
    let mut chip = Chip::new(cfg).unwrap();
    for d in chip.drivers_mut() {
        d.enabled_stp = false;
    }
    chip.array_mut().set_address(0, 3, 5).unwrap();
    chip.array_mut().set_weight(0, 3, 63).unwrap();
    for c in 0..16 {
        if c != 3 {
            chip.array_mut().set_address(0, c, 1).unwrap();
        }
    }
    chip
}

/// First threshold crossing of a leaky membrane driven by a continuous
/// exponentially decaying current that starts at `t0`.
fn analytic_crossing(p: &NeuronParams, i0: f64, tau_s: f64, t0: f64) -> f64 {
    let tau_m = p.c / p.g_l;
    let v = |s: f64| {
        let k = i0 / p.c / (1.0 / tau_s - 1.0 / tau_m);
        p.e_l + k * ((-s / tau_m).exp() - (-s / tau_s).exp())
    };
    let (mut lo, mut hi) = (0.0, 0.0);
    while v(hi) < p.v_th {
        lo = hi;
        hi += 1e-6;
        assert!(hi < 0.1, "never crosses");
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if v(mid) < p.v_th {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    t0 + hi
}

#[test]
fn single_path_spike_time_matches_analytic_prediction() {
    let i_peak = 10e-9;
    let mut chip = lif_chip(i_peak);
    let cfg = *chip.config();
    let program = parse_program("@100 SPIKE 5 0\n@2000 HALT\n").unwrap();
    let trace = execute(&program, &mut chip, 0).unwrap();
    let first = trace
        .of_kind(TraceKind::SpikeOut)
        .next()
        .expect("neuron fires");
    assert_eq!(first.payload, Payload::Spike { neuron: 3 });
    let predicted = analytic_crossing(&cfg.neuron, i_peak, cfg.tau_syn, 102e-6);
    let got = first.timestamp_ns as f64 * 1e-9;
    assert!(
        (got - predicted).abs() <= cfg.dt,
        "got {got}, predicted {predicted}"
    );
    assert!(trace
        .of_kind(TraceKind::SpikeOut)
        .all(|e| e.payload == Payload::Spike { neuron: 3 }));
}

#[test]
fn wait_and_halt_only_produce_no_entries() {
    let mut chip = lif_chip(1e-9);
    let p = parse_program("@0 WAIT_UNTIL\n@50 WAIT_UNTIL\n@100 HALT").unwrap();
    let trace = execute(&p, &mut chip, 1).unwrap();
    assert!(trace.entries.is_empty());
    assert_eq!(trace.stats.instructions, 3);
    assert_eq!(trace.stats.end_time_ns, 100_000);
}

#[test]
fn missing_halt_is_an_error() {
    let mut chip = lif_chip(1e-9);
    let p = parse_program("@0 WAIT_UNTIL").unwrap();
    assert!(matches!(
        execute(&p, &mut chip, 0),
        Err(ExecError::MissingHalt)
    ));
}

#[test]
fn unmapped_register_logs_error_and_continues() {
    let mut chip = lif_chip(1e-9);
    let p = parse_program(
        "@0 READ 0xdeadbeef\n@1 WRITE 0x100 42\n@2 READ 0x100\n@3 CADC_SAMPLE 99\n@10 HALT",
    )
    .unwrap();
    let trace = execute(&p, &mut chip, 0).unwrap();
    let kinds: Vec<_> = trace
        .entries
        .iter()
        .map(|e| (e.timestamp_ns, e.kind))
        .collect();
    assert_eq!(
        kinds,
        vec![
            (0, TraceKind::Error),
            (3_000, TraceKind::Error),
            (3_000, TraceKind::ReadResponse)
        ]
    );
    assert_eq!(
        trace.entries[2].payload,
        Payload::Register {
            address: 0x100,
            value: 42
        }
    );
    assert_eq!(trace.stats.errors, 2);
    let d = chip.drivers()[0];
    assert_eq!((d.row_select, d.select_mask), (0b01010, 0b00001));
}

#[test]
fn cadc_sample_reports_codes_after_latency() {
    let mut chip = lif_chip(10e-9);
    let p = parse_program("@100 SPIKE 5 0\n@600 CADC_SAMPLE 0\n@700 HALT").unwrap();
    let trace = execute(&p, &mut chip, 0).unwrap();
    let cadc = trace.of_kind(TraceKind::CadcData).next().unwrap();
    assert_eq!(cadc.timestamp_ns, 601_000);
    let Payload::Cadc { row, codes } = &cadc.payload else {
        panic!("wrong payload")
    };
    assert_eq!(*row, 0);
    assert!(codes[3] > 0);
    assert!(codes.iter().enumerate().all(|(c, &v)| c == 3 || v == 0));
}

fn noisy_kernel_program() -> PlaybackProgram {
    let mut text = String::from("@0 WRITE 0x10003 40\n");
    for k in 0..20 {
        text += &format!("@{} SPIKE 5 0\n", 50 + 97 * k);
    }
    text += "@2500 READ 0x3\n@2600 HALT\n";
    parse_program(&text).unwrap()
}

fn run_with_random_kernel(seed: u64) -> hxsim::executor::Trace {
    let mut chip = lif_chip(3e-9);
    let mut kernel = |ctx: &mut PlasticityContext<'_>| -> Result<(), PpuError> {
        let w = ctx.rng().random_range(20..64u8);
        let mut row = ctx.read_weights(0)?;
        row[3] = w;
        ctx.write_weights(0, &row)
    };
    let mut ppu = Ppu::new();
    ppu.schedule(&mut kernel, 200e-6).unwrap();
    Executor::default()
        .execute(&noisy_kernel_program(), &mut chip, &mut ppu, seed)
        .unwrap()
}

#[test]
fn identical_inputs_give_bit_identical_traces() {
    let a = run_with_random_kernel(7);
    let b = run_with_random_kernel(7);
    assert_eq!(a, b);
    assert_eq!(a.to_csv(), b.to_csv());
    assert!(a.stats.spikes_out > 0);
}

#[test]
fn rerunning_on_same_chip_is_reproducible() {
    let mut chip = lif_chip(10e-9);
    let p = parse_program("@100 SPIKE 5 0\n@300 SPIKE 5 0\n@1000 HALT").unwrap();
    let a = execute(&p, &mut chip, 0).unwrap();
    let b = execute(&p, &mut chip, 0).unwrap();
    assert_eq!(a, b);
}

#[test]
fn kernel_period_counting() {
    let mut chip = lif_chip(1e-9);
    let calls = Rc::new(RefCell::new(Vec::new()));
    let log = calls.clone();
    let mut k = move |ctx: &mut PlasticityContext<'_>| -> Result<(), PpuError> {
        log.borrow_mut().push(ctx.time());
        Ok(())
    };
    let mut ppu = Ppu::new();
    let reg = ppu.schedule(&mut k, 1000e-6).unwrap();
    let p = parse_program("@10000 HALT").unwrap();
    let trace = Executor::default()
        .execute(&p, &mut chip, &mut ppu, 0)
        .unwrap();
    assert_eq!(ppu.invocations(reg), 10);
    assert_eq!(trace.stats.kernel_invocations, 10);
    let times = calls.borrow();
    assert_eq!(times.len(), 10);
    assert!((times[9] - 10e-3).abs() < 1e-12);
}

#[test]
fn kernels_sharing_a_tick_run_in_registration_order() {
    let mut chip = lif_chip(1e-9);
    let order = Rc::new(RefCell::new(Vec::new()));
    let (l1, l2) = (order.clone(), order.clone());
    let mut first = move |_: &mut PlasticityContext<'_>| -> Result<(), PpuError> {
        l1.borrow_mut().push('a');
        Ok(())
    };
    let mut second = move |_: &mut PlasticityContext<'_>| -> Result<(), PpuError> {
        l2.borrow_mut().push('b');
        Ok(())
    };
    let mut ppu = Ppu::new();
    ppu.schedule(&mut first, 100e-6).unwrap();
    ppu.schedule(&mut second, 100e-6).unwrap();
    Executor::default()
        .execute(&parse_program("@500 HALT").unwrap(), &mut chip, &mut ppu, 0)
        .unwrap();
    assert_eq!(order.borrow().iter().collect::<String>(), "ababababab");
}

#[test]
fn read_only_kernel_leaves_chip_untouched() {
    let p = noisy_kernel_program();
    let mut plain = lif_chip(3e-9);
    let reference = execute(&p, &mut plain, 0).unwrap();

    let mut chip = lif_chip(3e-9);
    let seen = Rc::new(RefCell::new(0u64));
    let s = seen.clone();
    let mut reader = move |ctx: &mut PlasticityContext<'_>| -> Result<(), PpuError> {
        *s.borrow_mut() += ctx.spike_counts().iter().sum::<u64>();
        ctx.read_weights(0)?;
        Ok(())
    };
    let mut ppu = Ppu::new();
    ppu.schedule(&mut reader, 100e-6).unwrap();
    let trace = Executor::default()
        .execute(&p, &mut chip, &mut ppu, 0)
        .unwrap();
    assert_eq!(trace.entries, reference.entries);
    assert_eq!(chip.array(), plain.array());
    assert_eq!(chip.neurons(), plain.neurons());
    assert!(*seen.borrow() > 0);
}

#[test]
fn trace_round_trips_through_register_writes() {
    let mut chip = lif_chip(1e-9);
    let addr = regmap::SYNAPSE_WEIGHT + 0x100 * 2 + 7;
    let p = parse_program(&format!(
        "@0 WRITE {addr:#x} 17\n@1 READ {addr:#x}\n@5 HALT"
    ))
    .unwrap();
    let trace = execute(&p, &mut chip, 0).unwrap();
    assert_eq!(
        trace.entries[0].payload,
        Payload::Register {
            address: addr,
            value: 17
        }
    );
    assert_eq!(
        trace.to_csv().lines().nth(1).unwrap(),
        "2000,read_response,0001020700000011"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conservation_and_monotone_trace(
        spikes in proptest::collection::vec((0u64..3_000_000, 0u8..64, 0u8..32), 0..60),
        masks in proptest::collection::vec(0u8..32, 32),
    ) {
        let mut chip = lif_chip(2e-9);
        for (d, m) in chip.drivers_mut().iter_mut().zip(&masks) {
            d.select_mask = *m;
        }
        let mut times: Vec<_> = spikes.clone();
        times.sort_by_key(|s| s.0);
        let mut p = PlaybackProgram::new();
        for (t, a, s) in &times {
            p.push(*t, Instruction::Spike(EventIfWord::new(*a, *s).unwrap())).unwrap();
        }
        p.push(3_500_000, Instruction::Halt).unwrap();
        let trace = execute(&p, &mut chip, 0).unwrap();
        let st = trace.stats;
        prop_assert_eq!(st.spikes_injected, times.len() as u64);
        prop_assert_eq!(st.bus_events, times.len() as u64);
        prop_assert_eq!(st.driver_matches, st.deliveries);
        let expected_matches: u64 = times
            .iter()
            .map(|(_, _, s)| chip.drivers().iter().filter(|d| d.match_select(&EventIfWord::new(0, *s).unwrap())).count() as u64)
            .sum();
        prop_assert_eq!(st.deliveries, expected_matches);
        prop_assert!(trace.entries.windows(2).all(|w| w[0].timestamp_ns <= w[1].timestamp_ns));
        let first_spike = times.first().map(|s| s.0).unwrap_or(u64::MAX);
        prop_assert!(trace.of_kind(TraceKind::SpikeOut).all(|e| e.timestamp_ns > first_spike));
    }
}
