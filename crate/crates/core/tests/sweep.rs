use guard_core::model::{NodeId, GPUS_PER_NODE};
use guard_core::rng::{stream, Stream};
use guard_core::sim::{NodeProfile, StepModel};
use guard_core::sweep::{judge_sweep, run_single_node_sweep, run_sweep, Component, SweepConfig};
use proptest::prelude::*;

fn n(id: &str) -> NodeId {
    NodeId::new(id).unwrap()
}

/// Degradation knobs; each one only ever makes a node worse as it grows.
#[derive(Clone, Debug)]
struct Knobs {
    temp: [f64; GPUS_PER_NODE],
    cpu: f64,
    power: f64,
    link: f64,
    slowdown: f64,
    nic: bool,
}

fn knobs() -> impl Strategy<Value = Knobs> {
    (
        proptest::array::uniform8(40.0..90.0f64),
        1.0..1.4f64,
        0.0..0.3f64,
        0.2..1.0f64,
        1.0..1.5f64,
        any::<bool>(),
    )
        .prop_map(|(temp, cpu, power, link, slowdown, nic)| Knobs {
            temp,
            cpu,
            power,
            link,
            slowdown,
            nic,
        })
}

fn profile(k: &Knobs) -> NodeProfile {
    let mut p = NodeProfile::healthy(n("suspect"), 55.0);
    p.steady_temp_c = k.temp;
    p.cpu_slowdown_factor = k.cpu;
    p.power_anomaly = (k.power > 0.0).then_some(k.power);
    if k.link < 1.0 {
        p.nvlink_degrade.push(((2, 5), k.link));
    }
    p.gpu_slowdown[6] = k.slowdown;
    p.nic_failover = k.nic.then_some((0, 1));
    p
}

fn worse(k: &Knobs, by: &Knobs) -> Knobs {
    let mut temp = k.temp;
    for (t, d) in temp.iter_mut().zip(by.temp) {
        *t = (*t + (d - 40.0) / 5.0).min(95.0);
    }
    Knobs {
        temp,
        cpu: k.cpu + (by.cpu - 1.0),
        power: (k.power + by.power).min(0.9),
        link: k.link * by.link,
        slowdown: k.slowdown * by.slowdown,
        nic: k.nic || by.nic,
    }
}

proptest! {
    #[test]
    fn pass_means_no_failing_components(k in knobs(), seed in any::<u64>()) {
        let reference = NodeProfile::healthy(n("ref"), 55.0);
        let out = run_sweep(&profile(&k), &[&reference], &StepModel::default(), &SweepConfig::default(), &mut stream(seed, Stream::Sweep)).unwrap();
        prop_assert_eq!(out.verdict.passed, out.verdict.failing_components.is_empty());
    }

    #[test]
    fn worse_hardware_never_turns_a_fail_into_a_pass(k in knobs(), by in knobs(), seed in any::<u64>()) {
        let cfg = SweepConfig::default();
        let step = StepModel::default();
        let reference = NodeProfile::healthy(n("ref"), 55.0);
        let a = run_sweep(&profile(&k), &[&reference], &step, &cfg, &mut stream(seed, Stream::Sweep)).unwrap();
        let b = run_sweep(&profile(&worse(&k, &by)), &[&reference], &step, &cfg, &mut stream(seed, Stream::Sweep)).unwrap();
        if !a.verdict.passed {
            prop_assert!(!b.verdict.passed);
        }
        // Localized failures persist too.
        for c in &a.verdict.failing_components {
            if *c != Component::Unlocalized {
                prop_assert!(b.verdict.failing_components.contains(c), "{c} lost");
            }
        }
    }
}

#[test]
fn healthy_pairs_pass() {
    let cfg = SweepConfig::default();
    let step = StepModel::default();
    let mut rng = stream(11, Stream::Sweep);
    let mut passed = 0;
    for i in 0..1000 {
        let temp = 45.0 + (i % 15) as f64;
        let suspect = NodeProfile::healthy(n("a"), temp);
        let reference = NodeProfile::healthy(n("b"), 55.0);
        let out = run_sweep(&suspect, &[&reference], &step, &cfg, &mut rng).unwrap();
        passed += out.verdict.passed as usize;
    }
    assert!(passed >= 990, "{passed}/1000");
}

#[test]
fn degraded_link_is_measured_and_localized() {
    let cfg = SweepConfig::default();
    let mut p = NodeProfile::healthy(n("a"), 55.0);
    p.nvlink_degrade.push(((2, 5), 0.5));
    let report = run_single_node_sweep(&p, &cfg, true, &mut stream(3, Stream::Sweep));
    let m = report.nvlink_bandwidth.unwrap();
    assert!((m[2][5] - 0.5).abs() < 0.02, "{}", m[2][5]);
    assert_eq!(m[2][5], m[5][2]);
    let verdict = judge_sweep(&report, None, &cfg);
    assert_eq!(
        verdict.failing_components.into_iter().collect::<Vec<_>>(),
        vec![Component::NvLink(2, 5)]
    );
}

#[test]
fn missing_reference_is_an_error() {
    let p = NodeProfile::healthy(n("a"), 55.0);
    let r = run_sweep(
        &p,
        &[],
        &StepModel::default(),
        &SweepConfig::default(),
        &mut stream(0, Stream::Sweep),
    );
    assert!(r.is_err());
}
