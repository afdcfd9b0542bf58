use std::path::{Path, PathBuf};

use energy_internet::scenario::{emit_report, run_scenario, Scenario, ScenarioError, REPORT_FILES};

fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name).join("scenario.toml");
    Scenario::load(&path).unwrap()
}

fn read_all(dir: &Path) -> Vec<Vec<u8>> {
    REPORT_FILES.iter().map(|f| std::fs::read(dir.join(f)).unwrap()).collect()
}

#[test]
fn same_seed_gives_byte_identical_reports() {
    let s = scenario("reconstruction-4node");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    emit_report(&run_scenario(&s).unwrap(), a.path()).unwrap();
    emit_report(&run_scenario(&s).unwrap(), b.path()).unwrap();
    assert_eq!(read_all(a.path()), read_all(b.path()));
}

#[test]
fn per_period_files_have_twelve_rows_and_summary_is_signed() {
    let dir = tempfile::tempdir().unwrap();
    emit_report(&run_scenario(&scenario("reconstruction-4node")).unwrap(), dir.path()).unwrap();
    for f in ["welfare.csv", "carbon.csv", "dispatch_by_period.csv"] {
        let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert_eq!(text.lines().count(), 13, "{f}");
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    for prefix in ["social welfare:", "carbon emission:", "grid surplus:"] {
        let line = summary.lines().find(|l| l.starts_with(prefix)).unwrap();
        assert!(line.contains("(+") || line.contains("(-"), "{line}");
    }
    assert!(summary.contains("curtailment:"));
    assert!(summary.contains("rural-battery:"));
}

#[test]
fn traditional_mode_never_touches_the_network() {
    let r = run_scenario(&scenario("reconstruction-4node")).unwrap();
    assert_eq!(r.traditional.frames_emitted, 0);
    assert_eq!(r.traditional.settled_wh(), 0);
    assert!(r.traditional.service_fee.is_none());
    assert!(r.energy_internet.frames_emitted > 0);
}

#[test]
fn pool_ledger_and_stack_agree() {
    let r = run_scenario(&scenario("reconstruction-4node")).unwrap();
    let e = &r.energy_internet;
    assert!(e.settled_wh() > 0);
    assert_eq!(e.ledger_settled_wh, e.settled_wh());
}

#[test]
fn partitions_sum_to_welfare() {
    let r = run_scenario(&scenario("reconstruction-4node")).unwrap();
    for m in [&r.traditional, &r.energy_internet] {
        let w = m.welfare();
        assert!((m.partition_total() - w).abs() < 1e-6 * (1.0 + w.abs()), "{:?}", m.mode);
        for p in &m.periods {
            assert!(p.solution.balance_residual_kw().abs() < 1e-3);
        }
    }
}

#[test]
fn energy_internet_welfare_dominates_for_any_seed() {
    for seed in [0, 1, 7, 1234, u64::MAX] {
        let r = run_scenario(&scenario("reconstruction-4node").with_seed(seed)).unwrap();
        let (t, e) = (&r.traditional, &r.energy_internet);
        assert!(e.welfare() >= t.welfare() - 1e-6, "seed {seed}");
        assert!(e.carbon_t() < t.carbon_t(), "seed {seed}");
        assert!(e.grid_surplus() >= 0.0 && e.grid_surplus() < t.grid_surplus(), "seed {seed}");
        for (name, d) in r.profit_deltas() {
            if !name.ends_with("-load") {
                assert!(d > 0.0, "seed {seed}: {name} {d}");
            }
        }
    }
}

#[test]
fn nothing_to_trade_leaves_modes_identical() {
    let r = run_scenario(&scenario("two-plant-test")).unwrap();
    let (t, e) = (&r.traditional, &r.energy_internet);
    assert_eq!(e.settled_wh(), 0);
    assert_eq!(e.frames_emitted, 0);
    for (a, b) in t.periods.iter().zip(&e.periods) {
        assert_eq!(a.solution, b.solution);
    }
    assert!((t.welfare() - e.welfare()).abs() < 1e-9);
    assert!((t.grid_surplus() - e.grid_surplus()).abs() < 1e-9);
    let p = &t.periods[0].solution;
    assert_eq!(format!("{:.2} {:.2} {:.4}", p.plant_kw[0], p.plant_kw[1], p.lmp[0]), "230.77 769.23 0.7346");
}

#[test]
fn missing_grid_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scenario.toml");
    std::fs::write(&path, "name = \"x\"\ngrid = \"nowhere.toml\"\ntopology = \"t.toml\"\n").unwrap();
    match Scenario::load(&path) {
        Err(ScenarioError::Io { path, source }) => {
            assert!(path.ends_with("nowhere.toml"));
            assert_eq!(source.kind(), std::io::ErrorKind::NotFound);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn roster_must_cover_the_grid() {
    let mut s = scenario("reconstruction-4node");
    s.roster.retain(|r| r.name != "urban-ev");
    assert!(matches!(s.validate(), Err(ScenarioError::Config(m)) if m.contains("urban-ev")));
}
