mod common;

use ono_sim::{compare, load_inputs, render_table, run_with_inputs, Seeds, SimError, TechniqueSpec};

fn summary(seed: u64) -> ono_core::metrics::Summary {
    let mut cfg = common::small();
    cfg.seed = seed;
    cfg.techniques.retain(|t| matches!(t, TechniqueSpec::Oracle | TechniqueSpec::Uniform));
    let mut seeds = Seeds::new(cfg.seed);
    let inputs = load_inputs(&cfg, seeds.trace).unwrap();
    run_with_inputs(&cfg, &inputs, &mut seeds).unwrap().summary
}

#[test]
fn single_report_flags_the_oracle() {
    let c = compare(&[("a".into(), summary(7))]).unwrap();
    assert_eq!(c.columns, ["oracle", "uniform"]);
    let cost = c.rows.iter().find(|r| r.scope == "overall" && r.metric == "average_cost").unwrap();
    assert_eq!(cost.best, [true, false]);
    // one overall block plus one per test day
    assert_eq!(c.rows.len(), 4 * (1 + 7));
    let table = render_table(&c);
    assert!(table.lines().count() == c.rows.len() + 1);
    assert!(table.contains('*'));
}

#[test]
fn identical_reports_tie_everywhere() {
    let s = summary(7);
    let c = compare(&[("a".into(), s.clone()), ("b".into(), s)]).unwrap();
    assert_eq!(c.columns, ["a/oracle", "a/uniform", "b/oracle", "b/uniform"]);
    for r in &c.rows {
        assert_eq!(r.values[0], r.values[2]);
        assert_eq!(r.best[0], r.best[2]);
        assert_eq!(r.best[1], r.best[3]);
        assert!(r.best.iter().any(|b| *b));
    }
}

#[test]
fn reports_on_different_traces_are_refused() {
    let e = compare(&[("a".into(), summary(7)), ("b".into(), summary(8))]).unwrap_err();
    assert!(matches!(e, SimError::DigestMismatch(..)));
    assert_eq!(e.exit_code(), 2);
    assert!(compare(&[]).is_err());
}
