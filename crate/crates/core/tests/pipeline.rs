//! File round trips feeding the index computations.

mod common;

use secidx::data_index::DataIndexer;
use secidx::hankel::build_blocks;
use secidx::io::{load_system, load_trajectory, save_system, save_trajectory, Column, Report, ReportMeta};
use secidx::{Error, IndexValue};

use common::platoon;

#[test]
fn saved_data_reproduces_the_index() {
    let case = platoon(3, 3, 120, 4);
    let dir = tempfile::tempdir().unwrap();
    let (sys_path, data_path) = (dir.path().join("sys.json"), dir.path().join("data.csv"));
    save_system(&case.sys, 0, &sys_path).unwrap();
    save_trajectory(&case.excitation.trajectory, &data_path).unwrap();

    let (sys, layout) = load_system(&sys_path).unwrap();
    assert_eq!(sys.a(), case.sys.a());
    assert_eq!(layout, case.layout);
    let traj = load_trajectory(&data_path).unwrap();
    assert_eq!(traj.u, case.excitation.trajectory.u);
    assert_eq!(traj.y, case.excitation.trajectory.y);

    let blocks = build_blocks(&traj, case.l, &layout).unwrap();
    let fresh = DataIndexer::new(&blocks).unwrap();
    let original = DataIndexer::new(&case.blocks).unwrap();
    for i in layout.components() {
        let a = fresh.rho(i, None).unwrap();
        let b = original.rho(i, None).unwrap();
        assert_eq!((a.value, a.witness_set), (b.value, b.witness_set));
    }
}

#[test]
fn report_round_trips_and_tabulates() {
    let case = platoon(2, 2, 60, 1);
    let idx = DataIndexer::new(&case.blocks).unwrap();
    let meta = ReportMeta {
        n_samples: 60,
        l: 2,
        d: case.blocks.d,
        version: "test".into(),
        ..Default::default()
    };
    let mut report = Report::for_layout(&case.layout, meta);
    for i in case.layout.components() {
        report.set(&case.layout, Column::Rho, &idx.rho(i, None).unwrap());
    }
    let capped = idx.rho(0, Some(1)).unwrap();
    report.set(&case.layout, Column::RhoUpper, &capped);

    let back = Report::from_json(&report.to_json().unwrap()).unwrap();
    assert_eq!(back, report);
    assert_eq!(back.components[0].rho_upper, Some(IndexValue::Exceeds(1)));

    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("component,delta,rho,rho_upper"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[0], "u_1");
    assert_eq!(first[1], "");
    assert_eq!(first[3], ">1");
    assert_eq!(text.lines().count(), 1 + case.layout.len());

    let mut fig = Vec::new();
    report.write_index_figure(&mut fig).unwrap();
    let fig = String::from_utf8(fig).unwrap();
    assert_eq!(fig.lines().count(), 1 + case.layout.len() + 1);
}

#[test]
fn malformed_inputs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "k,u1,y1\n0,1.0\n").unwrap();
    assert!(load_trajectory(&bad).is_err());
    std::fs::write(&bad, "k,u1,y1\n1,1.0,2.0\n").unwrap();
    assert!(load_trajectory(&bad).is_err());

    let sys = dir.path().join("sys.json");
    std::fs::write(&sys, r#"{"A": [[1.0, 0.0]], "B": [[1.0]], "C": [[1.0]]}"#).unwrap();
    assert!(load_system(&sys).is_err());
    std::fs::write(&sys, r#"{"A": [[0.5]], "B": [[1.0]], "C": [[1.0]], "nu": 2}"#).unwrap();
    assert!(load_system(&sys).is_err());
    assert!(matches!(load_system(dir.path().join("missing.json")), Err(Error::Io(_))));
}
