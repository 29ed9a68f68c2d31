use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use areal_traffic::fd::FdParams;
use areal_traffic::io;
use areal_traffic::units::{density, to_density_display, to_kmh};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn areal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_areal"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn variables_of_three_vehicle_fixture() {
    let (traj, cats) = (fixture("three_vehicles.csv"), fixture("categories.csv"));
    let o = areal(&[
        "variables",
        "--input",
        p(&traj),
        "--categories",
        p(&cats),
        "--width",
        "10.5",
        "--region",
        "100,100.001,0,60",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = io::read_variables(o.stdout.as_slice()).unwrap();
    assert_eq!(rows.len(), 1);
    assert!((rows[0].qa - 137.143).abs() < 1e-3, "{:?}", rows[0]);
}

#[test]
fn variables_of_empty_file_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("empty.csv");
    fs::write(&traj, "vehicle_id,category,t_s,x_m\n").unwrap();
    let cats = fixture("categories.csv");
    let out = dir.path().join("out");
    let o = areal(&[
        "variables",
        "--input",
        p(&traj),
        "--categories",
        p(&cats),
        "--width",
        "3.5",
        "--region",
        "0,100,0,60",
        "--output-dir",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = io::read_variables(fs::File::open(out.join("variables.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0].ka, rows[0].qa, rows[0].va), (0.0, 0.0, 0.0));
}

#[test]
fn malformed_row_exits_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("bad.csv");
    fs::write(&traj, "vehicle_id,category,t_s,x_m\nv0,v8,0,0\nv0,v8,abc,10\n").unwrap();
    let cats = fixture("categories.csv");
    let o = areal(&[
        "variables",
        "--input",
        p(&traj),
        "--categories",
        p(&cats),
        "--width",
        "3.5",
        "--region",
        "0,1,0,1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn unknown_category_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("bus.csv");
    fs::write(&traj, "vehicle_id,category,t_s,x_m\nb1,bus,0,0\nb1,bus,1,10\n").unwrap();
    let cats = fixture("categories.csv");
    let o = areal(&[
        "variables",
        "--input",
        p(&traj),
        "--categories",
        p(&cats),
        "--width",
        "3.5",
        "--region",
        "0,1,0,1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`bus`"), "{}", stderr(&o));
}

#[test]
fn steady_finds_two_phases() {
    // Identical cars at 10 m/s: 3 s headways for 120 s, then 6 s headways.
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("phases.csv");
    let mut text = String::from("vehicle_id,category,t_s,x_m\n");
    let mut t = 0.0;
    let mut i = 0;
    while t < 240.0 {
        text += &format!("c{i},car,{t},0\nc{i},car,{},200\n", t + 20.0);
        t += if t < 120.0 { 3.0 } else { 6.0 };
        i += 1;
    }
    fs::write(&traj, text).unwrap();
    let cats = fixture("categories.csv");
    let o = areal(&[
        "steady",
        "--input",
        p(&traj),
        "--categories",
        p(&cats),
        "--width",
        "7",
        "--detector-x",
        "100",
        "--detector-length",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let windows = io::read_windows(o.stdout.as_slice()).unwrap();
    assert_eq!(windows.len(), 2, "{}", stdout(&o));
    assert!((windows[0].t_end - 130.0).abs() <= 6.0, "{windows:?}");
    assert!(windows[0].qa > 1.9 * windows[1].qa);
}

#[test]
fn calibrate_recovers_synthetic_smulders() {
    let truth = FdParams::smulders_continuous_display(45.0, 21.0, 255.0, 1000.0);
    let obs: Vec<(f64, f64)> = (0..300)
        .map(|i| {
            let k = density(5.0 + 895.0 * i as f64 / 299.0);
            let wobble = 0.5 * (i as f64 * 1.7).sin() / 3.6;
            (k, truth.speed(k).unwrap() + wobble)
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("obs.csv");
    io::write_observations(fs::File::create(&input).unwrap(), &obs).unwrap();
    let out = dir.path().join("fit");
    let o = areal(&["calibrate", "--input", p(&input), "--output-dir", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("params.csv")).unwrap();
    assert!(text.starts_with("# seed=42\n"), "{text}");
    let fitted = io::read_params(text.as_bytes()).unwrap();
    let got = &fitted[0];
    assert!((to_kmh(got.v_max().unwrap()) - 45.0).abs() < 0.05 * 45.0);
    assert!((to_kmh(got.v_crit().unwrap()) - 21.0).abs() < 0.05 * 21.0);
    assert!((to_density_display(got.k_crit().unwrap()) - 255.0).abs() < 0.1 * 255.0);
    let fit = io::read_fit_reports(fs::File::open(out.join("fit.csv")).unwrap()).unwrap();
    assert!(fit[0].1.r2_kv > 0.95);
}

#[test]
fn calibrate_is_byte_reproducible() {
    let obs: Vec<(f64, f64)> = (0..50)
        .map(|i| (density(10.0 + 15.0 * i as f64), 12.0 - 0.01 * i as f64))
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("obs.csv");
    io::write_observations(fs::File::create(&input).unwrap(), &obs).unwrap();
    let a = areal(&["calibrate", "--input", p(&input), "--family", "all", "--seed", "7"]);
    let b = areal(&["calibrate", "--input", p(&input), "--family", "all", "--seed", "7"]);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).starts_with("# seed=7\n"));
    assert_eq!(io::read_params(a.stdout.as_slice()).unwrap().len(), 6);
}

#[test]
fn calibrate_rejects_unknown_family() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("obs.csv");
    fs::write(&input, "ka,v\n10,40\n").unwrap();
    let o = areal(&["calibrate", "--input", p(&input), "--family", "parabolic"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn riemann_with_equal_states_has_no_waves() {
    let o = areal(&[
        "riemann",
        "--location",
        "chennai",
        "--derive-omega",
        "--kl",
        "120",
        "--kr",
        "120",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(io::read_events(o.stdout.as_slice()).unwrap().is_empty());
}

#[test]
fn riemann_shock_and_plot_grid() {
    let dir = tempfile::tempdir().unwrap();
    let o = areal(&[
        "riemann",
        "--location",
        "chennai",
        "--derive-omega",
        "--kl",
        "100",
        "--kr",
        "600",
        "--output-dir",
        p(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let events = io::read_events(fs::File::open(dir.path().join("events.csv")).unwrap()).unwrap();
    assert_eq!(events.len(), 1);
    assert_eq!(events[0].kind, "shock");
    let (xs, ts, grid) = io::read_grid(fs::File::open(dir.path().join("density.csv")).unwrap()).unwrap();
    assert_eq!((xs.len(), ts.len()), (201, 61));
    assert!((to_density_display(grid[60][0]) - 100.0).abs() < 1e-9);
    assert!((to_density_display(grid[60][200]) - 600.0).abs() < 1e-9);
}

#[test]
fn riemann_rejects_discontinuous_flux() {
    let o = areal(&["riemann", "--location", "chennai", "--kl", "600", "--kr", "100"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn moc_writes_events_and_grid() {
    let dir = tempfile::tempdir().unwrap();
    let blocks = fixture("blocks.csv");
    let o = areal(&[
        "moc",
        "--location",
        "chennai",
        "--derive-omega",
        "--input",
        p(&blocks),
        "--length",
        "800",
        "--background",
        "50",
        "--horizon",
        "150",
        "--output-dir",
        p(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let events = io::read_events(fs::File::open(dir.path().join("events.csv")).unwrap()).unwrap();
    assert!(events.iter().any(|e| e.kind == "shock" && e.t == 0.0 && e.x == 200.0));
    assert!(events.iter().any(|e| e.t > 0.0), "waves interact before 150 s");
    let (_, ts, _) = io::read_grid(fs::File::open(dir.path().join("density.csv")).unwrap()).unwrap();
    assert_eq!(ts.last(), Some(&150.0));
}

#[test]
fn simulate_scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = fixture("platoons.ini");
    let o = areal(&[
        "simulate",
        "--scenario",
        p(&scenario),
        "--output-dir",
        p(dir.path()),
        "--record-every",
        "4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (xs, ts, car) = io::read_grid(fs::File::open(dir.path().join("density_car.csv")).unwrap()).unwrap();
    assert_eq!(xs.len(), 60);
    assert_eq!(ts.len(), 41);
    assert!((to_density_display(car[0][15]) - 150.0).abs() < 1e-9);
    let fluxes = fs::read_to_string(dir.path().join("fluxes.csv")).unwrap();
    assert!(fluxes.starts_with("t,interface,category,flux\n"));
    assert!(fluxes.lines().any(|l| l.ends_with(",HV,0")));
}

#[test]
fn simulate_overrides_and_cfl() {
    let dir = tempfile::tempdir().unwrap();
    let o = areal(&[
        "simulate",
        "--scenario",
        "platoon-mixed",
        "--dt",
        "1",
        "--output-dir",
        p(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let o = areal(&[
        "simulate",
        "--scenario",
        "platoon-separate",
        "--dx",
        "10",
        "--dt",
        "0.5",
        "--horizon",
        "20",
        "--output-dir",
        p(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (xs, ts, _) = io::read_grid(fs::File::open(dir.path().join("density_HV.csv")).unwrap()).unwrap();
    assert_eq!((xs.len(), ts.len()), (30, 41));
}

#[test]
fn simulate_reports_bad_scenario_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ini");
    fs::write(&path, "[domain]\nlength_m = 300\ndx_m = five\n").unwrap();
    let o = areal(&["simulate", "--scenario", p(&path), "--output-dir", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let o = areal(&[
            "simulate",
            "--scenario",
            "platoon-mixed",
            "--horizon",
            "10",
            "--output-dir",
            p(d.path()),
        ]);
        assert!(o.status.success());
    }
    for f in ["density_car.csv", "density_HV.csv", "fluxes.csv"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}
