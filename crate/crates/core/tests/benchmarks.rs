use fekansa::bench::{self, CaseSpec, Example, Field, Method};
use fekansa::fem::{assemble_stokes, PressurePin};
use fekansa::geometry::{build_random_cloud, build_structured_mesh, DomainSpec, Point, RandomCloudConfig};
use fekansa::linsolve::pinv_solve;
use fekansa::Error;

fn close(x: f64, target: f64, rel: f64) -> bool {
    (x - target).abs() <= rel * target.abs()
}

#[test]
fn poisson_dirichlet_table_row() {
    let row = bench::run_case(&CaseSpec::new(Example::PDir, Method::Fem1, 0.25)).unwrap();
    let r = row.field(Field::U).unwrap();
    assert!(close(r.lse, 4.091e-2, 0.01), "{}", r.lse);
    assert!(close(r.rmse, 4.578e-3, 0.01), "{}", r.rmse);
    assert!(close(r.condition_number, 1.010e1, 0.01));
    assert_eq!(row.n_nodes, 25);
}

#[test]
fn colliding_flow_taylor_hood_rmse() {
    let row = bench::run_case(&CaseSpec::new(Example::SColliding, Method::Fem2, 0.25)).unwrap();
    assert_eq!(row.physical_spacing, 0.5);
    for (f, target) in [(Field::Ux, 4.431e-2), (Field::Uy, 3.258e-2), (Field::P, 3.225)] {
        let rmse = row.field(f).unwrap().rmse;
        assert!(close(rmse, target, 0.01), "{f:?}: {rmse}");
    }
}

#[test]
fn unsteady_stokes_taylor_hood_rmse() {
    let row = bench::run_case(&CaseSpec::new(Example::SUnsteadyL, Method::Fem2, 0.25)).unwrap();
    for (f, target) in [(Field::Ux, 1.876e-4), (Field::Uy, 1.833e-4), (Field::P, 3.539e-2)] {
        let rmse = row.field(f).unwrap().rmse;
        assert!(close(rmse, target, 0.01), "{f:?}: {rmse}");
    }
}

#[test]
fn pinned_pressure_is_exact() {
    let domain = DomainSpec::bi_unit_square_dirichlet();
    let mv = build_structured_mesh(&domain, 0.5, 2).unwrap();
    let mp = build_structured_mesh(&domain, 0.5, 1).unwrap();
    let ex = Example::SColliding;
    let src = |p: Point| {
        let f = bench::source_term(ex, p, 0.0).unwrap();
        [f[0], f[1]]
    };
    let dir = |p: Point| {
        let u = bench::analytic_solution(ex, p, 0.0).unwrap();
        [u[0], u[1]]
    };
    let pin = ex.pressure_pin(0.0).unwrap();
    assert_eq!(pin, PressurePin { point: [1.0, 1.0], value: 40.0 });
    let sys = assemble_stokes(&mv, &mp, &src, &dir, Some(pin)).unwrap();
    let (x, _) = pinv_solve(&sys.matrix, &sys.rhs, None).unwrap();
    let node = mp.nodes.iter().position(|&q| q == [1.0, 1.0]).unwrap();
    assert!((x[2 * mv.n_nodes() + node] - 40.0).abs() < 1e-10);
}

#[test]
fn runs_are_deterministic() {
    let spec = CaseSpec::new(Example::PDir, Method::Fem1, 0.25);
    let strip = |mut row: bench::ResultRow| {
        for f in &mut row.fields {
            f.report.runtime_s = 0.0;
        }
        row
    };
    assert_eq!(strip(bench::run_case(&spec).unwrap()), strip(bench::run_case(&spec).unwrap()));

    let mut mq = CaseSpec::new(Example::PDirneuL, Method::RbfMq, 0.25);
    mq.random_nodes = true;
    mq.seed = 3;
    let (a, b) = (bench::run_case(&mq).unwrap(), bench::run_case(&mq).unwrap());
    assert_eq!(a.optimization, b.optimization);
    assert_eq!(strip(a), strip(b));
}

#[test]
fn random_clouds_depend_only_on_seed() {
    let d = DomainSpec::l_shape_mixed();
    let a = build_random_cloud(&d, 0.125, RandomCloudConfig::new(5)).unwrap();
    let b = build_random_cloud(&d, 0.125, RandomCloudConfig::new(5)).unwrap();
    let c = build_random_cloud(&d, 0.125, RandomCloudConfig::new(6)).unwrap();
    assert_eq!(a.points(), b.points());
    assert_ne!(a.points(), c.points());
    assert_eq!(a.len(), 65);
}

#[test]
fn fem_suite_tables_and_bundle() {
    let dir = std::env::temp_dir().join("fekansa-suite-test");
    let _ = std::fs::remove_dir_all(&dir);
    let cases: Vec<CaseSpec> = [0.03125, 0.25, 0.0625, 0.125]
        .iter()
        .map(|&h| CaseSpec::new(Example::PDir, Method::Fem1, h))
        .collect();
    let rep = bench::run_cases(&cases, &dir).unwrap();
    let lse: Vec<f64> = rep.rows.iter().map(|r| r.fields[0].report.lse).collect();
    assert_eq!(lse.len(), 4);
    assert!(lse.windows(2).all(|w| w[1] < w[0]), "{lse:?}");

    let text = std::fs::read_to_string(dir.join("p-dir.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "dh,method,field,LSE,RMSE,MRE,CN,RT,OSP");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("1/4,fem1,u,4.092e-02,4.579e-03,"), "{}", lines[1]);

    let bundle: Vec<bench::ConvergenceSeries> =
        serde_json::from_str(&std::fs::read_to_string(&rep.bundle).unwrap()).unwrap();
    assert_eq!(bundle.len(), 1);
    let m = bundle[0].lse_slope.unwrap();
    assert!((m - 2.0).abs() < 0.1, "{m}");
}

#[test]
fn empty_suite_succeeds() {
    let dir = std::env::temp_dir().join("fekansa-empty-suite-test");
    let rep = bench::run_cases(&[], &dir).unwrap();
    assert!(rep.rows.is_empty() && rep.tables.is_empty());
    assert_eq!(std::fs::read_to_string(rep.bundle).unwrap().trim(), "[]");
}

#[test]
fn invalid_cases_are_rejected() {
    let mut c = CaseSpec::new(Example::SColliding, Method::RbfMq, 0.25);
    c.random_nodes = true;
    assert!(matches!(bench::run_case(&c), Err(Error::InvalidCase(_))));
    let c = CaseSpec::new(Example::PDirneuL, Method::Fem1, 0.3);
    assert!(matches!(bench::run_case(&c), Err(Error::NonConformingSpacing { .. })));
    assert!(matches!(
        bench::run_transient(&CaseSpec::new(Example::PDir, Method::Fem1, 0.25)),
        Err(Error::InvalidTimeConfig(_))
    ));
}

#[test]
fn transient_trace_is_recorded() {
    let mut spec = CaseSpec::new(Example::PUnsteady, Method::RbfTps, 0.25);
    spec.time = Some(fekansa::timestep::TimeConfig::new(0.1, 1.0).unwrap());
    spec.trace = true;
    let row = bench::run_transient(&spec).unwrap();
    assert_eq!(row.trace.len(), 10);
    assert!((row.trace[9].t - 1.0).abs() < 1e-12);
    assert!((row.trace[9].rmse - row.fields[0].report.rmse).abs() < 1e-12);
}
