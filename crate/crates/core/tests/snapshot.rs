use crackrom_core::fom::{
    evaluate_solution, solve_fom, CrackTemplate, MaterialModel, ParamExpr, ParameterSpace, Problem,
};
use crackrom_core::snapshot::{
    build_snapshot_matrix, map_solution, mapped_snapshot, reconstruct, sample_parameters,
    MappingKind, SampleSet, SamplingScheme, SnapshotLayout,
};
use crackrom_core::Error;

fn param(index: usize) -> ParamExpr {
    ParamExpr::Param {
        index,
        scale: 1.0,
        offset: 0.0,
    }
}

fn problem() -> Problem {
    let ps = ParameterSpace::new(
        vec!["length".into(), "height".into()],
        vec![[0.3, 0.5], [0.5, 1.5]],
    )
    .unwrap();
    let crack = CrackTemplate::Edge {
        length: param(0),
        y: param(1),
    };
    Problem::plate_in_tension(
        2,
        [8, 16],
        [1.0, 2.0],
        MaterialModel::new(1e3, 0.3).unwrap(),
        1.0,
        Some(crack),
        ps,
    )
    .unwrap()
}

#[test]
fn intact_plate_has_no_corridor_and_samples_the_field() {
    let ps = ParameterSpace::new(vec![], vec![]).unwrap();
    let p = Problem::plate_in_tension(
        2,
        [4, 8],
        [1.0, 2.0],
        MaterialModel::new(1e3, 0.3).unwrap(),
        1.0,
        None,
        ps,
    )
    .unwrap();
    let layout = SnapshotLayout::for_problem(&p).unwrap();
    assert!(layout.corridor.is_empty());
    let sol = solve_fom(&p, &[]).unwrap();
    let v = map_solution(&sol, &p, &layout, &[]).unwrap();
    for (i, &x) in layout.lattice.points.iter().enumerate() {
        let u = evaluate_solution(&sol, x, 1.0).unwrap();
        assert_eq!([v[2 * i], v[2 * i + 1]], u);
    }
}

#[test]
fn corridor_slots_carry_the_crack_opening() {
    let p = problem();
    let layout = SnapshotLayout::for_problem(&p).unwrap();
    let MappingKind::EdgeTransport { reference_tip, .. } = layout.kind else {
        panic!("edge crack on a rectangle uses the transport map");
    };
    let mu = [0.37, 0.81];
    let sol = solve_fom(&p, &mu).unwrap();
    let v = map_solution(&sol, &p, &layout, &mu).unwrap();
    // corridor point nearest the middle of the reference crack
    let mid = *layout
        .corridor
        .iter()
        .min_by(|&&a, &&b| {
            let d = |i: usize| (layout.lattice.points[i][0] - 0.5 * reference_tip[0]).abs();
            d(a).total_cmp(&d(b))
        })
        .unwrap();
    let x = layout.forward(&p, &mu, layout.lattice.points[mid]);
    assert!((x[1] - 0.81).abs() < 1e-14);
    let up = evaluate_solution(&sol, x, 1.0).unwrap();
    let down = evaluate_solution(&sol, x, -1.0).unwrap();
    for d in 0..2 {
        assert_eq!(v[layout.slot(mid, d, 1.0)], up[d]);
        assert_eq!(v[layout.slot(mid, d, -1.0)], down[d]);
    }
    assert!(up[1] - down[1] > 0.0);
    // the corridor ends at the tip, where both faces meet
    let tip = *layout.corridor.last().unwrap();
    let t = layout.forward(&p, &mu, layout.lattice.points[tip]);
    assert!((t[0] - 0.37).abs() < 1e-14);
    assert!((v[layout.slot(tip, 1, 1.0)] - v[layout.slot(tip, 1, -1.0)]).abs() < 1e-12);
}

#[test]
fn mapped_length_is_parameter_independent() {
    let p = problem();
    let layout = SnapshotLayout::for_problem(&p).unwrap();
    let s = sample_parameters(&p.parameters.bounds, 5, SamplingScheme::UniformRandom, 11).unwrap();
    for mu in &s.parameters {
        assert_eq!(
            mapped_snapshot(&p, &layout, mu).unwrap().len(),
            layout.dim()
        );
    }
    assert_eq!(
        layout.dim(),
        2 * (layout.lattice.len() + layout.corridor.len())
    );
}

#[test]
fn snapshot_matrix_columns_follow_sample_order() {
    let p = problem();
    let layout = SnapshotLayout::for_problem(&p).unwrap();
    let samples = SampleSet {
        parameters: vec![vec![0.31, 0.7], vec![0.45, 1.2], vec![0.31, 0.7]],
        seed: 0,
        scheme: SamplingScheme::UniformRandom,
    };
    let s = build_snapshot_matrix(&samples, &p, &layout, 2).unwrap();
    assert_eq!((s.nrows(), s.ncols()), (layout.dim(), 3));
    for (j, mu) in samples.parameters.iter().enumerate() {
        let c = mapped_snapshot(&p, &layout, mu).unwrap();
        assert_eq!(s.data.column(j).as_slice(), c.as_slice());
        assert!(s.data.column(j).norm() > 0.0);
    }
    assert_eq!(s.data.column(0), s.data.column(2));
}

#[test]
fn failing_solve_reports_the_parameter() {
    let p = problem();
    let layout = SnapshotLayout::for_problem(&p).unwrap();
    let samples = SampleSet {
        parameters: vec![vec![0.4, 1.0], vec![0.9, 1.0]],
        seed: 0,
        scheme: SamplingScheme::UniformRandom,
    };
    match build_snapshot_matrix(&samples, &p, &layout, 1) {
        Err(Error::Snapshot { mu, .. }) => assert_eq!(mu, vec![0.9, 1.0]),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn reconstruction_interpolates_lattice_values_on_both_faces() {
    let p = problem();
    let layout = SnapshotLayout::for_problem(&p).unwrap();
    let mu = [0.42, 1.13];
    let v = mapped_snapshot(&p, &layout, &mu).unwrap();
    for i in (0..layout.lattice.len())
        .step_by(7)
        .chain(layout.corridor.iter().copied())
    {
        let x = layout.forward(&p, &mu, layout.lattice.points[i]);
        for side in [1.0, -1.0] {
            let u = reconstruct(&p, &layout, &v, &mu, x, side).unwrap();
            for d in 0..2 {
                assert!((u[d] - v[layout.slot(i, d, side)]).abs() < 1e-12 * (1.0 + u[d].abs()));
            }
        }
    }
    // between lattice points the reconstruction stays close to the field
    let sol = solve_fom(&p, &mu).unwrap();
    let x = [0.63, 0.37];
    let (a, b) = (
        reconstruct(&p, &layout, &v, &mu, x, 1.0).unwrap(),
        evaluate_solution(&sol, x, 1.0).unwrap(),
    );
    assert!((a[1] - b[1]).abs() < 1e-2 * b[1].abs());
    assert!(reconstruct(&p, &layout, &v[1..], &mu, x, 1.0).is_err());
}
