use std::sync::Arc;

use hodge_maxwell::dec::DecOps;
use hodge_maxwell::inner::InnerSolveConfig;
use hodge_maxwell::mesh::build_flat_torus;
use hodge_maxwell::nonlinearity::NonlinearityModel;
use hodge_maxwell::reduced::{weak_residual, ReducedProblem};
use hodge_maxwell::saddle::{
    frames_for_targets, level_frames, BandConstants, SaddleConfig, SaddleSearch,
};
use hodge_maxwell::spectral::HodgeSpaces;

fn t2() -> HodgeSpaces {
    HodgeSpaces::new(
        Arc::new(DecOps::new(Arc::new(build_flat_torus(2, 4).unwrap())).unwrap()),
        1,
    )
    .unwrap()
}

#[test]
fn same_frame_twice_does_not_duplicate() {
    let sp = t2();
    let prob = ReducedProblem::new(
        &sp,
        NonlinearityModel::shifted_power(1.0, 3.0).unwrap(),
        InnerSolveConfig::default(),
    );
    let constants = BandConstants::from_model(&prob);
    let frames = level_frames(&prob, 0.6, 1, &constants, 1.05, 1).unwrap();
    let twice = vec![frames[0].clone(), frames[0].clone()];
    let report = SaddleSearch::new(&prob, SaddleConfig::default())
        .collect_multiple(&twice)
        .unwrap();
    assert!(
        report.failures.iter().any(|f| f.contains("duplicate")),
        "{:?}",
        report.failures
    );
    let primary: Vec<_> = report.records.iter().filter(|r| !r.paired).collect();
    for i in 0..primary.len() {
        for j in i + 1..primary.len() {
            let (a, b) = (&primary[i].coefficients, &primary[j].coefficients);
            let scale = a.norm().max(b.norm());
            assert!((a - b).norm() > 1e-3 * scale && (a + b).norm() > 1e-3 * scale);
        }
    }
}

#[test]
fn deflation_finds_distinct_points_in_one_frame() {
    let sp = t2();
    let model = NonlinearityModel::shifted_power(1.0, 3.0).unwrap();
    let prob = ReducedProblem::new(&sp, model.clone(), InnerSolveConfig::default());
    let constants = BandConstants::from_model(&prob);
    let frames = level_frames(&prob, 0.6, 1, &constants, 1.05, 1).unwrap();
    let config = SaddleConfig {
        per_frame: 2,
        ..SaddleConfig::default()
    };
    let report = SaddleSearch::new(&prob, config)
        .collect_multiple(&frames)
        .unwrap();
    let primary: Vec<_> = report.records.iter().filter(|r| !r.paired).collect();
    assert_eq!(primary.len(), 2, "{:?}", report.failures);
    let (a, b) = (&primary[0].coefficients, &primary[1].coefficients);
    let scale = a.norm().max(b.norm());
    assert!((a - b).norm() > 1e-3 * scale && (a + b).norm() > 1e-3 * scale);
    for r in &report.records {
        assert!(weak_residual(&model, sp.ops(), &r.xi, None, 0).unwrap() <= 1e-7);
        assert!(r.band.contains(r.value));
    }
}

#[test]
fn bands_of_level_frames_are_disjoint_and_ordered() {
    let sp = HodgeSpaces::new(
        Arc::new(DecOps::new(Arc::new(build_flat_torus(3, 3).unwrap())).unwrap()),
        1,
    )
    .unwrap();
    let prob = ReducedProblem::new(
        &sp,
        NonlinearityModel::shifted_power(1.0, 3.0).unwrap(),
        InnerSolveConfig::default(),
    );
    let constants = BandConstants::from_model(&prob);
    let frames = level_frames(&prob, 0.6, 3, &constants, 1.05, 1).unwrap();
    assert!(frames.len() >= 2);
    for w in frames.windows(2) {
        assert!(w[1].band.lower > 1.05 * w[0].band.upper);
        assert!(w[1].mu > w[0].mu);
    }
    for f in &frames {
        assert_eq!(f.dim_minus(), f.codim_plus() + f.multiplicity());
        assert!(f.band.lower > 0.0 && f.band.lower < f.band.upper);
    }
}

#[test]
fn target_frames_are_monotone() {
    let sp = t2();
    let prob = ReducedProblem::new(
        &sp,
        NonlinearityModel::shifted_power(1.0, 3.0).unwrap(),
        InnerSolveConfig::default(),
    );
    let constants = BandConstants::from_model(&prob);
    let emb = sp.estimate_embedding(3.0, Some(0.6), 8, 1).unwrap();
    let frames = frames_for_targets(&prob, &emb, &constants, &[0.5, 2.0, 8.0], 1).unwrap();
    assert!(frames.windows(2).all(|w| w[1].rho >= w[0].rho));
    assert!(frames
        .iter()
        .all(|f| (f.mu - f.rho.powf(2.0 / (1.0 - f.s))).abs() <= 1e-9 * f.mu));
    assert!(frames_for_targets(&prob, &emb, &constants, &[1e9], 1).is_err());
}
