use proptest::prelude::*;
use trialfusion::dataset::{common_support, read_csv, write_csv, CompositeDataset, LoadOptions, Source};
use trialfusion::estimators::{EstimatorForm, Estimator, Interpretation, NamedEstimand, Target};
use trialfusion::nuisance::NuisanceConfig;
use trialfusion::oracle::{sample, Scenario};

/// (x_1, x_2, s, a, y) with s in {0, 1}; `a` is mapped into the source's arms.
type Row = (u8, u8, u8, u8, u8);

fn rows() -> impl Strategy<Value = Vec<Row>> {
    prop::collection::vec((0u8..3, 0u8..2, 0u8..2, 0u8..2, 0u8..2), 0..120)
}

/// Every covariate cell gets both arms of both sources and both outcomes, so
/// saturated fits exist everywhere; random rows then shift the cell means.
/// With `uniform_external` every external row receives `external_arm`.
fn dataset(extra: &[Row], uniform_external: bool, external_arm: u8) -> CompositeDataset {
    let arm = |s: u8, k: u8| match (s, uniform_external) {
        (1, _) => k,
        (_, true) => external_arm,
        (_, false) => 2 * k,
    };
    let mut text = String::from("x_1,x_2,s,a,y\n");
    for x1 in 0..3 {
        for x2 in 0..2 {
            for s in 0..2 {
                for k in 0..2 {
                    for y in 0..2 {
                        text.push_str(&format!("{x1},{x2},{s},{},{y}\n", arm(s, k)));
                    }
                }
            }
        }
    }
    for &(x1, x2, s, k, y) in extra {
        text.push_str(&format!("{x1},{x2},{s},{},{y}\n", arm(s, k)));
    }
    read_csv(text.as_bytes(), &LoadOptions::default()).unwrap()
}

fn max_gap(data: &CompositeDataset) -> (f64, usize) {
    let est = Estimator::new(data, NuisanceConfig::saturated());
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    for name in NamedEstimand::ALL {
        let target = |form| name.target(Interpretation::AbsentEngagement, form);
        if let (Ok(g), Ok(w)) = (est.point(&target(EstimatorForm::Gformula)), est.point(&target(EstimatorForm::Ipw))) {
            worst = worst.max((g - w).abs());
            pairs += 1;
        }
    }
    (worst, pairs)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn csv_round_trip_preserves_rows(extra in rows()) {
        let data = dataset(&extra, false, 0);
        let mut buf = Vec::new();
        write_csv(&data, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &LoadOptions::default()).unwrap();
        prop_assert_eq!(back.len(), data.len());
        for (a, b) in data.records().zip(back.records()) {
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn gformula_and_weighting_agree_under_saturated_fits(extra in rows(), uniform in any::<bool>(), arm in prop::sample::select(vec![0u8, 2])) {
        let data = dataset(&extra, uniform, arm);
        let (gap, pairs) = max_gap(&data);
        prop_assert!(gap < 1e-10, "gap {}", gap);
        prop_assert!(pairs >= 5, "pairs {}", pairs);
    }

    #[test]
    fn reversed_contrast_negates(extra in rows()) {
        let data = dataset(&extra, false, 0);
        let est = Estimator::new(&data, NuisanceConfig::default());
        for name in [NamedEstimand::Psi, NamedEstimand::Phi, NamedEstimand::Theta] {
            let Target::Contrast(c) = Target::named(name) else { unreachable!() };
            let forward = est.contrast(&c).unwrap().point;
            let backward = est.contrast(&c.reversed()).unwrap().point;
            prop_assert_eq!(forward, -backward);
        }
    }

    #[test]
    fn engagement_flag_never_changes_numbers(extra in rows()) {
        let data = dataset(&extra, false, 0);
        let est = Estimator::new(&data, NuisanceConfig::default());
        for name in NamedEstimand::ALL.into_iter().filter(|n| n.has_joint_reading()) {
            for form in [EstimatorForm::Gformula, EstimatorForm::Ipw] {
                let a = est.point(&name.target(Interpretation::AbsentEngagement, form)).unwrap();
                let j = est.point(&name.target(Interpretation::JointIntervention, form)).unwrap();
                prop_assert_eq!(a.to_bits(), j.to_bits());
            }
        }
    }

    #[test]
    fn support_report_is_symmetric(extra in rows()) {
        let data = dataset(&extra, false, 0);
        let ab = common_support(&data, Source::TRIAL, Source::EXTERNAL, None).unwrap();
        let ba = common_support(&data, Source::EXTERNAL, Source::TRIAL, None).unwrap();
        prop_assert_eq!(&ab.shared, &ba.shared);
        prop_assert_eq!(&ab.only_in_first, &ba.only_in_second);
        prop_assert_eq!(&ab.only_in_second, &ba.only_in_first);
    }

    #[test]
    fn constant_outcomes_give_constant_estimates(extra in rows(), c in 0u8..2) {
        let flat: Vec<Row> = extra.iter().map(|&(x1, x2, s, k, _)| (x1, x2, s, k, c)).collect();
        let mut data = dataset(&flat, false, 0);
        // Base rows carry both outcomes; give them zero weight.
        let weights: Vec<f64> = (0..data.len()).map(|i| if data.outcome(i) == Some(f64::from(c)) { 1.0 } else { 0.0 }).collect();
        data = data.reweighted(weights);
        let est = Estimator::new(&data, NuisanceConfig::saturated());
        for name in [NamedEstimand::Gamma11, NamedEstimand::Gamma02, NamedEstimand::Lambda, NamedEstimand::Rho] {
            if c == 0 && name == NamedEstimand::Rho {
                continue;
            }
            let v = est.point(&Target::named(name)).unwrap();
            prop_assert!((v - f64::from(c)).abs() < 1e-12);
        }
    }
}

#[test]
fn empirical_cell_frequencies_converge_at_root_n() {
    let scn = Scenario::builtin("dgp-a").unwrap();
    for (k, n) in [1_000usize, 10_000, 100_000].into_iter().enumerate() {
        let data = sample(&scn, n, 300 + k as u64).unwrap();
        for s in [Source::EXTERNAL, Source::TRIAL] {
            let rows: Vec<usize> = data.rows_in(s).collect();
            let m = rows.len() as f64;
            for (x, p) in scn.x_law(s) {
                let hits = rows.iter().filter(|&&i| data.x(i)[0] == x.0[0] as f64).count() as f64;
                let band = 3.0 * (p * (1.0 - p) / m).sqrt();
                assert!((hits / m - p).abs() <= band, "n={n} s={s} x={x}: {} vs {p}", hits / m);
                for a in [0, 1, 2] {
                    let q = scn.treatment_prob(s, a, x);
                    let in_cell: Vec<usize> = rows.iter().copied().filter(|&i| data.x(i)[0] == x.0[0] as f64).collect();
                    let got = in_cell.iter().filter(|&&i| data.treatment(i) == Some(a)).count() as f64;
                    let mc = in_cell.len() as f64;
                    let band = 3.0 * (q * (1.0 - q) / mc).sqrt();
                    assert!((got / mc - q).abs() <= band + 1e-12, "n={n} s={s} x={x} a={a}");
                }
            }
        }
    }
}
