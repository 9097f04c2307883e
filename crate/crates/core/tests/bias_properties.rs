//! Invariants of the disparity metrics over random prediction tables.

use proptest::prelude::*;

use dataless::bias::{audit, Axis, BiasReport, DemographicProfile, Ethnicity, Gender};
use dataless::Class;

#[derive(Clone, Debug)]
struct Row {
    pred: Class,
    truth: Class,
    profile: DemographicProfile,
}

fn class() -> impl Strategy<Value = Class> {
    prop_oneof![Just(Class::Real), Just(Class::Fake)]
}

fn row() -> impl Strategy<Value = Row> {
    (class(), class(), 0..6usize, 0..2usize, 0..12u8).prop_map(|(pred, truth, e, g, a)| Row {
        pred,
        truth,
        profile: DemographicProfile::new(Ethnicity::ALL[e], Gender::ALL[g], a).unwrap(),
    })
}

/// Tables with both truth classes present, so every unfiltered metric exists.
fn table() -> impl Strategy<Value = Vec<Row>> {
    prop::collection::vec(row(), 2..300).prop_map(|mut rows| {
        rows[0].truth = Class::Fake;
        rows[1].truth = Class::Real;
        rows
    })
}

fn run(rows: &[Row], min_samples: usize) -> BiasReport {
    let preds: Vec<Class> = rows.iter().map(|r| r.pred).collect();
    let truths: Vec<Class> = rows.iter().map(|r| r.truth).collect();
    let profiles: Vec<DemographicProfile> = rows.iter().map(|r| r.profile).collect();
    audit(&preds, &truths, &profiles, min_samples).unwrap()
}

fn values(r: &BiasReport, axis: Axis) -> [f64; 3] {
    let m = &r.axis(axis).unfiltered;
    [&m.ad, &m.dar, &m.drr].map(|d| d.as_ref().unwrap().value)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn metrics_lie_in_unit_interval(rows in table(), min in 0usize..50) {
        let r = run(&rows, min);
        for a in &r.axes {
            for m in [&a.unfiltered, &a.filtered] {
                for d in [&m.ad, &m.dar, &m.drr].into_iter().flatten() {
                    prop_assert!((0.0..=1.0).contains(&d.value));
                }
            }
        }
    }

    #[test]
    fn row_order_is_irrelevant(rows in table(), seed in any::<u64>()) {
        let mut shuffled = rows.clone();
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let (a, b) = (run(&rows, 5), run(&shuffled, 5));
        for axis in Axis::ALL {
            prop_assert_eq!(values(&a, axis), values(&b, axis));
        }
    }

    #[test]
    fn renaming_facets_is_irrelevant(rows in table(), shift in 1usize..6) {
        let renamed: Vec<Row> = rows
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.profile.ethnicity = Ethnicity::ALL[(r.profile.ethnicity.index() + shift) % 6];
                r.profile.gender = Gender::ALL[1 - r.profile.gender as usize];
                r
            })
            .collect();
        let (a, b) = (run(&rows, 0), run(&renamed, 0));
        for axis in Axis::ALL {
            prop_assert_eq!(values(&a, axis), values(&b, axis));
        }
    }

    #[test]
    fn worsening_the_weakest_facet_never_lowers_ad(rows in table()) {
        let before = run(&rows, 0);
        let eth = before.axis(Axis::Ethnicity);
        let weakest = eth
            .facets
            .iter()
            .min_by(|a, b| a.accuracy.total_cmp(&b.accuracy))
            .unwrap()
            .facet_label
            .clone();
        let mut worse = rows.clone();
        let hit = worse
            .iter_mut()
            .find(|r| r.profile.ethnicity.as_str() == weakest && r.pred == r.truth);
        prop_assume!(hit.is_some());
        let hit = hit.unwrap();
        hit.pred = hit.pred.flipped();
        let after = run(&worse, 0);
        prop_assert!(values(&after, Axis::Ethnicity)[0] >= values(&before, Axis::Ethnicity)[0]);
    }

    #[test]
    fn mirrored_facets_show_no_disparity(rows in table()) {
        // Every row appears once as male and once as female.
        let mirrored: Vec<Row> = rows
            .iter()
            .flat_map(|r| {
                Gender::ALL.map(|g| {
                    let mut r = r.clone();
                    r.profile.gender = g;
                    r
                })
            })
            .collect();
        prop_assert_eq!(values(&run(&mirrored, 0), Axis::Gender), [0.0; 3]);
    }

    #[test]
    fn filtered_metrics_never_exceed_unfiltered(rows in table(), min in 0usize..80) {
        let r = run(&rows, min);
        for a in &r.axes {
            let pairs = [
                (&a.filtered.ad, &a.unfiltered.ad),
                (&a.filtered.dar, &a.unfiltered.dar),
                (&a.filtered.drr, &a.unfiltered.drr),
            ];
            for (f, u) in pairs {
                if let (Some(f), Some(u)) = (f, u) {
                    prop_assert!(f.value <= u.value);
                }
            }
        }
    }
}

#[test]
fn perfect_detector_has_zero_disparity() {
    let rows: Vec<Row> = (0..120)
        .map(|i| {
            let truth = if i % 2 == 0 { Class::Fake } else { Class::Real };
            Row {
                pred: truth,
                truth,
                profile: DemographicProfile::new(
                    Ethnicity::ALL[i % 6],
                    Gender::ALL[i % 2],
                    (i % 9) as u8,
                )
                .unwrap(),
            }
        })
        .collect();
    let r = run(&rows, 0);
    assert_eq!(values(&r, Axis::Ethnicity), [0.0; 3]);
    assert_eq!(values(&r, Axis::Age), [0.0; 3]);
}
