//! The leaderboard order is a strict total order over any submission set.

use std::collections::BTreeMap;

use chrono::{TimeZone, Utc};
use cotloop_core::eval::Score;
use cotloop_service::scoring::SubmissionReport;
use cotloop_service::store::Submission;
use cotloop_service::views::rank;
use proptest::prelude::*;

fn submission(i: usize, overall: i64, at: i64) -> Submission {
    Submission {
        id: format!("s-{i:08}"),
        model_name: format!("m{i}"),
        dataset_version: "v".into(),
        answers: BTreeMap::new(),
        submitted_at: Utc.timestamp_opt(at, 0).unwrap(),
        report: SubmissionReport {
            overall: Score::from_hundredths(overall),
            overall_simple: Score::from_hundredths(overall),
            total: 1,
            correct: 0,
            incorrect: 0,
            unanswered: 1,
            by_sitting: Vec::new(),
            by_unit: Vec::new(),
        },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn strict_and_input_order_independent(
        rows in proptest::collection::vec((0i64..5, 0i64..4), 0..40),
        rotate in 0usize..40,
    ) {
        let subs: Vec<Submission> = rows.iter().enumerate().map(|(i, (o, t))| submission(i, o * 1000, *t)).collect();
        let mut a = subs.clone();
        rank(&mut a);
        for w in a.windows(2) {
            let (x, y) = (&w[0], &w[1]);
            let before = x.report.overall > y.report.overall
                || (x.report.overall == y.report.overall
                    && (x.submitted_at < y.submitted_at || (x.submitted_at == y.submitted_at && x.id < y.id)));
            prop_assert!(before);
        }
        let mut b = subs;
        if !b.is_empty() {
            let r = rotate % b.len();
            b.rotate_left(r);
            b.reverse();
        }
        rank(&mut b);
        prop_assert_eq!(a, b);
    }
}
