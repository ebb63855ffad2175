mod common;

use proptest::prelude::*;
use scale_scribe::corpus::{LanguageFilter, TranscriptKind};
use scale_scribe::metrics::{concordance_per_item, icc3k, pearson, rmse, ItemPairMatrix};
use scale_scribe::parser::PredictedItem;
use scale_scribe::{parse, render, Corpus, PredictedAssessment, ScaleDefinition, Selection};

fn ratings() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(1u8..=7, 24)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn render_then_parse_is_identity(r in ratings(), words in prop::collection::vec("[a-zA-Z ,.\"\\\\]{0,30}", 24)) {
        let scale = ScaleDefinition::bprs_e();
        let assessment = PredictedAssessment {
            patient_id: "p".into(),
            visit_index: 0,
            items: r.iter().zip(&words).enumerate().map(|(i, (rating, w))| PredictedItem {
                item_index: i as u32 + 1,
                rating: *rating,
                explanation: w.clone(),
            }).collect(),
            provenance: String::new(),
        };
        let parsed = parse(&render(&assessment, &scale), &scale).unwrap();
        prop_assert_eq!(parsed.items, assessment.items);
    }

    #[test]
    fn concordance_symmetric_under_swap(rows in prop::collection::vec((ratings(), ratings()), 1..20)) {
        let m = ItemPairMatrix::from_rows(rows.iter().map(|(a, b)| (a, b))).unwrap();
        prop_assert_eq!(concordance_per_item(&m).unwrap(), concordance_per_item(&m.swapped()).unwrap());
    }

    #[test]
    fn pearson_affine_invariant(
        xs in prop::collection::vec(0.0f64..100.0, 3..30),
        noise in prop::collection::vec(-5.0f64..5.0, 30),
        scale in 0.1f64..10.0,
        shift in -50.0f64..50.0,
    ) {
        let pairs: Vec<(f64, f64)> = xs.iter().zip(&noise).map(|(x, e)| (*x, x + e)).collect();
        let moved: Vec<(f64, f64)> = pairs.iter().map(|(x, y)| (*x, scale * y + shift)).collect();
        if let (Ok(a), Ok(b)) = (pearson(&pairs), pearson(&moved)) {
            prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
            prop_assert!((-1.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn icc_of_shifted_copy_is_one(xs in prop::collection::vec(24.0f64..168.0, 3..40), c in -20.0f64..20.0) {
        let table: Vec<[f64; 2]> = xs.iter().map(|x| [*x, x + c]).collect();
        if let Ok(v) = icc3k(&table) {
            prop_assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rmse_zero_iff_identical(xs in prop::collection::vec(24.0f64..168.0, 1..40)) {
        let pairs: Vec<(f64, f64)> = xs.iter().map(|x| (*x, *x)).collect();
        prop_assert_eq!(rmse(&pairs).unwrap(), 0.0);
    }

    #[test]
    fn timelines_shrink_with_min_points(patients in 1usize..12, visits in 1usize..5, seed in any::<u64>()) {
        let corpus = common::synthetic_corpus(patients, visits, seed, &[TranscriptKind::Psychs], &["en"]);
        let sel = Selection::default();
        for k in 1..=visits + 1 {
            let larger: Vec<String> = corpus.timelines(k, &sel).iter().map(|t| t.patient_id.clone()).collect();
            let smaller: Vec<String> = corpus.timelines(k + 1, &sel).iter().map(|t| t.patient_id.clone()).collect();
            prop_assert!(smaller.iter().all(|p| larger.contains(p)));
        }
    }

    #[test]
    fn corpus_export_round_trips(patients in 1usize..6, visits in 1usize..4, seed in any::<u64>()) {
        let corpus = common::synthetic_corpus(patients, visits, seed, &TranscriptKind::ALL, &["en", "es"]);
        let mut buf = Vec::new();
        corpus.export(&mut buf).unwrap();
        let mut again = Corpus::new();
        again.ingest_str(std::str::from_utf8(&buf).unwrap(), "memory").unwrap();
        prop_assert_eq!(again.records(), corpus.records());
        let es = Selection::default().with_languages(LanguageFilter::only(["es"]));
        prop_assert!(again.eval_cases(&es).iter().all(|c| c.transcript.language == "es"));
    }
}
