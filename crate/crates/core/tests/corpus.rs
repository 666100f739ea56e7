use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use banner_salience::corpus::acquire::{AttemptOutcome, SCHEDULE};
use banner_salience::corpus::annotations::percent_to_pixels;
use banner_salience::corpus::{
    acquire, acquire_all, build_targets, classify_label, emit, ingest_str, AcquireResult, BannerAnnotation,
    Category, CctldSet, ComplianceClass, FetchError, Locale, TargetConfig, TargetGroup,
};
use banner_salience::scoring::{BoundingBox, ButtonFlags, Role};
use proptest::prelude::*;

#[derive(Debug, Clone, Copy)]
enum Step {
    Ok,
    Fail,
    Manual,
    Crash,
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![Just(Step::Ok), Just(Step::Fail), Just(Step::Manual), Just(Step::Crash)]
}

fn annotation() -> impl Strategy<Value = BannerAnnotation> {
    let category = proptest::sample::select(Category::ALL.to_vec());
    (
        "[a-z]{1,8}\\.(de|com|fr|io)",
        any::<bool>(),
        category,
        any::<bool>(),
        proptest::option::of("[a-z]{1,6}\\.png"),
        (50u32..2000, 50u32..2000),
        proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.05f64..1.0, 0.05f64..1.0, any::<[bool; 4]>()), 5),
    )
        .prop_map(|(site, eu_visitor, category, website_eu, image, (w, h), geo)| {
            let mut a = BannerAnnotation {
                website_id: site,
                visitor_locale: if eu_visitor { Locale::Eu } else { Locale::Us },
                category,
                website_eu,
                image,
                image_width: None,
                image_height: None,
                boxes: BTreeMap::new(),
                flags: BTreeMap::new(),
            };
            if category.is_banner() {
                a.image_width = Some(w);
                a.image_height = Some(h);
                for (role, (fx, fy, fw, fh, fl)) in Role::ALL.into_iter().zip(geo) {
                    if !category.required_roles().contains(&role) && fl[0] {
                        continue;
                    }
                    let x = (fx * (w - 1) as f64) as u32;
                    let y = (fy * (h - 1) as f64) as u32;
                    let bw = ((fw * (w - x) as f64) as u32).max(1);
                    let bh = ((fh * (h - y) as f64) as u32).max(1);
                    a.boxes.insert(role, BoundingBox::new(x, y, bw, bh).unwrap());
                    if role != Role::Banner && fl[1..].iter().any(|b| *b) {
                        let f = ButtonFlags { link: fl[1], hidden: fl[2], choice_menu: fl[3], corner: fl[1] && fl[3] };
                        a.flags.insert(role, f);
                    }
                }
            }
            a
        })
}

#[test]
fn ingest_reports_each_broken_task() {
    let text = r#"[
      {"id": 1, "data": {"website_id": "a.de", "visitor_locale": "EU"},
       "annotations": [{"result": [{"type": "choices", "from_name": "category", "value": {"choices": ["None"]}}]}]},
      {"id": 2, "data": {"website_id": "b.com", "visitor_locale": "Mars"}, "annotations": []},
      {"id": "c", "data": {"website_id": "c.com", "visitor_locale": "US"},
       "annotations": [{"result": [
         {"type": "choices", "from_name": "category", "value": {"choices": ["Full"]}},
         {"id": "r1", "type": "rectanglelabels", "from_name": "role", "original_width": 100, "original_height": 100,
          "value": {"x": 0, "y": 50, "width": 100, "height": 50, "rectanglelabels": ["banner"]}}]}]},
      {"data": {}}
    ]"#;
    let report = ingest_str(text, &CctldSet::default()).unwrap();
    assert_eq!(report.annotations.len(), 1);
    assert!(report.annotations[0].website_eu);
    let ids: Vec<Option<String>> = report.errors.iter().map(|e| e.task_id.clone()).collect();
    assert_eq!(ids, vec![Some("2".into()), Some("c".into()), None]);
    assert!(report.errors[1].message.contains("accept"));
    assert!(ingest_str("{", &CctldSet::default()).is_err());
}

#[test]
fn percent_rounding_is_half_up() {
    assert_eq!(percent_to_pixels(12.5, 100), 13);
    assert_eq!(percent_to_pixels(12.49, 100), 12);
    assert_eq!(percent_to_pixels(100.0, 1366), 1366);
}

#[test]
fn labels_parse_and_classify() {
    for c in Category::ALL {
        assert_eq!(c.label().parse::<Category>().unwrap(), c);
        assert_eq!(c.label().to_uppercase().parse::<Category>().unwrap(), c);
    }
    assert_eq!("full + x".parse::<Category>().unwrap(), Category::FullX);
    assert_eq!("Manage (X)".parse::<Category>().unwrap(), Category::ManageX);
    assert_eq!(classify_label("Full choices").unwrap(), ComplianceClass::Compliant);
    assert_eq!(classify_label("Notice").unwrap(), ComplianceClass::NotCompliant);
    assert!(classify_label("None").is_err());
    assert!(classify_label("Popup").is_err());
}

#[test]
fn acquire_all_keeps_order_and_cap() {
    let domains: Vec<String> = (0..23).map(|i| format!("site{i}.com")).collect();
    let live = AtomicUsize::new(0);
    let peak = AtomicUsize::new(0);
    let out = acquire_all(&domains, 3, || {
        |url: &str, _t: Duration| -> Result<PathBuf, FetchError> {
            let now = live.fetch_add(1, Ordering::SeqCst) + 1;
            peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(2));
            live.fetch_sub(1, Ordering::SeqCst);
            if url.starts_with("http://") {
                Ok(PathBuf::from(url.trim_start_matches("http://").trim_end_matches('/')))
            } else {
                Err(FetchError::Failed("tls".into()))
            }
        }
    });
    assert!(peak.load(Ordering::SeqCst) <= 3);
    for (a, d) in out.iter().zip(&domains) {
        assert_eq!(&a.domain, d);
        assert_eq!(a.result, AcquireResult::Screenshot { path: PathBuf::from(d) });
        assert_eq!(a.attempts.len(), 2);
    }
}

proptest! {
    #[test]
    fn acquire_follows_the_ladder(steps in proptest::collection::vec(step(), 4)) {
        let mut calls = Vec::new();
        let mut fetcher = |url: &str, t: Duration| -> Result<PathBuf, FetchError> {
            let s = steps[calls.len()];
            calls.push((url.to_owned(), t.as_secs()));
            match s {
                Step::Ok => Ok(PathBuf::from("shot.png")),
                Step::Fail => Err(FetchError::Failed("refused".into())),
                Step::Manual => Err(FetchError::ManualNeeded("captcha".into())),
                Step::Crash => panic!("driver died"),
            }
        };
        let prev = std::panic::take_hook();
        std::panic::set_hook(Box::new(|_| {}));
        let a = acquire("example.org", &mut fetcher);
        std::panic::set_hook(prev);

        let stop = steps.iter().position(|s| matches!(s, Step::Ok | Step::Manual));
        let expected_len = stop.map_or(4, |i| i + 1);
        prop_assert!(a.attempts.len() <= 4);
        prop_assert_eq!(a.attempts.len(), expected_len);
        prop_assert_eq!(calls.len(), expected_len);
        for (i, att) in a.attempts.iter().enumerate() {
            prop_assert_eq!((att.protocol, att.timeout_secs), SCHEDULE[i]);
            prop_assert_eq!(&calls[i].0, &format!("{}://example.org/", SCHEDULE[i].0.scheme()));
            prop_assert_eq!(calls[i].1, SCHEDULE[i].1);
        }
        let succeeded = stop.is_some_and(|i| matches!(steps[i], Step::Ok));
        prop_assert_eq!(matches!(a.result, AcquireResult::Screenshot { .. }), succeeded);
        if let Some(i) = stop {
            let want = if succeeded { AttemptOutcome::Ok } else { AttemptOutcome::ManualNeeded };
            prop_assert_eq!(a.attempts[i].outcome, want);
        }
    }

    #[test]
    fn emitted_annotations_ingest_unchanged(anns in proptest::collection::vec(annotation(), 1..6)) {
        for a in &anns {
            prop_assert!(a.validate().is_ok(), "{:?}", a.validate());
        }
        let text = serde_json::to_string(&emit(&anns)).unwrap();
        let report = ingest_str(&text, &CctldSet::default()).unwrap();
        prop_assert!(report.errors.is_empty(), "{:?}", report.errors);
        prop_assert_eq!(&report.annotations, &anns);
        let again = serde_json::to_string(&emit(&report.annotations)).unwrap();
        prop_assert_eq!(again, text);
    }

    #[test]
    fn target_groups_are_disjoint_and_sized(
        n in 20usize..200,
        eu_every in 2usize..6,
        gt in 0usize..30, gr in 0usize..30, et in 0usize..15, er in 0usize..15,
        seed in any::<u64>(),
    ) {
        let csv: String = (1..=n)
            .map(|r| format!("{r},site{r}.{}\n", if r % eu_every == 0 { "de" } else { "com" }))
            .collect();
        let cfg = TargetConfig { global_top: gt, global_random: gr, eu_top: et, eu_random: er, seed };
        let t = build_targets(csv.as_bytes(), &cfg, &CctldSet::default());
        let again = build_targets(csv.as_bytes(), &cfg, &CctldSet::default());
        prop_assert_eq!(&t, &again);

        let domains: HashSet<&str> = t.entries.iter().map(|e| e.domain.as_str()).collect();
        prop_assert_eq!(domains.len(), t.entries.len());
        let eu_total = n / eu_every;
        prop_assert_eq!(t.count(TargetGroup::GlobalTop), gt.min(n));
        prop_assert!(t.count(TargetGroup::GlobalRandom) <= gr.min(n - gt.min(n)));
        let eu_top_kept = (1..=et.min(eu_total)).filter(|j| j * eu_every > gt).count();
        prop_assert_eq!(t.count(TargetGroup::EuTop), eu_top_kept);
        let requested = gt.min(n) + gr.min(n - gt.min(n)) + et.min(eu_total) + er.min(eu_total - et.min(eu_total));
        prop_assert_eq!(t.entries.len() + t.overlaps_removed, requested);
        for e in &t.entries {
            prop_assert_eq!(e.domain.clone(), format!("site{}.{}", e.rank, if (e.rank as usize).is_multiple_of(eu_every) { "de" } else { "com" }));
            match e.group {
                TargetGroup::GlobalTop => prop_assert!(e.rank as usize <= gt),
                TargetGroup::EuTop | TargetGroup::EuRandom => prop_assert!(e.domain.ends_with(".de")),
                TargetGroup::GlobalRandom => prop_assert!(e.rank as usize > gt),
            }
        }
        prop_assert!(t.row_errors.is_empty());
    }
}
