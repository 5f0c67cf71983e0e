use std::collections::{BTreeMap, HashMap};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use transit_ask_core::cache;
use transit_ask_core::fewshot::{FewShotExample, FewShotSelector, TfidfModel};
use transit_ask_core::geo::{cumulative_shape_distances, LatLon};
use transit_ask_core::preprocess::{dangling_references, normalize};
use transit_ask_core::time::{format_gtfs_time, parse_gtfs_time, TIME_LIMIT_SECONDS};
use transit_ask_core::{preprocess, PrepareOptions, RawFeed, RawTable};

#[test]
fn time_round_trip_exhaustive() {
    for s in 0..TIME_LIMIT_SECONDS {
        assert_eq!(parse_gtfs_time(&format_gtfs_time(s)), Ok(s), "{s}");
    }
    assert_eq!(parse_gtfs_time("25:15:00"), Ok(90900));
    assert_eq!(parse_gtfs_time("7:05:00"), Ok(25500));
}

proptest! {
    #[test]
    fn time_parse_accepts_unpadded_hours(h in 0u32..100, m in 0u32..60, s in 0u32..60) {
        prop_assert_eq!(parse_gtfs_time(&format!("{h}:{m:02}:{s:02}")), Ok(h * 3600 + m * 60 + s));
    }

    #[test]
    fn time_parse_never_panics(text in "\\PC{0,12}") {
        let _ = parse_gtfs_time(&text);
    }
}

// Great-circle distance via the angle between unit vectors, independent of
// the haversine formulation.
fn oracle_km(a: LatLon, b: LatLon) -> f64 {
    let v = |p: LatLon| {
        let (la, lo) = (p.lat.to_radians(), p.lon.to_radians());
        [la.cos() * lo.cos(), la.cos() * lo.sin(), la.sin()]
    };
    let (x, y) = (v(a), v(b));
    let cross = [x[1] * y[2] - x[2] * y[1], x[2] * y[0] - x[0] * y[2], x[0] * y[1] - x[1] * y[0]];
    let cross_norm = (cross[0].powi(2) + cross[1].powi(2) + cross[2].powi(2)).sqrt();
    let dot = x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
    6371.0088 * cross_norm.atan2(dot)
}

#[test]
fn geometry_matches_pairwise_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..1000 {
        let n = rng.gen_range(1..=50);
        let (lat0, lon0) = (rng.gen_range(-70.0..70.0), rng.gen_range(-179.0..179.0));
        let spread: f64 = [0.001, 0.05, 1.0, 10.0][case % 4];
        let pts: Vec<LatLon> = (0..n)
            .map(|_| {
                LatLon::new(
                    (lat0 + rng.gen_range(-spread..spread)).clamp(-90.0, 90.0),
                    (lon0 + rng.gen_range(-spread..spread)).clamp(-180.0, 180.0),
                )
            })
            .collect();
        let got = cumulative_shape_distances(&pts).unwrap();
        assert_eq!(got.len(), n);
        assert_eq!(got[0], 0.0);
        let mut expected = 0.0;
        for i in 1..n {
            assert!(got[i] >= got[i - 1], "case {case}: not monotone at {i}");
            expected += oracle_km(pts[i - 1], pts[i]);
            let tol = 1e-9 * expected.abs().max(1e-12);
            assert!((got[i] - expected).abs() <= tol, "case {case} point {i}: {} vs {expected}", got[i]);
        }
    }
}

#[test]
fn equator_degree() {
    let d = cumulative_shape_distances(&[LatLon::new(0.0, 0.0), LatLon::new(0.0, 1.0)]).unwrap();
    let oracle = 2.0 * std::f64::consts::PI * 6371.0088 / 360.0;
    assert!((d[1] - 111.1949).abs() < 1e-3);
    assert!((d[1] - oracle).abs() < 1e-9);
}

const WORDS: [&str; 14] = [
    "route", "stop", "bus", "longest", "trips", "Monday", "fare", "green", "wheelchair", "headway", "shape", "map",
    "Illinois", "terminal",
];

fn random_text(rng: &mut ChaCha8Rng, max_words: usize) -> String {
    let n = rng.gen_range(0..=max_words);
    let seps = [" ", ", ", "-", "? ", "  "];
    let mut s = String::new();
    for i in 0..n {
        if i > 0 {
            s.push_str(seps[rng.gen_range(0..seps.len())]);
        }
        let w = WORDS[rng.gen_range(0..WORDS.len())];
        s.push_str(&if rng.gen_bool(0.3) { w.to_uppercase() } else { w.to_string() });
    }
    s
}

// Dense brute-force TF-IDF: own tokenizer, own idf, explicit cosine.
fn oracle_rank(docs: &[String], query: &str, k: usize) -> Vec<usize> {
    fn toks(s: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut cur = String::new();
        for c in s.chars() {
            if c.is_alphanumeric() {
                cur.extend(c.to_lowercase());
            } else if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
        out
    }
    let doc_toks: Vec<Vec<String>> = docs.iter().map(|d| toks(d)).collect();
    let mut vocab: Vec<String> = doc_toks.iter().flatten().cloned().collect();
    vocab.sort();
    vocab.dedup();
    let n = docs.len() as f64;
    let idf: Vec<f64> = vocab
        .iter()
        .map(|t| {
            let df = doc_toks.iter().filter(|d| d.contains(t)).count() as f64;
            ((1.0 + n) / (1.0 + df)).ln() + 1.0
        })
        .collect();
    let vec_of = |ts: &[String]| -> Vec<f64> {
        vocab.iter().zip(&idf).map(|(t, w)| ts.iter().filter(|x| *x == t).count() as f64 * w).collect()
    };
    let q = vec_of(&toks(query));
    let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut scores: Vec<(usize, f64)> = doc_toks
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let v = vec_of(d);
            let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let dot: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
            (i, if qn == 0.0 || vn == 0.0 { 0.0 } else { dot / (qn * vn) })
        })
        .collect();
    scores.sort_by(|a, b| {
        if (a.1 - b.1).abs() <= 1e-9 {
            a.0.cmp(&b.0)
        } else {
            b.1.partial_cmp(&a.1).unwrap()
        }
    });
    scores.into_iter().take(k).map(|(i, _)| i).collect()
}

#[test]
fn tfidf_matches_brute_force_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for case in 0..200 {
        let n = rng.gen_range(1..=20);
        let docs: Vec<String> = (0..n).map(|_| random_text(&mut rng, 8)).collect();
        // Duplicated documents force exact ties.
        let docs: Vec<String> =
            docs.iter().map(|d| if rng.gen_bool(0.2) { docs[0].clone() } else { d.clone() }).collect();
        let query = if rng.gen_bool(0.2) { docs[rng.gen_range(0..n)].clone() } else { random_text(&mut rng, 6) };
        let k = rng.gen_range(1..=n + 2);
        let got: Vec<usize> = TfidfModel::fit(&docs).rank(&query, k).into_iter().map(|(i, _)| i).collect();
        assert_eq!(got, oracle_rank(&docs, &query, k), "case {case}: docs={docs:?} query={query:?}");
    }
}

#[test]
fn identical_query_scores_one() {
    let corpus: Vec<FewShotExample> = ["How many stops are there?", "What is the longest route?", "Average fare"]
        .iter()
        .enumerate()
        .map(|(i, q)| FewShotExample { id: format!("e{i}"), query: q.to_string(), response: "r".into() })
        .collect();
    let sel = FewShotSelector::new(corpus).unwrap();
    let top = sel.select("What is the longest route?", 3).unwrap();
    assert_eq!(top[0].example.id, "e1");
    assert!((top[0].score - 1.0).abs() < 1e-12);
}

fn table(headers: &[&str], rows: Vec<Vec<String>>) -> RawTable {
    RawTable::new(headers.iter().map(|h| h.to_string()).collect(), rows).unwrap()
}

/// A random, structurally valid feed: some stops, shapes and routes are
/// unused, some columns empty, times may pass midnight.
fn random_feed(rng: &mut ChaCha8Rng) -> RawFeed {
    let n_stops = rng.gen_range(2..12);
    let n_shapes = rng.gen_range(1..4);
    let n_routes = rng.gen_range(1..4);
    let n_trips = rng.gen_range(1..8);
    let mut f = RawFeed::new("rand");
    let (lat0, lon0) = (rng.gen_range(-60.0..60.0), rng.gen_range(-170.0..170.0));
    let stops = (0..n_stops)
        .map(|i| {
            vec![
                format!("S{i}"),
                format!("Stop {i}"),
                format!("{:.6}", lat0 + rng.gen_range(-0.05..0.05)),
                format!("{:.6}", lon0 + rng.gen_range(-0.05..0.05)),
                String::new(),
            ]
        })
        .collect();
    f.tables.insert("stops".into(), table(&["stop_id", "stop_name", "stop_lat", "stop_lon", "stop_desc"], stops));
    let routes = (0..n_routes).map(|i| vec![format!("R{i}"), format!("{i}"), "3".into()]).collect();
    f.tables.insert("routes".into(), table(&["route_id", "route_short_name", "route_type"], routes));
    let mut shapes = Vec::new();
    for s in 0..n_shapes {
        for p in 0..rng.gen_range(2..8) {
            shapes.push(vec![
                format!("SH{s}"),
                format!("{:.6}", lat0 + rng.gen_range(-0.05..0.05)),
                format!("{:.6}", lon0 + rng.gen_range(-0.05..0.05)),
                format!("{}", p + 1),
            ]);
        }
    }
    f.tables.insert("shapes".into(), table(&["shape_id", "shape_pt_lat", "shape_pt_lon", "shape_pt_sequence"], shapes));
    let trips = (0..n_trips)
        .map(|t| {
            vec![
                format!("R{}", rng.gen_range(0..n_routes)),
                "WK".into(),
                format!("T{t}"),
                format!("SH{}", rng.gen_range(0..n_shapes)),
            ]
        })
        .collect();
    f.tables.insert("trips".into(), table(&["route_id", "service_id", "trip_id", "shape_id"], trips));
    let mut st = Vec::new();
    for t in 0..n_trips {
        // Some trips have no stop_times and must be pruned.
        if t > 0 && rng.gen_bool(0.2) {
            continue;
        }
        let mut clock = rng.gen_range(4 * 3600..26 * 3600);
        for seq in 0..rng.gen_range(2..6) {
            clock += rng.gen_range(30..600);
            let hms = format_gtfs_time(clock);
            st.push(vec![format!("T{t}"), hms.clone(), hms, format!("S{}", rng.gen_range(0..n_stops)), format!("{}", seq + 1)]);
        }
    }
    f.tables.insert(
        "stop_times".into(),
        table(&["trip_id", "arrival_time", "departure_time", "stop_id", "stop_sequence"], st),
    );
    f
}

#[test]
fn preprocess_invariants_cache_round_trip_and_idempotence() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..100 {
        let raw = random_feed(&mut rng);
        let feed = preprocess(&raw, &PrepareOptions { prepared_at: 1_700_000_000, ..Default::default() }).unwrap();

        for (stem, t) in feed.tables() {
            assert!(!t.is_empty(), "case {case}: empty table {stem}");
            for c in t.columns() {
                assert!(!c.data.all_null(), "case {case}: all-null column {stem}.{}", c.name);
            }
        }
        assert!(dangling_references(feed.tables()).is_empty(), "case {case}");
        if let Some(shapes) = feed.table("shapes") {
            let ids = shapes.text("shape_id").unwrap();
            let d = shapes.floats("shape_dist_traveled").unwrap();
            let mut last: HashMap<&str, f64> = HashMap::new();
            for (id, d) in ids.iter().zip(d) {
                let (id, d) = (id.as_deref().unwrap(), d.unwrap());
                let prev = last.insert(id, d);
                assert!(prev.is_none_or(|p| p <= d), "case {case}: shape {id} not monotone");
            }
        }

        let bytes = cache::encode(&feed);
        let back = cache::decode(&bytes).unwrap();
        assert_eq!(back, feed, "case {case}");
        assert_eq!(cache::encode(&back), bytes, "case {case}");

        let again = normalize(feed.clone()).unwrap();
        assert_eq!(again, feed, "case {case}: not idempotent");
    }
}

#[test]
fn row_counts_match_tables() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let feed = preprocess(&random_feed(&mut rng), &PrepareOptions::default()).unwrap();
    let counts: BTreeMap<String, u64> = feed.tables().iter().map(|(k, t)| (k.clone(), t.num_rows() as u64)).collect();
    assert_eq!(feed.meta().row_counts, counts);
}
