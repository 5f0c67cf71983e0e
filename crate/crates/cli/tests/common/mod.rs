#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use transit_ask::feed_io::parse_feed;
use transit_ask_core::{preprocess, Feed, PrepareOptions};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn fixture_dir() -> PathBuf {
    data_dir().join("fixtures/cumtd")
}

pub fn seed_tasks_path() -> PathBuf {
    data_dir().join("seed_tasks.json")
}

pub fn fixture_feed() -> Feed {
    let raw = parse_feed(&fixture_dir()).expect("fixture parses");
    preprocess(&raw, &PrepareOptions { feed_id: Some("cumtd".into()), ..Default::default() }).expect("fixture preprocesses")
}

pub fn fixture_feeds() -> BTreeMap<String, Feed> {
    BTreeMap::from([("cumtd".to_string(), fixture_feed())])
}
