#![allow(dead_code)]

pub mod oracle;

use std::sync::Arc;

use cop_core::clock::{Clock, FixedClock, SteppingClock};
use cop_core::engine::Engine;
use cop_core::fixtures;
use cop_core::kb::{KbIndex, KbKind};
use cop_core::llm::ChatBackend;
use rand::seq::IndexedRandom;
use rand::Rng;
use serde_json::{json, Value};

pub fn fixed_clock() -> Arc<dyn Clock> {
    Arc::new(FixedClock::epoch_2025())
}

pub fn stepping_clock() -> Arc<dyn Clock> {
    Arc::new(SteppingClock::new(FixedClock::epoch_2025().0, chrono::Duration::seconds(1)))
}

pub fn engine_with(backend: Arc<dyn ChatBackend>, clock: Arc<dyn Clock>) -> Engine {
    Engine::new(backend, Arc::new(fixtures::fixture_kbs()), clock)
}

pub const WORDS: &[&str] = &[
    "ndvi", "landsat", "clip", "image", "collection", "filter", "date", "bounds", "export", "drive", "raster",
    "band", "precipitation", "land", "cover", "classification", "buffer", "point", "geometry", "shapefile",
    "csv", "map", "folium", "overlay", "median", "sum", "fire", "thermal", "modis", "sentinel", "reflectance",
    "warp", "translate", "geotiff", "html", "boundary", "country", "region", "mean", "temperature",
];

pub const PLATFORMS: &[&str] = &["Google Earth Engine", "ArcGIS API for Python", "Python GDAL", "R - Raster package"];
pub const LANGUAGES: &[&str] = &["JavaScript", "Python", "R"];

fn phrase(rng: &mut impl Rng, n: usize) -> String {
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// Random valid records of one kind, ids unique.
pub fn random_records(rng: &mut impl Rng, kind: KbKind, count: usize) -> Vec<Value> {
    (0..count)
        .map(|i| {
            let platform = *PLATFORMS.choose(rng).unwrap();
            let lang = *LANGUAGES.choose(rng).unwrap();
            let camel = format!("normalized{}", ["Difference", "HTTPResponse", "Value"].choose(rng).unwrap());
            let n = rng.random_range(3..20);
            let desc = phrase(rng, n);
            let n = rng.random_range(0..6);
            let usage = phrase(rng, n);
            let n = rng.random_range(0..4);
            let tags: Vec<String> = (0..n).map(|_| phrase(rng, 1)).collect();
            match kind {
                KbKind::Platform => json!({
                    "Platform_id": format!("P{i:04}"), "Name": phrase(rng, 2),
                    "Description": desc, "Platform_type": "t",
                    "Task_suitability": "s", "Data_source_interfaces": "d", "Access_permissions": "a",
                    "Technical_support": "x", "Cross_platform_compatibility": "c"
                }),
                KbKind::Function => json!({
                    "Operator_id": format!("F{i:04}"), "Full_name": format!("ee.{}", camel),
                    "Short_name": phrase(rng, 1), "Library_name": "lib", "Language": lang, "Platform": platform,
                    "Description": desc, "Usage": usage,
                    "Parameters": "p", "Output_type": "o"
                }),
                KbKind::Dataset => {
                    let mut v = json!({
                        "Dataset_id": format!("D{i:04}"), "Name": phrase(rng, 3), "Provider": "prov",
                        "Snippet": format!("ee.ImageCollection('X/{i}')"),
                        "Tags": tags,
                        "Description": desc, "DOI": "", "Website": ""
                    });
                    if rng.random_bool(0.7) {
                        v["Platform"] = json!(platform);
                    }
                    v
                }
            }
        })
        .collect()
}

pub fn random_index(rng: &mut impl Rng, kind: KbKind, count: usize) -> (Vec<Value>, KbIndex) {
    let values = random_records(rng, kind, count);
    let index = KbIndex::from_values(&values, kind).expect("random records are valid");
    (values, index)
}

pub fn random_query(rng: &mut impl Rng) -> String {
    let n = rng.random_range(1..6);
    let mut q = phrase(rng, n);
    if rng.random_bool(0.2) {
        q.push_str(" normalizedDifference");
    }
    q
}
