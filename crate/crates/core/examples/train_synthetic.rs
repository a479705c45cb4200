//! Trains a PMOP-5 head on the synthetic five-city corpus and reports
//! held-out metrics.
//!
//! ```text
//! cargo run --release -p geohead --example train_synthetic -- [samples] [lr_max] [lr_min] [dim]
//! ```

use std::time::Instant;

use geohead::features::{compose_feature, FeatureSet};
use geohead::head::{train, EncoderSpec, HeadConfig, HeadKind, TrainOptions, TrainSample};
use geohead::metrics::{evaluate, EvalOptions};
use geohead::synthetic::{generate, SyntheticConfig};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> geohead::Result<()> {
    let samples: usize = arg(1, 20_000);
    let lr_max: f64 = arg(2, 1e-3);
    let lr_min: f64 = arg(3, 1e-5);
    let dim: usize = arg(4, 768);

    let corpus = generate(&SyntheticConfig { samples, ..SyntheticConfig::default() })?;
    let (train_set, test_set) = corpus.split_at(samples * 9 / 10);

    let encoder = EncoderSpec::stub(dim, 42);
    let data = train_set
        .iter()
        .map(|r| {
            Ok(TrainSample {
                label: r.label.expect("synthetic records are labeled"),
                key: encoder.encode(&compose_feature(r, FeatureSet::NonGeo))?,
                minor: vec![Some(encoder.encode(&compose_feature(r, FeatureSet::GeoOnly))?)],
            })
        })
        .collect::<geohead::Result<Vec<_>>>()?;

    let config = HeadConfig::new(HeadKind::Pmop, 5, dim).with_minor_features(1);
    let opts = TrainOptions { lr_max, lr_min, ..TrainOptions::default() };
    let started = Instant::now();
    let (bundle, report) = train(&data, &config, encoder, FeatureSet::NonGeo, vec![FeatureSet::GeoOnly], &opts)?;
    println!("trained {} steps in {:.1}s", report.steps.len(), started.elapsed().as_secs_f64());
    for e in &report.epochs {
        println!("epoch {}: train loss {:.4}, dev median SAE {:?} km", e.epoch, e.train_loss, e.dev_median_sae_km);
    }

    for r in test_set.iter().take(3) {
        let pred = geohead::head::predict(&compose_feature(r, FeatureSet::NonGeo), &bundle)?;
        println!("label {:?}", r.label.expect("labeled"));
        for p in pred.mixture().expect("probabilistic head").peaks() {
            println!("    mu=({:.2}, {:.2}) sigma={:.3} w={:.4}", p.mu.lon, p.mu.lat, p.sigma, p.weight);
        }
    }

    let metrics = evaluate(test_set, &bundle, FeatureSet::NonGeo, EvalOptions::default())?;
    println!("{}", serde_json::to_string_pretty(&metrics).expect("report serializes"));
    Ok(())
}
