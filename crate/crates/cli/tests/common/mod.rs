#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

/// Writes a dataset of seasonal series plus optional extra short series.
pub fn write_dataset(dir: &Path, series: usize, months: usize, short: usize) -> PathBuf {
    let mut csv =
        String::from("region,district,site,site_type,product_category,product,month,stock_distributed\n");
    let mut push = |site: String, len: usize, salt: usize| {
        for t in 0..len {
            let year = 2017 + t / 12;
            let month = t % 12 + 1;
            let seasonal = 40.0 + 15.0 * ((t % 12) as f64 * 0.52).sin();
            let noise = ((t * 7 + salt * 13) % 11) as f64 - 5.0;
            let value = (seasonal + noise + salt as f64).max(0.0).round();
            writeln!(
                csv,
                "North,D1,{site},clinic,pills,P1,{year}-{month:02},{value}"
            )
            .unwrap();
        }
    };
    for i in 0..series {
        push(format!("S{i}"), months, i);
    }
    for i in 0..short {
        push(format!("T{i}"), 6, i);
    }
    let path = dir.join("dataset.csv");
    fs::write(&path, csv).unwrap();
    path
}

pub fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("job.json");
    let body = format!(
        r#"{{"dataset": "dataset.csv", "paths": 200, "seed": 7, "output_dir": "out", "methods": ["snaive", "ma", "ses", "croston_sba", "pooled", "hybrid_weighted_average"]{extra}}}"#
    );
    fs::write(&path, body).unwrap();
    path
}

/// All files under `dir`, relative path → bytes.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
