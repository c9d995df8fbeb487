//! Dataset directories: `meta.json`, `labels.csv`, one `segment_<k>_truth.csv`
//! per segment and one `segment_<k>_provider_<n>.csv` per provider view.
//!
//! Label rows are `t,road,state,value`; feature rows are
//! `t,lag,road,state,value`. Rows appear in tensor order (for labels with
//! `τ_o > 1`, the horizon index varies between `t` and `road`). Floats carry
//! 9 significant digits.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DatasetShape, DynamicsParams, NoiseProfile, ProviderView, RoadNetwork, TrafficDataset, WindowTensor, STATES, STATE_NAMES};
use crate::error::{Error, Result};

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    format_version: u32,
    network: RoadNetwork,
    time_steps: usize,
    dt_s: f64,
    input_lags: usize,
    horizon: usize,
    states: Vec<String>,
    seed: u64,
    dynamics: DynamicsParams,
    providers: Vec<Vec<NoiseProfile>>,
}

pub fn truth_file(k: usize) -> String {
    format!("segment_{k}_truth.csv")
}

pub fn provider_file(k: usize, n: usize) -> String {
    format!("segment_{k}_provider_{n}.csv")
}

fn write_tensor(path: &Path, w: &WindowTensor, with_lag: bool) -> Result<()> {
    let mut out = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let header: &[&str] = if with_lag {
        &["t", "lag", "road", "state", "value"]
    } else {
        &["t", "road", "state", "value"]
    };
    out.write_record(header).map_err(|e| csv_io(path, e))?;
    let mut i = 0;
    for t in 0..w.time_steps {
        for lag in 0..w.lags {
            for &road in &w.roads {
                for state in STATE_NAMES.iter().take(w.states) {
                    let value = format!("{:.8e}", w.data[i]);
                    let (t, lag, road) = (t.to_string(), lag.to_string(), road.to_string());
                    if with_lag {
                        out.write_record([&t, &lag, &road, *state, &value])
                    } else {
                        out.write_record([&t, &road, *state, &value])
                    }
                    .map_err(|e| csv_io(path, e))?;
                    i += 1;
                }
            }
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("{other:?}"),
        },
    }
}

/// Read a tensor whose shape is already known from `meta.json`.
fn read_tensor(path: &Path, template: WindowTensor, with_lag: bool) -> Result<WindowTensor> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        msg,
    };
    let expected_rows = template.data.len();
    let mut w = template;
    let per_t = w.sample_len();
    let mut i = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| csv_io(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if i >= expected_rows {
            i += 1;
            continue;
        }
        let fields: Vec<&str> = record.iter().collect();
        let want = if with_lag { 5 } else { 4 };
        if fields.len() != want {
            return Err(parse_err(line, format!("expected {want} columns, found {}", fields.len())));
        }
        let t = i / per_t;
        let rem = i % per_t;
        let lag = rem / (w.roads.len() * w.states);
        let road = w.roads[(rem / w.states) % w.roads.len()];
        let state = STATE_NAMES[rem % w.states];
        let num = |s: &str, what: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| parse_err(line, format!("column {what}: `{s}` is not an index")))
        };
        let got_t = num(fields[0], "t")?;
        // Label files carry the horizon index implicitly through row order.
        let (got_lag, col) = if with_lag { (num(fields[1], "lag")?, 2) } else { (lag, 1) };
        let got_road = num(fields[col], "road")?;
        let got_state = fields[col + 1];
        if (got_t, got_lag, got_road, got_state) != (t, lag, road, state) {
            return Err(Error::Validation(format!(
                "{}:{line}: row ({got_t}, {got_lag}, {got_road}, {got_state}) out of order, expected ({t}, {lag}, {road}, {state})",
                path.display()
            )));
        }
        let raw = fields[col + 2];
        w.data[i] = raw
            .parse()
            .map_err(|_| parse_err(line, format!("column value: `{raw}` is not a number")))?;
        i += 1;
    }
    if i != expected_rows {
        return Err(Error::Validation(format!(
            "{}: declared T = {} implies {expected_rows} rows, found {i}",
            path.display(),
            w.time_steps
        )));
    }
    Ok(w)
}

pub fn save_dataset(ds: &TrafficDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = Meta {
        format_version: FORMAT_VERSION,
        network: ds.network.clone(),
        time_steps: ds.shape.time_steps,
        dt_s: ds.shape.dt_s,
        input_lags: ds.shape.input_lags,
        horizon: ds.shape.horizon,
        states: STATE_NAMES.iter().map(|s| s.to_string()).collect(),
        seed: ds.seed,
        dynamics: ds.dynamics.clone(),
        providers: ds
            .providers
            .iter()
            .map(|row| row.iter().map(|p| p.noise).collect())
            .collect(),
    };
    let meta_path = dir.join("meta.json");
    let json = serde_json::to_string_pretty(&meta)?;
    fs::write(&meta_path, json + "\n").map_err(|e| Error::io(&meta_path, e))?;
    write_tensor(&dir.join("labels.csv"), &ds.labels, false)?;
    for (k, truth) in ds.truth.iter().enumerate() {
        write_tensor(&dir.join(truth_file(k)), truth, true)?;
    }
    for (k, row) in ds.providers.iter().enumerate() {
        for (n, view) in row.iter().enumerate() {
            write_tensor(&dir.join(provider_file(k, n)), &view.features, true)?;
        }
    }
    Ok(())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<TrafficDataset> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: Meta = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: meta_path.clone(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Validation(format!(
            "unsupported dataset format_version {} (expected {FORMAT_VERSION})",
            meta.format_version
        )));
    }
    if meta.states != STATE_NAMES {
        return Err(Error::Validation(format!("unexpected state names {:?}", meta.states)));
    }
    meta.network.validate()?;
    if meta.providers.len() > meta.network.segment_count() {
        return Err(Error::Validation(format!(
            "meta.json lists providers for {} segments but the network has {}",
            meta.providers.len(),
            meta.network.segment_count()
        )));
    }
    let shape = DatasetShape {
        time_steps: meta.time_steps,
        dt_s: meta.dt_s,
        input_lags: meta.input_lags,
        horizon: meta.horizon,
    };
    shape.validate()?;
    let all: Vec<usize> = (0..meta.network.road_count()).collect();
    let labels = read_tensor(
        &dir.join("labels.csv"),
        WindowTensor::zeros(shape.time_steps, shape.horizon, all, STATES),
        false,
    )?;
    let feature_template =
        |k: usize| WindowTensor::zeros(shape.time_steps, shape.input_lags, meta.network.segments[k].road_indices.clone(), STATES);
    let truth = (0..meta.network.segment_count())
        .map(|k| read_tensor(&dir.join(truth_file(k)), feature_template(k), true))
        .collect::<Result<Vec<_>>>()?;
    let providers = meta
        .providers
        .iter()
        .enumerate()
        .map(|(k, row)| {
            row.iter()
                .enumerate()
                .map(|(n, &noise)| {
                    let path: PathBuf = dir.join(provider_file(k, n));
                    Ok(ProviderView {
                        noise,
                        features: read_tensor(&path, feature_template(k), true)?,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrafficDataset {
        network: meta.network,
        shape,
        seed: meta.seed,
        dynamics: meta.dynamics,
        labels,
        truth,
        providers,
    })
}
