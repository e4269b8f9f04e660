//! Three interactive views for the browser page in `www/`. Each export
//! takes plain numbers or comma-separated lists and returns JSON, so the
//! page needs no bundler and the same functions run natively in tests.

use abco::dataset::{quotas, WinRate};
use abco::envs::{generate_maze, MazeConfig, MazeObservation};
use abco::experts::maze_expert_runs;
use abco::nn::SelfAttentionLayer;
use abco::autodiff::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("'{t}' is not a number")))
        .collect()
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("demo output serializes")
}

fn error_json(msg: impl std::fmt::Display) -> String {
    to_json(&serde_json::json!({ "error": msg.to_string() }))
}

#[derive(Debug, Serialize)]
pub struct MazeView {
    pub rows: usize,
    pub cols: usize,
    /// Closed-side bitmask per cell: 1 north, 2 south, 4 west, 8 east.
    pub walls: Vec<Vec<u8>>,
    /// How many of the expert runs passed through each cell.
    pub visits: Vec<Vec<usize>>,
    /// Cells of the first expert run, start to goal.
    pub path: Vec<(usize, usize)>,
    pub distinct_paths: usize,
}

/// A generated maze with `experts` scripted expert runs through it.
pub fn maze_view(size: usize, seed: u64, experts: usize) -> Result<MazeView, String> {
    if ![3, 5, 10].contains(&size) {
        return Err(format!("maze size must be 3, 5 or 10, got {size}"));
    }
    let cfg = MazeConfig::for_size(size);
    let maze = generate_maze(size, seed, cfg.extra_openings);
    let runs = maze_expert_runs(size, seed, experts.clamp(1, 100), seed).map_err(|e| e.to_string())?;
    let mut visits = vec![vec![0; size]; size];
    let mut paths: Vec<Vec<(usize, usize)>> = Vec::new();
    for run in &runs {
        let mut cells = Vec::new();
        for s in &run.states {
            let obs = MazeObservation::decode(size, s).map_err(|e| e.to_string())?;
            if cells.last() != Some(&obs.agent) {
                cells.push(obs.agent);
            }
        }
        let mut seen = cells.clone();
        seen.sort();
        seen.dedup();
        for (r, c) in seen {
            visits[r][c] += 1;
        }
        paths.push(cells);
    }
    let path = paths[0].clone();
    paths.sort();
    paths.dedup();
    Ok(MazeView {
        rows: maze.rows,
        cols: maze.cols,
        walls: maze.walls,
        visits,
        path,
        distinct_paths: paths.len(),
    })
}

#[wasm_bindgen]
pub fn maze_demo(size: usize, seed: u32, experts: usize) -> String {
    maze_view(size, u64::from(seed), experts).map_or_else(error_json, |v| to_json(&v))
}

#[derive(Debug, Serialize, PartialEq)]
pub struct Mix {
    pub win_probability: f64,
    pub post_size: usize,
    pub pre_size: usize,
    pub post_quotas: Vec<usize>,
    pub pre_quotas: Vec<usize>,
}

/// Sizes and per-action quotas of the IDM training set for a given win
/// rate: `successes` of `runs` rollouts reached the goal.
pub fn sampling_mix(
    successes: usize,
    runs: usize,
    total: usize,
    post_weights: &[f64],
    pre_weights: &[f64],
) -> Result<Mix, String> {
    if runs == 0 || successes > runs {
        return Err(format!("need 0 ≤ successes ≤ runs and runs > 0, got {successes}/{runs}"));
    }
    if post_weights.len() != pre_weights.len() {
        return Err("post and pre weights need the same number of actions".into());
    }
    if post_weights.iter().chain(pre_weights).any(|w| !w.is_finite() || *w < 0.0) {
        return Err("weights must be non-negative numbers".into());
    }
    let win = WinRate { successes, runs };
    let (post_size, pre_size) = (win.post_size(total), win.pre_size(total));
    Ok(Mix {
        win_probability: win.probability(),
        post_size,
        pre_size,
        post_quotas: quotas(post_size, post_weights),
        pre_quotas: quotas(pre_size, pre_weights),
    })
}

#[wasm_bindgen]
pub fn sampling_demo(successes: usize, runs: usize, total: usize, post_weights: &str, pre_weights: &str) -> String {
    let run = || -> Result<Mix, String> {
        sampling_mix(successes, runs, total, &parse_list(post_weights)?, &parse_list(pre_weights)?)
    };
    run().map_or_else(error_json, |m| to_json(&m))
}

#[derive(Debug, Serialize)]
pub struct AttentionView {
    /// `beta[j][i]`: weight of location `i` when producing location `j`.
    pub beta: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

/// A randomly initialized single-channel attention layer over `values`,
/// with its gate set to `gate`.
pub fn attention_view(values: &[f64], seed: u64, gate: f64) -> Result<AttentionView, String> {
    if values.is_empty() || values.len() > 64 {
        return Err("give between 1 and 64 values".into());
    }
    let n = values.len();
    let mut layer = SelfAttentionLayer::new(n, 1, 1, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(|e| e.to_string())?;
    layer.gate.data_mut()[0] = gate;
    let beta = layer.attention_map(values).map_err(|e| e.to_string())?;
    let x = Tensor::new(&[n, 1], values.to_vec()).map_err(|e| e.to_string())?;
    let output = layer.sa_forward(&x).map_err(|e| e.to_string())?.data().to_vec();
    Ok(AttentionView { beta, output })
}

#[wasm_bindgen]
pub fn attention_demo(values: &str, seed: u32, gate: f64) -> String {
    parse_list(values)
        .and_then(|v| attention_view(&v, u64::from(seed), gate))
        .map_or_else(error_json, |v| to_json(&v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_parse_and_reject_junk() {
        assert_eq!(parse_list("1, 2.5,,3").unwrap(), [1.0, 2.5, 3.0]);
        assert!(parse_list("1,x").is_err());
    }

    #[test]
    fn errors_come_back_as_json() {
        let v: serde_json::Value = serde_json::from_str(&maze_demo(4, 1, 3)).unwrap();
        assert!(v["error"].as_str().unwrap().contains("size"));
        let v: serde_json::Value = serde_json::from_str(&sampling_demo(3, 2, 10, "1", "1")).unwrap();
        assert!(v.get("error").is_some());
    }
}
