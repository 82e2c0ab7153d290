#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use loadcast::matrix::Matrix;
use loadcast::model::{gru_cell_forward, lstm_cell_forward, Layer, Network};

pub const FEATURES: [&str; 4] = ["cpu_rate", "memory", "disk_io_time", "disk_space"];

pub fn feature_names() -> Vec<String> {
    FEATURES.iter().map(|s| s.to_string()).collect()
}

/// Four coupled sinusoids with AR(1) noise, in raw (unscaled) units.
pub fn coupled_sines(len: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ar = [0.0f64; 4];
    let tau = std::f64::consts::TAU;
    let mut m = Matrix::zeros(len, 4);
    for t in 0..len {
        for a in ar.iter_mut() {
            *a = 0.5 * *a + 0.01 * rng.sample::<f64, _>(StandardNormal);
        }
        let x = t as f64;
        let base = (tau * x / 12.0).sin();
        let slow = (tau * x / 40.0).sin();
        let cpu = 0.5 + 0.3 * base + 0.1 * slow + ar[0];
        let mem = 0.4 + 0.2 * (tau * x / 12.0 + 0.8).sin() + 0.5 * (cpu - 0.5) + ar[1];
        let io = 0.3 + 0.15 * base * slow + 0.2 * (cpu - 0.5) + ar[2];
        let disk = 0.6 + 0.1 * slow + 0.05 * (tau * x / 12.0 + 2.0).cos() + ar[3];
        for (c, v) in [cpu, mem, io, disk].into_iter().enumerate() {
            m.set(t, c, v);
        }
    }
    m
}

/// Single-feature stream whose sine frequency and amplitude change at `len / 2`.
/// Values stay inside `[0, 1]`.
pub fn two_regime(len: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = std::f64::consts::TAU;
    let mut ar = 0.0f64;
    Matrix::from_fn(len, 1, |t, _| {
        ar = 0.5 * ar + 0.005 * rng.sample::<f64, _>(StandardNormal);
        let x = t as f64;
        let v = if t < len / 2 {
            0.5 + 0.2 * (tau * x / 24.0).sin()
        } else {
            0.5 + 0.4 * (tau * x / 10.0).sin()
        };
        v + ar
    })
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Forward pass of the unpruned network with the listed units' hidden
/// activations forced to zero after every step.
pub fn masked_forward(net: &Network, window: &Matrix, masked: &[Vec<usize>]) -> Vec<f64> {
    let mut h: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.hidden()]).collect();
    let mut c = h.clone();
    for t in 0..window.rows() {
        let mut x = window.row(t).to_vec();
        for (l, layer) in net.layers.iter().enumerate() {
            let mut out = match layer {
                Layer::Gru(p) => gru_cell_forward(p, &x, &h[l]).unwrap().0,
                Layer::Lstm(p) => {
                    let (hn, cn, _) = lstm_cell_forward(p, &x, &h[l], &c[l]).unwrap();
                    c[l] = cn;
                    hn
                }
            };
            for &u in &masked[l] {
                out[u] = 0.0;
            }
            h[l] = out.clone();
            x = out;
        }
    }
    let last = h.last().unwrap();
    (0..net.head_w.rows())
        .map(|r| {
            net.head_b[r]
                + net
                    .head_w
                    .row(r)
                    .iter()
                    .zip(last)
                    .map(|(w, v)| w * v)
                    .sum::<f64>()
        })
        .collect()
}

pub fn brute_mae(a: &[f64], p: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - p[i]).abs();
    }
    s / a.len() as f64
}

pub fn brute_rmse(a: &[f64], p: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - p[i]).powi(2);
    }
    (s / a.len() as f64).sqrt()
}

/// Writes a `simple`-schema trace: `time,machine,cpu,memory,disk_io,disk_space`.
/// Machine `m1` gets three tasks per 300 s bucket over `buckets` buckets with
/// bucket 5 left empty; machine `m2` gets one task per bucket.
pub fn write_simple_trace(path: &std::path::Path, buckets: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = std::f64::consts::TAU;
    let mut out = String::new();
    for b in 0..buckets {
        let t0 = b as i64 * 300;
        let phase = (tau * b as f64 / 12.0).sin();
        if b != 5 {
            for task in 0..3 {
                let j: f64 = rng.gen_range(-0.01..0.01);
                out.push_str(&format!(
                    "{},m1,{:.6},{:.6},{:.6},{:.8}\n",
                    t0 + 10 * task,
                    0.1 + 0.05 * phase + j,
                    0.05 + 0.01 * phase + j / 4.0,
                    0.002 + 0.001 * phase.abs(),
                    0.0001 + j.abs() / 1000.0
                ));
            }
        }
        out.push_str(&format!("{},m2,0.5,0.5,0.5,0.5\n", t0 + 1));
    }
    std::fs::write(path, out).unwrap();
}

pub struct CliOutput {
    pub code: i32,
    pub stdout: Vec<u8>,
    pub stderr: String,
}

/// Runs the `loadcast` binary with `LOADCAST_CONFIG` cleared.
pub fn run_cli<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> CliOutput {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_loadcast"))
        .args(args)
        .env_remove("LOADCAST_CONFIG")
        .output()
        .expect("binary runs");
    CliOutput {
        code: out.status.code().unwrap_or(-1),
        stdout: out.stdout,
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// Runs `prepare → train → forecast` in `dir` and returns the bytes of the
/// series, model and forecast files.
pub fn pipeline_bytes(dir: &std::path::Path) -> [Vec<u8>; 3] {
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
    write_simple_trace(&dir.join("trace.csv"), 120, 5);
    let steps: [Vec<String>; 3] = [
        vec![
            "prepare",
            "--schema",
            "simple",
            "--trace",
            &p("trace.csv"),
            "--machine",
            "m1",
            "--out",
            &p("series.csv"),
        ]
        .into_iter()
        .map(String::from)
        .collect(),
        vec![
            "train",
            "--series",
            &p("series.csv"),
            "--model",
            &p("model.lcm"),
            "--hidden",
            "6",
            "--layers",
            "2",
            "--lookback",
            "6",
            "--epochs",
            "3",
            "--lr",
            "0.2",
            "--batch-size",
            "16",
            "--seed",
            "9",
            "--report",
            &p("report.json"),
        ]
        .into_iter()
        .map(String::from)
        .collect(),
        vec![
            "forecast",
            "--model",
            &p("model.lcm"),
            "--series",
            &p("series.csv"),
            "--steps",
            "3",
            "--out",
            &p("forecast.csv"),
        ]
        .into_iter()
        .map(String::from)
        .collect(),
    ];
    for args in &steps {
        let out = run_cli(args);
        assert_eq!(out.code, 0, "{args:?} failed: {}", out.stderr);
    }
    ["series.csv", "model.lcm", "forecast.csv"].map(|f| std::fs::read(dir.join(f)).unwrap())
}
