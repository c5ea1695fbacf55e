#![allow(dead_code)]

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use trace_edges::tensor_io::{
    write_attention_stack, write_mask_pgm, write_panoptic, AttentionBlock, AttentionStack,
    PanopticLabelMap, PixelGrid, SegmentRecord, TimestepAttention,
};
use trace_edges_cli::commands::{write_mask_index, MaskRecord};

pub fn trace_edges(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trace-edges"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn grid<T: Clone>(h: usize, w: usize, f: impl Fn(usize, usize) -> T) -> PixelGrid<T> {
    PixelGrid::new(h, w, (0..h * w).map(|i| f(i / w, i % w)).collect()).unwrap()
}

pub fn uniform_block(width: u32) -> AttentionBlock {
    let n = (width * width) as usize;
    AttentionBlock::new(width, vec![1.0 / n as f32; n * n]).unwrap()
}

/// Same uniform map at every timestep.
pub fn write_uniform_stack(path: &Path, width: u32, timesteps: &[u32]) {
    let steps = timesteps
        .iter()
        .map(|&t| TimestepAttention {
            timestep: t,
            blocks: vec![uniform_block(width)],
        })
        .collect();
    write_attention_stack(&AttentionStack::new(steps).unwrap(), path).unwrap();
}

/// Writes the masks and their index into `dir`.
pub fn write_masks(
    dir: &Path,
    masks: &[PixelGrid<f64>],
    labels: &[Option<u32>],
    scores: &[Option<f64>],
) {
    fs::create_dir_all(dir).unwrap();
    let mut records = Vec::new();
    for (k, m) in masks.iter().enumerate() {
        let file = format!("m{k}.pgm");
        write_mask_pgm(m, dir.join(&file)).unwrap();
        records.push(MaskRecord {
            file,
            label: labels.get(k).copied().flatten(),
            score: scores.get(k).copied().flatten(),
        });
    }
    write_mask_index(dir, &records).unwrap();
}

pub fn binary(h: usize, w: usize, f: impl Fn(usize, usize) -> bool) -> PixelGrid<f64> {
    grid(h, w, |y, x| if f(y, x) { 1.0 } else { 0.0 })
}

pub fn panoptic(
    h: usize,
    w: usize,
    ids: impl Fn(usize, usize) -> u32,
    records: &[(u32, u32, bool)],
) -> PanopticLabelMap {
    let recs: Vec<SegmentRecord> = records
        .iter()
        .map(|&(id, category, is_thing)| SegmentRecord {
            id,
            category,
            is_thing,
        })
        .collect();
    PanopticLabelMap::from_records(grid(h, w, ids), &recs).unwrap()
}

pub fn write_pan(path: &Path, pan: &PanopticLabelMap) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    write_panoptic(pan, path).unwrap();
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Every file below `dir`, as sorted `(relative path, bytes)` pairs.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
