use super::HarnessError;
use crate::geometry::{read_grid_file, write_grid_file, MaskedGrid};
use crate::solver::ScalarField;
use std::fs;
use std::path::{Path, PathBuf};

/// `{scenario}_t{index:06}.field`; the index counts probes, so names sort by time.
pub fn snapshot_name(scenario: &str, index: usize) -> String {
    format!("{scenario}_t{index:06}.field")
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}

pub(crate) fn read_text(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}

/// Writes the mask and the values of `u` as a portable grid file.
pub fn export_field(u: &ScalarField, grid: &MaskedGrid, path: &Path) -> Result<(), HarnessError> {
    write_text(path, &write_grid_file(grid, Some((u.t, &u.values))))
}

/// Reads a field written by [`export_field`] and checks it belongs to `grid`.
pub fn import_field(path: &Path, grid: &MaskedGrid) -> Result<ScalarField, HarnessError> {
    let text = read_text(path)?;
    let file = read_grid_file(&text).map_err(|e| HarnessError::Format { path: path.to_path_buf(), message: e.to_string() })?;
    let mismatch = |m: &str| HarnessError::Format { path: path.to_path_buf(), message: m.to_string() };
    if (file.nx, file.ny) != grid.dims() || file.h != grid.spacing() || file.origin != grid.origin() {
        return Err(mismatch("grid layout differs from the scenario grid"));
    }
    if file.mask != grid.mask() {
        return Err(mismatch("cell mask differs from the scenario grid"));
    }
    match (file.time, file.values) {
        (Some(t), Some(values)) => Ok(ScalarField::new(t, values)),
        _ => Err(mismatch("file carries no snapshot")),
    }
}

/// Snapshot files of `scenario` in `dir`, sorted by time index.
pub fn list_snapshots(dir: &Path, scenario: &str) -> Result<Vec<PathBuf>, HarnessError> {
    let entries = fs::read_dir(dir).map_err(|source| HarnessError::Io { path: dir.to_path_buf(), source })?;
    let prefix = format!("{scenario}_t");
    let mut out = Vec::new();
    for e in entries {
        let e = e.map_err(|source| HarnessError::Io { path: dir.to_path_buf(), source })?;
        let name = e.file_name().to_string_lossy().into_owned();
        if let Some(rest) = name.strip_prefix(&prefix).and_then(|r| r.strip_suffix(".field")) {
            if rest.len() == 6 && rest.bytes().all(|b| b.is_ascii_digit()) {
                out.push(e.path());
            }
        }
    }
    out.sort();
    Ok(out)
}

const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Renders field heatmaps and interface traces from a run directory.

Reads only *.field and *.csv files; usage: plot.py [run_dir]
"""
import csv
import glob
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def read_field(path):
    with open(path) as f:
        lines = [l.rstrip("\n") for l in f]
    if lines[0].strip() != "branchfront-grid 1":
        raise ValueError(f"{path}: not a grid file")
    head = {}
    k = 1
    while lines[k] != "mask":
        parts = lines[k].split()
        head[parts[0]] = parts[1:]
        k += 1
    nx, ny = int(head["nx"][0]), int(head["ny"][0])
    h = float(head["h"][0])
    ox, oy = float(head["origin"][0]), float(head["origin"][1])
    mask = np.array([[c == "1" for c in lines[k + 1 + j]] for j in range(ny)])
    k += 1 + ny
    t = float(lines[k].split()[1])
    values = np.array([float(v) for v in lines[k + 2 : k + 2 + int(mask.sum())]])
    grid = np.full((ny, nx), np.nan)
    grid[mask] = values
    return t, grid, (ox, ox + nx * h, oy, oy + ny * h)


def read_csv(path):
    with open(path) as f:
        return list(csv.DictReader(f))


def heatmaps(run):
    for path in sorted(glob.glob(os.path.join(run, "*.field"))):
        t, grid, extent = read_field(path)
        fig, ax = plt.subplots(figsize=(6, 5))
        im = ax.imshow(grid, origin="lower", extent=extent, vmin=0.0, vmax=1.0, cmap="viridis")
        ax.set_title(f"{os.path.basename(path)}  t = {t:.3f}")
        ax.set_aspect("equal")
        fig.colorbar(im, ax=ax)
        fig.savefig(path[: -len(".field")] + ".png", dpi=110)
        plt.close(fig)


def traces(run):
    path = os.path.join(run, "interfaces.csv")
    if not os.path.exists(path):
        return
    rows = read_csv(path)
    if not rows:
        return
    fig, ax = plt.subplots(figsize=(6, 4))
    for col in [c for c in rows[0] if c.startswith("xi_")]:
        pts = [(float(r["t"]), float(r[col])) for r in rows if r[col] != ""]
        if pts:
            ts, xs = zip(*pts)
            ax.plot(ts, xs, label=f"branch {col[3:]}")
    ax.set_xlabel("t")
    ax.set_ylabel("interface position")
    ax.legend()
    fig.savefig(os.path.join(run, "interfaces.png"), dpi=110)
    plt.close(fig)


def sweep(run):
    path = os.path.join(run, "sweep.csv")
    if not os.path.exists(path):
        return
    rows = read_csv(path)
    fig, ax = plt.subplots(figsize=(6, 3))
    xs = [float(r["value"]) for r in rows]
    ys = [1.0 if r["outcome"] == "invaded" else 0.0 if r["outcome"] == "blocked" else 0.5 for r in rows]
    ax.plot(xs, ys, "o-")
    ax.set_yticks([0.0, 0.5, 1.0], ["blocked", "indeterminate", "invaded"])
    ax.set_xscale("log")
    ax.set_xlabel("sweep value")
    fig.savefig(os.path.join(run, "sweep.png"), dpi=110, bbox_inches="tight")
    plt.close(fig)


def waves(run):
    path = os.path.join(run, "wave_table.csv")
    if not os.path.exists(path):
        return
    rows = read_csv(path)
    fig, ax = plt.subplots(figsize=(5, 4))
    th = [float(r["theta"]) for r in rows]
    ax.plot(th, [float(r["speed"]) for r in rows], "o", label="computed")
    ax.plot(th, [float(r["closed_form"]) for r in rows], "-", label="closed form")
    ax.set_xlabel("theta")
    ax.set_ylabel("speed")
    ax.legend()
    fig.savefig(os.path.join(run, "wave_table.png"), dpi=110)
    plt.close(fig)


def main():
    run = sys.argv[1] if len(sys.argv) > 1 else os.path.dirname(os.path.abspath(__file__))
    heatmaps(run)
    traces(run)
    sweep(run)
    waves(run)


if __name__ == "__main__":
    main()
"#;

/// Writes `plot.py` into `out_dir` and returns its path.
pub fn emit_plots(out_dir: &Path) -> Result<PathBuf, HarnessError> {
    let path = out_dir.join("plot.py");
    write_text(&path, PLOT_SCRIPT)?;
    Ok(path)
}
