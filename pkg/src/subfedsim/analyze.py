"""Plot-ready CSV analyses derived from run artifacts."""

from __future__ import annotations

import json
import os

import numpy as np

from .experiment import bin_match_ratio, same_cluster_weight_proportion


class AnalysisError(ValueError):
    pass


def _require(path: str):
    if not os.path.isfile(path):
        raise AnalysisError(f"missing artifact file {path}")
    return path


def _load_summary(run_dir: str) -> dict:
    with open(_require(os.path.join(run_dir, "summary.json"))) as f:
        return json.load(f)


def _load_matrix(path: str) -> np.ndarray:
    return np.loadtxt(_require(path), delimiter=",", ndmin=2)


def weight_proportion_csv(run_dir: str) -> str:
    """Per-round same-cluster similarity mass: `round,proportion`."""
    summary = _load_summary(run_dir)
    clusters = summary.get("clusters")
    if clusters is None:
        raise AnalysisError(f"run {run_dir} has no cluster ground truth in summary.json")
    rounds = summary["config"]["rounds"]
    lines = ["round,proportion"]
    for t in range(1, rounds + 1):
        sim = _load_matrix(os.path.join(run_dir, f"similarity_round_{t}.csv"))
        lines.append(f"{t},{float(same_cluster_weight_proportion(sim, clusters))!r}")
    return "\n".join(lines) + "\n"


def _load_recon(run_dir: str, t: int, client: int) -> np.ndarray:
    path = _require(os.path.join(run_dir, f"refrecon_round_{t}_client_{client}.csv"))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 2]


def bin_match_csv(run_dir: str, num_bins: int = 5) -> str:
    """Bin-match of each client's round-1 vs final-round reference reconstruction."""
    summary = _load_summary(run_dir)
    rounds = summary["config"]["rounds"]
    K = summary["config"]["num_clients"]
    dump_rounds = summary["config"].get("dump_rounds") or [1, rounds]
    t0, t1 = dump_rounds[0], dump_rounds[-1]
    lines = ["bin,ratio,client"]
    for k in range(K):
        ref = _load_recon(run_dir, t0, k)
        other = _load_recon(run_dir, t1, k)
        ratios = bin_match_ratio(ref, other, num_bins)
        for b, r in enumerate(ratios):
            lines.append(f"{b},{'' if np.isnan(r) else repr(float(r))},{k}")
    return "\n".join(lines) + "\n"


def learning_curve_csv(run_dir: str) -> str:
    """Per-round test accuracy per client, copied from metrics.csv."""
    path = _require(os.path.join(run_dir, "metrics.csv"))
    lines = ["round,test_acc,client"]
    with open(path) as f:
        header = f.readline().rstrip("\n").split(",")
        idx = {name: i for i, name in enumerate(header)}
        for line in f:
            parts = line.rstrip("\n").split(",")
            if len(parts) < len(header):
                continue
            lines.append(f"{parts[idx['round']]},{parts[idx['test_acc']]},{parts[idx['client']]}")
    return "\n".join(lines) + "\n"


ANALYSES = {
    "weight-proportion": weight_proportion_csv,
    "bin-match": bin_match_csv,
    "learning-curve": learning_curve_csv,
}
