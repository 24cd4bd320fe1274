"""Incremental edge selection: reconstruction residuals, mask optimization, pacing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gcn
from .graphs import Graph


@dataclass
class PacingSchedule:
    zeta: float
    rounds: int

    def __post_init__(self):
        if self.zeta <= 0:
            raise ValueError("zeta must be positive")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")


@dataclass
class EdgeMask:
    """Per-edge weights in [0,1], applied symmetrically to an undirected edge list."""

    edges: np.ndarray       # (num_edges, 2) reference to the owning graph's edges
    weights: np.ndarray     # (num_edges,) float64 in [0, 1]

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape[0] != self.edges.shape[0]:
            raise ValueError("weights must align with the edge list")

    def copy(self) -> "EdgeMask":
        return EdgeMask(self.edges, self.weights.copy())


def uniform_mask(g: Graph, value: float = 0.5) -> EdgeMask:
    return EdgeMask(g.edges, np.full(g.num_edges, float(value)))


def g_lambda(sched: PacingSchedule, t: int) -> float:
    """Curriculum threshold min(zeta*t/R, 1)."""
    if t < 0:
        raise ValueError("round index must be nonnegative")
    return min(sched.zeta * t / sched.rounds, 1.0)


def reconstruct(embeddings: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Per-edge cosine similarity of endpoint embeddings; zero vectors give 0."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size == 0:
        return np.zeros(0)
    hu = embeddings[edges[:, 0]]
    hv = embeddings[edges[:, 1]]
    nu = np.linalg.norm(hu, axis=1)
    nv = np.linalg.norm(hv, axis=1)
    denom = nu * nv
    dots = np.einsum("ij,ij->i", hu, hv)
    out = np.zeros(edges.shape[0])
    ok = denom > 0
    out[ok] = dots[ok] / denom[ok]
    return np.clip(out, -1.0, 1.0)


def residuals(recon: np.ndarray) -> np.ndarray:
    """Edge difficulty |1 - cos|; the adjacency entry on a listed edge is 1."""
    return np.abs(1.0 - recon)


def mask_objective(mask: EdgeMask, recon: np.ndarray, lam: float,
                   gamma: float, anchor: EdgeMask) -> float:
    """sum S*(r - lambda) + (gamma/2) * sum (S - anchor)^2."""
    if recon.shape[0] != mask.weights.shape[0] or anchor.weights.shape[0] != mask.weights.shape[0]:
        raise ValueError("mask, reconstruction and anchor must align")
    r = residuals(recon)
    return float(np.sum(mask.weights * (r - lam))
                 + 0.5 * gamma * np.sum((mask.weights - anchor.weights) ** 2))


def mask_step(mask: EdgeMask, recon: np.ndarray, lam: float, gamma: float,
              anchor: EdgeMask, lr_mask: float, n_steps: int) -> EdgeMask:
    """n_steps of clipped gradient descent on the mask objective."""
    if lr_mask <= 0:
        raise ValueError("lr_mask must be positive")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    r = residuals(recon)
    w = mask.weights.copy()
    for _ in range(n_steps):
        grad = (r - lam) + gamma * (w - anchor.weights)
        w = np.clip(w - lr_mask * grad, 0.0, 1.0)
    return EdgeMask(mask.edges, w)


def apply_mask(g: Graph, mask: EdgeMask) -> np.ndarray:
    """Per-edge weights for normalize_masked_adjacency; structure is unchanged."""
    if mask.edges.shape != g.edges.shape:
        raise ValueError("mask does not belong to this graph")
    return mask.weights


def warmup_mask(g: Graph, pretrained: gcn.GcnParams, sched: PacingSchedule,
                gamma: float, lr_mask: float, warm_steps: int,
                init_value: float = 0.5, use_logits: bool = False) -> EdgeMask:
    """Initialize a uniform mask and pre-shape it with a pretrained model's reconstruction."""
    mask = uniform_mask(g, init_value)
    if warm_steps == 0:
        return mask
    adj = gcn.normalize_masked_adjacency(g.edges, apply_mask(g, mask), g.num_nodes)
    emb = gcn.forward(pretrained, adj, g.features)
    H = emb.H2 if use_logits else emb.H1
    recon = reconstruct(H, g.edges)
    lam = g_lambda(sched, 1)
    return mask_step(mask, recon, lam, gamma, mask, lr_mask, warm_steps)
