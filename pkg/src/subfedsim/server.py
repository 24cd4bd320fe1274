"""Server stage: reference-graph indicators, linear CKA, weighted aggregation, adaptive tau."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import gcn, ies
from .graphs import Graph


@dataclass
class ReferenceGraph:
    """Shared random graph plus the per-client masks persisted across rounds."""

    graph: Graph
    pacing: ies.PacingSchedule
    per_client_masks: list = field(default_factory=list)  # K EdgeMasks

    @classmethod
    def create(cls, graph: Graph, pacing: ies.PacingSchedule, num_clients: int,
               init_value: float = 0.5) -> "ReferenceGraph":
        masks = [ies.uniform_mask(graph, init_value) for _ in range(num_clients)]
        return cls(graph=graph, pacing=pacing, per_client_masks=masks)


def ext_vectorize(mask: ies.EdgeMask, prune_frac: float) -> np.ndarray:
    """Flatten mask weights and zero the lowest prune_frac fraction.

    Ties break toward lower edge index (stable ascending sort).
    """
    if not 0.0 <= prune_frac < 1.0:
        raise ValueError("prune_frac must lie in [0, 1)")
    u = mask.weights.copy()
    k = int(math.floor(prune_frac * u.shape[0]))
    if k > 0:
        order = np.argsort(u, kind="stable")
        u[order[:k]] = 0.0
    return u


def build_indicator(ref: ReferenceGraph, client_params: gcn.GcnParams, client_id: int,
                    round_t: int, gamma: float, lr_aggr: float, n_steps: int,
                    prune_frac: float = 0.3, use_logits: bool = False) -> np.ndarray:
    """Optimize the client's reference mask with its current model, then ext-vectorize.

    Mutates ref.per_client_masks[client_id] (mask state persists across rounds).
    """
    g = ref.graph
    if g.features.shape[1] != client_params.W1.shape[0]:
        raise ValueError("client parameters do not match the reference graph features")
    mask = ref.per_client_masks[client_id]
    if n_steps > 0:
        adj = gcn.normalize_masked_adjacency(g.edges, mask.weights, g.num_nodes)
        emb = gcn.forward(client_params, adj, g.features)
        H = emb.H2 if use_logits else emb.H1
        recon = ies.reconstruct(H, g.edges)
        lam = ies.g_lambda(ref.pacing, round_t)
        mask = ies.mask_step(mask, recon, lam, gamma, mask, lr_aggr, n_steps)
        ref.per_client_masks[client_id] = mask
    return ext_vectorize(mask, prune_frac)


def linear_cka(u: np.ndarray, v: np.ndarray) -> float:
    """Linear CKA of two indicator vectors: squared cosine of their angle."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError("indicators must have equal length")
    uu = float(u @ u)
    vv = float(v @ v)
    if uu == 0.0 or vv == 0.0:
        raise ValueError("linear CKA is undefined for a zero vector")
    uv = float(u @ v)
    return (uv * uv) / (uu * vv)


def similarity_matrix(indicators: list) -> np.ndarray:
    """Pairwise linear CKA; symmetric with unit diagonal."""
    K = len(indicators)
    sim = np.eye(K)
    for k in range(K):
        for n in range(k + 1, K):
            try:
                s = linear_cka(indicators[k], indicators[n])
            except ValueError as exc:
                raise ValueError(f"similarity failed for clients {k},{n}: {exc}") from exc
            sim[k, n] = sim[n, k] = s
    return sim


def softmax_weights(sim_row: np.ndarray, tau: float) -> np.ndarray:
    z = tau * np.asarray(sim_row, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def aggregate(sim_row: np.ndarray, tau: float, all_params: list) -> gcn.GcnParams:
    """Personalized parameter mixture weighted by softmax(tau * similarity)."""
    if not math.isfinite(tau):
        raise ValueError("tau must be finite")
    for cid, p in enumerate(all_params):
        for name, t in p.tensors():
            if not np.all(np.isfinite(t)):
                raise ValueError(f"non-finite parameter {name} from client {cid}")
    alpha = softmax_weights(sim_row, tau)
    acc = [np.zeros_like(t) for _, t in all_params[0].tensors()]
    for a, p in zip(alpha, all_params):
        for i, (_, t) in enumerate(p.tensors()):
            acc[i] += a * t
    return gcn.GcnParams(*acc)


@dataclass
class TauState:
    """Greedy per-client temperature scheduler state."""

    tau: float = 5.0
    s: int = 1
    r_good: int = 0
    r_bad: int = 0
    patience: int = 5
    rho: float = 1.25
    tau_min: float = 3.0
    tau_max: float = 10.0
    last_perf: float = -math.inf


def tau_step(state: TauState, perf: float) -> TauState:
    """One scheduler update from the current round's performance signal."""
    if not math.isfinite(perf):
        raise ValueError("performance signal must be finite")
    st = TauState(**vars(state))
    if perf >= st.last_perf:
        st.r_good += 1
        st.r_bad = 0
    else:
        st.r_bad += 1
        st.r_good = 0
    if st.r_good > st.patience:
        tau = st.rho ** st.s * st.tau
        st.r_good = 0
    elif st.r_bad > st.patience:
        st.s = -st.s
        tau = st.rho ** st.s * st.tau
        st.r_bad = 0
    else:
        tau = st.tau
    st.tau = min(max(tau, st.tau_min), st.tau_max)
    st.last_perf = perf
    return st
