"""Two-layer GCN with analytic gradients, proximal cross-entropy loss and Adam."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass
class GcnParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def copy(self) -> "GcnParams":
        return GcnParams(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy())

    def tensors(self):
        return (("W1", self.W1), ("b1", self.b1), ("W2", self.W2), ("b2", self.b2))

    def sq_distance(self, other: "GcnParams") -> float:
        return sum(float(np.sum((a - b) ** 2))
                   for (_, a), (_, b) in zip(self.tensors(), other.tensors()))


@dataclass
class Embeddings:
    H1: np.ndarray  # (n, hidden) post-ReLU
    H2: np.ndarray  # (n, num_classes) logits


@dataclass
class AdamState:
    m: GcnParams
    v: GcnParams
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_params(d_x: int, hidden: int, num_classes: int, seed: int) -> GcnParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    lim1 = np.sqrt(6.0 / (d_x + hidden))
    lim2 = np.sqrt(6.0 / (hidden + num_classes))
    return GcnParams(
        W1=rng.uniform(-lim1, lim1, size=(d_x, hidden)),
        b1=np.zeros(hidden),
        W2=rng.uniform(-lim2, lim2, size=(hidden, num_classes)),
        b2=np.zeros(num_classes),
    )


def init_adam(params: GcnParams) -> AdamState:
    zeros = GcnParams(*(np.zeros_like(t) for _, t in params.tensors()))
    zeros2 = GcnParams(*(np.zeros_like(t) for _, t in params.tensors()))
    return AdamState(m=zeros, v=zeros2)


def normalize_masked_adjacency(edges: np.ndarray, mask_weights: np.ndarray,
                               num_nodes: int) -> sp.csr_matrix:
    """Symmetric normalization D^{-1/2} (S*A + I) D^{-1/2} over mask-weighted edges."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    w = np.asarray(mask_weights, dtype=np.float64)
    if w.shape[0] != edges.shape[0]:
        raise ValueError("mask_weights must align with the edge list")
    if w.size and w.min() < 0:
        raise ValueError("mask weights must be nonnegative")
    rows = np.concatenate([edges[:, 0], edges[:, 1], np.arange(num_nodes)])
    cols = np.concatenate([edges[:, 1], edges[:, 0], np.arange(num_nodes)])
    vals = np.concatenate([w, w, np.ones(num_nodes)])
    A = sp.csr_matrix((vals, (rows, cols)), shape=(num_nodes, num_nodes))
    deg = np.asarray(A.sum(axis=1)).ravel()
    dinv = 1.0 / np.sqrt(deg)
    D = sp.diags(dinv)
    return (D @ A @ D).tocsr()


def forward(params: GcnParams, norm_adj: sp.csr_matrix, features: np.ndarray) -> Embeddings:
    """H1 = ReLU(A X W1 + b1); logits H2 = A H1 W2 + b2."""
    if features.shape[1] != params.W1.shape[0]:
        raise ValueError("feature dimension does not match W1")
    Z1 = norm_adj @ (features @ params.W1) + params.b1
    H1 = np.maximum(Z1, 0.0)
    H2 = norm_adj @ (H1 @ params.W2) + params.b2
    return Embeddings(H1=H1, H2=H2)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grads(params: GcnParams, norm_adj: sp.csr_matrix, features: np.ndarray,
                   labels: np.ndarray, train_mask: np.ndarray,
                   anchor: GcnParams, beta: float):
    """Mean train cross-entropy plus (beta/2)||params - anchor||^2, with exact gradients."""
    train_mask = np.asarray(train_mask, dtype=bool)
    n_train = int(train_mask.sum())
    if n_train == 0:
        raise ValueError("loss requires at least one train node")
    AX = norm_adj @ features
    Z1 = AX @ params.W1 + params.b1
    H1 = np.maximum(Z1, 0.0)
    AH1 = norm_adj @ H1
    Z2 = AH1 @ params.W2 + params.b2
    P = _softmax(Z2)
    idx = np.flatnonzero(train_mask)
    logp = Z2 - Z2.max(axis=1, keepdims=True)
    logp = logp - np.log(np.exp(logp).sum(axis=1, keepdims=True))
    ce = -float(logp[idx, labels[idx]].mean())
    prox = 0.5 * beta * params.sq_distance(anchor)
    loss = ce + prox

    dZ2 = np.zeros_like(Z2)
    dZ2[idx] = P[idx]
    dZ2[idx, labels[idx]] -= 1.0
    dZ2 /= n_train
    gW2 = AH1.T @ dZ2 + beta * (params.W2 - anchor.W2)
    gb2 = dZ2.sum(axis=0) + beta * (params.b2 - anchor.b2)
    dH1 = (norm_adj @ dZ2) @ params.W2.T  # norm_adj is symmetric
    dZ1 = dH1 * (Z1 > 0)
    gW1 = AX.T @ dZ1 + beta * (params.W1 - anchor.W1)
    gb1 = dZ1.sum(axis=0) + beta * (params.b1 - anchor.b1)
    return loss, GcnParams(gW1, gb1, gW2, gb2)


def adam_step(params: GcnParams, grads: GcnParams, state: AdamState, lr: float):
    """Bias-corrected Adam update; returns (new_params, new_state)."""
    for name, g in grads.tensors():
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient in tensor {name}")
    t = state.step + 1
    new_p, new_m, new_v = [], [], []
    for (_, p), (_, g), (_, m), (_, v) in zip(params.tensors(), grads.tensors(),
                                              state.m.tensors(), state.v.tensors()):
        m2 = state.beta1 * m + (1 - state.beta1) * g
        v2 = state.beta2 * v + (1 - state.beta2) * g * g
        mhat = m2 / (1 - state.beta1 ** t)
        vhat = v2 / (1 - state.beta2 ** t)
        new_p.append(p - lr * mhat / (np.sqrt(vhat) + state.eps))
        new_m.append(m2)
        new_v.append(v2)
    return (GcnParams(*new_p),
            AdamState(m=GcnParams(*new_m), v=GcnParams(*new_v), step=t,
                      beta1=state.beta1, beta2=state.beta2, eps=state.eps))


def accuracy(emb: Embeddings, labels: np.ndarray, mask: np.ndarray) -> float:
    """Argmax accuracy over the masked nodes; argmax ties break to smallest class."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("accuracy over an empty split is undefined")
    pred = np.argmax(emb.H2[mask], axis=1)
    return float(np.mean(pred == labels[mask]))


def save_params_csv(params: GcnParams, path: str):
    """Flat `tensor,row,col,value` checkpoint dump for debugging."""
    with open(path, "w", newline="\n") as f:
        f.write("tensor,row,col,value\n")
        for name, t in params.tensors():
            mat = np.atleast_2d(t)
            for i in range(mat.shape[0]):
                for j in range(mat.shape[1]):
                    f.write(f"{name},{i},{j},{mat[i, j]!r}\n")
