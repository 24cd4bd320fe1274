"""Round orchestration: warm-up, local stage, server stage, baselines, metrics."""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import gcn, graphs, ies, server
from .config import ExperimentConfig, to_dict

__version__ = "0.1.0"

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def mix_seed(*parts: int) -> int:
    """Deterministic 64-bit seed derivation from (global seed, client id, round, ...)."""
    h = 0
    for p in parts:
        h = _splitmix64(h ^ (int(p) & _MASK64))
    return h


@dataclass
class ClientState:
    client_id: int
    graph: graphs.Graph
    split: graphs.NodeSplit
    params: gcn.GcnParams          # aggregated parameters entering the round
    trained: gcn.GcnParams         # locally trained parameters leaving the round
    mask: ies.EdgeMask
    adam: gcn.AdamState
    pacing: ies.PacingSchedule
    tau_state: server.TauState
    lam: float = 0.0


@dataclass
class RoundRecord:
    round: int
    client_metrics: list            # per-client dicts with train_loss/accs/tau
    similarity: np.ndarray | None = None
    alpha: np.ndarray | None = None
    same_cluster_proportion: float | None = None


@dataclass
class RunResult:
    records: list
    summary: dict
    clusters: list | None


def same_cluster_weight_proportion(matrix: np.ndarray, clusters: list) -> float:
    """Average per-client fraction of similarity (or weight) mass inside its cluster."""
    matrix = np.asarray(matrix, dtype=np.float64)
    K = matrix.shape[0]
    if len(clusters) != K:
        raise ValueError("clusters must assign every client")
    total = 0.0
    for k in range(K):
        members = np.array([clusters[n] == clusters[k] for n in range(K)])
        if not members.any():
            raise ValueError(f"empty cluster for client {k}")
        denom = matrix[k].sum()
        total += matrix[k][members].sum() / denom
    return total / K


def bin_match_ratio(ref_recon: np.ndarray, other_recon: np.ndarray,
                    num_bins: int = 5) -> np.ndarray:
    """Per-bin fraction of reference edges whose counterpart lands in the same bin.

    Bins are equal width over [-1, 1]; empty reference bins yield NaN.
    """
    ref_recon = np.asarray(ref_recon, dtype=np.float64)
    other_recon = np.asarray(other_recon, dtype=np.float64)
    if ref_recon.shape != other_recon.shape:
        raise ValueError("reconstructions must share the same edge list")
    if num_bins < 1:
        raise ValueError("num_bins must be >= 1")

    def binify(w):
        b = np.floor((w + 1.0) / 2.0 * num_bins).astype(int)
        return np.clip(b, 0, num_bins - 1)

    rb = binify(ref_recon)
    ob = binify(other_recon)
    out = np.full(num_bins, np.nan)
    for b in range(num_bins):
        in_bin = rb == b
        if in_bin.any():
            out[b] = float(np.mean(ob[in_bin] == b))
    return out


def _build_dataset(cfg: ExperimentConfig) -> graphs.Graph:
    ds = cfg.dataset
    seed = mix_seed(cfg.seed, 0xDA7A)
    if ds.kind == "sbm":
        return graphs.generate_sbm(ds.blocks, ds.block_size, ds.p_in, ds.p_cross,
                                   ds.dx, ds.num_classes, seed)
    if ds.kind == "er":
        return graphs.generate_er(ds.n, ds.p, ds.dx, ds.num_classes, seed)
    if ds.kind == "ba":
        return graphs.generate_ba(ds.n, ds.m, ds.dx, ds.num_classes, seed)
    if ds.kind == "dir":
        return graphs.load_graph_dir(ds.path)
    raise ValueError(f"unknown dataset kind {ds.kind!r}")


def _build_partition(cfg: ExperimentConfig, g: graphs.Graph) -> graphs.Partition:
    ps = cfg.partition
    seed = mix_seed(cfg.seed, 0x9A47)
    if ps.kind == "bisection":
        return graphs.partition_bisection(g, cfg.num_clients, seed)
    if ps.kind == "louvain":
        return graphs.partition_louvain_merge(g, cfg.num_clients, seed)
    if ps.kind == "overlap":
        part = graphs.sample_overlap_clients(g, ps.base_parts, ps.copies_per_part,
                                             ps.frac, seed)
        if part.K != cfg.num_clients:
            raise ValueError(
                f"overlap partition yields {part.K} clients but num_clients={cfg.num_clients}")
        return part
    if ps.kind == "file":
        return graphs.load_partition_csv(os.path.join(cfg.dataset.path, "partition.csv"),
                                         g.num_nodes)
    raise ValueError(f"unknown partition kind {ps.kind!r}")


def _build_reference(cfg: ExperimentConfig, d_x: int) -> graphs.Graph:
    rs = cfg.reference
    seed = mix_seed(cfg.seed, 0x4EF)
    if rs.kind == "sbm":
        return graphs.generate_sbm(rs.blocks, rs.block_size, rs.p_in, rs.p_cross,
                                   d_x, max(rs.blocks, 1), seed)
    if rs.kind == "er":
        return graphs.generate_er(rs.n, rs.p, d_x, 2, seed)
    if rs.kind == "ba":
        return graphs.generate_ba(rs.n, rs.m, d_x, 2, seed)
    raise ValueError(f"unknown reference kind {rs.kind!r}")


def infer_clusters(cfg: ExperimentConfig, part: graphs.Partition,
                   g: graphs.Graph) -> list | None:
    """Ground-truth client clusters when derivable from the setup."""
    if cfg.partition.kind == "overlap":
        return [i // cfg.partition.copies_per_part for i in range(part.K)]
    if cfg.dataset.kind == "sbm":
        # majority block of each client's nodes
        bs = cfg.dataset.block_size
        out = []
        for nodes in part.client_node_lists:
            blocks = np.asarray(nodes) // bs
            out.append(int(np.bincount(blocks).argmax()))
        return out
    return None


def _evaluate(state: ClientState, params: gcn.GcnParams) -> dict:
    """Accuracy on the full (unmasked) local subgraph for all three splits."""
    g = state.graph
    adj = gcn.normalize_masked_adjacency(g.edges, np.ones(g.num_edges), g.num_nodes)
    emb = gcn.forward(params, adj, g.features)
    out = {}
    for which in (graphs.TRAIN, graphs.VAL, graphs.TEST):
        m = state.split.mask(which)
        out[which] = gcn.accuracy(emb, g.labels, m) if m.any() else float("nan")
    return out


def local_training_stage(state: ClientState, t: int, cfg: ExperimentConfig,
                         use_mask: bool, use_prox: bool) -> float:
    """Run one round of local training; returns the final epoch's loss."""
    g = state.graph
    anchor = state.params.copy()
    trained = state.params
    adam = state.adam
    mask = state.mask
    beta = cfg.fed.beta if use_prox else 0.0
    use_logits = cfg.ies.embeddings == "logits"
    train_mask = state.split.mask(graphs.TRAIN)
    loss = float("nan")
    for _ in range(cfg.epochs):
        weights = mask.weights if use_mask else np.ones(g.num_edges)
        adj = gcn.normalize_masked_adjacency(g.edges, weights, g.num_nodes)
        loss, grads = gcn.loss_and_grads(trained, adj, g.features, g.labels,
                                         train_mask, anchor, beta)
        trained, adam = gcn.adam_step(trained, grads, adam, cfg.model.lr)
        if use_mask and g.num_edges:
            emb = gcn.forward(trained, adj, g.features)
            H = emb.H2 if use_logits else emb.H1
            recon = ies.reconstruct(H, g.edges)
            mask = ies.mask_step(mask, recon, state.lam, cfg.ies.gamma, mask,
                                 cfg.ies.lr_train, cfg.ies.steps)
    state.trained = trained
    state.adam = adam
    state.mask = mask
    state.lam = ies.g_lambda(state.pacing, t + 1)
    return loss


def server_aggregation_stage(states: list, ref: server.ReferenceGraph, t: int,
                             cfg: ExperimentConfig, threads: int = 1):
    """Indicators, similarity, per-client tau and personalized aggregation.

    Returns (similarity, alpha, taus). Writes the aggregated parameters into
    each state's `params` for round t+1.
    """
    use_logits = cfg.ies.embeddings == "logits"

    def one(k):
        return server.build_indicator(ref, states[k].trained, k, t, cfg.ies.gamma,
                                      cfg.ies.lr_aggr, cfg.ies.steps,
                                      cfg.fed.prune_frac, use_logits)

    indicators = _parallel_map(one, range(len(states)), threads)
    for k, u in enumerate(indicators):
        if not np.any(u):
            raise ValueError(f"zero indicator for client {k} at round {t}")
    sim = server.similarity_matrix(indicators)
    all_trained = [st.trained for st in states]
    adaptive = cfg.fed.tau == "adaptive"
    taus = []
    alpha = np.zeros_like(sim)
    for k, st in enumerate(states):
        tau = st.tau_state.tau if adaptive else float(cfg.fed.tau)
        taus.append(tau)
        alpha[k] = server.softmax_weights(sim[k], tau)
        st.params = server.aggregate(sim[k], tau, all_trained)
        if adaptive and t % cfg.fed.tau_update_interval == 0:
            val = _evaluate(st, st.params)[graphs.VAL]
            if np.isfinite(val):
                st.tau_state = server.tau_step(st.tau_state, val)
    return sim, alpha, taus


def _parallel_map(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _size_weighted_mean(states: list) -> gcn.GcnParams:
    sizes = np.array([st.graph.num_nodes for st in states], dtype=np.float64)
    w = sizes / sizes.sum()
    acc = [np.zeros_like(t) for _, t in states[0].trained.tensors()]
    for wk, st in zip(w, states):
        for i, (_, t) in enumerate(st.trained.tensors()):
            acc[i] += wk * t
    return gcn.GcnParams(*acc)


def warmup(states: list, cfg: ExperimentConfig, init_params: gcn.GcnParams,
           threads: int = 1):
    """FedProx pre-training of a shared model, then per-client mask warm-up.

    Only the masks keep warm-up state; GNN parameters are reset afterwards.
    """
    if cfg.warmup.rounds > 0:
        global_p = init_params.copy()
        for _ in range(cfg.warmup.rounds):
            def one(st):
                trained = global_p.copy()
                adam = gcn.init_adam(trained)
                g = st.graph
                adj = gcn.normalize_masked_adjacency(g.edges, np.ones(g.num_edges),
                                                     g.num_nodes)
                tm = st.split.mask(graphs.TRAIN)
                for _ in range(cfg.epochs):
                    _, grads = gcn.loss_and_grads(trained, adj, g.features, g.labels,
                                                  tm, global_p, cfg.fed.beta)
                    trained, adam = gcn.adam_step(trained, grads, adam, cfg.model.lr)
                return trained

            locals_ = _parallel_map(one, states, threads)
            sizes = np.array([st.graph.num_nodes for st in states], dtype=np.float64)
            w = sizes / sizes.sum()
            acc = [np.zeros_like(t) for _, t in global_p.tensors()]
            for wk, p in zip(w, locals_):
                for i, (_, t) in enumerate(p.tensors()):
                    acc[i] += wk * t
            global_p = gcn.GcnParams(*acc)
        pretrained = global_p
    else:
        pretrained = init_params

    use_logits = cfg.ies.embeddings == "logits"
    for st in states:
        st.mask = ies.warmup_mask(st.graph, pretrained, st.pacing, cfg.ies.gamma,
                                  cfg.ies.lr_train, cfg.warmup.steps,
                                  cfg.ies.init_value, use_logits)
        st.params = init_params.copy()
        st.trained = init_params.copy()
        st.adam = gcn.init_adam(st.params)


def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


def _write_matrix(path: str, mat: np.ndarray):
    with open(path, "w", newline="\n") as f:
        for row in mat:
            f.write(",".join(repr(float(x)) for x in row) + "\n")


def _dump_reference_recon(out_dir: str, ref: server.ReferenceGraph, states: list,
                          t: int, cfg: ExperimentConfig):
    use_logits = cfg.ies.embeddings == "logits"
    g = ref.graph
    for k, st in enumerate(states):
        adj = gcn.normalize_masked_adjacency(g.edges, ref.per_client_masks[k].weights,
                                             g.num_nodes)
        emb = gcn.forward(st.trained, adj, g.features)
        H = emb.H2 if use_logits else emb.H1
        recon = ies.reconstruct(H, g.edges)
        path = os.path.join(out_dir, f"refrecon_round_{t}_client_{k}.csv")
        with open(path, "w", newline="\n") as f:
            f.write("u,v,weight\n")
            for (u, v), w in zip(g.edges, recon):
                f.write(f"{u},{v},{float(w)!r}\n")


def _dump_masks(out_dir: str, states: list, t: int):
    for k, st in enumerate(states):
        path = os.path.join(out_dir, f"mask_round_{t}_client_{k}.csv")
        with open(path, "w", newline="\n") as f:
            f.write("u,v,weight\n")
            for (u, v), w in zip(st.mask.edges, st.mask.weights):
                f.write(f"{u},{v},{float(w)!r}\n")


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None,
                   threads: int = 1, config_path: str | None = None) -> RunResult:
    """Execute a full federated run and optionally write all artifacts."""
    cfg.validate()
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    g = _build_dataset(cfg)
    part = _build_partition(cfg, g)
    if part.K != cfg.num_clients:
        raise ValueError(f"partition has {part.K} clients, config says {cfg.num_clients}")
    clusters = infer_clusters(cfg, part, g)

    init_p = gcn.init_params(g.d_x, cfg.model.hidden, g.num_classes,
                             mix_seed(cfg.seed, 0x1417))
    pacing = ies.PacingSchedule(cfg.ies.zeta, max(cfg.rounds, 1))
    states = []
    for k, nodes in enumerate(part.client_node_lists):
        sub = graphs.induced_subgraph(g, nodes)
        split = graphs.make_splits(sub, cfg.split_ratios, mix_seed(cfg.seed, k, 0x5B17))
        tau0 = server.TauState(tau=cfg.fed.tau_init, patience=cfg.fed.tau_patience,
                               rho=cfg.fed.tau_rho, tau_min=cfg.fed.tau_min,
                               tau_max=cfg.fed.tau_max)
        states.append(ClientState(
            client_id=k, graph=sub, split=split,
            params=init_p.copy(), trained=init_p.copy(),
            mask=ies.uniform_mask(sub, cfg.ies.init_value),
            adam=gcn.init_adam(init_p), pacing=pacing, tau_state=tau0,
            lam=ies.g_lambda(pacing, 1)))

    method = cfg.method
    use_mask = method in ("CUFL", "FedAvgCL")
    use_prox = method in ("CUFL", "FedProx")
    use_similarity = method == "CUFL"

    if use_mask:
        warmup(states, cfg, init_p, threads)

    ref = None
    if use_similarity:
        ref_graph = _build_reference(cfg, g.d_x)
        ref = server.ReferenceGraph.create(ref_graph, pacing, cfg.num_clients,
                                           cfg.ies.init_value)

    dump_rounds = set(cfg.effective_dump_rounds()) if out_dir else set()
    records = []
    for t in range(1, cfg.rounds + 1):
        losses = _parallel_map(
            lambda st: local_training_stage(st, t, cfg, use_mask, use_prox),
            states, threads)
        sim = alpha = None
        taus = [None] * len(states)
        if use_similarity:
            sim, alpha, taus = server_aggregation_stage(states, ref, t, cfg, threads)
        elif method in ("FedAvg", "FedProx", "FedAvgCL"):
            global_p = _size_weighted_mean(states)
            for st in states:
                st.params = global_p.copy()
        else:  # Local
            for st in states:
                st.params = st.trained.copy()

        metrics = []
        for st, loss, tau in zip(states, losses, taus):
            accs = _evaluate(st, st.trained)
            metrics.append({"client": st.client_id, "train_loss": loss,
                            "train_acc": accs[graphs.TRAIN], "val_acc": accs[graphs.VAL],
                            "test_acc": accs[graphs.TEST], "tau": tau})
        prop = None
        if sim is not None and clusters is not None:
            prop = same_cluster_weight_proportion(sim, clusters)
        records.append(RoundRecord(round=t, client_metrics=metrics, similarity=sim,
                                   alpha=alpha, same_cluster_proportion=prop))

        if out_dir is not None:
            if sim is not None:
                _write_matrix(os.path.join(out_dir, f"similarity_round_{t}.csv"), sim)
                _write_matrix(os.path.join(out_dir, f"alpha_round_{t}.csv"), alpha)
                with open(os.path.join(out_dir, f"tau_round_{t}.csv"), "w",
                          newline="\n") as f:
                    f.write("client,tau\n")
                    for k, tau in enumerate(taus):
                        f.write(f"{k},{_fmt(tau)}\n")
            if t in dump_rounds:
                if use_mask:
                    _dump_masks(out_dir, states, t)
                if use_similarity:
                    _dump_reference_recon(out_dir, ref, states, t, cfg)

    if records:
        final = records[-1].client_metrics
    else:
        final = []
        for st in states:
            accs = _evaluate(st, st.params)
            final.append({"client": st.client_id, "train_loss": None,
                          "train_acc": accs[graphs.TRAIN], "val_acc": accs[graphs.VAL],
                          "test_acc": accs[graphs.TEST], "tau": None})

    def _stats(key):
        vals = np.array([m[key] for m in final], dtype=np.float64)
        vals = vals[np.isfinite(vals)]
        mean = float(vals.mean()) if vals.size else None
        std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        return mean, std

    summary = {
        "manifest": {
            "config_path": config_path,
            "out_dir": out_dir,
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "tool_version": __version__,
        },
        "config": to_dict(cfg),
        "seed": cfg.seed,
        "clusters": clusters,
        "final": {"per_client": final},
    }
    for key in ("train_acc", "val_acc", "test_acc"):
        mean, std = _stats(key)
        summary["final"][f"{key}_mean"] = mean
        summary["final"][f"{key}_std"] = std

    if out_dir is not None:
        with open(os.path.join(out_dir, "metrics.csv"), "w", newline="\n") as f:
            f.write("round,client,train_loss,train_acc,val_acc,test_acc,tau\n")
            for rec in records:
                for m in rec.client_metrics:
                    f.write(f"{rec.round},{m['client']},{_fmt(m['train_loss'])},"
                            f"{_fmt(m['train_acc'])},{_fmt(m['val_acc'])},"
                            f"{_fmt(m['test_acc'])},{_fmt(m['tau'])}\n")
        with open(os.path.join(out_dir, "summary.json"), "w") as f:
            json.dump(summary, f, indent=2)
            f.write("\n")

    return RunResult(records=records, summary=summary, clusters=clusters)
