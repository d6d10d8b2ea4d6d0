"""Two-phase training: narrow score estimator, then wide sampled network.

Phase one trains a small network over the full augmented pattern with an
annealing softmax temperature and reads its attention distributions back
out as per-layer sampling scores.  Phase two trains the full-width
network on fixed-degree supports drawn from those scores, redrawing the
supports every epoch so no neighbor is permanently hidden.  The phases
share one ``TrainConfig``; what differs between them (normalization
flavor, value normalization, temperature) is decided here, not by the
caller.

Runs are deterministic in ``cfg.seed``: initialization, epoch shuffles,
per-query sampling draws and dropout masks all derive from it through
disjoint tagged streams.  When a run directory is given, each trainer
leaves behind config.json, history.csv, a checkpoint and metrics.json
so a finished run can be inspected or resumed without the Python objects.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import numerics as nm
from .attention import (ModelConfig, Network, TemperatureSchedule,
                        pattern_geometry, temperature_at)
from .errors import ContractError, DivergenceError
from .graphs import TEST, TRAIN, VAL, AttentionPattern, Graph
from .rngutil import TAG_DROPOUT, TAG_PREDICT, TAG_VAL, derive
from .sampling import (SampleStats, ScoreLayer, ScoreSet, plan_geometries,
                       resample_epoch, sample_batch, save_scores_npz,
                       scores_from_padded, validate_scores)

_DTYPES = {"float32": np.float32, "float64": np.float64}
_LOSSES = ("auto", "ce", "bce", "multilabel")
_METRICS = ("accuracy", "auc")
_ABLATIONS = ("none", "uniform", "max", "no-temp", "no-vnorm")


@dataclass
class TrainConfig:
    """Knobs shared by both phases; phase-specific fields note their phase."""

    width: int = 4
    layers: int = 2
    heads: int = 1
    epochs: int = 100
    lr: float = 0.01
    weight_decay: float = 1e-3
    batch_size: int = 64          # final phase; the estimator is full-batch
    degs: tuple = ()              # final phase: per-layer sample degree
    dropout: float = 0.0          # final phase; the estimator never drops
    lam: int = 5                  # estimator temperature hold
    gamma: float = 0.99           # estimator temperature decay
    seed: int = 0
    loss: str = "auto"
    metric: str = "accuracy"
    ablation: str = "none"
    full_graph: bool = False      # final phase: train on the whole pattern
    prefilter: bool = True        # final phase: top-k' score truncation
    tail_eps: float = 0.05
    warmup: int = 0
    clip: float = 8.0
    eval_samples: int = 1         # sampled patterns averaged at test time
    dtype: str = "float32"

    def __post_init__(self):
        if self.loss not in _LOSSES:
            raise ContractError(f"unknown loss {self.loss!r}")
        if self.metric not in _METRICS:
            raise ContractError(f"unknown metric {self.metric!r}")
        if self.ablation not in _ABLATIONS:
            raise ContractError(f"unknown ablation {self.ablation!r}")
        if self.dtype not in _DTYPES:
            raise ContractError(f"unknown dtype {self.dtype!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.epochs < 0:
            raise ContractError("epochs must be nonnegative")
        if self.eval_samples < 1:
            raise ContractError("eval_samples must be positive")
        self.degs = tuple(int(d) for d in self.degs)

    @property
    def np_dtype(self):
        return _DTYPES[self.dtype]


def config_to_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["degs"] = list(cfg.degs)
    return d


def config_from_dict(d: dict) -> TrainConfig:
    return TrainConfig(**{k: tuple(v) if k == "degs" else v for k, v in d.items()})


# ---------------------------------------------------------------------------
# Task resolution: what loss, and how wide the head must be


def resolve_task(labels: np.ndarray, loss: str):
    """(loss name, output dim) for a label array.

    2-d labels mean one sigmoid per column; 1-d integer labels mean
    classification, binary collapsing to a single logit unless the caller
    pins ``loss="ce"``.
    """
    labels = np.asarray(labels)
    if labels.ndim == 2:
        if loss not in ("auto", "multilabel"):
            raise ContractError(f"2-d labels need multilabel loss, not {loss!r}")
        return "multilabel", int(labels.shape[1])
    if labels.ndim != 1:
        raise ContractError(f"labels must be 1-d or 2-d, got {labels.ndim}-d")
    if loss == "multilabel":
        raise ContractError("multilabel loss needs 2-d labels")
    if labels.min() < 0:
        raise ContractError("class labels must be nonnegative")
    classes = int(labels.max()) + 1
    if loss == "bce" and classes > 2:
        raise ContractError(f"bce cannot fit {classes} classes")
    if loss == "auto":
        loss = "bce" if classes <= 2 else "ce"
    return (loss, 1) if loss == "bce" else ("ce", max(classes, 2))


def _loss_tensor(loss_name: str, logits, labels):
    if loss_name == "ce":
        return nm.softmax_cross_entropy(logits, labels)
    if loss_name == "bce":
        flat = nm.reshape(logits, (int(logits.shape[0]),))
        return nm.bce_with_logits(flat, np.asarray(labels, dtype=np.float64))
    return nm.bce_with_logits(logits, np.asarray(labels, dtype=np.float64))


def _probs_from_logits(loss_name: str, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if loss_name == "ce":
        zs = z - z.max(axis=1, keepdims=True)
        e = np.exp(zs)
        return e / e.sum(axis=1, keepdims=True)
    p = 1.0 / (1.0 + np.exp(-z))
    return p.reshape(-1) if loss_name == "bce" else p


def predicted_labels(loss_name: str, probs: np.ndarray) -> np.ndarray:
    if loss_name == "ce":
        return probs.argmax(axis=1)
    return (probs > 0.5).astype(np.int64)


def metric_value(loss_name: str, metric: str, probs: np.ndarray,
                 labels: np.ndarray) -> float:
    """Metric on probabilities (safe for sample-averaged predictions too)."""
    labels = np.asarray(labels)
    if metric == "accuracy":
        return float((predicted_labels(loss_name, probs) == labels).mean())
    if loss_name == "bce":
        return nm.roc_auc(probs, labels)
    if loss_name == "multilabel":
        return float(np.mean([nm.roc_auc(probs[:, c], labels[:, c])
                              for c in range(probs.shape[1])]))
    if probs.shape[1] != 2:
        raise ContractError("auc needs binary or multilabel targets")
    return nm.roc_auc(probs[:, 1], labels)


# ---------------------------------------------------------------------------
# Phase one: the score estimator


@dataclass
class EstimatorResult:
    network: Network
    scores: ScoreSet
    history: list
    best_epoch: int
    best_val: float
    test_metric: float
    tau_final: float
    loss_name: str


def train_estimator(graph: Graph, pattern: AttentionPattern, cfg: TrainConfig,
                    run_dir=None) -> EstimatorResult:
    """Full-batch training of the narrow estimator over the whole pattern.

    Uses layer norm, length-normalized values, and the annealing
    temperature; the returned scores are the attention rows of the best
    validation state, read out at that state's temperature.  Legal
    ablations: none, no-temp (pin temperature at 1), no-vnorm (raw
    value vectors).
    """
    if cfg.ablation not in ("none", "no-temp", "no-vnorm"):
        raise ContractError(f"estimator ablation must be none/no-temp/no-vnorm, "
                            f"got {cfg.ablation!r}")
    if cfg.layers != pattern.num_layers:
        raise ContractError(f"config says {cfg.layers} layers, "
                            f"pattern has {pattern.num_layers}")
    labels = np.asarray(graph.labels)
    loss_name, out_dim = resolve_task(labels, cfg.loss)
    mcfg = ModelConfig(in_dim=graph.features.shape[1], width=cfg.width,
                       layers=cfg.layers, out_dim=out_dim, heads=cfg.heads,
                       norm="layer",
                       normalize_values=cfg.ablation != "no-vnorm",
                       clip=cfg.clip, dropout=0.0, dtype=cfg.np_dtype)
    net = Network(mcfg, seed=cfg.seed)
    geoms = [pattern_geometry(layer) for layer in pattern.layers]
    x = np.asarray(graph.features, dtype=cfg.np_dtype)
    train_idx = graph.split_idx(TRAIN)
    val_idx = graph.split_idx(VAL)
    test_idx = graph.split_idx(TEST)
    if train_idx.size == 0:
        raise ContractError("no training nodes in the split")
    tsched = TemperatureSchedule(lam=cfg.lam, gamma=cfg.gamma)

    history = []
    best_val, best_epoch, best_tau = -np.inf, 0, 1.0
    best_state = net.state_dict()
    if cfg.epochs > 0:
        sched = nm.CosineSchedule(cfg.lr, cfg.epochs, warmup=cfg.warmup)
        opt = nm.AdamW(net.named_parameters(), sched, weight_decay=cfg.weight_decay)
        for epoch in range(1, cfg.epochs + 1):
            tau = 1.0 if cfg.ablation == "no-temp" else temperature_at(tsched, epoch)
            opt.zero_grad()
            logits, _ = net.forward(x, geoms, tau=tau, training=True)
            loss = _loss_tensor(loss_name, nm.gather_rows(logits, train_idx),
                                labels[train_idx])
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise DivergenceError(f"non-finite loss at epoch {epoch}", epoch=epoch)
            nm.backward(loss)
            try:
                opt.step(epoch)
            except DivergenceError as exc:
                raise DivergenceError(f"epoch {epoch}: {exc}", epoch=epoch) from None
            # layer norm and zero dropout make this forward valid for eval too
            if val_idx.size:
                val_probs = _probs_from_logits(loss_name, logits.data[val_idx])
                val_m = metric_value(loss_name, cfg.metric, val_probs,
                                     labels[val_idx])
            else:
                val_m = float("nan")
            history.append((epoch, loss_val, val_m, tau))
            # without validation nodes the last epoch wins
            if val_m > best_val or val_idx.size == 0:
                best_val, best_epoch, best_tau = val_m, epoch, tau
                best_state = net.state_dict()
    net.load_state_dict(best_state)

    with nm.no_grad():
        logits, padded = net.forward(x, geoms, tau=best_tau, training=False)
    scores = scores_from_padded(pattern, padded)
    validate_scores(scores)
    test_m = float("nan")
    if test_idx.size:
        test_probs = _probs_from_logits(loss_name, logits.data[test_idx])
        test_m = metric_value(loss_name, cfg.metric, test_probs, labels[test_idx])
    if best_val == -np.inf and val_idx.size:
        val_probs = _probs_from_logits(loss_name, logits.data[val_idx])
        best_val = metric_value(loss_name, cfg.metric, val_probs, labels[val_idx])
    result = EstimatorResult(network=net, scores=scores, history=history,
                             best_epoch=best_epoch, best_val=float(best_val),
                             test_metric=test_m, tau_final=best_tau,
                             loss_name=loss_name)
    if run_dir is not None:
        _write_run(run_dir, cfg, "estimator", net, history,
                   {"best_epoch": best_epoch, "best_val": float(best_val),
                    "test_metric": test_m, "tau_final": best_tau,
                    "loss": loss_name}, scores=scores)
    return result


# ---------------------------------------------------------------------------
# Phase two: the wide network on sampled supports


@dataclass
class FinalResult:
    network: Network
    history: list
    best_epoch: int
    best_val: float
    test_metric: float
    edge_pct: float
    loss_name: str
    sample_stats: SampleStats


def train_final(graph: Graph, scores: ScoreSet, cfg: TrainConfig,
                run_dir=None) -> FinalResult:
    """Minibatch training of the wide network on score-sampled supports.

    Batch norm, raw values, temperature 1.  Supports are redrawn each
    epoch; the reported test metric averages ``cfg.eval_samples`` fresh
    patterns at the best validation state.  ``cfg.full_graph`` trains on
    the whole pattern instead (the sampling ablation's upper reference),
    still taking batch statistics over the training rows so the two modes
    are comparable.  Legal ablations: none, uniform (ignore the scores),
    max (top-deg selection instead of sampling).
    """
    if cfg.ablation not in ("none", "uniform", "max"):
        raise ContractError(f"final ablation must be none/uniform/max, "
                            f"got {cfg.ablation!r}")
    if cfg.layers != scores.num_layers:
        raise ContractError(f"config says {cfg.layers} layers, "
                            f"scores have {scores.num_layers}")
    for li, sl in enumerate(scores.layers):
        if sl.edge_type is None:
            raise ContractError(f"score layer {li + 1} lacks edge types; "
                                "run attach_types first")
    if not cfg.full_graph:
        if len(cfg.degs) != scores.num_layers:
            raise ContractError(f"need {scores.num_layers} degree budgets, "
                                f"got {len(cfg.degs)}")
        validate_scores(scores)

    labels = np.asarray(graph.labels)
    loss_name, out_dim = resolve_task(labels, cfg.loss)
    mcfg = ModelConfig(in_dim=graph.features.shape[1], width=cfg.width,
                       layers=cfg.layers, out_dim=out_dim, heads=cfg.heads,
                       norm="batch", normalize_values=False,
                       clip=cfg.clip, dropout=cfg.dropout, dtype=cfg.np_dtype)
    net = Network(mcfg, seed=cfg.seed)
    x = np.asarray(graph.features, dtype=cfg.np_dtype)
    train_idx = graph.split_idx(TRAIN)
    val_idx = graph.split_idx(VAL)
    test_idx = graph.split_idx(TEST)
    if train_idx.size == 0:
        raise ContractError("no training nodes in the split")

    eff_scores = _uniform_like(scores) if cfg.ablation == "uniform" else scores
    mode = "top" if cfg.ablation == "max" else "sample"
    k_prime = None
    if (cfg.prefilter and mode == "sample" and cfg.ablation != "uniform"
            and not cfg.full_graph):
        k_prime = 4 * max(cfg.degs)
    stats = SampleStats()

    history = []
    best_val, best_epoch = -np.inf, 0
    best_state = net.state_dict()
    if cfg.epochs > 0:
        sched = nm.CosineSchedule(cfg.lr, cfg.epochs, warmup=cfg.warmup)
        opt = nm.AdamW(net.named_parameters(), sched, weight_decay=cfg.weight_decay)
        full_geoms = None
        if cfg.full_graph:
            full_geoms = [pattern_geometry(sl, stats_rows=train_idx)
                          for sl in scores.layers]
        for epoch in range(1, cfg.epochs + 1):
            if cfg.full_graph:
                epoch_loss = _full_graph_step(net, opt, x, full_geoms, labels,
                                              train_idx, loss_name, cfg, epoch)
                val_probs = _eval_full(net, x, full_geoms, loss_name, val_idx)
            else:
                epoch_loss = _sampled_epoch(net, opt, x, eff_scores, labels,
                                            train_idx, loss_name, cfg, epoch,
                                            mode, k_prime, stats)
                val_probs = _eval_sampled(net, x, eff_scores, cfg, val_idx,
                                          loss_name, epoch, TAG_VAL, mode, k_prime)
            val_m = (metric_value(loss_name, cfg.metric, val_probs, labels[val_idx])
                     if val_idx.size else float("nan"))
            history.append((epoch, epoch_loss, val_m, 1.0))
            # without validation nodes the last epoch wins
            if val_m > best_val or val_idx.size == 0:
                best_val, best_epoch = val_m, epoch
                best_state = net.state_dict()
    net.load_state_dict(best_state)

    test_m = float("nan")
    if cfg.full_graph:
        geoms = [pattern_geometry(sl, stats_rows=train_idx) for sl in scores.layers]
        if test_idx.size:
            test_probs = _eval_full(net, x, geoms, loss_name, test_idx)
            test_m = metric_value(loss_name, cfg.metric, test_probs,
                                  labels[test_idx])
        if best_val == -np.inf and val_idx.size:
            best_val = metric_value(loss_name, cfg.metric,
                                    _eval_full(net, x, geoms, loss_name, val_idx),
                                    labels[val_idx])
    else:
        if test_idx.size:
            test_probs, _ = predict(net, x, eff_scores, cfg.degs, test_idx,
                                    seed=cfg.seed, n_samples=cfg.eval_samples,
                                    batch_size=cfg.batch_size, mode=mode,
                                    k_prime=k_prime, tail_eps=cfg.tail_eps,
                                    loss_name=loss_name)
            test_m = metric_value(loss_name, cfg.metric, test_probs,
                                  labels[test_idx])
        if best_val == -np.inf and val_idx.size:
            vp = _eval_sampled(net, x, eff_scores, cfg, val_idx, loss_name,
                               1, TAG_VAL, mode, k_prime)
            best_val = metric_value(loss_name, cfg.metric, vp, labels[val_idx])
    pct = edge_percent(scores, cfg.degs) if cfg.degs else 100.0
    result = FinalResult(network=net, history=history, best_epoch=best_epoch,
                         best_val=float(best_val), test_metric=test_m,
                         edge_pct=pct, loss_name=loss_name, sample_stats=stats)
    if run_dir is not None:
        _write_run(run_dir, cfg, "final", net, history,
                   {"best_epoch": best_epoch, "best_val": float(best_val),
                    "test_metric": test_m, "edge_pct": pct, "loss": loss_name,
                    "rows_sampled": stats.rows_sampled,
                    "uniform_fallbacks": stats.uniform_fallbacks,
                    "prefilter_truncated": stats.prefilter_truncated,
                    "prefilter_kept_full": stats.prefilter_kept_full})
    return result


def _sampled_epoch(net, opt, x, scores, labels, train_idx, loss_name, cfg,
                   epoch, mode, k_prime, stats) -> float:
    plans = resample_epoch(scores, cfg.degs, train_idx, cfg.batch_size,
                           cfg.seed, epoch, mode=mode, k_prime=k_prime,
                           tail_eps=cfg.tail_eps, stats=stats)
    total_loss, total_rows = 0.0, 0
    for bi, plan in enumerate(plans):
        opt.zero_grad()
        rng = (derive(cfg.seed, TAG_DROPOUT, epoch, bi)
               if cfg.dropout > 0 else None)
        logits, _ = net.forward(x[plan.input_nodes], plan_geometries(plan),
                                tau=1.0, training=True, dropout_rng=rng)
        loss = _loss_tensor(loss_name, logits, labels[plan.seeds])
        loss_val = float(loss.data)
        if not np.isfinite(loss_val):
            raise DivergenceError(f"non-finite loss at epoch {epoch}", epoch=epoch)
        nm.backward(loss)
        try:
            opt.step(epoch)
        except DivergenceError as exc:
            raise DivergenceError(f"epoch {epoch}: {exc}", epoch=epoch) from None
        total_loss += loss_val * plan.seeds.size
        total_rows += plan.seeds.size
    return total_loss / total_rows


def _full_graph_step(net, opt, x, geoms, labels, train_idx, loss_name, cfg,
                     epoch) -> float:
    opt.zero_grad()
    rng = derive(cfg.seed, TAG_DROPOUT, epoch) if cfg.dropout > 0 else None
    logits, _ = net.forward(x, geoms, tau=1.0, training=True, dropout_rng=rng)
    loss = _loss_tensor(loss_name, nm.gather_rows(logits, train_idx),
                        labels[train_idx])
    loss_val = float(loss.data)
    if not np.isfinite(loss_val):
        raise DivergenceError(f"non-finite loss at epoch {epoch}", epoch=epoch)
    nm.backward(loss)
    try:
        opt.step(epoch)
    except DivergenceError as exc:
        raise DivergenceError(f"epoch {epoch}: {exc}", epoch=epoch) from None
    return loss_val


def _eval_full(net, x, geoms, loss_name, nodes) -> np.ndarray:
    with nm.no_grad():
        logits, _ = net.forward(x, geoms, tau=1.0, training=False)
    return _probs_from_logits(loss_name, logits.data[nodes])


def _eval_sampled(net, x, scores, cfg, nodes, loss_name, epoch, tag, mode,
                  k_prime) -> np.ndarray:
    """Eval-mode probabilities for ``nodes``, chunked at the batch size.

    Every chunk passes batch_index 0: each query node draws from its own
    (seed, tag, epoch, node) stream, so the result is identical however
    the nodes are chunked.
    """
    out = []
    with nm.no_grad():
        for start in range(0, nodes.size, cfg.batch_size):
            chunk = nodes[start:start + cfg.batch_size]
            plan = sample_batch(chunk, scores, cfg.degs, cfg.seed, epoch,
                                batch_index=0, mode=mode, k_prime=k_prime,
                                tail_eps=cfg.tail_eps, tag=tag)
            logits, _ = net.forward(x[plan.input_nodes], plan_geometries(plan),
                                    tau=1.0, training=False)
            out.append(logits.data)
    return _probs_from_logits(loss_name, np.concatenate(out, axis=0))


def predict(net: Network, features: np.ndarray, scores: ScoreSet, degs,
            nodes, seed: int = 0, n_samples: int = 1, batch_size: int = 256,
            mode: str = "sample", k_prime: int | None = None,
            tail_eps: float = 0.05, loss_name: str = "ce"):
    """Average class probabilities over freshly sampled patterns.

    Sample ``s`` uses epoch key ``s`` on the prediction stream, so the
    averaged patterns are disjoint draws yet the whole call is
    reproducible.  Returns (probabilities, predicted labels).
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    if n_samples < 1:
        raise ContractError("n_samples must be positive")
    x = np.asarray(features, dtype=net.cfg.dtype)
    acc = None
    with nm.no_grad():
        for s in range(1, n_samples + 1):
            chunks = []
            for start in range(0, nodes.size, batch_size):
                chunk = nodes[start:start + batch_size]
                plan = sample_batch(chunk, scores, degs, seed, s,
                                    batch_index=0, mode=mode, k_prime=k_prime,
                                    tail_eps=tail_eps, tag=TAG_PREDICT)
                logits, _ = net.forward(x[plan.input_nodes],
                                        plan_geometries(plan),
                                        tau=1.0, training=False)
                chunks.append(logits.data)
            p = _probs_from_logits(loss_name, np.concatenate(chunks, axis=0))
            acc = p if acc is None else acc + p
    probs = acc / n_samples
    return probs, predicted_labels(loss_name, probs)


# ---------------------------------------------------------------------------
# Budget accounting


def edge_percent(scores: ScoreSet, degs) -> float:
    """Percentage of pattern entries a fixed-degree plan can ever touch.

    Per layer each row contributes min(deg, row length) reachable entries
    out of its full length; the ratio is exact, not an estimate.
    """
    degs = tuple(int(d) for d in degs)
    if len(degs) != scores.num_layers:
        raise ContractError(f"{len(degs)} degree budgets for "
                            f"{scores.num_layers} layers")
    covered = 0
    total = 0
    for deg, layer in zip(degs, scores.layers):
        lengths = np.diff(layer.row_ptr)
        covered += int(np.minimum(lengths, deg).sum())
        total += int(lengths.sum())
    if total == 0:
        raise ContractError("empty pattern")
    return 100.0 * covered / total


def _uniform_like(scores: ScoreSet) -> ScoreSet:
    """Same support, every row uniform: the score-free sampling baseline."""
    layers = []
    for sl in scores.layers:
        lengths = np.diff(sl.row_ptr)
        vals = 1.0 / np.repeat(lengths, lengths).astype(np.float64)
        layers.append(ScoreLayer(row_ptr=sl.row_ptr, col_idx=sl.col_idx,
                                 values=vals, edge_type=sl.edge_type))
    return ScoreSet(n=scores.n, layers=tuple(layers))


# ---------------------------------------------------------------------------
# Run directory layout


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def save_history_csv(path, history) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,loss,val_metric,tau\n")
        for epoch, loss, val_m, tau in history:
            fh.write(f"{epoch},{loss:.10g},{val_m:.10g},{tau:.10g}\n")


def _write_run(run_dir, cfg: TrainConfig, role: str, net: Network, history,
               metrics: dict, scores: ScoreSet | None = None) -> None:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_json(run_dir / "config.json", {"role": role, **config_to_dict(cfg)})
    save_history_csv(run_dir / "history.csv", history)
    ckpt_dir = run_dir / "ckpt"
    ckpt_dir.mkdir(exist_ok=True)
    nm.save_checkpoint(ckpt_dir / f"{role}.ckpt", net.state_dict())
    if scores is not None:
        score_dir = run_dir / "scores"
        score_dir.mkdir(exist_ok=True)
        save_scores_npz(score_dir / "scores.npz", scores)
    _write_json(run_dir / "metrics.json", metrics)
