"""Training loop for the dual-connectivity classifier and the baseline.

One run:

1. build the propagation operators — the hop-distance structural adjacency
   (built once), and one semantic adjacency per layer initialized by
   clustering the features / initial activations;
2. every epoch: a training-mode forward pass, balanced pseudo-label
   selection from its probabilities, the class-weighted supervised loss plus
   the weighted pseudo-label loss, one Adam step, then an evaluation-mode
   forward pass scored by validation balanced accuracy;
3. every ``refresh_interval`` epochs the semantic adjacencies of layers
   2..L are rebuilt by re-clustering the current evaluation-mode
   activations (warm-started from the previous centroids); the layer-1
   adjacency only depends on the raw features and is never rebuilt;
4. the parameters — and the semantic adjacencies they were scored with —
   from the epoch with the best validation balanced accuracy (strict
   improvement) are kept; training stops after ``patience`` epochs without
   improvement; test metrics come from the restored best model.

Every epoch appends one JSON-serializable record to the history (and to
``epochs.jsonl`` when an output directory is given).  Records contain no
timing data, so two runs with identical configuration and seed produce
byte-identical logs.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .connectivity import build_semantic, build_structural, kmeans
from .data import Dataset, SplitSpec, row_normalize
from .errors import CheckpointFormatError, InvalidParameterError, \
    InvalidSplitError, TrainingAbortedError
from .ioutil import canonical_json
from .metrics import MetricsReport, balanced_accuracy, compute_metrics
from .model import (DualEncoderParams, GcnParams, ModelConfig, encoder_layer,
                    forward, gcn_forward, init_gcn_params, init_params,
                    load_checkpoint, restore_params, save_checkpoint)
from .optim import Adam
from .pseudolabel import (PseudoLabelSet, compute_quotas, select_balanced,
                          unlabeled_pool, unlimited_quotas)
from .sparse import add_self_loops, sym_normalize

logger = logging.getLogger(__name__)

VARIANTS: dict[str, dict] = {
    "full": {},
    "no-semantic": {"struct_only": True},
    "no-structural": {"sem_only": True},
    "independent-encoders": {"independent_encoders": True},
    "no-pseudo": {"disable_pseudo": True},
    "imbalanced-pseudo": {"imbalanced_pseudo": True},
    "fixed-semantic": {"freeze_semantic": True},
    "uniform-weights": {"uniform_class_weights": True},
    "struct-equals-input": {"struct_equals_input": True},
    "gcn-baseline": {},  # switches TrainConfig.baseline_gcn instead
}


@dataclass
class TrainConfig:
    """Optimization schedule and loss weighting.

    The model-selection metric is fixed: validation balanced accuracy,
    evaluated after every epoch's update from an evaluation-mode forward
    pass.
    """

    lr: float = 1e-2
    weight_decay: float = 5e-4
    max_epochs: int = 10000
    patience: int = 1000
    pseudo_weight: float = 1.0           # multiplier on the pseudo-label loss
    confidence_threshold: float = 0.7    # strict lower bound for candidates
    refresh_interval: int = 100          # epochs between semantic rebuilds
    seed: int = 0
    row_normalize_features: bool = True
    include_eval_in_unlabeled: bool = False
    baseline_gcn: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self) -> None:
        if self.lr <= 0:
            raise InvalidParameterError("lr must be positive")
        if self.weight_decay < 0:
            raise InvalidParameterError("weight_decay must be >= 0")
        if self.max_epochs < 1:
            raise InvalidParameterError("max_epochs must be >= 1")
        if self.patience < 1:
            raise InvalidParameterError("patience must be >= 1")
        if self.pseudo_weight < 0:
            raise InvalidParameterError("pseudo_weight must be >= 0")
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise InvalidParameterError(
                "confidence_threshold must be in [0, 1]")
        if self.refresh_interval < 1:
            raise InvalidParameterError("refresh_interval must be >= 1")
        self.model.validate()


_MODEL_KEYS = {f.name for f in fields(ModelConfig)}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"model"}


def train_config_from_dict(obj: dict) -> TrainConfig:
    """Build a config from a flat JSON dict (model and schedule keys mixed;
    unknown keys are rejected).  See docs/config_schema.md."""
    if not isinstance(obj, dict):
        raise InvalidParameterError("config JSON must be an object")
    unknown = set(obj) - _MODEL_KEYS - _TRAIN_KEYS - {"variant"}
    if unknown:
        raise InvalidParameterError(
            f"unknown config keys: {sorted(unknown)}")
    model = ModelConfig(**{k: v for k, v in obj.items() if k in _MODEL_KEYS})
    cfg = TrainConfig(model=model, **{
        k: v for k, v in obj.items() if k in _TRAIN_KEYS})
    if "variant" in obj:
        cfg = apply_variant(cfg, str(obj["variant"]))
    cfg.validate()
    return cfg


def train_config_to_dict(cfg: TrainConfig) -> dict:
    out = {k: getattr(cfg, k) for k in sorted(_TRAIN_KEYS)}
    out.update({k: getattr(cfg.model, k) for k in sorted(_MODEL_KEYS)})
    return out


def apply_variant(cfg: TrainConfig, name: str) -> TrainConfig:
    """Return a copy of the config with one named ablation applied."""
    if name not in VARIANTS:
        raise InvalidParameterError(
            f"unknown variant {name!r}; choose from {sorted(VARIANTS)}")
    if name == "gcn-baseline":
        return replace(cfg, baseline_gcn=True)
    return replace(cfg, baseline_gcn=False,
                   model=replace(cfg.model, **VARIANTS[name]))


@dataclass(eq=False)
class TrainResult:
    best_epoch: int
    best_val_balanced_accuracy: float
    test_metrics: MetricsReport
    history: list[dict]
    epochs_run: int
    wall_time_sec: float
    params: object                      # best parameters, restored
    quotas: list[int] | None            # per-class pseudo-label quotas
    pseudo_pool_size: int

    @property
    def test_balanced_accuracy(self) -> float:
        return self.test_metrics.balanced_accuracy


def class_weights(counts: np.ndarray, uniform: bool = False) -> np.ndarray:
    """Per-class supervised-loss weights: 1/count, so each class
    contributes equally regardless of how many labels it has (or all-ones
    under ``uniform``).  A class with no labeled nodes is an invalid
    split."""
    if np.any(counts == 0):
        missing = int(np.flatnonzero(counts == 0)[0])
        raise InvalidSplitError(
            f"class {missing} has no labeled training nodes")
    if uniform:
        return np.ones(counts.shape[0])
    return 1.0 / counts.astype(np.float64)


def total_loss(tape, supervised: Tensor, pseudo: Tensor,
               pseudo_weight: float) -> Tensor:
    """Training objective: supervised term plus the weighted pseudo-label
    term."""
    return ad.add(tape, supervised, ad.scale(tape, pseudo, pseudo_weight))


def _snapshot(params) -> dict[str, np.ndarray]:
    return {name: p.value.copy() for name, p in params.named().items()}


def _restore(params, snapshot: dict[str, np.ndarray]) -> None:
    for name, p in params.named().items():
        p.value[...] = snapshot[name]


def _init_semantic(params: DualEncoderParams, config: ModelConfig,
                   features_value: np.ndarray, features: Tensor,
                   struct_op, seed_root: np.random.SeedSequence):
    """Build the per-layer semantic adjacencies bottom-up: cluster the raw
    features for layer 1, then each next layer clusters the evaluation-mode
    activations of the layer below (computed with the adjacencies built so
    far)."""
    sem_ops = []
    cluster_models = []
    h_struct = h_sem = None
    for layer_idx in range(config.num_layers):
        if layer_idx == 0:
            cluster_input = features_value
        else:
            parts = [t.value for t in (h_struct, h_sem) if t is not None]
            cluster_input = (np.concatenate(parts, axis=1)
                             if len(parts) > 1 else parts[0])
        km = kmeans(cluster_input, config.num_clusters,
                    seed=seed_root.spawn(1)[0])
        cluster_models.append(km)
        sem_ops.append(build_semantic(km))
        if layer_idx < config.num_layers - 1:
            h_struct, h_sem = encoder_layer(
                None, params, config, layer_idx, h_struct, h_sem, features,
                struct_op, sem_ops[layer_idx])
    return sem_ops, cluster_models


def _refresh_semantic(sem_ops, cluster_models, config: ModelConfig,
                      eval_result) -> None:
    """Re-cluster layers 2..L from the current evaluation activations,
    warm-starting each k-means from its previous centroids.  Layer 1 is a
    function of the raw features only and stays fixed."""
    for layer_idx in range(1, config.num_layers):
        cluster_input = eval_result.layer_state(layer_idx - 1)
        km = kmeans(cluster_input, config.num_clusters,
                    init=cluster_models[layer_idx].centroids)
        cluster_models[layer_idx] = km
        sem_ops[layer_idx] = build_semantic(km)


def train(dataset: Dataset, split: SplitSpec, cfg: TrainConfig, *,
          out_dir=None) -> TrainResult:
    """Run one training job; optionally stream per-epoch records to
    ``<out_dir>/epochs.jsonl`` and write ``<out_dir>/checkpoint.bin`` with
    the best parameters."""
    t_start = time.perf_counter()
    cfg.validate()
    split.validate(dataset.num_nodes)
    model_cfg = cfg.model
    labels = dataset.labels
    num_classes = dataset.num_classes
    train_ids = np.asarray(split.train_ids, dtype=np.int64)
    val_ids = np.asarray(split.val_ids, dtype=np.int64)
    test_ids = np.asarray(split.test_ids, dtype=np.int64)
    train_labels = labels[train_ids]
    counts = np.bincount(train_labels, minlength=num_classes)

    features_value = (row_normalize(dataset.features)
                      if cfg.row_normalize_features else
                      dataset.features.copy())
    features = Tensor(features_value)

    seed_root = np.random.SeedSequence(cfg.seed)
    init_seq, dropout_seq, kmeans_root = seed_root.spawn(3)
    init_seed = int(init_seq.generate_state(1)[0])
    dropout_rng = np.random.default_rng(dropout_seq)

    input_op = sym_normalize(add_self_loops(dataset.adjacency, 1.0))

    if cfg.baseline_gcn:
        return _train_gcn(dataset, split, cfg, input_op, features,
                          init_seed, dropout_rng, out_dir, t_start)

    hops = 1 if model_cfg.struct_equals_input else model_cfg.max_hops
    structural = build_structural(dataset.adjacency, hops)
    struct_op = sym_normalize(add_self_loops(structural.matrix, 1.0))
    cls_op = (struct_op if model_cfg.classifier_adjacency == "structural"
              else input_op)

    params = init_params(model_cfg, dataset.num_features, num_classes,
                         init_seed)
    optimizer = Adam(params.all_parameters(), cfg.lr, cfg.weight_decay)

    sem_ops = None
    cluster_models = None
    if model_cfg.use_sem:
        sem_ops, cluster_models = _init_semantic(
            params, model_cfg, features_value, features, struct_op,
            kmeans_root)

    node_weights = class_weights(
        counts, model_cfg.uniform_class_weights)[train_labels]

    if model_cfg.disable_pseudo:
        quotas = None
    elif model_cfg.imbalanced_pseudo:
        quotas = unlimited_quotas(num_classes)
    else:
        quotas = compute_quotas(counts).astype(np.float64)
    pool = unlabeled_pool(dataset.num_nodes, train_ids, val_ids, test_ids,
                          include_eval=cfg.include_eval_in_unlabeled)
    eval_marked = np.zeros(dataset.num_nodes, dtype=bool)
    eval_marked[val_ids] = True
    eval_marked[test_ids] = True

    def forward_train(tape):
        return forward(tape, params, model_cfg, features, struct_op,
                       sem_ops, cls_op, training=True, rng=dropout_rng)

    def forward_eval():
        return forward(None, params, model_cfg, features, struct_op,
                       sem_ops, cls_op)

    def compute_losses(tape, result):
        selection = None
        if quotas is not None:
            probs = ad.softmax_rows(result.logits.value)
            selection = select_balanced(probs, pool, quotas,
                                        cfg.confidence_threshold)
            ps = ad.mean_ce(tape, result.logits, selection.node_ids,
                            selection.labels)
        else:
            ps = Tensor(np.zeros((1, 1)))
        sup = ad.weighted_ce(tape, result.logits, train_ids, train_labels,
                             node_weights)
        return total_loss(tape, sup, ps, cfg.pseudo_weight), sup, ps, \
            selection

    def maybe_refresh(epoch, eval_result):
        if (sem_ops is not None and not model_cfg.freeze_semantic
                and epoch % cfg.refresh_interval == 0):
            _refresh_semantic(sem_ops, cluster_models, model_cfg,
                              eval_result)
            return True
        return False

    def snapshot_extra():
        if sem_ops is None:
            return None
        return list(sem_ops), list(cluster_models)

    def restore_extra(saved):
        if saved is not None:
            sem_ops[:] = saved[0]
            cluster_models[:] = saved[1]

    result = _run_epochs(cfg, params, optimizer, forward_train, forward_eval,
                         compute_losses, maybe_refresh, snapshot_extra,
                         restore_extra, labels, val_ids, test_ids,
                         num_classes, eval_marked, out_dir)
    wall = time.perf_counter() - t_start
    if out_dir is not None:
        save_checkpoint(_checkpoint_dict(params, sem_ops),
                        os.path.join(out_dir, "checkpoint.bin"))
    return TrainResult(
        best_epoch=result["best_epoch"],
        best_val_balanced_accuracy=result["best_val"],
        test_metrics=result["test_metrics"],
        history=result["history"],
        epochs_run=result["epochs_run"],
        wall_time_sec=wall,
        params=params,
        quotas=None if quotas is None else [
            None if np.isinf(q) else int(q) for q in quotas],
        pseudo_pool_size=int(pool.size))


def _train_gcn(dataset, split, cfg, input_op, features, init_seed,
               dropout_rng, out_dir, t_start) -> TrainResult:
    """Plain two-layer graph-convolution baseline: same optimizer, schedule
    and selection metric, but unweighted mean supervised loss and no
    semantic/pseudo-label machinery."""
    labels = dataset.labels
    num_classes = dataset.num_classes
    train_ids = np.asarray(split.train_ids, dtype=np.int64)
    val_ids = np.asarray(split.val_ids, dtype=np.int64)
    test_ids = np.asarray(split.test_ids, dtype=np.int64)
    train_labels = labels[train_ids]
    counts = np.bincount(train_labels, minlength=num_classes)
    class_weights(counts, uniform=True)  # still reject empty classes

    params = init_gcn_params(dataset.num_features, cfg.model.hidden_dim,
                             num_classes, init_seed)
    optimizer = Adam(params.all_parameters(), cfg.lr, cfg.weight_decay)
    mean_weights = np.full(train_ids.size, 1.0 / train_ids.size)
    eval_marked = np.zeros(dataset.num_nodes, dtype=bool)
    eval_marked[val_ids] = True
    eval_marked[test_ids] = True

    def forward_train(tape):
        return gcn_forward(tape, params, input_op, features,
                           cfg.model.dropout, training=True,
                           rng=dropout_rng)

    def forward_eval():
        return gcn_forward(None, params, input_op, features,
                           cfg.model.dropout)

    def compute_losses(tape, logits):
        sup = ad.weighted_ce(tape, logits, train_ids, train_labels,
                             mean_weights)
        return sup, sup, Tensor(np.zeros((1, 1))), None

    def maybe_refresh(epoch, eval_result):
        return False

    result = _run_epochs(cfg, params, optimizer, forward_train, forward_eval,
                         compute_losses, maybe_refresh, lambda: None,
                         lambda saved: None, labels, val_ids, test_ids,
                         num_classes, eval_marked, out_dir)
    wall = time.perf_counter() - t_start
    if out_dir is not None:
        save_checkpoint(params, os.path.join(out_dir, "checkpoint.bin"))
    return TrainResult(
        best_epoch=result["best_epoch"],
        best_val_balanced_accuracy=result["best_val"],
        test_metrics=result["test_metrics"],
        history=result["history"],
        epochs_run=result["epochs_run"],
        wall_time_sec=wall,
        params=params,
        quotas=None,
        pseudo_pool_size=0)


def _logits_of(result):
    return result.logits if hasattr(result, "logits") else result


def _run_epochs(cfg, params, optimizer, forward_train, forward_eval,
                compute_losses, maybe_refresh, snapshot_extra, restore_extra,
                labels, val_ids, test_ids, num_classes, eval_marked, out_dir):
    history: list[dict] = []
    best_val = -np.inf
    best_epoch = 0
    best_snapshot = _snapshot(params)
    best_extra = snapshot_extra()
    stale_epochs = 0
    log_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_fh = open(os.path.join(out_dir, "epochs.jsonl"), "w",
                      encoding="utf-8")
    try:
        epoch = 0
        for epoch in range(1, cfg.max_epochs + 1):
            tape = Tape()
            train_result = forward_train(tape)
            total, sup, ps, selection = compute_losses(tape, train_result)
            total_value = float(total.value[0, 0])
            if not np.isfinite(total_value):
                norms = ", ".join(
                    f"{name}={float(np.linalg.norm(p.value)):.3e}"
                    for name, p in params.named().items())
                raise TrainingAbortedError(
                    f"non-finite loss at epoch {epoch}: total={total_value}, "
                    f"supervised={float(sup.value[0, 0])}, "
                    f"pseudo={float(ps.value[0, 0])}; "
                    f"parameter norms: {norms}")
            tape.backward(total)
            optimizer.step()

            eval_result = forward_eval()
            eval_logits = _logits_of(eval_result).value
            val_pred = np.argmax(eval_logits[val_ids], axis=1)
            val_bacc = balanced_accuracy(labels[val_ids], val_pred,
                                         num_classes)

            improved = val_bacc > best_val
            if improved:
                # capture the model as scored: refresh has not run yet, so
                # the semantic adjacencies still match this epoch's forward
                best_val = val_bacc
                best_epoch = epoch
                best_snapshot = _snapshot(params)
                best_extra = snapshot_extra()

            refreshed = maybe_refresh(epoch, eval_result)
            record = _epoch_record(epoch, total_value, sup, ps, selection,
                                   val_bacc, refreshed, num_classes,
                                   eval_marked)
            history.append(record)
            if log_fh is not None:
                log_fh.write(canonical_json(record))
                log_fh.write("\n")

            if improved:
                stale_epochs = 0
            else:
                stale_epochs += 1
                if stale_epochs >= cfg.patience:
                    logger.info("early stop at epoch %d (best %.4f at %d)",
                                epoch, best_val, best_epoch)
                    break
            if epoch % 500 == 0:
                logger.info("epoch %d: loss %.4f, val bacc %.4f",
                            epoch, total_value, val_bacc)
    finally:
        if log_fh is not None:
            log_fh.close()

    _restore(params, best_snapshot)
    restore_extra(best_extra)
    final_eval = forward_eval()
    test_pred = np.argmax(_logits_of(final_eval).value[test_ids], axis=1)
    test_metrics = compute_metrics(labels[test_ids], test_pred, num_classes)
    return {"best_epoch": best_epoch, "best_val": best_val,
            "test_metrics": test_metrics, "history": history,
            "epochs_run": epoch}


def _epoch_record(epoch, total_value, sup, ps, selection, val_bacc,
                  refreshed, num_classes, eval_marked) -> dict:
    if selection is not None:
        per_class = [int(c) for c in selection.per_class_counts()]
        num_selected = int(selection.size)
        min_conf = (float(selection.min_confidence())
                    if selection.size else None)
        overlap = int(eval_marked[selection.node_ids].sum())
    else:
        per_class = [0] * num_classes
        num_selected = 0
        min_conf = None
        overlap = 0
    return {
        "epoch": int(epoch),
        "loss_total": float(total_value),
        "loss_supervised": float(sup.value[0, 0]),
        "loss_pseudo": float(ps.value[0, 0]),
        "val_balanced_accuracy": float(val_bacc),
        "pseudo_selected": num_selected,
        "pseudo_per_class": per_class,
        "pseudo_min_confidence": min_conf,
        "pseudo_eval_overlap": overlap,
        "semantic_refreshed": bool(refreshed),
    }


_SEMANTIC_KEY = "semantic.{}.assignments"


def _checkpoint_dict(params, sem_ops) -> dict[str, np.ndarray]:
    """Checkpoint payload: the weight matrices plus, for each layer, the
    cluster assignment vector its semantic adjacency was built from — enough
    to rebuild the exact evaluation-mode model later."""
    out = {name: p.value for name, p in params.named().items()}
    if sem_ops is not None:
        for layer_idx, sem in enumerate(sem_ops):
            out[_SEMANTIC_KEY.format(layer_idx)] = \
                sem.assignments.astype(np.float64).reshape(-1, 1)
    return out


def evaluate(dataset: Dataset, split: SplitSpec, cfg: TrainConfig,
             checkpoint_path) -> dict[str, MetricsReport]:
    """Rebuild the model saved by :func:`train` from its checkpoint and
    score it on the validation and test nodes."""
    cfg.validate()
    split.validate(dataset.num_nodes)
    loaded = load_checkpoint(checkpoint_path)
    features_value = (row_normalize(dataset.features)
                      if cfg.row_normalize_features else dataset.features)
    features = Tensor(features_value)
    input_op = sym_normalize(add_self_loops(dataset.adjacency, 1.0))

    if cfg.baseline_gcn:
        params = init_gcn_params(dataset.num_features, cfg.model.hidden_dim,
                                 dataset.num_classes, seed=0)
        restore_params(params, loaded)
        logits = gcn_forward(None, params, input_op, features,
                             cfg.model.dropout).value
    else:
        model_cfg = cfg.model
        weights = {name: value for name, value in loaded.items()
                   if not name.startswith("semantic.")}
        hops = 1 if model_cfg.struct_equals_input else model_cfg.max_hops
        structural = build_structural(dataset.adjacency, hops)
        struct_op = sym_normalize(add_self_loops(structural.matrix, 1.0))
        cls_op = (struct_op if model_cfg.classifier_adjacency == "structural"
                  else input_op)
        params = init_params(model_cfg, dataset.num_features,
                             dataset.num_classes, seed=0)
        restore_params(params, weights)
        sem_ops = None
        if model_cfg.use_sem:
            sem_ops = []
            for layer_idx in range(model_cfg.num_layers):
                key = _SEMANTIC_KEY.format(layer_idx)
                if key not in loaded:
                    raise CheckpointFormatError(
                        f"checkpoint lacks {key!r}; was it written by a "
                        f"configuration without a semantic encoder?")
                assignments = loaded[key].ravel().astype(np.int64)
                if assignments.size != dataset.num_nodes:
                    raise CheckpointFormatError(
                        f"{key!r} covers {assignments.size} nodes, dataset "
                        f"has {dataset.num_nodes}")
                sem_ops.append(build_semantic(assignments,
                                              model_cfg.num_clusters))
        logits = forward(None, params, model_cfg, features, struct_op,
                         sem_ops, cls_op).logits.value
    predictions = np.argmax(logits, axis=1)
    return {
        "val": compute_metrics(dataset.labels[split.val_ids],
                               predictions[split.val_ids],
                               dataset.num_classes),
        "test": compute_metrics(dataset.labels[split.test_ids],
                                predictions[split.test_ids],
                                dataset.num_classes),
    }
