"""Full model: encoder, stacked layers, readout head, losses, presets.

The parameter count follows a closed-form formula (documented in the README
and implemented in :func:`param_count`), so presets can be checked against
their parameter budget without building anything.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import ValidationError
from .layer import LayerParams, HopMasks, init_layer, layer_forward
from .optim import ParamStore
from .tensor import (Tensor, cross_entropy, embedding, gather_rows, l1_loss,
                     linear, segment_mean)

TASKS = ("graph-class", "graph-reg", "node-class")
ENCODERS = ("embedding", "linear")
READOUTS = ("mean", "root", "node")


@dataclass
class ModelConfig:
    """Architecture plus optimizer settings (the flat config-file schema)."""

    layers: int = 2
    width: int = 32
    state_width: int = 32
    k_hops: int = 3
    dropout: float = 0.0
    mlp_hidden: int | None = None  # default: 2 * width
    task: str = "graph-reg"
    encoder: str = "embedding"
    readout: str = "mean"
    vocab_size: int = 1
    in_dim: int = 1
    n_out: int = 1
    r_min: float = 0.5
    r_max: float = 0.99
    max_phase: float = 2.0 * math.pi
    gamma_enabled: bool = True
    lr: float = 1e-3
    weight_decay: float = 0.0
    epochs: int = 100
    batch_size: int = 32
    preset: str = ""

    def __post_init__(self):
        if self.k_hops < 1:
            raise ValidationError(f"k_hops must be >= 1, got {self.k_hops}")
        if self.task not in TASKS:
            raise ValidationError(f"unknown task {self.task!r}; choose from {TASKS}")
        if self.encoder not in ENCODERS:
            raise ValidationError(f"unknown encoder {self.encoder!r}")
        if self.readout not in READOUTS:
            raise ValidationError(f"unknown readout {self.readout!r}")
        if self.task == "node-class" and self.readout != "node":
            raise ValidationError("node-class task requires the per-node readout")
        if self.task != "node-class" and self.readout == "node":
            raise ValidationError("per-node readout requires the node-class task")

    @property
    def hidden(self) -> int:
        return self.mlp_hidden if self.mlp_hidden is not None else 2 * self.width

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def config_from_dict(obj: dict) -> ModelConfig:
    known = {f.name for f in fields(ModelConfig)}
    unknown = set(obj) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    return ModelConfig(**obj)


def _tree_preset(depth: int) -> ModelConfig:
    n_leaves = 2**depth
    layers, k = {2: (1, 4), 3: (2, 3), 4: (2, 4), 5: (3, 4),
                 6: (3, 4), 7: (3, 5), 8: (3, 6)}[depth]
    assert layers * k >= 2 * depth
    return ModelConfig(
        layers=layers, width=max(32, 4 * n_leaves), state_width=max(32, 2 * n_leaves),
        k_hops=k, dropout=0.0, task="graph-class", encoder="linear", readout="root",
        in_dim=2 * n_leaves, n_out=n_leaves,
        r_min=0.9 if depth >= 5 else 0.5, r_max=0.999 if depth >= 5 else 0.99,
        lr=3e-3, weight_decay=0.0, epochs=400, batch_size=64,
        preset=f"tree-r{depth}",
    )


def presets() -> dict[str, ModelConfig]:
    out = {
        "zinc": ModelConfig(
            layers=11, width=72, state_width=72, k_hops=4, dropout=0.2,
            mlp_hidden=96, task="graph-reg", encoder="embedding", readout="mean",
            vocab_size=28, n_out=1, lr=1e-3, weight_decay=0.1, epochs=2000,
            batch_size=32, preset="zinc",
        ),
        "toy": ModelConfig(
            layers=1, width=8, state_width=8, k_hops=2, dropout=0.0,
            task="graph-reg", encoder="embedding", readout="mean",
            vocab_size=4, n_out=1, lr=3e-3, weight_decay=0.0, epochs=50,
            batch_size=16, preset="toy",
        ),
    }
    for depth in range(2, 9):
        out[f"tree-r{depth}"] = _tree_preset(depth)
    return out


def param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count; must match build_model exactly."""
    d, ds, dh = cfg.width, cfg.state_width, cfg.hidden
    if cfg.encoder == "embedding":
        enc = cfg.vocab_size * d
    else:
        enc = cfg.in_dim * d + d
    per_layer = (
        d * dh + dh + dh * d + d      # aggregation MLP
        + 2 * ds + 2 * ds * d + 2 * d * ds  # recurrence: nu, theta, W_in, W_out
        + 2 * d * d                   # GLU
        + 4 * d                       # two layer norms
    )
    head = d * cfg.n_out + cfg.n_out
    return enc + cfg.layers * per_layer + head


@dataclass
class Model:
    """Parameter store plus the layer views needed to run the forward pass."""

    cfg: ModelConfig
    store: ParamStore
    layer_params: list[LayerParams] = field(default_factory=list)

    def max_eigenvalue_magnitude(self) -> float:
        mags = [
            float(np.exp(-np.exp(p.nu_log.data)).max()) for p in self.layer_params
        ]
        return max(mags)


def build_model(cfg: ModelConfig, seed: int) -> Model:
    """Initialize all parameters from a single seed."""
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    store = ParamStore()
    d = cfg.width
    if cfg.encoder == "embedding":
        store.add("encoder.weight", rng.standard_normal((cfg.vocab_size, d)) / np.sqrt(d))
    else:
        store.add("encoder.w", rng.standard_normal((cfg.in_dim, d)) / np.sqrt(cfg.in_dim))
        store.add("encoder.b", np.zeros(d), decay=False)
    layer_params = [
        init_layer(store, f"layers.{i}", d, cfg.state_width, cfg.hidden,
                   cfg.dropout, rng, r_min=cfg.r_min, r_max=cfg.r_max,
                   max_phase=cfg.max_phase, gamma_enabled=cfg.gamma_enabled)
        for i in range(cfg.layers)
    ]
    store.add("head.w", rng.standard_normal((d, cfg.n_out)) / np.sqrt(d))
    store.add("head.b", np.zeros(cfg.n_out), decay=False)
    model = Model(cfg=cfg, store=store, layer_params=layer_params)
    assert store.num_params() == param_count(cfg)
    return model


def attach_layer_views(cfg: ModelConfig, store: ParamStore) -> Model:
    """Rebuild a Model around an existing store (e.g. from a checkpoint)."""
    names = [f.name for f in fields(LayerParams) if f.name not in
             ("dropout_rate", "gamma_enabled")]
    key = {
        "agg_w1": "agg.w1", "agg_b1": "agg.b1", "agg_w2": "agg.w2", "agg_b2": "agg.b2",
        "nu_log": "lru.nu_log", "theta_log": "lru.theta_log",
        "w_in_re": "lru.w_in_re", "w_in_im": "lru.w_in_im",
        "w_out_re": "lru.w_out_re", "w_out_im": "lru.w_out_im",
        "glu_w1": "glu.w1", "glu_w2": "glu.w2",
        "norm_a_g": "norm_a.g", "norm_a_b": "norm_a.b",
        "norm_b_g": "norm_b.g", "norm_b_b": "norm_b.b",
    }
    layer_params = []
    for i in range(cfg.layers):
        kwargs = {n: store[f"layers.{i}.{key[n]}"] for n in names}
        layer_params.append(LayerParams(dropout_rate=cfg.dropout,
                                        gamma_enabled=cfg.gamma_enabled, **kwargs))
    return Model(cfg=cfg, store=store, layer_params=layer_params)


@dataclass
class Batch:
    """A disjoint union of graphs ready for the forward pass."""

    masks: HopMasks
    node_ids: np.ndarray | None
    node_feat: np.ndarray | None
    graph_labels: np.ndarray | None
    node_labels: np.ndarray | None


def forward_model(model: Model, batch: Batch, train: bool = False,
                  rng: np.random.Generator | None = None) -> Tensor:
    """Predictions for one batch: per-graph or per-node rows."""
    cfg = model.cfg
    store = model.store
    if cfg.encoder == "embedding":
        if batch.node_ids is None:
            raise ValidationError("embedding encoder requires categorical features")
        h = embedding(store["encoder.weight"], batch.node_ids)
    else:
        if batch.node_feat is None:
            raise ValidationError("linear encoder requires vector features")
        if batch.node_feat.shape[1] != cfg.in_dim:
            raise ValidationError(
                f"feature dim {batch.node_feat.shape[1]} != configured {cfg.in_dim}"
            )
        h = linear(Tensor(batch.node_feat), store["encoder.w"], store["encoder.b"])
    for p in model.layer_params:
        h = layer_forward(h, batch.masks, p, train=train, rng=rng)
    if cfg.readout == "mean":
        pooled = segment_mean(h, batch.masks.graph_ids, batch.masks.n_graphs)
    elif cfg.readout == "root":
        pooled = gather_rows(h, batch.masks.root_index)
    else:
        pooled = h
    return linear(pooled, store["head.w"], store["head.b"])


def loss_and_metric(cfg: ModelConfig, pred: Tensor, batch: Batch) -> tuple[Tensor, float]:
    """Task loss (a scalar Tensor) and its reporting metric.

    Classification reports accuracy; regression reports MAE.
    """
    if cfg.task == "graph-reg":
        target = np.asarray(batch.graph_labels, dtype=np.float64).reshape(pred.data.shape)
        loss = l1_loss(pred, target)
        return loss, float(loss.data)
    if cfg.task == "graph-class":
        labels = np.asarray(batch.graph_labels, dtype=np.int64)
        loss = cross_entropy(pred, labels)
        acc = float((pred.data.argmax(axis=1) == labels).mean())
        return loss, acc
    labels = np.asarray(batch.node_labels, dtype=np.int64)
    loss = cross_entropy(pred, labels, ignore_index=-1)
    live = labels >= 0
    acc = float((pred.data[live].argmax(axis=1) == labels[live]).mean())
    return loss, acc


def metric_direction(cfg: ModelConfig) -> int:
    """+1 if larger metric is better (accuracy), -1 if smaller (MAE)."""
    return -1 if cfg.task == "graph-reg" else 1


def with_overrides(cfg: ModelConfig, overrides: dict) -> ModelConfig:
    known = {f.name for f in fields(ModelConfig)}
    unknown = set(overrides) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    return replace(cfg, **overrides)
