"""Mean-aggregating message-passing regressor built on the autodiff ops.

Each layer concatenates a node's state with the mean of its neighbors'
states, applies a linear map, batch normalization, ReLU, then dropout. A
stack of such layers feeds a single linear output neuron. The node-level
forward scores every row of the dataset graph; the graph-level forward
scores each row through its own one-hop subgraph whose node states are mean
pooled before the output neuron.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .dataset import Normalizer
from .errors import CheckpointError, InvalidConfig, ShapeMismatch
from .knn import KnnGraph, ego_subgraph

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 128
    depth: int = 3
    dropout: float = 0.25

    def validate(self) -> None:
        if self.hidden < 1:
            raise InvalidConfig(f"hidden width must be positive, got {self.hidden}")
        if self.depth < 1:
            raise InvalidConfig(f"depth must be positive, got {self.depth}")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidConfig(f"dropout must be in [0, 1), got {self.dropout}")


class SageLayer:
    """One message-passing layer: weights over [self || neighbor mean]."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray, dropout: float):
        out_width, combined = weight.shape
        if combined % 2 != 0:
            raise ShapeMismatch("layer weight columns must cover two concatenated blocks")
        self.weight = ad.Tensor(weight, requires_grad=True)
        self.bias = ad.Tensor(bias.reshape(1, -1), requires_grad=True)
        self.bn = ad.BatchNormState(out_width)
        self.dropout = float(dropout)

    @property
    def in_width(self) -> int:
        return self.weight.shape[1] // 2

    @property
    def out_width(self) -> int:
        return self.weight.shape[0]


class SageModel:
    """Layer stack plus a linear head mapping the last hidden state to one value."""

    def __init__(
        self,
        layers: list[SageLayer],
        head_weight: np.ndarray,
        head_bias: np.ndarray,
        config: ModelConfig,
        input_dim: int,
        seed: int,
        dropout_rng: np.random.Generator,
    ):
        self.layers = layers
        self.head_weight = ad.Tensor(head_weight, requires_grad=True)
        self.head_bias = ad.Tensor(head_bias.reshape(1, 1), requires_grad=True)
        self.config = config
        self.input_dim = int(input_dim)
        self.seed = int(seed)
        self.dropout_rng = dropout_rng

    def parameters(self) -> list[tuple[str, ad.Tensor]]:
        """Stable, named ordering of every trainable tensor."""
        params: list[tuple[str, ad.Tensor]] = []
        for i, layer in enumerate(self.layers):
            params.append((f"layer{i}.weight", layer.weight))
            params.append((f"layer{i}.bias", layer.bias))
            params.append((f"layer{i}.bn_gamma", layer.bn.gamma))
            params.append((f"layer{i}.bn_beta", layer.bn.beta))
        params.append(("head.weight", self.head_weight))
        params.append(("head.bias", self.head_bias))
        return params

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Parameters plus batch-norm running statistics, all by name."""
        arrays = {name: t.values for name, t in self.parameters()}
        for i, layer in enumerate(self.layers):
            arrays[f"layer{i}.bn_running_mean"] = layer.bn.running_mean
            arrays[f"layer{i}.bn_running_var"] = layer.bn.running_var
        return arrays

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.state_arrays().items()}

    def restore(self, snapshot: dict[str, np.ndarray]) -> None:
        for name, t in self.parameters():
            t.values = snapshot[name].copy()
        for i, layer in enumerate(self.layers):
            layer.bn.running_mean = snapshot[f"layer{i}.bn_running_mean"].copy()
            layer.bn.running_var = snapshot[f"layer{i}.bn_running_var"].copy()


def _glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def init_model(input_dim: int, config: ModelConfig = ModelConfig(), seed: int = 42) -> SageModel:
    """Deterministically initialize a model: uniform Glorot weights, zero
    biases, unit batch-norm scale. The seed also fixes the dropout stream."""
    config.validate()
    if input_dim < 1:
        raise InvalidConfig(f"input_dim must be positive, got {input_dim}")
    init_ss, dropout_ss = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(init_ss)
    layers = []
    width_in = input_dim
    for _ in range(config.depth):
        weight = _glorot(rng, config.hidden, 2 * width_in)
        layers.append(SageLayer(weight, np.zeros(config.hidden), config.dropout))
        width_in = config.hidden
    head_weight = _glorot(rng, 1, config.hidden)
    return SageModel(
        layers=layers,
        head_weight=head_weight,
        head_bias=np.zeros(1),
        config=config,
        input_dim=input_dim,
        seed=seed,
        dropout_rng=np.random.default_rng(dropout_ss),
    )


def sage_layer_forward(
    layer: SageLayer,
    h: ad.Tensor,
    graph: KnnGraph,
    mode: str,
    rng: np.random.Generator | None = None,
) -> ad.Tensor:
    """neighbor mean -> concat -> linear -> batch norm -> relu -> dropout."""
    agg = ad.neighbor_mean(h, graph)
    combined = ad.concat_cols(h, agg)
    z = ad.add_bias(ad.matmul(combined, ad.transpose(layer.weight)), layer.bias)
    activated = ad.relu(ad.batch_norm(z, layer.bn, mode))
    return ad.dropout(activated, layer.dropout, mode, rng)


def _run_stack(model: SageModel, graph: KnnGraph, features: np.ndarray, mode: str) -> ad.Tensor:
    h = ad.Tensor(np.asarray(features, dtype=np.float64))
    rng = model.dropout_rng if mode == "train" else None
    for layer in model.layers:
        h = sage_layer_forward(layer, h, graph, mode, rng)
    return h


def _head(model: SageModel, h: ad.Tensor) -> ad.Tensor:
    return ad.add_bias(ad.matmul(h, ad.transpose(model.head_weight)), model.head_bias)


def forward_node_level(
    model: SageModel, graph: KnnGraph, features: np.ndarray, mode: str
) -> ad.Tensor:
    """One prediction per graph node, shape (n, 1)."""
    if features.shape[1] != model.input_dim:
        raise ShapeMismatch(
            f"model expects {model.input_dim} features, got {features.shape[1]}"
        )
    return _head(model, _run_stack(model, graph, features, mode))


@dataclass
class EgoUnion:
    """All one-hop subgraphs stacked into one disjoint graph.

    member_rows maps each union node back to its dataset row; pool averages
    union rows per subgraph so pooled row s describes sample s.
    """

    member_rows: np.ndarray
    graph: KnnGraph
    pool: sp.csr_matrix
    pool_t: sp.csr_matrix


def build_ego_union(graph: KnnGraph) -> EgoUnion:
    if graph._ego_union is not None:
        return graph._ego_union
    blocks = [ego_subgraph(graph, center) for center in range(graph.n)]
    sizes = np.array([b.n for b in blocks], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    member_rows = np.concatenate([b.nodes for b in blocks])
    degrees = np.concatenate([np.diff(b.indptr) for b in blocks])
    indptr = np.concatenate([[0], np.cumsum(degrees)]).astype(np.int64)
    indices = np.concatenate(
        [b.indices + off for b, off in zip(blocks, offsets[:-1], strict=True)]
    ).astype(np.int64)
    union_graph = KnnGraph(n=total, k=graph.k, indptr=indptr, indices=indices)
    pool_indptr = offsets.astype(np.int64)
    pool_data = np.repeat(1.0 / sizes.astype(np.float64), sizes)
    pool = sp.csr_matrix(
        (pool_data, np.arange(total, dtype=np.int64), pool_indptr),
        shape=(graph.n, total),
    )
    union = EgoUnion(
        member_rows=member_rows,
        graph=union_graph,
        pool=pool,
        pool_t=pool.T.tocsr(),
    )
    graph._ego_union = union
    return union


def forward_graph_level(
    model: SageModel, graph: KnnGraph, features: np.ndarray, mode: str
) -> ad.Tensor:
    """One prediction per dataset row, each computed from the row's one-hop
    subgraph: run the stack on the union of all subgraphs, mean pool each
    subgraph's node states, then apply the head. Shape (n, 1)."""
    if features.shape[1] != model.input_dim:
        raise ShapeMismatch(
            f"model expects {model.input_dim} features, got {features.shape[1]}"
        )
    union = build_ego_union(graph)
    gathered = np.asarray(features, dtype=np.float64)[union.member_rows]
    h = _run_stack(model, union.graph, gathered, mode)
    pooled = ad.mean_pool(h, union.pool, union.pool_t)
    return _head(model, pooled)


# --- checkpointing -------------------------------------------------------------


def save_checkpoint(path: str, model: SageModel, normalizer: Normalizer, extra: dict | None = None) -> None:
    """Write the full model state as versioned JSON with exact float values."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "input_dim": model.input_dim,
        "config": {
            "hidden": model.config.hidden,
            "depth": model.config.depth,
            "dropout": model.config.dropout,
        },
        "seed": model.seed,
        "arrays": {name: arr.tolist() for name, arr in model.state_arrays().items()},
        "normalizer": normalizer.as_dict(),
    }
    if extra:
        payload["extra"] = extra
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=1)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> tuple[SageModel, Normalizer, dict]:
    """Rebuild a model whose evaluation output matches the saved one exactly."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
    except OSError as exc:
        raise CheckpointError(f"cannot open {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"cannot parse {path!r}: {exc}") from exc
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {version!r}, expected {CHECKPOINT_VERSION}"
        )
    try:
        cfg = payload["config"]
        config = ModelConfig(
            hidden=int(cfg["hidden"]), depth=int(cfg["depth"]), dropout=float(cfg["dropout"])
        )
        model = init_model(int(payload["input_dim"]), config, int(payload["seed"]))
        arrays = {
            name: np.asarray(values, dtype=np.float64)
            for name, values in payload["arrays"].items()
        }
        expected = set(model.snapshot())
        if set(arrays) != expected:
            raise CheckpointError("checkpoint arrays do not match the model layout")
        model.restore(arrays)
        normalizer = Normalizer.from_dict(payload["normalizer"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint {path!r}: {exc}") from exc
    return model, normalizer, payload.get("extra", {})
