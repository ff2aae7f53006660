"""The dual-connectivity node classifier and its baseline.

Architecture (fused form, per layer)::

    H^l = relu( P (H_s^{l-1} || H_m^{l-1}) W^l )

computed twice per layer — once with the structural propagation operator
``P = normalized hop-distance adjacency`` producing the structural stream
``H_s``, once with the per-layer semantic (cluster) operator producing the
semantic stream ``H_m``.  Layer 1 consumes the raw features for both
streams.  The classifier is one more propagation layer over the
concatenated final streams followed by ReLU and a linear map with bias.

Variant flags prune this structure (single-stream variants, independent
streams that never see each other's activations, etc.); the trainer decides
which adjacencies to build and hands them in.
"""

from __future__ import annotations

import struct as binstruct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tape, Tensor
from .connectivity import SemanticAdjacency
from .errors import CheckpointFormatError, InvalidParameterError
from .ioutil import atomic_write_bytes
from .sparse import CsrMatrix

CLASSIFIER_ADJACENCY_CHOICES = ("structural", "input_graph")


@dataclass
class ModelConfig:
    """Model architecture and variant switches.

    ``max_hops`` bounds the hop-distance adjacency; ``num_clusters`` sizes
    the semantic clustering; both are consumed by the trainer when building
    the propagation operators.
    """

    num_layers: int = 2
    hidden_dim: int = 64
    dropout: float = 0.5
    max_hops: int = 2
    num_clusters: int = 70
    classifier_adjacency: str = "structural"
    # variant flags
    independent_encoders: bool = False
    struct_only: bool = False
    sem_only: bool = False
    struct_equals_input: bool = False
    uniform_class_weights: bool = False
    disable_pseudo: bool = False
    imbalanced_pseudo: bool = False
    freeze_semantic: bool = False

    def validate(self) -> None:
        if self.num_layers < 1:
            raise InvalidParameterError("num_layers must be >= 1")
        if self.hidden_dim < 1:
            raise InvalidParameterError("hidden_dim must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidParameterError("dropout must be in [0, 1)")
        if self.max_hops < 1:
            raise InvalidParameterError("max_hops must be >= 1")
        if self.num_clusters < 1:
            raise InvalidParameterError("num_clusters must be >= 1")
        if self.classifier_adjacency not in CLASSIFIER_ADJACENCY_CHOICES:
            raise InvalidParameterError(
                f"classifier_adjacency must be one of "
                f"{CLASSIFIER_ADJACENCY_CHOICES}")
        if self.struct_only and self.sem_only:
            raise InvalidParameterError(
                "struct_only and sem_only are mutually exclusive; at least "
                "one encoder stream must remain")

    @property
    def use_struct(self) -> bool:
        return not self.sem_only

    @property
    def use_sem(self) -> bool:
        return not self.struct_only

    def encoder_input_dim(self, layer_idx: int, num_features: int) -> int:
        """Width of the input a given encoder layer consumes."""
        if layer_idx == 0:
            return num_features
        if self.independent_encoders or self.struct_only or self.sem_only:
            return self.hidden_dim
        return 2 * self.hidden_dim

    @property
    def classifier_input_dim(self) -> int:
        if self.struct_only or self.sem_only:
            return self.hidden_dim
        return 2 * self.hidden_dim


@dataclass(eq=False)
class DualEncoderParams:
    struct_weights: list[Parameter] = field(default_factory=list)
    sem_weights: list[Parameter] = field(default_factory=list)
    cls_gcn: Parameter = None
    cls_out: Parameter = None
    cls_bias: Parameter = None

    def all_parameters(self) -> list[Parameter]:
        return (list(self.struct_weights) + list(self.sem_weights)
                + [self.cls_gcn, self.cls_out, self.cls_bias])

    def named(self) -> dict[str, Parameter]:
        out = {}
        for i, p in enumerate(self.struct_weights):
            out[f"struct.{i}"] = p
        for i, p in enumerate(self.sem_weights):
            out[f"sem.{i}"] = p
        out["cls.gcn"] = self.cls_gcn
        out["cls.out"] = self.cls_out
        out["cls.bias"] = self.cls_bias
        return out


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Parameter:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Parameter(rng.uniform(-limit, limit, size=(fan_in, fan_out)))


def init_params(config: ModelConfig, num_features: int, num_classes: int,
                seed: int) -> DualEncoderParams:
    """Glorot-uniform weights (seeded), zero classifier bias.  Draw order is
    fixed: structural layers, semantic layers, classifier."""
    config.validate()
    rng = np.random.default_rng(seed)
    params = DualEncoderParams()
    if config.use_struct:
        params.struct_weights = [
            _glorot(rng, config.encoder_input_dim(i, num_features),
                    config.hidden_dim)
            for i in range(config.num_layers)]
    if config.use_sem:
        params.sem_weights = [
            _glorot(rng, config.encoder_input_dim(i, num_features),
                    config.hidden_dim)
            for i in range(config.num_layers)]
    params.cls_gcn = _glorot(rng, config.classifier_input_dim,
                             config.hidden_dim)
    params.cls_out = _glorot(rng, config.hidden_dim, num_classes)
    params.cls_bias = Parameter(np.zeros((1, num_classes)))
    return params


@dataclass(eq=False)
class ForwardResult:
    logits: Tensor
    struct_states: list[np.ndarray]   # per-layer structural activations
    sem_states: list[np.ndarray]      # per-layer semantic activations

    def layer_state(self, layer_idx: int) -> np.ndarray:
        """Concatenated activations of one layer (clustering input for the
        next layer's semantic adjacency)."""
        parts = []
        if self.struct_states:
            parts.append(self.struct_states[layer_idx])
        if self.sem_states:
            parts.append(self.sem_states[layer_idx])
        return np.concatenate(parts, axis=1) if len(parts) > 1 else parts[0]


def encoder_layer(tape: Tape | None, params: DualEncoderParams,
                  config: ModelConfig, layer_idx: int,
                  prev_struct: Tensor | None, prev_sem: Tensor | None,
                  features: Tensor, struct_op: CsrMatrix | None,
                  sem_op: SemanticAdjacency | None, *,
                  training: bool = False,
                  rng: np.random.Generator | None = None
                  ) -> tuple[Tensor | None, Tensor | None]:
    """One encoder layer for both streams.  Layer 0 consumes the features;
    deeper layers consume the previous streams — concatenated and sharing a
    single dropout mask in the fused form, separately dropped when the
    encoders are independent."""
    drop = config.dropout

    def dropped(t: Tensor) -> Tensor:
        return ad.dropout(tape, t, drop, rng, training=training)

    if layer_idx == 0:
        inp = dropped(features)
        inp_struct = inp_sem = inp
    elif config.independent_encoders:
        inp_struct = dropped(prev_struct) if config.use_struct else None
        inp_sem = dropped(prev_sem) if config.use_sem else None
    elif config.struct_only:
        inp_struct = dropped(prev_struct)
        inp_sem = None
    elif config.sem_only:
        inp_sem = dropped(prev_sem)
        inp_struct = None
    else:
        inp = dropped(ad.concat_cols(tape, prev_struct, prev_sem))
        inp_struct = inp_sem = inp

    out_struct = out_sem = None
    if config.use_struct:
        out_struct = ad.relu(tape, ad.propagate(
            tape, struct_op,
            ad.matmul(tape, inp_struct, params.struct_weights[layer_idx])))
    if config.use_sem:
        out_sem = ad.relu(tape, ad.propagate(
            tape, sem_op,
            ad.matmul(tape, inp_sem, params.sem_weights[layer_idx])))
    return out_struct, out_sem


def forward(tape: Tape | None, params: DualEncoderParams,
            config: ModelConfig, features: Tensor,
            struct_op: CsrMatrix | None,
            sem_ops: list[SemanticAdjacency] | None,
            cls_op, *, training: bool = False,
            rng: np.random.Generator | None = None) -> ForwardResult:
    """Full forward pass.  ``sem_ops`` holds one semantic adjacency per
    layer (ignored entirely under ``struct_only``); ``cls_op`` is the
    propagation operator of the classifier layer."""
    h_struct: Tensor | None = None
    h_sem: Tensor | None = None
    struct_states: list[np.ndarray] = []
    sem_states: list[np.ndarray] = []
    for layer_idx in range(config.num_layers):
        sem_op = sem_ops[layer_idx] if config.use_sem else None
        h_struct, h_sem = encoder_layer(
            tape, params, config, layer_idx, h_struct, h_sem, features,
            struct_op, sem_op, training=training, rng=rng)
        if h_struct is not None:
            struct_states.append(h_struct.value)
        if h_sem is not None:
            sem_states.append(h_sem.value)

    logits = classify(tape, params, config, h_struct, h_sem, cls_op,
                      training=training, rng=rng)
    return ForwardResult(logits=logits, struct_states=struct_states,
                         sem_states=sem_states)


def classify(tape: Tape | None, params: DualEncoderParams,
             config: ModelConfig, h_struct: Tensor | None,
             h_sem: Tensor | None, cls_op, *, training: bool = False,
             rng: np.random.Generator | None = None) -> Tensor:
    """Classifier head: one propagation layer over the concatenated final
    encoder states, then a linear output layer with bias."""
    if h_struct is not None and h_sem is not None:
        cls_in = ad.concat_cols(tape, h_struct, h_sem)
    else:
        cls_in = h_struct if h_struct is not None else h_sem
    cls_in = ad.dropout(tape, cls_in, config.dropout, rng, training=training)
    hidden = ad.relu(tape, ad.propagate(
        tape, cls_op, ad.matmul(tape, cls_in, params.cls_gcn)))
    hidden = ad.dropout(tape, hidden, config.dropout, rng, training=training)
    return ad.add_row_bias(tape, ad.matmul(tape, hidden, params.cls_out),
                           params.cls_bias)


# ---------------------------------------------------------------------------
# Plain two-layer graph-convolution baseline
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class GcnParams:
    w1: Parameter
    b1: Parameter
    w2: Parameter
    b2: Parameter

    def all_parameters(self) -> list[Parameter]:
        return [self.w1, self.b1, self.w2, self.b2]

    def named(self) -> dict[str, Parameter]:
        return {"gcn.w1": self.w1, "gcn.b1": self.b1,
                "gcn.w2": self.w2, "gcn.b2": self.b2}


def init_gcn_params(num_features: int, hidden_dim: int, num_classes: int,
                    seed: int) -> GcnParams:
    rng = np.random.default_rng(seed)
    return GcnParams(
        w1=_glorot(rng, num_features, hidden_dim),
        b1=Parameter(np.zeros((1, hidden_dim))),
        w2=_glorot(rng, hidden_dim, num_classes),
        b2=Parameter(np.zeros((1, num_classes))))


def gcn_forward(tape: Tape | None, params: GcnParams, adj_op: CsrMatrix,
                features: Tensor, dropout_rate: float, *,
                training: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
    x = ad.dropout(tape, features, dropout_rate, rng, training=training)
    h = ad.relu(tape, ad.add_row_bias(
        tape, ad.propagate(tape, adj_op, ad.matmul(tape, x, params.w1)),
        params.b1))
    h = ad.dropout(tape, h, dropout_rate, rng, training=training)
    return ad.add_row_bias(
        tape, ad.propagate(tape, adj_op, ad.matmul(tape, h, params.w2)),
        params.b2)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_MAGIC = b"DGN1"
_VERSION = 1


def checkpoint_bytes(named_values: dict[str, np.ndarray]) -> bytes:
    """Serialize named matrices: magic, version, count, then per matrix a
    length-prefixed UTF-8 name, uint32 rows/cols, and row-major
    little-endian float64 payload."""
    chunks = [_MAGIC, binstruct.pack("<II", _VERSION, len(named_values))]
    for name, value in named_values.items():
        raw_name = name.encode("utf-8")
        arr = np.ascontiguousarray(value, dtype="<f8")
        if arr.ndim != 2:
            raise CheckpointFormatError(f"matrix {name!r} must be 2-D")
        chunks.append(binstruct.pack("<I", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(binstruct.pack("<II", arr.shape[0], arr.shape[1]))
        chunks.append(arr.tobytes(order="C"))
    return b"".join(chunks)


def save_checkpoint(params, path) -> None:
    """Write the parameters of a model (anything with ``named()``) or a
    plain name→array dict, atomically."""
    named = params.named() if hasattr(params, "named") else params
    values = {name: (p.value if isinstance(p, Tensor) else p)
              for name, p in named.items()}
    atomic_write_bytes(path, checkpoint_bytes(values))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic; not a checkpoint")
    try:
        version, count = binstruct.unpack_from("<II", data, 4)
        if version != _VERSION:
            raise CheckpointFormatError(
                f"{path}: unsupported version {version}")
        offset = 12
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = binstruct.unpack_from("<I", data, offset)
            offset += 4
            name = data[offset:offset + name_len].decode("utf-8")
            offset += name_len
            rows, cols = binstruct.unpack_from("<II", data, offset)
            offset += 8
            nbytes = rows * cols * 8
            payload = data[offset:offset + nbytes]
            if len(payload) != nbytes:
                raise CheckpointFormatError(f"{path}: truncated payload")
            arr = np.frombuffer(payload, dtype="<f8")
            offset += nbytes
            out[name] = arr.reshape(rows, cols).astype(np.float64)
        if offset != len(data):
            raise CheckpointFormatError(f"{path}: trailing bytes")
    except binstruct.error as exc:
        raise CheckpointFormatError(f"{path}: truncated header: {exc}") from exc
    return out


def restore_params(params, loaded: dict[str, np.ndarray]) -> None:
    """Copy checkpoint matrices into existing parameters, by name, with
    exact shape checks."""
    named = params.named() if hasattr(params, "named") else params
    if set(named) != set(loaded):
        missing = sorted(set(named) - set(loaded))
        extra = sorted(set(loaded) - set(named))
        raise CheckpointFormatError(
            f"checkpoint names do not match model (missing {missing}, "
            f"unexpected {extra})")
    for name, p in named.items():
        if loaded[name].shape != p.value.shape:
            raise CheckpointFormatError(
                f"shape mismatch for {name!r}: checkpoint "
                f"{loaded[name].shape} vs model {p.value.shape}")
        p.value[...] = loaded[name]
