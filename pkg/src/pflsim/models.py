"""Toy layered classifiers with LoRA adapters and binary checkpoints.

A LayeredModel is an ordered stack of named weight matrices (a desk-scale
stand-in for a transformer's layers): features flow through each matrix with
a tanh between hidden layers, the last layer emits class logits, and the
loss is mean cross-entropy.  Layers can be frozen; frozen layers neither
receive gradients nor count as trainable (and protocols exclude them from
transmitted updates).

A LoRA adapter replaces a frozen base weight ``W`` with
``W + scaling * A @ B`` where ``A`` is ``d_out x r`` and ``B`` is
``r x d_in``; only A and B train, and the adapter can be merged back into a
plain model after training without changing the forward function.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, ShapeError
from .fed_data import ProviderGroup, Record
from .rng import stream

_ACTIVATIONS = ("tanh", "identity")


@dataclass
class Layer:
    name: str
    weight: np.ndarray  # d_out x d_in
    frozen: bool = False


@dataclass
class LoraAdapter:
    """Low-rank delta for one frozen base layer: effective W + scaling * A @ B."""

    target_layer: str
    rank: int
    a: np.ndarray  # d_out x rank
    b: np.ndarray  # rank x d_in
    scaling: float
    base_was_frozen: bool = False

    @property
    def parameter_count(self) -> int:
        return self.a.size + self.b.size


class LayeredModel:
    """Ordered named weight matrices with cross-entropy loss over class logits."""

    def __init__(self, layers: Sequence[Layer], activation: str = "tanh"):
        if activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        names = [l.name for l in layers]
        if len(set(names)) != len(names):
            raise ConfigError("layer names must be unique")
        for prev, cur in zip(layers, layers[1:]):
            if cur.weight.shape[1] != prev.weight.shape[0]:
                raise ShapeError(
                    f"layer {cur.name} expects {cur.weight.shape[1]} inputs, "
                    f"{prev.name} outputs {prev.weight.shape[0]}"
                )
        self.layers: List[Layer] = list(layers)
        self.activation = activation
        self.adapters: Dict[str, LoraAdapter] = {}

    # -- structure ----------------------------------------------------------

    def layer(self, name: str) -> Layer:
        for l in self.layers:
            if l.name == name:
                return l
        raise ConfigError(f"no layer named {name!r}")

    def effective_weight(self, name: str) -> np.ndarray:
        layer = self.layer(name)
        adapter = self.adapters.get(name)
        if adapter is None:
            return layer.weight
        return layer.weight + adapter.scaling * (adapter.a @ adapter.b)

    @property
    def feature_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def n_classes(self) -> int:
        return self.layers[-1].weight.shape[0]

    def total_parameter_count(self) -> int:
        return sum(l.weight.size for l in self.layers)

    def clone(self) -> "LayeredModel":
        dup = LayeredModel(
            [Layer(l.name, l.weight.copy(), l.frozen) for l in self.layers], self.activation
        )
        for name, ad in self.adapters.items():
            dup.adapters[name] = LoraAdapter(
                ad.target_layer, ad.rank, ad.a.copy(), ad.b.copy(), ad.scaling, ad.base_was_frozen
            )
        return dup

    # -- trainable parameter tree --------------------------------------------

    def trainable_names(self) -> List[str]:
        """Deterministic ordering: layer order, adapter A before B."""
        names: List[str] = []
        for layer in self.layers:
            adapter = self.adapters.get(layer.name)
            if adapter is not None:
                names.append(f"{layer.name}.lora_A")
                names.append(f"{layer.name}.lora_B")
            elif not layer.frozen:
                names.append(layer.name)
        return names

    def _param_ref(self, name: str) -> np.ndarray:
        if name.endswith(".lora_A"):
            return self.adapters[name[: -len(".lora_A")]].a
        if name.endswith(".lora_B"):
            return self.adapters[name[: -len(".lora_B")]].b
        return self.layer(name).weight

    def get_trainable(self) -> Dict[str, np.ndarray]:
        return {name: self._param_ref(name).copy() for name in self.trainable_names()}

    def set_trainable(self, params: Dict[str, np.ndarray]) -> None:
        for name in self.trainable_names():
            ref = self._param_ref(name)
            value = np.asarray(params[name], dtype=np.float64)
            if value.shape != ref.shape:
                raise ShapeError(f"parameter {name}: expected {ref.shape}, got {value.shape}")
            ref[...] = value

    def trainable_parameter_count(self) -> int:
        return sum(self._param_ref(n).size for n in self.trainable_names())

    # -- forward / loss / gradients ------------------------------------------

    def _forward_cached(self, x: np.ndarray) -> List[np.ndarray]:
        h = np.asarray(x, dtype=np.float64)
        if h.ndim == 1:
            h = h[None, :]
        cache = [h]
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            z = h @ self.effective_weight(layer.name).T
            h = np.tanh(z) if (self.activation == "tanh" and i < last) else z
            cache.append(h)
        return cache

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Class logits, one row per example."""
        return self._forward_cached(x)[-1]

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x).argmax(axis=1)

    def loss(self, x: np.ndarray, y: np.ndarray) -> float:
        logits = self.forward(x)
        return float(-log_softmax(logits)[np.arange(len(y)), y].mean())

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray) -> Tuple[float, Dict[str, np.ndarray]]:
        """Mean cross-entropy and its gradient for every trainable parameter."""
        y = np.asarray(y, dtype=np.intp)
        cache = self._forward_cached(x)
        logits = cache[-1]
        n = logits.shape[0]
        logp = log_softmax(logits)
        loss = float(-logp[np.arange(n), y].mean())
        delta = np.exp(logp)
        delta[np.arange(n), y] -= 1.0
        delta /= n
        grads: Dict[str, np.ndarray] = {}
        last = len(self.layers) - 1
        for i in range(last, -1, -1):
            layer = self.layers[i]
            grad_w = delta.T @ cache[i]
            adapter = self.adapters.get(layer.name)
            if adapter is not None:
                grads[f"{layer.name}.lora_A"] = adapter.scaling * (grad_w @ adapter.b.T)
                grads[f"{layer.name}.lora_B"] = adapter.scaling * (adapter.a.T @ grad_w)
            elif not layer.frozen:
                grads[layer.name] = grad_w
            if i > 0:
                dh = delta @ self.effective_weight(layer.name)
                if self.activation == "tanh":
                    dh = dh * (1.0 - cache[i] ** 2)
                delta = dh
        return loss, {name: grads[name] for name in self.trainable_names()}


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def build_mlp(
    feature_dim: int,
    hidden: Sequence[int],
    n_classes: int,
    activation: str = "tanh",
    seed: int = 0,
) -> LayeredModel:
    """Fresh model with 1/sqrt(fan_in) Gaussian init, layers dense0..dense{k},head."""
    dims = [feature_dim, *hidden, n_classes]
    rng = stream(seed, "model-init")
    layers = []
    for i in range(len(dims) - 1):
        d_in, d_out = dims[i], dims[i + 1]
        name = "head" if i == len(dims) - 2 else f"dense{i}"
        weight = rng.standard_normal((d_out, d_in)) / np.sqrt(d_in)
        layers.append(Layer(name=name, weight=weight))
    return LayeredModel(layers, activation=activation)


def freeze_layers(model: LayeredModel, names: Iterable[str]) -> LayeredModel:
    for name in names:
        model.layer(name).frozen = True
    return model


def per_group_gradient(model: LayeredModel, group: ProviderGroup) -> Dict[str, np.ndarray]:
    """Mean cross-entropy gradient over one provider group's records."""
    if not group.records:
        raise ConfigError(f"provider {group.provider_id!r} has no records")
    x, y = stack_records(group.records)
    _, grads = model.loss_and_grads(x, y)
    return grads


def stack_records(records: Sequence[Record]) -> Tuple[np.ndarray, np.ndarray]:
    x = np.stack([r.features for r in records])
    y = np.array([r.answer_id for r in records], dtype=np.intp)
    return x, y


# ---------------------------------------------------------------------------
# LoRA attach / merge
# ---------------------------------------------------------------------------


def lora_parameter_count(shapes: Iterable[Tuple[int, int]], rank: int) -> int:
    """Trainable adapter parameters for target matrices of the given shapes."""
    return sum(rank * (d_out + d_in) for d_out, d_in in shapes)


def lora_attach(
    model: LayeredModel,
    targets,
    rank: int,
    scaling: Optional[float] = None,
    seed: int = 0,
    init_std: float = 0.1,
) -> Tuple[LayeredModel, int]:
    """Attach rank-``r`` adapters to the target layers (in place).

    ``targets`` is a layer-name predicate, or an iterable of names (empty
    means every layer).  Target base weights are frozen; A is initialized
    from a small Gaussian and B at zero so the initial delta vanishes.
    ``scaling`` defaults to ``1 / rank``.  Returns the model and its new
    trainable parameter count (adapters plus any directly-trained layers).
    """
    if rank < 1:
        raise ConfigError(f"LoRA rank must be >= 1, got {rank}")
    if callable(targets):
        predicate = targets
    else:
        wanted = set(targets)
        known = {l.name for l in model.layers}
        unknown = wanted - known
        if unknown:
            raise ConfigError(f"unknown LoRA target layers: {sorted(unknown)}")
        predicate = (lambda name: True) if not wanted else (lambda name: name in wanted)
    scale = (1.0 / rank) if scaling is None else scaling
    attached = 0
    for layer in model.layers:
        if not predicate(layer.name):
            continue
        if layer.name in model.adapters:
            raise ConfigError(f"layer {layer.name!r} already has an adapter")
        d_out, d_in = layer.weight.shape
        rng = stream(seed, "lora-init", layer.name)
        model.adapters[layer.name] = LoraAdapter(
            target_layer=layer.name,
            rank=rank,
            a=init_std * rng.standard_normal((d_out, rank)),
            b=np.zeros((rank, d_in)),
            scaling=scale,
            base_was_frozen=layer.frozen,
        )
        layer.frozen = True
        attached += 1
    if not attached:
        raise ConfigError("no layers matched the LoRA target predicate")
    return model, model.trainable_parameter_count()


def lora_merge(model: LayeredModel) -> LayeredModel:
    """Fold adapters into the base weights; returns a plain model.

    The merged model computes the identical forward function, has no
    adapters, and restores each base layer's pre-attach frozen flag.
    """
    if not model.adapters:
        raise ConfigError("model has no adapters to merge")
    layers = []
    for layer in model.layers:
        adapter = model.adapters.get(layer.name)
        if adapter is None:
            layers.append(Layer(layer.name, layer.weight.copy(), layer.frozen))
        else:
            merged = layer.weight + adapter.scaling * (adapter.a @ adapter.b)
            layers.append(Layer(layer.name, merged, adapter.base_was_frozen))
    return LayeredModel(layers, activation=model.activation)


# ---------------------------------------------------------------------------
# Checkpoints: little-endian binary, bit-exact round-trip
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"PFLM"
_CKPT_VERSION = 1


def checkpoint_bytes(model: LayeredModel) -> bytes:
    """Serialize a plain model (adapters must be merged first).

    Layout: magic, version u16, activation (u16 length + utf-8), layer count
    u32; per layer: name (u16 length + utf-8), d_out u32, d_in u32, frozen
    u8, then row-major float64 little-endian weights.
    """
    if model.adapters:
        raise ConfigError("merge adapters before checkpointing (lora_merge)")
    out = io.BytesIO()
    act = model.activation.encode("utf-8")
    out.write(_CKPT_MAGIC)
    out.write(struct.pack("<HH", _CKPT_VERSION, len(act)))
    out.write(act)
    out.write(struct.pack("<I", len(model.layers)))
    for layer in model.layers:
        name = layer.name.encode("utf-8")
        d_out, d_in = layer.weight.shape
        out.write(struct.pack("<H", len(name)))
        out.write(name)
        out.write(struct.pack("<IIB", d_out, d_in, int(layer.frozen)))
        out.write(np.ascontiguousarray(layer.weight, dtype="<f8").tobytes())
    return out.getvalue()


def save_checkpoint(model: LayeredModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


def load_checkpoint(path_or_bytes) -> LayeredModel:
    data = path_or_bytes
    if not isinstance(data, (bytes, bytearray)):
        with open(path_or_bytes, "rb") as fh:
            data = fh.read()
    if data[:4] != _CKPT_MAGIC:
        raise ConfigError("not a model checkpoint")
    version, act_len = struct.unpack_from("<HH", data, 4)
    if version != _CKPT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {version}")
    off = 8
    activation = data[off : off + act_len].decode("utf-8")
    off += act_len
    (n_layers,) = struct.unpack_from("<I", data, off)
    off += 4
    layers = []
    for _ in range(n_layers):
        (name_len,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + name_len].decode("utf-8")
        off += name_len
        d_out, d_in, frozen = struct.unpack_from("<IIB", data, off)
        off += 9
        count = d_out * d_in
        weight = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(d_out, d_in)
        off += count * 8
        layers.append(Layer(name=name, weight=weight.copy(), frozen=bool(frozen)))
    return LayeredModel(layers, activation=activation)
