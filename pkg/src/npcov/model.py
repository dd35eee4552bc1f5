"""Feed-forward model container: layers, masked inference, serialization.

A model is a list of parametric layers (dense or conv2d), each with an
ordered tuple of fused post-ops drawn from relu / maxpool2d / flatten.
"Coverage layers" are the parametric layers except the final logits
layer; a neuron is one dense unit or one conv channel. The raw input
can optionally be counted as coverage layer 0 (include_input), in which
case its neurons are input features (flat inputs) or channels (images).

Masking a neuron zeroes its output (a conv channel's whole map) before
the next layer consumes it. Activations are recorded after the fused
post-ops and after masking: a conv neuron's activation is the spatial
mean of its channel map, a dense neuron's activation is its unit value.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor
from .errors import LoadError, ShapeError

MODEL_MAGIC = b"NPCM"
MODEL_VERSION = 1

FUSED_OPS = ("relu", "maxpool2d", "flatten")


@dataclass
class Layer:
    kind: str  # "dense" | "conv2d"
    weight: np.ndarray
    bias: np.ndarray
    fused: tuple[str, ...] = ()
    stride: int = 1
    padding: int = 0
    pool_window: int = 2
    pool_stride: int = 2

    def units(self) -> int:
        """Neuron count: dense output units or conv output channels."""
        return int(self.weight.shape[0])


@dataclass
class Model:
    layers: list[Layer]
    input_shape: tuple[int, ...]
    class_count: int
    content_hash: str = ""
    include_input: bool = False

    def __post_init__(self):
        validate_model(self)
        if not self.content_hash:
            self.content_hash = hash_model_bytes(to_bytes(self))


@dataclass
class ActivationTrace:
    """Per-coverage-layer neuron activations for one input."""
    activations: list[np.ndarray]
    logits: np.ndarray
    predicted_class: int


# A neuron mask is a set of (coverage layer index, unit index) pairs.
NeuronMask = set


def validate_model(m: Model) -> None:
    if not m.layers:
        raise ShapeError("model has no layers")
    if m.class_count < 2:
        raise ShapeError(f"model needs at least 2 classes, got {m.class_count}")
    shape = tuple(int(d) for d in m.input_shape)
    for i, layer in enumerate(m.layers):
        for op in layer.fused:
            if op not in FUSED_OPS:
                raise ShapeError(f"layer {i}: unknown fused op {op!r}")
        if layer.kind == "dense":
            if layer.weight.ndim != 2:
                raise ShapeError(f"layer {i}: dense weight must be 2-d, got {layer.weight.shape}")
            flat = int(np.prod(shape))
            if layer.weight.shape[1] != flat:
                raise ShapeError(
                    f"layer {i}: dense weight {layer.weight.shape} does not accept "
                    f"input shape {shape} (flat {flat})")
            if "maxpool2d" in layer.fused or "flatten" in layer.fused:
                raise ShapeError(f"layer {i}: dense layers only fuse relu")
            shape = (layer.weight.shape[0],)
        elif layer.kind == "conv2d":
            if len(shape) != 3:
                raise ShapeError(f"layer {i}: conv2d needs (C, H, W) input, got {shape}")
            if layer.weight.ndim != 4 or layer.weight.shape[1] != shape[0]:
                raise ShapeError(
                    f"layer {i}: conv weight {layer.weight.shape} does not accept "
                    f"input shape {shape}")
            k, _, kh, kw = layer.weight.shape
            oh, ow = tensor.conv_out_hw(shape[1], shape[2], kh, kw, layer.stride, layer.padding)
            if "maxpool2d" in layer.fused:
                oh = (oh - layer.pool_window) // layer.pool_stride + 1
                ow = (ow - layer.pool_window) // layer.pool_stride + 1
                if oh < 1 or ow < 1:
                    raise ShapeError(f"layer {i}: pool window does not fit conv output")
            shape = (k, oh, ow)
            if "flatten" in layer.fused:
                if layer.fused[-1] != "flatten":
                    raise ShapeError(f"layer {i}: flatten must be the last fused op")
                shape = (int(np.prod(shape)),)
        else:
            raise ShapeError(f"layer {i}: unknown kind {layer.kind!r}")
        if layer.bias.shape != (layer.units(),):
            raise ShapeError(
                f"layer {i}: bias shape {layer.bias.shape} does not match {layer.units()} units")
    last = m.layers[-1]
    if last.kind != "dense" or last.fused:
        raise ShapeError("final layer must be a bare dense logits layer")
    if last.units() != m.class_count:
        raise ShapeError(
            f"final layer has {last.units()} units but model declares "
            f"{m.class_count} classes")


def coverage_layer_sizes(m: Model) -> list[int]:
    """Neuron counts per coverage layer, in layer order."""
    sizes = [layer.units() for layer in m.layers[:-1]]
    if m.include_input:
        sizes.insert(0, _input_units(m))
    return sizes


def neuron_count(m: Model, layer: int) -> int:
    sizes = coverage_layer_sizes(m)
    if not 0 <= layer < len(sizes):
        raise ShapeError(f"coverage layer {layer} out of range 0..{len(sizes) - 1}")
    return sizes[layer]


def _input_units(m: Model) -> int:
    if len(m.input_shape) == 3:
        return int(m.input_shape[0])  # channels
    return int(np.prod(m.input_shape))


def _check_mask(m: Model, mask) -> dict[int, np.ndarray]:
    sizes = coverage_layer_sizes(m)
    per_layer: dict[int, list] = {}
    for layer, unit in mask:
        if not 0 <= layer < len(sizes):
            raise ShapeError(f"mask names coverage layer {layer}, model has {len(sizes)}")
        if not 0 <= unit < sizes[layer]:
            raise ShapeError(
                f"mask names unit {unit} in layer {layer} of {sizes[layer]} units")
        per_layer.setdefault(layer, []).append(unit)
    return {k: np.asarray(sorted(v), dtype=np.intp) for k, v in per_layer.items()}


def _zero_units(x: np.ndarray, units: np.ndarray) -> np.ndarray:
    x = x.copy()
    x[units] = 0.0
    return x


def _neuron_view(x: np.ndarray) -> np.ndarray:
    """Per-neuron activation vector: channel spatial means for maps."""
    if x.ndim == 3:
        return x.mean(axis=(1, 2), dtype=np.float64).astype(np.float32)
    return x.astype(np.float32, copy=True)


def _run(m: Model, x, mask=None, keep_ctx: bool = False):
    x = tensor.as_f32(x)
    if x.shape != tuple(m.input_shape):
        raise ShapeError(f"input shape {x.shape} does not match model {tuple(m.input_shape)}")
    masked = _check_mask(m, mask) if mask else {}
    offset = 1 if m.include_input else 0
    activations: list[np.ndarray] = []
    ctxs: list[dict] = []

    if m.include_input:
        if 0 in masked:
            x = _zero_units(x, masked[0])
        activations.append(_neuron_view(x))

    n_layers = len(m.layers)
    for i, layer in enumerate(m.layers):
        ctx: dict = {"fused": layer.fused, "kind": layer.kind}
        if layer.kind == "dense":
            a = x.reshape(-1) if x.ndim > 1 else x
            ctx["input"] = a
            out = tensor.matmul(layer.weight, a[:, None])[:, 0] + layer.bias
        else:
            ctx["input"] = x
            out = tensor.conv2d(x, layer.weight, layer.bias,
                                stride=layer.stride, padding=layer.padding)
        ctx["pre"] = out
        if "relu" in layer.fused:
            out = tensor.relu(out)
        if "maxpool2d" in layer.fused:
            ctx["pool_in_hw"] = out.shape[1:]
            out, idx = tensor.maxpool2d_indices(out, layer.pool_window, layer.pool_stride)
            ctx["pool_idx"] = idx
        cov = i + offset if i < n_layers - 1 else None
        if cov is not None and cov in masked:
            out = _zero_units(out, masked[cov])
            ctx["masked_units"] = masked[cov]
        if cov is not None:
            activations.append(_neuron_view(out))
        ctx["map_shape"] = out.shape
        if "flatten" in layer.fused:
            out = out.reshape(-1)
        ctx["output"] = out
        if keep_ctx:
            ctxs.append(ctx)
        x = out

    logits = x
    trace = ActivationTrace(activations=activations, logits=logits,
                            predicted_class=int(np.argmax(logits)))
    return (trace, ctxs) if keep_ctx else trace


def forward(m: Model, x, mask=None) -> ActivationTrace:
    """Run the network, optionally with masked neurons zeroed."""
    return _run(m, x, mask=mask)


def layer_contexts(m: Model, x, mask=None):
    """Forward pass keeping per-layer intermediates for backward sweeps."""
    return _run(m, x, mask=mask, keep_ctx=True)


def predict(m: Model, x, mask=None) -> int:
    return forward(m, x, mask=mask).predicted_class


# --- container format -------------------------------------------------------
#
# Bytes, little-endian: magic "NPCM" | u32 version | u64 manifest length |
# manifest (UTF-8 JSON) | float32 blob. Tensor byte offsets in the manifest
# are relative to the blob start.

_HEADER = struct.Struct("<4sIQ")


def _manifest_and_blob(m: Model) -> tuple[bytes, bytes]:
    layers = []
    blob = bytearray()
    for i, layer in enumerate(m.layers):
        entry = {"kind": layer.kind, "fused": list(layer.fused), "tensors": {}}
        if layer.kind == "conv2d":
            entry["geometry"] = {"stride": layer.stride, "padding": layer.padding}
            if "maxpool2d" in layer.fused:
                entry["geometry"]["pool_window"] = layer.pool_window
                entry["geometry"]["pool_stride"] = layer.pool_stride
        for role, arr in (("weight", layer.weight), ("bias", layer.bias)):
            data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            entry["tensors"][role] = {
                "name": f"layer{i}.{role}",
                "shape": list(arr.shape),
                "byte_offset": len(blob),
            }
            blob.extend(data)
        layers.append(entry)
    manifest = {
        "input_shape": list(m.input_shape),
        "class_count": m.class_count,
        "layers": layers,
    }
    return json.dumps(manifest, separators=(",", ":")).encode(), bytes(blob)


def hash_model_bytes(data: bytes) -> str:
    """64-bit content digest over manifest + blob, as 16 hex chars."""
    return hashlib.blake2b(data[_HEADER.size:], digest_size=8).hexdigest()


def to_bytes(m: Model) -> bytes:
    manifest, blob = _manifest_and_blob(m)
    return _HEADER.pack(MODEL_MAGIC, MODEL_VERSION, len(manifest)) + manifest + blob


def save_model(m: Model, path) -> None:
    with open(path, "wb") as f:
        f.write(to_bytes(m))


def load_model(src, include_input: bool = False) -> Model:
    """Parse a model container from bytes or a file path."""
    if isinstance(src, (bytes, bytearray)):
        data = bytes(src)
    else:
        with open(src, "rb") as f:
            data = f.read()
    if len(data) < _HEADER.size:
        raise LoadError(f"file truncated at byte {len(data)}: header needs {_HEADER.size}")
    magic, version, mlen = _HEADER.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise LoadError(f"bad magic {magic!r} at byte 0, expected {MODEL_MAGIC!r}")
    if version != MODEL_VERSION:
        raise LoadError(f"unsupported version {version} at byte 4")
    body = data[_HEADER.size:]
    if len(body) < mlen:
        raise LoadError(f"file truncated at byte {len(data)}: manifest needs {mlen} bytes")
    try:
        manifest = json.loads(body[:mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise LoadError(f"manifest at byte {_HEADER.size} is not valid JSON: {e}") from e
    blob = body[mlen:]
    layers = []
    for i, entry in enumerate(manifest.get("layers", [])):
        geo = entry.get("geometry", {})
        tensors = {}
        for role in ("weight", "bias"):
            meta = entry["tensors"][role]
            count = int(np.prod(meta["shape"])) if meta["shape"] else 1
            start = meta["byte_offset"]
            end = start + 4 * count
            if end > len(blob):
                raise LoadError(
                    f"tensor {meta['name']} runs past end of file at byte "
                    f"{_HEADER.size + mlen + start}")
            arr = np.frombuffer(blob[start:end], dtype="<f4").reshape(meta["shape"])
            if not np.all(np.isfinite(arr)):
                raise LoadError(f"tensor {meta['name']} contains non-finite values")
            tensors[role] = arr.astype(np.float32)
        layers.append(Layer(
            kind=entry["kind"], weight=tensors["weight"], bias=tensors["bias"],
            fused=tuple(entry.get("fused", ())),
            stride=geo.get("stride", 1), padding=geo.get("padding", 0),
            pool_window=geo.get("pool_window", 2), pool_stride=geo.get("pool_stride", 2)))
    m = Model(layers=layers, input_shape=tuple(manifest["input_shape"]),
              class_count=int(manifest["class_count"]),
              content_hash=hash_model_bytes(data), include_input=include_input)
    return m
