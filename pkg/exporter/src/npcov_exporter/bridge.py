"""Bridge from torch sequential models to npcov containers.

Weights are written channels-first as little-endian 32-bit tensors,
exactly as the source holds them after the float32 cast, so a reload
is byte-identical. Every source module either maps to a container
layer (or a fused slot on one) or the export aborts naming it; the
manifest records the full mapping plus the emitted container's content
hash. Fidelity is checked the only way that matters: running the same
inputs through both implementations and comparing logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from npcov.model import Layer, Model, forward, load_model, save_model
from npcov.trainkit import LabeledDataset, save_dataset


class UnsupportedLayer(ValueError):
    """A source module with no container equivalent."""


@dataclass
class ExportManifest:
    framework: str     # source framework and version
    layout: str        # weight layout written to the container
    layers: list[dict]  # one {source, target} row per source module
    content_hash: str  # names the emitted model everywhere downstream

    def as_dict(self) -> dict:
        return {"framework": self.framework, "layout": self.layout,
                "layers": list(self.layers), "content_hash": self.content_hash}


def _square(value, what: str, where: str) -> int:
    """Collapse an int-or-pair torch hyperparameter; container ops are square."""
    if isinstance(value, (tuple, list)):
        a, b = value
        if a != b:
            raise UnsupportedLayer(f"{where}: non-square {what} {tuple(value)}")
        return int(a)
    return int(value)


def _f32(t) -> np.ndarray:
    return t.detach().cpu().numpy().astype(np.float32)


def export_model(source: nn.Module, out, input_shape=None) -> ExportManifest:
    """Write a torch Sequential of Linear/Conv2d/ReLU/MaxPool2d/Flatten
    modules to `out` as an .npcm container.

    `input_shape` is required when the first parametric layer is a
    convolution (torch does not record the spatial extent); dense
    models infer it. The model must end in a bare Linear head so the
    container's outputs are logits.
    """
    if not isinstance(source, nn.Sequential):
        raise UnsupportedLayer(
            f"source must be a Sequential, got {type(source).__name__}")

    layers: list[Layer] = []
    table: list[dict] = []

    def fuse(op: str, where: str) -> str:
        if not layers:
            raise UnsupportedLayer(f"{where}: no preceding parametric layer")
        layers[-1].fused = layers[-1].fused + (op,)
        return f"layer {len(layers) - 1} fused {op}"

    for i, mod in enumerate(source):
        name = type(mod).__name__
        where = f"module {i} ({name})"
        if isinstance(mod, nn.Linear):
            w = _f32(mod.weight)
            b = (_f32(mod.bias) if mod.bias is not None
                 else np.zeros(w.shape[0], dtype=np.float32))
            layers.append(Layer(kind="dense", weight=w, bias=b))
            target = f"layer {len(layers) - 1} dense"
        elif isinstance(mod, nn.Conv2d):
            if mod.groups != 1:
                raise UnsupportedLayer(f"{where}: grouped convolution")
            if _square(mod.dilation, "dilation", where) != 1:
                raise UnsupportedLayer(f"{where}: dilated convolution")
            if mod.padding_mode != "zeros":
                raise UnsupportedLayer(f"{where}: padding mode {mod.padding_mode!r}")
            if isinstance(mod.padding, str):
                raise UnsupportedLayer(f"{where}: string padding {mod.padding!r}")
            w = _f32(mod.weight)  # (out, in, kh, kw), channels-first already
            b = (_f32(mod.bias) if mod.bias is not None
                 else np.zeros(w.shape[0], dtype=np.float32))
            layers.append(Layer(kind="conv2d", weight=w, bias=b,
                                stride=_square(mod.stride, "stride", where),
                                padding=_square(mod.padding, "padding", where)))
            target = f"layer {len(layers) - 1} conv2d"
        elif isinstance(mod, nn.ReLU):
            target = fuse("relu", where)
        elif isinstance(mod, nn.MaxPool2d):
            if mod.padding not in (0, (0, 0)):
                raise UnsupportedLayer(f"{where}: padded pooling")
            if _square(mod.dilation, "dilation", where) != 1 or mod.ceil_mode:
                raise UnsupportedLayer(f"{where}: dilated or ceil-mode pooling")
            window = _square(mod.kernel_size, "window", where)
            stride = (window if mod.stride is None
                      else _square(mod.stride, "stride", where))
            target = fuse("maxpool2d", where)
            layers[-1].pool_window = window
            layers[-1].pool_stride = stride
        elif isinstance(mod, nn.Flatten):
            if mod.start_dim not in (0, 1) or mod.end_dim != -1:
                raise UnsupportedLayer(
                    f"{where}: partial flatten ({mod.start_dim}..{mod.end_dim})")
            if layers and layers[-1].kind == "conv2d":
                target = fuse("flatten", where)
            else:
                # flat already (leading, or after a dense layer): the
                # container's dense layers take flattened input as is
                target = "input (dense layers flatten implicitly)"
        else:
            raise UnsupportedLayer(f"{where} has no container equivalent")
        table.append({"source": f"{i}: {name}", "target": target})

    if not layers:
        raise UnsupportedLayer("source has no parametric layers")
    if layers[-1].kind != "dense" or layers[-1].fused:
        raise UnsupportedLayer("model must end in a bare Linear head "
                               "so the container emits logits")

    if input_shape is None:
        if layers[0].kind != "dense":
            raise ValueError("input_shape is required for convolutional models")
        input_shape = (int(layers[0].weight.shape[1]),)
    m = Model(layers=layers, input_shape=tuple(int(d) for d in input_shape),
              class_count=int(layers[-1].weight.shape[0]))
    save_model(m, out)
    return ExportManifest(framework=f"torch {torch.__version__}",
                          layout="channels_first", layers=table,
                          content_hash=m.content_hash)


def export_dataset(inputs, labels, out) -> None:
    """Write inputs (and labels, when given) to `out` as an .npct
    container. Accepts torch tensors or anything array-like."""
    if torch.is_tensor(inputs):
        inputs = inputs.detach().cpu().numpy()
    if torch.is_tensor(labels):
        labels = labels.detach().cpu().numpy()
    samples = np.asarray(inputs, dtype=np.float32)
    ds = LabeledDataset(samples=samples,
                        labels=None if labels is None else np.asarray(labels))
    save_dataset(ds, out)


def validate(source: nn.Module, container, n: int = 100, seed: int = 0) -> float:
    """Max absolute logit difference between the source model and the
    exported container over n random inputs."""
    m = load_model(container)
    rng = np.random.default_rng(seed)
    source.eval()
    worst = 0.0
    with torch.no_grad():
        for _ in range(n):
            x = rng.standard_normal(m.input_shape).astype(np.float32)
            ours = forward(m, x).logits.astype(np.float64)
            theirs = source(torch.from_numpy(x).unsqueeze(0))
            theirs = theirs.squeeze(0).numpy().astype(np.float64)
            worst = max(worst, float(np.max(np.abs(ours - theirs))))
    return worst
