"""Fixture data, hand-derived gradients, a tiny SGD trainer, and PGD.

Everything here is deterministic given its seed: seeds fan out through
numpy SeedSequence children so adding a consumer never shifts another
consumer's stream.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import tensor
from .errors import LoadError, ShapeError, TrainingDiverged
from .model import Layer, Model, layer_contexts, predict

DATASET_MAGIC = b"NPCT"
DATASET_VERSION = 1


@dataclass
class LabeledDataset:
    samples: np.ndarray  # (n, *sample_shape) float32
    labels: np.ndarray | None = None  # (n,) uint32

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float32)
        if self.labels is not None:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.uint32)
            if self.labels.shape != (len(self.samples),):
                raise ShapeError(
                    f"{len(self.labels)} labels for {len(self.samples)} samples")

    def __len__(self):
        return len(self.samples)

    def sample_shape(self) -> tuple[int, ...]:
        return tuple(self.samples.shape[1:])


# --- dataset container ------------------------------------------------------
#
# Bytes, little-endian: magic "NPCT" | u32 version | u64 sample count |
# u32 rank | rank x u32 extents | u8 labels flag | float32 samples |
# u32 labels (when flagged).

def dataset_to_bytes(ds: LabeledDataset) -> bytes:
    shape = ds.sample_shape()
    head = struct.pack("<4sIQI", DATASET_MAGIC, DATASET_VERSION, len(ds), len(shape))
    head += struct.pack(f"<{len(shape)}I", *shape) if shape else b""
    head += struct.pack("<B", 1 if ds.labels is not None else 0)
    body = ds.samples.astype("<f4").tobytes()
    if ds.labels is not None:
        body += ds.labels.astype("<u4").tobytes()
    return head + body


def save_dataset(ds: LabeledDataset, path) -> None:
    with open(path, "wb") as f:
        f.write(dataset_to_bytes(ds))


def load_dataset(src) -> LabeledDataset:
    if isinstance(src, (bytes, bytearray)):
        data = bytes(src)
    else:
        with open(src, "rb") as f:
            data = f.read()
    fixed = struct.calcsize("<4sIQI")
    if len(data) < fixed:
        raise LoadError(f"file truncated at byte {len(data)}: header needs {fixed}")
    magic, version, count, rank = struct.unpack_from("<4sIQI", data)
    if magic != DATASET_MAGIC:
        raise LoadError(f"bad magic {magic!r} at byte 0, expected {DATASET_MAGIC!r}")
    if version != DATASET_VERSION:
        raise LoadError(f"unsupported version {version} at byte 4")
    off = fixed
    if len(data) < off + 4 * rank + 1:
        raise LoadError(f"file truncated at byte {len(data)}: extents need {4 * rank} bytes")
    shape = struct.unpack_from(f"<{rank}I", data, off) if rank else ()
    off += 4 * rank
    has_labels = data[off]
    off += 1
    per = int(np.prod(shape)) if shape else 1
    nbytes = 4 * count * per
    if len(data) < off + nbytes:
        raise LoadError(f"file truncated at byte {len(data)}: samples need bytes "
                        f"{off}..{off + nbytes}")
    samples = np.frombuffer(data[off:off + nbytes], dtype="<f4").reshape((count, *shape))
    if not np.all(np.isfinite(samples)):
        raise LoadError("samples contain non-finite values")
    off += nbytes
    labels = None
    if has_labels:
        if len(data) < off + 4 * count:
            raise LoadError(f"file truncated at byte {len(data)}: labels need bytes "
                            f"{off}..{off + 4 * count}")
        labels = np.frombuffer(data[off:off + 4 * count], dtype="<u4").copy()
    return LabeledDataset(samples=samples.astype(np.float32), labels=labels)


# --- fixtures ----------------------------------------------------------------

def make_blobs(dims: int, classes: int, per_class: int, spread: float = 1.0,
               separation: float = 4.0, seed: int = 0) -> LabeledDataset:
    """Gaussian blobs around evenly spread centers.

    Centers sit on a circle of radius `separation` in the first two axes
    (a seeded rotation picks the phase), so the class margin is set by
    geometry rather than by luck of the draw.
    """
    if dims < 1 or classes < 2 or per_class < 1:
        raise ShapeError(f"bad blob geometry: dims={dims} classes={classes} "
                         f"per_class={per_class}")
    ss = np.random.SeedSequence(seed)
    rot_rng, noise_rng, shuf_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    centers = np.zeros((classes, dims))
    if dims == 1:
        centers[:, 0] = (np.arange(classes) - (classes - 1) / 2) * separation
    else:
        phase = rot_rng.uniform(0, 2 * np.pi)
        ang = phase + 2 * np.pi * np.arange(classes) / classes
        centers[:, 0] = separation * np.cos(ang)
        centers[:, 1] = separation * np.sin(ang)
    labels = np.repeat(np.arange(classes, dtype=np.uint32), per_class)
    noise = noise_rng.normal(scale=spread, size=(classes * per_class, dims))
    samples = centers[labels] + noise
    order = shuf_rng.permutation(len(samples))
    return LabeledDataset(samples=samples[order].astype(np.float32),
                          labels=labels[order])


def split_dataset(ds: LabeledDataset, test_fraction: float, seed: int = 0):
    """Seeded shuffle split into (train, test)."""
    n = len(ds)
    n_test = int(round(n * test_fraction))
    order = np.random.default_rng(np.random.SeedSequence(seed)).permutation(n)
    test_idx, train_idx = order[:n_test], order[n_test:]
    def pick(idx):
        return LabeledDataset(samples=ds.samples[idx],
                              labels=None if ds.labels is None else ds.labels[idx])
    return pick(train_idx), pick(test_idx)


# --- gradients ----------------------------------------------------------------

def _softmax(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def grad_input(m: Model, x, target: int, loss: str = "ce", mask=None) -> np.ndarray:
    """Gradient of a scalar loss at the logits with respect to the input.

    loss "ce": cross-entropy of softmax against `target`;
    loss "logit": the raw logit of `target`.
    Hand-derived layer by layer; no autodiff tape.
    """
    trace, ctxs = layer_contexts(m, x, mask=mask)
    logits = trace.logits
    if loss == "ce":
        g = _softmax(logits)
        g[target] -= 1.0
    elif loss == "logit":
        g = np.zeros(len(logits), dtype=np.float64)
        g[target] = 1.0
    else:
        raise ValueError(f"unknown loss {loss!r}")
    for layer, ctx in zip(reversed(m.layers), reversed(ctxs)):
        # map_shape is the post-mask, pre-flatten output shape, so this undoes
        # both a declared flatten and the auto-flatten a dense consumer did.
        g = np.asarray(g).reshape(ctx["map_shape"])
        if "masked_units" in ctx:
            g = g.copy()
            g[ctx["masked_units"]] = 0.0
        if "maxpool2d" in ctx["fused"]:
            g = tensor.maxpool2d_route(g, ctx["pool_idx"], ctx["pool_in_hw"])
        if "relu" in ctx["fused"]:
            g = g * (ctx["pre"] > 0)
        if layer.kind == "dense":
            g = layer.weight.astype(np.float64).T @ g
            g = g.reshape(ctx["input"].shape)
        else:
            g = tensor.conv2d_input_grad(g, layer.weight, ctx["input"].shape[1:],
                                         stride=layer.stride, padding=layer.padding)
    return g.reshape(tuple(m.input_shape)).astype(np.float32)


# --- SGD trainer ---------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 60
    learning_rate: float = 0.1
    batch_size: int = 32
    seed: int = 0


def train_sgd(widths, data: LabeledDataset, config: TrainConfig) -> Model:
    """Train a relu MLP (dense widths in -> hidden... -> classes) with plain SGD.

    Desk-scale fixture trainer: cross-entropy loss, seeded He init and
    epoch shuffles, float64 math with a float32 model at the end.
    Raises TrainingDiverged when the loss goes non-finite.
    """
    widths = [int(w) for w in widths]
    if len(widths) < 2:
        raise ShapeError(f"need at least input and output widths, got {widths}")
    if data.labels is None:
        raise ShapeError("training data has no labels")
    flat = int(np.prod(data.sample_shape()))
    if widths[0] != flat:
        raise ShapeError(f"arch input width {widths[0]} does not match data of {flat}")
    classes = widths[-1]
    if int(data.labels.max()) >= classes:
        raise ShapeError(f"label {int(data.labels.max())} out of range for {classes} classes")

    ss = np.random.SeedSequence(config.seed)
    init_rng, shuffle_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    ws = [init_rng.normal(size=(widths[i + 1], widths[i])) * np.sqrt(2.0 / widths[i])
          for i in range(len(widths) - 1)]
    bs = [np.zeros(w) for w in widths[1:]]

    x_all = data.samples.reshape(len(data), flat).astype(np.float64)
    y_all = data.labels.astype(np.intp)
    n = len(data)
    lr = config.learning_rate
    for _ in range(config.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = x_all[idx], y_all[idx]
            with np.errstate(over="ignore", invalid="ignore"):
                acts = [xb]
                for li in range(len(ws)):
                    z = acts[-1] @ ws[li].T + bs[li]
                    acts.append(np.maximum(z, 0.0) if li < len(ws) - 1 else z)
                logits = acts[-1]
                shifted = logits - logits.max(axis=1, keepdims=True)
                p = np.exp(shifted)
                p /= p.sum(axis=1, keepdims=True)
                loss = -np.mean(np.log(p[np.arange(len(idx)), yb] + 1e-12))
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"loss became non-finite ({loss}); lower the learning rate")
            dz = p
            dz[np.arange(len(idx)), yb] -= 1.0
            dz /= len(idx)
            for li in range(len(ws) - 1, -1, -1):
                dw = dz.T @ acts[li]
                db = dz.sum(axis=0)
                if li > 0:
                    da = dz @ ws[li]
                    dz = da * (acts[li] > 0)
                ws[li] -= lr * dw
                bs[li] -= lr * db

    layers = [Layer(kind="dense", weight=w.astype(np.float32), bias=b.astype(np.float32),
                    fused=("relu",) if i < len(ws) - 1 else ())
              for i, (w, b) in enumerate(zip(ws, bs))]
    return Model(layers=layers, input_shape=(widths[0],), class_count=classes)


def accuracy(m: Model, data: LabeledDataset) -> float:
    if data.labels is None:
        raise ShapeError("dataset has no labels")
    hits = sum(1 for x, y in zip(data.samples, data.labels)
               if predict(m, x) == int(y))
    return hits / len(data)


# --- PGD -------------------------------------------------------------------------

def pgd_attack(m: Model, x, label: int, eps: float, step: float | None = None,
               iters: int = 20, seed: int = 0, clip: tuple[float, float] | None = None):
    """L-inf projected gradient ascent on cross-entropy.

    Random start inside the eps-ball, sign steps, projection back into
    the ball every iteration; also clamped to `clip` when the input
    domain is bounded. Returns (adversarial input, fooled flag).
    """
    if eps < 0:
        raise ShapeError(f"eps must be non-negative, got {eps}")
    x = tensor.as_f32(x)
    if step is None:
        step = eps / 8.0
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    lo = (x - eps).astype(np.float32)
    hi = (x + eps).astype(np.float32)
    adv = x + rng.uniform(-eps, eps, size=x.shape).astype(np.float32)
    adv = np.clip(adv, lo, hi)
    if clip is not None:
        adv = np.clip(adv, clip[0], clip[1])
    for _ in range(iters):
        g = grad_input(m, adv, label, loss="ce")
        adv = adv + np.float32(step) * np.sign(g).astype(np.float32)
        adv = np.clip(adv, lo, hi)
        if clip is not None:
            adv = np.clip(adv, clip[0], clip[1])
    # Rounding x +/- eps to f32 can place the ball edge a hair outside
    # the true budget; walk any offending component back toward x so
    # |adv - x| <= eps holds exactly in double precision.
    d = adv.astype(np.float64) - x.astype(np.float64)
    over = np.abs(d) > eps
    while np.any(over):
        adv[over] = np.nextafter(adv[over], x[over])
        d = adv.astype(np.float64) - x.astype(np.float64)
        over = np.abs(d) > eps
    return adv, predict(m, adv) != int(label)
