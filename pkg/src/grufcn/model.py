"""Two-branch network assembly: a three-block temporal conv branch in
parallel with a single-step recurrent branch over the dimension-shuffled
series, concatenated into a dense softmax head. Also parameter counting and
binary checkpoint serialization.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import layers
from .layers import ConvBlock, DenseSoftmax, GruCell, LstmCell
from .tensor_core import Rng, ShapeMismatchError, glorot_uniform_init, he_uniform_init

CHECKPOINT_MAGIC = b"GRUFCN1\n"

GRU = "gru"
LSTM = "lstm"


class CheckpointError(ValueError):
    """Base class for malformed checkpoint files."""


class BadMagicError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ManifestMismatchError(CheckpointError):
    pass


@dataclass
class ArchConfig:
    series_length: int
    num_classes: int
    cell_kind: str = GRU
    hidden_size: int = 8
    conv_filters: tuple[int, ...] = (128, 256, 128)
    conv_kernels: tuple[int, ...] = (8, 5, 3)
    dropout_rate: float = 0.8
    bn_momentum: float = 0.99
    bn_epsilon: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        self.conv_filters = tuple(int(f) for f in self.conv_filters)
        self.conv_kernels = tuple(int(k) for k in self.conv_kernels)
        if self.cell_kind not in (GRU, LSTM):
            raise ValueError(f"cell_kind must be '{GRU}' or '{LSTM}', got {self.cell_kind!r}")
        if len(self.conv_filters) != len(self.conv_kernels):
            raise ValueError("conv_filters and conv_kernels lengths differ")
        if self.series_length < 1 or self.num_classes < 2 or self.hidden_size < 1:
            raise ValueError(
                f"need series_length >= 1, num_classes >= 2, hidden_size >= 1; "
                f"got L={self.series_length}, C={self.num_classes}, H={self.hidden_size}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")


_GRU_NAMES = ["W_zx", "U_zh", "b_z", "W_rx", "U_rh", "b_r", "W_x", "U_h", "b"]
_LSTM_NAMES = ["W_ix", "U_ih", "b_i", "W_fx", "U_fh", "b_f",
               "W_gx", "U_gh", "b_g", "W_ox", "U_oh", "b_o"]


def parameter_manifest(config: ArchConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) list of every tensor the model allocates.

    This ordering is the checkpoint blob order: conv blocks in network order
    (kernels, bias, gamma, beta, moving mean, moving var), then the recurrent
    cell matrices gate by gate, then the dense head.
    """
    manifest: list[tuple[str, tuple[int, ...]]] = []
    c_in = 1
    for i, (f, k) in enumerate(zip(config.conv_filters, config.conv_kernels)):
        manifest += [
            (f"conv{i}.kernels", (k, c_in, f)),
            (f"conv{i}.bias", (f,)),
            (f"conv{i}.bn_gamma", (f,)),
            (f"conv{i}.bn_beta", (f,)),
            (f"conv{i}.bn_moving_mean", (f,)),
            (f"conv{i}.bn_moving_var", (f,)),
        ]
        c_in = f
    length, hidden = config.series_length, config.hidden_size
    names = _GRU_NAMES if config.cell_kind == GRU else _LSTM_NAMES
    for name in names:
        if name.startswith("W"):
            shape = (length, hidden)
        elif name.startswith("U"):
            shape = (hidden, hidden)
        else:
            shape = (hidden,)
        manifest.append((f"cell.{name}", shape))
    feat = config.conv_filters[-1] + hidden
    manifest += [("head.W", (feat, config.num_classes)),
                 ("head.b", (config.num_classes,))]
    return manifest


def parameter_count(config: ArchConfig) -> int:
    """Total element count over every allocated tensor, moving statistics
    included."""
    return sum(int(np.prod(shape)) for _, shape in parameter_manifest(config))


@dataclass
class GruFcnModel:
    config: ArchConfig
    blocks: list[ConvBlock]
    cell: GruCell | LstmCell
    head: DenseSoftmax

    def parameters(self) -> dict[str, np.ndarray]:
        """name -> array views in checkpoint manifest order."""
        out: dict[str, np.ndarray] = {}
        for i, block in enumerate(self.blocks):
            out[f"conv{i}.kernels"] = block.kernels
            out[f"conv{i}.bias"] = block.bias
            out[f"conv{i}.bn_gamma"] = block.bn_gamma
            out[f"conv{i}.bn_beta"] = block.bn_beta
            out[f"conv{i}.bn_moving_mean"] = block.bn_moving_mean
            out[f"conv{i}.bn_moving_var"] = block.bn_moving_var
        for name in self.cell.param_names():
            out[f"cell.{name}"] = getattr(self.cell, name)
        out["head.W"] = self.head.W
        out["head.b"] = self.head.b
        return out

    def trainable_parameters(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.parameters().items() if "moving" not in k}


def build(config: ArchConfig, rng: Rng | None = None) -> GruFcnModel:
    """Allocate and initialize the model.

    Conv kernels are He-uniform with fan_in = k * Cin; recurrent and dense
    weights are glorot-uniform; every bias starts at zero; batch-norm starts
    as the identity (gamma 1, beta 0, moving mean 0, moving var 1).
    """
    if rng is None:
        rng = Rng(config.seed)
    blocks = []
    c_in = 1
    for f, k in zip(config.conv_filters, config.conv_kernels):
        blocks.append(ConvBlock(
            kernels=he_uniform_init(rng, k * c_in, (k, c_in, f)),
            bias=np.zeros(f),
            bn_gamma=np.ones(f),
            bn_beta=np.zeros(f),
            bn_moving_mean=np.zeros(f),
            bn_moving_var=np.ones(f),
            bn_momentum=config.bn_momentum,
            bn_epsilon=config.bn_epsilon,
        ))
        c_in = f
    length, hidden = config.series_length, config.hidden_size
    names = _GRU_NAMES if config.cell_kind == GRU else _LSTM_NAMES
    cell_params = {}
    for name in names:
        if name.startswith("W"):
            cell_params[name] = glorot_uniform_init(rng, length, hidden, (length, hidden))
        elif name.startswith("U"):
            cell_params[name] = glorot_uniform_init(rng, hidden, hidden, (hidden, hidden))
        else:
            cell_params[name] = np.zeros(hidden)
    cell = GruCell(**cell_params) if config.cell_kind == GRU else LstmCell(**cell_params)
    feat = config.conv_filters[-1] + hidden
    head = DenseSoftmax(
        W=glorot_uniform_init(rng, feat, config.num_classes, (feat, config.num_classes)),
        b=np.zeros(config.num_classes),
    )
    return GruFcnModel(config=config, blocks=blocks, cell=cell, head=head)


def forward(model: GruFcnModel, batch: np.ndarray, training: bool = False,
            rng: Rng | None = None):
    """Class probabilities for a (B, L) batch; returns (probs, cache).

    The conv branch sees each series as L positions x 1 channel; the
    recurrent branch sees the dimension-shuffled series as one time step of
    L features, started from a zero state, followed by dropout.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != model.config.series_length:
        raise ShapeMismatchError(
            f"batch shape {batch.shape} does not match series length "
            f"{model.config.series_length}"
        )
    b = batch.shape[0]
    hidden = model.config.hidden_size

    x = batch[:, :, None]
    conv_caches = []
    for block in model.blocks:
        x, cache = layers.conv_block_forward(block, x, training)
        conv_caches.append(cache)
    pooled = layers.global_avg_pool(x)

    h0 = np.zeros((b, hidden))
    if isinstance(model.cell, GruCell):
        h, cell_cache = layers.gru_step(model.cell, batch, h0)
    else:
        c0 = np.zeros((b, hidden))
        h, c, cell_cache = layers.lstm_step(model.cell, batch, h0, c0)
    h_dropped, mask = layers.dropout(h, model.config.dropout_rate, training, rng)

    features = np.concatenate([pooled, h_dropped], axis=1)
    logits = features @ model.head.W + model.head.b
    probs = layers.softmax(logits)
    cache = {
        "conv_caches": conv_caches,
        "conv_out_length": x.shape[1],
        "cell_cache": cell_cache,
        "dropout_mask": mask,
        "features": features,
        "probs": probs,
    }
    return probs, cache


def backward(model: GruFcnModel, cache, y_onehot: np.ndarray):
    """Mean cross-entropy loss and its gradients w.r.t. every trainable
    parameter, keyed by manifest name."""
    y = np.asarray(y_onehot, dtype=np.float64)
    probs = cache["probs"]
    if y.shape != probs.shape:
        raise ShapeMismatchError(f"labels shape {y.shape} != probs shape {probs.shape}")
    b = probs.shape[0]
    loss = float(-np.mean(np.sum(y * np.log(probs + 1e-300), axis=1)))

    grads: dict[str, np.ndarray] = {}
    dlogits = (probs - y) / b
    grads["head.W"] = cache["features"].T @ dlogits
    grads["head.b"] = dlogits.sum(axis=0)
    dfeat = dlogits @ model.head.W.T

    n_fcn = model.config.conv_filters[-1]
    dpooled = dfeat[:, :n_fcn]
    dh = dfeat[:, n_fcn:] * cache["dropout_mask"]

    if isinstance(model.cell, GruCell):
        _, cell_grads = layers.gru_backward(model.cell, [cache["cell_cache"]], dh)
    else:
        _, cell_grads = layers.lstm_backward(model.cell, [cache["cell_cache"]], dh)
    for name, g in cell_grads.items():
        grads[f"cell.{name}"] = g

    dx = layers.global_avg_pool_backward(dpooled, cache["conv_out_length"])
    for i in reversed(range(len(model.blocks))):
        dx, block_grads = layers.conv_block_backward(cache["conv_caches"][i], dx)
        for name, g in block_grads.items():
            grads[f"conv{i}.{name}"] = g
    return loss, grads


# ---------------------------------------------------------------------------
# Checkpoint I/O
# ---------------------------------------------------------------------------

def save_checkpoint(model: GruFcnModel, path) -> None:
    """Single-file format: magic, one JSON header line (config + ordered
    tensor manifest), then all tensors as little-endian float32 in manifest
    order."""
    params = model.parameters()
    manifest = [[name, list(arr.shape)] for name, arr in params.items()]
    header = json.dumps({"config": asdict(model.config), "manifest": manifest})
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(header.encode("utf-8"))
        fh.write(b"\n")
        for arr in params.values():
            fh.write(arr.astype("<f4").tobytes())


def load_checkpoint(path) -> GruFcnModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise BadMagicError(f"bad checkpoint magic {magic!r}")
        rest = fh.read()
    newline = rest.find(b"\n")
    if newline < 0:
        raise TruncatedCheckpointError("checkpoint header line is incomplete")
    try:
        header = json.loads(rest[:newline].decode("utf-8"))
        cfg_dict = dict(header["config"])
        manifest = [(name, tuple(shape)) for name, shape in header["manifest"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise TruncatedCheckpointError(f"unreadable checkpoint header: {exc}") from exc
    config = ArchConfig(**cfg_dict)
    expected = parameter_manifest(config)
    if manifest != expected:
        raise ManifestMismatchError(
            "checkpoint manifest does not match the declared architecture"
        )
    blob = rest[newline + 1:]
    total = sum(int(np.prod(s)) for _, s in manifest)
    if len(blob) != 4 * total:
        raise ManifestMismatchError(
            f"parameter payload holds {len(blob)} bytes, manifest needs {4 * total}"
        )
    model = build(config)
    offset = 0
    params = model.parameters()
    for name, shape in manifest:
        n = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=offset)
        params[name][...] = arr.astype(np.float64).reshape(shape)
        offset += 4 * n
    return model
