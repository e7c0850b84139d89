"""Forward and backward passes for every layer of the hybrid classifier:
conv + batch-norm + ReLU blocks, GRU and LSTM cells, global average pooling,
inverted dropout, and the dense softmax cross-entropy head.

All layers operate on float64 batches. Backward passes return exact analytic
gradients; the test suite checks each one against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_core import Rng, ShapeMismatchError, conv1d_same, conv1d_same_backward


def hard_sigmoid(u: np.ndarray) -> np.ndarray:
    """clamp(0.2*u + 0.5, 0, 1) -- the piecewise-linear gate activation."""
    return np.clip(0.2 * u + 0.5, 0.0, 1.0)


def hard_sigmoid_grad(u: np.ndarray) -> np.ndarray:
    """0.2 on the open non-saturated interval, 0 where clamped."""
    return np.where((u > -2.5) & (u < 2.5), 0.2, 0.0)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


# ---------------------------------------------------------------------------
# Conv block: conv1d_same -> batch norm -> ReLU
# ---------------------------------------------------------------------------

@dataclass
class ConvBlock:
    kernels: np.ndarray        # (k, Cin, Cout)
    bias: np.ndarray           # (Cout,)
    bn_gamma: np.ndarray       # (Cout,)
    bn_beta: np.ndarray        # (Cout,)
    bn_moving_mean: np.ndarray # (Cout,)
    bn_moving_var: np.ndarray  # (Cout,)
    bn_momentum: float = 0.99
    bn_epsilon: float = 1e-3

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[2]


def conv_block_forward(block: ConvBlock, x: np.ndarray, training: bool):
    """ReLU(BN(conv(x))). x is (B, L, Cin); returns ((B, L, Cout), cache).

    Training mode normalizes with batch statistics taken over all batch and
    time positions per channel and updates the moving statistics in place;
    inference mode uses the moving statistics.
    """
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("non-finite input to conv block")
    y = conv1d_same(x, block.kernels, block.bias)
    if training:
        mean = y.mean(axis=(0, 1))
        var = y.var(axis=(0, 1))
        m = block.bn_momentum
        block.bn_moving_mean[...] = m * block.bn_moving_mean + (1 - m) * mean
        block.bn_moving_var[...] = m * block.bn_moving_var + (1 - m) * var
    else:
        mean = block.bn_moving_mean
        var = block.bn_moving_var
    inv_std = 1.0 / np.sqrt(var + block.bn_epsilon)
    x_hat = (y - mean) * inv_std
    z = block.bn_gamma * x_hat + block.bn_beta
    out = relu(z)
    cache = {
        "block": block,
        "x": x,
        "x_hat": x_hat,
        "inv_std": inv_std,
        "relu_mask": z > 0,
        "training": training,
    }
    return out, cache


def conv_block_backward(cache, grad_out: np.ndarray):
    """Gradients of the composed ReLU(BN(conv)) w.r.t. input and parameters.

    Includes the batch-statistics coupling terms of training-mode batch norm.
    Returns (grad_x, grads) with grads keyed kernels/bias/bn_gamma/bn_beta.
    """
    block: ConvBlock = cache["block"]
    x_hat = cache["x_hat"]
    if grad_out.shape != x_hat.shape:
        raise ShapeMismatchError(
            f"grad shape {grad_out.shape} != forward output shape {x_hat.shape}"
        )
    dz = grad_out * cache["relu_mask"]
    grad_gamma = np.sum(dz * x_hat, axis=(0, 1))
    grad_beta = np.sum(dz, axis=(0, 1))
    dx_hat = dz * block.bn_gamma
    if cache["training"]:
        dy = (
            dx_hat
            - dx_hat.mean(axis=(0, 1))
            - x_hat * np.mean(dx_hat * x_hat, axis=(0, 1))
        ) * cache["inv_std"]
    else:
        dy = dx_hat * cache["inv_std"]
    grad_x, grad_kernels, grad_bias = conv1d_same_backward(
        cache["x"], block.kernels, dy
    )
    grads = {
        "kernels": grad_kernels,
        "bias": grad_bias,
        "bn_gamma": grad_gamma,
        "bn_beta": grad_beta,
    }
    return grad_x, grads


# ---------------------------------------------------------------------------
# Recurrent cells
# ---------------------------------------------------------------------------

@dataclass
class GruCell:
    """Update/reset-gated cell: 6 weight matrices, 3 bias vectors.

    h = (1 - z) * h_prev + z * h_tilde, gates through hard_sigmoid,
    candidate through tanh.
    """

    W_zx: np.ndarray  # (in, H)
    U_zh: np.ndarray  # (H, H)
    b_z: np.ndarray   # (H,)
    W_rx: np.ndarray
    U_rh: np.ndarray
    b_r: np.ndarray
    W_x: np.ndarray
    U_h: np.ndarray
    b: np.ndarray

    @property
    def hidden_size(self) -> int:
        return self.U_h.shape[0]

    def param_names(self) -> list[str]:
        return ["W_zx", "U_zh", "b_z", "W_rx", "U_rh", "b_r", "W_x", "U_h", "b"]


def gru_step(cell: GruCell, x: np.ndarray, h_prev: np.ndarray):
    """One step. x is (B, in), h_prev is (B, H); returns (h, cache)."""
    az = x @ cell.W_zx + h_prev @ cell.U_zh + cell.b_z
    ar = x @ cell.W_rx + h_prev @ cell.U_rh + cell.b_r
    z = hard_sigmoid(az)
    r = hard_sigmoid(ar)
    rh = r * h_prev
    ag = x @ cell.W_x + rh @ cell.U_h + cell.b
    g = np.tanh(ag)
    h = (1.0 - z) * h_prev + z * g
    cache = {"x": x, "h_prev": h_prev, "az": az, "ar": ar, "z": z, "r": r,
             "rh": rh, "g": g}
    return h, cache


def gru_backward(cell: GruCell, caches: list[dict], grad_h_final: np.ndarray):
    """Backprop through time over a forward cache sequence.

    Returns (grad_x_seq, grad_params) with gradients accumulated across all
    time steps.
    """
    grads = {name: np.zeros_like(getattr(cell, name)) for name in cell.param_names()}
    grad_x_seq = []
    dh = np.asarray(grad_h_final, dtype=np.float64)
    for cache in reversed(caches):
        x, h_prev = cache["x"], cache["h_prev"]
        z, r, g, rh = cache["z"], cache["r"], cache["g"], cache["rh"]
        if dh.shape != h_prev.shape:
            raise ShapeMismatchError(
                f"hidden grad shape {dh.shape} != state shape {h_prev.shape}"
            )
        dz = dh * (g - h_prev)
        dg = dh * z
        dh_prev = dh * (1.0 - z)

        dag = dg * (1.0 - g * g)
        grads["W_x"] += x.T @ dag
        grads["U_h"] += rh.T @ dag
        grads["b"] += dag.sum(axis=0)
        dx = dag @ cell.W_x.T
        drh = dag @ cell.U_h.T
        dr = drh * h_prev
        dh_prev += drh * r

        daz = dz * hard_sigmoid_grad(cache["az"])
        grads["W_zx"] += x.T @ daz
        grads["U_zh"] += h_prev.T @ daz
        grads["b_z"] += daz.sum(axis=0)
        dx += daz @ cell.W_zx.T
        dh_prev += daz @ cell.U_zh.T

        dar = dr * hard_sigmoid_grad(cache["ar"])
        grads["W_rx"] += x.T @ dar
        grads["U_rh"] += h_prev.T @ dar
        grads["b_r"] += dar.sum(axis=0)
        dx += dar @ cell.W_rx.T
        dh_prev += dar @ cell.U_rh.T

        grad_x_seq.append(dx)
        dh = dh_prev
    grad_x_seq.reverse()
    return grad_x_seq, grads


@dataclass
class LstmCell:
    """Input/forget/output-gated cell with a separate memory state:
    8 weight matrices, 4 bias vectors."""

    W_ix: np.ndarray
    U_ih: np.ndarray
    b_i: np.ndarray
    W_fx: np.ndarray
    U_fh: np.ndarray
    b_f: np.ndarray
    W_gx: np.ndarray
    U_gh: np.ndarray
    b_g: np.ndarray
    W_ox: np.ndarray
    U_oh: np.ndarray
    b_o: np.ndarray

    @property
    def hidden_size(self) -> int:
        return self.U_ih.shape[0]

    def param_names(self) -> list[str]:
        return ["W_ix", "U_ih", "b_i", "W_fx", "U_fh", "b_f",
                "W_gx", "U_gh", "b_g", "W_ox", "U_oh", "b_o"]


def lstm_step(cell: LstmCell, x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray):
    """One step: gates via hard_sigmoid, candidate/output via tanh.

    c = f*c_prev + i*g; h = o*tanh(c). Returns (h, c, cache).
    """
    ai = x @ cell.W_ix + h_prev @ cell.U_ih + cell.b_i
    af = x @ cell.W_fx + h_prev @ cell.U_fh + cell.b_f
    ag = x @ cell.W_gx + h_prev @ cell.U_gh + cell.b_g
    ao = x @ cell.W_ox + h_prev @ cell.U_oh + cell.b_o
    i = hard_sigmoid(ai)
    f = hard_sigmoid(af)
    g = np.tanh(ag)
    o = hard_sigmoid(ao)
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    cache = {"x": x, "h_prev": h_prev, "c_prev": c_prev, "ai": ai, "af": af,
             "ag": ag, "ao": ao, "i": i, "f": f, "g": g, "o": o, "tc": tc}
    return h, c, cache


def lstm_backward(cell: LstmCell, caches: list[dict], grad_h_final: np.ndarray):
    """Backprop through time for the LSTM; mirrors gru_backward."""
    grads = {name: np.zeros_like(getattr(cell, name)) for name in cell.param_names()}
    grad_x_seq = []
    dh = np.asarray(grad_h_final, dtype=np.float64)
    dc = np.zeros_like(dh)
    for cache in reversed(caches):
        x, h_prev, c_prev = cache["x"], cache["h_prev"], cache["c_prev"]
        i, f, g, o, tc = cache["i"], cache["f"], cache["g"], cache["o"], cache["tc"]
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dc_prev = dc * f

        dx = np.zeros_like(x)
        dh_prev = np.zeros_like(h_prev)
        for da, wx, uh, bname in (
            (di * hard_sigmoid_grad(cache["ai"]), "W_ix", "U_ih", "b_i"),
            (df * hard_sigmoid_grad(cache["af"]), "W_fx", "U_fh", "b_f"),
            (dg * (1.0 - g * g), "W_gx", "U_gh", "b_g"),
            (do * hard_sigmoid_grad(cache["ao"]), "W_ox", "U_oh", "b_o"),
        ):
            grads[wx] += x.T @ da
            grads[uh] += h_prev.T @ da
            grads[bname] += da.sum(axis=0)
            dx += da @ getattr(cell, wx).T
            dh_prev += da @ getattr(cell, uh).T

        grad_x_seq.append(dx)
        dh = dh_prev
        dc = dc_prev
    grad_x_seq.reverse()
    return grad_x_seq, grads


# ---------------------------------------------------------------------------
# Pooling, dropout, classification head
# ---------------------------------------------------------------------------

def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """Per-channel mean over the time axis: (B, L, C) -> (B, C)."""
    if x.shape[-2] == 0:
        raise ValueError("global_avg_pool needs at least one time position")
    return x.mean(axis=-2)


def global_avg_pool_backward(grad_out: np.ndarray, length: int) -> np.ndarray:
    """Broadcast grad_out / L back to every time position."""
    return np.repeat(grad_out[..., None, :], length, axis=-2) / length


def dropout(x: np.ndarray, rate: float, training: bool, rng: Rng | None = None):
    """Inverted dropout: zero with probability rate, scale survivors by
    1/(1-rate). Identity at inference or rate 0. Returns (out, mask)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x, np.ones_like(x)
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


@dataclass
class DenseSoftmax:
    W: np.ndarray  # (F, C)
    b: np.ndarray  # (C,)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def dense_softmax_ce(layer: DenseSoftmax, x: np.ndarray, y_onehot: np.ndarray):
    """Softmax over W.T@x + b with max-subtraction; mean cross-entropy loss.

    x is (B, F), y_onehot is (B, C) with exactly one 1 per row.
    Returns (probs, loss, cache).
    """
    y_onehot = np.asarray(y_onehot, dtype=np.float64)
    if y_onehot.ndim != 2 or not (
        np.all(np.isin(y_onehot, (0.0, 1.0))) and np.all(y_onehot.sum(axis=1) == 1.0)
    ):
        raise ValueError("y_onehot rows must contain exactly one 1")
    logits = x @ layer.W + layer.b
    probs = softmax(logits)
    eps = 1e-300  # guards log(0) for a fully-confident wrong prediction
    loss = float(-np.mean(np.sum(y_onehot * np.log(probs + eps), axis=1)))
    cache = {"layer": layer, "x": x, "probs": probs, "y": y_onehot}
    return probs, loss, cache


def dense_softmax_ce_backward(cache):
    """Gradients of the mean cross-entropy w.r.t. x, W, b."""
    layer: DenseSoftmax = cache["layer"]
    batch = cache["x"].shape[0]
    dlogits = (cache["probs"] - cache["y"]) / batch
    grad_x = dlogits @ layer.W.T
    grads = {"W": cache["x"].T @ dlogits, "b": dlogits.sum(axis=0)}
    return grad_x, grads
