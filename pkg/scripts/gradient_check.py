#!/usr/bin/env python3
"""Finite-difference check of the end-to-end analytic gradient.

Builds a small randomly configured model, runs one training-mode forward and
backward pass, and compares every parameter gradient against central finite
differences. Prints the worst relative error per tensor.
"""

import argparse

import numpy as np

from grufcn.model import ArchConfig, backward, build, forward
from grufcn.tensor_core import Rng


def numerical_grad(f, x, eps=1e-6):
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        out[i] = (hi - lo) / (2 * eps)
    return grad


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--cell", choices=("gru", "lstm"), default="gru")
    parser.add_argument("--tol", type=float, default=1e-4)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    config = ArchConfig(
        series_length=int(rng.integers(6, 16)),
        num_classes=int(rng.integers(2, 5)),
        cell_kind=args.cell,
        hidden_size=3,
        conv_filters=(4, 5),
        conv_kernels=(4, 3),
        dropout_rate=0.0,
        seed=args.seed,
    )
    model = build(config)
    x = rng.normal(size=(3, config.series_length))
    y = np.eye(config.num_classes)[rng.integers(0, config.num_classes, size=3)]

    def loss():
        for block in model.blocks:
            block.bn_moving_mean[:] = 0
            block.bn_moving_var[:] = 1
        _, cache = forward(model, x, training=True, rng=Rng(0))
        value, _ = backward(model, cache, y)
        return value

    loss()
    _, cache = forward(model, x, training=True, rng=Rng(0))
    _, grads = backward(model, cache, y)

    worst_overall = 0.0
    print(f"config: L={config.series_length} C={config.num_classes} "
          f"cell={config.cell_kind}")
    print("tensor,max_relative_error")
    for name, arr in model.trainable_parameters().items():
        def f(v, arr=arr):
            arr[...] = v
            return loss()
        numeric = numerical_grad(f, arr.copy())
        denom = np.maximum(1.0, np.maximum(np.abs(grads[name]), np.abs(numeric)))
        err = float(np.max(np.abs(grads[name] - numeric) / denom))
        worst_overall = max(worst_overall, err)
        print(f"{name},{err:.3e}")
    print(f"worst: {worst_overall:.3e} (tolerance {args.tol})")
    return 0 if worst_overall <= args.tol else 1


if __name__ == "__main__":
    raise SystemExit(main())
