"""Tiny MLP plumbing on top of the tape engine.

Biases are stored as (1, K) rows and added through a ones-column matmul so the
engine never needs broadcasting beyond scalar-with-array.
"""
from __future__ import annotations

import numpy as np

from . import diffcore as dc
from .diffcore import DiffValue, Parameter, Tape


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


def init_linear(rng: np.random.Generator, name: str, fan_in: int, fan_out: int):
    w = Parameter(f"{name}.w", xavier_uniform(rng, fan_in, fan_out))
    b = Parameter(f"{name}.b", np.zeros((1, fan_out)))
    return w, b


def linear(tape: Tape, x: DiffValue, w: Parameter, b: Parameter) -> DiffValue:
    out = dc.matmul(x, tape.param(w))
    ones = tape.const(np.ones((x.shape[0], 1)))
    return dc.add(out, dc.matmul(ones, tape.param(b)))


class Mlp:
    """Stack of linear layers with ReLU between them; the last layer is linear
    unless final_relu is set."""

    def __init__(self, name: str, widths: list[int], rng: np.random.Generator):
        self.name = name
        self.widths = list(widths)
        self.layers = [
            init_linear(rng, f"{name}.{i}", widths[i], widths[i + 1])
            for i in range(len(widths) - 1)
        ]

    def forward(self, tape: Tape, x: DiffValue, final_relu: bool = False) -> DiffValue:
        h = x
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = linear(tape, h, w, b)
            if i < last or final_relu:
                h = dc.relu(h)
        return h

    def parameters(self) -> list[Parameter]:
        return [p for pair in self.layers for p in pair]
