"""Small fully-connected network with a hand-written adjoint pass.

Shape chain is input -> hidden -> hidden -> output with ReLU between
affine layers. Forward returns a tape of cached activations; backward
consumes the tape and produces exact reverse-mode gradients for the
input and every weight/bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MlpTape:
    mlp: "Mlp"
    x: np.ndarray                 # (B, in)
    hidden: list[np.ndarray]      # post-ReLU activations per hidden layer, (B, H)
    squeeze: bool                 # input arrived as a single vector


class Mlp:
    """2-hidden-layer, 64-wide by default; width/depth configurable for tests."""

    def __init__(self, input_dim: int, output_dim: int, hidden_dim: int = 64,
                 n_hidden: int = 2):
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.hidden_dim = hidden_dim
        self.n_hidden = n_hidden
        dims = [input_dim] + [hidden_dim] * n_hidden + [output_dim]
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            self.weights.append(np.zeros((d_out, d_in)))
            self.biases.append(np.zeros(d_out))

    @classmethod
    def init_random(cls, rng: np.random.Generator, input_dim: int, output_dim: int,
                    hidden_dim: int = 64, n_hidden: int = 2) -> "Mlp":
        """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases."""
        mlp = cls(input_dim, output_dim, hidden_dim, n_hidden)
        for i, w in enumerate(mlp.weights):
            bound = np.sqrt(6.0 / (w.shape[0] + w.shape[1]))
            mlp.weights[i] = rng.uniform(-bound, bound, size=w.shape)
        return mlp

    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, MlpTape]:
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.input_dim:
            raise ValueError(
                f"input has {x.shape[1]} features, expected {self.input_dim}"
            )
        hidden = []
        a = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.maximum(a @ w.T + b, 0.0)
            hidden.append(a)
        y = a @ self.weights[-1].T + self.biases[-1]
        tape = MlpTape(mlp=self, x=x, hidden=hidden, squeeze=squeeze)
        return (y[0] if squeeze else y), tape

    def backward(
        self, tape: MlpTape, dy: np.ndarray
    ) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
        """Adjoint of :meth:`forward`.

        Returns (dx, [(dW, db) per layer, first to last]).
        """
        if tape.mlp is not self:
            raise ValueError("tape was produced by a different network")
        dy = np.asarray(dy, dtype=np.float64)
        if tape.squeeze:
            dy = dy[None, :]
        if dy.shape != (tape.x.shape[0], self.output_dim):
            raise ValueError(f"dy shape {dy.shape} does not match the tape")

        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(self.weights)
        acts = [tape.x] + tape.hidden
        d = dy
        for layer in range(len(self.weights) - 1, -1, -1):
            a_prev = acts[layer]
            grads[layer] = (d.T @ a_prev, d.sum(axis=0))
            d = d @ self.weights[layer]
            if layer > 0:
                d = d * (acts[layer] > 0.0)
        return (d[0] if tape.squeeze else d), grads


def mlp_eval(mlp: Mlp, x: np.ndarray) -> tuple[np.ndarray, MlpTape]:
    return mlp.forward(x)


def mlp_backward(mlp: Mlp, tape: MlpTape, dy: np.ndarray):
    return mlp.backward(tape, dy)
