"""Minimal linear embedding map trained by plain gradient descent."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ToyEncoder:
    """x -> normalize(W^T x); weight shape (dim_in, dim_out)."""

    weight: np.ndarray

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if self.weight.ndim != 2:
            raise ValueError("encoder weight must be a matrix")
        if not np.all(np.isfinite(self.weight)):
            raise ValueError("encoder weight has non-finite values")

    @classmethod
    def init(cls, dim_in: int, dim_out: int, rng: np.random.Generator) -> "ToyEncoder":
        """Random partial isometry: orthonormal columns keep the initial
        embedding geometry close to the input space."""
        q, _ = np.linalg.qr(rng.normal(size=(dim_in, dim_out)))
        return cls(q)

    @property
    def dim_in(self) -> int:
        return self.weight.shape[0]

    @property
    def dim_out(self) -> int:
        return self.weight.shape[1]

    def encode(self, x: np.ndarray) -> np.ndarray:
        """Embed rows of x onto the unit sphere."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y = x @ self.weight
        norms = np.linalg.norm(y, axis=1)
        if np.any(norms < 1e-12):
            raise ValueError("encoder collapsed a row to zero norm")
        return y / norms[:, None]

    def weight_gradient(self, x: np.ndarray, query_grads: np.ndarray) -> np.ndarray:
        """Chain per-query gradients through the normalization back to W.

        For y = W^T x and q = y/|y| the Jacobian contribution per row is
        (g - (q.g) q) / |y|, accumulated as an outer product with x.
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        g = np.atleast_2d(np.asarray(query_grads, dtype=np.float64))
        y = x @ self.weight
        norms = np.linalg.norm(y, axis=1, keepdims=True)
        q = y / norms
        gy = (g - np.sum(q * g, axis=1, keepdims=True) * q) / norms
        return x.T @ gy

    def save(self, path) -> None:
        np.save(path, self.weight, allow_pickle=False)

    @classmethod
    def load(cls, path) -> "ToyEncoder":
        return cls(np.load(path, allow_pickle=False))


def gradient_step(
    encoder: ToyEncoder, inputs: np.ndarray, query_grads: np.ndarray, lr: float
) -> ToyEncoder:
    """One descent step W <- W - lr * dL/dW for a batch of query gradients."""
    grad_w = encoder.weight_gradient(inputs, query_grads)
    if not np.all(np.isfinite(grad_w)):
        raise ValueError("non-finite encoder gradient")
    return ToyEncoder(encoder.weight - lr * grad_w)
