"""Synthetic datasets and a small CSV loader."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .engine import ArchitectureSpec
from .tensor import RngState

KINDS = ("quadratic", "logistic", "two-layer-teacher")


@dataclass(frozen=True)
class SyntheticTask:
    """Generator settings for a desk-scale task.

    ``quadratic`` is linear least squares (loss bounded below by 0),
    ``logistic`` is a two-class linearly separable-ish problem with label
    noise, and ``two-layer-teacher`` regresses onto a random tanh network.
    ``depth`` and ``width`` shape the default student architecture.
    """

    kind: str = "quadratic"
    dim: int = 8
    n: int = 256
    noise: float = 0.1
    seed: int = 0
    depth: int = 1
    width: int = 8
    activation: str = "tanh"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if min(self.dim, self.n, self.depth, self.width) < 1:
            raise ValueError("task sizes must be positive")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")

    def arch(self) -> ArchitectureSpec:
        out = 2 if self.kind == "logistic" else 1
        loss = "softmax-cross-entropy" if self.kind == "logistic" else "mean-squared-error"
        if self.depth == 1:
            return ArchitectureSpec.from_dims([(self.dim, out)], loss=loss)
        dims = [(self.dim, self.width)] + [(self.width, self.width)] * (self.depth - 2) \
            + [(self.width, out)]
        acts = [self.activation] * (self.depth - 1) + ["identity"]
        return ArchitectureSpec.from_dims(dims, activation=acts, loss=loss)

    def generate(self):
        """``(X, Y)`` with ``X`` of shape ``(n, 1, dim)``."""
        gen = RngState(self.seed).generator()
        X = gen.standard_normal((self.n, self.dim))
        if self.kind == "quadratic":
            w = gen.standard_normal(self.dim) / np.sqrt(self.dim)
            y = X @ w + self.noise * gen.standard_normal(self.n)
            Y = y[:, None, None]
        elif self.kind == "logistic":
            w = gen.standard_normal(self.dim) / np.sqrt(self.dim)
            logits = 2.0 * X @ w + self.noise * gen.standard_normal(self.n)
            Y = (logits > 0).astype(np.int64)[:, None]
        else:
            W1 = gen.standard_normal((self.dim, self.width)) / np.sqrt(self.dim)
            w2 = gen.standard_normal(self.width) / np.sqrt(self.width)
            y = np.tanh(X @ W1) @ w2 + self.noise * gen.standard_normal(self.n)
            Y = y[:, None, None]
        return X[:, None, :], Y

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticTask":
        return cls(**doc)


def quadratic_smoothness(X) -> float:
    """Largest eigenvalue of ``X^T X / n`` for the mean least-squares loss."""
    X = np.asarray(X).reshape(len(X), -1)
    return float(np.linalg.eigvalsh(X.T @ X / len(X))[-1])


def load_csv_dataset(path, label_column: int = -1):
    """Feature matrix and integer labels from a CSV file with a header row."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: need a header row and at least one data row")
    data = rows[1:]
    width = len(rows[0])
    if any(len(r) != width for r in data):
        raise ValueError(f"{path}: ragged rows")
    col = label_column % width
    try:
        labels = np.array([int(r[col]) for r in data], dtype=np.int64)
        feats = np.array([[float(v) for i, v in enumerate(r) if i != col] for r in data])
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from exc
    return feats[:, None, :], labels[:, None]
