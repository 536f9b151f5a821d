"""Synthetic histogram streams with known class structure.

Each class has a prototype stable latent system and emission map. Samples
perturb the prototype, simulate ``x_{t+1} = A x_t + w_t`` and push every
state through a softmax to obtain a histogram.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

PROTOTYPE_NORM = 0.9
MAX_SAMPLE_NORM = 0.95


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int = 3
    per_class: int = 15
    p: int = 16
    N: int = 60
    n: int = 4
    seed: int = 42
    within_class_noise: float = 0.3
    between_class_separation: float = 1.0
    process_noise: float = 0.5
    emission_scale: float = 0.6

    def __post_init__(self):
        for name in ("n_classes", "per_class", "p", "N", "n"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be >= 1")
        if self.within_class_noise < 0 or self.process_noise < 0:
            raise InputError("noise levels must be nonnegative")


def class_name(c: int) -> str:
    return f"class_{c}"


def _stable(rng: np.random.Generator, n: int) -> np.ndarray:
    A = rng.standard_normal((n, n))
    return A * (PROTOTYPE_NORM / np.linalg.norm(A, 2))


def _softmax(Z: np.ndarray) -> np.ndarray:
    Z = Z - Z.max(axis=0, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=0, keepdims=True)


def simulate(A, W, b, x0, noise, process_noise: float) -> np.ndarray:
    """Histogram stream ``softmax(b + W x_t)`` of a latent trajectory (``p x N``).

    ``noise`` holds one standard-normal driving vector per column.
    """
    n, N = noise.shape
    X = np.empty((n, N))
    x = x0
    for t in range(N):
        X[:, t] = x
        x = A @ x + process_noise * noise[:, t]
    return _softmax(b[:, None] + W @ X)


def synth_dataset(spec: SynthSpec) -> list[tuple[str, np.ndarray]]:
    """Labeled streams, class by class. Deterministic for a given spec.

    A sample mixes its class's driving noise with fresh noise and perturbs
    the class parameters, both in proportion to ``within_class_noise``;
    at zero noise all streams of a class coincide.
    """
    rng = np.random.default_rng(spec.seed)
    n, p, N = spec.n, spec.p, spec.N
    eps = spec.within_class_noise
    mix = min(eps, 1.0)
    # Stationary spread of the latent state, so no burn-in is needed.
    spread = spec.process_noise / np.sqrt(1.0 - PROTOTYPE_NORM ** 2)
    protos = []
    for _ in range(spec.n_classes):
        A = _stable(rng, n)
        W = spec.emission_scale * rng.standard_normal((p, n))
        b = spec.between_class_separation * rng.standard_normal(p)
        drive = rng.standard_normal((n, N + 1))
        protos.append((A, W, b, drive))
    out = []
    for c, (A0, W0, b0, drive0) in enumerate(protos):
        for _ in range(spec.per_class):
            A = A0 + eps * (PROTOTYPE_NORM / np.sqrt(n)) * rng.standard_normal((n, n))
            norm = np.linalg.norm(A, 2)
            if norm > MAX_SAMPLE_NORM:
                A *= MAX_SAMPLE_NORM / norm
            W = W0 + eps * spec.emission_scale * rng.standard_normal((p, n))
            b = b0 + eps * spec.between_class_separation * rng.standard_normal(p)
            drive = np.sqrt(1.0 - mix ** 2) * drive0 + mix * rng.standard_normal((n, N + 1))
            Y = simulate(A, W, b, spread * drive[:, 0], drive[:, 1:], spec.process_noise)
            out.append((class_name(c), Y))
    return out
