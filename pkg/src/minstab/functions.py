"""Builtin maps ``f: R^n -> R^m`` used by the CLI and the test corpus.

Each factory returns a vectorized evaluator taking points of shape ``(k, n)``
and returning values of shape ``(k, m)``.
"""

from __future__ import annotations

import itertools
from typing import Callable

import numpy as np

from .errors import ConfigurationError

Evaluator = Callable[[np.ndarray], np.ndarray]


def zero(n: int, m: int) -> Evaluator:
    return lambda x: np.zeros((x.shape[0], m))


def linear(A) -> Evaluator:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return lambda x: x @ A.T


def quadratic(Q, A=None, b=None) -> Evaluator:
    """``f^a(x) = x^T Q_a x / 2 + (A x)_a + b_a`` with symmetric ``Q_a``."""
    Q = np.asarray(Q, dtype=float)
    if Q.ndim == 2:
        Q = Q[None]
    Q = 0.5 * (Q + np.swapaxes(Q, -1, -2))
    m, n, _ = Q.shape
    A = np.zeros((m, n)) if A is None else np.atleast_2d(np.asarray(A, dtype=float))
    b = np.zeros(m) if b is None else np.asarray(b, dtype=float)
    return lambda x: 0.5 * np.einsum("ki,aij,kj->ka", x, Q, x) + x @ A.T + b


def sinusoidal(n: int, m: int, amplitude: float = 1.0, frequency: float = 1.0, phase: float = 0.0) -> Evaluator:
    """``f^a(x) = amplitude * prod_i sin(frequency (x_i + a) + phase)``."""

    def f(x):
        cols = [amplitude * np.prod(np.sin(frequency * (x + a) + phase), axis=1) for a in range(m)]
        return np.stack(cols, axis=1)

    return f


def random_fourier(n: int, m: int, seed: int = 0, modes: int = 2, amplitude: float = 1.0) -> Evaluator:
    """Seeded low-frequency Fourier sum with coefficients decaying like 1/|k|^2."""
    rng = np.random.default_rng(seed)
    freqs = [k for k in itertools.product(range(modes + 1), repeat=n) if any(k)]
    terms = []
    for k in freqs:
        kk = np.array(k, dtype=float)
        decay = 1.0 / float(kk @ kk)
        terms.append((kk, rng.normal(size=m) * decay, rng.normal(size=m) * decay))

    def f(x):
        out = np.zeros((x.shape[0], m))
        for kk, a, b in terms:
            arg = np.pi * (x @ kk)
            out += np.cos(arg)[:, None] * a + np.sin(arg)[:, None] * b
        return amplitude * out

    return f


def holomorphic_square(a: complex = 1.0) -> Evaluator:
    """``f = (Re(a z^2), Im(a z^2))`` with ``z = x1 + i x2``; a minimal graph in R^4."""

    def f(x):
        w = a * (x[:, 0] + 1j * x[:, 1]) ** 2
        return np.stack([w.real, w.imag], axis=1)

    return f


def scherk(x: np.ndarray) -> np.ndarray:
    """Scherk's surface ``log(cos x2 / cos x1)``, minimal over |x_i| < pi/2."""
    return np.log(np.cos(x[:, 1]) / np.cos(x[:, 0]))[:, None]


BUILTINS = ("zero", "linear", "quadratic", "sinusoidal", "random_fourier")


def make_builtin(name: str, n: int, m: int, params: dict) -> Evaluator:
    """Build a named evaluator from already-parsed parameters."""
    if name == "zero":
        return zero(n, m)
    if name == "linear":
        A = np.asarray(params["A"], dtype=float).reshape(m, n)
        return linear(A)
    if name == "quadratic":
        Q = np.asarray(params["Q"], dtype=float).reshape(m, n, n)
        A = params.get("A")
        A = None if A is None else np.asarray(A, dtype=float).reshape(m, n)
        return quadratic(Q, A)
    if name == "sinusoidal":
        return sinusoidal(n, m, params.get("amplitude", 1.0), params.get("frequency", 1.0),
                          params.get("phase", 0.0))
    if name == "random_fourier":
        return random_fourier(n, m, int(params.get("seed", 0)), int(params.get("modes", 2)),
                              params.get("amplitude", 1.0))
    raise ConfigurationError(f"unknown builtin {name!r}; expected one of {BUILTINS}")
