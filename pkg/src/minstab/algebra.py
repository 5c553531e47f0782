"""Pointwise algebra of the calibrated second variation.

At a point of a graph, pick the adapted frames coming from the singular
value decomposition of ``df`` with the canonical embedding ``a_i = e_i`` in
R^n and ``a_{n+k} = e_k`` in R^m. A normal variation ``V`` is then described by

* ``V[a]``        components of V along the normal frame ``e_{n+a}``,
* ``dV[i, a]``    components of ``(nabla_{e_i} V)^N`` along ``e_{n+a}``,
* ``h[a, i, j]``  second fundamental form in the frames (symmetric in i, j),

together with the singular values ``lam``. Every function here accepts
arrays with arbitrary leading batch dimensions.

Two routes compute the same integrand: :func:`integrand_direct` fills the
slots of ``Omega = dx^1 ^ ... ^ dx^n`` with actual frame vectors and takes
determinants, while :func:`integrand_expanded` and :func:`xi` use the closed
expansion in the components. The sign of the h-coupling terms in the closed
expansion is selectable: ``variant="derived"`` matches the determinant route,
``variant="printed"`` reproduces the opposite signs as they are commonly
quoted. The two differ exactly by ``V -> -V``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .criterion import CriterionConstants
from .errors import ConfigurationError, DomainError

VARIANTS = ("derived", "printed")
FAMILIES_DERIVED = (("T", "N"), ("N", "T"), ("N", "N"))
FAMILIES_PRINTED = (("T", "N"), ("N", "N"), ("T", "N"))


@dataclass
class AlgebraSample:
    lam: np.ndarray
    V: np.ndarray
    dV: np.ndarray
    h: np.ndarray
    trace_free: bool = False

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float)
        self.V = np.asarray(self.V, dtype=float)
        self.dV = np.asarray(self.dV, dtype=float)
        self.h = np.asarray(self.h, dtype=float)

    @property
    def n(self) -> int:
        return self.lam.shape[-1]

    @property
    def m(self) -> int:
        return self.V.shape[-1]

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.lam.shape[:-1]

    def __getitem__(self, idx) -> AlgebraSample:
        return AlgebraSample(self.lam[idx], self.V[idx], self.dV[idx], self.h[idx], self.trace_free)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "lambda": self.lam.tolist(),
            "V": self.V.tolist(),
            "dV": self.dV.tolist(),
            "h": self.h.tolist(),
        }


def omega_eval(vectors: np.ndarray) -> np.ndarray:
    """``dx^1 ^ ... ^ dx^n`` on n ambient vectors given as rows ``(..., n, n+m)``."""
    vectors = np.asarray(vectors, dtype=float)
    n = vectors.shape[-2]
    return np.linalg.det(vectors[..., :n])


def build_frame_vectors(lam: np.ndarray, n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Tangent and normal frames ``(e_i)``, ``(e_{n+a})`` as rows in R^{n+m}."""
    lam = np.asarray(lam, dtype=float)
    if lam.shape[-1] != n:
        raise DomainError(f"lambda must have length n={n}")
    if np.any(lam < 0):
        raise DomainError("singular values must be non-negative")
    if m < n and np.any(lam[..., m:] != 0):
        raise DomainError("lambda_i must vanish for i > m")
    k = min(n, m)
    s = np.sqrt(1.0 + lam**2)
    batch = lam.shape[:-1]
    e_t = np.zeros(batch + (n, n + m))
    e_n = np.zeros(batch + (m, n + m))
    idx = np.arange(n)
    e_t[..., idx, idx] = 1.0 / s
    kk = np.arange(k)
    e_t[..., kk, n + kk] = lam[..., :k] / s[..., :k]
    e_n[..., kk, kk] = -lam[..., :k] / s[..., :k]
    e_n[..., kk, n + kk] = 1.0 / s[..., :k]
    extra = np.arange(k, m)
    e_n[..., extra, n + extra] = 1.0
    return e_t, e_n


def star_omega(lam: np.ndarray) -> np.ndarray:
    return 1.0 / np.sqrt(np.prod(1.0 + np.asarray(lam) ** 2, axis=-1))


def covariant_parts(sample: AlgebraSample) -> tuple[np.ndarray, np.ndarray]:
    """``(nabla_{e_i} V)^T`` and ``(nabla_{e_i} V)^N`` as rows ``(..., n, n+m)``."""
    e_t, e_n = build_frame_vectors(sample.lam, sample.n, sample.m)
    normal = np.einsum("...ia,...ap->...ip", sample.dV, e_n)
    s = np.einsum("...a,...aij->...ij", sample.V, sample.h)
    tangent = -np.einsum("...ij,...jp->...ip", s, e_t)
    return tangent, normal


def integrand_direct(
    sample: AlgebraSample,
    families: Sequence[tuple[str, str]] = FAMILIES_DERIVED,
) -> np.ndarray:
    """``*Omega |nabla^N V|^2 - 2 sum_{i<j} Omega(e_1, .., X_i, .., Y_j, .., e_n)``.

    Each family (X, Y) in ``families`` picks tangent ("T") or normal ("N")
    parts for the two replaced slots; unlisted slots hold ``e_k``.
    """
    e_t, _ = build_frame_vectors(sample.lam, sample.n, sample.m)
    tangent, normal = covariant_parts(sample)
    parts = {"T": tangent, "N": normal}
    n = sample.n
    total = omega_eval(e_t) * np.sum(normal**2, axis=(-2, -1))
    for i, j in itertools.combinations(range(n), 2):
        for x, y in families:
            vecs = e_t.copy()
            vecs[..., i, :] = parts[x][..., i, :]
            vecs[..., j, :] = parts[y][..., j, :]
            total = total - 2.0 * omega_eval(vecs)
    return total


def _paired(sample: AlgebraSample) -> np.ndarray:
    """``P[i, j] = V_i^{n+j}`` for j < min(n, m), zero-padded to n x n."""
    n, m = sample.n, sample.m
    k = min(n, m)
    p = np.zeros(sample.batch_shape + (n, n))
    p[..., :, :k] = sample.dV[..., :, :k]
    return p


def _terms(sample: AlgebraSample) -> dict[str, np.ndarray]:
    lam = sample.lam
    p = _paired(sample)
    diag = np.diagonal(p, axis1=-2, axis2=-1)
    s = np.einsum("...a,...aij->...ij", sample.V, sample.h)
    s_diag = np.diagonal(s, axis1=-2, axis2=-1)
    ld = lam * diag
    sq = np.sum(sample.dV**2, axis=(-2, -1))
    # sum_{i != j} lam_i lam_j V_i^{n+i} V_j^{n+j}
    t_diag = np.sum(ld, axis=-1) ** 2 - np.sum(ld**2, axis=-1)
    # sum_{i != j} lam_i lam_j V_i^{n+j} V_j^{n+i}
    lp = lam[..., :, None] * lam[..., None, :] * p * np.swapaxes(p, -1, -2)
    t_cross = np.sum(lp, axis=(-2, -1)) - np.sum(lam**2 * diag**2, axis=-1)
    # sum_{i,j} S_ij V_j^{n+i} lam_i
    t_h = np.einsum("...ij,...ji,...i->...", s, p, lam)
    diag_h = np.sum(s_diag * diag * lam, axis=-1)
    # sum_{i != j} S_ii V_j^{n+j} lam_j
    t_trace = np.sum(s_diag, axis=-1) * np.sum(ld, axis=-1) - diag_h
    return {
        "sq": sq,
        "t_diag": t_diag,
        "t_cross": t_cross,
        "t_h": t_h,
        "t_h_off": t_h - diag_h,
        "t_trace": t_trace,
        "s_sq": np.sum(s**2, axis=(-2, -1)),
    }


def _sign(variant: str) -> float:
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return 1.0 if variant == "derived" else -1.0


def integrand_expanded(sample: AlgebraSample, variant: str = "derived") -> np.ndarray:
    """Closed expansion of the calibrated integrand in frame components."""
    sgn = _sign(variant)
    t = _terms(sample)
    bracket = (
        t["sq"]
        - t["t_diag"]
        + t["t_cross"]
        - sgn * 2.0 * t["t_trace"]
        + sgn * 2.0 * t["t_h_off"]
    )
    return star_omega(sample.lam) * bracket


def xi(sample: AlgebraSample, variant: str = "derived") -> np.ndarray:
    """Xi, valid as ``integrand / *Omega`` when h is trace free."""
    sgn = _sign(variant)
    t = _terms(sample)
    return t["sq"] - t["t_diag"] + t["t_cross"] + sgn * 2.0 * t["t_h"]


def rhs_bound(sample: AlgebraSample, delta: float) -> np.ndarray:
    """``delta [sum (V_i^a)^2 - sum_ij (sum_a V^a h_aij)^2]``."""
    t = _terms(sample)
    return delta * (t["sq"] - t["s_sq"])


def sample_scale(sample: AlgebraSample) -> np.ndarray:
    """Size functional used for relative tolerances."""
    t = _terms(sample)
    return t["sq"] + t["s_sq"] + 1.0


def trace_free_part(h: np.ndarray) -> np.ndarray:
    n = h.shape[-1]
    h = 0.5 * (h + np.swapaxes(h, -1, -2))
    tr = np.trace(h, axis1=-2, axis2=-1)
    return h - (tr / n)[..., None, None] * np.eye(n)


def random_samples(
    n: int,
    m: int,
    lam_cap: float,
    count: int,
    rng: np.random.Generator,
    trace_free: bool = True,
) -> AlgebraSample:
    """Uniform random samples; lambda_i in [0, cap] for i < min(n, m), else 0."""
    k = min(n, m)
    lam = np.zeros((count, n))
    lam[:, :k] = rng.uniform(0.0, lam_cap, size=(count, k))
    V = rng.uniform(-1.0, 1.0, size=(count, m))
    dV = rng.uniform(-1.0, 1.0, size=(count, n, m))
    h = rng.uniform(-1.0, 1.0, size=(count, m, n, n))
    h = trace_free_part(h) if trace_free else 0.5 * (h + np.swapaxes(h, -1, -2))
    return AlgebraSample(lam=lam, V=V, dV=dV, h=h, trace_free=trace_free)


@dataclass
class XiBatchReport:
    n: int
    m: int
    lam_cap: float
    delta: float
    count: int
    seed: int
    tol: float
    variant: str
    violations: int
    min_margin: float
    argmin_sample: dict = field(default_factory=dict)
    first_violation: dict | None = None

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "lam_cap": self.lam_cap,
            "delta": self.delta,
            "count": self.count,
            "seed": self.seed,
            "tol": self.tol,
            "variant": self.variant,
            "violations": self.violations,
            "min_margin": self.min_margin,
            "argmin_sample": self.argmin_sample,
            "first_violation": self.first_violation,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def check_xi_inequality(
    n: int,
    m: int,
    lam_cap: float | None = None,
    count: int = 100_000,
    seed: int = 0,
    delta: float | None = None,
    tol: float = 1e-10,
    variant: str = "derived",
    batch_size: int = 20_000,
) -> XiBatchReport:
    """Randomized check of ``Xi >= delta [...]`` on trace-free samples.

    ``min_margin`` is the smallest ``(Xi - rhs) / scale`` seen, with
    :func:`sample_scale` as the scale; a sample violates the bound when that
    ratio drops below ``-tol``.
    """
    consts = CriterionConstants.from_dims(n, m)
    if lam_cap is None:
        lam_cap = consts.slope
    if delta is None:
        delta = consts.delta
    if lam_cap > consts.slope * (1 + 1e-12):
        raise ConfigurationError(f"lambda cap {lam_cap} exceeds the critical slope {consts.slope}")
    rng = np.random.default_rng(seed)
    violations = 0
    best = math.inf
    best_sample: AlgebraSample | None = None
    first: AlgebraSample | None = None
    done = 0
    while done < count:
        size = min(batch_size, count - done)
        batch = random_samples(n, m, lam_cap, size, rng, trace_free=True)
        margin = (xi(batch, variant) - rhs_bound(batch, delta)) / sample_scale(batch)
        bad = margin < -tol
        violations += int(bad.sum())
        if first is None and bad.any():
            first = batch[int(np.flatnonzero(bad)[0])]
        k = int(np.argmin(margin))
        if margin[k] < best:
            best = float(margin[k])
            best_sample = batch[k]
        done += size
    return XiBatchReport(
        n=n,
        m=m,
        lam_cap=float(lam_cap),
        delta=float(delta),
        count=count,
        seed=seed,
        tol=tol,
        variant=variant,
        violations=violations,
        min_margin=best,
        argmin_sample=best_sample.to_dict() if best_sample is not None else {},
        first_violation=first.to_dict() if first is not None else None,
    )


@dataclass
class ScanReport:
    n: int
    m: int
    lam_value: float
    delta: float
    examined: int
    violations: int
    min_margin: float
    witness: dict | None


def adversarial_scan(
    n: int,
    m: int,
    lam_value: float = 1.0,
    delta: float | None = None,
    grid: Iterable[float] = (-1.0, 0.0, 1.0),
    max_samples: int = 200_000,
    variant: str = "derived",
) -> ScanReport:
    """Grid search for samples violating the Xi bound with all lambda_i fixed.

    ``dV`` and ``V`` range over ``grid`` entrywise; ``h`` is taken as zero and
    as each trace-free elementary pattern scaled by ``grid`` values.
    """
    if delta is None:
        delta = CriterionConstants.from_dims(n, m).delta
    grid = tuple(float(x) for x in grid)
    k = min(n, m)
    lam = np.zeros(n)
    lam[:k] = lam_value

    h_choices = [np.zeros((m, n, n))]
    if n > 1:
        pattern = np.zeros((m, n, n))
        pattern[0, 0, 1] = pattern[0, 1, 0] = 1.0
        h_choices.append(pattern)
        pattern = np.zeros((m, n, n))
        pattern[0, 0, 0], pattern[0, 1, 1] = 1.0, -1.0
        h_choices.append(pattern)

    combos = itertools.product(itertools.product(grid, repeat=n * m), itertools.product(grid, repeat=m))
    dvs, vs = [], []
    for dv, v in itertools.islice(combos, max_samples // len(h_choices)):
        dvs.append(dv)
        vs.append(v)
    dV = np.array(dvs).reshape(-1, n, m)
    V = np.array(vs).reshape(-1, m)
    examined = 0
    violations = 0
    best, witness = math.inf, None
    for hc in h_choices:
        cnt = dV.shape[0]
        batch = AlgebraSample(
            lam=np.broadcast_to(lam, (cnt, n)).copy(),
            V=V,
            dV=dV,
            h=np.broadcast_to(hc, (cnt, m, n, n)).copy(),
            trace_free=True,
        )
        margin = (xi(batch, variant) - rhs_bound(batch, delta)) / sample_scale(batch)
        examined += cnt
        violations += int((margin < -1e-12).sum())
        j = int(np.argmin(margin))
        if margin[j] < best:
            best = float(margin[j])
            witness = batch[j].to_dict()
    return ScanReport(
        n=n,
        m=m,
        lam_value=lam_value,
        delta=float(delta),
        examined=examined,
        violations=violations,
        min_margin=best,
        witness=witness if best < 0 else None,
    )


def _trace_free_basis(n: int) -> np.ndarray:
    """Frobenius-orthonormal basis of symmetric trace-free n x n matrices."""
    mats = []
    for i, j in itertools.combinations(range(n), 2):
        b = np.zeros((n, n))
        b[i, j] = b[j, i] = 1.0
        mats.append(b.ravel())
    for i in range(n - 1):
        b = np.zeros((n, n))
        b[i, i], b[i + 1, i + 1] = 1.0, -1.0
        mats.append(b.ravel())
    if not mats:
        return np.zeros((0, n, n))
    q, _ = np.linalg.qr(np.array(mats).T)
    return q.T.reshape(-1, n, n)


@dataclass
class FormSpectrum:
    n: int
    m: int
    lam: list
    delta: float
    min_eigenvalue: float
    witness: dict

    @property
    def positive(self) -> bool:
        return self.min_eigenvalue >= 0.0


def xi_form_spectrum(n: int, m: int, lam, delta: float | None = None,
                     variant: str = "derived") -> FormSpectrum:
    """Exact worst case of ``Xi - rhs_bound`` at fixed ``lambda``.

    For fixed lambda, ``Xi - rhs_bound`` is a quadratic form in ``dV`` and
    ``S = sum_a V^a h_a``, and S ranges over all symmetric trace-free
    matrices. The bound holds for every sample at this lambda exactly when
    the form is positive semidefinite. The minimizing eigenvector is returned
    as a sample with ``V = (1, 0, ..)`` and ``h_1 = S``.
    """
    if delta is None:
        delta = CriterionConstants.from_dims(n, m).delta
    lam = np.asarray(lam, dtype=float)
    basis = _trace_free_basis(n)
    nd = n * m
    dim = nd + basis.shape[0]

    def samples(x: np.ndarray) -> AlgebraSample:
        cnt = x.shape[0]
        h = np.zeros((cnt, m, n, n))
        h[:, 0] = np.einsum("kb,bij->kij", x[:, nd:], basis)
        V = np.zeros((cnt, m))
        V[:, 0] = 1.0
        return AlgebraSample(lam=np.broadcast_to(lam, (cnt, n)).copy(), V=V,
                             dV=x[:, :nd].reshape(cnt, n, m), h=h, trace_free=True)

    def form(x: np.ndarray) -> np.ndarray:
        s = samples(x)
        return xi(s, variant) - rhs_bound(s, delta)

    eye = np.eye(dim)
    plus = (eye[:, None, :] + eye[None, :, :]).reshape(-1, dim)
    minus = (eye[:, None, :] - eye[None, :, :]).reshape(-1, dim)
    A = ((form(plus) - form(minus)) / 4.0).reshape(dim, dim)
    vals, vecs = np.linalg.eigh(0.5 * (A + A.T))
    witness = samples(vecs[:, :1].T)[0]
    return FormSpectrum(n=n, m=m, lam=lam.tolist(), delta=float(delta),
                        min_eigenvalue=float(vals[0]), witness=witness.to_dict())
