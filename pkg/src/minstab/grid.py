"""Graph submanifolds sampled on rectangular grids.

A map ``f: D -> R^m`` over a box ``D`` in ``R^n`` is stored as nodal values
on a uniform tensor grid. Its jet (first derivatives and Hessians) comes from
second-order central differences; everything downstream (induced metric,
adapted SVD frames, second fundamental form) is computed node by node from
the jet.

Array layout: nodal fields carry the grid axes first, e.g. ``values`` has
shape ``(*resolution, m)``, ``df`` has shape ``(*resolution, m, n)`` and
``hess`` has shape ``(*resolution, m, n, n)``. Nodes are ordered
lexicographically (C order) when flattened.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, ConsistencyError, DataError, StateError

MIN_RESOLUTION = 5


@dataclass(frozen=True)
class GridDomain:
    """Uniform rectangular grid over a box in R^n."""

    n: int
    bounds: tuple[tuple[float, float], ...]
    resolution: tuple[int, ...]

    @property
    def spacing(self) -> np.ndarray:
        lo = np.array([b[0] for b in self.bounds], dtype=float)
        hi = np.array([b[1] for b in self.bounds], dtype=float)
        return (hi - lo) / (np.array(self.resolution) - 1)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.resolution)

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def interior(self) -> tuple[slice, ...]:
        """Index expression selecting the interior nodes."""
        return tuple(slice(1, r - 1) for r in self.resolution)

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(a, b, r) for (a, b), r in zip(self.bounds, self.resolution)]

    def coordinates(self) -> np.ndarray:
        """Node coordinates, shape ``(*resolution, n)``."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def interior_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[self.interior] = True
        return mask

    def trapezoid_weights(self) -> np.ndarray:
        """Product trapezoid weights per node."""
        w = np.ones(self.shape)
        for axis, (r, h) in enumerate(zip(self.resolution, self.spacing)):
            w1 = np.full(r, h)
            w1[0] = w1[-1] = h / 2
            shape = [1] * self.n
            shape[axis] = r
            w = w * w1.reshape(shape)
        return w


def build_grid(n: int, bounds: Sequence[Sequence[float]], resolution: Sequence[int]) -> GridDomain:
    """Validate the box and resolution and return a :class:`GridDomain`."""
    errors = []
    if int(n) != n or n < 1:
        raise ConfigurationError(f"dimension must be a positive integer, got {n!r}")
    n = int(n)
    if len(bounds) != n:
        errors.append(f"expected {n} bound pairs, got {len(bounds)}")
    if len(resolution) != n:
        errors.append(f"expected {n} resolution entries, got {len(resolution)}")
    if errors:
        raise ConfigurationError("; ".join(errors), errors)

    pairs = []
    for axis, pair in enumerate(bounds):
        if len(pair) != 2:
            errors.append(f"bounds[{axis}] must be a pair")
            continue
        a, b = float(pair[0]), float(pair[1])
        if not (np.isfinite(a) and np.isfinite(b) and a < b):
            errors.append(f"bounds[{axis}] = ({a}, {b}) is not an increasing finite pair")
        pairs.append((a, b))
    res = []
    for axis, r in enumerate(resolution):
        if int(r) != r or r < MIN_RESOLUTION:
            errors.append(f"resolution[{axis}] = {r} must be an integer >= {MIN_RESOLUTION}")
        res.append(int(r))
    if errors:
        raise ConfigurationError("; ".join(errors), errors)
    return GridDomain(n=n, bounds=tuple(pairs), resolution=tuple(res))


@dataclass
class GraphSample:
    """Nodal values of ``f`` plus its finite-difference jet once computed."""

    domain: GridDomain
    m: int
    values: np.ndarray
    df: np.ndarray | None = None
    hess: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def has_jet(self) -> bool:
        return self.df is not None and self.hess is not None

    def require_jet(self) -> None:
        if not self.has_jet:
            raise StateError("jet not computed; call compute_jet first")

    def scaled(self, t: float) -> GraphSample:
        """Return ``t * f`` (the jet scales linearly, so it is kept)."""
        return GraphSample(
            domain=self.domain,
            m=self.m,
            values=t * self.values,
            df=None if self.df is None else t * self.df,
            hess=None if self.hess is None else t * self.hess,
        )


def sample_function(domain: GridDomain, m: int, evaluator: Callable[[np.ndarray], np.ndarray]) -> GraphSample:
    """Evaluate ``evaluator`` at every node.

    ``evaluator`` receives an array of points with shape ``(k, n)`` and
    returns values with shape ``(k, m)`` (``(k,)`` is accepted for m = 1).
    """
    if int(m) != m or m < 1:
        raise ConfigurationError(f"codimension must be a positive integer, got {m!r}")
    pts = domain.coordinates().reshape(-1, domain.n)
    vals = np.asarray(evaluator(pts), dtype=float)
    if vals.ndim == 1 and m == 1:
        vals = vals[:, None]
    if vals.shape != (pts.shape[0], m):
        raise DataError(f"evaluator returned shape {vals.shape}, expected {(pts.shape[0], m)}")
    bad = np.flatnonzero(~np.isfinite(vals).all(axis=1))
    if bad.size:
        raise DataError(f"non-finite value at node {bad[0]}", node_index=int(bad[0]))
    return GraphSample(domain=domain, m=int(m), values=vals.reshape(*domain.shape, m))


def _shifted(arr: np.ndarray, domain: GridDomain, offset: Sequence[int]) -> np.ndarray:
    idx = tuple(slice(1 + o, r - 1 + o) for o, r in zip(offset, domain.resolution))
    return arr[idx]


def compute_jet(sample: GraphSample) -> GraphSample:
    """Central-difference first derivatives and Hessians.

    Interior nodes use the standard second-order stencils (compact three-point
    stencil on the diagonal, four-point cross stencil off the diagonal).
    Boundary nodes get second-order one-sided values so that metric
    quantities stay finite there; they never enter interior reductions.
    """
    dom = sample.domain
    n, h = dom.n, dom.spacing
    f = sample.values

    grads = np.gradient(f, *h, axis=tuple(range(n)), edge_order=2)
    if n == 1:
        grads = [grads]
    df = np.stack(grads, axis=-1)  # (*res, m, n)

    # one-sided fill for the boundary ring, overwritten in the interior
    hess = np.empty(f.shape + (n, n))
    for j in range(n):
        gj = np.gradient(df[..., j], *h, axis=tuple(range(n)), edge_order=2)
        if n == 1:
            gj = [gj]
        for i in range(n):
            hess[..., i, j] = gj[i]
    hess = 0.5 * (hess + np.swapaxes(hess, -1, -2))

    inner = dom.interior
    zero = (0,) * n
    center = _shifted(f, dom, zero)
    for i in range(n):
        ei = [0] * n
        ei[i] = 1
        em = [-x for x in ei]
        hess[inner + (Ellipsis, i, i)] = (
            _shifted(f, dom, ei) - 2 * center + _shifted(f, dom, em)
        ) / h[i] ** 2
        for j in range(i + 1, n):
            def off(si: int, sj: int) -> np.ndarray:
                o = [0] * n
                o[i], o[j] = si, sj
                return _shifted(f, dom, o)

            mixed = (off(1, 1) - off(1, -1) - off(-1, 1) + off(-1, -1)) / (4 * h[i] * h[j])
            hess[inner + (Ellipsis, i, j)] = mixed
            hess[inner + (Ellipsis, j, i)] = mixed

    if not (np.isfinite(df).all() and np.isfinite(hess).all()):
        raise DataError("non-finite jet values")
    return replace(sample, df=df, hess=hess)


@dataclass
class MetricField:
    """Induced metric quantities per node (boundary entries are one-sided)."""

    g: np.ndarray
    g_inv: np.ndarray
    sqrt_det: np.ndarray
    star_omega: np.ndarray


def induced_metric(sample: GraphSample, spd_tol: float = 1e-12) -> MetricField:
    """``g = I + df^T df`` with inverse, volume density and ``*Omega``."""
    sample.require_jet()
    df = sample.df
    n = sample.n
    g = np.eye(n) + np.einsum("...ai,...aj->...ij", df, df)
    g = 0.5 * (g + np.swapaxes(g, -1, -2))
    try:
        chol = np.linalg.cholesky(g)
    except np.linalg.LinAlgError as exc:
        raise ConsistencyError("induced metric is not positive definite") from exc
    diag = np.diagonal(chol, axis1=-2, axis2=-1)
    sqrt_det = np.prod(diag, axis=-1)
    if np.any(sqrt_det < 1.0 - spd_tol):
        raise ConsistencyError("det g < 1 detected")
    g_inv = np.linalg.inv(g)
    g_inv = 0.5 * (g_inv + np.swapaxes(g_inv, -1, -2))
    return MetricField(g=g, g_inv=g_inv, sqrt_det=sqrt_det, star_omega=1.0 / sqrt_det)


def tangent_matrix(df: np.ndarray) -> np.ndarray:
    """Columns ``[I; df]`` spanning the tangent space, shape ``(..., n+m, n)``."""
    n = df.shape[-1]
    eye = np.broadcast_to(np.eye(n), df.shape[:-2] + (n, n))
    return np.concatenate([eye, df], axis=-2)


def normal_projector(df: np.ndarray) -> np.ndarray:
    """Orthogonal projector onto the normal space, shape ``(..., n+m, n+m)``."""
    t = tangent_matrix(df)
    n = df.shape[-1]
    g = np.eye(n) + np.einsum("...ai,...aj->...ij", df, df)
    tp = t @ np.linalg.solve(g, np.swapaxes(t, -1, -2))
    k = t.shape[-2]
    p = np.eye(k) - tp
    return 0.5 * (p + np.swapaxes(p, -1, -2))


def normal_basis(df: np.ndarray) -> np.ndarray:
    """Smooth orthonormal normal frame ``[-df^T; I] (I + df df^T)^{-1/2}``.

    Shape ``(..., n+m, m)``. Unlike SVD frames this depends smoothly on ``df``.
    """
    m = df.shape[-2]
    k = np.eye(m) + df @ np.swapaxes(df, -1, -2)
    w, q = np.linalg.eigh(k)
    inv_sqrt = (q / np.sqrt(w)[..., None, :]) @ np.swapaxes(q, -1, -2)
    eye = np.broadcast_to(np.eye(m), df.shape[:-2] + (m, m))
    raw = np.concatenate([-np.swapaxes(df, -1, -2), eye], axis=-2)
    return raw @ inv_sqrt


# ---------------------------------------------------------------------------
# adapted frames


@dataclass
class PointFrame:
    """Singular values and adapted orthonormal frames at one point.

    ``a_tangent[i]`` are the right singular vectors ``a_i`` in R^n,
    ``a_normal[k]`` the left singular vectors ``a_{n+k}`` completed to a basis
    of R^m, and ``e_tangent``/``e_normal`` the induced ambient frames in
    R^{n+m} (rows).
    """

    lam: np.ndarray
    a_tangent: np.ndarray
    a_normal: np.ndarray
    e_tangent: np.ndarray
    e_normal: np.ndarray

    @property
    def basis(self) -> np.ndarray:
        return np.vstack([self.e_tangent, self.e_normal])


def _fix_sign(vec: np.ndarray, tol: float) -> np.ndarray:
    nz = np.flatnonzero(np.abs(vec) > tol)
    if nz.size and vec[nz[0]] < 0:
        return -vec
    return vec


def _canonical_basis(span: np.ndarray, k: int, tol: float = 1e-8) -> np.ndarray:
    """Deterministic orthonormal basis (rows) of the column span of ``span``.

    Standard basis vectors are projected onto the subspace in index order and
    Gram-Schmidt orthonormalized; the first ``k`` that survive are kept.
    """
    dim = span.shape[0]
    if k == 0:
        return np.zeros((0, dim))
    q, _ = np.linalg.qr(span)
    q = q[:, :k]
    out: list[np.ndarray] = []
    for idx in range(dim):
        v = q @ q[idx]  # projection of e_idx onto the subspace
        for u in out:
            v = v - (u @ v) * u
        for u in out:  # second pass for stability
            v = v - (u @ v) * u
        nrm = np.linalg.norm(v)
        if nrm > tol:
            out.append(_fix_sign(v / nrm, 1e-12))
        if len(out) == k:
            break
    return np.array(out)


def _clusters(values: np.ndarray, tol: float) -> list[list[int]]:
    groups: list[list[int]] = []
    for i, v in enumerate(values):
        if groups and abs(values[groups[-1][0]] - v) <= tol:
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


def svd_frames(df: np.ndarray, cluster_tol: float = 1e-10) -> PointFrame:
    """Adapted frames from the singular value decomposition of ``df`` (m x n).

    Singular values are sorted non-increasing and zero-padded to length n.
    Repeated singular values (within ``cluster_tol`` relative) get a
    canonical basis of their right singular subspace; signs are fixed so the
    first nonzero entry of each ``a_i`` is positive.
    """
    df = np.asarray(df, dtype=float)
    m, n = df.shape
    if not np.isfinite(df).all():
        raise DataError("df has non-finite entries")
    k = min(n, m)
    _, s, vt = np.linalg.svd(df, full_matrices=True)
    lam = np.zeros(n)
    lam[:k] = s
    tol = cluster_tol * max(1.0, s[0] if s.size else 0.0)

    # right singular vectors, canonicalized per cluster of equal lambda
    a_t = np.zeros((n, n))
    for group in _clusters(lam, tol):
        sub = vt[group].T
        a_t[group] = _canonical_basis(sub, len(group))

    # left singular vectors from df a_i / lambda_i, completion canonicalized
    a_n = np.zeros((m, m))
    ranked = [i for i in range(k) if lam[i] > tol]
    for i in ranked:
        v = df @ a_t[i] / lam[i]
        a_n[i] = v / np.linalg.norm(v)
    r = len(ranked)
    if r < m:
        if r:
            q, _ = np.linalg.qr(a_n[:r].T, mode="complete")
            comp = q[:, r:]
        else:
            comp = np.eye(m)
        a_n[r:] = _canonical_basis(comp, m - r)

    e_t = np.zeros((n, n + m))
    e_n = np.zeros((m, n + m))
    for i in range(n):
        s_i = np.sqrt(1.0 + lam[i] ** 2)
        e_t[i, :n] = a_t[i] / s_i
        if i < m:
            e_t[i, n:] = lam[i] * a_n[i] / s_i
    for i in range(m):
        if i < n:
            s_i = np.sqrt(1.0 + lam[i] ** 2)
            e_n[i, :n] = -lam[i] * a_t[i] / s_i
            e_n[i, n:] = a_n[i] / s_i
        else:
            e_n[i, n:] = a_n[i]
    return PointFrame(lam=lam, a_tangent=a_t, a_normal=a_n, e_tangent=e_t, e_normal=e_n)


@dataclass
class FrameField:
    """Per-node :class:`PointFrame` data stacked into arrays."""

    lam: np.ndarray  # (*res, n)
    a_tangent: np.ndarray  # (*res, n, n)
    a_normal: np.ndarray  # (*res, m, m)
    e_tangent: np.ndarray  # (*res, n, n+m)
    e_normal: np.ndarray  # (*res, m, n+m)

    def at(self, index: tuple[int, ...]) -> PointFrame:
        return PointFrame(
            lam=self.lam[index],
            a_tangent=self.a_tangent[index],
            a_normal=self.a_normal[index],
            e_tangent=self.e_tangent[index],
            e_normal=self.e_normal[index],
        )


def frame_field(sample: GraphSample) -> FrameField:
    """Evaluate :func:`svd_frames` at every node."""
    sample.require_jet()
    shape = sample.domain.shape
    n, m = sample.n, sample.m
    out = FrameField(
        lam=np.zeros(shape + (n,)),
        a_tangent=np.zeros(shape + (n, n)),
        a_normal=np.zeros(shape + (m, m)),
        e_tangent=np.zeros(shape + (n, n + m)),
        e_normal=np.zeros(shape + (m, n + m)),
    )
    for index in itertools.product(*(range(r) for r in shape)):
        fr = svd_frames(sample.df[index])
        out.lam[index] = fr.lam
        out.a_tangent[index] = fr.a_tangent
        out.a_normal[index] = fr.a_normal
        out.e_tangent[index] = fr.e_tangent
        out.e_normal[index] = fr.e_normal
    return out


@dataclass
class SffField:
    """Second fundamental form per node.

    ``ambient[..., i, j, :]`` is the normal part of ``(0, d_i d_j f)`` in
    coordinate directions; ``h[..., a, i, j]`` the same form against the
    orthonormal SVD frames; ``mean_curvature[..., a] = sum_i h[..., a, i, i]``.
    """

    ambient: np.ndarray
    h: np.ndarray
    mean_curvature: np.ndarray


def second_fundamental_form(
    sample: GraphSample,
    metric: MetricField | None = None,
    frames: FrameField | None = None,
) -> SffField:
    sample.require_jet()
    if frames is None:
        frames = frame_field(sample)
    n, m = sample.n, sample.m
    proj = normal_projector(sample.df)
    vert = np.zeros(sample.hess.shape[:-3] + (n, n, n + m))
    vert[..., n:] = np.moveaxis(sample.hess, -3, -1)  # (..., n, n, m)
    ambient = np.einsum("...pq,...ijq->...ijp", proj, vert)

    # orthonormal tangent directions e_i = [I; df] u_i with u_i = a_i / sqrt(1 + lambda_i^2)
    u = frames.a_tangent / np.sqrt(1.0 + frames.lam**2)[..., None]
    hess_normal = np.einsum("...ap,...pkl->...akl", frames.e_normal[..., n:], sample.hess)
    h = np.einsum("...ik,...akl,...jl->...aij", u, hess_normal, u)
    h = 0.5 * (h + np.swapaxes(h, -1, -2))
    mean = np.trace(h, axis1=-2, axis2=-1)
    return SffField(ambient=ambient, h=h, mean_curvature=mean)


def mean_curvature_vector(sample: GraphSample, metric: MetricField | None = None) -> np.ndarray:
    """Ambient mean curvature ``P_N (0, g^{ij} d_i d_j f)``, frame free.

    Shape ``(*res, n+m)``. Its Euclidean norm equals the norm of the vector
    ``(sum_i h_{a i i})_a`` for any orthonormal normal frame.
    """
    sample.require_jet()
    if metric is None:
        metric = induced_metric(sample)
    n = sample.n
    lap = np.einsum("...ij,...aij->...a", metric.g_inv, sample.hess)
    amb = np.concatenate([np.zeros(lap.shape[:-1] + (n,)), lap], axis=-1)
    return np.einsum("...pq,...q->...p", normal_projector(sample.df), amb)


def df_norm(sample: GraphSample) -> float:
    """Largest singular value of ``df`` over interior nodes."""
    sample.require_jet()
    inner = sample.df[sample.domain.interior]
    return float(np.max(np.linalg.norm(inner, ord=2, axis=(-2, -1))))
