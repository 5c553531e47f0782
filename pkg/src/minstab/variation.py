"""Second variation of volume for graphs on a grid.

Normal fields live in ambient coordinates ``V(x) in R^{n+m}``. Derivatives of
``V`` are cell-edge differences evaluated at cell corners, and integrals use
the product trapezoid rule cell by cell, which is the Q1 element with nodal
quadrature. For a flat graph the gradient energy becomes the standard
compact (2n+1)-point Laplacian; central differences would admit a
checkerboard null mode under the compact-support constraint.

The same corner quadrature feeds the quadratic form, the volume functional
``Vol(s)`` of the straight-line variation ``F + s V`` and the pulled-back
form ``int F_s^* Omega``, so the three can be compared directly.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigsh

from .errors import DegenerateInputError, NonMinimalWarning, StateError
from .grid import (
    GraphSample,
    MetricField,
    induced_metric,
    normal_basis,
    normal_projector,
    tangent_matrix,
)

log = logging.getLogger(__name__)

STABLE = "stable_numerically"
UNSTABLE = "unstable_numerically"
INCONCLUSIVE = "inconclusive"


@dataclass
class NormalField:
    """Ambient normal field ``V`` of shape ``(*res, n+m)`` with its support."""

    V: np.ndarray
    support: np.ndarray

    def sup_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.V, axis=-1)))

    def scaled(self, t: float) -> NormalField:
        return NormalField(V=t * self.V, support=self.support)


def _corners(n: int) -> list[tuple[int, ...]]:
    return list(itertools.product((0, 1), repeat=n))


def _corner_slice(shape: tuple[int, ...], corner: tuple[int, ...]) -> tuple[slice, ...]:
    return tuple(slice(c, r - 1 + c) for c, r in zip(corner, shape))


def _edge_differences(V: np.ndarray, sample: GraphSample, corner: tuple[int, ...]) -> np.ndarray:
    """Edge differences ``D_i V`` at ``corner`` of every cell, shape ``(*cells, n, k)``."""
    dom = sample.domain
    out = []
    for i in range(dom.n):
        hi = list(corner)
        lo = list(corner)
        hi[i], lo[i] = 1, 0
        d = (V[_corner_slice(dom.shape, tuple(hi))] - V[_corner_slice(dom.shape, tuple(lo))]) / dom.spacing[i]
        out.append(d)
    return np.stack(out, axis=-2)


def _require(sample: GraphSample, metric: MetricField | None) -> MetricField:
    if not sample.has_jet:
        raise StateError("second variation needs the jet; call compute_jet first")
    return induced_metric(sample) if metric is None else metric


def project_normal(ambient: np.ndarray, sample: GraphSample) -> NormalField:
    """Pointwise orthogonal projection onto the normal space; boundary ring zeroed."""
    if not sample.has_jet:
        raise StateError("projection needs the jet; call compute_jet first")
    support = sample.domain.interior_mask()
    V = np.einsum("...pq,...q->...p", normal_projector(sample.df), ambient)
    V = np.where(support[..., None], V, 0.0)
    return NormalField(V=V, support=support)


def _hess_pairing(V: np.ndarray, sample: GraphSample) -> np.ndarray:
    """``S_ij = <(0, d_i d_j f), V>`` per node."""
    return np.einsum("...aij,...a->...ij", sample.hess, V[..., sample.n :])


def b_form(V: NormalField | np.ndarray, sample: GraphSample, metric: MetricField | None = None,
           W: NormalField | np.ndarray | None = None) -> np.ndarray:
    """``B(V, W) = g^{ik} g^{jl} <F_ij, V> <F_kl, W>`` per node (W defaults to V)."""
    metric = _require(sample, metric)
    V = V.V if isinstance(V, NormalField) else V
    W = V if W is None else (W.V if isinstance(W, NormalField) else W)
    sv = metric.g_inv @ _hess_pairing(V, sample)
    sw = metric.g_inv @ _hess_pairing(W, sample)
    return np.einsum("...ij,...ji->...", sv, sw)


def _corner_energy(V, W, sample, metric, proj, corner):
    """``g^{ij} <(D_i V)^N, (D_j W)^N>`` at a given corner of every cell."""
    sl = _corner_slice(sample.domain.shape, corner)
    p = proj[sl]
    dv = np.einsum("...pq,...iq->...ip", p, _edge_differences(V, sample, corner))
    dw = dv if W is V else np.einsum("...pq,...iq->...ip", p, _edge_differences(W, sample, corner))
    return np.einsum("...ij,...ip,...jp->...", metric.g_inv[sl], dv, dw)


def grad_normal_energy(V: NormalField | np.ndarray, sample: GraphSample,
                       metric: MetricField | None = None) -> np.ndarray:
    """``|nabla^N V|^2`` per node, averaged over the cells sharing the node."""
    metric = _require(sample, metric)
    V = V.V if isinstance(V, NormalField) else V
    proj = normal_projector(sample.df)
    shape = sample.domain.shape
    acc = np.zeros(shape)
    cnt = np.zeros(shape)
    for corner in _corners(sample.n):
        sl = _corner_slice(shape, corner)
        acc[sl] += _corner_energy(V, V, sample, metric, proj, corner)
        cnt[sl] += 1
    return acc / cnt


def bilinear_form(V, W, sample: GraphSample, metric: MetricField | None = None) -> float:
    """Discrete ``Q(V, W) = int <nabla^N V, nabla^N W> - B(V, W) dv``."""
    metric = _require(sample, metric)
    V = V.V if isinstance(V, NormalField) else V
    W = W.V if isinstance(W, NormalField) else W
    return _gradient_integral(V, W, sample, metric) - _node_integral(b_form(V, sample, metric, W), sample, metric)


def _gradient_integral(V, W, sample, metric) -> float:
    proj = normal_projector(sample.df)
    shape = sample.domain.shape
    weight = sample.domain.cell_volume / 2**sample.n
    total = 0.0
    for corner in _corners(sample.n):
        sl = _corner_slice(shape, corner)
        e = _corner_energy(V, W, sample, metric, proj, corner)
        total += weight * float(np.sum(metric.sqrt_det[sl] * e))
    return total


def _node_integral(values: np.ndarray, sample: GraphSample, metric: MetricField) -> float:
    return float(np.sum(sample.domain.trapezoid_weights() * metric.sqrt_det * values))


@dataclass
class QuadraticFormReport:
    gradient_energy: float
    b_energy: float
    q_value: float
    l2_norm: float
    rayleigh: float
    min_eig_estimate: float | None = None
    residual: float | None = None
    verdict: str | None = None
    tol_eig: float | None = None
    diagnostics: dict = field(default_factory=dict)
    eigenfield: NormalField | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k != "eigenfield"}
        out["diagnostics"] = dict(self.diagnostics)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def quadratic_form(V: NormalField | np.ndarray, sample: GraphSample,
                   metric: MetricField | None = None) -> QuadraticFormReport:
    """Integrals of ``|nabla^N V|^2``, ``B(V, V)`` and ``|V|^2`` against ``dv``.

    Raises :class:`DegenerateInputError` (with the zero report attached) when
    ``V`` vanishes identically.
    """
    metric = _require(sample, metric)
    Va = V.V if isinstance(V, NormalField) else V
    grad = _gradient_integral(Va, Va, sample, metric)
    b = _node_integral(b_form(Va, sample, metric), sample, metric)
    l2 = _node_integral(np.sum(Va**2, axis=-1), sample, metric)
    q = grad - b
    if l2 == 0.0:
        report = QuadraticFormReport(grad, b, q, l2, float("nan"))
        raise DegenerateInputError("zero field: Rayleigh quotient undefined", report)
    return QuadraticFormReport(gradient_energy=grad, b_energy=b, q_value=q, l2_norm=l2, rayleigh=q / l2)


# ---------------------------------------------------------------------------
# finite-difference oracles along straight-line variations


@dataclass
class VariationPath:
    """Straight-line variation ``F_s = F + s V`` of the graph immersion."""

    base: GraphSample
    field: NormalField
    s0: float | None = None

    def step(self) -> float:
        if self.s0 is not None:
            return self.s0
        sup = self.field.sup_norm()
        return 1e-3 / sup if sup > 0 else 1e-3

    @property
    def s_values(self) -> tuple[float, float, float]:
        s = self.step()
        return (-s, 0.0, s)


def _corner_integral(sample: GraphSample, integrand) -> float:
    weight = sample.domain.cell_volume / 2**sample.n
    total = 0.0
    for corner in _corners(sample.n):
        total += weight * float(np.sum(integrand(corner)))
    return total


def volume(path: VariationPath, s: float) -> float:
    """``Vol(s) = int sqrt(det g(s)) dX`` with ``g(s)`` from ``d_i F + s D_i V``."""
    sample = path.base
    sample.require_jet()
    tangent = tangent_matrix(sample.df)  # (..., n+m, n)
    V = path.field.V

    def integrand(corner):
        sl = _corner_slice(sample.domain.shape, corner)
        cols = tangent[sl] + s * np.swapaxes(_edge_differences(V, sample, corner), -1, -2)
        g = np.swapaxes(cols, -1, -2) @ cols
        return np.sqrt(np.linalg.det(g))

    return _corner_integral(sample, integrand)


def pullback_integral(path: VariationPath, s: float) -> float:
    """``int F_s^* Omega = int det(I + s D V_h) dX`` for ``Omega = dx^1 ^ ... ^ dx^n``."""
    sample = path.base
    n = sample.n
    V = path.field.V

    def integrand(corner):
        d = _edge_differences(V, sample, corner)[..., :n]  # d[..., i, k] = D_i V_k
        return np.linalg.det(np.eye(n) + s * np.swapaxes(d, -1, -2))

    return _corner_integral(sample, integrand)


def _second_difference(fun, s: float) -> float:
    return (fun(s) - 2.0 * fun(0.0) + fun(-s)) / s**2


def volume_second_derivative(path: VariationPath, minimality_tol: float | None = None,
                             return_details: bool = False):
    """Central second difference ``(Vol(s0) - 2 Vol(0) + Vol(-s0)) / s0^2``.

    A :class:`NonMinimalWarning` is emitted when the first difference of the
    volume exceeds ``minimality_tol * ||V||_{L2} * sqrt(Vol(0))``
    (default tolerance ``10 h_max^2``). With ``return_details`` a dict with
    the Richardson companion at ``s0 / 2`` and the first derivative is
    returned as well.
    """
    s0 = path.step()
    vol = lambda s: volume(path, s)  # noqa: E731
    v_plus, v0, v_minus = vol(s0), vol(0.0), vol(-s0)
    d2 = (v_plus - 2.0 * v0 + v_minus) / s0**2
    d1 = (v_plus - v_minus) / (2.0 * s0)
    sample = path.base
    metric = induced_metric(sample)
    l2 = math.sqrt(max(_node_integral(np.sum(path.field.V**2, axis=-1), sample, metric), 0.0))
    if minimality_tol is None:
        minimality_tol = 10.0 * float(np.max(sample.domain.spacing)) ** 2
    if abs(d1) > minimality_tol * l2 * math.sqrt(v0):
        warnings.warn(
            f"first variation {d1:.3e} is large; base graph is not minimal to tolerance",
            NonMinimalWarning,
            stacklevel=2,
        )
    if not return_details:
        return d2
    d2_half = _second_difference(vol, s0 / 2)
    return d2, {"s0": s0, "first_derivative": d1, "half_step": d2_half,
                "richardson_gap": abs(d2 - d2_half)}


def pullback_constancy(path: VariationPath) -> float:
    """Central second difference of ``int F_s^* Omega``; vanishes for compact support."""
    return _second_difference(lambda s: pullback_integral(path, s), path.step())


# ---------------------------------------------------------------------------
# assembled operator and smallest eigenvalue


@dataclass
class EigenConfig:
    tol_eig: float | None = None
    tol_eig_factor: float = 10.0
    arpack_tol: float = 1e-12
    maxiter: int = 20_000
    residual_tol: float = 1e-6
    k: int = 1
    seed: int = 0  # start vector for the Lanczos iteration


@dataclass
class AssembledForm:
    """Sparse stiffness/mass in reduced normal coordinates ``V = N(p) w(p)``."""

    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    basis: np.ndarray  # (*res, n+m, m) smooth normal frame
    interior_index: np.ndarray  # flat node ids of unknown nodes

    def to_field(self, x: np.ndarray, sample: GraphSample) -> NormalField:
        m = sample.m
        shape = sample.domain.shape
        w = np.zeros((sample.domain.num_nodes, m))
        w[self.interior_index] = x.reshape(-1, m)
        w = w.reshape(shape + (m,))
        V = np.einsum("...pb,...b->...p", self.basis, w)
        return NormalField(V=V, support=sample.domain.interior_mask())

    def from_field(self, field: NormalField, sample: GraphSample) -> np.ndarray:
        w = np.einsum("...pb,...p->...b", self.basis, field.V)
        return w.reshape(-1, sample.m)[self.interior_index].ravel()


def assemble(sample: GraphSample, metric: MetricField | None = None) -> AssembledForm:
    """Assemble ``Q`` and the ``L^2(dv)`` mass on compactly supported normal fields."""
    metric = _require(sample, metric)
    dom = sample.domain
    n, m = sample.n, sample.m
    k = n + m
    shape = dom.shape
    num = dom.num_nodes
    node_id = np.arange(num).reshape(shape)
    inner_ids = node_id[dom.interior].ravel()
    unknown_of = -np.ones(num, dtype=int)
    unknown_of[inner_ids] = np.arange(inner_ids.size)

    basis = normal_basis(sample.df)
    # E: reduced unknowns -> ambient nodal values (zero on the boundary ring)
    rows = (inner_ids[:, None, None] * k + np.arange(k)[None, :, None]).repeat(m, axis=2)
    cols = (unknown_of[inner_ids][:, None, None] * m + np.arange(m)[None, None, :]).repeat(k, axis=1)
    vals = basis.reshape(num, k, m)[inner_ids]
    E = sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(num * k, inner_ids.size * m))

    proj = normal_projector(sample.df).reshape(num, k, k)
    weight = dom.cell_volume / 2**n
    eye_k = sp.identity(k, format="csr")
    stiff = sp.csr_matrix((inner_ids.size * m, inner_ids.size * m))
    for corner in _corners(n):
        corner_nodes = node_id[_corner_slice(shape, corner)].ravel()
        ncell = corner_nodes.size
        pblock = sp.block_diag(list(proj[corner_nodes]), format="csr")
        ops = []
        for i in range(n):
            hi, lo = list(corner), list(corner)
            hi[i], lo[i] = 1, 0
            hi_nodes = node_id[_corner_slice(shape, tuple(hi))].ravel()
            lo_nodes = node_id[_corner_slice(shape, tuple(lo))].ravel()
            sel = sp.csr_matrix(
                (np.r_[np.ones(ncell), -np.ones(ncell)] / dom.spacing[i],
                 (np.r_[np.arange(ncell), np.arange(ncell)], np.r_[hi_nodes, lo_nodes])),
                shape=(ncell, num),
            )
            ops.append(pblock @ sp.kron(sel, eye_k, format="csr") @ E)
        gi = metric.g_inv.reshape(num, n, n)[corner_nodes]
        rho = metric.sqrt_det.ravel()[corner_nodes]
        for i in range(n):
            for j in range(n):
                w = sp.diags(np.repeat(weight * rho * gi[:, i, j], k))
                stiff = stiff + ops[i].T @ w @ ops[j]

    # curvature term, block diagonal in the unknowns
    nw = (dom.trapezoid_weights() * metric.sqrt_det).ravel()[inner_ids]
    hess = sample.hess.reshape(num, m, n, n)[inner_ids]
    nv = basis.reshape(num, k, m)[inner_ids][:, n:, :]
    kb = np.einsum("paij,pab->pbij", hess, nv)
    gi = metric.g_inv.reshape(num, n, n)[inner_ids]
    left = gi[:, None] @ kb
    blocks = np.einsum("pbij,pcji->pbc", left, left) * nw[:, None, None]
    bmat = sp.block_diag(list(blocks), format="csr")
    stiff = (stiff - bmat).tocsr()
    stiff = 0.5 * (stiff + stiff.T)
    mass = sp.diags(np.repeat(nw, m)).tocsr()
    return AssembledForm(stiffness=stiff.tocsr(), mass=mass, basis=basis, interior_index=inner_ids)


def _gershgorin_lower(K: sp.csr_matrix, M: sp.csr_matrix) -> float:
    diag = K.diagonal()
    off = np.asarray(abs(K).sum(axis=1)).ravel() - np.abs(diag)
    return float(np.min((diag - off) / M.diagonal()))


def default_tol_eig(sample: GraphSample, factor: float = 10.0) -> float:
    return factor * float(np.max(sample.domain.spacing)) ** 2


def min_rayleigh(sample: GraphSample, config: EigenConfig | None = None,
                 metric: MetricField | None = None) -> QuadraticFormReport:
    """Smallest generalized eigenvalue of ``Q w = mu M w`` by shift-invert Lanczos.

    The shift is a Gershgorin lower bound of ``M^{-1} K`` so the eigenvalue
    closest to the shift is the smallest one.
    """
    config = config or EigenConfig()
    metric = _require(sample, metric)
    tol_eig = config.tol_eig if config.tol_eig is not None else default_tol_eig(sample, config.tol_eig_factor)
    form = assemble(sample, metric)
    K, M = form.stiffness, form.mass
    sigma = _gershgorin_lower(K, M) - 1.0
    diagnostics = {"shift": sigma, "unknowns": K.shape[0]}
    v0 = np.random.default_rng(config.seed).uniform(0.5, 1.5, size=K.shape[0])
    try:
        vals, vecs = eigsh(K.tocsc(), k=config.k, M=M.tocsc(), sigma=sigma, which="LM",
                           v0=v0, tol=config.arpack_tol, maxiter=config.maxiter)
    except (ArpackNoConvergence, ArpackError) as exc:
        log.warning("eigen iteration did not converge: %s", exc)
        diagnostics["error"] = str(exc)
        return QuadraticFormReport(
            gradient_energy=float("nan"), b_energy=float("nan"), q_value=float("nan"),
            l2_norm=float("nan"), rayleigh=float("nan"), min_eig_estimate=float("nan"),
            residual=float("inf"), verdict=INCONCLUSIVE, tol_eig=tol_eig, diagnostics=diagnostics,
        )
    order = np.argsort(vals)
    mu = float(vals[order[0]])
    x = vecs[:, order[0]]
    x = x / math.sqrt(x @ (M @ x))
    r = K @ x - mu * (M @ x)
    residual = float(np.linalg.norm(r) / max(np.linalg.norm(M @ x) * max(abs(mu), 1.0), 1e-300))
    diagnostics["eigenvalues"] = [float(v) for v in np.sort(vals)]

    field_ = form.to_field(x, sample)
    report = quadratic_form(field_, sample, metric)
    if residual > config.residual_tol:
        verdict = INCONCLUSIVE
    elif mu >= -tol_eig:
        verdict = STABLE
    else:
        verdict = UNSTABLE
    report.min_eig_estimate = mu
    report.residual = residual
    report.verdict = verdict
    report.tol_eig = tol_eig
    report.diagnostics = diagnostics
    report.eigenfield = field_
    return report


def random_normal_field(sample: GraphSample, rng: np.random.Generator, modes: int = 3,
                        amplitude: float = 1.0) -> NormalField:
    """Smooth compactly supported normal field from a random sine series."""
    dom = sample.domain
    x = dom.coordinates()
    k = sample.n + sample.m
    lo = np.array([b[0] for b in dom.bounds])
    width = np.array([b[1] - b[0] for b in dom.bounds])
    u = (x - lo) / width
    amb = np.zeros(dom.shape + (k,))
    for freq in itertools.product(range(1, modes + 1), repeat=dom.n):
        phi = np.prod(np.sin(np.pi * np.array(freq) * u), axis=-1)
        coef = rng.normal(size=k) / float(np.sum(np.square(freq)))
        amb += phi[..., None] * coef
    return project_normal(amplitude * amb, sample)
