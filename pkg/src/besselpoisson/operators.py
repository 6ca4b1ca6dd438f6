"""Two-weight operator data: kernel matrices, testing constants, norms.

An instance couples a 1D source measure sigma with a 2D target measure mu.
The forward map sends f on the sigma atoms to

    (P f)(x_j, t_j) = sum_i P_{t_j}(x_j, y_i) f(y_i) sigma_i,

and the adjoint integrates against mu.  Everything reduces to one kernel
matrix K[j, i] = P_{t_j}(x_j, y_i), cached per instance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .geometry import (
    CarlesonBox,
    DiscreteMeasure1D,
    DiscreteMeasure2D,
    Interval,
    dilate,
    hat,
    mass_1d,
)
from .kernel import BesselParam, _eval_arrays

__all__ = [
    "TwoWeightInstance",
    "NormResult",
    "TestingResult",
    "apply_forward",
    "apply_adjoint",
    "forward_testing",
    "backward_testing",
    "operator_norm",
    "interval_family",
    "run_testing",
]


@dataclass
class TwoWeightInstance:
    """A (sigma, mu) pair with its kernel parameter; treat as immutable."""

    param: BesselParam
    sigma: DiscreteMeasure1D
    mu: DiscreteMeasure2D
    _kmat: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.sigma.n == 0 or self.mu.n == 0:
            raise ValueError("both measures must carry at least one atom")

    def kernel_matrix(self) -> np.ndarray:
        """K[j, i] = P_{t_j}(x_j, y_i), evaluated once and cached."""
        if self._kmat is None:
            nj, ni = self.mu.n, self.sigma.n
            xs = np.repeat(self.mu.xs, ni)
            ts = np.repeat(self.mu.ts, ni)
            ys = np.tile(self.sigma.ys, nj)
            vals = _eval_arrays(self.param.lam, xs, ys, ts,
                                self.param.quad_rel_tol, self.param.quad_max_depth)
            self._kmat = vals.reshape(nj, ni)
        return self._kmat

    def engulfing_level(self) -> int:
        """Smallest k with every atom coordinate strictly below 2^k."""
        top = 0
        hi = max(self.sigma.ys.max(), self.mu.xs.max(), self.mu.ts.max())
        while math.ldexp(1.0, top) <= hi:
            top += 1
        return top


def apply_forward(inst: TwoWeightInstance, f: Sequence[float],
                  targets: Optional[Sequence[Tuple[float, float]]] = None) -> np.ndarray:
    """Forward map at the given (x, t) targets; defaults to the mu atoms."""
    f = np.asarray(f, dtype=float)
    if f.shape != inst.sigma.ys.shape:
        raise ValueError("f must assign one value per sigma atom")
    if targets is None:
        k = inst.kernel_matrix()
    else:
        pts = np.asarray(targets, dtype=float).reshape(-1, 2)
        ni = inst.sigma.n
        xs = np.repeat(pts[:, 0], ni)
        ts = np.repeat(pts[:, 1], ni)
        ys = np.tile(inst.sigma.ys, pts.shape[0])
        k = _eval_arrays(inst.param.lam, xs, ys, ts,
                         inst.param.quad_rel_tol, inst.param.quad_max_depth
                         ).reshape(pts.shape[0], ni)
    return k @ (f * inst.sigma.ws)


def apply_adjoint(inst: TwoWeightInstance, g: Sequence[float],
                  targets: Optional[Sequence[float]] = None) -> np.ndarray:
    """Adjoint map at the given y targets; defaults to the sigma atoms."""
    g = np.asarray(g, dtype=float)
    if g.shape != inst.mu.xs.shape:
        raise ValueError("g must assign one value per mu atom")
    if targets is None:
        k = inst.kernel_matrix()
    else:
        ys_t = np.asarray(targets, dtype=float)
        nj = inst.mu.n
        xs = np.repeat(inst.mu.xs, ys_t.size)
        ts = np.repeat(inst.mu.ts, ys_t.size)
        ys = np.tile(ys_t, nj)
        k = _eval_arrays(inst.param.lam, xs, ys, ts,
                         inst.param.quad_rel_tol, inst.param.quad_max_depth
                         ).reshape(nj, ys_t.size)
    return k.T @ (g * inst.mu.ws)


class NormResult(NamedTuple):
    value: float
    iterations: int
    converged: bool


def operator_norm(inst: TwoWeightInstance, tol: float = 1e-10,
                  max_iters: int = 10000) -> NormResult:
    """Operator norm of the weighted kernel matrix by power iteration.

    Works on the smaller Gram matrix.  The matrix is entrywise positive, so
    the two-sided eigenvalue bracket min/max of (G v)_i / v_i certifies the
    Rayleigh quotient; iteration stops once both the Rayleigh increment and
    the bracket spread are small.
    """
    k = inst.kernel_matrix()
    a = np.sqrt(inst.mu.ws)[:, None] * k * np.sqrt(inst.sigma.ws)[None, :]
    g = a.T @ a if inst.sigma.n <= inst.mu.n else a @ a.T

    v = np.full(g.shape[0], 1.0 / math.sqrt(g.shape[0]))
    ray_prev = 0.0
    for it in range(1, max_iters + 1):
        u = g @ v
        ray = float(v @ u)
        ratios = u / v
        spread = float(ratios.max() - ratios.min())
        if it > 1 and abs(ray - ray_prev) <= tol * ray and spread <= 100.0 * tol * ray:
            return NormResult(math.sqrt(ray), it, True)
        ray_prev = ray
        v = u / np.linalg.norm(u)
    return NormResult(math.sqrt(ray_prev), max_iters, False)


def _hat3(iv: Interval) -> CarlesonBox:
    return hat(dilate(iv, 3.0))


def _mu_tilde_mass(inst: TwoWeightInstance, box: CarlesonBox) -> float:
    mask = ((inst.mu.xs > box.base.a) & (inst.mu.xs < box.base.b)
            & (inst.mu.ts <= box.height))
    return float((inst.mu.ws[mask] * inst.mu.ts[mask] ** 2).sum())


class TestingResult(NamedTuple):
    norm: float
    forward: float
    backward: float
    ratio: float
    iterations: int
    converged: bool
    forward_witness: Optional[Tuple[float, float]]
    backward_witness: Optional[Tuple[float, float]]


def forward_testing(inst: TwoWeightInstance,
                    family: Sequence[Interval]) -> Tuple[float, Optional[Tuple[float, float]]]:
    """Largest normalized forward test over the family.

    For each interval I with positive sigma mass, the indicator of I is sent
    forward and its square integral over mu restricted to the box of 3I is
    divided by sigma(I); the result is the square root of the maximum.
    """
    k = inst.kernel_matrix()
    best = 0.0
    witness = None
    for iv in family:
        s_mask = (inst.sigma.ys > iv.a) & (inst.sigma.ys < iv.b)
        s_mass = float(inst.sigma.ws[s_mask].sum())
        if s_mass == 0.0:
            continue
        box = _hat3(iv)
        m_mask = ((inst.mu.xs > box.base.a) & (inst.mu.xs < box.base.b)
                  & (inst.mu.ts <= box.height))
        if not np.any(m_mask):
            continue
        vals = k[np.ix_(m_mask, s_mask)] @ inst.sigma.ws[s_mask]
        energy = float((inst.mu.ws[m_mask] * vals ** 2).sum()) / s_mass
        if energy > best:
            best = energy
            witness = iv.as_tuple()
    return math.sqrt(best), witness


def backward_testing(inst: TwoWeightInstance,
                     family: Sequence[Interval]) -> Tuple[float, Optional[Tuple[float, float]]]:
    """Largest normalized backward test over the family.

    For each interval I whose box carries positive tilde mass, t times the
    indicator of the box is pulled back and its square integral over sigma
    restricted to 3I is divided by that tilde mass.
    """
    k = inst.kernel_matrix()
    best = 0.0
    witness = None
    for iv in family:
        box = hat(iv)
        m_mask = ((inst.mu.xs > box.base.a) & (inst.mu.xs < box.base.b)
                  & (inst.mu.ts <= box.height))
        t_mass = float((inst.mu.ws[m_mask] * inst.mu.ts[m_mask] ** 2).sum())
        if t_mass == 0.0:
            continue
        big = dilate(iv, 3.0)
        s_mask = (inst.sigma.ys > big.a) & (inst.sigma.ys < big.b)
        if not np.any(s_mask):
            continue
        vals = k[np.ix_(m_mask, s_mask)].T @ (inst.mu.ts[m_mask] * inst.mu.ws[m_mask])
        energy = float((inst.sigma.ws[s_mask] * vals ** 2).sum()) / t_mass
        if energy > best:
            best = energy
            witness = iv.as_tuple()
    return math.sqrt(best), witness


def interval_family(inst: TwoWeightInstance, shift_thirds: bool = False) -> List[Interval]:
    """Test intervals from three shifted dyadic grids around the atoms.

    Levels run from the finest pairwise gap of the projected atom positions
    up to an interval engulfing every position and height.  At each level the
    cells of the standard grid and of its two one-third translates whose
    closure meets a position are kept; any interval then sits inside a family
    member of comparable length, so the sup is not a grid artifact.  With
    shift_thirds each member additionally contributes copies translated by a
    third of its length both ways (these mostly land back in the family,
    which is what the stability check relies on).
    """
    positions = np.unique(np.concatenate([inst.sigma.ys, inst.mu.xs]))
    if positions.size >= 2:
        gap = float(np.diff(positions).min())
    else:
        gap = float(positions[0])
    mant, exp = math.frexp(gap)
    k_min = exp - 1
    k_max = inst.engulfing_level()
    if k_max - k_min > 48:
        k_min = k_max - 48

    out: Dict[Tuple[float, float], Interval] = {}

    def add(a: float, b: float):
        if b > 0.0:
            iv = Interval(max(a, 0.0), b)
            out.setdefault(iv.as_tuple(), iv)

    for k in range(k_min, k_max + 1):
        length = math.ldexp(1.0, k)
        for offset in (0.0, -length / 3.0, length / 3.0):
            for p in positions:
                j = math.floor((float(p) - offset) / length)
                a = offset + j * length
                add(a, a + length)
                if a == p and j > 0:
                    add(a - length, a)

    if shift_thirds:
        for iv in list(out.values()):
            d = iv.length / 3.0
            add(iv.a - d, iv.b - d)
            add(iv.a + d, iv.b + d)
    return sorted(out.values(), key=lambda iv: (iv.length, iv.a))


def run_testing(inst: TwoWeightInstance, family: Optional[Sequence[Interval]] = None,
                tol: float = 1e-10, max_iters: int = 10000) -> TestingResult:
    """Operator norm plus both testing constants over one interval family."""
    if family is None:
        family = interval_family(inst, shift_thirds=True)
    norm = operator_norm(inst, tol=tol, max_iters=max_iters)
    fwd, fwit = forward_testing(inst, family)
    bwd, bwit = backward_testing(inst, family)
    denom = fwd + bwd
    ratio = norm.value / denom if denom > 0.0 else math.inf
    return TestingResult(norm.value, fwd, bwd, ratio, norm.iterations,
                         norm.converged, fwit, bwit)
