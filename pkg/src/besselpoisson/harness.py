"""Experiment harness: random instances, proof-step checks, and reports.

The suite generates (sigma, mu, phi) triples, computes the operator norm and
both testing constants, and then verifies each quantitative ingredient of
the testing-condition argument numerically: the maximum principle on Whitney
members of level sets, pointwise kernel comparability, Whitney structure,
the weak (1,1) maximal bound, Carleson packing of the stopping family, and
the level-set energy decomposition with its counting facts.
"""

from __future__ import annotations

import csv
import datetime
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import (
    DiscreteMeasure1D,
    DiscreteMeasure2D,
    Interval,
    dilate,
    hat,
    mass_1d,
    tilde,
)
from .kernel import BesselParam, _eval_arrays
from .dyadic import (
    DyadicInterval,
    OpenSet,
    StoppingFamily,
    WhitneyCollection,
    _box_average,
    carleson_ratio,
    check_nesting,
    maximal_function,
    principal_intervals,
    weak_11_check,
    whitney_decompose,
    whitney_properties,
)
from .operators import (
    TwoWeightInstance,
    backward_testing,
    forward_testing,
    interval_family,
    operator_norm,
)

__all__ = [
    "ExperimentConfig",
    "GeneratedInstance",
    "GridTooCoarseError",
    "TestReport",
    "mp_constant",
    "default_level_shift",
    "gen_instance",
    "check_max_principle",
    "sample_kernel_comparability",
    "check_box_comparability",
    "decompose_energy",
    "run_equivalence_suite",
]

_MP_BASES = {"quintuple": 19.0, "triple": 33.0}


class GridTooCoarseError(ValueError):
    """A required level set is unresolved at the configured grid resolution."""


def mp_constant(lam: float, mode: str = "triple") -> float:
    """Maximum-principle constant for the chosen Whitney flavor."""
    try:
        base = _MP_BASES[mode]
    except KeyError:
        raise ValueError(f"unknown member_test {mode!r}")
    return base ** (lam + 1.0)


def default_level_shift(lam: float, mode: str = "triple") -> int:
    """Smallest comfortable m with 2^m > C_MP + 1 (one extra level of headroom)."""
    c = mp_constant(lam, mode)
    return int(math.ceil(math.log2(c + 1.0))) + 1


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    n_sigma: int = 12
    n_mu: int = 12
    lambda_set: Tuple[float, ...] = (0.5, 1.0, 2.0)
    delta: float = 0.25
    m: Optional[int] = None
    member_test: str = "triple"
    instance_count: int = 34
    position_window: Tuple[float, float] = (0.5, 8.0)
    height_window: Tuple[float, float] = (0.125, 4.0)
    weight_window: Tuple[float, float] = (0.1, 10.0)
    grid_level: int = -4
    norm_tol: float = 1e-10
    norm_max_iters: int = 10000
    run_decompose: bool = True
    comparability_samples: int = 40
    necessity_slack: float = 1e-8
    whitney_overlap_bound: int = 12
    carleson_bound: float = 8.0
    lacey_bound: int = 8

    def __post_init__(self):
        if not (0.0 < self.delta < 1.0):
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.n_sigma < 1 or self.n_mu < 1 or self.instance_count < 1:
            raise ValueError("atom and instance counts must be positive")
        if not self.lambda_set or any(l <= 0 for l in self.lambda_set):
            raise ValueError("lambda_set must be nonempty with positive entries")
        if self.member_test not in _MP_BASES:
            raise ValueError(f"unknown member_test {self.member_test!r}")
        if self.m is not None:
            for lam in self.lambda_set:
                c = mp_constant(lam, self.member_test)
                if not 2.0 ** self.m > c + 1.0:
                    raise ValueError(
                        f"m={self.m} too small: need 2^m > {c + 1.0:.6g} for lam={lam}"
                    )

    def level_shift(self, lam: float) -> int:
        return self.m if self.m is not None else default_level_shift(lam, self.member_test)


@dataclass
class GeneratedInstance:
    index: int
    sigma: DiscreteMeasure1D
    mu: DiscreteMeasure2D
    phi: np.ndarray

    def instance(self, lam: float, **quad) -> TwoWeightInstance:
        return TwoWeightInstance(BesselParam(lam, **quad), self.sigma, self.mu)


def _log_uniform(rng, lo: float, hi: float, n: int) -> np.ndarray:
    return np.exp(rng.uniform(math.log(lo), math.log(hi), size=n))


def gen_instance(cfg: ExperimentConfig, index: int) -> GeneratedInstance:
    """Deterministic random (sigma, mu, phi) triple for (cfg.seed, index)."""
    rng = np.random.default_rng([cfg.seed, index])
    p_lo, p_hi = cfg.position_window
    h_lo, h_hi = cfg.height_window
    w_lo, w_hi = cfg.weight_window

    ys = _log_uniform(rng, p_lo, p_hi, cfg.n_sigma)
    while np.unique(ys).size != ys.size:
        ys = _log_uniform(rng, p_lo, p_hi, cfg.n_sigma)
    sw = _log_uniform(rng, w_lo, w_hi, cfg.n_sigma)
    sigma = DiscreteMeasure1D(list(zip(ys, sw)))

    xs = _log_uniform(rng, p_lo, p_hi, cfg.n_mu)
    ts = _log_uniform(rng, h_lo, h_hi, cfg.n_mu)
    while len({(x, t) for x, t in zip(xs, ts)}) != xs.size:
        xs = _log_uniform(rng, p_lo, p_hi, cfg.n_mu)
        ts = _log_uniform(rng, h_lo, h_hi, cfg.n_mu)
    mw = _log_uniform(rng, w_lo, w_hi, cfg.n_mu)
    mu = DiscreteMeasure2D([((x, t), w) for x, t, w in zip(xs, ts, mw)])

    phi = _log_uniform(rng, w_lo, w_hi, cfg.n_mu)
    return GeneratedInstance(index, sigma, mu, phi)


def sample_kernel_comparability(param: BesselParam, case: int, n: int, rng) -> dict:
    """Kernel ratio P_t(x, y) / P_t(z, y) over sampled admissible geometries.

    Case 1: x in an interval I, |x - y| > |I|, |I| < |z - x| < 3|I|; the
    admissible bound is 16^(lam+1).  Case 2: y in 3I, t > |I|, |z - x| < 3|I|;
    the bound is 19^(lam+1).
    """
    lam = param.lam
    if case == 1:
        bound = 16.0 ** (lam + 1.0)
    elif case == 2:
        bound = 19.0 ** (lam + 1.0)
    else:
        raise ValueError(f"case must be 1 or 2, got {case}")

    length = _log_uniform(rng, 0.05, 4.0, n)
    left = _log_uniform(rng, 0.05, 20.0, n)
    x = left + rng.uniform(1e-6, 1.0 - 1e-6, n) * length

    if case == 1:
        d = length * _log_uniform(rng, 1.0 + 1e-6, 30.0, n)
        y = x + np.where(rng.random(n) < 0.5, 1.0, -1.0) * d
        y = np.where(y > 0.0, y, x + d)
        s = length * rng.uniform(1.0 + 1e-6, 3.0 - 1e-6, n)
        z = x + np.where(rng.random(n) < 0.5, 1.0, -1.0) * s
        z = np.where(z > 0.0, z, x + s)
        t = length * _log_uniform(rng, 0.01, 10.0, n)
    else:
        center = left + 0.5 * length
        v = rng.uniform(-1.0, 1.0, n)
        y = center + 1.5 * length * v
        y = np.where(y > 0.0, y, center + 1.5 * length * np.abs(v))
        t = length * _log_uniform(rng, 1.0 + 1e-6, 20.0, n)
        s = length * rng.uniform(0.0, 3.0 - 1e-6, n)
        z = x + np.where(rng.random(n) < 0.5, 1.0, -1.0) * s
        z = np.where(z > 0.0, z, x + s)

    px = _eval_arrays(lam, x, y, t, param.quad_rel_tol, param.quad_max_depth)
    pz = _eval_arrays(lam, z, y, t, param.quad_rel_tol, param.quad_max_depth)
    ratios = px / pz
    max_ratio = float(ratios.max())
    return {
        "case": case,
        "samples": n,
        "bound": bound,
        "max_ratio": max_ratio,
        "ok": max_ratio <= bound * (1.0 + 1e-8),
    }


def check_max_principle(inst: TwoWeightInstance, phi: Sequence[float], k: int,
                        whitney: WhitneyCollection, mode: str = "triple",
                        samples: int = 0, rng=None) -> dict:
    """Adjoint mass from outside hat(3I) stays below C_MP 2^k on each member.

    For every Whitney member I and every sigma atom inside it, the adjoint of
    phi restricted to mu atoms outside the box of 3I is evaluated exactly and
    compared with C_MP 2^k.  With samples > 0 the pointwise kernel
    comparability behind the bound is spot-checked as well.
    """
    phi = np.asarray(phi, dtype=float)
    c_mp = mp_constant(inst.param.lam, mode)
    threshold = c_mp * math.ldexp(1.0, k)
    kmat = inst.kernel_matrix()
    phw = phi * inst.mu.ws

    checked = 0
    max_ratio = 0.0
    violations: List[dict] = []
    for member in whitney.members:
        s_idx = np.nonzero(
            (inst.sigma.ys > member.a) & (inst.sigma.ys < member.b)
        )[0]
        if s_idx.size == 0:
            continue
        box = hat(dilate(member.open_interval(), 3.0))
        outside = ~(
            (inst.mu.xs > box.base.a)
            & (inst.mu.xs < box.base.b)
            & (inst.mu.ts <= box.height)
        )
        checked += int(s_idx.size)
        if not np.any(outside):
            continue
        vals = kmat[np.ix_(outside, s_idx)].T @ phw[outside]
        ratios = vals / threshold
        max_ratio = max(max_ratio, float(ratios.max()))
        for pos, r in zip(s_idx, ratios):
            if r > 1.0 + 1e-12:
                violations.append({
                    "member": [member.level, member.index],
                    "atom_y": float(inst.sigma.ys[pos]),
                    "value": float(r * threshold),
                    "bound": threshold,
                })

    report = {
        "k": k,
        "c_mp": c_mp,
        "checked_atoms": checked,
        "violations": violations,
        "max_ratio": max_ratio,
    }
    if samples > 0 and rng is not None:
        report["case1"] = sample_kernel_comparability(inst.param, 1, samples, rng)
        report["case2"] = sample_kernel_comparability(inst.param, 2, samples, rng)
    return report


def check_box_comparability(inst: TwoWeightInstance, i_set: Interval,
                            f_set: Interval, j: DyadicInterval,
                            samples: int = 16, rng=None) -> dict:
    """P(1_F)(x, t) against (t/|J|) P(1_F)(x_J, |J|) over sampled box points.

    Requires every contributing sigma atom to sit outside the closure of 3J,
    so |x - y| > |J| >= t for all sampled (x, t) in the box of J; otherwise
    the check is skipped.  The admissible bracket [c_lo, c_hi] follows from
    the two-sided denominator comparisons at distance scale |x - y|.
    """
    lam = inst.param.lam
    length = j.length
    x_c = 0.5 * (j.a + j.b)
    f_idx = np.nonzero((inst.sigma.ys > f_set.a) & (inst.sigma.ys < f_set.b))[0]
    if f_idx.size == 0:
        return {"skipped": "no contributing atoms", "ok": True, "samples": 0}
    three_j = dilate(j.open_interval(), 3.0)
    ys = inst.sigma.ys[f_idx]
    if np.any((ys >= three_j.a) & (ys <= three_j.b)):
        return {"skipped": "atom too close to J", "ok": True, "samples": 0}

    if rng is None:
        rng = np.random.default_rng(0)
    xs = np.concatenate([[x_c], x_c + (rng.uniform(-0.5, 0.5, samples - 1)) * length * 0.999])
    ts = np.concatenate([[length], length * _log_uniform(rng, 0.01, 1.0, samples - 1)])

    sw = inst.sigma.ws[f_idx]
    npts = xs.size
    qx = np.repeat(xs, f_idx.size)
    qt = np.repeat(ts, f_idx.size)
    qy = np.tile(ys, npts)
    kv = _eval_arrays(lam, qx, qy, qt, inst.param.quad_rel_tol,
                      inst.param.quad_max_depth).reshape(npts, f_idx.size)
    vals = kv @ sw
    ref = vals[0]
    ratios = vals / ((ts / length) * ref)

    c_lo = 0.5 * (2.0 / 9.0) ** (lam + 1.0)
    c_hi = 2.0 * 8.0 ** (lam + 1.0)
    return {
        "samples": int(npts),
        "j_inside_3i": dilate(i_set, 3.0).contains_interval(j.open_interval()),
        "min_ratio": float(ratios.min()),
        "max_ratio": float(ratios.max()),
        "c_lo": c_lo,
        "c_hi": c_hi,
        "ok": bool(
            ratios.min() >= c_lo * (1.0 - 1e-9) and ratios.max() <= c_hi * (1.0 + 1e-9)
        ),
    }


def _band_exponent(v: float) -> int:
    """The j with 2^j < v <= 2^(j+1)."""
    mant, exp = math.frexp(v)
    return exp - 2 if mant == 0.5 else exp - 1


def _node_fraction(x: float) -> float:
    """Deterministic fraction in (0.05, 0.45) keyed to a grid node."""
    bits = int(np.float64(x).view(np.int64))
    h = (bits * 2654435761) & 0xFFFF
    return 0.05 + 0.4 * (h / 65536.0)


def _soften_boundaries(oset: OpenSet, level: int) -> OpenSet:
    """Move level-set endpoints off dyadic-divisible grid nodes.

    An endpoint whose cell index is divisible by 2^r is an attractor for the
    Whitney ladder at every scale up to 2^(level+r): each scale has a member
    ending flush at the node, so the triple dilations of the whole ladder
    stack at one point and the overlap count degenerates to the ladder
    depth.  Growing each part outward until its boundary index is odd kills
    the coarse divisors, and a keyed sub-cell shift scatters the scales
    below the cell.  The shift is a function of the node alone, so level
    sets at different thresholds keep identical boundaries where their runs
    end in the same cell and the families stay nested.
    """
    cell = math.ldexp(1.0, level)
    parts = []
    for p in oset.parts:
        i = int(round(p.a / cell))
        j = int(round(p.b / cell))
        if i > 0 and i % 2 == 0:
            i -= 1
        if j % 2 == 0:
            j += 1
        a_node = i * cell
        b_node = j * cell
        a = a_node - _node_fraction(a_node) * cell if i > 0 else 0.0
        b = b_node + _node_fraction(b_node) * cell
        parts.append(Interval(a, b))
    return OpenSet.from_intervals(parts)


def _zero_energy_report(lam: float, delta: float, m: int, c_mp: float, mode: str) -> dict:
    return {
        "lam": lam, "delta": delta, "m": m, "c_mp": c_mp, "mode": mode,
        "total_energy": 0.0, "unshifted_band_sum": 0.0, "band_bracket_ok": True,
        "banded_total": 0.0, "ab_total": 0.0, "part_a": 0.0, "part_b": 0.0,
        "uncovered_band_mass": 0.0, "a_le_delta_total": True, "a_companion": 0.0,
        "k_set": [], "grid": None, "whitney": [], "nesting_ok": True,
        "max_principle": {"checked_atoms": 0, "violations": [], "max_ratio": 0.0},
        "b_terms": {"b1": 0.0, "b2": 0.0, "b21": 0.0, "b22": 0.0,
                    "split_failures": 0, "split_total": 0,
                    "unassigned_mass": 0.0, "c_b1": 0.0, "c_b21": 0.0, "c_b22": 0.0,
                    "f_const": 0.0, "b_const": 0.0, "phi_norm_sq": 0.0},
        "qualify": {"max_count": 0, "bound": 0, "ok": True},
        "lacey": {"max_count": 0, "ok": True},
        "stopping_members": 0,
    }


def decompose_energy(inst: TwoWeightInstance, phi: Sequence[float],
                     cfg: ExperimentConfig, f_const: Optional[float] = None,
                     b_const: Optional[float] = None) -> dict:
    """Level-set energy decomposition of the adjoint square integral.

    Bands the sigma atoms by the exact value of the adjoint of phi, realizes
    each level set on a dyadic grid, decomposes the shifted band energy into
    the small-density part A and the dense part B, splits B through the
    near/far mu mass (B1, B2) and through the stopping tree with translates
    (B21, B22), and records the empirical constants against the testing
    constants together with the counting facts.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.shape != inst.mu.xs.shape:
        raise ValueError("phi must assign one value per mu atom")
    if np.any(phi < 0.0):
        raise ValueError("phi must be nonnegative")

    lam = inst.param.lam
    delta = cfg.delta
    mode = cfg.member_test
    c_mp = mp_constant(lam, mode)
    m = cfg.level_shift(lam)
    wh_mode = mode

    sigma, mu = inst.sigma, inst.mu
    kmat = inst.kernel_matrix()
    phw = phi * mu.ws
    pstar = kmat.T @ phw
    total_energy = float((pstar ** 2 * sigma.ws).sum())
    if total_energy == 0.0:
        return _zero_energy_report(lam, delta, m, c_mp, mode)

    j_atom = np.array([_band_exponent(float(v)) for v in pstar], dtype=np.int64)
    unshifted = float((np.exp2(2.0 * j_atom) * sigma.ws).sum())
    band_bracket_ok = bool(
        0.25 * total_energy * (1.0 - 1e-12) <= unshifted <= total_energy * (1.0 + 1e-12)
    )
    k_set = sorted({int(j) - m for j in j_atom})
    banded_total = float((np.exp2(2.0 * (j_atom - m)) * sigma.ws).sum())

    # dyadic grid wide enough that the smallest threshold is left behind
    tau_min = math.ldexp(1.0, min(k_set))

    def pstar_at(points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        kv = _eval_arrays(lam, np.repeat(mu.xs, pts.size), np.tile(pts, mu.n),
                          np.repeat(mu.ts, pts.size), inst.param.quad_rel_tol,
                          inst.param.quad_max_depth).reshape(mu.n, pts.size)
        return kv.T @ phw

    base_exp = inst.engulfing_level()
    p_exp = base_exp
    truncated = True
    while p_exp <= base_exp + 10:
        if pstar_at(np.array([math.ldexp(1.0, p_exp)]))[0] < 0.5 * tau_min:
            truncated = False
            break
        p_exp += 1

    level = max(cfg.grid_level, p_exp - 11)
    if level >= p_exp:
        raise GridTooCoarseError(
            f"grid level {level} leaves no cells inside span 2^{p_exp}; "
            "lower grid_level"
        )
    ncells = 1 << (p_exp - level)
    cell = math.ldexp(1.0, level)
    centers = (np.arange(ncells) + 0.5) * cell
    grid_vals = pstar_at(centers)

    exps = sorted(set(k_set) | {k + m + 1 for k in k_set})
    open_sets: Dict[int, OpenSet] = {}
    whitneys: Dict[int, Optional[WhitneyCollection]] = {}
    for e in exps:
        idx = np.nonzero(grid_vals > math.ldexp(1.0, e))[0]
        oset = _soften_boundaries(OpenSet.from_cells(level, idx), level)
        open_sets[e] = oset
        whitneys[e] = whitney_decompose(oset, mode=wh_mode) if oset.parts else None

    missing = [k for k in k_set if whitneys[k] is None]
    if missing:
        raise GridTooCoarseError(
            f"level sets at exponents {missing} are unresolved at grid level {level}; "
            "lower grid_level"
        )

    nesting_ok = check_nesting({e: w for e, w in whitneys.items() if w is not None})

    whitney_rows = []
    for e in exps:
        w = whitneys[e]
        if w is None:
            continue
        rep = whitney_properties(w)
        defect_ok = rep.coverage_defect <= 2.0 ** -12 * w.omega.total_length + 1e-15
        whitney_rows.append({
            "threshold_exp": e,
            "role": "outer" if e in k_set else "inner",
            "n_members": len(w.members),
            "uncovered_tail": w.uncovered_tail,
            "coverage_defect": rep.coverage_defect,
            "defect_ok": bool(defect_ok),
            "tail_matches": rep.defect_matches_tail,
            "disjoint": rep.disjoint,
            "members_inside": rep.members_inside,
            "max_overlap": rep.max_overlap,
            "witness_ok": rep.witness_ok,
        })

    mu_tilde = tilde(mu)
    g_root = DyadicInterval(p_exp + 1, 0)
    g_fam = principal_intervals(mu_tilde, phi, g_root)

    part_a = 0.0
    part_b = 0.0
    a_companion = 0.0
    uncovered_band_mass = 0.0
    qual_counts: Dict[Tuple[int, int], int] = {}
    quals: List[tuple] = []
    mp_checked = 0
    mp_max_ratio = 0.0
    mp_violations: List[dict] = []

    for k in k_set:
        w = whitneys[k]
        mp = check_max_principle(inst, phi, k, w, mode)
        mp_checked += mp["checked_atoms"]
        mp_max_ratio = max(mp_max_ratio, mp["max_ratio"])
        for v in mp["violations"]:
            v["k"] = k
        mp_violations.extend(mp["violations"])

        weight = math.ldexp(1.0, 2 * k)
        band_idx = np.nonzero(j_atom == k + m)[0]
        groups: Dict[Tuple[int, int], List[int]] = {}
        for i in band_idx:
            member = w.member_containing(float(sigma.ys[i]))
            if member is None:
                uncovered_band_mass += weight * float(sigma.ws[i])
                continue
            groups.setdefault((member.level, member.index), []).append(int(i))
        for (lvl, idx), atom_ids in groups.items():
            member = DyadicInterval(lvl, idx)
            s_f = float(sigma.ws[atom_ids].sum())
            s_i = mass_1d(sigma, member.open_interval())
            if s_f >= delta * s_i:
                part_b += weight * s_f
                qual_counts[(lvl, idx)] = qual_counts.get((lvl, idx), 0) + 1
                quals.append((k, member, atom_ids, s_f, s_i))
            else:
                part_a += weight * s_f
                a_companion += weight * s_i

    ab_total = part_a + part_b
    a_le_delta_total = part_a <= delta * total_energy * (1.0 + 1e-12)

    b1_cap = 0.0
    b2_cap = 0.0
    b21_cap = 0.0
    b22_cap = 0.0
    split_failures = 0
    unassigned_mass = 0.0
    lacey_sets: Dict[Tuple[int, int], set] = {}

    for k, member, atom_ids, s_f, s_i in quals:
        iv = member.open_interval()
        box3 = hat(dilate(iv, 3.0))
        in3 = ((mu.xs > box3.base.a) & (mu.xs < box3.base.b)
               & (mu.ts <= box3.height))
        v_fam = whitneys.get(k + m + 1)
        in_ohat = np.zeros(mu.n, dtype=bool)
        covering: List[Optional[DyadicInterval]] = [None] * mu.n
        if v_fam is not None:
            for jpos in range(mu.n):
                cand = v_fam.member_containing(float(mu.xs[jpos]))
                if cand is not None and mu.ts[jpos] <= cand.length:
                    in_ohat[jpos] = True
                    covering[jpos] = cand

        p_f = kmat[:, atom_ids] @ sigma.ws[atom_ids]
        near = in3 & ~in_ohat
        far = in3 & in_ohat
        b1_val = float((p_f[near] * phw[near]).sum()) / s_f
        b2_val = float((p_f[far] * phw[far]).sum()) / s_f
        if math.ldexp(1.0, k) > (b1_val + b2_val) * (1.0 + 1e-9):
            split_failures += 1
        b1_cap += s_f * b1_val ** 2
        b2_cap += s_f * b2_val ** 2

        if b2_val > 0.0:
            s_in_i = np.nonzero((sigma.ys > iv.a) & (sigma.ys < iv.b))[0]
            p_i = kmat[:, s_in_i] @ sigma.ws[s_in_i]
            translates = [iv]
            if iv.a > 0.0:
                translates.append(Interval(max(iv.a - iv.length, 0.0), iv.a))
            translates.append(Interval(iv.b, iv.b + iv.length))

            involved: Dict[Tuple[int, int], DyadicInterval] = {}
            for jpos in np.nonzero(far)[0]:
                jmem = covering[jpos]
                involved.setdefault((jmem.level, jmem.index), jmem)

            u_eq = 0.0
            u_lt = 0.0
            for jmem in involved.values():
                jmask = ((mu.xs > jmem.a) & (mu.xs < jmem.b)
                         & (mu.ts <= jmem.length))
                t_j = float((p_i[jmask] * mu.ts[jmask] * mu.ws[jmask]).sum())
                alpha_j = _box_average(mu_tilde, phi, jmem)[1]
                host = next((tr for tr in translates
                             if tr.a <= jmem.a and jmem.b <= tr.b), None)
                if host is None:
                    unassigned_mass += t_j * alpha_j
                    continue
                pi_j = g_fam.project(jmem)
                pi_host = g_fam.project_interval(host)
                if pi_j == pi_host:
                    u_eq += t_j * alpha_j
                else:
                    u_lt += t_j * alpha_j
                    if t_j * alpha_j > 0.0 and pi_j is not None:
                        lacey_sets.setdefault((pi_j.level, pi_j.index), set()).add(k)
            b21_cap += s_f * (u_eq / (delta * s_i)) ** 2
            b22_cap += s_f * (u_lt / (delta * s_i)) ** 2

    phi_norm_sq = float((phi ** 2 * mu.ws).sum())
    if f_const is None or b_const is None:
        fam = interval_family(inst, shift_thirds=True)
        if f_const is None:
            f_const = forward_testing(inst, fam)[0]
        if b_const is None:
            b_const = backward_testing(inst, fam)[0]

    def _ratio(num: float, den: float) -> float:
        return num / den if den > 0.0 else 0.0

    b_terms = {
        "b1": b1_cap, "b2": b2_cap, "b21": b21_cap, "b22": b22_cap,
        "split_failures": split_failures, "split_total": len(quals),
        "unassigned_mass": unassigned_mass,
        "c_b1": _ratio(b1_cap, delta ** -2 * f_const ** 2 * phi_norm_sq),
        "c_b21": _ratio(b21_cap, delta ** -2 * b_const ** 2 * phi_norm_sq),
        "c_b22": _ratio(b22_cap, delta ** -1 * f_const ** 2 * phi_norm_sq),
        "f_const": f_const, "b_const": b_const, "phi_norm_sq": phi_norm_sq,
    }

    qual_bound = int(math.ceil(1.0 / delta))
    qual_max = max(qual_counts.values()) if qual_counts else 0
    lacey_max = max((len(s) for s in lacey_sets.values()), default=0)

    return {
        "lam": lam, "delta": delta, "m": m, "c_mp": c_mp, "mode": mode,
        "total_energy": total_energy,
        "unshifted_band_sum": unshifted,
        "band_bracket_ok": band_bracket_ok,
        "banded_total": banded_total,
        "ab_total": ab_total,
        "part_a": part_a,
        "part_b": part_b,
        "uncovered_band_mass": uncovered_band_mass,
        "a_le_delta_total": bool(a_le_delta_total),
        "a_companion": a_companion,
        "k_set": k_set,
        "grid": {"level": level, "span_exp": p_exp, "cells": int(ncells),
                 "span_truncated": bool(truncated)},
        "whitney": whitney_rows,
        "nesting_ok": bool(nesting_ok),
        "max_principle": {"checked_atoms": mp_checked,
                          "violations": mp_violations,
                          "max_ratio": mp_max_ratio},
        "b_terms": b_terms,
        "qualify": {"max_count": qual_max, "bound": qual_bound,
                    "ok": qual_max <= qual_bound},
        "lacey": {"max_count": lacey_max,
                  "ok": lacey_max <= cfg.lacey_bound},
        "stopping_members": len(g_fam.members),
    }


def _weak11_sweep(mu_t: DiscreteMeasure2D, phi: np.ndarray) -> Tuple[bool, int]:
    vals = sorted({
        maximal_function(mu_t, phi, (float(x), float(t))).value
        for x, t in zip(mu_t.xs, mu_t.ts)
    } - {0.0})
    if not vals:
        return True, 0
    alphas = {0.5 * vals[0], 1.25 * vals[-1]}
    for v in vals:
        alphas.add(0.95 * v)
        alphas.add(1.05 * v)
    alphas = sorted(alphas)[:12]
    ok = all(weak_11_check(mu_t, phi, a) for a in alphas)
    return ok, len(alphas)


def _run_combo(cfg: ExperimentConfig, gen: GeneratedInstance, lam: float) -> dict:
    inst = gen.instance(lam)
    phi = gen.phi
    failures: List[dict] = []

    def fail(check: str, detail: str):
        failures.append({"instance": gen.index, "lambda": lam,
                         "check": check, "detail": detail})

    plain_fam = interval_family(inst, shift_thirds=False)
    rich_fam = interval_family(inst, shift_thirds=True)
    norm = operator_norm(inst, cfg.norm_tol, cfg.norm_max_iters)
    if not norm.converged:
        fail("norm_convergence", f"power iteration hit {norm.iterations} iterations")
    f_plain, _ = forward_testing(inst, plain_fam)
    b_plain, _ = backward_testing(inst, plain_fam)
    f_rich, f_wit = forward_testing(inst, rich_fam)
    b_rich, b_wit = backward_testing(inst, rich_fam)

    slack = 1.0 + cfg.necessity_slack
    for name, val in (("F_plain", f_plain), ("B_plain", b_plain),
                      ("F", f_rich), ("B", b_rich)):
        if val > norm.value * slack:
            fail("necessity", f"{name}={val!r} exceeds N={norm.value!r}")

    ratio_plain = norm.value / (f_plain + b_plain) if f_plain + b_plain > 0 else math.inf
    ratio_rich = norm.value / (f_rich + b_rich) if f_rich + b_rich > 0 else math.inf
    if math.isfinite(ratio_plain) and abs(ratio_rich - ratio_plain) > 0.1 * ratio_plain:
        fail("ratio_stability",
             f"ratio moved from {ratio_plain!r} to {ratio_rich!r} under shifts")

    mu_t = tilde(inst.mu)
    weak11_ok, n_alphas = _weak11_sweep(mu_t, phi)
    if not weak11_ok:
        fail("weak11", f"weak (1,1) violated in a sweep of {n_alphas} levels")

    g_root = DyadicInterval(inst.engulfing_level(), 0)
    g_fam = principal_intervals(mu_t, phi, g_root)
    carleson_c = carleson_ratio(g_fam, mu_t, phi)
    if carleson_c > cfg.carleson_bound * (1.0 + 1e-12):
        fail("carleson", f"packing ratio {carleson_c!r} exceeds {cfg.carleson_bound}")

    rng = np.random.default_rng([cfg.seed, gen.index, int(lam * 1000), 7])
    case1 = sample_kernel_comparability(inst.param, 1, cfg.comparability_samples, rng)
    case2 = sample_kernel_comparability(inst.param, 2, cfg.comparability_samples, rng)
    if not case1["ok"]:
        fail("kernel_case1", f"ratio {case1['max_ratio']!r} above {case1['bound']!r}")
    if not case2["ok"]:
        fail("kernel_case2", f"ratio {case2['max_ratio']!r} above {case2['bound']!r}")

    record = {
        "instance": gen.index,
        "lambda": lam,
        "N": norm.value,
        "F": f_rich,
        "B": b_rich,
        "ratio": ratio_rich,
        "F_plain": f_plain,
        "B_plain": b_plain,
        "ratio_plain": ratio_plain,
        "iterations": norm.iterations,
        "converged": norm.converged,
        "forward_witness": f_wit,
        "backward_witness": b_wit,
        "weak11_ok": weak11_ok,
        "carleson_C": carleson_c,
        "case1_max_ratio": case1["max_ratio"],
        "case2_max_ratio": case2["max_ratio"],
    }

    if cfg.run_decompose:
        try:
            energy = decompose_energy(inst, phi, cfg, f_const=f_rich, b_const=b_rich)
        except GridTooCoarseError as exc:
            fail("grid", str(exc))
            energy = None
        if energy is not None:
            mp = energy["max_principle"]
            if mp["violations"]:
                fail("max_principle", f"{len(mp['violations'])} violations, "
                                      f"max ratio {mp['max_ratio']!r}")
            overlap = max((row["max_overlap"] for row in energy["whitney"]), default=0)
            if overlap > cfg.whitney_overlap_bound:
                fail("whitney_overlap", f"overlap {overlap} exceeds "
                                        f"{cfg.whitney_overlap_bound}")
            for row in energy["whitney"]:
                if not (row["disjoint"] and row["members_inside"] and row["tail_matches"]):
                    fail("whitney_structure", f"threshold 2^{row['threshold_exp']}")
                if not row["defect_ok"]:
                    fail("whitney_defect", f"threshold 2^{row['threshold_exp']} defect "
                                           f"{row['coverage_defect']!r}")
            if not energy["nesting_ok"]:
                fail("whitney_nesting", "cross-level nesting violated")
            if not energy["qualify"]["ok"]:
                fail("qualify_count", f"count {energy['qualify']['max_count']} exceeds "
                                      f"{energy['qualify']['bound']}")
            if not energy["lacey"]["ok"]:
                fail("lacey_count", f"count {energy['lacey']['max_count']} exceeds "
                                    f"{cfg.lacey_bound}")
            if not energy["band_bracket_ok"]:
                fail("band_bracket", "unshifted band sum left the factor-4 bracket")
            if not energy["a_le_delta_total"]:
                fail("part_a", "A exceeded delta times the total energy")
            record["max_principle_ok"] = not mp["violations"]
            record["mp_max_ratio"] = mp["max_ratio"]
            record["whitney_overlap"] = overlap
            record["energy"] = {
                key: energy[key] for key in (
                    "total_energy", "unshifted_band_sum", "band_bracket_ok",
                    "banded_total", "ab_total", "part_a", "part_b",
                    "uncovered_band_mass", "a_le_delta_total", "k_set",
                    "nesting_ok", "stopping_members",
                )
            }
            record["energy"]["b_terms"] = energy["b_terms"]
            record["energy"]["qualify"] = energy["qualify"]
            record["energy"]["lacey"] = energy["lacey"]
            record["energy"]["grid"] = energy["grid"]
            record["energy"]["whitney"] = energy["whitney"]
    record["failures"] = failures
    return record


@dataclass
class TestReport:
    config: dict
    records: List[dict]
    failures: List[dict]
    aggregates: dict
    generated_at: str

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_json(self) -> str:
        doc = {
            "config": self.config,
            "generated_at": self.generated_at,
            "passed": self.passed,
            "aggregates": self.aggregates,
            "failures": self.failures,
            "records": self.records,
        }
        return json.dumps(_plain(doc), indent=2, sort_keys=True)

    def save_json(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["instance", "lambda", "N", "F", "B", "ratio",
                         "max_principle_ok", "weak11_ok", "carleson_C",
                         "whitney_overlap"])
        for rec in self.records:
            writer.writerow([
                rec["instance"], rec["lambda"], repr(rec["N"]), repr(rec["F"]),
                repr(rec["B"]), repr(rec["ratio"]),
                rec.get("max_principle_ok", ""), rec["weak11_ok"],
                repr(rec["carleson_C"]), rec.get("whitney_overlap", ""),
            ])
        return buf.getvalue()

    def save_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    return obj


def run_equivalence_suite(cfg: ExperimentConfig) -> TestReport:
    """Full experiment over all generated instances and every lambda."""
    t0 = time.time()
    records: List[dict] = []
    failures: List[dict] = []
    for index in range(cfg.instance_count):
        gen = gen_instance(cfg, index)
        for lam in cfg.lambda_set:
            rec = _run_combo(cfg, gen, lam)
            failures.extend(rec.pop("failures"))
            records.append(rec)

    finite_ratios = [r["ratio"] for r in records if math.isfinite(r["ratio"])]
    aggregates = {
        "n_records": len(records),
        "max_necessity_excess": max(
            (max(r["F"], r["B"]) / r["N"] - 1.0 for r in records if r["N"] > 0),
            default=0.0,
        ),
        "min_ratio": min(finite_ratios, default=math.inf),
        "max_ratio": max(finite_ratios, default=math.inf),
        "weak11_all_ok": all(r["weak11_ok"] for r in records),
        "max_carleson": max((r["carleson_C"] for r in records), default=0.0),
        "mp_all_ok": all(r.get("max_principle_ok", True) for r in records),
        "max_mp_ratio": max((r.get("mp_max_ratio", 0.0) for r in records), default=0.0),
        "max_whitney_overlap": max((r.get("whitney_overlap", 0) for r in records), default=0),
        "max_case1_ratio": max((r["case1_max_ratio"] for r in records), default=0.0),
        "max_case2_ratio": max((r["case2_max_ratio"] for r in records), default=0.0),
        "max_qualify_count": max(
            (r["energy"]["qualify"]["max_count"] for r in records if "energy" in r),
            default=0,
        ),
        "max_lacey_count": max(
            (r["energy"]["lacey"]["max_count"] for r in records if "energy" in r),
            default=0,
        ),
        "runtime_s": time.time() - t0,
    }
    return TestReport(
        config=_plain(asdict(cfg)),
        records=_plain(records),
        failures=_plain(failures),
        aggregates=_plain(aggregates),
        generated_at=datetime.datetime.now(datetime.timezone.utc).isoformat(),
    )
