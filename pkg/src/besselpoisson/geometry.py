"""Intervals, Carleson boxes, and discrete measures on the positive half line.

Conventions shared across the package: intervals are open subsets of (0, inf)
and dilations are truncated at the origin; a Carleson box keeps its base
interval open and its top edge closed; an atom sitting exactly on an interval
endpoint belongs to neither side.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "Interval",
    "CarlesonBox",
    "DiscreteMeasure1D",
    "DiscreteMeasure2D",
    "MeasureFormatError",
    "general_interval",
    "dilate",
    "hat",
    "mass_1d",
    "mass_2d",
    "tilde",
    "load_measure_file",
    "save_measure_file",
]


class MeasureFormatError(ValueError):
    """Raised when a measure file violates the expected layout or invariants."""


@dataclass(frozen=True, order=True)
class Interval:
    """Open interval (a, b) with 0 <= a < b; b may be inf for the full tail."""

    a: float
    b: float

    def __post_init__(self):
        if not (math.isfinite(self.a) and self.a >= 0.0):
            raise ValueError(f"interval left endpoint must be finite and >= 0, got {self.a}")
        if math.isnan(self.b) or not self.a < self.b:
            raise ValueError(f"interval endpoints must satisfy a < b, got ({self.a}, {self.b})")

    @property
    def length(self) -> float:
        return self.b - self.a

    @property
    def center(self) -> float:
        return 0.5 * (self.a + self.b)

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.b)

    def contains(self, x: float) -> bool:
        return self.a < x < self.b

    def contains_interval(self, other: "Interval") -> bool:
        return self.a <= other.a and other.b <= self.b

    def intersects(self, other: "Interval") -> bool:
        return self.a < other.b and other.a < self.b

    def as_tuple(self) -> tuple:
        return (self.a, self.b)


@dataclass(frozen=True)
class CarlesonBox:
    """Box I x (0, |I|] over an open base interval; the top edge is closed."""

    base: Interval
    height: float

    def __post_init__(self):
        if not self.base.is_finite:
            raise ValueError("Carleson box needs a finite base interval")
        if self.height != self.base.length:
            raise ValueError(
                f"box height {self.height} must equal the base length {self.base.length}"
            )

    def contains(self, x: float, t: float) -> bool:
        return self.base.contains(x) and 0.0 < t <= self.height


def general_interval(x: float, r: float) -> Interval:
    """Interval of center x and radius r, truncated to the positive half line."""
    if not (x > 0.0 and r > 0.0):
        raise ValueError(f"need positive center and radius, got x={x}, r={r}")
    return Interval(max(x - r, 0.0), x + r)


def dilate(iv: Interval, n: float) -> Interval:
    """n-fold dilate about the center, truncated at the origin.

    Truncation means dilation is not associative near zero; callers always
    dilate the original interval.
    """
    if n < 1.0:
        raise ValueError(f"dilation factor must be >= 1, got {n}")
    if not iv.is_finite:
        raise ValueError("cannot dilate an infinite interval")
    return general_interval(iv.center, 0.5 * n * iv.length)


def hat(iv: Interval) -> CarlesonBox:
    """Carleson box over iv; the height is the (possibly truncated) length."""
    if not iv.is_finite:
        raise ValueError("cannot take the box over an infinite interval")
    return CarlesonBox(iv, iv.length)


def _check_finite_positive(arr: np.ndarray, what: str) -> None:
    if arr.size and (not np.all(np.isfinite(arr)) or not np.all(arr > 0.0)):
        raise ValueError(f"{what} must be finite and positive")


class DiscreteMeasure1D:
    """Finitely many weighted atoms on (0, inf), in insertion order."""

    def __init__(self, atoms: Iterable[Sequence[float]]):
        pairs = [(float(y), float(w)) for y, w in atoms]
        self.ys = np.array([p[0] for p in pairs], dtype=float)
        self.ws = np.array([p[1] for p in pairs], dtype=float)
        _check_finite_positive(self.ys, "atom positions")
        _check_finite_positive(self.ws, "atom weights")
        if np.unique(self.ys).size != self.ys.size:
            raise ValueError("atom positions must be distinct")

    @property
    def n(self) -> int:
        return int(self.ys.size)

    @property
    def total(self) -> float:
        return float(self.ws.sum())

    def atoms(self):
        return list(zip(self.ys.tolist(), self.ws.tolist()))

    def __repr__(self):
        return f"DiscreteMeasure1D(n={self.n}, total={self.total:.6g})"


class DiscreteMeasure2D:
    """Finitely many weighted atoms on (0, inf) x (0, inf), in insertion order."""

    def __init__(self, atoms: Iterable[Sequence]):
        triples = []
        for entry in atoms:
            (x, t), w = entry
            triples.append((float(x), float(t), float(w)))
        self.xs = np.array([p[0] for p in triples], dtype=float)
        self.ts = np.array([p[1] for p in triples], dtype=float)
        self.ws = np.array([p[2] for p in triples], dtype=float)
        _check_finite_positive(self.xs, "atom x positions")
        _check_finite_positive(self.ts, "atom heights")
        _check_finite_positive(self.ws, "atom weights")
        if len({(x, t) for x, t in zip(self.xs, self.ts)}) != self.xs.size:
            raise ValueError("atom locations must be distinct")

    @classmethod
    def from_arrays(cls, xs, ts, ws) -> "DiscreteMeasure2D":
        out = cls.__new__(cls)
        out.xs = np.asarray(xs, dtype=float).copy()
        out.ts = np.asarray(ts, dtype=float).copy()
        out.ws = np.asarray(ws, dtype=float).copy()
        return out

    @property
    def n(self) -> int:
        return int(self.xs.size)

    @property
    def total(self) -> float:
        return float(self.ws.sum())

    def atoms(self):
        return [((x, t), w) for x, t, w in zip(self.xs, self.ts, self.ws)]

    def __repr__(self):
        return f"DiscreteMeasure2D(n={self.n}, total={self.total:.6g})"


def mass_1d(measure: DiscreteMeasure1D, iv: Interval) -> float:
    """Mass of the open interval; endpoint atoms are excluded."""
    mask = (measure.ys > iv.a) & (measure.ys < iv.b)
    return float(measure.ws[mask].sum())


def mass_2d(measure: DiscreteMeasure2D, box: CarlesonBox) -> float:
    """Mass of the box; the base is open, the top edge t = height counts."""
    mask = (
        (measure.xs > box.base.a)
        & (measure.xs < box.base.b)
        & (measure.ts <= box.height)
    )
    return float(measure.ws[mask].sum())


def tilde(measure: DiscreteMeasure2D) -> DiscreteMeasure2D:
    """Height-squared reweighting: each weight w at (x, t) becomes t^2 w."""
    return DiscreteMeasure2D.from_arrays(
        measure.xs, measure.ts, measure.ws * measure.ts ** 2
    )


def _as_positive_number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MeasureFormatError(f"{where}: expected a number, got {value!r}")
    out = float(value)
    if not math.isfinite(out) or out <= 0.0:
        raise MeasureFormatError(f"{where}: must be a finite positive number, got {value!r}")
    return out


def load_measure_file(path: str):
    """Read a JSON measure file and return (lam, sigma, mu).

    Layout: {"lambda": real, "sigma": [[y, w], ...], "mu": [[x, t, w], ...]}.
    Violations are reported with the offending field path.
    """
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MeasureFormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}")
    if not isinstance(doc, dict):
        raise MeasureFormatError(f"{path}: top level must be an object")
    for key in ("lambda", "sigma", "mu"):
        if key not in doc:
            raise MeasureFormatError(f"{path}: missing key '{key}'")
    lam = _as_positive_number(doc["lambda"], f"{path}: lambda")

    sigma_raw = doc["sigma"]
    if not isinstance(sigma_raw, list) or not sigma_raw:
        raise MeasureFormatError(f"{path}: sigma: expected a nonempty list of [y, w] pairs")
    sigma_atoms = []
    for i, entry in enumerate(sigma_raw):
        if not isinstance(entry, list) or len(entry) != 2:
            raise MeasureFormatError(f"{path}: sigma[{i}]: expected a [y, w] pair, got {entry!r}")
        y = _as_positive_number(entry[0], f"{path}: sigma[{i}].y")
        w = _as_positive_number(entry[1], f"{path}: sigma[{i}].w")
        sigma_atoms.append((y, w))
    try:
        sigma = DiscreteMeasure1D(sigma_atoms)
    except ValueError as exc:
        raise MeasureFormatError(f"{path}: sigma: {exc}")

    mu_raw = doc["mu"]
    if not isinstance(mu_raw, list) or not mu_raw:
        raise MeasureFormatError(f"{path}: mu: expected a nonempty list of [x, t, w] triples")
    mu_atoms = []
    for i, entry in enumerate(mu_raw):
        if not isinstance(entry, list) or len(entry) != 3:
            raise MeasureFormatError(
                f"{path}: mu[{i}]: expected an [x, t, w] triple, got {entry!r}"
            )
        x = _as_positive_number(entry[0], f"{path}: mu[{i}].x")
        t = _as_positive_number(entry[1], f"{path}: mu[{i}].t")
        w = _as_positive_number(entry[2], f"{path}: mu[{i}].w")
        mu_atoms.append(((x, t), w))
    try:
        mu = DiscreteMeasure2D(mu_atoms)
    except ValueError as exc:
        raise MeasureFormatError(f"{path}: mu: {exc}")

    return lam, sigma, mu


def save_measure_file(path: str, lam: float, sigma: DiscreteMeasure1D, mu: DiscreteMeasure2D) -> None:
    doc = {
        "lambda": lam,
        "sigma": [[y, w] for y, w in sigma.atoms()],
        "mu": [[x, t, w] for (x, t), w in mu.atoms()],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
