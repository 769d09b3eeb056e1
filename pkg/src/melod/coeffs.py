"""Piecewise-constant material coefficients on the fine triangulation."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
import scipy.linalg as sla

from .grid import NestedGrid

NAMES = ("lambda", "mu", "kappa", "alpha")

# sampling lattice for Gaussian fields is capped at this many cells per side
MAX_GP_LATTICE = 64


@dataclass(frozen=True)
class LogGaussian:
    sigma2: float = 1.0
    ell: float = 0.1
    b0: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma2 < 0 or not self.ell > 0:
            raise ValueError("LogGaussian needs sigma2 >= 0 and ell > 0")


@dataclass(frozen=True)
class Periodic:
    cells_per_side: int = 8
    inclusion_fraction: float = 0.5
    background: float = 1.0
    contrast: float = 1e3

    def __post_init__(self):
        if not 0 < self.inclusion_fraction < 1:
            raise ValueError("inclusion_fraction must lie in (0, 1)")
        if self.contrast < 1 or not self.background > 0:
            raise ValueError("Periodic needs contrast >= 1 and background > 0")


@dataclass(frozen=True)
class HighContrast:
    pattern_seed: int = 0
    contrast: float = 1e3

    def __post_init__(self):
        if self.contrast < 1:
            raise ValueError("contrast must be >= 1")


@dataclass(frozen=True)
class Constant:
    value: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.value) and self.value > 0):
            raise ValueError("Constant value must be positive and finite")


FieldSpec = Union[LogGaussian, Periodic, HighContrast, Constant]


@dataclass(frozen=True, eq=False)
class CoefficientField:
    lam: np.ndarray
    mu: np.ndarray
    kappa: np.ndarray
    alpha: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        sizes = {a.shape for a in self.arrays()}
        if len(sizes) != 1:
            raise ValueError("coefficient arrays must share one shape")

    def arrays(self):
        return (self.lam, self.mu, self.kappa, self.alpha)

    @property
    def n_elements(self) -> int:
        return self.lam.size

    def check_positive(self, allow_zero_alpha: bool = False) -> None:
        for name, arr in zip(NAMES, self.arrays()):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            if name == "alpha" and allow_zero_alpha:
                if np.any(arr < 0):
                    raise ValueError("alpha has negative entries")
            elif np.any(arr <= 0):
                raise ValueError(f"{name} has nonpositive entries")

    @classmethod
    def constant(cls, n_elements: int, lam=1.0, mu=1.0, kappa=1.0, alpha=0.1):
        full = lambda v: np.full(n_elements, float(v))
        return cls(full(lam), full(mu), full(kappa), full(alpha),
                   provenance={"generator": "constant"})


def lame_from_young(E: float, nu: float) -> tuple[float, float]:
    """Convert Young's modulus and Poisson ratio to Lame parameters ``(lam, mu)``."""
    if E <= 0 or not -1 < nu < 0.5:
        raise ValueError("need E > 0 and -1 < nu < 1/2")
    mu = E / (2 * (1 + nu))
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    return lam, mu


def _gp_lattice_factor(n: int, ell: float) -> np.ndarray:
    """Lower Cholesky factor of the 1D squared-exponential covariance on ``n`` cell centres.

    The 2D covariance on a tensor lattice is the Kronecker product of two such
    1D matrices, so factoring the 1D one is an exact factorization of the 2D one.
    """
    x = (np.arange(n) + 0.5) / n
    C = np.exp(-((x[:, None] - x[None, :]) ** 2) / ell ** 2)
    try:
        return sla.cholesky(C, lower=True)
    except np.linalg.LinAlgError:
        pass
    # one retry with a relative nugget on the correlation factor
    try:
        return sla.cholesky(C + 1e-10 * np.eye(n), lower=True)
    except np.linalg.LinAlgError as exc:
        raise ValueError(
            f"covariance factorization failed for ell={ell} on a {n}x{n} lattice") from exc


def gen_log_gaussian(grid: NestedGrid, spec: LogGaussian) -> np.ndarray:
    """One draw of ``exp(G)`` with ``G`` Gaussian, mean ``b0``, squared-exponential covariance.

    ``G`` is sampled on a square lattice of at most 64 cells per side and
    prolonged piecewise-constantly to fine-element centroids.
    """
    fine = grid.fine
    if spec.sigma2 == 0:
        return np.full(fine.n_triangles, np.exp(spec.b0))
    n = min(fine.n, MAX_GP_LATTICE)
    L = _gp_lattice_factor(n, spec.ell)
    rng = np.random.default_rng(spec.seed)
    Z = rng.standard_normal((n, n))
    # G[j, i] at cell (x_i, y_j); Cov = sigma2 * (C_y kron C_x)
    G = spec.b0 + np.sqrt(spec.sigma2) * (L @ Z @ L.T)
    c = fine.centroids
    i = np.clip(np.floor(c[:, 0] * n).astype(np.int64), 0, n - 1)
    j = np.clip(np.floor(c[:, 1] * n).astype(np.int64), 0, n - 1)
    return np.exp(G[j, i])


def periodic_indicator(grid: NestedGrid, cells_per_side: int, inclusion_fraction: float):
    n = grid.fine.n
    if cells_per_side < 1 or n % cells_per_side:
        raise ValueError(
            f"cells_per_side={cells_per_side} does not divide 2**fine_level={n}")
    local = np.mod(grid.fine.centroids * cells_per_side, 1.0)
    lo = 0.5 * (1.0 - inclusion_fraction)
    hi = 0.5 * (1.0 + inclusion_fraction)
    return np.all((local > lo) & (local < hi), axis=1)


def gen_periodic(grid: NestedGrid, spec: Periodic) -> np.ndarray:
    """Centred square inclusions, one per periodic cell, valued ``background * contrast``."""
    inside = periodic_indicator(grid, spec.cells_per_side, spec.inclusion_fraction)
    return np.where(inside, spec.background * spec.contrast, spec.background)


# channel geometry lives on a fixed 64 x 64 pattern lattice so it does not
# change with the fine level
_PATTERN_N = 64


def channel_pattern(pattern_seed: int) -> np.ndarray:
    """Boolean ``64 x 64`` lattice of high-value cells, indexed ``[row_y, col_x]``.

    Full-length horizontal and vertical channels one lattice cell wide, plus
    short bars, added until the covered fraction reaches a seeded target in
    ``[0.15, 0.25]``. Parallel channels are kept at least two cells apart.
    """
    rng = np.random.default_rng(pattern_seed)
    n = _PATTERN_N
    mask = np.zeros((n, n), dtype=bool)
    target = rng.uniform(0.15, 0.25)
    free_rows = list(rng.permutation(np.arange(3, n - 3)))
    free_cols = list(rng.permutation(np.arange(3, n - 3)))
    used_rows: list[int] = []
    used_cols: list[int] = []

    def take(pool, used):
        while pool:
            v = int(pool.pop())
            if all(abs(v - u) > 2 for u in used):
                used.append(v)
                return v
        return None

    turn = 0
    while mask.mean() < target and turn < 10 * n:
        kind = turn % 3
        turn += 1
        if kind == 0:
            r = take(free_rows, used_rows)
            if r is not None:
                mask[r, 1:n - 1] = True
        elif kind == 1:
            c = take(free_cols, used_cols)
            if c is not None:
                mask[1:n - 1, c] = True
        else:
            length = int(rng.integers(n // 8, n // 3))
            r0, c0 = (int(v) for v in rng.integers(3, n - 3 - length, size=2))
            if rng.random() < 0.5:
                mask[r0, c0:c0 + length] = True
            else:
                mask[r0:r0 + length, c0] = True
    return mask


def high_contrast_indicator(grid: NestedGrid, pattern_seed: int) -> np.ndarray:
    mask = channel_pattern(pattern_seed)
    c = grid.fine.centroids
    n = _PATTERN_N
    i = np.clip(np.floor(c[:, 0] * n).astype(np.int64), 0, n - 1)
    j = np.clip(np.floor(c[:, 1] * n).astype(np.int64), 0, n - 1)
    return mask[j, i]


def gen_high_contrast(grid: NestedGrid, spec: HighContrast) -> np.ndarray:
    inside = high_contrast_indicator(grid, spec.pattern_seed)
    return np.where(inside, float(spec.contrast), 1.0)


def gen_constant(grid: NestedGrid, spec: Constant) -> np.ndarray:
    return np.full(grid.fine.n_triangles, float(spec.value))


_GENERATORS = {
    LogGaussian: gen_log_gaussian,
    Periodic: gen_periodic,
    HighContrast: gen_high_contrast,
    Constant: gen_constant,
}


def generate(grid: NestedGrid, spec: FieldSpec) -> np.ndarray:
    return _GENERATORS[type(spec)](grid, spec)


def build_field(grid: NestedGrid, specs: dict) -> CoefficientField:
    """Assemble a :class:`CoefficientField` from one spec per coefficient name."""
    missing = set(NAMES) - set(specs)
    if missing:
        raise ValueError(f"missing coefficient specs: {sorted(missing)}")
    values = [generate(grid, specs[name]) for name in NAMES]
    provenance = {name: {"generator": type(specs[name]).__name__, **asdict(specs[name])}
                  for name in NAMES}
    cf = CoefficientField(*values, provenance=provenance)
    cf.check_positive()
    return cf


def write_fields_csv(path, grid: NestedGrid, cf: CoefficientField) -> None:
    c = grid.fine.centroids
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["element_index", "centroid_x", "centroid_y", *NAMES])
        for e in range(cf.n_elements):
            w.writerow([e, repr(float(c[e, 0])), repr(float(c[e, 1])),
                        *(repr(float(a[e])) for a in cf.arrays())])
