"""Relative energy and L2 errors against a reference trajectory."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assembly import BlockSystem
from .fem_reference import Trajectory

ERRORS_HEADER = ["method", "k", "contrast", "seed", "E_u", "E_theta", "E_w_energy", "E_w_L2"]


@dataclass
class ErrorReport:
    E_u_energy: float
    E_theta_energy: float
    E_w_energy: float
    E_w_L2: float
    series: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def row(self) -> list:
        m = self.meta
        return [m.get("method", ""), m.get("k", ""), m.get("contrast", ""), m.get("seed", ""),
                _fmt(self.E_u_energy), _fmt(self.E_theta_energy),
                _fmt(self.E_w_energy), _fmt(self.E_w_L2)]


def _fmt(v) -> str:
    if v is None or not np.isfinite(v):
        return "nan"
    return f"{v:.10e}"


def _ratio(num: float, den: float) -> float:
    # zero reference energy leaves the relative error undefined
    if den <= 0:
        return float("nan")
    return float(np.sqrt(max(num, 0.0) / den))


def _quad(A, x) -> float:
    return float(x @ (A @ x))


def state_errors(sol: np.ndarray, ref: np.ndarray, bs: BlockSystem) -> tuple:
    n_u = bs.n_u
    e = sol - ref
    eu, et = e[:n_u], e[n_u:]
    ru, rt = ref[:n_u], ref[n_u:]
    nu_e, nt_e = _quad(bs.A1, eu), _quad(bs.A4, et)
    nu_r, nt_r = _quad(bs.A1, ru), _quad(bs.A4, rt)
    # unweighted L2: vector mass for u is the scalar mass on each component
    l2_e = _quad(bs.M, eu[0::2]) + _quad(bs.M, eu[1::2]) + _quad(bs.M, et)
    l2_r = _quad(bs.M, ru[0::2]) + _quad(bs.M, ru[1::2]) + _quad(bs.M, rt)
    return (_ratio(nu_e, nu_r), _ratio(nt_e, nt_r),
            _ratio(nu_e + nt_e, nu_r + nt_r), _ratio(l2_e, l2_r))


def energy_errors(sol: Trajectory, ref: Trajectory, bs: BlockSystem, at: int = -1,
                  meta: dict | None = None) -> ErrorReport:
    """Relative errors at time index ``at`` plus the per-level series."""
    if len(sol) != len(ref):
        raise ValueError(f"trajectories differ in length: {len(sol)} vs {len(ref)}")
    if not np.isclose(sol.tau, ref.tau):
        raise ValueError("trajectories use different time steps")
    series = np.array([state_errors(s.values, r.values, bs)
                       for s, r in zip(sol.states, ref.states)])
    eu, et, ew, el2 = series[at]
    return ErrorReport(eu, et, ew, el2,
                       series={"E_u": series[:, 0], "E_theta": series[:, 1],
                               "E_w_energy": series[:, 2], "E_w_L2": series[:, 3]},
                       meta=dict(meta or {}))


def write_errors_csv(path, reports) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ERRORS_HEADER)
        for rep in reports:
            w.writerow(rep.row())
