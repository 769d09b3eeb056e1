"""Body forces, heat sources and initial temperatures of the benchmark problems."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class Sources:
    """``f(x, y, t) -> (fx, fy)``, ``g(x, y, t) -> array`` and ``theta0(x, y) -> array``."""
    f: Callable
    g: Callable
    theta0: Callable
    name: str = "custom"


def zero_force(x, y, t):
    return np.zeros_like(x), np.zeros_like(x)


def zero_scalar(x, y, t=0.0):
    return np.zeros_like(x)


def _g_constant(x, y, t):
    return np.full_like(x, 10.0)


def _theta0_sine(x, y):
    return 500.0 * np.sin(np.pi * x) * np.sin(np.pi * y)


def _g_gaussian(x, y, t):
    return 10.0 * np.exp(-((x - 0.2) ** 2 + (y - 0.8) ** 2) / (2 * 0.2 ** 2))


def _theta0_bubble(x, y):
    return 1000.0 * x * (1 - x) * y * (1 - y)


# test 1 and test 2 share sources and initial data
TEST1 = Sources(zero_force, _g_constant, _theta0_sine, name="test1")
TEST2 = Sources(zero_force, _g_constant, _theta0_sine, name="test2")
TEST3 = Sources(zero_force, _g_gaussian, _theta0_bubble, name="test3")
ZERO = Sources(zero_force, zero_scalar, lambda x, y: np.zeros_like(x), name="zero")

PRESET_SOURCES = {"test1": TEST1, "test2": TEST2, "test3": TEST3}

_EXPR_NAMESPACE = {
    "np": np, "pi": np.pi, "sin": np.sin, "cos": np.cos, "exp": np.exp,
    "sqrt": np.sqrt, "log": np.log, "abs": np.abs, "tanh": np.tanh,
}


def _compile(expr: str, args: tuple[str, ...]):
    code = compile(expr, f"<{expr}>", "eval")
    for name in code.co_names:
        if name not in _EXPR_NAMESPACE and name not in args:
            raise ValueError(f"unknown name {name!r} in expression {expr!r}")
    env = {"__builtins__": {}, **_EXPR_NAMESPACE}

    def fn(*vals):
        local = dict(zip(args, vals))
        out = eval(code, env, local)
        return np.broadcast_to(np.asarray(out, dtype=float), np.shape(vals[0])).copy()
    return fn


def sources_from_expressions(fx: str = "0", fy: str = "0", g: str = "0",
                             theta0: str = "0") -> Sources:
    """Build :class:`Sources` from numpy expressions in ``x``, ``y`` (and ``t`` for loads)."""
    cfx = _compile(fx, ("x", "y", "t"))
    cfy = _compile(fy, ("x", "y", "t"))
    cg = _compile(g, ("x", "y", "t"))
    ct = _compile(theta0, ("x", "y"))
    return Sources(f=lambda x, y, t: (cfx(x, y, t), cfy(x, y, t)),
                   g=cg, theta0=ct, name="custom")
