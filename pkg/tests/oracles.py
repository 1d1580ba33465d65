"""Independent oracles, written without the package's solvers."""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import quad, solve_ivp


def harmonic_action(x: float, y: float, t: float, omega: float = 1.0) -> float:
    """Classical action of the 1-D harmonic oscillator ``L = v^2/2 - omega^2 x^2/2``."""
    return omega * ((x * x + y * y) * math.cos(omega * t) - 2 * x * y) / (2 * math.sin(omega * t))


def harmonic_action_dy(x: float, y: float, t: float, omega: float = 1.0) -> float:
    return omega * (y * math.cos(omega * t) - x) / math.sin(omega * t)


def rk4_shooting_action(x: float, y: float, t: float, omega: float = 1.0, steps: int = 4000) -> float:
    """Action of the extremal from ``x`` to ``y`` by plain RK4 plus secant shooting."""

    def run(v0):
        h = t / steps
        s = np.array([x, v0, 0.0])

        def f(s):
            q, v, _ = s
            return np.array([v, -omega * omega * q, 0.5 * v * v - 0.5 * omega * omega * q * q])

        for _ in range(steps):
            k1 = f(s)
            k2 = f(s + 0.5 * h * k1)
            k3 = f(s + 0.5 * h * k2)
            k4 = f(s + h * k3)
            s = s + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        return s

    a, b = (y - x) / t, (y - x) / t + 1.0
    fa, fb = run(a)[0] - y, run(b)[0] - y
    for _ in range(60):
        if abs(fb) < 1e-13 or fb == fa:
            break
        a, b, fa = b, b - fb * (b - a) / (fb - fa), fb
        fb = run(b)[0] - y
    return float(run(b)[2])


def bisector_ode(horizon: float, seed=(0.0, 1.0), a=(-1.0, 0.0), b=(1.0, 0.0)):
    """Dense solution of ``y' = ((y-a)/|y-a| + (y-b)/|y-b|)/2``."""
    a = np.asarray(a)
    b = np.asarray(b)

    def f(_s, y):
        return 0.5 * ((y - a) / np.linalg.norm(y - a) + (y - b) / np.linalg.norm(y - b))

    return solve_ivp(f, (0.0, horizon), np.asarray(seed, float), rtol=1e-10, atol=1e-12, dense_output=True).sol


def pendulum_branch_profile(x: np.ndarray) -> np.ndarray:
    """Weak KAM profile for ``H = p^2/2 + cos(2 pi x)`` at ``c = 1`` by quadrature.

    ``u' = 2 sin(pi x)`` on ``(0, 1/2)`` and ``u' = -2 sin(pi x)`` on
    ``(1/2, 1)``; the branches meet at the concave kink ``x = 1/2``.
    """
    out = []
    for xi in np.mod(np.asarray(x, dtype=float), 1.0):
        if xi <= 0.5:
            val = quad(lambda s: 2 * math.sin(math.pi * s), 0.0, xi)[0]
        else:
            val = quad(lambda s: 2 * math.sin(math.pi * s), xi, 1.0)[0]
        out.append(val)
    return np.array(out)
