"""Method-of-manufactured-solutions fixtures for the water equation.

The forcing term for a prescribed S*(x, t) is derived symbolically with
sympy from the same closed-form constitutive laws, then lambdified; the
solver never sees the symbolic path.
"""

import numpy as np
import sympy as sym

from carbsim.constitutive import MaterialParams


def scaled_params():
    """O(1) material constants so storage and diffusion balance on a unit
    domain and unit time scale (verification fixture, not physics)."""
    return MaterialParams(alpha=2.0, beta=3.0, perm_const_C=1.0, rho_s=1.0,
                          eta=1.0, theta_0=0.5, theta_c=0.25)


def manufactured_water_problem():
    """Returns (params, s_exact(x,t), forcing(x,y,t)) for

    S*(x,t) = 0.5 + 0.2 sin(pi x) exp(-t)  on x in [0, 1].
    """
    p = scaled_params()
    x, t, S = sym.symbols("x t S")
    s = sym.Rational(1, 2) + sym.Rational(1, 5) * sym.sin(sym.pi * x) * sym.exp(-t)

    beta = sym.Integer(3)
    pc = p.alpha * (S ** -beta - 1) ** (1 - sym.Rational(1, 3))
    kr = sym.sqrt(S) * (1 - (1 - S ** beta) ** sym.Rational(1, 3)) ** 2
    mob = -kr * sym.diff(pc, S) / p.eta
    km = p.theta_0 ** 8 / (p.perm_const_C * p.rho_s ** 2)

    flux = mob.subs(S, s) * km * sym.diff(s, x)
    f = p.theta_0 * sym.diff(s, t) - sym.diff(flux, x)

    s_fn = sym.lambdify((x, t), s, "numpy")
    f_fn = sym.lambdify((x, t), f, "numpy")

    def s_exact(xv, tv):
        return np.asarray(s_fn(xv, tv), dtype=float)

    def forcing(xv, yv, tv):
        return np.broadcast_to(np.asarray(f_fn(xv, tv), dtype=float), np.shape(xv)).copy()

    return p, s_exact, forcing
