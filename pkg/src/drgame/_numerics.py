"""Small scalar search routines shared by the solvers."""

import math

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section(fun, lo, hi, tol=1e-10, max_iter=500):
    """Minimize a unimodal scalar function on ``[lo, hi]``.

    Returns ``(x, fun(x))`` for the best point seen once the bracket is
    narrower than ``tol``.
    """
    a, b = float(lo), float(hi)
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        # ties go left so that flat plateaus (e.g. inf) shrink toward lo
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = fun(d)
    candidates = [(fc, c), (fd, d), (fun(a), a), (fun(b), b)]
    fx, x = min(candidates, key=lambda p: (p[0], p[1]))
    return x, fx
