"""Center-of-mass balancing by pre-composition with axial dilations.

For a degree-one map u the functional Phi(a) = mean(u o phi_a) is onto a
neighborhood of zero, so a damped Newton iteration (finite-difference
Jacobian) finds a parameter a* with |Phi(a*)| below tolerance.  The balanced
representative u o phi_{a*} is the right starting point for the flow: its
center of mass stays small, which is what rules out concentration.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import BalanceFailedError, PreconditionError
from .fields import degree, mean
from .mobius import max_pullback_radius, pullback

FD_STEP = 1e-4
MAX_HALVINGS = 8

# symmetric restart seeds tried when the default start stagnates
_SEEDS = [np.zeros(3)] + [s * 0.3 * np.eye(3)[k] for k in range(3) for s in (+1.0, -1.0)]


@dataclass
class BalanceResult:
    a_star: np.ndarray
    residual: float
    iterations: int
    path: list = field(default_factory=list)


def center_functional(u, a):
    """Phi(a) = area-weighted mean of u composed with the dilation phi_a."""
    return mean(pullback(u, a))


def _project_ball(a, a_max):
    n = np.linalg.norm(a)
    if n > a_max:
        return a * (a_max / n)
    return a


def balance(u, tol=1e-6, max_iter=60):
    """Find a* with |center_functional(u, a*)| <= tol.

    Damped Newton with a forward-difference Jacobian; iterates stay inside
    the pullback resolution guard.  On stagnation the iteration restarts from
    a small set of symmetric seeds (origin first, so among nearby roots the
    small-|a| one is preferred).  Raises BalanceFailedError carrying the best
    iterate if the budget runs out.
    """
    if degree(u) != 1:
        raise PreconditionError("balancing requires a degree-one map")
    a_max = max_pullback_radius(u.mesh)
    path = []
    best_a, best_res = np.zeros(3), float("inf")
    iters = 0

    for seed in _SEEDS:
        a = _project_ball(np.asarray(seed, dtype=float), a_max)
        phi = center_functional(u, a)
        res = float(np.linalg.norm(phi))
        path.append(a.copy())
        if res < best_res:
            best_a, best_res = a.copy(), res
        stagnated = False
        while iters < max_iter and not stagnated:
            if res <= tol:
                return BalanceResult(a_star=a, residual=res,
                                     iterations=iters, path=path)
            iters += 1
            jac = np.empty((3, 3))
            for k in range(3):
                step = np.zeros(3)
                step[k] = FD_STEP
                probe = a + step
                if np.linalg.norm(probe) >= a_max:  # difference inward instead
                    probe = a - step
                    jac[:, k] = (phi - center_functional(u, probe)) / FD_STEP
                else:
                    jac[:, k] = (center_functional(u, probe) - phi) / FD_STEP
            try:
                d = np.linalg.solve(jac, -phi)
            except np.linalg.LinAlgError:
                d = np.linalg.lstsq(jac, -phi, rcond=None)[0]
            scale = 1.0
            for _ in range(MAX_HALVINGS + 1):
                cand = _project_ball(a + scale * d, a_max)
                cand_phi = center_functional(u, cand)
                cand_res = float(np.linalg.norm(cand_phi))
                if cand_res < res:
                    a, phi, res = cand, cand_phi, cand_res
                    path.append(a.copy())
                    if res < best_res:
                        best_a, best_res = a.copy(), res
                    break
                scale *= 0.5
            else:
                stagnated = True  # no decrease at any step length: reseed
        if res <= tol:
            return BalanceResult(a_star=a, residual=res, iterations=iters, path=path)
        if iters >= max_iter:
            break

    raise BalanceFailedError(
        f"no parameter with |Phi| <= {tol:g} found in {iters} iterations "
        f"(best residual {best_res:.3e})",
        best=BalanceResult(a_star=best_a, residual=best_res,
                           iterations=iters, path=path))
