from typing import List, Optional, Sequence

import numpy as np

from mobipower.decorators import allocator
from mobipower.errors import AllocatorError
from mobipower.models import Algorithm
from mobipower.netsim import sinr, spectral_efficiency

GRID_MAX_LINKS = 3
_GRID_CHUNK = 200_000

# Stopping tolerances on the change of the per-link mean rate (bps/Hz).
# Both solvers produce the same iterates, only the stopping point differs.
WMMSE_TOLERANCE = 2e-3
FP_TOLERANCE = 5e-3
MAX_ITERATIONS = 500


class AllocatorResult:
    powers: np.ndarray
    iterations: int
    objective_trace: List[float]

    def __init__(
        self, powers: np.ndarray, iterations: int, objective_trace: List[float]
    ):
        self.powers = powers
        self.iterations = iterations
        self.objective_trace = objective_trace

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


def sum_rate_at(gains: np.ndarray, powers: np.ndarray, noise: float) -> float:
    return float(spectral_efficiency(sinr(gains, powers, noise)).sum())


def full_power(N: int, pmax: float) -> np.ndarray:
    return np.full(N, float(pmax))


def random_power(N: int, pmax: float, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0, pmax, N)


@allocator(Algorithm.FULL)
def full_allocation(
    gains: np.ndarray, pmax: float, noise: float, **kwargs
) -> AllocatorResult:
    powers = full_power(len(gains), pmax)
    return AllocatorResult(powers, 0, [sum_rate_at(gains, powers, noise)])


@allocator(Algorithm.RANDOM)
def random_allocation(
    gains: np.ndarray, pmax: float, noise: float, rng=None, **kwargs
) -> AllocatorResult:
    if rng is None:
        raise AllocatorError("random: an rng is required")
    powers = random_power(len(gains), pmax, rng)
    return AllocatorResult(powers, 0, [sum_rate_at(gains, powers, noise)])


def _safe_divide(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    return np.divide(
        numerator,
        denominator,
        out=np.zeros_like(numerator, dtype=float),
        where=denominator > 0,
    )


def _converged(trace: List[float], tol: float, links: int) -> bool:
    return abs(trace[-1] - trace[-2]) / links < tol


@allocator(Algorithm.WMMSE)
def wmmse(
    gains: np.ndarray,
    pmax: float,
    noise: float,
    tol: Optional[float] = None,
    max_iter: int = MAX_ITERATIONS,
    **kwargs,
) -> AllocatorResult:
    """
    Scalar WMMSE with unit weights from full power. gains[m, n] is the gain from
    transmitter m to receiver n; the amplitude v = sqrt(p) is clamped to
    [0, sqrt(pmax)]. Stops once the per-link mean rate moves by less than `tol`.
    """
    tol = WMMSE_TOLERANCE if tol is None else tol
    direct = np.sqrt(np.diag(gains))
    v = np.full(len(gains), np.sqrt(pmax))
    trace = [sum_rate_at(gains, v**2, noise)]

    iterations = 0
    while iterations < max_iter:
        received = gains.T @ v**2 + noise
        u = direct * v / received
        w = 1 / (1 - u * direct * v)
        v = np.clip(
            _safe_divide(w * u * direct, gains @ (w * u**2)), 0, np.sqrt(pmax)
        )

        iterations += 1
        trace.append(sum_rate_at(gains, v**2, noise))
        if _converged(trace, tol, len(gains)):
            break

    return AllocatorResult(v**2, iterations, trace)


@allocator(Algorithm.FP)
def fp(
    gains: np.ndarray,
    pmax: float,
    noise: float,
    tol: Optional[float] = None,
    max_iter: int = MAX_ITERATIONS,
    **kwargs,
) -> AllocatorResult:
    """
    Fractional programming with the quadratic transform and unit weights, from
    full power. With y_n^2 = w_n u_n^2 its iterates coincide with `wmmse`; the
    looser default tolerance makes it stop earlier.
    """
    tol = FP_TOLERANCE if tol is None else tol
    direct = np.diag(gains)
    p = np.full(len(gains), float(pmax))
    trace = [sum_rate_at(gains, p, noise)]

    iterations = 0
    while iterations < max_iter:
        gamma = sinr(gains, p, noise)
        total = gains.T @ p + noise
        y = np.sqrt((1 + gamma) * direct * p) / total
        p = np.clip(
            _safe_divide(y**2 * (1 + gamma) * direct, (gains @ y**2) ** 2), 0, pmax
        )

        iterations += 1
        trace.append(sum_rate_at(gains, p, noise))
        if _converged(trace, tol, len(gains)):
            break

    return AllocatorResult(p, iterations, trace)


def fp_delayed(
    gain_history: Sequence[np.ndarray],
    pmax: float,
    noise: float,
    tol: Optional[float] = None,
    max_iter: int = MAX_ITERATIONS,
) -> List[np.ndarray]:
    """
    Powers for every slot of `gain_history`: slot t uses FP solved on slot t-1's
    gains, slot 0 uses full power.
    """
    powers = []
    previous: Optional[np.ndarray] = None
    for gains in gain_history:
        if previous is None:
            powers.append(full_power(len(gains), pmax))
        else:
            solved = fp(previous, pmax, noise, tol=tol, max_iter=max_iter)
            powers.append(solved.powers)
        previous = gains
    return powers


@allocator(Algorithm.GRID)
def grid_oracle(
    gains: np.ndarray, pmax: float, noise: float, grid_points: int = 101, **kwargs
) -> AllocatorResult:
    """
    Exhaustive search over grid_points^N power vectors. Only for N <= 3.
    """
    N = len(gains)
    if N > GRID_MAX_LINKS:
        raise AllocatorError(
            f"grid oracle supports at most {GRID_MAX_LINKS} links, got {N}"
        )

    levels = np.linspace(0, pmax, grid_points)
    best_rate, best_powers = -np.inf, None
    total = grid_points**N

    for start in range(0, total, _GRID_CHUNK):
        index = np.arange(start, min(start + _GRID_CHUNK, total))
        digits = np.stack(
            [(index // grid_points**k) % grid_points for k in range(N - 1, -1, -1)],
            axis=1,
        )
        candidates = levels[digits]

        received = gains[None, :, :] * candidates[:, :, None]
        signal = np.einsum("bnn->bn", received)
        interference = received.sum(axis=1) - signal + noise
        rates = np.log2(1 + signal / interference).sum(axis=1)

        best = int(np.argmax(rates))
        if rates[best] > best_rate:
            best_rate, best_powers = float(rates[best]), candidates[best].copy()

    return AllocatorResult(best_powers, 1, [sum_rate_at(gains, best_powers, noise)])
