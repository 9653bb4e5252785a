"""Ask/tell CMA-ES with warm-start injection.

The engine *maximizes*: candidates of a generation are ranked by descending
fitness (ties keep token order). Candidates are asked one at a time; the
distribution is updated when the popsize-th candidate of a generation has
been told or injected. Partial generations never trigger an update.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DoubleTell, GenerationFull, InvalidFitness, UnknownToken


def default_popsize(d):
    return int(math.floor(4 + 3 * math.log(d)))


@dataclass
class _Candidate:
    token: int
    x: np.ndarray
    fitness: float | None = None
    injected: bool = False


class CMAES:
    """Covariance matrix adaptation evolution strategy.

    Parameters
    ----------
    d : int
        Search space dimension.
    mean : array_like
        Initial distribution mean.
    sigma : float
        Initial step size.
    popsize : int, optional
        Candidates per generation; ``floor(4 + 3 ln d)`` by default.
    seed : int
        Seed for the sampling generator.
    """

    def __init__(self, d, mean, sigma, popsize=None, seed=0):
        d = int(d)
        if d < 1:
            raise ValueError("dimension must be >= 1")
        if not (sigma > 0 and math.isfinite(sigma)):
            raise ValueError("sigma must be positive and finite")
        mean = np.array(mean, dtype=np.float64).reshape(-1)
        if mean.shape != (d,):
            raise ValueError(f"mean must have length {d}")
        lam = default_popsize(d) if popsize is None else int(popsize)
        if lam < 2:
            raise ValueError("popsize must be >= 2")

        self.dim = d
        self.mean = mean
        self.sigma = float(sigma)
        self.cov = np.eye(d)
        self.path_sigma = np.zeros(d)
        self.path_c = np.zeros(d)
        self.generation = 0
        self.rng = np.random.Generator(np.random.PCG64(seed))

        self.popsize = lam
        self.mu = lam // 2
        w = math.log(self.mu + 0.5) - np.log(np.arange(1, self.mu + 1))
        self.weights = w / w.sum()
        self.mu_eff = 1.0 / float(np.sum(self.weights ** 2))
        me = self.mu_eff
        self.c_sigma = (me + 2) / (d + me + 5)
        self.d_sigma = 1 + 2 * max(0.0, math.sqrt((me - 1) / (d + 1)) - 1) + self.c_sigma
        self.c_c = (4 + me / d) / (d + 4 + 2 * me / d)
        self.c_1 = 2 / ((d + 1.3) ** 2 + me)
        self.c_mu = min(1 - self.c_1, 2 * (me - 2 + 1 / me) / ((d + 2) ** 2 + me))
        self.chi_d = math.sqrt(d) * (1 - 1 / (4 * d) + 1 / (21 * d * d))

        self._eigvecs = np.eye(d)
        self._sqrt_eigvals = np.ones(d)
        self._pending: list[_Candidate] = []
        self._index: dict[int, _Candidate] = {}
        self._next_token = 0

    # ------------------------------------------------------------------ API

    def ask(self):
        """Sample one candidate from N(m, sigma^2 C); returns ``(x, token)``."""
        if len(self._pending) >= self.popsize:
            raise GenerationFull(
                f"{self.popsize} candidates already outstanding in generation {self.generation}"
            )
        z = self.rng.standard_normal(self.dim)
        x = self.mean + self.sigma * (self._eigvecs @ (self._sqrt_eigvals * z))
        cand = self._register(x, injected=False)
        return x.copy(), cand.token

    def tell(self, token, fitness):
        cand = self._index.get(token)
        if cand is None:
            raise UnknownToken(f"token {token} was never issued in this generation")
        if cand.fitness is not None:
            raise DoubleTell(f"token {token} was already told")
        cand.fitness = _finite(fitness)
        self._maybe_update()

    def inject(self, x, fitness):
        """Add an already evaluated point to the current generation."""
        fitness = _finite(fitness)
        x = np.array(x, dtype=np.float64).reshape(-1)
        if x.shape != (self.dim,) or not np.all(np.isfinite(x)):
            raise ValueError(f"injected point must be a finite vector of length {self.dim}")
        if len(self._pending) >= self.popsize:
            raise GenerationFull("generation is full of outstanding candidates")
        cand = self._register(x, injected=True)
        cand.fitness = fitness
        self._maybe_update()
        return cand.token

    @property
    def outstanding(self):
        return sum(1 for c in self._pending if c.fitness is None)

    @property
    def pending(self):
        return len(self._pending)

    # ------------------------------------------------------------ internals

    def _register(self, x, injected):
        cand = _Candidate(self._next_token, x, injected=injected)
        self._next_token += 1
        self._pending.append(cand)
        self._index[cand.token] = cand
        return cand

    def _maybe_update(self):
        if len(self._pending) == self.popsize and all(c.fitness is not None for c in self._pending):
            self._update()

    def _update(self):
        d = self.dim
        # stable sort on descending fitness keeps token order among ties
        ranked = sorted(self._pending, key=lambda c: -c.fitness)
        xs = np.array([c.x for c in ranked[: self.mu]])
        old_mean = self.mean
        sigma = self.sigma

        self.mean = self.weights @ xs
        y_w = (self.mean - old_mean) / sigma
        inv_sqrt_c = self._eigvecs @ np.diag(1.0 / self._sqrt_eigvals) @ self._eigvecs.T

        cs = self.c_sigma
        self.path_sigma = (1 - cs) * self.path_sigma + math.sqrt(cs * (2 - cs) * self.mu_eff) * (inv_sqrt_c @ y_w)
        ps_norm = float(np.linalg.norm(self.path_sigma))
        # stall guard: skip the rank-one path update while |p_sigma| is abnormally long
        denom = math.sqrt(1 - (1 - cs) ** (2 * (self.generation + 1)))
        h_sigma = 1.0 if ps_norm / denom < (1.4 + 2 / (d + 1)) * self.chi_d else 0.0

        cc = self.c_c
        self.path_c = (1 - cc) * self.path_c + h_sigma * math.sqrt(cc * (2 - cc) * self.mu_eff) * y_w

        ys = (xs - old_mean) / sigma
        rank_mu = (ys.T * self.weights) @ ys
        rank_one = np.outer(self.path_c, self.path_c) + (1 - h_sigma) * cc * (2 - cc) * self.cov
        self.cov = (1 - self.c_1 - self.c_mu) * self.cov + self.c_1 * rank_one + self.c_mu * rank_mu

        # exponent capped at 1 so a single generation cannot blow sigma up
        self.sigma = sigma * math.exp(min(1.0, (cs / self.d_sigma) * (ps_norm / self.chi_d - 1)))

        self._refresh_eigen()
        self.generation += 1
        self._pending = []
        self._index = {}

    def _refresh_eigen(self):
        c = 0.5 * (self.cov + self.cov.T)
        vals, vecs = np.linalg.eigh(c)
        floor = 1e-14 * float(np.trace(c)) / self.dim
        if vals.min() < floor:
            vals = np.maximum(vals, floor)
            c = (vecs * vals) @ vecs.T
            c = 0.5 * (c + c.T)
        self.cov = c
        self._eigvecs = vecs
        self._sqrt_eigvals = np.sqrt(vals)

    def eigen_floor(self):
        return 1e-14 * float(np.trace(self.cov)) / self.dim


def _finite(fitness):
    try:
        f = float(fitness)
    except (TypeError, ValueError):
        raise InvalidFitness(f"fitness must be a real number, got {fitness!r}") from None
    if not math.isfinite(f):
        raise InvalidFitness(f"fitness must be finite, got {f}")
    return f


def maximize(fn, mean, sigma, budget, popsize=None, seed=0):
    """Run ask/tell on ``fn`` for ``budget`` evaluations; returns (best_x, best_f, es)."""
    es = CMAES(len(mean), mean, sigma, popsize=popsize, seed=seed)
    best_x, best_f = None, -math.inf
    for _ in range(budget):
        x, tok = es.ask()
        f = fn(x)
        if f > best_f:
            best_x, best_f = x, f
        es.tell(tok, f)
    return best_x, best_f, es
