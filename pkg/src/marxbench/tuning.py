"""Hyperparameter selection.

Four selectors share one result type: BIC over lag orders (AR/FM), K-fold
cross-validation over explicit grids (EN), a small genetic algorithm over
continuous boxes (AL, LB), and seeded low-discrepancy search (BT). A cell's
hyperparameters are refreshed on a fixed month interval, 24 by default.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import qmc

from . import dates
from .models import fit_ols, lambda_max

log = logging.getLogger(__name__)

EN_ALPHA_GRID = tuple(round(0.01 * i, 2) for i in range(1, 101))


def _tie_key(hyper: Mapping) -> tuple:
    """Deterministic preference among equal scores: smallest penalty, then
    smallest mixing weight, then the lexical form of the remaining values."""
    lam = hyper.get("lam", hyper.get("lam_lasso", np.inf))
    alpha = hyper.get("alpha", np.inf)
    lexical = json.dumps({k: hyper[k] for k in sorted(hyper)}, sort_keys=True, default=float)
    return (lam, alpha, lexical)


@dataclass
class TuningResult:
    method: str
    chosen: dict
    score: float
    scores: list = field(default_factory=list)  # (hyper dict, score) pairs
    selected_at: int | None = None  # month of the selection window's end

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "chosen": self.chosen,
            "score": self.score,
            "selected_at": self.selected_at,
            "selected_at_ym": dates.ym_str(self.selected_at) if self.selected_at is not None else None,
            "scores": [[h, s] for h, s in self.scores],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TuningResult":
        return cls(
            method=d["method"],
            chosen=d["chosen"],
            score=d["score"],
            scores=[(h, s) for h, s in d.get("scores", [])],
            selected_at=d.get("selected_at"),
        )


def _pick_best(method: str, scored: Sequence[tuple[dict, float]]) -> TuningResult:
    best = None
    best_key = None
    for hyper, score in scored:
        key = (score,) + _tie_key(hyper)
        if best_key is None or key < best_key:
            best_key = key
            best = hyper
    if best is None:
        raise ValueError("no candidates were scored")
    return TuningResult(method=method, chosen=dict(best), score=best_key[0], scores=list(scored))


def select_by_bic(
    builder: Callable[[object], np.ndarray],
    y: np.ndarray,
    candidates: Iterable | None = None,
) -> TuningResult:
    """Pick the candidate design minimizing T log(SSR/T) + p log T.

    ``builder(c)`` returns the design for candidate c (lag orders 1..12 by
    default). Rank-deficient candidates are excluded; if every candidate is,
    that is an error.
    """
    y = np.asarray(y, dtype=float)
    t = len(y)
    if candidates is None:
        candidates = range(1, 13)
    scored = []
    for cand in candidates:
        hyper = dict(cand) if isinstance(cand, Mapping) else {"p": cand}
        z = builder(cand)
        try:
            fitted = fit_ols(z, y)
        except ValueError:
            scored.append((hyper, np.inf))
            continue
        if fitted.meta["ridge_fallback"]:
            scored.append((hyper, np.inf))
            continue
        ssr = max(fitted.meta["ssr"], 1e-300)
        n_params = fitted.meta["n_params"]
        bic = t * np.log(ssr / t) + n_params * np.log(t)
        scored.append((hyper, float(bic)))
    if all(not np.isfinite(s) for _, s in scored):
        raise ValueError("every candidate design is rank deficient")
    return _pick_best("BIC", scored)


def kfold_cv(
    fit_fn: Callable,
    z: np.ndarray,
    y: np.ndarray,
    grid: Sequence[Mapping],
    k: int = 5,
    seed: int = 0,
) -> TuningResult:
    """Mean held-out squared error over K random folds per grid candidate.

    Rows are shuffled into folds with no regard for time order. ``fit_fn(z,
    y, candidate)`` must return an object with ``predict``.
    """
    if k < 2:
        raise ValueError("need at least 2 folds")
    if not grid:
        raise ValueError("empty candidate grid")
    z = np.atleast_2d(np.asarray(z, dtype=float))
    y = np.asarray(y, dtype=float)
    t = len(y)
    if t // k < 2:
        raise ValueError(f"folds would have under 2 rows: T={t}, K={k}")
    rng = np.random.default_rng(seed)
    folds = np.array_split(rng.permutation(t), k)
    scored = []
    for cand in grid:
        sq_sum = 0.0
        try:
            for fold in folds:
                mask = np.ones(t, dtype=bool)
                mask[fold] = False
                fitted = fit_fn(z[mask], y[mask], cand)
                pred = fitted.predict(z[fold])
                sq_sum += float(np.sum((y[fold] - pred) ** 2))
        except Exception as exc:  # degenerate candidate, not a broken cell
            log.debug("candidate %s failed in cross-validation: %s", dict(cand), exc)
            scored.append((dict(cand), np.inf))
            continue
        scored.append((dict(cand), sq_sum / t))
    return _pick_best("KFOLD", scored)


@dataclass(frozen=True)
class SearchDim:
    """One box dimension; log-scale draws and integer rounding optional."""

    lo: float
    hi: float
    log: bool = False
    integer: bool = False

    def __post_init__(self) -> None:
        if self.hi < self.lo:
            raise ValueError(f"empty range [{self.lo}, {self.hi}]")
        if self.log and self.lo <= 0:
            raise ValueError("log-scale dimension needs lo > 0")

    def decode(self, u: float) -> float:
        u = min(max(u, 0.0), 1.0)
        if self.log:
            v = np.exp(np.log(self.lo) + u * (np.log(self.hi) - np.log(self.lo)))
        else:
            v = self.lo + u * (self.hi - self.lo)
        if self.integer:
            v = int(round(v))
            v = min(max(v, int(np.ceil(self.lo))), int(np.floor(self.hi)))
        return float(v) if not self.integer else v


def _decode_point(space: Mapping[str, SearchDim], u: np.ndarray) -> dict:
    return {name: dim.decode(u[i]) for i, (name, dim) in enumerate(space.items())}


def ga_optimize(
    objective: Callable[[Mapping], float],
    space: Mapping[str, SearchDim],
    generations: int = 25,
    population: int = 25,
    seed: int = 0,
) -> TuningResult:
    """Minimize over a box with a small real-coded genetic algorithm.

    Tournament selection of size 3, blend crossover with rate 0.7, Gaussian
    mutation with std 10% of each range, one elite carried over unchanged.
    The best candidate ever evaluated wins, with the usual tie-break.
    """
    rng = np.random.default_rng(seed)
    d = len(space)
    pop = rng.random((population, d))
    scored: list[tuple[dict, float]] = []

    def evaluate_one(genes: np.ndarray) -> float:
        cand = _decode_point(space, genes)
        val = float(objective(cand))
        scored.append((cand, val))
        return val

    fitness = np.array([evaluate_one(g) for g in pop])
    for _ in range(generations - 1):
        elite = int(np.argmin(fitness))
        children = np.empty_like(pop)
        children[0] = pop[elite]
        new_fitness = np.empty(population)
        new_fitness[0] = fitness[elite]
        for c in range(1, population):
            i3 = rng.integers(0, population, size=3)
            pa = pop[i3[np.argmin(fitness[i3])]]
            i3 = rng.integers(0, population, size=3)
            pb = pop[i3[np.argmin(fitness[i3])]]
            if rng.random() < 0.7:
                t = rng.random(d)
                child = t * pa + (1 - t) * pb
            else:
                child = pa.copy()
            child = child + rng.normal(0.0, 0.1, size=d)
            children[c] = np.clip(child, 0.0, 1.0)
            new_fitness[c] = evaluate_one(children[c])
        pop = children
        fitness = new_fitness
    return _pick_best("GA", scored)


def stochastic_search(
    objective: Callable[[Mapping], float],
    space: Mapping[str, SearchDim],
    budget: int = 50,
    seed: int = 0,
) -> TuningResult:
    """Best of `budget` scrambled-Halton draws over the box."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    names = list(space)
    free = [n for n in names if space[n].lo < space[n].hi]
    if free:
        sampler = qmc.Halton(d=len(free), scramble=True, seed=seed)
        draws = sampler.random(budget)
    else:
        draws = np.zeros((budget, 0))
    scored = []
    for row in draws:
        u = np.zeros(len(names))
        for i, name in enumerate(names):
            u[i] = row[free.index(name)] if name in free else 0.0
        cand = _decode_point(space, u)
        scored.append((cand, float(objective(cand))))
    return _pick_best("STOCH", scored)


def schedule(origin: int, last_tuned: int | None, interval: int = 24) -> bool:
    """True when hyperparameters are due for reoptimization at this origin."""
    if interval < 1:
        raise ValueError("interval must be >= 1 month")
    return last_tuned is None or origin - last_tuned >= interval


def build_en_grid(
    z: np.ndarray,
    y: np.ndarray,
    alphas: Sequence[float] = EN_ALPHA_GRID,
    n_lambda: int = 100,
    min_ratio: float = 1e-4,
) -> list[dict]:
    """Elastic-net candidate grid: per mixing weight, a log-spaced penalty
    path from min_ratio * lambda_max up to lambda_max."""
    grid = []
    for alpha in alphas:
        lmax = lambda_max(z, y, alpha)
        if lmax <= 0:
            lams = np.array([0.0])
        else:
            lams = np.geomspace(lmax * min_ratio, lmax, n_lambda)
        for lam in lams:
            grid.append({"alpha": float(alpha), "lam": float(lam)})
    return grid


def cv_en_path(
    z: np.ndarray,
    y: np.ndarray,
    alphas: Sequence[float] = EN_ALPHA_GRID,
    n_lambda: int = 100,
    min_ratio: float = 1e-4,
    k: int = 5,
    seed: int = 0,
    max_sweeps: int = 5000,
    tol: float = 1e-4,
) -> TuningResult:
    """K-fold CV over the elastic-net grid, warm-starting down each penalty
    path per fold. Folds, candidates, pooled scoring and tie-breaking match
    ``kfold_cv`` over ``build_en_grid``; only the solve order differs.
    """
    from .models.linear import _enet_cd, standardize_columns

    if k < 2:
        raise ValueError("need at least 2 folds")
    z = np.atleast_2d(np.asarray(z, dtype=float))
    y = np.asarray(y, dtype=float)
    t = len(y)
    if t // k < 2:
        raise ValueError(f"folds would have under 2 rows: T={t}, K={k}")
    alphas = list(alphas)
    lam_grid: dict[float, np.ndarray] = {}
    for alpha in alphas:
        lmax = lambda_max(z, y, alpha)
        lam_grid[alpha] = (np.array([0.0]) if lmax <= 0
                           else np.geomspace(lmax * min_ratio, lmax, n_lambda))

    rng = np.random.default_rng(seed)
    folds = np.array_split(rng.permutation(t), k)
    sse = {alpha: np.zeros(len(lam_grid[alpha])) for alpha in alphas}
    bad = {alpha: np.zeros(len(lam_grid[alpha]), dtype=bool) for alpha in alphas}
    for fold in folds:
        mask = np.ones(t, dtype=bool)
        mask[fold] = False
        zs, zm, zstd = standardize_columns(z[mask])
        ytr = y[mask]
        ym = float(ytr.mean())
        ystd = float(ytr.std()) or 1.0
        ys = (ytr - ym) / ystd
        zs = np.asfortranarray(zs)
        zte = (z[fold] - zm) / zstd
        for alpha in alphas:
            lams = lam_grid[alpha]
            beta = np.zeros(z.shape[1])
            for li in range(len(lams) - 1, -1, -1):  # large penalty first
                _, _, ok = _enet_cd(zs, ys, float(lams[li]), float(alpha),
                                    beta, max_sweeps, tol)
                if not ok:
                    bad[alpha][li] = True
                pred = ym + ystd * (zte @ beta)
                sse[alpha][li] += float(np.sum((y[fold] - pred) ** 2))
    scored = []
    for alpha in alphas:
        for li, lam in enumerate(lam_grid[alpha]):
            score = np.inf if bad[alpha][li] else sse[alpha][li] / t
            scored.append(({"alpha": float(alpha), "lam": float(lam)}, score))
    return _pick_best("KFOLD", scored)
