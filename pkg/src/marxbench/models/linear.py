"""Linear model families: OLS, elastic net, adaptive lasso, linear boosting.

Penalized fits standardize the regressors and the response internally and
store the statistics, so penalties act on a scale-free problem and scaling
y by a constant scales predictions by exactly that constant.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numba import njit

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    """Coordinate descent failed to converge within the sweep budget."""


class SchemaError(ValueError):
    """Prediction input does not match the training design."""


def check_columns(n_trained: int, z: np.ndarray, trained_labels, labels) -> None:
    if z.ndim != 2 or z.shape[1] != n_trained:
        got = z.shape[1] if z.ndim == 2 else z.shape
        raise SchemaError(f"feature count mismatch: got {got}, trained on {n_trained}")
    if labels is not None and trained_labels is not None and tuple(labels) != tuple(trained_labels):
        missing = sorted(set(trained_labels) - set(labels))
        extra = sorted(set(labels) - set(trained_labels))
        raise SchemaError(f"feature label mismatch: missing={missing}, extra={extra}")


def standardize_columns(z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Center and scale columns; zero-variance columns get std 1 (stay zero)."""
    mean = z.mean(axis=0)
    std = z.std(axis=0)
    std = np.where(std == 0, 1.0, std)
    return (z - mean) / std, mean, std


@dataclass
class FittedLinear:
    """Linear predictor in standardized coordinates.

    predict(z) = y_mean + y_std * ((z - z_mean) / z_std) @ beta
    """

    family: str
    beta: np.ndarray
    z_mean: np.ndarray
    z_std: np.ndarray
    y_mean: float
    y_std: float
    labels: tuple[str, ...] | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return len(self.beta)

    def predict(self, z: np.ndarray, labels=None) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        check_columns(self.n_features, z, self.labels, labels)
        zs = (z - self.z_mean) / self.z_std
        return self.y_mean + self.y_std * (zs @ self.beta)

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "kind": "linear",
            "family": self.family,
            "beta": self.beta.tolist(),
            "z_mean": self.z_mean.tolist(),
            "z_std": self.z_std.tolist(),
            "y_mean": self.y_mean,
            "y_std": self.y_std,
            "labels": list(self.labels) if self.labels is not None else None,
        }


def fit_ols(z: np.ndarray, y: np.ndarray, labels=None, family: str = "OLS") -> FittedLinear:
    """Least squares with intercept; rank-deficient designs fall back to a
    tiny ridge (1e-8) with a warning."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    y = np.asarray(y, dtype=float)
    t, k = z.shape
    if t <= k:
        raise ValueError(f"need more rows than columns: T={t}, K={k}")
    design = np.column_stack([np.ones(t), z])
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    ridge_fallback = rank < k + 1
    if ridge_fallback:
        log.warning("rank-deficient design (rank %d < %d); tiny-ridge fallback", rank, k + 1)
        gram = design.T @ design + 1e-8 * np.eye(k + 1)
        coef = np.linalg.solve(gram, design.T @ y)
    resid = y - design @ coef
    ssr = float(resid @ resid)
    return FittedLinear(
        family=family,
        beta=coef[1:],
        z_mean=np.zeros(k),
        z_std=np.ones(k),
        y_mean=float(coef[0]),
        y_std=1.0,
        labels=tuple(labels) if labels is not None else None,
        meta={"ssr": ssr, "n_params": k + 1, "rank": int(rank), "ridge_fallback": ridge_fallback},
    )


@njit(cache=True)
def _enet_cd(zs, ys, lam, alpha, beta, max_sweeps, tol):
    # cyclic coordinate descent; converged once a sweep moves no coefficient
    # by tol or more. The final max move bounds the stationarity residual up
    # to a factor of (n_j + ridge part), so it doubles as the gap proxy.
    t, k = zs.shape
    nj = np.empty(k)
    for j in range(k):
        s = 0.0
        for i in range(t):
            s += zs[i, j] * zs[i, j]
        nj[j] = s
    r = ys.copy()
    for j in range(k):
        if beta[j] != 0.0:
            for i in range(t):
                r[i] -= zs[i, j] * beta[j]
    thr = lam * alpha / 2.0
    denom_add = lam * (1.0 - alpha)
    max_d = 0.0
    for sweep in range(max_sweeps):
        max_d = 0.0
        for j in range(k):
            if nj[j] == 0.0:
                continue
            bj = beta[j]
            rho = nj[j] * bj
            for i in range(t):
                rho += zs[i, j] * r[i]
            if rho > thr:
                nb = (rho - thr) / (nj[j] + denom_add)
            elif rho < -thr:
                nb = (rho + thr) / (nj[j] + denom_add)
            else:
                nb = 0.0
            d = nb - bj
            if d != 0.0:
                for i in range(t):
                    r[i] -= zs[i, j] * d
                beta[j] = nb
                if abs(d) > max_d:
                    max_d = abs(d)
        if max_d < tol:
            return sweep + 1, max_d, True
    return max_sweeps, max_d, False


def lambda_max(z: np.ndarray, y: np.ndarray, alpha: float) -> float:
    """Smallest penalty zeroing every coefficient at mixing weight alpha,
    computed on the internally standardized problem."""
    if alpha <= 0:
        raise ValueError("lambda_max requires alpha > 0")
    zs, _, _ = standardize_columns(np.atleast_2d(np.asarray(z, dtype=float)))
    y = np.asarray(y, dtype=float)
    ystd = y.std() or 1.0
    ys = (y - y.mean()) / ystd
    return float(2.0 * np.max(np.abs(zs.T @ ys)) / alpha)


def fit_elastic_net(
    z: np.ndarray,
    y: np.ndarray,
    alpha: float,
    lam: float,
    labels=None,
    max_sweeps: int = 20000,
    tol: float = 1e-4,
    family: str = "EN",
) -> FittedLinear:
    """Coordinate-descent minimizer of sum (y - Zb)^2 + lam * sum_k
    (alpha |b_k| + (1 - alpha) b_k^2), intercept unpenalized."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha outside [0, 1]: {alpha}")
    if lam < 0:
        raise ValueError(f"negative penalty: {lam}")
    z = np.atleast_2d(np.asarray(z, dtype=float))
    y = np.asarray(y, dtype=float)
    zs, zm, zstd = standardize_columns(z)
    ym = float(y.mean())
    ystd = float(y.std()) or 1.0
    ys = (y - ym) / ystd
    beta = np.zeros(z.shape[1])
    sweeps, delta, ok = _enet_cd(
        np.asfortranarray(zs), ys, float(lam), float(alpha), beta, max_sweeps, tol
    )
    if not ok:
        raise ConvergenceError(
            f"coordinate descent did not converge in {max_sweeps} sweeps "
            f"(last max coefficient change {delta:.3e})"
        )
    return FittedLinear(
        family=family,
        beta=beta,
        z_mean=zm,
        z_std=zstd,
        y_mean=ym,
        y_std=ystd,
        labels=tuple(labels) if labels is not None else None,
        meta={"alpha": alpha, "lam": lam, "sweeps": int(sweeps),
              "n_nonzero": int(np.count_nonzero(beta))},
    )


def fit_adaptive_lasso(
    z: np.ndarray,
    y: np.ndarray,
    lam_ridge: float,
    lam_lasso: float,
    gamma: float = 1.0,
    labels=None,
    max_sweeps: int = 20000,
    tol: float = 1e-4,
) -> FittedLinear:
    """Two-stage adaptive lasso.

    Stage 1 is a ridge fit; its coefficient magnitudes (power gamma) rescale
    the columns so a plain lasso in stage 2 applies weights 1/|b|^gamma.
    Coefficients with stage-1 magnitude below 1e-12 are excluded outright.
    """
    if lam_ridge < 0 or lam_lasso < 0:
        raise ValueError("penalties must be >= 0")
    z = np.atleast_2d(np.asarray(z, dtype=float))
    y = np.asarray(y, dtype=float)
    zs, zm, zstd = standardize_columns(z)
    ym = float(y.mean())
    ystd = float(y.std()) or 1.0
    ys = (y - ym) / ystd
    k = z.shape[1]

    gram = zs.T @ zs + lam_ridge * np.eye(k)
    b_ridge = np.linalg.solve(gram, zs.T @ ys)

    scale = np.abs(b_ridge) ** gamma
    keep = np.abs(b_ridge) >= 1e-12
    if not keep.all():
        log.debug("adaptive lasso: %d features excluded by near-zero stage-1 weight",
                  int((~keep).sum()))
    beta = np.zeros(k)
    if keep.any():
        zt = zs[:, keep] * scale[keep]
        u = np.zeros(int(keep.sum()))
        sweeps, delta, ok = _enet_cd(
            np.asfortranarray(zt), ys, float(lam_lasso), 1.0, u, max_sweeps, tol
        )
        if not ok:
            raise ConvergenceError(
                f"adaptive-lasso stage 2 did not converge in {max_sweeps} sweeps "
                f"(last max coefficient change {delta:.3e})"
            )
        beta[keep] = u * scale[keep]
    return FittedLinear(
        family="AL",
        beta=beta,
        z_mean=zm,
        z_std=zstd,
        y_mean=ym,
        y_std=ystd,
        labels=tuple(labels) if labels is not None else None,
        meta={"lam_ridge": lam_ridge, "lam_lasso": lam_lasso, "gamma": gamma,
              "n_excluded": int((~keep).sum()),
              "n_nonzero": int(np.count_nonzero(beta))},
    )


def fit_linear_boost(
    z: np.ndarray,
    y: np.ndarray,
    n_steps: int,
    eta: float,
    n_draw: int | None = None,
    seed: int = 0,
    labels=None,
) -> FittedLinear:
    """Componentwise L2 boosting over randomly drawn single features.

    Starts at the training mean; each step regresses the residual on each
    of `n_draw` randomly chosen columns, keeps the SSR-minimizing one (ties
    go to the lowest column index) and moves eta of the way.
    """
    if n_steps < 0 or n_steps > 500:
        raise ValueError(f"n_steps outside 0..500: {n_steps}")
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta outside [0, 1]: {eta}")
    z = np.atleast_2d(np.asarray(z, dtype=float))
    y = np.asarray(y, dtype=float)
    t, k = z.shape
    zs, zm, zstd = standardize_columns(z)
    ym = float(y.mean())
    e = y - ym
    if n_draw is None:
        n_draw = min(200, max(1, k // 3))
    n_draw = min(n_draw, k)

    nj = (zs * zs).sum(axis=0)
    rng = np.random.default_rng(seed)
    beta = np.zeros(k)
    chosen: list[int] = []
    loss_path = [float(e @ e)]
    for _ in range(n_steps):
        cand = np.sort(rng.choice(k, size=n_draw, replace=False))
        rho = zs[:, cand].T @ e
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = np.where(nj[cand] > 0, rho * rho / nj[cand], -np.inf)
        best = int(np.argmax(gain))  # first max, so ties go to the lowest index
        j = int(cand[best])
        if not np.isfinite(gain[best]) or gain[best] <= 0:
            loss_path.append(loss_path[-1])
            chosen.append(-1)
            continue
        b = float(rho[best] / nj[j])
        beta[j] += eta * b
        e = e - eta * b * zs[:, j]
        loss_path.append(float(e @ e))
        chosen.append(j)
    return FittedLinear(
        family="LB",
        beta=beta,
        z_mean=zm,
        z_std=zstd,
        y_mean=ym,
        y_std=1.0,
        labels=tuple(labels) if labels is not None else None,
        meta={"n_steps": n_steps, "eta": eta, "n_draw": n_draw, "seed": seed,
              "chosen": chosen, "loss_path": loss_path},
    )
