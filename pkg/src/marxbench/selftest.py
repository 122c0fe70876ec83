"""Built-in correctness checks runnable from the CLI.

Each check recomputes an expected answer from first principles (closed forms,
brute force, or an independent reimplementation) and compares it against the
library. The suite is a fast field diagnostic, not a replacement for the full
test suite.
"""

from __future__ import annotations

import time

import numpy as np

from . import dates
from .config import ExperimentConfig
from .features import build_blocks, build_marx, rotation_matrices
from .fredmd import parse_fredmd
from .harness import run_poos
from .models.linear import fit_elastic_net, fit_ols, lambda_max
from .evaluation import dm_test, gr_fluctuation, loss_panel, records_frame
from .synthetic import synthetic_csv


def _check_rotation(rng: np.random.Generator) -> str | None:
    """Ridge on rotated MA features must match fused ridge on raw lags."""
    for _ in range(20):
        k = int(rng.integers(1, 4))
        p = int(rng.integers(2, 7))
        t = int(rng.integers(p + 5, 41))
        lam = float(rng.choice([0.1, 1.0, 10.0]))
        x = rng.standard_normal((t, k * p))
        y = rng.standard_normal(t)
        c_one, _ = rotation_matrices(p)
        c = np.kron(np.eye(k), c_one.astype(float))
        z = x @ c
        theta = np.linalg.solve(z.T @ z + lam * np.eye(k * p), z.T @ y)
        _, d_one = rotation_matrices(p)
        d = np.kron(np.eye(k), d_one.astype(float))
        beta = np.linalg.solve(x.T @ x + lam * (d.T @ d), x.T @ y)
        gap = np.max(np.abs(c @ theta - beta))
        if gap > 1e-8:
            return f"rotation identity broke: max gap {gap:.2e}"
    return None


def _check_marx_values(rng: np.random.Generator) -> str | None:
    """Moving-average features must equal brute-force window means."""
    t = 40
    months = np.arange(dates.ym(1980, 1), dates.ym(1980, 1) + t)
    x = rng.standard_normal(t)
    block = build_marx(months, x[:, None], 4, ("S",), include_current=True)
    col = list(block.labels).index("MARX:S:P4")
    for i in range(3, t):
        want = x[i - 3 : i + 1].mean()
        got = block.values[i, col]
        if not np.isclose(got, want, atol=1e-12):
            return f"MARX window mean off at row {i}: {got} vs {want}"
    return None


def _check_causality(rng: np.random.Generator) -> str | None:
    """Blocks built as of an origin must not depend on later observations."""
    from .fredmd import RawPanel, stationarize

    full = parse_fredmd(synthetic_csv(n_months=220, seed=11))
    origin = int(full.months[180])
    start = int(full.months[0]) + 12
    cfg = ExperimentConfig()
    lib_full = build_blocks(stationarize(full), full, origin,
                            cfg.feature_params(), window_start=start)
    for _ in range(4):
        cut = 181 + int(rng.integers(0, len(full.months) - 181))
        trunc = RawPanel(full.months[:cut], full.values[:cut],
                         full.mnemonics, full.tcodes)
        lib_cut = build_blocks(stationarize(trunc), trunc, origin,
                               cfg.feature_params(), window_start=start)
        for kind in ("F", "X", "MARX", "MAF", "Level"):
            a, b = lib_full[kind].values, lib_cut[kind].values
            if a.shape != b.shape or not np.array_equal(
                np.nan_to_num(a, nan=-1e30), np.nan_to_num(b, nan=-1e30)
            ):
                return f"{kind} block changed when later rows were appended"
    return None


def _check_enet_kkt(rng: np.random.Generator) -> str | None:
    """Coordinate-descent solutions must satisfy the stationarity conditions."""
    for _ in range(5):
        t, k = 60, 8
        z = rng.standard_normal((t, k))
        y = rng.standard_normal(t)
        alpha = float(rng.choice([0.3, 0.7, 1.0]))
        lam = 0.3 * lambda_max(z, y, alpha)
        fit = fit_elastic_net(z, y, alpha=alpha, lam=lam, tol=1e-9)
        zs = (z - fit.z_mean) / fit.z_std
        ys = (y - fit.y_mean) / fit.y_std
        beta = fit.beta
        grad = -2.0 * zs.T @ (ys - zs @ beta) + 2.0 * lam * (1 - alpha) * beta
        for j in range(k):
            if abs(beta[j]) > 1e-10:
                resid = grad[j] + lam * alpha * np.sign(beta[j])
                if abs(resid) > 1e-5:
                    return f"active-coordinate condition violated: {resid:.2e}"
            elif abs(grad[j]) > lam * alpha + 1e-5:
                return f"zero-coordinate condition violated: {abs(grad[j]):.2e}"
    return None


def _check_ols_exact(rng: np.random.Generator) -> str | None:
    z = rng.standard_normal((50, 4))
    beta = np.array([1.0, -2.0, 0.5, 3.0])
    y = z @ beta + 0.7
    fit = fit_ols(z, y)
    pred = fit.predict(z)
    if np.max(np.abs(pred - y)) > 1e-8:
        return "least squares failed to interpolate a noiseless linear target"
    return None


def _check_gr_matches_dm(rng: np.random.Generator) -> str | None:
    """A fluctuation test over one full-sample window must reproduce the
    global equal-accuracy statistic."""
    t = 120
    d = rng.standard_normal(t) ** 2 - 1.1 * rng.standard_normal(t) ** 2
    dm = dm_test(d, h=3)
    gr = gr_fluctuation(d, window=t, h=3)
    if abs(gr.stats[0] - dm.stat) > 1e-10:
        return f"window-equals-sample mismatch: {gr.stats[0]} vs {dm.stat}"
    return None


def _check_tiny_poos() -> str | None:
    """End-to-end run on a small synthetic panel: every cell must succeed
    and the run must be reproducible."""
    csv = synthetic_csv(n_months=260, seed=5)
    raw = parse_fredmd(csv)
    cfg = ExperimentConfig(
        targets=("INDPRO",), horizons=(1,), models=("AR", "RF"),
        featuresets=("F",), poos_start=dates.ym(1978, 1),
        poos_end=dates.ym(1978, 12), train_start=int(raw.months[0]) + 12,
        rf_n_trees=10,
    )
    stores = []
    for _ in range(2):
        store = run_poos(cfg, raw)
        if store.n_failed:
            first = store.failures()[0]
            return f"cell failed in miniature run: {first.error}"
        frame = records_frame(store.ok_records())
        stores.append(frame.sort_values(list(frame.columns[:5])).reset_index(drop=True))
    a, b = stores
    if not np.allclose(a["forecast"].to_numpy(), b["forecast"].to_numpy(), atol=0.0):
        return "repeated run produced different forecasts"
    panel = loss_panel(a, "INDPRO", 1)
    if len(panel.months) != 12:
        return f"expected 12 scored months, found {len(panel.months)}"
    return None


CHECKS = [
    ("moving-average rotation identity", _check_rotation),
    ("moving-average window values", _check_marx_values),
    ("no information leak across vintages", _check_causality),
    ("elastic net optimality conditions", _check_enet_kkt),
    ("least squares interpolation", _check_ols_exact),
    ("fluctuation test consistency", _check_gr_matches_dm),
    ("miniature end-to-end run", _check_tiny_poos),
]


def run_selftest(echo=print) -> bool:
    """Run every check; return True iff all pass."""
    rng = np.random.default_rng(20200814)
    ok = True
    for name, check in CHECKS:
        start = time.perf_counter()
        try:
            failure = check(rng) if check.__code__.co_argcount else check()
        except Exception as exc:  # a crash is a failure, not an abort
            failure = f"raised {type(exc).__name__}: {exc}"
        secs = time.perf_counter() - start
        if failure is None:
            echo(f"PASS {name} ({secs:.1f}s)")
        else:
            ok = False
            echo(f"FAIL {name} ({secs:.1f}s): {failure}")
    echo("self-test " + ("passed" if ok else "FAILED"))
    return ok
