"""Seeded Monte Carlo designs and the replication runner.

Model A (linear extremile model):
    Y = X' beta0 + sigma(X) (eps - e_tau),  X = (1, U1, U2),  beta0 = (1, 2, 3),
where e_tau is the order-tau extremile of eps estimated from 10**6 draws, so
that the conditional tau-extremile of Y is exactly X' beta0.

Model B (misspecified, for the semi-supervised comparison):
    Y = a0 + X' a1 + a2 Q(X) + (1 + X' a3) eps,  X ~ N(0, I_4),
with Q(X) = sum_j X_j**2 by default or (sum_j X_j)**2 with ``pairs="all"``.

Every replication draws from its own stream seeded by
SeedSequence([base_seed, design_code, rep_index]), so results do not depend on
execution order or worker count.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import stats

from .basis import make_basis
from .data import LabeledData, UnlabeledData
from .errors import ConfigError, ExtremileError
from .estimators import fit_ordinary, fit_semisupervised, fit_supervised
from .weights import _extremile_sorted

SCHEMA_VERSION = 1
DEFAULT_TAUS = (0.1, 0.3, 0.5, 0.7, 0.9)
BETA0 = np.array([1.0, 2.0, 3.0])
MODEL_B_PARAMS = (1.0, 0.5, 0.5, 0.5, 0.5, 1.0, 0.5, 0.5, 0.0, 0.0)
DESIGN_CODES = {"model-A": 1, "model-B": 2}
ERROR_CODES = {"normal": 1, "t5": 2, "uniform01": 3}
ERROR_LABELS = {"normal": "N(0,1)", "t5": "t(5)", "uniform01": "U(0,1)"}
SIGMA_MODES = ("constant", "heteroscedastic", "zero")
METHODS_A = ("SL", "OE", "OE-known")
WORKERS_ENV = "EXTREMILE_WORKERS"
UNRELIABLE_SHARE = 0.02
_E_HAT_STREAM = 0xE7


def _draw(error: str, rng: np.random.Generator, size) -> np.ndarray:
    if error == "normal":
        return rng.standard_normal(size)
    if error == "t5":
        return rng.standard_t(5, size)
    return rng.uniform(size=size)


def error_cdf(error: str) -> Callable[[np.ndarray], np.ndarray]:
    return {
        "normal": stats.norm.cdf,
        "t5": stats.t(5).cdf,
        "uniform01": stats.uniform.cdf,
    }[error]


@dataclass(frozen=True)
class SimConfig:
    """One simulation cell: a design, an error law and sample sizes.

    ``N`` lists the unlabeled sizes (model B).  ``oe_bandwidth`` is the kernel
    bandwidth for the ordinary estimator; None means n**(-1/5) and "rule"
    means :func:`extremile.estimators.default_bandwidth`.
    """

    design: str = "model-A"
    error: str = "normal"
    sigma_mode: str = "constant"
    n: int = 500
    N: tuple[int, ...] = (500, 1000, 2000)
    taus: tuple[float, ...] = DEFAULT_TAUS
    reps: int = 500
    base_seed: int = 2024
    methods: tuple[str, ...] | None = None
    basis: str = "polynomial:3"
    oe_kernel: str = "epanechnikov"
    oe_bandwidth: float | str | None = None
    zmap: str = "quadratic"
    pairs: str = "squares"
    alpha2: float = 1.0
    e_hat_draws: int = 10**6

    def __post_init__(self):
        object.__setattr__(self, "N", tuple(int(v) for v in np.atleast_1d(self.N)))
        object.__setattr__(self, "taus", tuple(float(t) for t in np.atleast_1d(self.taus)))
        if self.methods is not None:
            object.__setattr__(self, "methods", tuple(self.methods))
        self.validate()

    def validate(self) -> None:
        if self.design not in DESIGN_CODES:
            raise ConfigError(f"design must be one of {sorted(DESIGN_CODES)}", "design")
        if self.error not in ERROR_CODES:
            raise ConfigError(f"error must be one of {sorted(ERROR_CODES)}", "error")
        if self.sigma_mode not in SIGMA_MODES:
            raise ConfigError(f"sigma_mode must be one of {SIGMA_MODES}", "sigma_mode")
        if int(self.reps) < 1:
            raise ConfigError("reps must be at least 1", "reps")
        if not self.taus or any(not 0.0 < t < 1.0 for t in self.taus):
            raise ConfigError("taus must be a non-empty list of levels in (0, 1)", "taus")
        if any(v < 0 for v in self.N):
            raise ConfigError("unlabeled sizes must be non-negative", "N")
        if self.pairs not in ("squares", "all"):
            raise ConfigError("pairs must be 'squares' or 'all'", "pairs")
        if not 0 <= int(self.base_seed) < 2**64:
            raise ConfigError("base_seed must be a 64-bit unsigned integer", "base_seed")
        try:
            q = make_basis(self.basis).q
        except ExtremileError as exc:
            raise ConfigError(str(exc), "basis") from None
        p = 3 if self.design == "model-A" else 5
        if self.n < p * q:
            raise ConfigError(f"n={self.n} is below p*q={p * q}", "n")
        allowed = METHODS_A if self.design == "model-A" else ("SL", "SSL")
        for m in self.methods or ():
            if m not in allowed:
                raise ConfigError(f"method {m!r} not available for {self.design}; choose from {allowed}",
                                  "methods")

    @property
    def active_methods(self) -> tuple[str, ...]:
        if self.methods is not None:
            return self.methods
        return ("SL", "OE") if self.design == "model-A" else ("SL", "SSL")

    def rng(self, rep_index: int) -> np.random.Generator:
        ss = np.random.SeedSequence([int(self.base_seed), DESIGN_CODES[self.design], int(rep_index)])
        return np.random.default_rng(ss)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["N"] = list(self.N)
        d["taus"] = list(self.taus)
        d["methods"] = list(self.active_methods)
        return d


@lru_cache(maxsize=16)
def _sorted_error_sample(error: str, draws: int, seed: int) -> np.ndarray:
    ss = np.random.SeedSequence([int(seed), _E_HAT_STREAM, ERROR_CODES[error]])
    out = np.sort(_draw(error, np.random.default_rng(ss), draws))
    out.setflags(write=False)
    return out


@lru_cache(maxsize=256)
def e_hat(error: str, tau: float, draws: int = 10**6, seed: int = 2024) -> float:
    """Sample extremile of ``draws`` seeded error draws (cached)."""
    return _extremile_sorted(_sorted_error_sample(error, int(draws), int(seed)), float(tau))


def sigma_x(X: np.ndarray, mode: str) -> np.ndarray:
    if mode == "constant":
        return np.full(X.shape[0], 0.5)
    if mode == "heteroscedastic":
        return 0.4 * np.sqrt(1.0 + np.abs(X[:, 1]) + np.abs(X[:, 2]))
    return np.zeros(X.shape[0])


@dataclass(frozen=True)
class ModelADraw:
    """Covariates and raw errors of one replication, shared across levels."""

    X: np.ndarray
    eps: np.ndarray
    sigma: np.ndarray

    def labeled(self, config: SimConfig, tau: float) -> LabeledData:
        shift = e_hat(config.error, tau, config.e_hat_draws, config.base_seed)
        return LabeledData(self.X, self.X @ BETA0 + self.sigma * (self.eps - shift))

    def known_cdf(self, config: SimConfig, tau: float):
        """True conditional CDF of Y given X for level ``tau``."""
        F = error_cdf(config.error)
        shift = e_hat(config.error, tau, config.e_hat_draws, config.base_seed)

        def cdf(y, X):
            s = sigma_x(X, config.sigma_mode)
            r = y - X @ BETA0
            # zero scale: the conditional law is a point mass at X'beta0
            return np.where(s > 0, F(r / np.where(s > 0, s, 1.0) + shift), (r >= 0).astype(float))

        return cdf


def draw_model_a(config: SimConfig, rep_index: int) -> ModelADraw:
    rng = config.rng(rep_index)
    X = np.column_stack([np.ones(config.n), rng.uniform(size=(config.n, 2))])
    eps = _draw(config.error, rng, config.n)
    return ModelADraw(X, eps, sigma_x(X, config.sigma_mode))


def gen_model_a(config: SimConfig, rep_index: int, tau: float | None = None) -> LabeledData:
    """Model A dataset for one replication at level ``tau`` (default: first level)."""
    tau = config.taus[0] if tau is None else tau
    return draw_model_a(config, rep_index).labeled(config, tau)


def _model_b_response(X: np.ndarray, eps: np.ndarray, config: SimConfig) -> np.ndarray:
    a0, a1, a2, a3 = (MODEL_B_PARAMS[0], np.array(MODEL_B_PARAMS[1:5]), config.alpha2,
                      np.array(MODEL_B_PARAMS[6:10]))
    quad = np.sum(X * X, axis=1) if config.pairs == "squares" else np.sum(X, axis=1) ** 2
    return a0 + X @ a1 + a2 * quad + (1.0 + X @ a3) * eps


def gen_model_b(config: SimConfig, rep_index: int) -> tuple[LabeledData, UnlabeledData]:
    """Labeled sample of size n and unlabeled covariates of size max(N).

    Smaller unlabeled sets are the leading rows of the returned one.
    """
    lab_ss, unl_ss = np.random.SeedSequence(
        [int(config.base_seed), DESIGN_CODES[config.design], int(rep_index)]
    ).spawn(2)
    rl = np.random.default_rng(lab_ss)
    X = rl.standard_normal((config.n, 4))
    Y = _model_b_response(X, _draw(config.error, rl, config.n), config)
    Nmax = max(config.N) if config.N else 0
    Xu = np.random.default_rng(unl_ss).standard_normal((Nmax, 4))
    return (LabeledData(np.column_stack([np.ones(config.n), X]), Y),
            UnlabeledData(np.column_stack([np.ones(Nmax), Xu])))


def tae(beta_hat, beta_true) -> float:
    """Total absolute error sum_j |beta_hat_j - beta_true_j|."""
    a = np.asarray(beta_hat, dtype=float).ravel()
    b = np.asarray(beta_true, dtype=float).ravel()
    if a.shape != b.shape:
        raise ConfigError(f"dimension mismatch: {a.size} vs {b.size}")
    return float(np.sum(np.abs(a - b)))


def _oe_bandwidth(config: SimConfig):
    if config.oe_bandwidth is None:
        return config.n ** (-0.2)
    if config.oe_bandwidth == "rule":
        return None
    return float(config.oe_bandwidth)


_FIT_ERRORS = (ExtremileError, np.linalg.LinAlgError, FloatingPointError)


def _rep_model_a(config: SimConfig, rep_index: int) -> dict:
    draw = draw_model_a(config, rep_index)
    out = {}
    for tau in config.taus:
        data = draw.labeled(config, tau)
        for m in config.active_methods:
            try:
                if m == "SL":
                    beta = fit_supervised(data, config.basis, [tau]).beta[tau]
                elif m == "OE":
                    beta = fit_ordinary(data, tau, _oe_bandwidth(config), config.oe_kernel).beta
                else:
                    beta = fit_ordinary(data, tau, cdf=draw.known_cdf(config, tau)).beta
                out[(m, None, tau)] = beta
            except _FIT_ERRORS as exc:
                out[(m, None, tau)] = exc
    return out


def _rep_model_b(config: SimConfig, rep_index: int) -> dict:
    labeled, unlabeled = gen_model_b(config, rep_index)
    out = {}
    if "SL" in config.active_methods:
        try:
            fit = fit_supervised(labeled, config.basis, config.taus)
            for t in config.taus:
                out[("SL", None, t)] = fit.beta[t]
        except _FIT_ERRORS as exc:
            for t in config.taus:
                out[("SL", None, t)] = exc
    if "SSL" in config.active_methods:
        for N in config.N:
            try:
                fit = fit_semisupervised(labeled, UnlabeledData(unlabeled.X[:N]), config.zmap,
                                         config.basis, config.taus)
                for t in config.taus:
                    out[("SSL", N, t)] = fit.beta[t]
            except _FIT_ERRORS as exc:
                for t in config.taus:
                    out[("SSL", N, t)] = exc
    return out


def run_one(config: SimConfig, rep_index: int) -> dict:
    """Estimates (or the raised error) keyed by (method, N, tau) for one replication."""
    if config.design == "model-A":
        return _rep_model_a(config, rep_index)
    return _rep_model_b(config, rep_index)


def _run_chunk(args):
    config, indices = args
    return [run_one(config, i) for i in indices]


def _workers(workers: int | None) -> int:
    if workers is None:
        try:
            workers = int(os.environ.get(WORKERS_ENV, "1"))
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer", WORKERS_ENV) from None
    return max(1, int(workers))


def _sd(x: np.ndarray):
    return float(np.std(x, ddof=1)) if len(x) > 1 else None


@dataclass(frozen=True)
class SimSummary:
    """Aggregated replication results.

    ``rows`` holds one record per (method, N, tau) and, for model B, per
    coefficient.  Model A rows carry the mean and sd of TAE; model B rows carry
    the mean and sd of each coefficient plus, for SSL, the ARE against SL.
    """

    config: SimConfig
    rows: tuple[dict, ...]
    failures: dict = field(default_factory=dict)
    attempted: int = 0

    @property
    def unreliable(self) -> bool:
        return any(v > UNRELIABLE_SHARE * self.attempted for v in self.failures.values())

    def cell(self, method: str, tau: float, N: int | None = None, coord: int | None = None) -> dict:
        for r in self.rows:
            if r["method"] == method and r["tau"] == tau and r["N"] == N and r.get("coord") == coord:
                return r
        raise KeyError((method, tau, N, coord))

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema_version": SCHEMA_VERSION,
                "config": self.config.to_dict(),
                "attempted": self.attempted,
                "failures": self.failures,
                "unreliable": self.unreliable,
                "rows": list(self.rows),
            },
            indent=2,
        )

    def to_csv(self) -> str:
        keys = ["design", "error", "sigma_mode", "method", "N", "tau", "coord", "mean", "sd", "are",
                "n_ok"]
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in keys})
        return buf.getvalue()

    def table(self) -> str:
        return format_table([self])


def _aggregate(config: SimConfig, results: list[dict]) -> SimSummary:
    failures: dict[str, int] = {}
    estimates: dict[tuple, list] = {}
    for res in results:
        for key, val in res.items():
            if isinstance(val, Exception):
                label = key[0] + ("" if key[1] is None else f" N={key[1]}") + f" tau={key[2]:g}"
                failures[label] = failures.get(label, 0) + 1
                continue
            estimates.setdefault(key, []).append(val)
    base = {"design": config.design, "error": config.error,
            "sigma_mode": config.sigma_mode if config.design == "model-A" else None}
    rows = []
    for (method, N, tau), vals in sorted(estimates.items(), key=lambda kv: _order(kv[0])):
        B = np.array(vals)
        if config.design == "model-A":
            t = np.array([tae(b, BETA0) for b in B])
            rows.append({**base, "method": method, "N": N, "tau": tau, "coord": None,
                         "mean": float(t.mean()), "sd": _sd(t), "are": None, "n_ok": len(t)})
            continue
        sl = estimates.get(("SL", None, tau))
        for j in range(B.shape[1]):
            sd = _sd(B[:, j])
            are = None
            if method == "SSL" and sl is not None and sd:
                sd_sl = _sd(np.array(sl)[:, j])
                are = sd_sl / sd if sd_sl is not None else None
            rows.append({**base, "method": method, "N": N, "tau": tau, "coord": j,
                         "mean": float(B[:, j].mean()), "sd": sd, "are": are, "n_ok": len(B)})
    return SimSummary(config, tuple(rows), failures, config.reps)


def _order(key):
    method, N, tau = key
    return (tau, method, -1 if N is None else N)


def run_replications(config: SimConfig, workers: int | None = None) -> SimSummary:
    """Run ``config.reps`` replications and aggregate them in index order.

    ``workers`` (default: the EXTREMILE_WORKERS environment variable, else 1)
    spreads replications over processes without changing the result.
    """
    workers = _workers(workers)
    for t in config.taus:
        e_hat(config.error, t, config.e_hat_draws, config.base_seed)
    idx = list(range(config.reps))
    if workers == 1:
        results = [run_one(config, i) for i in idx]
    else:
        size = math.ceil(len(idx) / (4 * workers))
        chunks = [(config, idx[i:i + size]) for i in range(0, len(idx), size)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = [r for part in ex.map(_run_chunk, chunks) for r in part]
    return _aggregate(config, results)


def _fmt(mean, sd) -> str:
    return f"{mean:.3f} ({sd:.3f})" if sd is not None else f"{mean:.3f} (  -  )"


def format_table(summaries: list[SimSummary]) -> str:
    """Plain-text summary table.

    Model A: one block per error law, a row per method, a column per level.
    Model B: one block per level, a row per coefficient with SL, SSL per N and
    ARE per N.
    """
    if not summaries:
        return ""
    lines = []
    if summaries[0].config.design == "model-A":
        taus = summaries[0].config.taus
        head = f"{'Error':<8}{'Method':<10}" + "".join(f"{'tau=' + format(t, 'g'):>17}" for t in taus)
        lines += [head, "-" * len(head)]
        for s in summaries:
            for k, m in enumerate(s.config.active_methods):
                label = ERROR_LABELS[s.config.error] if k == 0 else ""
                cells = []
                for t in taus:
                    try:
                        r = s.cell(m, t)
                        cells.append(f"{_fmt(r['mean'], r['sd']):>17}")
                    except KeyError:
                        cells.append(f"{'n/a':>17}")
                lines.append(f"{label:<8}{m:<10}" + "".join(cells))
            lines.append("-" * len(head))
        return "\n".join(lines)
    for s in summaries:
        c = s.config
        head = (f"{'tau':<6}{'SL':>16}" + "".join(f"{'SSL N=' + str(N):>16}" for N in c.N)
                + "".join(f"{'ARE N=' + str(N):>12}" for N in c.N))
        lines += [f"Error: {ERROR_LABELS[c.error]}", head, "-" * len(head)]
        for t in c.taus:
            for j in range(5):
                row = f"{(format(t, 'g') if j == 0 else ''):<6}"
                try:
                    r = s.cell("SL", t, None, j)
                    row += f"{_fmt(r['mean'], r['sd']):>16}"
                except KeyError:
                    row += f"{'n/a':>16}"
                ares = ""
                for N in c.N:
                    try:
                        r = s.cell("SSL", t, N, j)
                        row += f"{_fmt(r['mean'], r['sd']):>16}"
                        ares += f"{r['are']:>12.3f}" if r["are"] is not None else f"{'-':>12}"
                    except KeyError:
                        row += f"{'n/a':>16}"
                        ares += f"{'n/a':>12}"
                lines.append(row + ares)
            lines.append("-" * len(head))
    return "\n".join(lines)


def with_overrides(config: SimConfig, **changes) -> SimConfig:
    return replace(config, **changes)
