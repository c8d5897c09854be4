"""Configure, run, aggregate and persist Monte Carlo experiments.

Every experiment draws one Wigner matrix per ``(N, trial)`` with seed
``derive_seed(base_seed, N, trial)`` and evaluates all grid points (spectral
parameters, evolution times, sub-configurations) on that one sample, so the
eigendecomposition is computed once.  Per-trial values are aggregated in
trial order, which makes results independent of the number of worker threads.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import stats as sstats

from . import __version__
from .ensemble import (
    DISTRIBUTIONS,
    RECIPES,
    chain_avg,
    chain_iso,
    derive_seed,
    heisenberg_pair,
    make_observables,
    sample_wigner,
)
from .mchain import (
    TRACELESS_TOL,
    ChainSpec,
    ConditioningError,
    m_avg,
    m_bound,
    m_matrix,
    m_matrix_q,
    recursion_residual,
)
from .semicircle import SpectralKernel, phi, stieltjes

__all__ = [
    "KINDS",
    "LAYOUTS",
    "SCHEMA_VERSION",
    "CSV_COLUMNS",
    "ConfigError",
    "SchemaError",
    "DegenerateGridError",
    "ExperimentConfig",
    "GridPoint",
    "ResultRecord",
    "ScalingFit",
    "SqrtEtaResult",
    "load_config",
    "read_config_file",
    "resolve_threads",
    "run_experiment",
    "run_locallaw_scan",
    "fit_power_law",
    "fit_scaling",
    "sqrt_eta_rule_test",
    "thermalization_scan",
    "two_scale_clt",
    "identity_suite",
    "random_chain",
    "persist",
    "load",
    "export_csv",
]

KINDS = ("locallaw-scan", "sqrt-eta-rule", "thermalization", "two-scale-clt", "identity-suite")
LAYOUTS = ("conjugate-alternating", "same-half-plane")
FORMS = ("averaged", "isotropic", "both")
SCHEMA_VERSION = 1
MIN_TRIALS = 8
MIN_ETA_N = 10.0
THREADS_ENV = "RESOLVENT_LAB_THREADS"
GRID_KEYS = ("series", "N", "eta", "s")
CSV_COLUMNS = GRID_KEYS + ("statistic", "n", "mean", "median", "q90", "sd", "value")

# salts keep observable seeds disjoint from sample seeds
_OBS_SALT = 0x0B5
_VEC_SALT = 0x7EC


class ConfigError(ValueError):
    """Invalid experiment configuration; ``key`` names the offending field."""

    def __init__(self, key: str, message: str):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


class SchemaError(ValueError):
    """A persisted record has an unexpected schema version or layout."""


class DegenerateGridError(ValueError):
    """Grid points do not support the requested scaling fit."""


def _tuple(x, cast) -> tuple:
    if x is None:
        return ()
    if isinstance(x, str):
        x = [p for p in x.replace(";", ",").split(",") if p.strip()]
    elif np.isscalar(x):
        x = [x]
    return tuple(cast(v) for v in x)


def _bool(x) -> bool:
    if isinstance(x, str):
        low = x.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {x!r}")
    return bool(x)


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment.

    The eta grid is either absolute (``eta``) or given by exponents
    (``eta_exp``, meaning ``eta = N**-gamma``).  The first ``a`` of the ``k``
    matrix slots are traceless observables from ``recipe``; the rest come
    from ``general_recipe``.  ``a_alt`` is the comparison traceless count of
    the sqrt-eta experiment.
    """

    kind: str
    N: tuple = (256,)
    eta: tuple = ()
    eta_exp: tuple = ()
    k: int = 2
    a: int = 2
    a_alt: int = 0
    beta: int = 2
    dist: str = "gaussian"
    trials: int = 64
    seed: int = 0
    recipe: str = "random-hermitian-traceless"
    general_recipe: str = "random-hermitian"
    layout: str = "conjugate-alternating"
    energy: float = 0.0
    form: str = "averaged"
    s: tuple = tuple(float(v) for v in range(11))
    same_observables: bool = True
    randomize_observables: bool = False
    keep_raw: bool = False
    threads: int = 1

    # fields that do not change any computed value
    _NON_SEMANTIC = ("threads", "keep_raw")

    def __post_init__(self):
        conv = {
            "N": lambda v: _tuple(v, int),
            "eta": lambda v: _tuple(v, float),
            "eta_exp": lambda v: _tuple(v, float),
            "s": lambda v: _tuple(v, float),
            "k": int, "a": int, "a_alt": int, "beta": int, "trials": int, "seed": int, "threads": int,
            "energy": float,
            "same_observables": _bool, "randomize_observables": _bool, "keep_raw": _bool,
        }
        for key, fn in conv.items():
            try:
                object.__setattr__(self, key, fn(getattr(self, key)))
            except (TypeError, ValueError) as exc:
                raise ConfigError(key, f"cannot parse {getattr(self, key)!r} ({exc})") from None
        self._validate()

    def _validate(self):
        if self.kind not in KINDS:
            raise ConfigError("kind", f"unknown experiment kind {self.kind!r}; choose from {KINDS}")
        if self.trials < MIN_TRIALS:
            raise ConfigError("trials", f"need at least {MIN_TRIALS} trials, got {self.trials}")
        if not self.N:
            raise ConfigError("N", "grid is empty")
        if any(n < 2 for n in self.N):
            raise ConfigError("N", "dimensions must be at least 2")
        if self.beta not in (1, 2):
            raise ConfigError("beta", f"must be 1 or 2, got {self.beta}")
        if self.dist not in DISTRIBUTIONS:
            raise ConfigError("dist", f"unsupported {self.dist!r}; choose from {DISTRIBUTIONS}")
        for key in ("recipe", "general_recipe"):
            if getattr(self, key) not in RECIPES:
                raise ConfigError(key, f"unknown recipe {getattr(self, key)!r}; choose from {RECIPES}")
        if self.layout not in LAYOUTS:
            raise ConfigError("layout", f"unknown layout {self.layout!r}; choose from {LAYOUTS}")
        if self.form not in FORMS:
            raise ConfigError("form", f"unknown form {self.form!r}; choose from {FORMS}")
        if self.k < 1:
            raise ConfigError("k", "must be positive")
        if not 0 <= self.a <= self.k:
            raise ConfigError("a", f"traceless count must lie in 0..k={self.k}, got {self.a}")
        if not 0 <= self.a_alt <= self.k:
            raise ConfigError("a_alt", f"traceless count must lie in 0..k={self.k}, got {self.a_alt}")
        if self.eta and self.eta_exp:
            raise ConfigError("eta", "give either eta or eta_exp, not both")
        if self.kind == "thermalization":
            if not self.s:
                raise ConfigError("s", "grid is empty")
            if any(v < 0 for v in self.s):
                raise ConfigError("s", "evolution times must be nonnegative")
            return
        if not (self.eta or self.eta_exp):
            raise ConfigError("eta", "grid is empty")
        if any(e <= 0 for e in self.eta):
            raise ConfigError("eta", "values must be positive")
        for n in self.N:
            for e in self.etas_for(n):
                if e * n < MIN_ETA_N:
                    key = "eta" if self.eta else "eta_exp"
                    raise ConfigError(key, f"eta*N = {e * n:.3g} < {MIN_ETA_N:g} at N={n}, eta={e:.4g}")

    def etas_for(self, n: int) -> tuple[float, ...]:
        if self.eta:
            return self.eta
        return tuple(float(n) ** (-g) for g in self.eta_exp)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_mapping(cls, data: Mapping) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        norm = {}
        for key, val in data.items():
            k = key.strip().replace("-", "_")
            if k not in names:
                raise ConfigError(key, "unknown config key")
            norm[k] = val
        if "kind" not in norm:
            raise ConfigError("kind", "missing")
        return cls(**norm)

    def semantic_dict(self) -> dict:
        d = self.to_dict()
        for key in self._NON_SEMANTIC:
            d.pop(key)
        return d

    def config_hash(self) -> str:
        text = json.dumps(self.semantic_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def read_config_file(path: str) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    data: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}", f"expected key = value in {path}")
            key, val = line.split("=", 1)
            data[key.strip()] = val.strip()
    return data


def load_config(path: str | None = None, overrides: Mapping | None = None) -> ExperimentConfig:
    """Config from an optional file with ``overrides`` applied on top."""
    data = read_config_file(path) if path is not None else {}
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_mapping(data)


def resolve_threads(requested: int | None = None) -> int:
    """Worker count; the environment variable wins over the request."""
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(THREADS_ENV, f"not an integer: {env!r}") from None
    else:
        n = requested or 1
    return max(1, n)


@dataclass
class GridPoint:
    series: str
    N: int
    eta: float | None = None
    s: float | None = None
    stats: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)
    raw: dict | None = None


@dataclass
class ResultRecord:
    kind: str
    config: dict
    config_hash: str
    points: list
    summary: dict = field(default_factory=dict)
    seed_rule: str = "SeedSequence(seed, spawn_key=(N, trial))"
    started: str = ""
    finished: str = ""
    version: str = __version__
    schema_version: int = SCHEMA_VERSION

    def series(self, name: str | None = None) -> list:
        if name is None:
            return list(self.points)
        return [p for p in self.points if p.series == name]


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    stderr: float
    x: tuple
    y: tuple

    @property
    def points(self) -> int:
        return len(self.x)


@dataclass
class SqrtEtaResult:
    fit_a: ScalingFit
    fit_alt: ScalingFit
    gap: float
    expected_gap: float
    record: ResultRecord


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _summarize(values: Sequence[float]) -> dict:
    v = np.asarray(values, dtype=float)
    return {
        "n": int(v.size),
        "mean": float(np.mean(v)),
        "median": float(np.median(v)),
        "q90": float(np.quantile(v, 0.9)),
        "sd": float(np.std(v)),
    }


def _map_trials(fn: Callable[[int, int], object], ns: Sequence[int], trials: int, threads: int) -> dict:
    """Evaluate ``fn(N, trial)`` for all pairs; results keyed in fixed order."""
    tasks = [(n, t) for n in ns for t in range(trials)]
    if threads <= 1:
        results = [fn(n, t) for n, t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda nt: fn(*nt), tasks))
    return dict(zip(tasks, results))


def _sample(cfg: ExperimentConfig, n: int, trial: int):
    return sample_wigner(n, cfg.beta, cfg.dist, derive_seed(cfg.seed, n, trial))


def _obs_seed(cfg: ExperimentConfig, n: int, trial: int | None, which: int) -> int:
    if cfg.randomize_observables and trial is not None:
        return derive_seed(cfg.seed, n, trial, _OBS_SALT, which)
    return derive_seed(cfg.seed, n, _OBS_SALT, which)


def _slot_matrices(cfg: ExperimentConfig, n: int, a: int, trial: int | None) -> list:
    real = cfg.beta == 1
    count = 1 if cfg.same_observables else cfg.k
    trl = make_observables(n, cfg.recipe, _obs_seed(cfg, n, trial, 0), count=count, real=real).matrices
    gen = make_observables(n, cfg.general_recipe, _obs_seed(cfg, n, trial, 1), count=count, real=real).matrices
    return [(trl if j < a else gen)[0 if cfg.same_observables else j] for j in range(cfg.k)]


def _zs(cfg: ExperimentConfig, eta: float, count: int) -> list[complex]:
    z = complex(cfg.energy, eta)
    if cfg.layout == "same-half-plane":
        return [z] * count
    return [z if j % 2 == 0 else z.conjugate() for j in range(count)]


def _vectors(cfg: ExperimentConfig, n: int, trial: int | None):
    seed = _obs_seed(cfg, n, trial, _VEC_SALT)
    x, y = make_observables(n, "random-unit-vectors", seed, real=cfg.beta == 1).vectors[:2]
    return x, y


class _Target:
    """A chain with its deterministic value, evaluated per sample."""

    def __init__(self, cfg, n, eta, a, trial):
        mats = _slot_matrices(cfg, n, a, trial)
        flags = [j < a for j in range(cfg.k)]
        self.a = a
        self.forms = ("averaged", "isotropic") if cfg.form == "both" else (cfg.form,)
        self.avg = self.iso = None
        if "averaged" in self.forms:
            self.avg = ChainSpec(tuple(_zs(cfg, eta, cfg.k)), tuple(mats), "averaged", tuple(flags))
            self.avg_M = m_avg(self.avg)
        if "isotropic" in self.forms:
            self.iso = ChainSpec(tuple(_zs(cfg, eta, cfg.k + 1)), tuple(mats), "isotropic", tuple(flags))
            self.xy = _vectors(cfg, n, trial)
            x, y = self.xy
            self.iso_M = complex(np.vdot(x, m_matrix(self.iso).matrix_part @ y))

    def evaluate(self, sample, n, eta, k) -> dict:
        out = {}
        if self.avg is not None:
            err = abs(chain_avg(sample, self.avg) - self.avg_M)
            out["error"] = err
            if self.a == k:
                out["psi_av"] = n * eta ** (k / 2) * err
        if self.iso is not None:
            x, y = self.xy
            err = abs(chain_iso(sample, self.iso, x, y) - self.iso_M)
            out["error_iso"] = err
            if self.a == k:
                out["psi_iso"] = math.sqrt(n * eta ** (k + 1)) * err
        return out


def _locallaw(cfg: ExperimentConfig, series: Sequence[tuple[str, int]], threads: int | None) -> ResultRecord:
    started = _now()
    threads = resolve_threads(threads if threads is not None else cfg.threads)
    fixed = {}
    if not cfg.randomize_observables:
        for n in cfg.N:
            for eta in cfg.etas_for(n):
                for name, a in series:
                    fixed[n, eta, name] = _Target(cfg, n, eta, a, None)

    def task(n, trial):
        sample = _sample(cfg, n, trial)
        out = {}
        for eta in cfg.etas_for(n):
            for name, a in series:
                tgt = fixed.get((n, eta, name)) or _Target(cfg, n, eta, a, trial)
                out[eta, name] = tgt.evaluate(sample, n, eta, cfg.k)
        return out

    results = _map_trials(task, cfg.N, cfg.trials, threads)
    points = []
    for name, _ in series:
        for n in cfg.N:
            for eta in cfg.etas_for(n):
                per = [results[n, t][eta, name] for t in range(cfg.trials)]
                stats_ = {key: _summarize([p[key] for p in per]) for key in per[0]}
                raw = {key: [p[key] for p in per] for key in per[0]} if cfg.keep_raw else None
                points.append(GridPoint(name, n, eta, None, stats_, {}, raw))
    return ResultRecord(cfg.kind, cfg.to_dict(), cfg.config_hash(), points, {}, started=started, finished=_now())


def run_locallaw_scan(config: ExperimentConfig, threads: int | None = None) -> ResultRecord:
    """Errors ``|chain - M|`` and normalized deviations over the (N, eta) grid."""
    if config.kind != "locallaw-scan":
        raise ConfigError("kind", f"run_locallaw_scan needs kind locallaw-scan, got {config.kind!r}")
    return _locallaw(config, [(f"a={config.a}", config.a)], threads)


def fit_power_law(x: Sequence[float], y: Sequence[float]) -> ScalingFit:
    """Least-squares fit of ``log y = slope * log x + intercept``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3:
        raise DegenerateGridError(f"need at least 3 grid points, got {x.size}")
    if np.unique(x).size != x.size:
        raise DegenerateGridError("repeated abscissae")
    if np.any(x <= 0) or np.any(y <= 0):
        raise DegenerateGridError("power-law fit needs positive data")
    res = sstats.linregress(np.log(x), np.log(y))
    stderr = float(res.stderr)
    if not math.isfinite(stderr):
        raise DegenerateGridError("non-finite slope standard error")
    return ScalingFit(float(res.slope), float(res.intercept), stderr, tuple(x.tolist()), tuple(y.tolist()))


def fit_scaling(record: ResultRecord, axis: str, statistic: str = "error", series: str | None = None,
                quantity: str = "median") -> ScalingFit:
    """Slope of ``log(quantity of statistic)`` against ``log`` of ``N`` or ``eta``."""
    if axis not in ("N", "eta"):
        raise ValueError(f"axis must be 'N' or 'eta', got {axis!r}")
    pts = record.series(series)
    names = {p.series for p in pts}
    if len(names) > 1:
        raise DegenerateGridError(f"several series {sorted(names)}; pick one")
    pts = [p for p in pts if statistic in p.stats]
    if axis == "eta":
        ns = {p.N for p in pts}
        if len(ns) != 1:
            raise DegenerateGridError(f"eta fit needs a single N, got {sorted(ns)}")
        xs = [p.eta for p in pts]
    else:
        xs = [p.N for p in pts]
        if len(set(xs)) != len(xs):
            raise DegenerateGridError("N fit needs one eta per N")
    ys = [p.stats[statistic][quantity] for p in pts]
    return fit_power_law(xs, ys)


def sqrt_eta_rule_test(config: ExperimentConfig, alt: ExperimentConfig | None = None,
                       threads: int | None = None, statistic: str = "error") -> SqrtEtaResult:
    """Compare eta-slopes of the error for traceless counts ``a`` and ``a_alt``.

    The expected gap ``slope_a - slope_alt`` is ``(a - a_alt) / 2``.  When
    ``alt`` is given it must match ``config`` in everything except ``a``.
    """
    if config.kind != "sqrt-eta-rule":
        raise ConfigError("kind", f"sqrt_eta_rule_test needs kind sqrt-eta-rule, got {config.kind!r}")
    a_alt = config.a_alt
    if alt is not None:
        mine, theirs = config.semantic_dict(), alt.semantic_dict()
        diff = sorted(key for key in mine if key not in ("a", "a_alt") and mine[key] != theirs[key])
        if diff:
            raise ConfigError(diff[0], f"sub-configurations differ beyond tracelessness: {diff}")
        a_alt = alt.a
    if len(config.N) != 1:
        raise ConfigError("N", "the sqrt-eta experiment runs at a single N")
    name_a, name_alt = f"a={config.a}", f"a'={a_alt}"
    record = _locallaw(config, [(name_a, config.a), (name_alt, a_alt)], threads)
    fit_a = fit_scaling(record, "eta", statistic, name_a)
    fit_alt = fit_scaling(record, "eta", statistic, name_alt)
    gap = fit_a.slope - fit_alt.slope
    expected = (config.a - a_alt) / 2
    record.summary.update(
        slope_a=fit_a.slope, slope_alt=fit_alt.slope, gap=gap, expected_gap=expected,
        stderr_a=fit_a.stderr, stderr_alt=fit_alt.stderr,
    )
    return SqrtEtaResult(fit_a, fit_alt, gap, expected, record)


def thermalization_scan(config: ExperimentConfig, threads: int | None = None) -> ResultRecord:
    """Median ``|<e^{isW} A e^{-isW} A'> - phi(s)^2 <A A'>|`` per (N, s)."""
    if config.kind != "thermalization":
        raise ConfigError("kind", f"thermalization_scan needs kind thermalization, got {config.kind!r}")
    started = _now()
    threads = resolve_threads(threads if threads is not None else config.threads)
    phis = {s: phi(s) for s in config.s}

    def observables(n, trial):
        real = config.beta == 1
        count = 1 if config.same_observables else 2
        mats = make_observables(n, config.recipe, _obs_seed(config, n, trial, 0), count=count, real=real).matrices
        A1, A2 = mats[0], mats[-1]
        return A1, A2, complex(np.trace(A1 @ A2)) / n

    fixed = {} if config.randomize_observables else {n: observables(n, None) for n in config.N}

    def task(n, trial):
        A1, A2, tr12 = fixed.get(n) or observables(n, trial)
        sample = _sample(config, n, trial)
        return {s: abs(heisenberg_pair(sample, s, A1, A2) - phis[s] ** 2 * tr12) for s in config.s}

    results = _map_trials(task, config.N, config.trials, threads)
    points = []
    for n in config.N:
        for s in config.s:
            errs = [results[n, t][s] for t in range(config.trials)]
            raw = {"error": errs} if config.keep_raw else None
            points.append(GridPoint("therm", n, None, s, {"error": _summarize(errs)}, {"phi_sq": phis[s] ** 2}, raw))
    return ResultRecord(config.kind, config.to_dict(), config.config_hash(), points, {},
                        started=started, finished=_now())


def two_scale_clt(config: ExperimentConfig, threads: int | None = None) -> ResultRecord:
    """Split ``<(G - m) B>`` into tracial and traceless fluctuation modes.

    The tracial mode is ``<B> (<G> - m)`` and the traceless mode is
    ``<G B0>`` with ``B0 = B - <B>``.  Reported per grid point: both standard
    deviations, their ratio and the predicted ratio
    ``sqrt(eta) <B0 B0*>^{1/2} / |<B>|``.
    """
    if config.kind != "two-scale-clt":
        raise ConfigError("kind", f"two_scale_clt needs kind two-scale-clt, got {config.kind!r}")
    started = _now()
    threads = resolve_threads(threads if threads is not None else config.threads)

    def observable(n, trial):
        B = make_observables(n, config.recipe, _obs_seed(config, n, trial, 0), real=config.beta == 1).matrices[0]
        b = complex(np.trace(B)) / n
        if abs(b) < TRACELESS_TOL:
            b = 0.0
        B0 = B - b * np.eye(n)
        b0sq = float(np.real(np.vdot(B0, B0))) / n
        if b0sq < TRACELESS_TOL ** 2:
            B0, b0sq = None, 0.0
        return b, B0, b0sq

    fixed = {} if config.randomize_observables else {n: observable(n, None) for n in config.N}

    def task(n, trial):
        b, B0, _ = fixed.get(n) or observable(n, trial)
        sample = _sample(config, n, trial)
        need_vectors = B0 is not None
        lam = sample.eigen[0] if need_vectors else sample.eigenvalues
        d = np.real(np.diagonal(sample.rotate(B0))) if need_vectors else None
        out = {}
        for eta in config.etas_for(n):
            z = complex(config.energy, eta)
            g = 1.0 / (lam - z)
            out[eta] = (b * (np.mean(g) - stieltjes(z)), np.mean(g * d) if need_vectors else 0.0)
        return out

    results = _map_trials(task, config.N, config.trials, threads)
    points = []
    for n in config.N:
        b, _, b0sq = fixed.get(n) or observable(n, 0)
        for eta in config.etas_for(n):
            tr = np.array([results[n, t][eta][0] for t in range(config.trials)], dtype=complex)
            tl = np.array([results[n, t][eta][1] for t in range(config.trials)], dtype=complex)
            sd_tr = float(np.sqrt(np.mean(np.abs(tr - tr.mean()) ** 2)))
            sd_tl = float(np.sqrt(np.mean(np.abs(tl - tl.mean()) ** 2)))
            ratio = sd_tl / sd_tr if sd_tr > 0 else math.inf
            predicted = math.sqrt(eta * b0sq) / abs(b) if b != 0 else math.inf
            values = {"sd_tracial": sd_tr, "sd_traceless": sd_tl, "sd_ratio": ratio, "predicted_ratio": predicted}
            stats_ = {"tracial": _summarize(np.abs(tr)), "traceless": _summarize(np.abs(tl))}
            raw = None
            if config.keep_raw:
                raw = {"tracial": [[float(v.real), float(v.imag)] for v in tr],
                       "traceless": [[float(v.real), float(v.imag)] for v in tl]}
            points.append(GridPoint("clt", n, eta, None, stats_, values, raw))
    return ResultRecord(config.kind, config.to_dict(), config.config_hash(), points, {},
                        started=started, finished=_now())


def random_chain(rng: np.random.Generator, n: int, k_max: int, eta_min: float, form: str = "averaged",
                 resolvent_only: bool = True, k: int | None = None, a: int | None = None) -> ChainSpec:
    """Random chain with mixed half-planes, ``|Im z| >= eta_min`` and norm-1 matrices.

    ``a`` traceless Hermitian matrices are placed at random slots; the other
    slots hold general Hermitian or general complex matrices.  Without ``a``
    every slot picks one of the three kinds with equal odds.
    """
    k = int(rng.integers(1, k_max + 1)) if k is None else k
    count = k if form == "averaged" else k + 1
    kernels = []
    for _ in range(count):
        z = complex(rng.uniform(-3, 3), eta_min * 10 ** rng.uniform(0, 1.3) * rng.choice([-1, 1]))
        kind = "resolvent" if resolvent_only or rng.random() < 0.7 else "absolute"
        kernels.append(SpectralKernel(kind, z))
    if a is None:
        styles = rng.integers(3, size=k)
    else:
        styles = np.array([0] * a + list(rng.integers(1, 3, size=k - a)))
        rng.shuffle(styles)
    mats = []
    for style in styles:
        X = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        if style < 2:
            X = X + X.conj().T
        if style == 0:
            X = X - np.trace(X) / n * np.eye(n)
        mats.append(X / np.linalg.norm(X, 2))
    return ChainSpec(tuple(kernels), tuple(mats), form)


def _identity_checks(rng, n, k_max, eta_min, beta, sample_seed) -> dict:
    out = {}
    chain = random_chain(rng, n, k_max, eta_min, "averaged")
    iso = random_chain(rng, n, k_max, eta_min, "isotropic", resolvent_only=False)
    M = m_matrix(chain).matrix_part
    try:
        Mq = m_matrix_q(chain).matrix_part
        out["q_residual"] = float(np.linalg.norm(M - Mq) / np.linalg.norm(M))
    except ConditioningError:
        pass
    for variant in ("rec1", "rec2"):
        out[f"{variant}_residual"] = max(recursion_residual(chain, j, variant) for j in range(1, len(chain.kernels) + 1))
    out["bound_ratio_avg"] = abs(m_avg(chain)) / m_bound(chain)
    out["bound_ratio_norm"] = float(np.linalg.norm(m_matrix(iso).matrix_part, 2)) / m_bound(iso)
    sample = sample_wigner(n, beta, "gaussian", sample_seed)
    eig, direct = chain_avg(sample, chain), chain_avg(sample, chain, method="direct")
    out["eigen_vs_direct"] = abs(eig - direct) / max(abs(eig), 1e-300)
    z = chain.zs[0]
    g = 1.0 / (sample.eigen[0] - z)
    out["ward_residual"] = abs(np.mean(np.abs(g) ** 2) - np.mean(g.imag) / z.imag) / np.mean(np.abs(g) ** 2)
    return out


def identity_suite(config: ExperimentConfig, threads: int | None = None) -> ResultRecord:
    """Randomized checks of the deterministic identities (one chain per trial).

    Per ``N``: the q-formula residual, both recursion residuals (worst
    position), the size-bound ratio ``|<M B>| / bound``, the Ward identity
    and the eigenbasis-versus-linear-solve chain discrepancy.
    """
    if config.kind != "identity-suite":
        raise ConfigError("kind", f"identity_suite needs kind identity-suite, got {config.kind!r}")
    started = _now()
    threads = resolve_threads(threads if threads is not None else config.threads)

    def task(n, trial):
        eta_min = min(config.etas_for(n))
        rng = np.random.default_rng(derive_seed(config.seed, n, trial))
        return _identity_checks(rng, n, config.k, eta_min, config.beta, derive_seed(config.seed, n, trial, 1))

    results = _map_trials(task, config.N, config.trials, threads)
    points = []
    for n in config.N:
        per = [results[n, t] for t in range(config.trials)]
        keys = sorted({key for p in per for key in p})
        stats_ = {}
        values = {}
        for key in keys:
            vals = [p[key] for p in per if key in p]
            stats_[key] = _summarize(vals)
            values[f"max_{key}"] = float(np.max(vals))
        points.append(GridPoint("identities", n, min(config.etas_for(n)), None, stats_, values,
                                {key: [p.get(key) for p in per] for key in keys} if config.keep_raw else None))
    return ResultRecord(config.kind, config.to_dict(), config.config_hash(), points, {},
                        started=started, finished=_now())


def run_experiment(config: ExperimentConfig, threads: int | None = None) -> ResultRecord:
    """Dispatch on ``config.kind``."""
    if config.kind == "locallaw-scan":
        record = run_locallaw_scan(config, threads)
        for axis in ("N", "eta"):
            try:
                fit = fit_scaling(record, axis)
            except DegenerateGridError:
                continue
            record.summary[f"slope_{axis}"] = fit.slope
            record.summary[f"stderr_{axis}"] = fit.stderr
        return record
    if config.kind == "sqrt-eta-rule":
        return sqrt_eta_rule_test(config, threads=threads).record
    if config.kind == "thermalization":
        return thermalization_scan(config, threads)
    if config.kind == "two-scale-clt":
        return two_scale_clt(config, threads)
    return identity_suite(config, threads)


def _json_safe(x):
    if isinstance(x, float) and not math.isfinite(x):
        return {"__float__": repr(x)}
    if isinstance(x, dict):
        return {str(k): _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def _json_restore(x):
    if isinstance(x, dict):
        if set(x) == {"__float__"}:
            return float(x["__float__"])
        return {k: _json_restore(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_json_restore(v) for v in x]
    return x


def persist(record: ResultRecord, path: str) -> None:
    doc = _json_safe(dataclasses.asdict(record))
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def load(path: str) -> ResultRecord:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict) or doc.get("schema_version") != SCHEMA_VERSION:
        got = doc.get("schema_version") if isinstance(doc, dict) else None
        raise SchemaError(f"{path}: schema_version {got!r}, expected {SCHEMA_VERSION}")
    doc = _json_restore(doc)
    try:
        doc["points"] = [GridPoint(**p) for p in doc["points"]]
        return ResultRecord(**doc)
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"{path}: malformed record ({exc})") from None


def export_csv(record: ResultRecord, path_or_file) -> None:
    """One row per grid point and statistic, columns ``CSV_COLUMNS``."""
    own = isinstance(path_or_file, (str, os.PathLike))
    fh = open(path_or_file, "w", newline="", encoding="utf-8") if own else path_or_file
    try:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for p in record.points:
            keys = [p.series, p.N, "" if p.eta is None else p.eta, "" if p.s is None else p.s]
            for name, st in p.stats.items():
                w.writerow(keys + [name, st["n"], st["mean"], st["median"], st["q90"], st["sd"], ""])
            for name, val in p.values.items():
                w.writerow(keys + [name, "", "", "", "", "", val])
    finally:
        if own:
            fh.close()
