"""Synthetic ICU cohorts with a time-dependent confounder.

Each patient carries a latent severity score ``L``.  On every day
``j = 1..J`` that the patient is still hospitalized, in this order:

1. the score measured the previous day becomes known: ``L_0`` is drawn at
   admission and ``L_{j-1} = rho * L_{j-2} + sigma * noise + delta * A``
   for ``j >= 2``;
2. an uninfected patient acquires infection with probability
   ``expit(alpha0 + alpha_L * L_{j-1})``;
3. the patient dies with probability
   ``expit(bd0 + bd_L * L_{j-1} + bd_A * A)``, where ``A`` is the infection
   status including infections from step 2;
4. a surviving patient is discharged with probability
   ``expit(br0 + br_L * L_{j-1} + br_A * A)``.

The counterfactual arm runs the same process with the infection step
switched off (``A = 0`` throughout).

Random numbers come from a Philox counter-based generator keyed on
``(seed, stream, block, draw type)`` for fixed blocks of 4096 patients, so
a patient's trajectory depends only on the seed and its index and results
do not depend on the number of worker threads.
"""

from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cohort import Cohort, CovariateHistory, Event, TimeGrid
from .errors import ValidationError
from .estimators import CurveKind, EstimateCurve

BLOCK = 4096
FACTUAL, COUNTERFACTUAL = 0, 1
_L0, _NOISE, _INF, _DEATH, _DISCH = range(5)


@dataclass(frozen=True)
class ScenarioConfig:
    """Structural parameters of the data-generating process (all hazards daily, logistic)."""

    n: int = 5000
    horizon: int = 30
    seed: int = 0
    l0_mean: float = 0.0
    l0_sd: float = 1.0
    rho: float = 0.9
    sigma: float = 0.3
    delta: float = 0.0
    alpha0: float = -3.5
    alpha_l: float = 0.0
    bd0: float = -4.0
    bd_l: float = 0.8
    bd_a: float = 0.0
    br0: float = -2.5
    br_l: float = -0.4
    br_a: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValidationError(f"n must be a positive integer, got {self.n!r}")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValidationError(f"horizon must be a positive integer, got {self.horizon!r}")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2 ** 64:
            raise ValidationError(f"seed must be an integer in [0, 2**64), got {self.seed!r}")
        if self.l0_sd < 0 or self.sigma < 0:
            raise ValidationError("standard deviations must be nonnegative")
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not np.isfinite(v):
                raise ValidationError(f"{f.name} must be finite")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.horizon)

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        data = dict(data)
        base = data.pop("scenario", None)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"unknown scenario field(s): {', '.join(unknown)}")
        if base is not None:
            if base not in SCENARIOS:
                raise ValidationError(f"unknown scenario {base!r}; choose from {', '.join(SCENARIOS)}")
            return SCENARIOS[base].replace(**data)
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        """Read a JSON (or, where a TOML parser is available, TOML) scenario file."""
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        if path.suffix.lower() == ".toml":
            try:
                import tomllib
            except ImportError:
                try:
                    import tomli as tomllib
                except ImportError:
                    raise ValidationError("TOML scenarios need Python 3.11+ or the tomli package") from None
            data = tomllib.loads(text)
        else:
            try:
                data = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ValidationError(f"{path}: scenario must be a mapping")
        return cls.from_dict(data)


# Parameter values are this package's own choices, tuned so that the
# qualitative estimator behaviour described in the README is visible.
SCENARIOS = {
    "no_confounding": ScenarioConfig(
        n=50_000, horizon=30, seed=20240601, l0_sd=1.0, rho=0.9, sigma=0.3, delta=0.3,
        alpha0=-3.0, alpha_l=0.0, bd0=-4.2, bd_l=0.8, bd_a=0.7, br0=-1.5, br_l=-2.5, br_a=-0.4,
        name="no_confounding"),
    "confounded": ScenarioConfig(
        n=50_000, horizon=30, seed=20240602, l0_sd=1.0, rho=0.9, sigma=0.3, delta=0.3,
        alpha0=-3.0, alpha_l=0.8, bd0=-4.2, bd_l=0.8, bd_a=0.7, br0=-1.5, br_l=-2.5, br_a=-0.4,
        name="confounded"),
}


def scenario(name: str, **changes) -> ScenarioConfig:
    if name not in SCENARIOS:
        raise ValidationError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    return SCENARIOS[name].replace(**changes)


def _expit(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _rng(cfg, stream, block, draw):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.seed, stream, block, draw])))


@dataclass
class _Block:
    infection: np.ndarray
    terminal: np.ndarray
    kind: np.ndarray
    history: np.ndarray | None


def _simulate_block(cfg: ScenarioConfig, stream: int, block: int, size: int, counterfactual: bool,
                    keep_history: bool) -> _Block:
    J = cfg.horizon
    # always draw a full block so a patient's draws do not depend on n
    l_cur = cfg.l0_mean + cfg.l0_sd * _rng(cfg, stream, block, _L0).standard_normal(BLOCK)[:size]
    noise = _rng(cfg, stream, block, _NOISE).standard_normal((J, BLOCK))[:, :size]
    u_inf = _rng(cfg, stream, block, _INF).random((J, BLOCK))[:, :size]
    u_die = _rng(cfg, stream, block, _DEATH).random((J, BLOCK))[:, :size]
    u_dis = _rng(cfg, stream, block, _DISCH).random((J, BLOCK))[:, :size]

    infection = np.full(size, -1, dtype=np.int64)
    terminal = np.full(size, J + 1, dtype=np.int64)
    kind = np.zeros(size, dtype=np.int64)
    a = np.zeros(size, dtype=bool)
    alive = np.ones(size, dtype=bool)
    hist = np.full((size, J + 1), np.nan) if keep_history else None
    for j in range(1, J + 1):
        if j >= 2:
            l_cur = cfg.rho * l_cur + cfg.sigma * noise[j - 2] + cfg.delta * a
        if hist is not None:
            hist[alive, j - 1] = l_cur[alive]
        if not counterfactual:
            new = alive & ~a & (u_inf[j - 1] < _expit(cfg.alpha0 + cfg.alpha_l * l_cur))
            infection[new] = j
            a = a | new
        die = alive & (u_die[j - 1] < _expit(cfg.bd0 + cfg.bd_l * l_cur + cfg.bd_a * a))
        dis = alive & ~die & (u_dis[j - 1] < _expit(cfg.br0 + cfg.br_l * l_cur + cfg.br_a * a))
        terminal[die | dis] = j
        kind[die] = Event.DEATH
        kind[dis] = Event.DISCHARGE
        alive &= ~(die | dis)
        if not alive.any():
            break
    return _Block(infection, terminal, kind, hist)


def _run_blocks(cfg, stream, n, counterfactual, keep_history, workers):
    sizes = [min(BLOCK, n - b * BLOCK) for b in range((n + BLOCK - 1) // BLOCK)]
    args = [(cfg, stream, b, s, counterfactual, keep_history) for b, s in enumerate(sizes)]
    if workers is None or workers <= 1 or len(args) == 1:
        return [_simulate_block(*a) for a in args]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda a: _simulate_block(*a), args))


@dataclass(frozen=True)
class SimulatedCohort:
    cohort: Cohort
    covariates: CovariateHistory
    config: ScenarioConfig


def simulate_cohort(config: ScenarioConfig, workers: int | None = None) -> SimulatedCohort:
    """Draw ``config.n`` factual patients with full post-infection follow-up.

    The covariate history holds ``L_j`` for every day j on which it was
    measured (``j < T``); later cells are NaN.
    """
    J = config.horizon
    blocks = _run_blocks(config, FACTUAL, config.n, False, True, workers)
    C = np.concatenate([b.infection for b in blocks])
    T = np.concatenate([b.terminal for b in blocks])
    K = np.concatenate([b.kind for b in blocks])
    hist = np.concatenate([b.history for b in blocks])
    infected = C >= 0
    t_tilde = np.where(infected, C, T)
    eps = np.where(infected, Event.INFECTION, K)
    width = len(str(config.n))
    ids = tuple(f"P{i:0{width}d}" for i in range(1, config.n + 1))
    grid = TimeGrid(J)
    cohort = Cohort(grid, ids, t_tilde, eps, T, K)
    return SimulatedCohort(cohort, CovariateHistory(("L",), hist[:, :, None]), config)


@dataclass(frozen=True)
class GroundTruth:
    """Monte-Carlo counterfactual death CIF ``Pr(T0 <= t, eps0 = 1)``."""

    curve: EstimateCurve
    se: np.ndarray
    replicates: int

    @property
    def values(self) -> np.ndarray:
        return self.curve.values


def monte_carlo_truth(config: ScenarioConfig, replicates: int = 1_000_000,
                      workers: int | None = None) -> GroundTruth:
    """Counterfactual CIF from ``replicates`` patients simulated with infection switched off.

    Uses a random stream separate from :func:`simulate_cohort`.  The
    standard error is binomial, ``sqrt(p (1 - p) / replicates)``.
    """
    if int(replicates) != replicates or replicates < 1:
        raise ValidationError("replicates must be a positive integer")
    replicates = int(replicates)
    J = config.horizon
    blocks = _run_blocks(config, COUNTERFACTUAL, replicates, True, False, workers)
    counts = np.zeros(J + 1, dtype=np.int64)
    for b in blocks:
        dead = b.kind == Event.DEATH
        counts += np.bincount(b.terminal[dead], minlength=J + 2)[: J + 1]
    p = np.cumsum(counts) / replicates
    se = np.sqrt(p * (1 - p) / replicates)
    return GroundTruth(EstimateCurve(TimeGrid(J), p, CurveKind.TRUTH), se, replicates)
