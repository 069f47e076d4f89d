"""Monte Carlo studies: risk tables, figure datasets and sanity verifiers.

Every replication derives its own seed from (base_seed, purpose, n, rep),
so scheduling order and worker count never change the results.  Fresh
environments are drawn for every (n, replication) pair.

Engine policy: the step-by-step walk is the ground truth but its hitting
time explodes as exp(c sqrt(n)) in the recurrent regime, so "auto" runs
the walk for transient laws and for recurrent laws up to n = 500, and
switches to the branching sampler (identical in law for the recorded
statistic) beyond that; branching times are flagged as proxies.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from multiprocessing import get_context

import numpy as np
from scipy import stats

from .env import EnvSpec, env_spec_from_json, exact_cdf, exact_moment, solve_kappa
from .estimators import estimate_cdf, sup_loss, _phi_array
from .lepskii import adaptive_estimate
from .walk import (
    DEFAULT_MAX_STEPS,
    ZPath,
    derive_seed,
    invariant_tail,
    sample_environment,
    simulate_walk,
    simulate_z_branching,
    RegimeError,
    _nb_draw,
    _stream,
    _BRANCH_TAG,
)

__all__ = [
    "ExperimentConfig",
    "RiskRow",
    "RiskTable",
    "FigureBundle",
    "CltReport",
    "ConcentrationReport",
    "OccupationReport",
    "resolve_engine",
    "simulate_zpath",
    "theoretical_slope",
    "run_risk_experiment",
    "run_figure_dataset",
    "verify_clt",
    "verify_concentration",
    "verify_occupation",
    "PRESETS",
]

_RECURRENT_WALK_CAP = 500


@dataclass(frozen=True)
class ExperimentConfig:
    spec: EnvSpec
    n_values: tuple[int, ...]
    replications: int
    base_seed: int
    z_policy: float | str = "auto"
    workers: int = 1
    engine: str = "auto"  # walk | branching | auto
    m_cap: int | None = None
    max_steps: int = DEFAULT_MAX_STEPS

    def __post_init__(self):
        if not self.n_values or any(n < 2 for n in self.n_values):
            raise ValueError("n_values must be nonempty with entries >= 2")
        if any(b <= a for a, b in zip(self.n_values, self.n_values[1:])):
            raise ValueError("n_values must be strictly increasing")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.engine not in ("auto", "walk", "branching"):
            raise ValueError(f"unknown engine {self.engine!r}")
        if self.z_policy != "auto" and float(self.z_policy) <= 0:
            raise ValueError("z must be positive")


def resolve_engine(spec: EnvSpec, n: int, engine: str = "auto", regime=None) -> str:
    if engine in ("walk", "branching"):
        return engine
    if engine != "auto":
        raise ValueError(f"unknown engine {engine!r}")
    if regime is None:
        regime = solve_kappa(spec)
    if regime.is_recurrent and n > _RECURRENT_WALK_CAP:
        return "branching"
    return "walk"


def simulate_zpath(
    spec: EnvSpec,
    n: int,
    seed: int,
    engine: str = "auto",
    max_steps: int = DEFAULT_MAX_STEPS,
    regime=None,
) -> ZPath:
    eng = resolve_engine(spec, n, engine, regime)
    if eng == "walk":
        env = sample_environment(spec, seed)
        return simulate_walk(env, n, seed, max_steps=max_steps)
    return simulate_z_branching(spec, n, seed, mode="annealed")


def theoretical_slope(regime) -> float | None:
    """Risk-decay exponent in n for gamma = 2 targets: 1/(2+2*kappa),
    or 1/2 in the recurrent regime (up to log factors)."""
    if regime.is_recurrent:
        return 0.5
    if regime.kind == "transient_right" and regime.kappa is not None:
        return 1.0 / (2.0 + 2.0 * regime.kappa)
    return None


# ---------------------------------------------------------------------------
# risk experiment
# ---------------------------------------------------------------------------


@dataclass
class RiskRow:
    n: int
    replications: int
    mean_loss: float
    sd_loss: float
    median_chosen_M: float
    median_hitting_time: float
    engine: str
    time_is_proxy: bool


@dataclass
class RiskTable:
    rows: list[RiskRow]
    slope: float | None
    theoretical_rate: float | None
    kappa: float | None
    config: dict

    def to_json(self) -> dict:
        return {
            "slope": self.slope,
            "theoretical_rate": self.theoretical_rate,
            "kappa": self.kappa,
            "config": self.config,
            "rows": [vars(r) for r in self.rows],
        }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(
                f"# slope={self.slope} theoretical_rate={self.theoretical_rate} kappa={self.kappa}\n"
            )
            writer = csv.writer(fh)
            writer.writerow(
                [
                    "n",
                    "replications",
                    "mean_loss",
                    "sd_loss",
                    "median_chosen_M",
                    "median_hitting_time",
                    "engine",
                    "time_is_proxy",
                ]
            )
            for r in self.rows:
                writer.writerow(
                    [
                        r.n,
                        r.replications,
                        repr(r.mean_loss),
                        repr(r.sd_loss),
                        r.median_chosen_M,
                        r.median_hitting_time,
                        r.engine,
                        int(r.time_is_proxy),
                    ]
                )


def _risk_task(args) -> tuple:
    spec_json, n, rep, base_seed, z_policy, engine, m_cap, max_steps = args
    spec = env_spec_from_json(spec_json)
    seed = derive_seed(base_seed, "risk", n, rep)
    zp = simulate_zpath(spec, n, seed, engine=engine, max_steps=max_steps)
    z = math.log(n) if z_policy == "auto" else float(z_policy)
    res = adaptive_estimate(zp, z, m_cap=m_cap)
    loss = sup_loss(res.final, spec)
    return (n, rep, loss, res.chosen_M, zp.hitting_time, zp.time_is_proxy)


def run_risk_experiment(cfg: ExperimentConfig) -> RiskTable:
    """Median/mean adaptive loss per n, plus the fitted log-log slope."""
    regime = solve_kappa(cfg.spec)
    spec_json = cfg.spec.to_json()
    tasks = []
    for n in cfg.n_values:
        engine = resolve_engine(cfg.spec, n, cfg.engine, regime)
        for rep in range(cfg.replications):
            tasks.append(
                (spec_json, n, rep, cfg.base_seed, cfg.z_policy, engine, cfg.m_cap, cfg.max_steps)
            )
    if cfg.workers > 1:
        with get_context("fork").Pool(cfg.workers) as pool:
            raw = pool.map(_risk_task, tasks, chunksize=1)
    else:
        raw = [_risk_task(t) for t in tasks]
    by_n: dict[int, list[tuple]] = {n: [] for n in cfg.n_values}
    for rec in raw:
        by_n[rec[0]].append(rec)
    rows = []
    for n in cfg.n_values:
        recs = sorted(by_n[n], key=lambda r: r[1])
        losses = np.array([r[2] for r in recs])
        rows.append(
            RiskRow(
                n=n,
                replications=len(recs),
                mean_loss=float(losses.mean()),
                sd_loss=float(losses.std(ddof=1)) if len(recs) > 1 else 0.0,
                median_chosen_M=float(np.median([r[3] for r in recs])),
                median_hitting_time=float(np.median([r[4] for r in recs])),
                engine=resolve_engine(cfg.spec, n, cfg.engine, regime),
                time_is_proxy=any(r[5] for r in recs),
            )
        )
    slope = None
    if len(rows) >= 2:
        ln = np.log([r.n for r in rows])
        ll = np.log([r.mean_loss for r in rows])
        slope = float(-np.polyfit(ln, ll, 1)[0])
    return RiskTable(
        rows=rows,
        slope=slope,
        theoretical_rate=theoretical_slope(regime),
        kappa=regime.kappa,
        config={
            "spec": spec_json,
            "n_values": list(cfg.n_values),
            "replications": cfg.replications,
            "base_seed": cfg.base_seed,
            "z_policy": cfg.z_policy,
            "workers": cfg.workers,
            "engine": cfg.engine,
        },
    )


# ---------------------------------------------------------------------------
# figure datasets
# ---------------------------------------------------------------------------


@dataclass
class FigureBundle:
    spec_json: dict
    n: int
    seed: int
    engine: str
    hitting_time: int
    time_is_proxy: bool
    chosen_M: int
    loss: float
    curve_u: np.ndarray
    curve_f: np.ndarray
    est_grid: np.ndarray
    est_values: np.ndarray
    env_omega: np.ndarray
    lepskii_json: dict

    def write(self, outdir) -> list[str]:
        """Write the three delimited artifacts plus a JSON summary."""
        from pathlib import Path

        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []

        p = out / "exact_cdf.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["u", "F"])
            for u, f in zip(self.curve_u, self.curve_f):
                w.writerow([repr(float(u)), repr(float(f))])
        paths.append(str(p))

        p = out / "estimate.csv"
        with open(p, "w", newline="") as fh:
            fh.write(f"# M={self.chosen_M} n={self.n} seed={self.seed} loss={self.loss!r}\n")
            w = csv.writer(fh)
            w.writerow(["l", "u", "value"])
            for l, (u, v) in enumerate(zip(self.est_grid, self.est_values)):
                w.writerow([l, repr(float(u)), repr(float(v))])
        paths.append(str(p))

        p = out / "empirical_env.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "omega"])
            for x, om in enumerate(self.env_omega):
                w.writerow([x, repr(float(om))])
        paths.append(str(p))

        p = out / "summary.json"
        with open(p, "w") as fh:
            json.dump(
                {
                    "spec": self.spec_json,
                    "n": self.n,
                    "seed": self.seed,
                    "engine": self.engine,
                    "hitting_time": self.hitting_time,
                    "time_is_proxy": self.time_is_proxy,
                    "chosen_M": self.chosen_M,
                    "sup_loss": self.loss,
                    "lepskii": self.lepskii_json,
                },
                fh,
                indent=2,
            )
        paths.append(str(p))
        return paths


def run_figure_dataset(
    spec: EnvSpec,
    n: int,
    seed: int,
    engine: str = "auto",
    z: float | str = "auto",
    m_cap: int | None = None,
    curve_points: int = 513,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> FigureBundle:
    """Single-run bundle: exact target curve, adaptive estimate, realized env.

    The empirical environment needs realized site values, so the branching
    fallback runs in quenched mode against a sampled environment.
    """
    from .lepskii import lepskii_result_to_json

    regime = solve_kappa(spec)
    eng = resolve_engine(spec, n, engine, regime)
    env = sample_environment(spec, seed)
    if eng == "walk":
        zp = simulate_walk(env, n, seed, max_steps=max_steps)
    else:
        zp = simulate_z_branching(spec, n, seed, mode="quenched", env=env)
    res = adaptive_estimate(zp, z, m_cap=m_cap)
    loss = sup_loss(res.final, spec)
    u = np.linspace(0.0, 1.0, curve_points)
    bundle = FigureBundle(
        spec_json=spec.to_json(),
        n=n,
        seed=seed,
        engine=eng,
        hitting_time=zp.hitting_time,
        time_is_proxy=zp.time_is_proxy,
        chosen_M=res.chosen_M,
        loss=loss,
        curve_u=u,
        curve_f=np.asarray(exact_cdf(spec, u), dtype=float),
        est_grid=res.final.knots(),
        est_values=np.asarray(res.final.grid_values, dtype=float),
        env_omega=env.omega_block(0, n - 1).copy(),
        lepskii_json=lepskii_result_to_json(res),
    )
    return bundle


# ---------------------------------------------------------------------------
# verifiers
# ---------------------------------------------------------------------------


def _batch_moment_samples(spec, n, reps, alpha, beta, seed):
    """Vectorized annealed chains; returns per-replication (value, visits)."""
    rng = _stream(seed, _BRANCH_TAG)
    cur = np.zeros(reps, dtype=np.int64)
    visits = np.zeros(reps, dtype=np.int64)
    acc = np.zeros(reps)
    for _ in range(n):
        visits += cur >= alpha
        a = np.asarray(spec.sample(rng, reps), dtype=float)
        nxt = _nb_draw(rng, cur + 1, a)
        acc += _phi_array(alpha, beta, cur, nxt)
        cur = nxt
    vals = np.where(visits > 0, acc / np.maximum(visits, 1), 0.0)
    return vals, visits


@dataclass
class CltReport:
    alpha: int
    beta: int
    n: int
    replications: int
    exact: float
    sample_mean: float
    sample_var: float
    var_se: float
    ks_stat: float | None
    var_lower: float | None
    var_upper: float | None
    longrun_var: float
    insufficient: bool = False
    sample: np.ndarray | None = field(default=None, repr=False)

    def to_json(self):
        return {k: v for k, v in vars(self).items() if k != "sample"}


def verify_clt(
    spec: EnvSpec,
    alpha: int,
    beta: int,
    n: int,
    replications: int,
    seed: int = 0,
    longrun_steps: int = 200_000,
    burn_in: int = 20_000,
) -> CltReport:
    """Distribution of sqrt(n)*(estimate - m) across replications.

    Reports the KS distance of the standardized sample to the standard
    normal, the sample variance with its standard error, the exact-moment
    bracket available when alpha = 0, and an independent long-run variance
    built from the stationary-chain formula (burn-in discarded).
    """
    regime = solve_kappa(spec)
    if not regime.is_transient_right:
        raise RegimeError("CLT check needs a transient-right environment")
    m = exact_moment(spec, alpha, beta)
    vals, _ = _batch_moment_samples(spec, n, replications, alpha, beta, seed)
    sample = math.sqrt(n) * (vals - m)
    insufficient = replications < 2
    if insufficient:
        return CltReport(
            alpha, beta, n, replications, m, float(sample.mean()), 0.0, 0.0,
            None, None, None, 0.0, True, sample,
        )
    svar = float(sample.var(ddof=1))
    centered = sample - sample.mean()
    m4 = float(np.mean(centered**4))
    var_se = math.sqrt(max(m4 - svar**2, 0.0) / replications)
    ks = float(stats.kstest((sample - sample.mean()) / sample.std(ddof=1), "norm").statistic)

    # long-run estimate: single chain, stationary-formula analogue.  The
    # summands are martingale increments, so the variance rate is
    # E[(Phi - m 1{Z>=alpha})^2] = E[Phi^2] - m^2 pi; dividing by pi^2
    # gives the limit variance of sqrt(n) (estimate - m).
    chain = simulate_z_branching(spec, longrun_steps, derive_seed(seed, "longrun"), "annealed")
    zz = chain.z[burn_in:]
    weights = _phi_array(alpha, beta, zz[:-1], zz[1:])
    occ = float(np.mean(zz[:-1] >= alpha))
    longrun = float(np.mean(weights**2)) / occ**2 - m**2 / occ if occ > 0 else math.nan

    var_lower = var_upper = None
    if alpha == 0:
        var_lower = exact_moment(spec, 0, 2 * beta) - m**2
        var_upper = m - m**2
    return CltReport(
        alpha=alpha,
        beta=beta,
        n=n,
        replications=replications,
        exact=m,
        sample_mean=float(sample.mean()),
        sample_var=svar,
        var_se=var_se,
        ks_stat=ks,
        var_lower=var_lower,
        var_upper=var_upper,
        longrun_var=longrun,
        sample=sample,
    )


@dataclass
class ConcentrationReport:
    alpha: int
    beta: int
    n: int
    replications: int
    rows: list[dict]

    def to_json(self):
        return vars(self)

    @property
    def all_passed(self) -> bool:
        return all(r["passed"] for r in self.rows)


def verify_concentration(
    spec: EnvSpec,
    alpha: int,
    beta: int,
    n: int,
    z_list,
    replications: int,
    seed: int = 0,
) -> ConcentrationReport:
    """Empirical frequency of |estimate - m| exceeding the deviation radius.

    Each z gets a one-sided binomial check at the 99% level against the
    nominal bound 2 exp(-z); bounds at or above 1 are trivially satisfied
    and flagged vacuous.
    """
    m = exact_moment(spec, alpha, beta)
    vals, visits = _batch_moment_samples(spec, n, replications, alpha, beta, seed)
    c = math.comb(alpha + beta, alpha)
    rows = []
    for z in z_list:
        if z <= 0:
            raise ValueError("z must be positive")
        with np.errstate(divide="ignore"):
            radius = (n / np.maximum(visits, 1)) / c * math.sqrt(z / (2.0 * n))
        radius = np.where(visits > 0, radius, np.inf)
        viol = int(np.count_nonzero(np.abs(vals - m) >= radius))
        p = 2.0 * math.exp(-z)
        vacuous = p >= 1.0
        if vacuous:
            q99 = replications
            passed = True
        else:
            q99 = int(stats.binom.ppf(0.99, replications, p))
            passed = viol <= q99
        rows.append(
            {
                "z": float(z),
                "bound_prob": min(1.0, p),
                "violations": viol,
                "frequency": viol / replications,
                "q99": q99,
                "passed": bool(passed),
                "vacuous": vacuous,
            }
        )
    return ConcentrationReport(alpha, beta, n, replications, rows)


@dataclass
class OccupationReport:
    n: int
    replications: int
    rows: list[dict]
    profile: list[dict]
    profile_spread: float | None

    def to_json(self):
        return vars(self)

    @property
    def all_within(self) -> bool:
        return all(r["within"] for r in self.rows)


def verify_occupation(
    spec: EnvSpec,
    M_list,
    n: int,
    replications: int,
    seed: int = 0,
    tail_samples: int = 200_000,
    profile_M=(20, 40, 80),
    tolerance_se: float = 4.0,
) -> OccupationReport:
    """Occupation frequencies N^M / n against the invariant tail law.

    Also profiles M * pi([M, inf)) over larger ranks, whose flatness is
    the visible signature of a tail exponent kappa = 1.
    """
    regime = solve_kappa(spec)
    if not regime.is_transient_right:
        raise RegimeError("occupation check needs a transient-right environment")
    rng = _stream(seed, _BRANCH_TAG)
    counts = {int(M): np.zeros(replications) for M in M_list}
    cur = np.zeros(replications, dtype=np.int64)
    for _ in range(n):
        for M in counts:
            counts[M] += cur >= M if M > 0 else 1.0
        a = np.asarray(spec.sample(rng, replications), dtype=float)
        cur = _nb_draw(rng, cur + 1, a)
    rows = []
    for M in (int(M) for M in M_list):
        occ = counts[M] / n
        occ_mean = float(occ.mean())
        occ_se = float(occ.std(ddof=1) / math.sqrt(replications)) if replications > 1 else 0.0
        if M == 0:
            tail_est, tail_se = 1.0, 0.0
        else:
            tail_est, tail_se = invariant_tail(
                spec, M, n_samples=tail_samples, seed=derive_seed(seed, "tail", M)
            )
        combined = math.hypot(occ_se, tail_se)
        gap = abs(occ_mean - tail_est)
        rows.append(
            {
                "M": M,
                "occupation": occ_mean,
                "occupation_se": occ_se,
                "invariant_tail": tail_est,
                "invariant_tail_se": tail_se,
                "gap": gap,
                "combined_se": combined,
                "within": bool(gap <= tolerance_se * combined) if combined > 0 else gap == 0.0,
            }
        )
    profile = []
    for M in profile_M:
        est, se = invariant_tail(
            spec, int(M), n_samples=tail_samples, seed=derive_seed(seed, "profile", M)
        )
        profile.append({"M": int(M), "tail": est, "tail_se": se, "m_times_tail": M * est})
    spread = None
    if profile:
        vals = np.array([p["m_times_tail"] for p in profile])
        spread = float((vals.max() - vals.min()) / vals.mean()) if vals.mean() > 0 else math.inf
    return OccupationReport(
        n=n, replications=replications, rows=rows, profile=profile, profile_spread=spread
    )


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

from .env import Beta, DiscreteMixture, UniformInterval  # noqa: E402

PRESETS = {
    "fig1": {"kind": "figure", "spec": Beta(3.0, 3.0), "n": 500},
    "fig2": {"kind": "figure", "spec": Beta(3.5, 3.0), "n": 500},
    "fig3": {"kind": "figure", "spec": Beta(4.0, 3.0), "n": 500},
    "fig4": {"kind": "figure", "spec": Beta(6.0, 3.0), "n": 500},
    "fig5": {"kind": "figure", "spec": UniformInterval(0.3, 0.9), "n": 10_000},
    "fig6": {
        "kind": "figure",
        "spec": DiscreteMixture(((0.3, 0.4), (0.7, 0.7))),
        "n": 10_000,
    },
    "table1-kappa0.6": {
        "kind": "table",
        "spec": Beta(3.6, 3.0),
        "n_values": (100, 200, 400, 800, 1600, 3200),
        "full_n_values": (100, 200, 400, 800, 1600, 3200),
        "replications": 100,
        "full_replications": 500,
    },
    "table1-kappa0.75": {
        "kind": "table",
        "spec": Beta(3.75, 3.0),
        "n_values": (100, 200, 400, 800, 1600, 3200),
        "full_n_values": (100, 200, 400, 800, 1600, 3200, 6400, 12800),
        "replications": 100,
        "full_replications": 500,
    },
    "table1-kappa1": {
        "kind": "table",
        "spec": Beta(4.0, 3.0),
        "n_values": (100, 200, 400, 800, 1600, 3200),
        "full_n_values": (100, 200, 400, 800, 1600, 3200, 6400, 12800),
        "replications": 100,
        "full_replications": 500,
    },
    "table1-kappa2": {
        "kind": "table",
        "spec": Beta(5.0, 3.0),
        "n_values": (100, 200, 400, 800, 1600, 3200),
        "full_n_values": (100, 200, 400, 800, 1600, 3200, 6400, 12800),
        "replications": 100,
        "full_replications": 500,
    },
    "table1-kappa3": {
        "kind": "table",
        "spec": Beta(6.0, 3.0),
        "n_values": (100, 200, 400, 800, 1600, 3200),
        "full_n_values": (100, 200, 400, 800, 1600, 3200, 6400, 12800),
        "replications": 100,
        "full_replications": 500,
    },
}
