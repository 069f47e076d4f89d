"""Environment distributions for the site-wise right-step probabilities.

A nearest-neighbour walk on the integers moves right from site x with
probability omega_x, where the omega_x are i.i.d. draws from one of the
families below, supported inside (0, 1).  Everything downstream (moment
targets, the tail exponent kappa, bias bounds) is an exact functional of
that law, so all closed forms live here.

Conventions:
  rho        = (1 - omega) / omega, the left/right odds at a site.
  m^{a,b}    = E[omega^a (1 - omega)^b], the mixed moment.
  kappa      = the positive root of E[rho^kappa] = 1 when it exists.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, special

__all__ = [
    "EnvSpec",
    "Beta",
    "UniformInterval",
    "DiscreteMixture",
    "Regime",
    "KappaBracketError",
    "exact_cdf",
    "exact_cdf_left",
    "exact_moment",
    "target_cdf_grid",
    "solve_kappa",
    "holder_constant",
    "env_spec_from_json",
]

# |E log rho| below this threshold is classified as recurrent.
RECURRENCE_TOL = 1e-9
# Required accuracy of the kappa root in function value.
KAPPA_TOL = 1e-10


class KappaBracketError(RuntimeError):
    """Raised when no sign change for E[rho^s] - 1 could be bracketed."""

    def __init__(self, last_s: float, last_value: float):
        self.last_s = last_s
        self.last_value = last_value
        super().__init__(
            f"could not bracket the root of E[rho^s] = 1; "
            f"last probe s={last_s!r} gave E[rho^s]-1={last_value!r}"
        )


@dataclass(frozen=True)
class Regime:
    """Classification of the annealed walk read off the environment law.

    kind is one of "recurrent", "transient_right", "transient_left" or
    "no_kappa" ("no_kappa" means E[log rho] < 0, so the walk is transient
    to the right, but E[rho^s] never reaches 1 for finite s > 0).
    lattice_warning flags discrete environments, whose log-rho support may
    sit on an arithmetic lattice; the tail exponent is still returned, but
    tail constants are only guaranteed along lattice subsequences then.
    """

    kind: str
    kappa: float | None = None
    mean_log_rho: float = math.nan
    lattice_warning: bool = False

    @property
    def is_recurrent(self) -> bool:
        return self.kind == "recurrent"

    @property
    def is_transient_right(self) -> bool:
        return self.kind in ("transient_right", "no_kappa")


@dataclass(frozen=True)
class EnvSpec:
    """Base class for environment laws; use one of the concrete families."""

    def cdf(self, u):
        raise NotImplementedError

    def cdf_left(self, u):
        """Left limit F(u-); differs from cdf only at atoms."""
        return self.cdf(u)

    def pdf(self, u):
        raise NotImplementedError

    def moment(self, alpha: int, beta: int) -> float:
        raise NotImplementedError

    def rho_moment(self, s: float) -> float:
        """E[rho^s] = E[omega^{-s} (1-omega)^s]; may be math.inf."""
        raise NotImplementedError

    def rho_moment_limit(self) -> float:
        """Supremum of s for which E[rho^s] is finite."""
        return math.inf

    def rho_log_mean(self) -> float:
        """E[log rho]."""
        raise NotImplementedError

    def rho_sup(self) -> float:
        """Essential supremum of rho."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError

    def label(self) -> str:
        return json.dumps(self.to_json())


@dataclass(frozen=True)
class Beta(EnvSpec):
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and math.isfinite(self.a) and math.isfinite(self.b)):
            raise ValueError(f"Beta parameters must be finite and positive, got {(self.a, self.b)}")

    def cdf(self, u):
        return special.betainc(self.a, self.b, u)

    def pdf(self, u):
        u = np.asarray(u, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            logf = (self.a - 1.0) * np.log(u) + (self.b - 1.0) * np.log1p(-u)
        out = np.exp(logf - special.betaln(self.a, self.b))
        # endpoint conventions: density vanishes there for a,b > 1
        out = np.where((u <= 0.0) | (u >= 1.0), 0.0, out)
        return out if out.ndim else float(out)

    def moment(self, alpha, beta):
        return float(
            np.exp(special.betaln(self.a + alpha, self.b + beta) - special.betaln(self.a, self.b))
        )

    def rho_moment(self, s):
        if s >= self.a:
            return math.inf
        return float(
            np.exp(special.betaln(self.a - s, self.b + s) - special.betaln(self.a, self.b))
        )

    def rho_moment_limit(self):
        return self.a

    def rho_log_mean(self):
        return float(special.digamma(self.b) - special.digamma(self.a))

    def rho_sup(self):
        return math.inf

    def sample(self, rng, size=None):
        return rng.beta(self.a, self.b, size=size)

    def to_json(self):
        return {"type": "beta", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class UniformInterval(EnvSpec):
    lo: float
    hi: float

    def __post_init__(self):
        if not (0.0 < self.lo < self.hi < 1.0):
            raise ValueError(f"need 0 < lo < hi < 1, got {(self.lo, self.hi)}")

    def cdf(self, u):
        u = np.asarray(u, dtype=float)
        out = np.clip((u - self.lo) / (self.hi - self.lo), 0.0, 1.0)
        return out if out.ndim else float(out)

    def pdf(self, u):
        u = np.asarray(u, dtype=float)
        out = np.where((u >= self.lo) & (u <= self.hi), 1.0 / (self.hi - self.lo), 0.0)
        return out if out.ndim else float(out)

    def moment(self, alpha, beta):
        # the integrand is a polynomial of degree alpha+beta: fixed-order
        # Gauss-Legendre with (deg//2)+1 nodes integrates it exactly
        q = (alpha + beta) // 2 + 1
        x, w = np.polynomial.legendre.leggauss(q)
        half = 0.5 * (self.hi - self.lo)
        u = half * x + 0.5 * (self.hi + self.lo)
        return float(np.sum(w * u**alpha * (1.0 - u) ** beta) * half / (self.hi - self.lo))

    def rho_moment(self, s):
        val, _ = integrate.quad(
            lambda u: ((1.0 - u) / u) ** s, self.lo, self.hi, epsabs=1e-14, epsrel=1e-12, limit=200
        )
        return val / (self.hi - self.lo)

    def rho_log_mean(self):
        # antiderivative of log((1-u)/u) is (u-1) log(1-u) - u log(u)
        def g(u):
            return (u - 1.0) * math.log1p(-u) - u * math.log(u)

        return (g(self.hi) - g(self.lo)) / (self.hi - self.lo)

    def rho_sup(self):
        return (1.0 - self.lo) / self.lo

    def sample(self, rng, size=None):
        return rng.uniform(self.lo, self.hi, size=size)

    def to_json(self):
        return {"type": "uniform", "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class DiscreteMixture(EnvSpec):
    """Finite mixture sum_i w_i * delta(loc_i); atoms = ((w, loc), ...)."""

    atoms: tuple[tuple[float, float], ...]

    def __post_init__(self):
        atoms = tuple((float(w), float(loc)) for w, loc in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if not atoms:
            raise ValueError("need at least one atom")
        w = np.array([a[0] for a in atoms])
        loc = np.array([a[1] for a in atoms])
        if np.any(w < 0.0):
            raise ValueError("atom weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"atom weights must sum to 1, got {w.sum()!r}")
        if np.any(loc <= 0.0) or np.any(loc >= 1.0):
            raise ValueError("atom locations must lie strictly inside (0, 1)")
        if np.any(np.diff(loc) <= 0.0):
            raise ValueError("atom locations must be strictly increasing")

    def _wl(self):
        w = np.array([a[0] for a in self.atoms])
        loc = np.array([a[1] for a in self.atoms])
        return w, loc

    def cdf(self, u):
        w, loc = self._wl()
        u = np.asarray(u, dtype=float)
        out = (w[:, None] * (loc[:, None] <= u.reshape(1, -1))).sum(axis=0)
        out = out.reshape(u.shape)
        return out if out.ndim else float(out)

    def cdf_left(self, u):
        w, loc = self._wl()
        u = np.asarray(u, dtype=float)
        out = (w[:, None] * (loc[:, None] < u.reshape(1, -1))).sum(axis=0)
        out = out.reshape(u.shape)
        return out if out.ndim else float(out)

    def moment(self, alpha, beta):
        w, loc = self._wl()
        return float(np.sum(w * loc**alpha * (1.0 - loc) ** beta))

    def rho_moment(self, s):
        w, loc = self._wl()
        rho = (1.0 - loc) / loc
        with np.errstate(over="ignore"):
            val = float(np.sum(w * rho**s))
        return val

    def rho_log_mean(self):
        w, loc = self._wl()
        return float(np.sum(w * np.log((1.0 - loc) / loc)))

    def rho_sup(self):
        _, loc = self._wl()
        return float(np.max((1.0 - loc) / loc))

    def sample(self, rng, size=None):
        w, loc = self._wl()
        cum = np.cumsum(w)
        cum[-1] = 1.0
        u = rng.random(size)
        idx = np.searchsorted(cum, u, side="right")
        out = loc[np.minimum(idx, len(loc) - 1)]
        return out if size is not None else float(out)

    def to_json(self):
        return {"type": "discrete", "atoms": [[w, loc] for w, loc in self.atoms]}


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def _check_unit_interval(u):
    arr = np.asarray(u, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > 1.0) or np.any(~np.isfinite(arr)):
        raise ValueError("cdf argument must lie in [0, 1]")


def exact_cdf(spec: EnvSpec, u):
    """F(u) = P(omega <= u) for u in [0, 1]."""
    _check_unit_interval(u)
    return spec.cdf(u)


def exact_cdf_left(spec: EnvSpec, u):
    """Left limit F(u-); equals F(u) except at atoms of a discrete law."""
    _check_unit_interval(u)
    return spec.cdf_left(u)


def exact_moment(spec: EnvSpec, alpha: int, beta: int) -> float:
    """Mixed moment m^{alpha,beta} = E[omega^alpha (1-omega)^beta]."""
    if alpha < 0 or beta < 0 or alpha != int(alpha) or beta != int(beta):
        raise ValueError("moment orders must be nonnegative integers")
    return spec.moment(int(alpha), int(beta))


def target_cdf_grid(spec: EnvSpec, M: int) -> np.ndarray:
    """Population value of the rank-M Bernstein-type c.d.f. approximation.

    Entry l (l = 0..M+1) is sum_{k<l} C(M,k) m^{k,M-k}, the quantity the
    path estimator of the same rank is unbiased for on the grid l/(M+1).
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    k = np.arange(M + 1)
    logc = special.gammaln(M + 1) - special.gammaln(k + 1) - special.gammaln(M - k + 1)
    logm = np.array([math.log(spec.moment(int(kk), int(M - kk))) for kk in k])
    terms = np.exp(logc + logm)
    out = np.concatenate([[0.0], np.cumsum(terms)])
    # the full binomial sum telescopes to E[(omega + 1 - omega)^M] = 1;
    # renormalise so the endpoint is exact
    return out / out[-1]


def solve_kappa(spec: EnvSpec) -> Regime:
    """Classify the walk and find the tail exponent when transient right.

    kappa is the unique positive root of E[rho^s] = 1, located by bracketed
    root-finding on the closed forms above; |E[rho^kappa] - 1| <= 1e-10.
    """
    mu = spec.rho_log_mean()
    lattice = isinstance(spec, DiscreteMixture)
    if abs(mu) < RECURRENCE_TOL:
        return Regime("recurrent", None, mu, lattice)
    if mu > 0.0:
        return Regime("transient_left", None, mu, lattice)
    if spec.rho_sup() <= 1.0 + 1e-12:
        # rho <= 1 a.s. forces E[rho^s] < 1 for every s > 0
        return Regime("no_kappa", None, mu, lattice)

    def f(s):
        return spec.rho_moment(s) - 1.0

    limit = spec.rho_moment_limit()
    if math.isfinite(limit):
        probes = [limit * (1.0 - 0.5**kk) for kk in range(1, 60)]
    else:
        probes = [float(2**kk) for kk in range(0, 60)]

    s_neg, s_hi, v_hi = 0.0, None, None
    last = (math.nan, math.nan)
    for s in probes:
        v = f(s)
        last = (s, v)
        if not math.isfinite(v) or v > 0.0:
            s_hi, v_hi = s, v
            break
        s_neg = s
    if s_hi is None:
        raise KappaBracketError(*last)

    if s_neg == 0.0:
        # root below the first probe: shrink until the value goes negative
        t = s_hi / 2.0
        while f(t) >= 0.0:
            t /= 2.0
            if t < 1e-12:
                raise KappaBracketError(t, f(t))
        s_neg = t
    while not math.isfinite(v_hi):
        s_hi = 0.5 * (s_neg + s_hi)
        v_hi = f(s_hi)
        if v_hi <= 0.0:
            s_neg, v_hi = s_hi, math.inf
            s_hi = 0.5 * (s_hi + limit if math.isfinite(limit) else 2.0 * s_hi)
            v_hi = f(s_hi)

    kappa = float(optimize.brentq(f, s_neg, s_hi, xtol=1e-13, rtol=8.9e-16, maxiter=200))
    resid = f(kappa)
    if abs(resid) > KAPPA_TOL:
        raise KappaBracketError(kappa, resid)
    return Regime("transient_right", kappa, mu, lattice)


def holder_constant(spec: EnvSpec, gamma: float, grid_points: int = 100_001) -> float:
    """Numerical Holder norm of F: sup-ratio on a fine grid.

    gamma in (0, 1]: sup |F(v)-F(u)| / |v-u|^gamma.
    gamma in (1, 2]: sup |f| plus the (gamma-1)-Holder seminorm of the
    density f.  Discrete mixtures have jumps, so the norm is infinite.
    The value is grid-limited and meant for bound checks with slack, not
    for exact analysis.
    """
    if not (0.0 < gamma <= 2.0):
        raise ValueError("gamma must lie in (0, 2]")
    if isinstance(spec, DiscreteMixture):
        return math.inf
    u = np.linspace(0.0, 1.0, grid_points)
    if gamma <= 1.0:
        F = np.asarray(spec.cdf(u))
        best = _adjacent_ratio(u, F, gamma)
        if gamma < 1.0:
            # long-range pairs dominate for gamma < 1; a coarse all-pairs
            # pass is enough at bound-check accuracy
            step = max(1, (grid_points - 1) // 2000)
            best = max(best, _allpairs_ratio(u[::step], F[::step], gamma))
        return best
    f = np.asarray(spec.pdf(u))
    sup_f = float(np.max(f))
    if gamma == 2.0:
        semi = _adjacent_ratio(u, f, 1.0)
    else:
        step = max(1, (grid_points - 1) // 2000)
        semi = max(
            _adjacent_ratio(u, f, gamma - 1.0),
            _allpairs_ratio(u[::step], f[::step], gamma - 1.0),
        )
    return sup_f + semi


def _adjacent_ratio(x, y, expo):
    dy = np.abs(np.diff(y))
    dx = np.diff(x)
    return float(np.max(dy / dx**expo))


def _allpairs_ratio(x, y, expo, block=512):
    best = 0.0
    m = len(x)
    for s in range(0, m, block):
        xi = x[s : s + block, None]
        yi = y[s : s + block, None]
        dx = np.abs(x[None, :] - xi)
        dy = np.abs(y[None, :] - yi)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(dx > 0.0, dy / dx**expo, 0.0)
        best = max(best, float(np.max(r)))
    return best


def env_spec_from_json(obj) -> EnvSpec:
    """Parse an EnvSpec from a JSON object or string."""
    if isinstance(obj, str):
        obj = json.loads(obj)
    if not isinstance(obj, dict) or "type" not in obj:
        raise ValueError("environment spec must be an object with a 'type' key")
    kind = obj["type"]
    try:
        if kind == "beta":
            return Beta(float(obj["a"]), float(obj["b"]))
        if kind == "uniform":
            return UniformInterval(float(obj["lo"]), float(obj["hi"]))
        if kind == "discrete":
            return DiscreteMixture(tuple((float(w), float(loc)) for w, loc in obj["atoms"]))
    except KeyError as exc:
        raise ValueError(f"missing field {exc} in environment spec") from exc
    raise ValueError(f"unknown environment spec type {kind!r}")
