"""Trajectory samplers: the walk itself and its branching representation.

Randomness comes from counter-based Philox streams keyed by a 64-bit user
seed plus a stream tag, so every consumer is reproducible and independent:

  environment sites  key = (seed, chunk_index << 2 | 0), 64 sites per chunk
  walk steps         key = (seed, 1)
  branching draws    key = (seed, 2)
  tail sampling      key = (seed, 3)

Sites are generated a chunk at a time, so the values at a site never
depend on the order in which sites are first visited.

The left-step counts of the stopped walk, read from the target site back
to the origin, form a Markov chain whose step law is negative binomial:
given the current count i and a site probability a, the next count is the
number of failures before the (i+1)-th success in Bernoulli(a) trials.
Averaging over a ~ nu gives the annealed kernel row computed here.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .env import Beta, DiscreteMixture, EnvSpec, UniformInterval, env_spec_from_json, solve_kappa

__all__ = [
    "Environment",
    "ZPath",
    "KernelRow",
    "MaxStepsExceeded",
    "StateOverflowError",
    "KernelTailError",
    "RegimeError",
    "DegenerateDataError",
    "derive_seed",
    "sample_environment",
    "simulate_walk",
    "simulate_z_branching",
    "batch_z_annealed",
    "batch_z_quenched",
    "kernel_row",
    "invariant_tail",
    "write_zpath_csv",
    "read_zpath_csv",
    "write_zpath_bin",
    "read_zpath_bin",
]

_MASK64 = (1 << 64) - 1
_ENV_CHUNK = 64
_WALK_TAG = 1
_BRANCH_TAG = 2
_TAIL_TAG = 3
DEFAULT_MAX_STEPS = 10**11
# branching states beyond this abort rather than risk int64 trouble
_STATE_CAP = 2**62


class MaxStepsExceeded(RuntimeError):
    def __init__(self, steps_taken: int, max_steps: int):
        self.steps_taken = steps_taken
        self.max_steps = max_steps
        super().__init__(f"walk did not hit the target within max_steps={max_steps}")


class StateOverflowError(RuntimeError):
    """Branching state exceeded the representable cap."""


class KernelTailError(RuntimeError):
    """Kernel row tail mass failed to drop below tolerance within the cap."""


class RegimeError(RuntimeError):
    """Operation requested for an environment in an unsupported regime."""


class DegenerateDataError(RuntimeError):
    """The observed path carries no usable occupation counts."""


def derive_seed(base: int, *parts) -> int:
    """Deterministic 64-bit child seed from a base seed and labels."""
    text = ":".join([str(int(base))] + [str(p) for p in parts])
    digest = hashlib.sha256(text.encode("ascii")).digest()
    return int.from_bytes(digest[:8], "little")


def _stream(seed: int, tag: int) -> np.random.Generator:
    key = np.array([seed & _MASK64, tag & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class Environment:
    """Lazily sampled i.i.d. site probabilities, memoized per 64-site chunk."""

    def __init__(self, spec: EnvSpec, seed: int):
        self.spec = spec
        self.seed = int(seed)
        self._chunks: dict[int, np.ndarray] = {}

    def _chunk(self, c: int) -> np.ndarray:
        got = self._chunks.get(c)
        if got is None:
            tag = ((c << 2) & _MASK64) | 0
            rng = _stream(self.seed, tag)
            got = np.asarray(self.spec.sample(rng, _ENV_CHUNK), dtype=float)
            self._chunks[c] = got
        return got

    def omega(self, x: int) -> float:
        c, off = divmod(int(x), _ENV_CHUNK)
        return float(self._chunk(c)[off])

    def omega_block(self, lo: int, hi: int) -> np.ndarray:
        """Values for sites lo..hi inclusive."""
        if hi < lo:
            return np.empty(0)
        c_lo, c_hi = lo // _ENV_CHUNK, hi // _ENV_CHUNK
        parts = [self._chunk(c) for c in range(c_lo, c_hi + 1)]
        flat = np.concatenate(parts)
        start = lo - c_lo * _ENV_CHUNK
        return flat[start : start + (hi - lo + 1)]


def sample_environment(spec: EnvSpec, seed: int) -> Environment:
    return Environment(spec, seed)


@dataclass
class ZPath:
    """Left-step counts of the stopped walk, read right to left.

    z[k] is the number of left steps out of site n-k before the walk first
    hits n, for k = 0..n; z[0] = 0 always.  hitting_time is the exact step
    count for the walk engine; the branching engine reports the
    statistic-equivalent value n + 2*sum(z[:n]) and sets time_is_proxy.
    """

    n: int
    hitting_time: int
    z: np.ndarray
    time_is_proxy: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.int64)
        if self.z.shape != (self.n + 1,):
            raise ValueError(f"z must have length n+1={self.n + 1}, got {self.z.shape}")
        if self.z[0] != 0:
            raise ValueError("z[0] must be 0: no left step out of the target site")

    def occupation_count(self, M: int) -> int:
        """N^M = #{x in [0, n): z[x] >= M}; N^0 = n by convention."""
        return int(np.count_nonzero(self.z[: self.n] >= M)) if M > 0 else self.n

    def max_level(self) -> int:
        return int(self.z[: self.n].max()) if self.n > 0 else 0


def simulate_walk(env: Environment, n: int, seed: int, max_steps: int = DEFAULT_MAX_STEPS) -> ZPath:
    """Step the walk from 0 until it first hits n; count left steps per site.

    Runs in pure Python over pre-drawn uniform blocks; the step identity
    T = n + 2 * (total left steps over all visited sites) is checked on
    every run.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = _stream(seed, _WALK_TAG)

    base = -_ENV_CHUNK  # lowest site with a slot
    top = min(n - 1, _ENV_CHUNK)  # highest site with a slot
    om = env.omega_block(base, top).tolist()
    left = [0] * (top - base + 1)

    buf = rng.random(1 << 16).tolist()
    bi = 0
    blen = len(buf)
    s = 0
    t = 0
    while s != n:
        if t >= max_steps:
            raise MaxStepsExceeded(t, max_steps)
        if bi == blen:
            buf = rng.random(1 << 16).tolist()
            bi = 0
        idx = s - base
        if idx < 0:
            grow = env.omega_block(base - _ENV_CHUNK, base - 1).tolist()
            om = grow + om
            left = [0] * _ENV_CHUNK + left
            base -= _ENV_CHUNK
            idx = s - base
        elif idx >= len(om):
            new_top = min(n - 1, top + _ENV_CHUNK)
            grow = env.omega_block(top + 1, new_top).tolist()
            om = om + grow
            left = left + [0] * (new_top - top)
            top = new_top
            idx = s - base
        if buf[bi] < om[idx]:
            s += 1
        else:
            left[idx] += 1
            s -= 1
        bi += 1
        t += 1

    total_left = sum(left)
    if t != n + 2 * total_left:
        raise RuntimeError("step-count identity violated; walk accounting is broken")
    z = np.zeros(n + 1, dtype=np.int64)
    for site in range(0, n):  # z[k] counts site n-k; site n has no slot and no left steps
        z[n - site] = left[site - base]
    return ZPath(
        n=n,
        hitting_time=t,
        z=z,
        time_is_proxy=False,
        meta={"engine": "walk", "seed": int(seed), "spec": env.spec.to_json()},
    )


def _nb_draw(rng, successes, p):
    # numpy refuses parameter ranges whose draws could not fit in int64;
    # surface that as the package's own overflow error
    try:
        return rng.negative_binomial(successes, p)
    except ValueError as exc:
        raise StateOverflowError(f"branching draw overflows int64: {exc}") from exc


def simulate_z_branching(
    spec: EnvSpec,
    n: int,
    seed: int,
    mode: str = "annealed",
    env: Environment | None = None,
) -> ZPath:
    """Draw the left-step count chain directly, without stepping the walk.

    mode="annealed" draws a fresh site probability from the law at every
    step, matching the distribution of the walk-derived counts.
    mode="quenched" reads site n-x-1 of the supplied environment at step x,
    matching the conditional law given that environment.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if mode not in ("annealed", "quenched"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "quenched" and env is None:
        raise ValueError("quenched mode needs an environment")
    rng = _stream(seed, _BRANCH_TAG)
    z = np.zeros(n + 1, dtype=np.int64)
    cur = 0
    for x in range(n):
        if mode == "annealed":
            a = float(spec.sample(rng))
        else:
            a = env.omega(n - x - 1)
        cur = int(_nb_draw(rng, cur + 1, a))
        if cur > _STATE_CAP:
            raise StateOverflowError(f"branching state {cur} exceeds cap at step {x}")
        z[x + 1] = cur
    proxy = int(n + 2 * int(z[:n].sum()))
    meta = {"engine": f"branching-{mode}", "seed": int(seed), "spec": spec.to_json()}
    return ZPath(n=n, hitting_time=proxy, z=z, time_is_proxy=True, meta=meta)


def batch_z_annealed(spec: EnvSpec, n: int, reps: int, seed: int) -> np.ndarray:
    """Matrix of independent annealed count chains, shape (reps, n+1)."""
    rng = _stream(seed, _BRANCH_TAG)
    out = np.zeros((reps, n + 1), dtype=np.int64)
    cur = np.zeros(reps, dtype=np.int64)
    for x in range(n):
        a = np.asarray(spec.sample(rng, reps), dtype=float)
        cur = _nb_draw(rng, cur + 1, a)
        if cur.max() > _STATE_CAP:
            raise StateOverflowError(f"branching state exceeds cap at step {x}")
        out[:, x + 1] = cur
    return out

def batch_z_quenched(env: Environment, n: int, reps: int, seed: int) -> np.ndarray:
    """Independent quenched chains sharing one environment, shape (reps, n+1)."""
    rng = _stream(seed, _BRANCH_TAG)
    out = np.zeros((reps, n + 1), dtype=np.int64)
    cur = np.zeros(reps, dtype=np.int64)
    for x in range(n):
        a = env.omega(n - x - 1)
        cur = _nb_draw(rng, cur + 1, a)
        if cur.max() > _STATE_CAP:
            raise StateOverflowError(f"branching state exceeds cap at step {x}")
        out[:, x + 1] = cur
    return out


@dataclass(frozen=True)
class KernelRow:
    """One row of the annealed transition kernel: K(i, j) for j = 0..j_max."""

    i: int
    probs: np.ndarray
    tail_mass: float


def _log_choose(nn, kk):
    return special.gammaln(nn + 1.0) - special.gammaln(kk + 1.0) - special.gammaln(nn - kk + 1.0)


def _kernel_terms(spec: EnvSpec, i: int, j: np.ndarray) -> np.ndarray:
    """K(i, j) = C(i+j, j) * E[a^{i+1} (1-a)^j] for a vector of j."""
    lc = _log_choose(i + j.astype(float), j.astype(float))
    if isinstance(spec, Beta):
        lm = special.betaln(spec.a + i + 1.0, spec.b + j.astype(float)) - special.betaln(
            spec.a, spec.b
        )
        return np.exp(lc + lm)
    if isinstance(spec, DiscreteMixture):
        w = np.array([a[0] for a in spec.atoms])
        loc = np.array([a[1] for a in spec.atoms])
        lp = (
            lc[:, None]
            + (i + 1.0) * np.log(loc)[None, :]
            + j.astype(float)[:, None] * np.log1p(-loc)[None, :]
        )
        return np.exp(lp) @ w
    if isinstance(spec, UniformInterval):
        # the integrand in a is a polynomial of degree i+1+j
        lo, hi = spec.lo, spec.hi
        q = int((i + int(j.max()) + 1) // 2 + 2)
        x, wq = np.polynomial.legendre.leggauss(q)
        a = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        lp = (
            lc[:, None]
            + (i + 1.0) * np.log(a)[None, :]
            + j.astype(float)[:, None] * np.log1p(-a)[None, :]
        )
        return (np.exp(lp) @ (wq * 0.5 * (hi - lo))) / (hi - lo)
    raise TypeError(f"unsupported environment spec {type(spec).__name__}")


def kernel_row(
    spec: EnvSpec, i: int, j_max: int | None = None, tail_tol: float = 1e-10, j_cap: int = 10**7
) -> KernelRow:
    """Annealed kernel row at state i, truncated once the tail is negligible.

    If j_max is given the row is returned as requested; otherwise the
    support is doubled until the missing mass drops below tail_tol.
    """
    if i < 0:
        raise ValueError("state must be nonnegative")
    if j_max is not None:
        j = np.arange(j_max + 1)
        probs = _kernel_terms(spec, i, j)
        return KernelRow(i=i, probs=probs, tail_mass=max(0.0, 1.0 - float(probs.sum())))
    guess = 64 + 8 * i
    while True:
        j = np.arange(guess + 1)
        probs = _kernel_terms(spec, i, j)
        tail = 1.0 - float(probs.sum())
        if tail < tail_tol:
            return KernelRow(i=i, probs=probs, tail_mass=max(0.0, tail))
        if guess >= j_cap:
            raise KernelTailError(
                f"kernel row i={i}: tail mass {tail!r} above {tail_tol!r} at j_max={guess}"
            )
        guess = min(2 * guess, j_cap)


def invariant_tail(
    spec: EnvSpec,
    M: int,
    n_samples: int = 100_000,
    n_terms: int = 4096,
    seed: int = 0,
    term_tol: float = 1e-14,
) -> tuple[float, float]:
    """Monte Carlo estimate of the invariant tail pi([M, inf)) = E[(1-1/W)^M].

    W = 1 + rho_1 + rho_1 rho_2 + ... converges a.s. when E[log rho] < 0;
    the running product is truncated once it falls below term_tol.
    Returns (estimate, standard_error).
    """
    if M < 0:
        raise ValueError("M must be >= 0")
    regime = solve_kappa(spec)
    if not regime.is_transient_right:
        raise RegimeError(f"invariant law needs E[log rho] < 0, got regime {regime.kind!r}")
    rng = _stream(seed, _TAIL_TAG)
    w = np.ones(n_samples)
    prod = np.ones(n_samples)
    active = np.arange(n_samples)
    for _ in range(n_terms):
        if active.size == 0:
            break
        omega = np.asarray(spec.sample(rng, active.size), dtype=float)
        prod[active] *= (1.0 - omega) / omega
        w[active] += prod[active]
        keep = prod[active] >= term_tol
        active = active[keep]
    vals = (1.0 - 1.0 / w) ** M
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else 0.0
    return est, se


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def write_zpath_csv(path, zpath: ZPath) -> None:
    seed = zpath.meta.get("seed", "")
    spec = zpath.meta.get("spec")
    spec_txt = "" if spec is None else __import__("json").dumps(spec, separators=(",", ":"))
    with open(path, "w", newline="") as fh:
        fh.write(
            f"# n={zpath.n} T_n={zpath.hitting_time} seed={seed} spec={spec_txt}"
            f"{' proxy=1' if zpath.time_is_proxy else ''}\n"
        )
        writer = csv.writer(fh)
        writer.writerow(["x", "z"])
        for x, v in enumerate(zpath.z):
            writer.writerow([x, int(v)])


def read_zpath_csv(path) -> ZPath:
    meta = {}
    rows = []
    with open(path, newline="") as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise ValueError("missing metadata line")
        fields = header[1:].split()
        kv = dict(f.split("=", 1) for f in fields if "=" in f)
        reader = csv.reader(fh)
        names = next(reader)
        if names[:2] != ["x", "z"]:
            raise ValueError("unexpected column header")
        for row in reader:
            if row:
                rows.append(int(row[1]))
    n = int(kv["n"])
    meta["seed"] = int(kv["seed"]) if kv.get("seed", "") not in ("", "None") else None
    if kv.get("spec"):
        meta["spec"] = env_spec_from_json(kv["spec"]).to_json()
    return ZPath(
        n=n,
        hitting_time=int(kv["T_n"]),
        z=np.array(rows, dtype=np.int64),
        time_is_proxy=kv.get("proxy") == "1",
        meta=meta,
    )


def write_zpath_bin(path, zpath: ZPath) -> None:
    """Compact dump: little-endian int64 words [n, T_n, proxy_flag, z_0..z_n]."""
    head = np.array([zpath.n, zpath.hitting_time, int(zpath.time_is_proxy)], dtype="<i8")
    with open(path, "wb") as fh:
        fh.write(head.tobytes())
        fh.write(zpath.z.astype("<i8").tobytes())


def read_zpath_bin(path) -> ZPath:
    raw = np.fromfile(path, dtype="<i8")
    if raw.size < 4:
        raise ValueError("truncated binary path file")
    n = int(raw[0])
    if raw.size != 3 + n + 1:
        raise ValueError("binary path length mismatch")
    return ZPath(
        n=n,
        hitting_time=int(raw[1]),
        z=raw[3:].astype(np.int64),
        time_is_proxy=bool(raw[2]),
        meta={},
    )
