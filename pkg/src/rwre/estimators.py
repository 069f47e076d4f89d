"""Path statistics: moment and c.d.f. estimators built from the count chain.

All estimators consume only the left-step counts z[0..n] of a stopped
walk.  The workhorse identities are

  phi_{a,b}(i,j) = prod_{l<a}(i-l) * prod_{l<b}(j-l) / prod_{l<a+b}(i+j-l)

whose conditional mean given the previous count i is m^{a,b} * 1{i >= a},
and the hypergeometric lower c.d.f.

  psi_l^M(i,j) = 1{i >= M} / C(i+j, M) * sum_{k<l} C(i,k) C(j,M-k),

whose conditional mean is 1{i >= M} * sum_{k<l} C(M,k) m^{k,M-k}.  The
rank-M c.d.f. estimate averages psi over consecutive count pairs and is a
bona fide c.d.f. on the grid l/(M+1) whenever the occupation count N^M
is positive.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .env import EnvSpec, exact_cdf, exact_cdf_left, exact_moment
from .walk import ZPath, kernel_row

__all__ = [
    "MomentEstimate",
    "CdfEstimate",
    "phi",
    "psi",
    "estimate_moment",
    "deviation_bound",
    "estimate_cdf",
    "estimate_cdf_sweep",
    "sup_loss",
    "conditional_moment_oracle",
    "conditional_cdf_oracle",
    "write_cdf_csv",
    "read_cdf_csv",
]


@dataclass(frozen=True)
class MomentEstimate:
    alpha: int
    beta: int
    value: float
    visits: int  # N^alpha, occupation count at level alpha
    n: int


@dataclass
class CdfEstimate:
    """Step-function estimate: value grid_values[l] on [l/(M+1), (l+1)/(M+1))."""

    M: int
    grid_values: np.ndarray  # length M+2, entries for l = 0..M+1
    visits: int  # N^M
    n: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid_values = np.asarray(self.grid_values, dtype=float)
        if self.grid_values.shape != (self.M + 2,):
            raise ValueError("grid_values must have length M+2")

    def knots(self) -> np.ndarray:
        return np.arange(self.M + 2) / (self.M + 1)

    def evaluate(self, u) -> np.ndarray:
        """Right-continuous evaluation at arbitrary points of [0, 1]."""
        u = np.asarray(u, dtype=float)
        idx = np.minimum((np.floor((self.M + 1) * u)).astype(int), self.M + 1)
        return self.grid_values[idx]


def phi(alpha: int, beta: int, i: int, j: int) -> float:
    """Falling-factorial ratio weight; zero off the admissible region.

    Computed as an interleaved product of ratios each at most 1, so the
    value stays in [0, 1/C(alpha+beta, alpha)] without forming factorials
    even for counts of order 1e10.
    """
    if alpha < 0 or beta < 0:
        raise ValueError("orders must be nonnegative")
    if i < alpha or j < beta:
        return 0.0
    out = 1.0
    for l in range(alpha):
        out *= (i - l) / (i + j - l)
    for l in range(beta):
        out *= (j - l) / (i + j - alpha - l)
    return out


def _phi_array(alpha: int, beta: int, i, j) -> np.ndarray:
    i = np.asarray(i, dtype=float)
    j = np.asarray(j, dtype=float)
    ok = (i >= alpha) & (j >= beta)
    out = np.ones(np.broadcast(i, j).shape)
    tot = i + j
    with np.errstate(divide="ignore", invalid="ignore"):
        for l in range(alpha):
            out = out * (i - l) / (tot - l)
        for l in range(beta):
            out = out * (j - l) / (tot - alpha - l)
    return np.where(ok, out, 0.0)


def estimate_moment(zpath: ZPath, alpha: int, beta: int) -> MomentEstimate:
    """Occupation-normalized average of phi over consecutive count pairs.

    Empty occupation (N^alpha = 0) returns value 0 under the 0/0 = 0
    convention.
    """
    if alpha < 0 or beta < 0:
        raise ValueError("orders must be nonnegative")
    z = zpath.z
    visits = zpath.occupation_count(alpha)
    if visits == 0:
        return MomentEstimate(alpha, beta, 0.0, 0, zpath.n)
    total = float(_phi_array(alpha, beta, z[:-1], z[1:]).sum())
    return MomentEstimate(alpha, beta, total / visits, visits, zpath.n)


def deviation_bound(est: MomentEstimate, z: float) -> float:
    """Radius r with P(|estimate - m| >= r) <= 2 exp(-z).

    r = (n / N^alpha) * C(alpha+beta, alpha)^{-1} * sqrt(z / (2n)).
    """
    if z <= 0:
        raise ValueError("z must be positive")
    if est.visits == 0:
        return math.inf
    c = math.comb(est.alpha + est.beta, est.alpha)
    return (est.n / est.visits) / c * math.sqrt(z / (2.0 * est.n))


def psi(l: int, M: int, i: int, j: int) -> float:
    """Hypergeometric lower c.d.f. weight psi_l^M(i, j).

    Forward recursion on the pmf ratio
      p_{k+1}/p_k = (i-k)(M-k) / ((k+1)(j-M+k+1)),
    started at the smallest admissible k with periodic rescaling, then
    normalized; the result is clamped to [0, 1].
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    if not 0 <= l <= M + 1:
        raise ValueError("need 0 <= l <= M+1")
    if i < M or l == 0:
        return 0.0
    if l == M + 1:
        return 1.0
    k0 = max(0, M - j)
    k1 = min(i, M)
    vals = [1.0]
    cur = 1.0
    for k in range(k0, k1):
        cur *= (i - k) * (M - k) / ((k + 1.0) * (j - M + k + 1.0))
        if cur > 1e250:
            scale = 1e-250
            vals = [v * scale for v in vals]
            cur *= scale
        vals.append(cur)
    total = sum(vals)
    head = sum(vals[: max(0, l - k0)])
    return min(1.0, max(0.0, head / total))


def _hyper_cdf_block(i: np.ndarray, j: np.ndarray, M: int) -> np.ndarray:
    """Rows of hypergeometric lower c.d.f.s for count pairs with i >= M.

    Row r, column l-1 equals psi_l^M(i[r], j[r]) for l = 1..M+1.  Log-space
    falling factorials keep the evaluation stable for counts up to 1e10.
    """
    i = np.asarray(i, dtype=float)[:, None]
    j = np.asarray(j, dtype=float)[:, None]
    ls = np.arange(M, dtype=float)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        li = np.where(i - ls > 0.0, np.log(np.maximum(i - ls, 1e-300)), -np.inf)
        lj = np.where(j - ls > 0.0, np.log(np.maximum(j - ls, 1e-300)), -np.inf)
    zeros = np.zeros((i.shape[0], 1))
    log_ff_i = np.concatenate([zeros, np.cumsum(li, axis=1)], axis=1)  # log [i]_k
    log_ff_j = np.concatenate([zeros, np.cumsum(lj, axis=1)], axis=1)  # log [j]_k
    log_ff_tot = np.concatenate([zeros, np.cumsum(np.log(i + j - ls), axis=1)], axis=1)

    k = np.arange(M + 1, dtype=float)
    lg_k = special.gammaln(k + 1.0)
    lg_mk = special.gammaln(M - k + 1.0)
    lg_m = special.gammaln(M + 1.0)
    logp = (
        log_ff_i
        + log_ff_j[:, ::-1]
        - lg_k[None, :]
        - lg_mk[None, :]
        + lg_m
        - log_ff_tot[:, M : M + 1]
    )
    peak = np.max(logp, axis=1, keepdims=True)
    with np.errstate(invalid="ignore"):
        p = np.exp(logp - peak)
    p[~np.isfinite(p)] = 0.0
    c = np.cumsum(p, axis=1)
    c /= c[:, -1:]
    return c


def estimate_cdf(zpath: ZPath, M: int) -> CdfEstimate:
    """Rank-M c.d.f. estimate on the grid l/(M+1), l = 0..M+1.

    One pass over the path; pairs with previous count below M contribute
    nothing.  With N^M = 0 the all-zero step function is returned and
    flagged degenerate in meta.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    z = zpath.z
    n = zpath.n
    prev = z[:n]
    mask = prev >= M
    visits = int(np.count_nonzero(mask))
    if visits == 0:
        grid = np.zeros(M + 2)
        return CdfEstimate(M, grid, 0, n, meta={"degenerate": True})
    c = _hyper_cdf_block(prev[mask], z[1:][mask], M)
    grid = np.concatenate([[0.0], c.sum(axis=0) / visits])
    return CdfEstimate(M, grid, visits, n)


def estimate_cdf_sweep(zpath: ZPath, M_top: int) -> list[CdfEstimate]:
    """All rank-M estimates for M = 1..M_top, sharing one sorted pass.

    Pairs are ordered by decreasing previous count so each rank reads a
    shrinking prefix.
    """
    z = zpath.z
    n = zpath.n
    order = np.argsort(z[:n], kind="stable")[::-1]
    i_sorted = z[:n][order]
    j_sorted = z[1:][order]
    asc = np.sort(z[:n])
    out = []
    for M in range(1, M_top + 1):
        visits = n - int(np.searchsorted(asc, M, side="left"))
        if visits == 0:
            out.append(CdfEstimate(M, np.zeros(M + 2), 0, n, meta={"degenerate": True}))
            continue
        c = _hyper_cdf_block(i_sorted[:visits], j_sorted[:visits], M)
        grid = np.concatenate([[0.0], c.sum(axis=0) / visits])
        out.append(CdfEstimate(M, grid, visits, n))
    return out


def sup_loss(est: CdfEstimate, spec: EnvSpec) -> float:
    """Exact sup-norm distance between the step estimate and the target F.

    On each grid cell the step is constant, so the supremum is reached at
    the cell endpoints: compare against F at the left end and against the
    left limit F(u-) at the right end (atoms of discrete laws enter only
    through the latter).
    """
    M = est.M
    v = est.grid_values
    u = est.knots()
    f_right = np.asarray(exact_cdf(spec, u[:-1]), dtype=float)
    f_leftlim = np.asarray(exact_cdf_left(spec, u[1:]), dtype=float)
    below = np.max(v[:-1] - f_right)
    above = np.max(f_leftlim - v[:-1])
    end = abs(v[-1] - 1.0)
    return float(max(below, above, end, 0.0))


def conditional_moment_oracle(
    spec: EnvSpec, alpha: int, beta: int, i: int, tail_tol: float = 1e-12, row=None
) -> float:
    """Kernel-side mean of phi at state i: sum_j phi(i, j) K(i, j).

    Independent of the path estimators; should reproduce the exact moment
    times 1{i >= alpha} up to the truncated kernel tail.
    """
    if row is None:
        row = kernel_row(spec, i, tail_tol=tail_tol)
    j = np.arange(len(row.probs))
    return float(np.sum(_phi_array(alpha, beta, float(i), j.astype(float)) * row.probs))


def conditional_cdf_oracle(
    spec: EnvSpec, l: int, M: int, i: int, tail_tol: float = 1e-12, row=None
) -> float:
    """Kernel-side mean of psi at state i: sum_j psi_l^M(i, j) K(i, j)."""
    if M < 1:
        raise ValueError("M must be >= 1")
    if not 0 <= l <= M + 1:
        raise ValueError("need 0 <= l <= M+1")
    if i < M or l == 0:
        return 0.0
    if row is None:
        row = kernel_row(spec, i, tail_tol=tail_tol)
    j = np.arange(len(row.probs))
    c = _hyper_cdf_block(np.full(j.shape, float(i)), j.astype(float), M)
    vals = c[:, l - 1] if l >= 1 else np.zeros(len(j))
    return float(np.sum(vals * row.probs))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def write_cdf_csv(path, est: CdfEstimate, seed=None) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# M={est.M} N={est.visits} n={est.n} seed={'' if seed is None else seed}\n")
        writer = csv.writer(fh)
        writer.writerow(["l", "u", "value"])
        for l, val in enumerate(est.grid_values):
            writer.writerow([l, repr(l / (est.M + 1)), repr(float(val))])


def read_cdf_csv(path) -> CdfEstimate:
    with open(path, newline="") as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise ValueError("missing metadata line")
        kv = dict(f.split("=", 1) for f in header[1:].split() if "=" in f)
        reader = csv.reader(fh)
        next(reader)
        vals = [float(row[2]) for row in reader if row]
    est = CdfEstimate(
        M=int(kv["M"]), grid_values=np.array(vals), visits=int(kv["N"]), n=int(kv["n"])
    )
    if kv.get("seed"):
        est.meta["seed"] = int(kv["seed"])
    return est
