"""Data-driven rank selection balancing stochastic radius against bias proxy.

For each candidate rank M the stochastic radius is

  R(M) = (n / N^M) * sqrt((z + 3 log M) / (2n)),

the bias proxy is

  Delta(M) = sup_{M' >= 1} { ||Fhat^{M'} - Fhat^{M /\\ M'}||_inf - 2 R(M') },

and the selected rank minimises Delta(M) + 2 R(M) (smallest index wins
ties).  Two exact reductions make this affordable:

  * terms with M' <= M contribute -2 R(M'), whose maximum is -2 R(1);
  * any M' with R(M') >= R(1) + 1/2 satisfies
    ||...|| - 2 R(M') <= 1 - 2 R(M') <= -2 R(1), so it can never raise
    the supremum above the M'=1 term already present.

Both follow from the radii being nondecreasing in M and every estimate
being a c.d.f. (sup-norm differences at most 1), so the pruned programme
has exactly the same value as the literal one over the candidate family.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .estimators import CdfEstimate, estimate_cdf_sweep
from .walk import DegenerateDataError, ZPath

__all__ = [
    "LepskiiResult",
    "radius",
    "select",
    "adaptive_estimate",
    "lepskii_result_to_json",
    "lepskii_result_from_json",
]


@dataclass
class LepskiiResult:
    z: float
    M_max: int
    chosen_M: int
    radii: np.ndarray  # entry M-1 holds R(M)
    deltas: np.ndarray
    objective: np.ndarray
    final: CdfEstimate
    n: int
    visits: np.ndarray = None
    family_capped: bool = False  # candidate family cut below the data ceiling
    meta: dict = field(default_factory=dict)


def radius(zpath: ZPath, M: int, z: float) -> float:
    """Stochastic radius R(M); infinite when the occupation count is zero."""
    if M < 1:
        raise ValueError("M must be >= 1")
    if z <= 0:
        raise ValueError("z must be positive")
    visits = zpath.occupation_count(M)
    if visits == 0:
        return math.inf
    n = zpath.n
    return (n / visits) * math.sqrt((z + 3.0 * math.log(M)) / (2.0 * n))


def _pair_norms_upto(grids: list[np.ndarray], m_sup: int) -> dict[int, np.ndarray]:
    """Exact sup norms D[m, M'] = ||Fhat^{M'} - Fhat^m|| for m < M' <= m_sup.

    Both functions are right-continuous steps with rational knots, so the
    sup is a max over the union of knot sets; knot evaluation uses integer
    floor division, avoiding float rounding at shared rationals.
    Returns, per M', the vector over m = 1..M'-1.
    """
    width = m_sup + 2
    padded = np.ones((m_sup, width))
    for m in range(1, m_sup + 1):
        padded[m - 1, : m + 2] = grids[m - 1]
    cols = {}
    l_all = np.arange(width, dtype=np.int64)
    for mp in range(2, m_sup + 1):
        rows = np.arange(1, mp, dtype=np.int64)  # candidate m < M'
        g_mp = padded[mp - 1, : mp + 2]
        # evaluate each Fhat^m at the knots of M'
        lp = np.arange(mp + 2, dtype=np.int64)
        idx1 = (rows[:, None] + 1) * lp[None, :] // (mp + 1)
        vals1 = np.take_along_axis(padded[: mp - 1], idx1, axis=1)
        e1 = np.max(np.abs(vals1 - g_mp[None, :]), axis=1)
        # evaluate Fhat^{M'} at the knots of each m
        valid = l_all[None, :] <= (rows + 1)[:, None]
        idx2 = np.minimum((mp + 1) * l_all[None, :] // (rows[:, None] + 1), mp + 1)
        vals2 = g_mp[idx2]
        diff2 = np.where(valid, np.abs(vals2 - padded[: mp - 1]), 0.0)
        e2 = np.max(diff2, axis=1)
        cols[mp] = np.maximum(e1, e2)
    return cols


def select(estimates: list[CdfEstimate], zpath: ZPath, z: float) -> LepskiiResult:
    """Pick the rank minimising the bias-proxy-plus-radius objective.

    estimates must cover a contiguous family M = 1..M_max with positive
    occupation counts; appending ranks with zero occupation would leave
    the choice unchanged, so they are rejected here instead.
    """
    if z <= 0:
        raise ValueError("z must be positive")
    if not estimates:
        raise DegenerateDataError("empty candidate family: no rank has positive occupation")
    m_max = len(estimates)
    for pos, est in enumerate(estimates, start=1):
        if est.M != pos:
            raise ValueError("estimates must cover a contiguous family 1..M_max")
    n = zpath.n
    visits = np.array([e.visits for e in estimates], dtype=np.int64)
    if visits[0] == 0:
        raise DegenerateDataError("occupation count at rank 1 is zero")
    if np.any(visits == 0):
        raise ValueError("family contains ranks with zero occupation; trim it first")

    m_idx = np.arange(1, m_max + 1, dtype=float)
    radii = (n / visits) * np.sqrt((z + 3.0 * np.log(m_idx)) / (2.0 * n))

    # largest rank whose comparison term can still reach the supremum
    reachable = radii <= radii[0] + 0.5
    m_sup = int(np.max(np.nonzero(reachable)[0])) + 1 if np.any(reachable) else 1

    grids = [np.asarray(e.grid_values, dtype=float) for e in estimates]
    cols = _pair_norms_upto(grids, m_sup)

    base = -2.0 * radii[0]
    terms = np.full((m_max, m_sup + 1), -np.inf)
    for mp in range(2, m_sup + 1):
        terms[: mp - 1, mp] = cols[mp] - 2.0 * radii[mp - 1]
    deltas = np.maximum(terms.max(axis=1, initial=-np.inf), base)
    objective = deltas + 2.0 * radii
    chosen = int(np.argmin(objective)) + 1
    return LepskiiResult(
        z=float(z),
        M_max=m_max,
        chosen_M=chosen,
        radii=radii,
        deltas=deltas,
        objective=objective,
        final=estimates[chosen - 1],
        n=n,
        visits=visits,
    )


def adaptive_estimate(
    zpath: ZPath, z: float | str = "auto", m_cap: int | None = None
) -> LepskiiResult:
    """Full pipeline: sweep ranks 1..M_max, then select.

    z="auto" uses log(n).  The data ceiling max{M : N^M >= 1} equals the
    largest observed count, which in the recurrent regime can reach 1e9;
    the family is therefore capped at m_cap (default n), which is far
    above any rank the objective can select at that sample size.
    """
    n = zpath.n
    if n < 2:
        raise ValueError("need n >= 2")
    if z == "auto":
        z_val = math.log(n)
    else:
        z_val = float(z)
        if z_val <= 0:
            raise ValueError("z must be positive")
    ceiling = zpath.max_level()
    if ceiling < 1:
        raise DegenerateDataError("all occupation counts are zero; nothing to estimate")
    cap = n if m_cap is None else int(m_cap)
    m_top = min(ceiling, max(1, cap))
    estimates = estimate_cdf_sweep(zpath, m_top)
    result = select(estimates, zpath, z_val)
    result.family_capped = ceiling > m_top
    result.meta["ceiling"] = ceiling
    return result


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def lepskii_result_to_json(res: LepskiiResult) -> dict:
    return {
        "z": res.z,
        "M_max": res.M_max,
        "chosen_M": res.chosen_M,
        "n": res.n,
        "family_capped": bool(res.family_capped),
        "per_M": [
            {
                "M": m + 1,
                "N": int(res.visits[m]),
                "radius": float(res.radii[m]),
                "delta": float(res.deltas[m]),
                "objective": float(res.objective[m]),
            }
            for m in range(res.M_max)
        ],
        "final_grid": [float(v) for v in res.final.grid_values],
    }


def lepskii_result_from_json(obj) -> LepskiiResult:
    if isinstance(obj, str):
        obj = json.loads(obj)
    per = obj["per_M"]
    m_max = obj["M_max"]
    grid = np.array(obj["final_grid"], dtype=float)
    chosen = obj["chosen_M"]
    final = CdfEstimate(
        M=len(grid) - 2, grid_values=grid, visits=int(per[chosen - 1]["N"]), n=int(obj["n"])
    )
    return LepskiiResult(
        z=float(obj["z"]),
        M_max=int(m_max),
        chosen_M=int(chosen),
        radii=np.array([p["radius"] for p in per]),
        deltas=np.array([p["delta"] for p in per]),
        objective=np.array([p["objective"] for p in per]),
        final=final,
        n=int(obj["n"]),
        visits=np.array([p["N"] for p in per], dtype=np.int64),
        family_capped=bool(obj.get("family_capped", False)),
    )
