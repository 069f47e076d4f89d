"""Headless figure rendering for the report paths.

Everything draws through the Agg backend and writes straight to file; no
interactive windows. Each renderer takes the in-memory result object that
the corresponding CSV/JSON writer consumes, so plots and delimited output
always describe the same data.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "render_figure_bundle",
    "render_risk_table",
    "render_clt_report",
    "render_concentration_report",
    "render_occupation_report",
]


def _step_xy(grid: np.ndarray, values: np.ndarray):
    """Right-continuous step outline for plotting (value j on [u_j, u_{j+1}))."""
    x = np.repeat(grid, 2)[1:]
    y = np.repeat(values, 2)[:-1]
    return np.concatenate([[0.0], x, [1.0]]), np.concatenate([[values[0]], y, [values[-1]]])


def render_figure_bundle(bundle, path) -> str:
    fig, ax = plt.subplots(figsize=(6.4, 4.4))
    ax.plot(bundle.curve_u, bundle.curve_f, "k-", lw=1.6, label="target cdf")
    sx, sy = _step_xy(np.asarray(bundle.est_grid), np.asarray(bundle.est_values))
    ax.plot(sx, sy, "-", color="tab:red", lw=1.2, label=f"estimate (M={bundle.chosen_M})")
    omegas = np.sort(np.asarray(bundle.env_omega))
    ax.plot(
        omegas,
        np.arange(1, omegas.size + 1) / omegas.size,
        ":",
        color="tab:blue",
        lw=1.0,
        label="realized sites (ecdf)",
    )
    ax.set_xlim(0, 1)
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("a")
    ax.set_ylabel("F(a)")
    t_label = "~T_n" if bundle.time_is_proxy else "T_n"
    ax.set_title(
        f"n={bundle.n}  {t_label}={bundle.hitting_time}  sup loss={bundle.loss:.3f}"
    )
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def render_risk_table(table, path) -> str:
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    ns = np.array([r.n for r in table.rows], dtype=float)
    losses = np.array([r.mean_loss for r in table.rows])
    ax.loglog(ns, losses, "o-", color="tab:red", label="mean sup loss")
    if table.slope is not None:
        c = losses[0] * ns[0] ** table.slope
        ax.loglog(ns, c * ns ** (-table.slope), "k--", lw=1.0,
                  label=f"fit slope {table.slope:.3f}")
    if table.theoretical_rate is not None:
        c = losses[0] * ns[0] ** table.theoretical_rate
        ax.loglog(ns, c * ns ** (-table.theoretical_rate), ":", color="gray",
                  label=f"theory slope {table.theoretical_rate:.3f}")
    ax.set_xlabel("n")
    ax.set_ylabel("risk")
    kap = "recurrent" if table.kappa is None else f"kappa={table.kappa:.3g}"
    ax.set_title(f"adaptive risk vs n ({kap})")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def render_clt_report(report, sample, path) -> str:
    """Histogram of sqrt(n)-scaled errors with the matching normal density."""
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    s = np.asarray(sample, dtype=float)
    ax.hist(s, bins=40, density=True, color="tab:blue", alpha=0.6, label="scaled errors")
    sd = s.std(ddof=1)
    xs = np.linspace(s.min(), s.max(), 400)
    ax.plot(
        xs,
        np.exp(-((xs - s.mean()) ** 2) / (2 * sd**2)) / (sd * math.sqrt(2 * math.pi)),
        "k-",
        lw=1.4,
        label="normal fit",
    )
    ks = "" if report.ks_stat is None else f"  KS={report.ks_stat:.4f}"
    ax.set_title(f"m^{{{report.alpha},{report.beta}}}  n={report.n}{ks}")
    ax.set_xlabel("sqrt(n) * (estimate - m)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def render_concentration_report(report, path) -> str:
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    zs = np.array([r["z"] for r in report.rows])
    ax.semilogy(zs, [max(r["frequency"], 1e-6) for r in report.rows], "o",
                color="tab:red", label="observed frequency")
    ax.semilogy(zs, [r["bound_prob"] for r in report.rows], "k--",
                label="2 exp(-z) bound")
    ax.set_xlabel("z")
    ax.set_ylabel("P(|estimate - m| >= radius)")
    ax.set_title(f"deviation bound, n={report.n}, {report.replications} reps")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def render_occupation_report(report, path) -> str:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 4.0))
    ms = [r["M"] for r in report.rows]
    ax1.errorbar(
        ms,
        [r["occupation"] for r in report.rows],
        yerr=[4 * r["occupation_se"] for r in report.rows],
        fmt="o",
        color="tab:red",
        label="N^M / n",
    )
    ax1.plot(ms, [r["invariant_tail"] for r in report.rows], "k_", ms=12,
             label="invariant tail")
    ax1.set_xlabel("M")
    ax1.set_ylabel("mass at or above M")
    ax1.set_yscale("log")
    ax1.legend(fontsize=8)
    if report.profile:
        pm = [p["M"] for p in report.profile]
        ax2.errorbar(
            pm,
            [p["m_times_tail"] for p in report.profile],
            yerr=[4 * p["M"] * p["tail_se"] for p in report.profile],
            fmt="s-",
            color="tab:blue",
        )
        ax2.set_xlabel("M")
        ax2.set_ylabel("M * tail mass")
        spread = "" if report.profile_spread is None else f" (spread {report.profile_spread:.2f})"
        ax2.set_title(f"tail profile{spread}")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)
