"""Batch command-line interface.

Three subcommands cover the pipeline: `simulate` records a path to disk,
`estimate` runs the adaptive selection on a recorded path, and `replicate`
reruns the canned studies (risk tables, figure datasets, verifier reports).
Every command writes all artifacts under --out and finishes by writing
manifest.json there with sha256 hashes of the files produced, so a rerun
with the same config and seed is auditable byte for byte.

Exit codes: 2 bad config or input, 3 resource limit, 4 degenerate data,
5 regime mismatch.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .env import Beta, EnvSpec, env_spec_from_json
from .estimators import estimate_cdf_sweep, write_cdf_csv
from .experiments import (
    PRESETS,
    ExperimentConfig,
    run_figure_dataset,
    run_risk_experiment,
    simulate_zpath,
    verify_clt,
    verify_concentration,
    verify_occupation,
)
from .lepskii import adaptive_estimate, lepskii_result_to_json
from .walk import (
    DEFAULT_MAX_STEPS,
    DegenerateDataError,
    KernelTailError,
    MaxStepsExceeded,
    RegimeError,
    StateOverflowError,
    read_zpath_bin,
    read_zpath_csv,
    sample_environment,
    simulate_walk,
    simulate_z_branching,
    write_zpath_bin,
    write_zpath_csv,
)

EXIT_CONFIG = 2
EXIT_RESOURCE = 3
EXIT_DEGENERATE = 4
EXIT_REGIME = 5


def _resolve_seed(value: int | None) -> int:
    if value is not None:
        return value
    raw = os.environ.get("RWRE_SEED")
    if raw is None:
        return 0
    return int(raw)  # bad value -> config error


def _load_json_arg(text: str):
    """Inline JSON, or @path to a JSON file."""
    if text.startswith("@"):
        with open(text[1:]) as fh:
            return json.load(fh)
    return json.loads(text)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(outdir: Path, command: str, config: dict, seed: int,
                    outputs: list[Path], started: str) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "base_seed": seed,
        "version": __version__,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "outputs": [
            {"path": str(p.relative_to(outdir)), "sha256": _sha256(p)}
            for p in outputs
        ],
    }
    path = outdir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _dump_json(obj, path: Path) -> Path:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")
    return path


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    started = _now()
    seed = _resolve_seed(args.seed)
    spec = env_spec_from_json(_load_json_arg(args.spec))
    if args.n < 1:
        raise ValueError("n must be >= 1")
    if args.engine == "walk":
        env = sample_environment(spec, seed)
        zp = simulate_walk(env, args.n, seed, max_steps=args.max_steps)
    else:
        zp = simulate_z_branching(spec, args.n, seed, mode="annealed")
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    if args.format == "bin":
        path = outdir / "zpath.bin"
        write_zpath_bin(path, zp)
    else:
        path = outdir / "zpath.csv"
        write_zpath_csv(path, zp)
    config = {
        "spec": spec.to_json(),
        "n": args.n,
        "engine": args.engine,
        "format": args.format,
        "max_steps": args.max_steps,
    }
    _write_manifest(outdir, "simulate", config, seed, [path], started)
    t_label = "~T_n" if zp.time_is_proxy else "T_n"
    print(f"wrote {path}  n={zp.n}  {t_label}={zp.hitting_time}")
    return 0


def _read_zpath(path: Path):
    if path.suffix == ".bin":
        return read_zpath_bin(path)
    return read_zpath_csv(path)


def cmd_estimate(args) -> int:
    started = _now()
    src = Path(args.zpath)
    zp = _read_zpath(src)
    z = args.z if args.z == "auto" else float(args.z)
    res = adaptive_estimate(zp, z, m_cap=args.m_cap)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    outputs = []

    outputs.append(_dump_json(lepskii_result_to_json(res), outdir / "lepskii.json"))

    p = outdir / "selected_cdf.csv"
    write_cdf_csv(p, res.final)
    outputs.append(p)

    p = outdir / "sweep.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["M", "N", "radius", "delta", "objective"])
        for k in range(res.M_max):
            w.writerow(
                [k + 1, int(res.visits[k]), repr(float(res.radii[k])),
                 repr(float(res.deltas[k])), repr(float(res.objective[k]))]
            )
    outputs.append(p)

    if args.dump_cdfs:
        for est in estimate_cdf_sweep(zp, res.M_max):
            p = outdir / f"cdf_M{est.M:05d}.csv"
            write_cdf_csv(p, est)
            outputs.append(p)

    config = {"zpath": str(src), "z": args.z, "m_cap": args.m_cap,
              "dump_cdfs": args.dump_cdfs}
    _write_manifest(outdir, "estimate", config, 0, outputs, started)
    print(f"chose M={res.chosen_M} of {res.M_max}  (z={res.z:.6g})")
    return 0


def _preset(name: str, kind: str) -> dict:
    preset = PRESETS.get(name)
    if preset is None or preset["kind"] != kind:
        valid = sorted(k for k, v in PRESETS.items() if v["kind"] == kind)
        raise ValueError(f"unknown {kind} preset {name!r}; choose from {valid}")
    return preset


def _config_spec(config: dict, default: EnvSpec) -> EnvSpec:
    if "spec" in config:
        return env_spec_from_json(config["spec"])
    return default


def cmd_replicate(args) -> int:
    started = _now()
    seed = _resolve_seed(args.seed)
    config = _load_json_arg(args.config) if args.config else {}
    if not isinstance(config, dict):
        raise ValueError("config must be a JSON object")
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    outputs: list[Path] = []

    if args.table1:
        preset = _preset(args.table1, "table")
        spec = _config_spec(config, preset["spec"])
        key_n = "full_n_values" if args.full_scale else "n_values"
        key_r = "full_replications" if args.full_scale else "replications"
        n_values = tuple(config.get("n_values", preset[key_n]))
        reps = int(config.get("replications", preset[key_r]))
        cfg = ExperimentConfig(
            spec=spec,
            n_values=n_values,
            replications=reps,
            base_seed=seed,
            z_policy=config.get("z", "auto"),
            workers=args.workers,
            engine=args.engine if args.engine != "auto" else config.get("engine", "auto"),
            m_cap=config.get("m_cap"),
            max_steps=int(config.get("max_steps", DEFAULT_MAX_STEPS)),
        )
        table = run_risk_experiment(cfg)
        p = outdir / "risk_table.csv"
        table.to_csv(p)
        outputs.append(p)
        outputs.append(_dump_json(table.to_json(), outdir / "risk_table.json"))
        if args.plots:
            from .plots import render_risk_table

            outputs.append(Path(render_risk_table(table, outdir / "risk_table.png")))
        resolved = table.config | {"preset": args.table1, "full_scale": args.full_scale}
        _write_manifest(outdir, "replicate:table1", resolved, seed, outputs, started)
        print(f"slope={table.slope:.4f}  theoretical_rate={table.theoretical_rate}")
        return 0

    if args.figures:
        preset = _preset(args.figures, "figure")
        spec = _config_spec(config, preset["spec"])
        n = int(config.get("n", preset["n"]))
        bundle = run_figure_dataset(
            spec,
            n,
            seed,
            engine=args.engine,
            z=config.get("z", "auto"),
            m_cap=config.get("m_cap"),
            max_steps=int(config.get("max_steps", DEFAULT_MAX_STEPS)),
        )
        outputs.extend(Path(p) for p in bundle.write(outdir))
        if args.plots:
            from .plots import render_figure_bundle

            outputs.append(Path(render_figure_bundle(bundle, outdir / "figure.png")))
        resolved = {"preset": args.figures, "spec": bundle.spec_json, "n": n,
                    "engine": bundle.engine}
        _write_manifest(outdir, "replicate:figures", resolved, seed, outputs, started)
        t_label = "~T_n" if bundle.time_is_proxy else "T_n"
        print(
            f"chose M={bundle.chosen_M}  sup loss={bundle.loss:.4f}  "
            f"{t_label}={bundle.hitting_time}"
        )
        return 0

    if args.clt:
        spec = _config_spec(config, Beta(4.0, 3.0))
        resolved = {
            "spec": spec.to_json(),
            "alpha": int(config.get("alpha", 0)),
            "beta": int(config.get("beta", 1)),
            "n": int(config.get("n", 5000)),
            "replications": int(config.get("replications", 2000)),
            "longrun_steps": int(config.get("longrun_steps", 200_000)),
            "burn_in": int(config.get("burn_in", 20_000)),
        }
        report = verify_clt(
            spec,
            resolved["alpha"],
            resolved["beta"],
            resolved["n"],
            resolved["replications"],
            seed=seed,
            longrun_steps=resolved["longrun_steps"],
            burn_in=resolved["burn_in"],
        )
        outputs.append(_dump_json(report.to_json(), outdir / "clt_report.json"))
        if args.plots and report.sample is not None and not report.insufficient:
            from .plots import render_clt_report

            outputs.append(Path(render_clt_report(report, report.sample, outdir / "clt.png")))
        _write_manifest(outdir, "replicate:clt", resolved, seed, outputs, started)
        print(f"ks={report.ks_stat}  sample_var={report.sample_var:.6g}")
        return 0

    if args.concentration:
        spec = _config_spec(config, Beta(4.0, 3.0))
        resolved = {
            "spec": spec.to_json(),
            "alpha": int(config.get("alpha", 1)),
            "beta": int(config.get("beta", 1)),
            "n": int(config.get("n", 200)),
            "z_list": list(config.get("z_list", [1.0, 2.0, 3.0])),
            "replications": int(config.get("replications", 10_000)),
        }
        report = verify_concentration(
            spec,
            resolved["alpha"],
            resolved["beta"],
            resolved["n"],
            resolved["z_list"],
            resolved["replications"],
            seed=seed,
        )
        outputs.append(_dump_json(report.to_json(), outdir / "concentration_report.json"))
        if args.plots:
            from .plots import render_concentration_report

            outputs.append(
                Path(render_concentration_report(report, outdir / "concentration.png"))
            )
        _write_manifest(outdir, "replicate:concentration", resolved, seed, outputs, started)
        print("pass" if report.all_passed else "FAIL")
        return 0

    # occupation
    spec = _config_spec(config, Beta(4.0, 3.0))
    resolved = {
        "spec": spec.to_json(),
        "M_list": list(config.get("M_list", [1, 2, 5, 10])),
        "n": int(config.get("n", 2000)),
        "replications": int(config.get("replications", 200)),
        "tail_samples": int(config.get("tail_samples", 200_000)),
        "profile_M": list(config.get("profile_M", [20, 40, 80])),
    }
    report = verify_occupation(
        spec,
        resolved["M_list"],
        resolved["n"],
        resolved["replications"],
        seed=seed,
        tail_samples=resolved["tail_samples"],
        profile_M=tuple(resolved["profile_M"]),
    )
    outputs.append(_dump_json(report.to_json(), outdir / "occupation_report.json"))
    if args.plots:
        from .plots import render_occupation_report

        outputs.append(Path(render_occupation_report(report, outdir / "occupation.png")))
    _write_manifest(outdir, "replicate:occupation", resolved, seed, outputs, started)
    print("within band" if report.all_within else "OUTSIDE band")
    return 0


# ---------------------------------------------------------------------------
# wiring
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="rwre",
        description="simulate RWRE paths and estimate the environment law",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("simulate", help="record a path's left-step statistic")
    ps.add_argument("--spec", required=True, help="environment JSON or @file")
    ps.add_argument("--n", type=int, required=True, help="target site")
    ps.add_argument("--seed", type=int, default=None,
                    help="base seed (default: $RWRE_SEED or 0)")
    ps.add_argument("--engine", choices=("walk", "branching"), default="walk")
    ps.add_argument("--format", choices=("csv", "bin"), default="csv")
    ps.add_argument("--max-steps", type=int, default=DEFAULT_MAX_STEPS)
    ps.add_argument("--out", required=True, help="output directory")
    ps.set_defaults(func=cmd_simulate)

    pe = sub.add_parser("estimate", help="adaptive cdf estimate from a recorded path")
    pe.add_argument("zpath", help="zpath.csv or zpath.bin from `simulate`")
    pe.add_argument("--z", default="auto", help="confidence parameter (default log n)")
    pe.add_argument("--m-cap", type=int, default=None,
                    help="cap on the candidate family size")
    pe.add_argument("--dump-cdfs", action="store_true",
                    help="also write every candidate grid")
    pe.add_argument("--out", required=True, help="output directory")
    pe.set_defaults(func=cmd_estimate)

    pr = sub.add_parser("replicate", help="rerun a canned study")
    g = pr.add_mutually_exclusive_group(required=True)
    g.add_argument("--table1", metavar="PRESET", help="risk table preset name")
    g.add_argument("--figures", metavar="PRESET", help="figure preset name")
    g.add_argument("--clt", action="store_true", help="asymptotic normality check")
    g.add_argument("--concentration", action="store_true", help="deviation bound check")
    g.add_argument("--occupation", action="store_true",
                   help="occupation vs invariant tail check")
    pr.add_argument("--config", default=None, help="JSON or @file overriding defaults")
    pr.add_argument("--full-scale", action="store_true",
                    help="full replication counts and n ranges")
    pr.add_argument("--workers", type=int, default=1)
    pr.add_argument("--seed", type=int, default=None,
                    help="base seed (default: $RWRE_SEED or 0)")
    pr.add_argument("--engine", choices=("auto", "walk", "branching"), default="auto")
    pr.add_argument("--plots", action=argparse.BooleanOptionalAction, default=True,
                    help="render PNG figures alongside the delimited output")
    pr.add_argument("--out", required=True, help="output directory")
    pr.set_defaults(func=cmd_replicate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MaxStepsExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (StateOverflowError, KernelTailError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except DegenerateDataError as exc:
        print(f"error: degenerate data: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except RegimeError as exc:
        print(f"error: regime: {exc}", file=sys.stderr)
        return EXIT_REGIME
    except (ValueError, TypeError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
