"""Command-line front end: JSON config in, deterministic CSVs out.

Every command writes RFC-4180 CSVs with '.' decimals and 17-significant-
digit floats plus a JSON manifest naming the config hash, the seeds used
and the checksums of everything written, so identical invocations yield
byte-identical outputs.  Exit codes: 0 success, 2 when a verification
command's acceptance-style check fails, 1 on configuration or runtime
errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import amp as amp_mod
from . import montecarlo as mc
from . import ridge as ridge_mod
from . import trace_diag
from .ensembles import (
    ProfileKind,
    VarianceProfile,
    block_profile,
    constant_profile,
    iid_abs_gaussian_profile,
    profile_from_csv,
    sample_symmetric,
)
from .nonlinearity import (
    CoordinateBlocks,
    NonlinearitySchedule,
    family_from_config,
)
from .state_evolution import se_symmetric


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as handle:
        handle.write(",".join(header) + "\r\n")
        for row in rows:
            handle.write(",".join(_fmt(cell) for cell in row) + "\r\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(outdir: Path, command: str, config: dict, outputs, extra=None):
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "config_sha256": hashlib.sha256(
            json.dumps(config, sort_keys=True).encode()
        ).hexdigest(),
        "outputs": {name: _sha256(outdir / name) for name in outputs},
    }
    if extra:
        manifest.update(extra)
    path = outdir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------

class ConfigError(ValueError):
    pass


def build_profile(spec: dict, size_override: int | None = None) -> VarianceProfile:
    kind = spec.get("kind", "constant")
    explicit = spec.get("symmetric")
    rows = spec.get("rows")
    cols = spec.get("cols", rows)
    if size_override is not None:
        rows = cols = size_override
    profile_kind = None
    if explicit is not None:
        profile_kind = ProfileKind.SYMMETRIC if explicit else ProfileKind.RECTANGULAR
    try:
        if kind == "constant":
            return constant_profile(rows, cols, spec.get("value", 1.0), profile_kind)
        if kind == "csv":
            return profile_from_csv(
                spec["path"],
                profile_kind or ProfileKind.SYMMETRIC,
                spec.get("bound"),
            )
        if kind == "iid_abs_gaussian":
            return iid_abs_gaussian_profile(
                rows,
                cols,
                spec.get("mean", 1.0),
                spec.get("sd", 1.0),
                spec.get("seed", 0),
                profile_kind,
            )
        if kind == "block":
            return block_profile(
                spec["row_sizes"], spec["col_sizes"], spec["values"], profile_kind
            )
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"profile: missing or bad field ({exc})") from exc
    raise ConfigError(f"profile: unknown kind {kind!r}")


def build_schedule(spec: dict, horizon: int, n_coords: int) -> NonlinearitySchedule:
    scope = spec.get("scope", "all")
    if scope == "all":
        return NonlinearitySchedule.constant(family_from_config(spec), horizon, n_coords)
    if scope == "per_t":
        table = {int(t): family_from_config(fam) for t, fam in spec["table"].items()}
        default = family_from_config(spec["default"]) if "default" in spec else None
        return NonlinearitySchedule(horizon, n_coords, default=default, per_t=table)
    if scope == "per_coord_blocks":
        blocks = tuple(
            (int(b["start"]), int(b["stop"]), family_from_config(b))
            for b in spec["blocks"]
        )
        return NonlinearitySchedule.constant(
            CoordinateBlocks(blocks=blocks), horizon, n_coords
        )
    raise ConfigError(f"nonlinearity: unknown scope {scope!r}")


def build_vector(spec, size: int, default_seed: int = 0) -> np.ndarray:
    if isinstance(spec, list):
        vec = np.asarray(spec, dtype=float)
    else:
        kind = spec.get("kind", "ones")
        if kind == "ones":
            vec = np.ones(size)
        elif kind == "zeros":
            vec = np.zeros(size)
        elif kind == "constant":
            vec = np.full(size, float(spec["value"]))
        elif kind == "gaussian":
            rng = np.random.Generator(
                np.random.Philox(key=np.uint64(spec.get("seed", default_seed)))
            )
            vec = spec.get("scale", 1.0) * rng.standard_normal(size)
        elif kind == "values":
            vec = np.asarray(spec["values"], dtype=float)
        else:
            raise ConfigError(f"vector: unknown kind {kind!r}")
    if vec.shape != (size,):
        raise ConfigError(f"vector has length {vec.shape[0]}, expected {size}")
    return vec


def _onsager_mode(name: str):
    if name == "data_driven":
        return amp_mod.DataDriven()
    if name == "state_evolution":
        return amp_mod.StateEvolution()
    raise ConfigError(f"unknown correction mode {name!r}")


def _warn_horizon(horizon: int, n: int):
    if horizon > math.log2(max(n, 2)):
        print(
            f"warning: horizon {horizon} exceeds log2(n)={math.log2(n):.1f}; "
            "the theory being checked is only established for short runs",
            file=sys.stderr,
        )


def _prepare_outdir(outdir: Path, filenames, force: bool):
    outdir.mkdir(parents=True, exist_ok=True)
    if not force:
        existing = [name for name in filenames if (outdir / name).exists()]
        if existing:
            raise ConfigError(
                f"refusing to overwrite {existing} in {outdir}; pass --force"
            )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_amp_run(config, outdir, args):
    seed = config.get("seed", 0)
    horizon = config["horizon"]
    profile = build_profile(config["profile"], args.n)
    n = profile.shape[0]
    _warn_horizon(horizon, n)
    schedule = build_schedule(config["nonlinearity"], horizon, n)
    z0 = build_vector(config.get("z0", {"kind": "ones"}), n)
    mode = _onsager_mode(config.get("onsager", "data_driven"))
    se = None
    if isinstance(mode, amp_mod.StateEvolution):
        se = se_symmetric(profile, schedule, z0, horizon)
    matrix = sample_symmetric(profile, seed)
    traj = amp_mod.run_symmetric(matrix, schedule, z0, horizon, mode, se=se)
    files = ["trajectory.csv", "trajectory_meta.json"]
    _prepare_outdir(outdir, files + ["manifest.json"], args.force)
    rows = [
        (t, k, traj.iterates[t, k])
        for t in range(horizon + 1)
        for k in range(n)
    ]
    write_csv(outdir / files[0], ["t", "coordinate", "value"], rows)
    meta = {
        "seed": seed,
        "mode": traj.mode,
        "lipschitz_bound": schedule.lipschitz_bound(),
        "profile_bound": profile.bound,
    }
    (outdir / files[1]).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    write_manifest(outdir, "amp-run", config, files, extra={"seed": seed})
    return 0


def cmd_se(config, outdir, args):
    horizon = config["horizon"]
    profile = build_profile(config["profile"], args.n)
    n = profile.shape[0]
    schedule = build_schedule(config["nonlinearity"], horizon, n)
    z0 = build_vector(config.get("z0", {"kind": "ones"}), n)
    se = se_symmetric(profile, schedule, z0, horizon)
    files = ["se_covariance.csv", "se_variances.csv"]
    _prepare_outdir(outdir, files + ["manifest.json"], args.force)
    cov_rows = [
        (k, s1, s2, se.cov[k, s1, s2])
        for k in range(n)
        for s1 in range(horizon + 1)
        for s2 in range(horizon + 1)
    ]
    write_csv(outdir / files[0], ["k", "s1", "s2", "value"], cov_rows)
    var_rows = [
        (t, k, se.cov[k, t, t]) for t in range(horizon + 1) for k in range(n)
    ]
    write_csv(outdir / files[1], ["t", "k", "sigma2"], var_rows)
    write_manifest(outdir, "se", config, files)
    return 0


def cmd_loo_check(config, outdir, args):
    sizes = args.n_list or config.get("sizes", [200, 400, 800])
    seeds = args.B or config.get("seeds", 50)
    horizon = config.get("horizon", 3)
    base_seed = args.seed if args.seed is not None else config.get("seed", 20240)
    result = mc.loo_rate_experiment(
        sizes, seeds, horizon, base_seed=base_seed, workers=args.threads
    )
    files = ["loo_rate.csv"]
    _prepare_outdir(outdir, files + ["manifest.json"], args.force)
    write_csv(
        outdir / files[0],
        ["n", "median_max_error"],
        [(n, result["medians"][n]) for n in sizes],
    )
    write_manifest(
        outdir,
        "loo-check",
        config,
        files,
        extra={
            "slope": result["slope"],
            "max_t0_error": result["max_t0_error"],
            "seed": base_seed,
        },
    )
    ok = result["slope"] <= -0.3 and result["max_t0_error"] == 0.0
    print(f"loo-check: slope={result['slope']:.3f} t0_error={result['max_t0_error']}")
    return 0 if ok else 2


def cmd_onsager_gap(config, outdir, args):
    sizes = args.n_list or config.get("sizes", [200, 800])
    seeds = args.B or config.get("seeds", 50)
    horizon = config.get("horizon", 3)
    base_seed = args.seed if args.seed is not None else config.get("seed", 515151)
    gaps = mc.onsager_gap_experiment(
        sizes, seeds, horizon, base_seed=base_seed, workers=args.threads
    )
    files = ["onsager_gap.csv"]
    _prepare_outdir(outdir, files + ["manifest.json"], args.force)
    rows = [(n, r, gaps[n][r]) for n in sizes for r in range(seeds)]
    write_csv(outdir / files[0], ["n", "replicate", "gap"], rows)
    smaller = np.mean(gaps[sizes[-1]] < gaps[sizes[0]])
    write_manifest(
        outdir,
        "onsager-gap",
        config,
        files,
        extra={"fraction_improved": float(smaller), "seed": base_seed},
    )
    print(f"onsager-gap: fraction improved at n={sizes[-1]}: {smaller:.2f}")
    return 0 if smaller >= 0.8 else 2


def cmd_trace_check(config, outdir, args):
    sizes = args.n_list or config.get("sizes", [200, 400, 800])
    seeds = args.B or config.get("seeds", 50)
    t = config.get("trace", {}).get("t", 3)
    base_seed = args.seed if args.seed is not None else config.get("seed", 321)
    fam_spec = config.get("nonlinearity", {"family": "scaled_tanh", "params": {}})
    report = trace_diag.trace_decay_test(
        lambda n: build_profile(config.get("profile", {"kind": "constant"}), n),
        lambda n: build_schedule(fam_spec, t + 1, n),
        lambda n: build_vector(config.get("z0", {"kind": "ones"}), n),
        t,
        sizes,
        seeds,
        base_seed=base_seed,
    )
    files = ["trace_decay.csv"]
    _prepare_outdir(outdir, files + ["manifest.json"], args.force)
    write_csv(
        outdir / files[0],
        ["n", "s", "d0", "mean_abs_trace", "stderr", "seeds"],
        [
            (r["n"], r["s"], r["d0"], r["mean_abs_trace"], r["stderr"], r["seeds"])
            for r in report.rows
        ],
    )
    write_manifest(
        outdir,
        "trace-check",
        config,
        files,
        extra={"slope": report.slope, "seed": base_seed},
    )
    print(f"trace-check: slope={report.slope:.3f}")
    return 0 if -0.8 <= report.slope <= -0.25 else 2


def _ridge_problem_from_config(config, lam):
    spec = config.get("ridge", {})
    profile = build_profile(config["profile"])
    m, n = profile.shape
    mu0 = build_vector(spec.get("mu0", {"kind": "ones"}), n)
    xi = build_vector(spec.get("xi", {"kind": "gaussian", "seed": 11}), m)
    return ridge_mod.RidgeProblem(profile=profile, lam=lam, mu0=mu0, xi=xi)


def cmd_ridge_fixedpoint(config, outdir, args):
    lam = config.get("ridge", {}).get("lambda", 1.0)
    problem = _ridge_problem_from_config(config, lam)
    fp = ridge_mod.solve_fixed_point(problem)
    m, n = problem.shape
    files = ["fixed_point.csv"]
    _prepare_outdir(outdir, files + ["manifest.json"], args.force)
    rows = []
    for i in range(max(m, n)):
        rows.append(
            (
                i,
                fp.b[i] if i < m else "",
                fp.tau[i] if i < n else "",
                fp.gamma[i] if i < n else "",
                fp.zeta[i] if i < n else "",
            )
        )
    write_csv(
        outdir / files[0],
        ["coordinate", "b_star", "tau_star", "gamma_star", "zeta_star"],
        rows,
    )
    write_manifest(
        outdir,
        "ridge-fixedpoint",
        config,
        files,
        extra={
            "iterations_b": fp.iterations_b,
            "residual_b": fp.residual_b,
            "residual_gamma": fp.residual_gamma,
        },
    )
    print(
        f"ridge-fixedpoint: b* in [{fp.b.min():.7f}, {fp.b.max():.7f}], "
        f"residuals {fp.residual_b:.2e}/{fp.residual_gamma:.2e}"
    )
    return 0


def cmd_ridge_amp(config, outdir, args):
    lam = config.get("ridge", {}).get("lambda", 1.0)
    horizon = config.get("horizon", 60)
    problem = _ridge_problem_from_config(config, lam)
    seed = args.seed if args.seed is not None else config.get("seed", 5150)
    result = mc.ridge_amp_convergence(problem, horizon, matrix_seed=seed)
    files = ["ridge_amp_error.csv"]
    _prepare_outdir(outdir, files + ["manifest.json"], args.force)
    write_csv(
        outdir / files[0],
        ["t", "error"],
        list(enumerate(result["errors"])),
    )
    write_manifest(
        outdir,
        "ridge-amp",
        config,
        files,
        extra={
            "final_error": result["final_error"],
            "log_slope": result["log_slope"],
            "seed": seed,
        },
    )
    print(
        f"ridge-amp: final error {result['final_error']:.3e}, "
        f"log slope {result['log_slope']:.3f}"
    )
    return 0 if result["final_error"] <= 1e-6 else 2


def _figure1_csvs(rows, outdir, prefix=""):
    names = []
    name = f"{prefix}l2_error.csv"
    write_csv(
        outdir / name,
        ["lambda", "empirical", "stderr", "theory", "zscore"],
        [
            (r["lambda"], r["l2"].mean, r["l2"].stderr, r["l2"].theory, r["l2"].zscore)
            for r in rows
        ],
    )
    names.append(name)
    for key, fname in (("mu1_mean", "mu1_mean.csv"), ("mu1_var", "mu1_var.csv")):
        name = f"{prefix}{fname}"
        write_csv(
            outdir / name,
            ["lambda", "empirical", "stderr", "theory", "zscore"],
            [
                (
                    r["lambda"],
                    r[key].mean,
                    r[key].stderr,
                    r[key].theory,
                    r[key].zscore,
                )
                for r in rows
            ],
        )
        names.append(name)
    return names


def _maybe_plot(rows, outdir):
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("warning: matplotlib unavailable, skipping plots", file=sys.stderr)
        return []
    lambdas = [r["lambda"] for r in rows]
    panels = [
        ("l2", "l2_error.png", "mean squared error"),
        ("mu1_mean", "mu1_mean.png", "first-coordinate mean"),
        ("mu1_var", "mu1_var.png", "first-coordinate variance"),
    ]
    written = []
    for key, fname, title in panels:
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.plot(lambdas, [r[key].theory for r in rows], "-", label="theory")
        ax.errorbar(
            lambdas,
            [r[key].mean for r in rows],
            yerr=[3 * (r[key].stderr or 0) for r in rows],
            fmt="o",
            ms=3,
            label="empirical",
        )
        ax.set_xlabel("regularization")
        ax.set_ylabel(title)
        ax.set_xscale("log")
        ax.legend()
        fig.tight_layout()
        fig.savefig(outdir / fname, dpi=150)
        plt.close(fig)
        written.append(fname)
    return written


def cmd_figure1(config, outdir, args):
    spec = config.get("ridge", {})
    lambdas = spec.get("lambdas", list(np.geomspace(0.1, 10.0, 8)))
    replicates = args.B or config.get("replicates", 5000)
    base_seed = args.seed if args.seed is not None else config.get("seed", 909)
    design = spec.get("design", "gaussian")
    rows = mc.figure1_experiment(
        lambdas,
        replicates,
        m=spec.get("m", 100),
        n=spec.get("n", 200),
        profile_seed=spec.get("profile_seed", 7),
        xi_seed=spec.get("xi_seed", 11),
        base_seed=base_seed,
        design=design,
        workers=args.threads,
    )
    files = ["l2_error.csv", "mu1_mean.csv", "mu1_var.csv"]
    _prepare_outdir(outdir, files + ["manifest.json"], args.force)
    _figure1_csvs(rows, outdir)
    if args.plot:
        files += _maybe_plot(rows, outdir)
    worst = max(
        abs(r[key].zscore or 0.0)
        for r in rows
        for key in ("l2", "mu1_mean", "mu1_var")
    )
    write_manifest(
        outdir,
        "figure1",
        config,
        files,
        extra={"worst_zscore": worst, "seed": base_seed, "design": design},
    )
    print(f"figure1: worst |z| = {worst:.2f} over {len(rows)} lambdas")
    return 0 if worst <= 3.0 else 2


def cmd_ridge_verify(config, outdir, args):
    # A reduced-size verification run along the same pipeline as figure1.
    config = dict(config)
    config.setdefault("replicates", 500)
    return cmd_figure1(config, outdir, args)


COMMANDS = {
    "amp-run": cmd_amp_run,
    "se": cmd_se,
    "loo-check": cmd_loo_check,
    "onsager-gap": cmd_onsager_gap,
    "trace-check": cmd_trace_check,
    "ridge-fixedpoint": cmd_ridge_fixedpoint,
    "ridge-amp": cmd_ridge_amp,
    "ridge-verify": cmd_ridge_verify,
    "figure1": cmd_figure1,
}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vpamp",
        description="message passing with variance profiles: experiments and checks",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("config", help="path to a JSON config file")
    parser.add_argument("-o", "--output", default="out", help="output directory")
    parser.add_argument("--force", action="store_true", help="overwrite outputs")
    parser.add_argument("--plot", action="store_true", help="emit plot images")
    parser.add_argument("--seed", type=int, default=None, help="override base seed")
    parser.add_argument("--threads", type=int, default=None, help="worker count")
    parser.add_argument("-B", type=int, default=None, help="override replicate count")
    parser.add_argument(
        "--n",
        type=int,
        default=None,
        help="override the (single) problem size",
    )
    parser.add_argument(
        "--n-list",
        type=int,
        nargs="*",
        default=None,
        help="override the size sweep",
    )
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    if args.threads is None:
        args.threads = int(os.environ.get("AMP_THREADS", os.cpu_count() or 1))
    try:
        config = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 1
    outdir = Path(args.output)
    try:
        return COMMANDS[args.command](config, outdir, args)
    except (ConfigError, KeyError) as exc:
        print(f"error: bad config: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
