"""Command-line entry point.

Subcommands: ``riccati``, ``rd-curve``, ``mc-verify``, ``filter-sim``,
``bayes``, ``reproduce {fig3|fig4}``.  Experiments are configured by a single
JSON file (flags override it; flags win).  Every CSV written starts with a
comment line recording the tool version, a hash of the effective config, and
the seed, and contains no timestamps, so reruns with the same seed are
byte-identical.

Exit codes: 0 success, 2 config error, 3 numerical/convergence error,
4 infeasible-only results under --strict.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bayes import (
    Belief,
    belief_predict,
    belief_update,
    bruteforce_open_loop_tradeoff,
    bruteforce_posterior,
    load_discrete_model,
    sensing_cost,
)
from .errors import ConvergenceError, EvidenceError, NumericalError, SchemaError
from .filtering import run_filter, write_trajectory_csv
from .montecarlo import (
    CSV_HEADER,
    expected_covariance_mc,
    mc_report_csv_row,
    write_per_step_csv,
)
from .riccati import (
    BeamPolicy,
    critical_lambda,
    gamma_max,
    lambda_s,
    lambda_v,
    sbar,
    vbar,
)
from .statespace import GaussMarkovModel, validate_model
from .tradeoff import (
    ChannelSpec,
    bs_curve,
    dominance_report,
    full_rate,
    mb_curve,
    write_curve_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_INFEASIBLE = 4

OUT_ENV_VAR = "JCAS_LAB_OUT"

#: fixed seed stamped on preset outputs when --seed is not given
PRESET_SEED = 20240601

#: reference scalar systems used by the reproduction presets
PRESET_SYSTEMS = {
    "unstable": dict(a=-1.15, c=1.0, q=0.2, r=1.5),
    "stable": dict(a=-0.95, c=1.0, q=0.2, r=1.5),
}
PRESET_SNRS_DB = (1.75, 20.0)


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise SchemaError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(
            f"config parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(cfg, dict):
        raise SchemaError("config must be a JSON object")
    return cfg


def require(cfg: dict, key: str):
    if key not in cfg:
        raise SchemaError(f"config missing required key '{key}'")
    return cfg[key]


def parse_model(cfg: dict) -> GaussMarkovModel:
    spec = require(cfg, "model")
    for key in ("A", "C", "Q", "R"):
        if key not in spec:
            raise SchemaError(f"config model missing matrix '{key}'")
    model = GaussMarkovModel(A=spec["A"], C=spec["C"], Q=spec["Q"], R=spec["R"])
    report = validate_model(model)
    if not report.valid:
        raise SchemaError("config model invalid: " + "; ".join(report.violations))
    return model


def parse_channel(cfg: dict) -> ChannelSpec:
    spec = require(cfg, "channel")
    kind = spec.get("kind")
    if kind == "noiseless":
        return ChannelSpec.noiseless(float(spec.get("c0", math.log(2.0))))
    if kind == "gaussian":
        if "snr_db" not in spec:
            raise SchemaError("gaussian channel needs 'snr_db'")
        return ChannelSpec.gaussian(float(spec["snr_db"]))
    raise SchemaError(f"channel kind must be 'noiseless' or 'gaussian', got {kind!r}")


def parse_grid(spec, name: str) -> np.ndarray:
    if isinstance(spec, list):
        vals = []
        for v in spec:
            if isinstance(v, str):
                if v != "inf":
                    raise SchemaError(f"{name}: only the string 'inf' is allowed, got {v!r}")
                vals.append(math.inf)
            else:
                vals.append(float(v))
        arr = np.array(vals, dtype=float)
    elif isinstance(spec, dict):
        for key in ("start", "stop", "count"):
            if key not in spec:
                raise SchemaError(f"{name}: grid spec needs start/stop/count")
        count = int(spec["count"])
        if count < 1:
            raise SchemaError(f"{name}: grid count must be >= 1")
        if spec.get("spacing", "linear") == "log":
            arr = np.geomspace(float(spec["start"]), float(spec["stop"]), count)
        else:
            arr = np.linspace(float(spec["start"]), float(spec["stop"]), count)
    else:
        raise SchemaError(f"{name}: grid must be a list or a start/stop/count object")
    if arr.size == 0:
        raise SchemaError(f"{name}: grid is empty")
    return arr


def parse_policy(cfg: dict) -> BeamPolicy:
    spec = require(cfg, "policy")
    kind = spec.get("kind")
    if "value" not in spec:
        raise SchemaError("policy needs a 'value'")
    value = math.inf if spec["value"] == "inf" else float(spec["value"])
    if kind == "switching":
        return BeamPolicy.switching(value)
    if kind == "multibeam":
        return BeamPolicy.multibeam(value)
    raise SchemaError(f"policy kind must be 'switching' or 'multibeam', got {kind!r}")


def resolve_seed(args, cfg: dict | None) -> int:
    if args.seed is not None:
        return args.seed
    if cfg is not None and "seed" in cfg:
        return int(cfg["seed"])
    raise SchemaError("seed required: set 'seed' in the config or pass --seed")


def resolve_out_dir(args, cfg: dict | None) -> Path:
    if args.out:
        out = args.out
    elif cfg is not None and cfg.get("out_dir"):
        out = cfg["out_dir"]
    elif os.environ.get(OUT_ENV_VAR):
        out = os.environ[OUT_ENV_VAR]
    else:
        out = "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def config_hash(command: str, cfg, seed: int) -> str:
    canon = json.dumps(
        {"command": command, "config": cfg, "seed": seed},
        sort_keys=True,
        separators=(",", ":"),
        default=str,
    )
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def stamp(command: str, cfg, seed: int, extra: str = "") -> str:
    head = f"jcas-lab v{__version__} config_hash={config_hash(command, cfg, seed)} seed={seed}"
    return f"{head} {extra}".strip()


def fmt(x) -> str:
    if x is None:
        return "infeasible"
    if isinstance(x, float) and math.isinf(x):
        return "unbounded" if x > 0 else "-inf"
    return repr(float(x))


def write_lines(path: Path, lines) -> None:
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_riccati(args) -> int:
    cfg = load_config(require_config(args))
    model = parse_model(cfg)
    seed = resolve_seed(args, cfg)
    out = resolve_out_dir(args, cfg)
    lam_grid = parse_grid(require(cfg, "lambda_grid"), "lambda_grid")
    budgets = [float(d) for d in require(cfg, "distortion_budgets")]
    if not budgets:
        raise SchemaError("distortion_budgets: grid is empty")
    # optional start point for the fixed-point iterations (sensitivity checks)
    p0_start = cfg.get("fixed_point_p0")
    if p0_start is not None:
        p0_start = np.asarray(p0_start, dtype=float)
    head = stamp("riccati", cfg, seed, f"model=[{model.describe()}]")

    lines = [f"# {head}", "lambda,tr_sbar,tr_vbar"]
    for lam in lam_grid:
        lam = float(lam)
        try:
            s = sbar(lam, model)
            s_tr = math.inf if s is None else float(np.trace(s))
        except ConvergenceError:
            s_tr = math.inf
        try:
            v = vbar(lam, model, p0=p0_start)
            v_tr = math.inf if v is None else float(np.trace(v))
        except ConvergenceError:
            v_tr = math.inf
        lines.append(f"{lam!r},{s_tr!r},{v_tr!r}")
    write_lines(out / "riccati_fixed_points.csv", lines)

    lam_c = critical_lambda(model)
    any_feasible = False
    lines = [f"# {head}", f"# lambda_c={lam_c!r}", "D,lambda_s,lambda_v,gamma_max"]
    for d in budgets:
        ls = lambda_s(d, model)
        lv = lambda_v(d, model)
        gm = gamma_max(d, model)
        if ls is not None or lv is not None or gm is not None:
            any_feasible = True
        lines.append(f"{d!r},{fmt(ls)},{fmt(lv)},{fmt(gm)}")
    write_lines(out / "riccati_thresholds.csv", lines)

    print(f"riccati: lambda_c={lam_c!r}; wrote 2 files to {out}")
    if args.strict and not any_feasible:
        return EXIT_INFEASIBLE
    return EXIT_OK


def _dominance_grid(curve_a, curve_b, n_points: int):
    finite_a = [p.distortion for p in curve_a if p.finite]
    finite_b = [p.distortion for p in curve_b if p.finite]
    if len(finite_a) < 2 or len(finite_b) < 2:
        return None
    lo = max(min(finite_a), min(finite_b))
    hi = min(max(finite_a), max(finite_b))
    if not (hi > lo):
        return None
    return np.geomspace(lo, hi, n_points) if lo > 0 else np.linspace(lo, hi, n_points)


def _write_dominance(report, path: Path, head: str, label: str) -> None:
    lines = [
        f"# {head}",
        f"# {label}: a_ge_b={report.n_a_ge_b} b_gt_a={report.n_b_gt_a}",
        "distortion,rate_a,rate_b,gap",
    ]
    for d, ra, rb in zip(report.distortions, report.rates_a, report.rates_b):
        lines.append(f"{float(d)!r},{float(ra)!r},{float(rb)!r},{float(ra - rb)!r}")
    write_lines(path, lines)


def cmd_rd_curve(args) -> int:
    cfg = load_config(require_config(args))
    model = parse_model(cfg)
    channel = parse_channel(cfg)
    seed = resolve_seed(args, cfg)
    out = resolve_out_dir(args, cfg)
    lam_grid = parse_grid(require(cfg, "lambda_grid"), "lambda_grid")
    head = stamp(
        "rd-curve", cfg, seed, f"model=[{model.describe()}] channel={channel.describe()}"
    )

    inner, outer = bs_curve(model, channel, lam_grid)
    write_curve_csv(inner + outer, out / "bs_curve.csv", comment=head, bits=args.bits)
    written = ["bs_curve.csv"]

    if channel.kind == "gaussian":
        gam_grid = parse_grid(require(cfg, "gamma_grid"), "gamma_grid")
        mb = mb_curve(model, channel, gam_grid)
        write_curve_csv(mb, out / "mb_curve.csv", comment=head, bits=args.bits)
        written.append("mb_curve.csv")
        n_points = int(cfg.get("dominance_grid_points", 60))
        for label, other in (("inner", inner), ("outer", outer)):
            grid = _dominance_grid(mb, other, n_points)
            if grid is None:
                continue
            rep = dominance_report(mb, other, grid)
            if rep.empty:
                continue
            name = f"dominance_mb_vs_bs_{label}.csv"
            _write_dominance(rep, out / name, head, f"mb vs bs-{label}")
            written.append(name)

    print(f"rd-curve: wrote {', '.join(written)} to {out}")
    return EXIT_OK


def cmd_mc_verify(args) -> int:
    cfg = load_config(require_config(args))
    model = parse_model(cfg)
    seed = resolve_seed(args, cfg)
    out = resolve_out_dir(args, cfg)
    lams = [float(x) for x in parse_grid(require(cfg, "mc_lambdas"), "mc_lambdas")]
    horizon = int(require(cfg, "horizon"))
    trials = int(require(cfg, "trials"))
    head = stamp("mc-verify", cfg, seed, f"model=[{model.describe()}]")

    lam_c = critical_lambda(model, bisect_tol=1e-3)
    rows = [f"# {head}", CSV_HEADER]
    texts = []
    n_within = 0
    for idx, lam in enumerate(lams):
        report = expected_covariance_mc(
            model,
            lam,
            horizon,
            trials,
            seed,
            per_step=True,
            threads=args.threads,
            critical=lam_c,
        )
        rows.append(mc_report_csv_row(report))
        texts.append(report.to_text())
        n_within += report.verdict == "within"
        write_per_step_csv(
            report, out / f"mc_steps_{idx:03d}.csv", comment=f"{head} lam={lam!r}"
        )
    write_lines(out / "mc_reports.csv", rows)
    write_lines(out / "mc_reports.txt", texts)
    print(f"mc-verify: {n_within}/{len(lams)} verdicts within; wrote files to {out}")
    return EXIT_OK


def cmd_filter_sim(args) -> int:
    cfg = load_config(require_config(args))
    model = parse_model(cfg)
    seed = resolve_seed(args, cfg)
    out = resolve_out_dir(args, cfg)
    policy = parse_policy(cfg)
    horizon = int(require(cfg, "horizon"))
    s0 = np.asarray(require(cfg, "s0_estimate"), dtype=float)
    p0 = np.asarray(require(cfg, "p0"), dtype=float)
    head = stamp("filter-sim", cfg, seed, f"model=[{model.describe()}]")

    traj = run_filter(model, policy, horizon, s0, p0, seed)
    write_trajectory_csv(traj, out / "trajectory.csv", comment=head)
    print(
        f"filter-sim: horizon={horizon} block_distortion={traj.block_distortion()!r}; "
        f"wrote trajectory.csv to {out}"
    )
    return EXIT_OK


def cmd_bayes(args) -> int:
    cfg = load_config(require_config(args))
    seed = resolve_seed(args, cfg)
    out = resolve_out_dir(args, cfg)
    model_path = require(cfg, "discrete_model")
    if not Path(model_path).exists():
        raise SchemaError(f"discrete_model file does not exist: {model_path}")
    model = load_discrete_model(model_path)
    bayes_cfg = cfg.get("bayes", {})
    n = int(bayes_cfg.get("n", 1))
    resolution = float(bayes_cfg.get("grid_resolution", 0.05))
    budgets = [float(d) for d in bayes_cfg.get("budgets", [])]
    trace_len = int(bayes_cfg.get("trace_len", 2))
    head = stamp("bayes", cfg, seed, f"discrete_model={model_path}")

    # recursive posterior along every short trace, checked against the
    # brute-force enumeration oracle
    max_gap = 0.0
    gap_lines = [f"# {head}", "x_seq,z_seq,posterior,max_abs_gap"]
    for length in range(1, trace_len + 1):
        for x_seq in itertools.product(range(model.nx), repeat=length):
            for z_seq in itertools.product(range(model.nz), repeat=length):
                try:
                    brute = bruteforce_posterior(x_seq, z_seq, model)
                except EvidenceError:
                    continue  # zero-probability trace
                belief = Belief(model.initial.copy(), 0)
                for x, z in zip(x_seq, z_seq):
                    belief = belief_predict(belief, model)
                    belief = belief_update(belief, x, z, model)
                gap = float(
                    np.max(np.abs(belief.probabilities - brute.probabilities))
                )
                max_gap = max(max_gap, gap)
                posterior = "|".join(repr(float(p)) for p in belief.probabilities)
                gap_lines.append(
                    f"{''.join(map(str, x_seq))},{''.join(map(str, z_seq))},"
                    f"{posterior},{gap!r}"
                )
    write_lines(out / "bayes_posteriors.csv", gap_lines)

    cost_lines = [f"# {head}", "x_seq,cost"]
    for x_seq in itertools.product(range(model.nx), repeat=n):
        cost_lines.append(f"{''.join(map(str, x_seq))},{sensing_cost(x_seq, model)!r}")
    write_lines(out / "bayes_costs.csv", cost_lines)

    any_feasible = not budgets
    trade_lines = [f"# {head}", "D,feasible,rate_nats,input_distributions"]
    for d in budgets:
        res = bruteforce_open_loop_tradeoff(model, d, n, resolution)
        if res.feasible:
            any_feasible = True
            dists = ";".join(
                "|".join(repr(float(p)) for p in row) for row in res.input_distributions
            )
            trade_lines.append(f"{d!r},1,{res.rate!r},{dists}")
        else:
            trade_lines.append(f"{d!r},0,infeasible,")
    write_lines(out / "bayes_tradeoff.csv", trade_lines)

    print(f"bayes: recursive vs brute-force max-abs gap = {max_gap!r}")
    print(f"bayes: wrote files to {out}")
    if args.strict and not any_feasible:
        return EXIT_INFEASIBLE
    return EXIT_OK


# ---------------------------------------------------------------------------
# reproduction presets
# ---------------------------------------------------------------------------

def _preset_model(name: str) -> GaussMarkovModel:
    p = PRESET_SYSTEMS[name]
    return GaussMarkovModel.scalar(p["a"], p["c"], p["q"], p["r"])


def reproduce_fig3(out: Path, seed: int, bits: bool = False) -> dict:
    """Beam-switching curves for both reference systems, noiseless c0 = 1.

    Returns {system: (lambda_c, max_finite_rate)} for the summary file.
    """
    cfg = {"preset": "fig3"}
    head = stamp("reproduce", cfg, seed)
    channel = ChannelSpec.noiseless(c0=1.0)
    lam_grid = np.linspace(0.0, 1.0, 201)
    summary = {}
    lines = [f"# {head}", "system,lambda_c,max_finite_rate"]
    for name in ("unstable", "stable"):
        model = _preset_model(name)
        inner, outer = bs_curve(model, channel, lam_grid)
        write_curve_csv(
            inner + outer,
            out / f"fig3_{name}_bs.csv",
            comment=f"{head} system={name} channel=noiseless(c0=1.0)",
            bits=bits,
        )
        lam_c = critical_lambda(model)
        max_rate = (1.0 - lam_c) * channel.c0
        summary[name] = (lam_c, max_rate)
        lines.append(f"{name},{lam_c!r},{max_rate!r}")
    lines.append("# rates above max_finite_rate have no finite-distortion guarantee")
    write_lines(out / "fig3_summary.txt", lines)
    return summary


def reproduce_fig4(out: Path, seed: int, bits: bool = False) -> list:
    """Beam-switching and multi-beam curves over the Gaussian channel.

    2 systems x 2 SNRs x {bs (inner+outer), mb} = 8 curve files, plus
    dominance reports of mb against each bs bound.
    """
    cfg = {"preset": "fig4"}
    head = stamp("reproduce", cfg, seed)
    lam_grid = np.linspace(0.0, 1.0, 201)
    gam_grid = np.concatenate([np.geomspace(1.0, 1e4, 200), [math.inf]])
    written = []
    summary = [f"# {head}", "system,snr_db,full_rate_nats,mb_ge_inner,mb_gt_outer_top"]
    for name in ("unstable", "stable"):
        model = _preset_model(name)
        for snr_db in PRESET_SNRS_DB:
            channel = ChannelSpec.gaussian(snr_db)
            tag = f"{name}_snr{snr_db:g}db"
            inner, outer = bs_curve(model, channel, lam_grid)
            mb = mb_curve(model, channel, gam_grid)
            write_curve_csv(
                inner + outer,
                out / f"fig4_{tag}_bs.csv",
                comment=f"{head} system={name} channel={channel.describe()}",
                bits=bits,
            )
            write_curve_csv(
                mb,
                out / f"fig4_{tag}_mb.csv",
                comment=f"{head} system={name} channel={channel.describe()}",
                bits=bits,
            )
            written += [f"fig4_{tag}_bs.csv", f"fig4_{tag}_mb.csv"]
            mb_ge_inner = ""
            mb_gt_outer_top = ""
            for label, other in (("inner", inner), ("outer", outer)):
                grid = _dominance_grid(mb, other, 60)
                if grid is None:
                    continue
                rep = dominance_report(mb, other, grid)
                if rep.empty:
                    continue
                fname = f"fig4_{tag}_dominance_{label}.csv"
                _write_dominance(rep, out / fname, head, f"mb vs bs-{label}")
                written.append(fname)
                if label == "inner":
                    mb_ge_inner = str(int(rep.n_b_gt_a == 0))
                else:
                    top = rep.gaps[3 * len(rep.gaps) // 4 :]
                    mb_gt_outer_top = str(int(bool(np.all(top > 0))))
            summary.append(
                f"{name},{snr_db!r},{full_rate(channel)!r},{mb_ge_inner},{mb_gt_outer_top}"
            )
    write_lines(out / "fig4_summary.txt", summary)
    return written


def cmd_reproduce(args) -> int:
    seed = args.seed if args.seed is not None else PRESET_SEED
    out = resolve_out_dir(args, None)
    if args.figure == "fig3":
        summary = reproduce_fig3(out, seed, bits=args.bits)
        for name, (lam_c, max_rate) in summary.items():
            print(f"fig3 {name}: lambda_c={lam_c!r} max_finite_rate={max_rate!r}")
    else:
        written = reproduce_fig4(out, seed, bits=args.bits)
        print(f"fig4: wrote {len(written)} files to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------

def require_config(args) -> str:
    if not args.config:
        raise SchemaError("this subcommand needs --config PATH")
    return args.config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jcas-lab",
        description=(
            "Capacity-distortion analysis for open-loop joint communication "
            "and sensing with a Markov-evolving state."
        ),
    )
    parser.add_argument("--version", action="version", version=f"jcas-lab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON experiment config file")
        p.add_argument("--seed", type=int, help="64-bit seed (overrides the config)")
        p.add_argument(
            "--out",
            help=f"output directory (overrides config out_dir and ${OUT_ENV_VAR})",
        )
        p.add_argument("--threads", type=int, default=1, help="worker cap for trials")
        p.add_argument(
            "--strict",
            action="store_true",
            help="exit 4 when every requested threshold/budget is infeasible",
        )

    p = sub.add_parser("riccati", help="fixed points and feasibility thresholds")
    common(p)
    p.set_defaults(func=cmd_riccati)

    p = sub.add_parser("rd-curve", help="rate-distortion curves and dominance report")
    common(p)
    p.add_argument("--bits", action="store_true", help="append a rate_bits column")
    p.set_defaults(func=cmd_rd_curve)

    p = sub.add_parser("mc-verify", help="Monte Carlo covariance sandwich check")
    common(p)
    p.set_defaults(func=cmd_mc_verify)

    p = sub.add_parser("filter-sim", help="simulate one filtered trajectory")
    common(p)
    p.set_defaults(func=cmd_filter_sim)

    p = sub.add_parser("bayes", help="discrete-model posterior, costs and tradeoff")
    common(p)
    p.set_defaults(func=cmd_bayes)

    p = sub.add_parser("reproduce", help="one-shot reproduction presets")
    p.add_argument("figure", choices=("fig3", "fig4"))
    common(p)
    p.add_argument("--bits", action="store_true", help="append a rate_bits column")
    p.set_defaults(func=cmd_reproduce)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConvergenceError, NumericalError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
