"""Command-line front end: simulate, analytic, fit, detect, reproduce-fig2."""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import math
import sys
from dataclasses import dataclass
from itertools import combinations, permutations
from pathlib import Path

import numpy as np
import pandas as pd

from . import model as mc
from .detect import DetectionError, curve_fits, recover_hidden_step, slope_change_test
from .laws import StepLaw
from .model import IndependentModel, ModelError, SharedStepModel, load_model
from .simulate import (
    CohortSpec,
    EventTable,
    EventTableError,
    conditional_view,
    disease_free_view,
    read_event_table,
    simulate,
)
from .survival import FitResult, fit_power_law_mle, loglog_points, nelson_aalen

FLOAT_FORMAT = "%.17g"


class CliError(Exception):
    pass


# ------------------------------------------------------------------ parsing


def _positive_int(text: str) -> int:
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if n <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {n}")
    return n


def _nonneg_float(text: str) -> float:
    try:
        x = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (math.isfinite(x) and x >= 0):
        raise argparse.ArgumentTypeError(f"must be a finite number >= 0, got {text}")
    return x


def _alpha(text: str) -> float:
    x = _nonneg_float(text)
    if not 0 < x < 1:
        raise argparse.ArgumentTypeError("alpha must lie in (0, 1)")
    return x


@dataclass(frozen=True)
class AgeGrid:
    start: float
    stop: float
    steps: int

    def ages(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.steps)


def parse_grid(text: str) -> AgeGrid:
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("grid must look like T0:T1:STEPS")
    try:
        t0, t1, steps = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from None
    if not (math.isfinite(t0) and math.isfinite(t1) and 0 <= t0 < t1):
        raise argparse.ArgumentTypeError("grid needs 0 <= T0 < T1")
    if steps < 2:
        raise argparse.ArgumentTypeError("grid needs at least 2 steps")
    return AgeGrid(t0, t1, steps)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sharedstep", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model=False, model_required=False):
        sp.add_argument("--out", required=True, type=Path, help="output directory")
        if model:
            sp.add_argument("--model", type=Path, required=model_required, help="model JSON file")

    sp = sub.add_parser("simulate", help="simulate a cohort event table")
    common(sp, model=True, model_required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--subjects", type=_positive_int, required=True)
    sp.add_argument("--follow-up", type=_nonneg_float, required=True)
    sp.add_argument("--independent", action="store_true", help="simulate the independent-chain model")
    sp.add_argument("--workers", type=_positive_int, default=1)

    sp = sub.add_parser("analytic", help="analytic cdfs and moments on an age grid")
    common(sp, model=True, model_required=True)
    sp.add_argument("--grid", type=parse_grid, required=True)

    sp = sub.add_parser("fit", help="Nelson-Aalen curve and power-law MLE for one disease")
    common(sp)
    sp.add_argument("--events", type=Path, required=True, help="event table CSV")
    sp.add_argument("--disease", required=True)
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--given", help="fit only after this disease (entry at its onset)")
    g.add_argument("--free-of", nargs="+", metavar="NAME", help="censor at onset of these diseases")

    sp = sub.add_parser("detect", help="slope-change test for a shared hidden step")
    common(sp)
    sp.add_argument("--events", type=Path, required=True, help="raw cohort event table CSV")
    sp.add_argument("--j", required=True, help="disease whose incidence is compared")
    sp.add_argument("--k", required=True, help="conditioning disease")
    sp.add_argument("--alpha", type=_alpha, default=0.05)

    sp = sub.add_parser("reproduce-fig2", help="conditional power estimates vs hidden-step power")
    common(sp)
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--subjects", type=_positive_int, default=10**6)
    sp.add_argument("--follow-up", type=_nonneg_float, default=100.0)
    sp.add_argument("--workers", type=_positive_int, default=1)
    return p


# ------------------------------------------------------------------ helpers


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def _prepare_out(out: Path) -> Path:
    if out.exists() and not out.is_dir():
        raise CliError(f"--out {out} exists and is not a directory")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_file(path: Path, flag: str) -> Path:
    if not path.is_file():
        raise CliError(f"{flag} {path}: no such file")
    return path


def write_svg(fig, path: Path, chash: str) -> None:
    """Save a matplotlib figure as SVG with the config hash as a leading comment."""
    import matplotlib.pyplot as plt

    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    text = buf.getvalue()
    head, sep, rest = text.partition("?>\n")
    comment = f"<!-- sharedstep config sha256={chash} -->\n"
    text = head + sep + comment + rest if sep else comment + text
    path.write_text(text)


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "sharedstep"
    import matplotlib.pyplot as plt

    return plt.subplots(figsize=(6, 4.5))


def _to_csv(df: pd.DataFrame, path: Path) -> None:
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)


# ----------------------------------------------------------------- commands


def cmd_simulate(args) -> dict:
    model = load_model(_require_file(args.model, "--model"))
    out = _prepare_out(args.out)
    m = model.independent() if args.independent else model
    spec = CohortSpec(args.subjects, args.follow_up, args.seed, m)
    table = simulate(spec, workers=args.workers)
    path = out / "events.csv"
    table.to_csv(path)
    print(f"wrote {len(table)} records for {table.n_subjects} subjects to {path}")
    return {"events": path}


def analytic_frame(model: SharedStepModel, ages) -> pd.DataFrame:
    """Disease cdfs and count moments for both model classes on ``ages``."""
    indep = model.independent()
    names = model.names
    rows = []
    for t in ages:
        t = float(t)
        row = {"t": t}
        for n in names:
            row[f"F_{n}"] = mc.disease_cdf(model, n, t)
        for j, k in combinations(names, 2):
            row[f"F_{j}&{k}"] = mc.joint_cdf(model, j, k, t)
            row[f"F_{j}&{k}_indep"] = mc.joint_cdf(indep, j, k, t)
        for j, k in permutations(names, 2):
            fk = row[f"F_{k}"]
            pair = f"F_{j}&{k}" if f"F_{j}&{k}" in row else f"F_{k}&{j}"
            row[f"F_{j}|{k}"] = row[pair] / fk if fk > 0 else math.nan
        for label, m in (("shared", model), ("indep", indep)):
            rep = mc.moment_report(m, t)
            row[f"EN_{label}"] = rep.expected_n
            row[f"VarN_{label}"] = rep.variance_n
            row[f"P0_{label}"] = rep.prob_zero
            row[f"ENpos_{label}"] = rep.expected_n_given_positive
        rows.append(row)
    return pd.DataFrame(rows)


def read_table_csv(source) -> pd.DataFrame:
    """Reader for the analytic and Figure-2 CSVs (NaN cells are written empty)."""
    return pd.read_csv(source, float_precision="round_trip")


def cmd_analytic(args) -> dict:
    model = load_model(_require_file(args.model, "--model"))
    out = _prepare_out(args.out)
    df = analytic_frame(model, args.grid.ages())
    path = out / "analytic.csv"
    _to_csv(df, path)

    fig, ax = _figure()
    ax.plot(df.t, df.P0_shared, label="P(N=0) shared")
    ax.plot(df.t, df.P0_indep, "--", label="P(N=0) independent")
    for n in model.names:
        ax.plot(df.t, df[f"F_{n}"], ":", label=f"F_{n}")
    ax.set_xlabel("age")
    ax.set_ylabel("probability")
    ax.legend(fontsize=8)
    svg = out / "analytic.svg"
    write_svg(fig, svg, config_hash({"command": "analytic", "model": model.to_dict(),
                                     "grid": vars(args.grid)}))
    print(f"wrote {path} and {svg}")
    return {"analytic": path, "svg": svg}


def _fit_view(table: EventTable, args) -> EventTable:
    if args.given:
        return conditional_view(table, args.disease, args.given)
    if args.free_of:
        return disease_free_view(table, args.disease, args.free_of)
    return table.select(args.disease)


def cmd_fit(args) -> dict:
    table = read_event_table(_require_file(args.events, "--events"))
    table.code(args.disease)
    out = _prepare_out(args.out)
    view = _fit_view(table, args)
    curve = nelson_aalen(view, args.disease)
    fit = fit_power_law_mle(view, args.disease)
    curve.to_csv(out / "cumhaz.csv")
    fit.to_json(out / "fit.json")
    fit.to_csv(out / "fit.csv")

    pts = loglog_points(curve)
    fig, ax = _figure()
    ax.plot(pts.log_age, pts.log_H, ".", ms=2, label="Nelson-Aalen")
    xs = np.linspace(pts.log_age.min(), pts.log_age.max(), 50)
    ax.plot(xs, fit.log_lam + (fit.q + 1) * xs, label=f"MLE q = {fit.q:.2f} +/- {fit.se_q:.2f}")
    ax.set_xlabel("log age")
    ax.set_ylabel("log cumulative hazard")
    ax.legend(fontsize=8)
    cfg = {"command": "fit", "events": str(args.events), "disease": args.disease,
           "given": args.given, "free_of": args.free_of}
    write_svg(fig, out / "loglog.svg", config_hash(cfg))
    print(f"q = {fit.q:.4f} +/- {fit.se_q:.4f}, lambda = {fit.lam:.6g}, events = {fit.n_events}")
    return {"fit": fit}


def cmd_detect(args) -> dict:
    table = read_event_table(_require_file(args.events, "--events"))
    if args.j == args.k:
        raise CliError("--j and --k must differ")
    table.code(args.j), table.code(args.k)
    out = _prepare_out(args.out)
    fit_free = fit_power_law_mle(table.select(args.j))
    fit_cond = fit_power_law_mle(conditional_view(table, args.j, args.k))
    hidden = None
    try:
        cf = curve_fits(table, args.j, args.k)
        hidden = recover_hidden_step(cf.fit_j, cf.fit_k, cf.fit_ratio, cf.fit_cond)
    except (DetectionError, ValueError) as exc:
        print(f"note: hidden-step recovery unavailable ({exc})", file=sys.stderr)
    report = slope_change_test(fit_free, fit_cond, args.alpha, hidden=hidden)
    report.to_json(out / "report.json")
    if hidden is not None:
        from dataclasses import asdict

        (out / "hidden_step.json").write_text(json.dumps(asdict(hidden), indent=2) + "\n")
    print(report.summary())
    return {"report": report, "hidden": hidden}


# ------------------------------------------------------------------ figure 2


FIG2_TOTAL_POWER = 6.0


def figure2_model(q0: float, follow_up: float) -> SharedStepModel:
    """Shared-step model for one Figure-2 cell, with q0 + qj = 6.

    The first step and ``k`` both reach cdf 1 at the end of follow-up, while
    ``j``'s second step reaches 1/2 there.  ``k`` has power -1/2 so it occurs
    early after the first step, which gives at least several thousand
    conditional ``j`` events per cell at 10^6 subjects.
    """
    T = follow_up
    if T <= 0:
        raise CliError("Figure-2 cells need a positive follow-up")
    qj = FIG2_TOTAL_POWER - q0
    return SharedStepModel(
        StepLaw.power_law(T ** -(q0 + 1), q0),
        (
            ("j", StepLaw.power_law(0.5 * T ** -(qj + 1), qj)),
            ("k", StepLaw.power_law(T ** -0.5, -0.5)),
        ),
    )


def figure2_cell(q0: int, independent: bool, n: int, follow_up: float, seed: int, workers: int = 1) -> FitResult:
    m = figure2_model(q0, follow_up)
    if independent:
        m = m.independent()
    table = simulate(CohortSpec(n, follow_up, seed, m), workers=workers)
    return fit_power_law_mle(conditional_view(table, "j", "k"))


def figure2_frame(n: int, follow_up: float, seed: int, workers: int = 1) -> pd.DataFrame:
    rows = []
    for q0 in range(6):
        for independent in (False, True):
            fit = figure2_cell(q0, independent, n, follow_up, seed, workers)
            rows.append({
                "q0": q0,
                "model": "independent" if independent else "shared",
                "q_hat": fit.q,
                "se_q": fit.se_q,
                "n_events": fit.n_events,
                "reference": FIG2_TOTAL_POWER + 1 if independent else FIG2_TOTAL_POWER - q0,
            })
    return pd.DataFrame(rows)


def cmd_reproduce_fig2(args) -> dict:
    out = _prepare_out(args.out)
    config = {
        "command": "reproduce-fig2",
        "subjects": args.subjects,
        "follow_up": args.follow_up,
        "seed": args.seed,
        "rule": "first ~ PowerLawCdf(T^-(q0+1), q0); j ~ PowerLawCdf(0.5 T^-(qj+1), 6-q0); "
                "k ~ PowerLawCdf(T^-0.5, -0.5)",
    }
    df = figure2_frame(args.subjects, args.follow_up, args.seed, args.workers)
    _to_csv(df, out / "fig2.csv")
    (out / "fig2_config.json").write_text(json.dumps(config, indent=2) + "\n")

    fig, ax = _figure()
    q0s = np.arange(6)
    ax.plot(q0s, FIG2_TOTAL_POWER - q0s, "-", color="C0", lw=0.8, label="6 - q0")
    ax.axhline(FIG2_TOTAL_POWER + 1, color="C1", lw=0.8, label="7")
    for label, color, dx in (("shared", "C0", -0.05), ("independent", "C1", 0.05)):
        d = df[df.model == label]
        ax.errorbar(d.q0 + dx, d.q_hat, yerr=d.se_q, fmt="o", color=color, capsize=3, label=label)
    ax.set_xlabel("q0")
    ax.set_ylabel("estimated power q")
    ax.legend(fontsize=8)
    write_svg(fig, out / "fig2.svg", config_hash(config))
    print(df.to_string(index=False))
    return {"frame": df}


COMMANDS = {
    "simulate": cmd_simulate,
    "analytic": cmd_analytic,
    "fit": cmd_fit,
    "detect": cmd_detect,
    "reproduce-fig2": cmd_reproduce_fig2,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except (CliError, ModelError, EventTableError, DetectionError, ValueError,
            ArithmeticError, OSError, KeyError) as exc:
        print(f"sharedstep {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
