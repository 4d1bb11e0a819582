"""gapcast command line.

Every subcommand writes its artifacts plus ``manifest.json`` (config, input
digests, version) into ``--out``. Exit codes: 0 ok, 1 usage error, 2 data
or estimation error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .biblio import (count_simple, count_weighted, filter_deep_learning,
                     load_groups, load_records, period_profiles, share_series,
                     tfidf_group_scores)
from .biblio.text import load_keywords
from .completion import DEFAULT_LAMBDA_GRID, mc_att
from .ife import DEFAULT_COVARIATES, choose_r, fit_ife, impute_and_att
from .inference import BootstrapSpec, bootstrap_att, placebo_in_space, placebo_in_time
from .panel import load_panel, validate_and_filter, write_panel
from .report import att_by_period_rows, att_from_record, att_to_record, report
from .serialize import sha256_file, write_csv, write_frame, write_json
from .simgen import DgpSpec, gen_panel
from .twfe import load_compute, marginal_effect, within_ols


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _csv_list(text):
    return [s.strip() for s in text.split(",") if s.strip()] if text else []


def _float_list(text):
    try:
        return [float(s) for s in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gapcast", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"gapcast {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--out", default="out", help="output directory")

    def panel_args(sp):
        sp.add_argument("--panel", required=True, help="long-format panel CSV")
        sp.add_argument("--min-pre", type=int, default=6)
        sp.add_argument("--covariates", default=None,
                        help="comma-separated covariates (default: TotalNumOfPaper if present)")

    def boot_args(sp):
        sp.add_argument("--bootstrap", type=int, default=0, metavar="B",
                        help="bootstrap replicates (0 = none)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--ci-level", type=float, default=0.95)
        sp.add_argument("--dump-draws", action="store_true")

    sp = sub.add_parser("validate", help="filter a panel and report its shape")
    common(sp)
    sp.add_argument("--panel", required=True)
    sp.add_argument("--min-pre", type=int, default=6)
    sp.add_argument("--min-cell-size", type=int, default=0)
    sp.add_argument("--size-covariate", default="TotalNumOfPaper")
    sp.add_argument("--small-cell-policy", choices=["cell", "unit"], default="cell")

    sp = sub.add_parser("estimate", help="estimate the ATT (gsc, mc) or the FE interaction model (twfe)")
    common(sp)
    panel_args(sp)
    sp.add_argument("--method", choices=["gsc", "mc", "twfe"], default="gsc")
    grp = sp.add_mutually_exclusive_group()
    grp.add_argument("--r", type=int, default=None)
    grp.add_argument("--r-max", type=int, default=None)
    boot_args(sp)
    sp.add_argument("--lambda-grid", type=_float_list, default=None)
    sp.add_argument("--cv-folds", type=int, default=5)
    sp.add_argument("--compute", help="period,compute CSV (twfe)")
    sp.add_argument("--log-compute", action="store_true")
    sp.add_argument("--delta-compute", type=float, default=None,
                    help="also report the marginal effect of this compute change (twfe)")

    sp = sub.add_parser("placebo", help="placebo-in-space or placebo-in-time test")
    common(sp)
    panel_args(sp)
    sp.add_argument("--kind", choices=["space", "time"], required=True)
    sp.add_argument("--pseudo-treated", default="", help="comma-separated control units (space)")
    sp.add_argument("--onset", type=int, default=None, help="pseudo onset period (space)")
    sp.add_argument("--shift", type=int, default=3, choices=[2, 3, 4], help="years (time)")
    sp.add_argument("--r", type=int, required=True)
    boot_args(sp)

    for name, helptext in [("counts", "group participation counts per venue-year"),
                           ("shares", "share of papers with a group co-author"),
                           ("tfidf", "normalized TF-IDF profiles per group")]:
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        sp.add_argument("--records", required=True, help="JSON-lines paper records")
        sp.add_argument("--groups", required=True, help="group definition JSON")
        if name == "counts":
            sp.add_argument("--weighted", action="store_true")
        if name == "tfidf":
            sp.add_argument("--venue", default=None)
            sp.add_argument("--split-year", type=int, default=None,
                            help="also write before/after profiles around this year")

    sp = sub.add_parser("filter-dl", help="keep deep-learning papers by keyword")
    common(sp)
    sp.add_argument("--records", required=True)
    sp.add_argument("--keywords", default=None, help="one phrase per line (default: bundled)")

    sp = sub.add_parser("simulate", help="draw a synthetic panel")
    common(sp)
    sp.add_argument("--spec", required=True, help="DgpSpec JSON")

    sp = sub.add_parser("report", help="rebuild plot tables from an estimate's att.json")
    common(sp)
    sp.add_argument("--run-dir", required=True)
    return p


def _covariates(arg, panel):
    if arg is None:
        return [c for c in DEFAULT_COVARIATES if c in panel.covariates]
    return _csv_list(arg)


def _write_att(out: Path, att, dump_draws=None):
    write_json(out / "att.json", att_to_record(att))
    write_csv(out / "att_by_period.csv", ["period", "att", "se", "lo", "hi"],
              att_by_period_rows(att))
    for name, (header, rows) in report(att).items():
        write_csv(out / f"{name}.csv", header, rows)
    if dump_draws is not None:
        write_csv(out / "bootstrap_draws.csv", ["replicate", "att"], enumerate(dump_draws))


def _load_filtered(args):
    panel = load_panel(args.panel)
    panel, rep = validate_and_filter(panel, min_pre=args.min_pre)
    return panel, rep


def cmd_validate(args, out):
    panel = load_panel(args.panel)
    panel, rep = validate_and_filter(
        panel, min_pre=args.min_pre, min_cells_per_unit_period_group=args.min_cell_size,
        size_covariate=args.size_covariate, small_cell_policy=args.small_cell_policy)
    write_json(out / "report.json", rep)
    with open(out / "panel_filtered.csv", "w", encoding="utf-8", newline="") as fh:
        write_panel(panel, fh)
    return [args.panel]


def cmd_estimate(args, out):
    if args.method == "twfe":
        if not args.compute:
            raise UsageError("--compute is required for --method twfe")
        panel = load_panel(args.panel)
        covs = _covariates(args.covariates, panel)
        fit = within_ols(panel, load_compute(args.compute), covs, log_compute=args.log_compute)
        d = fit.to_dict()
        if args.delta_compute is not None:
            d["marginal_effect"] = {"delta_compute": args.delta_compute,
                                    "effect": marginal_effect(fit, args.delta_compute)}
        write_json(out / "regression.json", d)
        (out / "regression.txt").write_text(fit.table(), encoding="utf-8")
        return [args.panel, args.compute]

    panel, rep = _load_filtered(args)
    write_json(out / "panel_report.json", rep)
    covs = _covariates(args.covariates, panel)
    if args.method == "mc":
        grid = args.lambda_grid or list(DEFAULT_LAMBDA_GRID)
        att, comp = mc_att(panel, grid, cv_folds=args.cv_folds, seed=args.seed)
        _write_att(out, att)
        write_csv(out / "cv_table.csv", ["lambda", "mse"], sorted(comp.cv_table.items()))
        write_json(out / "completion.json", {"lambda": comp.lam, "rank": comp.rank,
                                             "converged": comp.converged,
                                             "iterations": comp.iterations})
        return [args.panel]

    if args.r_max is not None:
        cv = choose_r(panel, args.r_max, covs)
        write_json(out / "cv.json", cv.to_dict())
        r = cv.chosen_r
    else:
        r = 0 if args.r is None else args.r
    fit = fit_ife(panel, r, covs)
    write_json(out / "fit.json", fit.to_dict())
    draws = None
    if args.bootstrap:
        spec = BootstrapSpec(replicates=args.bootstrap, seed=args.seed, ci_level=args.ci_level)
        run = bootstrap_att(panel, r, covs, spec, return_draws=True)
        att = run.result
        draws = run.draws if args.dump_draws else None
    else:
        att = impute_and_att(fit, panel)
    _write_att(out, att, draws)
    return [args.panel]


def cmd_placebo(args, out):
    panel, rep = _load_filtered(args)
    covs = _covariates(args.covariates, panel)
    spec = BootstrapSpec(replicates=args.bootstrap or 200,
                         seed=args.seed, ci_level=args.ci_level)
    if args.kind == "space":
        if args.onset is None:
            raise UsageError("--onset is required for --kind space")
        res = placebo_in_space(panel, _csv_list(args.pseudo_treated), args.onset, args.r,
                               covs, spec)
    else:
        res = placebo_in_time(panel, args.shift, args.r, covs, spec, min_pre=args.min_pre)
    write_json(out / "placebo.json", res.to_dict())
    _write_att(out, res.att_result, res.draws if args.dump_draws else None)
    return [args.panel]


def cmd_counts(args, out):
    records, groups = load_records(args.records), load_groups(args.groups)
    if args.weighted:
        write_frame(out / "counts_weighted.csv", count_weighted(records, groups))
    else:
        table = None
        for g in groups:
            df = count_simple(records, g).rename(columns={"count": g.name})
            table = df if table is None else table.merge(df, on=["venue", "year"])
        write_frame(out / "counts.csv", table)
    return [args.records, args.groups]


def cmd_shares(args, out):
    records, groups = load_records(args.records), load_groups(args.groups)
    rows = []
    for g in groups:
        for row in share_series(records, g).itertuples(index=False):
            rows.append((g.name, row.venue, row.year, row.count, row.n_papers, float(row.share)))
    write_csv(out / "shares.csv", ["group", "venue", "year", "count", "n_papers", "share"], rows)
    return [args.records, args.groups]


def cmd_filter_dl(args, out):
    records = load_records(args.records)
    keywords = load_keywords(args.keywords) if args.keywords else None
    kept = filter_deep_learning(records, keywords)
    text = "".join(json.dumps(r.to_dict(), ensure_ascii=False) + "\n" for r in kept)
    (out / "deep_learning.jsonl").write_text(text, encoding="utf-8")
    write_json(out / "filter_summary.json", {"n_records": len(records), "n_kept": len(kept)})
    return [args.records] + ([args.keywords] if args.keywords else [])


def cmd_tfidf(args, out):
    records, groups = load_records(args.records), load_groups(args.groups)
    profiles = tfidf_group_scores(records, groups, venue=args.venue)
    if args.split_year is not None:
        profiles += period_profiles(records, args.split_year, venue=args.venue)
    rows = [(p.group, term, score) for p in profiles for term, score in p.scores.items()]
    write_csv(out / "tfidf_profiles.csv", ["group", "term", "score"], rows)
    return [args.records, args.groups]


def cmd_simulate(args, out):
    spec = DgpSpec.from_json(Path(args.spec).read_text(encoding="utf-8"))
    panel, truth = gen_panel(spec)
    with open(out / "panel.csv", "w", encoding="utf-8", newline="") as fh:
        write_panel(panel, fh)
    write_json(out / "ground_truth.json", {"spec": spec.to_dict(), **truth.to_dict()})
    return [args.spec]


def cmd_report(args, out):
    path = Path(args.run_dir) / "att.json"
    if not path.exists():
        raise FileNotFoundError(f"missing estimation artifact {path}")
    att = att_from_record(json.loads(path.read_text(encoding="utf-8")))
    for name, (header, rows) in report(att).items():
        write_csv(out / f"{name}.csv", header, rows)
    return [str(path)]


COMMANDS = {
    "validate": cmd_validate, "estimate": cmd_estimate, "placebo": cmd_placebo,
    "counts": cmd_counts, "shares": cmd_shares, "filter-dl": cmd_filter_dl,
    "tfidf": cmd_tfidf, "simulate": cmd_simulate, "report": cmd_report,
}


def _manifest(args, inputs) -> dict:
    config = {k: v for k, v in sorted(vars(args).items()) if k != "out"}
    return {
        "toolkit": "gapcast",
        "version": __version__,
        "command": args.command,
        "config": config,
        "inputs": {str(p): sha256_file(p) for p in inputs if p},
    }


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:       # --help, --version and usage errors
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        inputs = COMMANDS[args.command](args, out)
        write_json(out / "manifest.json", _manifest(args, inputs))
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"gapcast: error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError) as exc:
        print(f"gapcast: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
