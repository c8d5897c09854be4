"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or configuration, 2 numerical or
conditioning failure, 3 I/O failure.  Complex numbers are passed as
``re,im``.
"""

from __future__ import annotations

import argparse
import csv
import json
import re
import sys
from typing import Sequence

import numpy as np

from . import __version__
from .ensemble import make_observables
from .harness import (
    ExperimentConfig,
    export_csv,
    read_config_file,
    persist,
    run_experiment,
    sqrt_eta_rule_test,
)
from .mchain import ChainSpec, chain_to_dict, m_avg, m_matrix, m_matrix_q
from .ncpart import K_MAX, Partition, enumerate_ncp, kreweras

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3
HELP_WIDTH = 88
Q_TOL = 1e-10
IDENTITY_TOL = 1e-9
BOUND_SLACK = 10.0
Z_FLAGS = K_MAX + 1


class UsageError(ValueError):
    pass


_NUMBER = r"-?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?"


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        # let "-0.1,-0.4" through as a value rather than an option
        self._negative_number_matcher = re.compile(rf"^-(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?(,{_NUMBER})?$")

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _formatter(prog):
    return argparse.HelpFormatter(prog, width=HELP_WIDTH, max_help_position=32)


def parse_complex(text: str) -> complex:
    """``"re,im"`` (or a bare real) to a complex number."""
    parts = text.split(",")
    if len(parts) > 2 or not all(p.strip() for p in parts):
        raise argparse.ArgumentTypeError(f"expected re,im but got {text!r}")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected re,im but got {text!r}") from None
    return complex(vals[0], vals[1] if len(vals) == 2 else 0.0)


def _output_flags(p):
    p.add_argument("--out", metavar="PATH", help="write results to PATH")
    p.add_argument("--format", choices=("json", "csv"), default="json", help="format of --out (default json)")


def _experiment_flags(p, kind):
    p.add_argument("--config", metavar="PATH", help="flat key = value config file; flags override it")
    p.add_argument("--N", metavar="LIST", help="dimensions, comma separated")
    eta = p.add_mutually_exclusive_group()
    eta.add_argument("--eta", metavar="LIST", help="absolute eta values, comma separated")
    eta.add_argument("--eta-exp", metavar="LIST", help="exponents gamma with eta = N^-gamma")
    if kind in ("scan", "sqrt-eta"):
        p.add_argument("--k", type=int, help="number of deterministic matrices")
        p.add_argument("--a", type=int, help="number of traceless matrices")
        p.add_argument("--layout", help="spectral layout: conjugate-alternating or same-half-plane")
        p.add_argument("--energy", type=float, help="real part E of the spectral parameters")
        p.add_argument("--general-recipe", help="recipe for the matrices that are not traceless")
    if kind == "scan":
        p.add_argument("--form", help="averaged, isotropic or both")
    if kind == "sqrt-eta":
        p.add_argument("--a-alt", type=int, help="traceless count of the comparison series")
    if kind == "thermalize":
        p.add_argument("--s", metavar="LIST", help="evolution times, comma separated")
    p.add_argument("--beta", type=int, help="symmetry class, 1 (real) or 2 (complex)")
    p.add_argument("--dist", help="entry distribution: gaussian, rademacher or uniform")
    p.add_argument("--trials", type=int, help="Monte Carlo trials per grid point (at least 8)")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--recipe", help="observable recipe")
    p.add_argument("--threads", type=int, help="worker threads (RESOLVENT_LAB_THREADS overrides)")
    p.add_argument("--raw", action="store_true", help="keep per-trial values in the record")
    _output_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="resolvent-lab", formatter_class=_formatter,
                     description="Deterministic resolvent-chain approximations and Monte Carlo checks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("ncp", help="enumerate non-crossing partitions", formatter_class=_formatter)
    p.add_argument("--k", type=int, required=True, help="ground-set size")
    p.add_argument("--count", action="store_true", help="print only the number of partitions")
    _output_flags(p)

    p = sub.add_parser("kreweras", help="Kreweras complement of a partition", formatter_class=_formatter)
    p.add_argument("--partition", required=True, help='blocks separated by "|", e.g. "134|2|5|6"')

    p = sub.add_parser("m-eval", help="evaluate the deterministic chain approximation",
                       formatter_class=_formatter)
    p.add_argument("--k", type=int, required=True, help="number of deterministic matrices")
    for i in range(1, Z_FLAGS + 1):
        p.add_argument(f"--z{i}", type=parse_complex, metavar="RE,IM", help=f"spectral parameter z{i}")
    p.add_argument("--N", type=int, default=64, help="matrix dimension (default 64)")
    p.add_argument("--recipe", default="random-hermitian", help="observable recipe (default random-hermitian)")
    p.add_argument("--seed", type=int, default=0, help="observable seed (default 0)")
    p.add_argument("--form", choices=("averaged", "isotropic"), default="averaged",
                   help="averaged needs k spectral parameters, isotropic k+1")
    p.add_argument("--check-q", action="store_true", help="cross-check against the graph formula")
    _output_flags(p)

    p = sub.add_parser("identity-suite", help="randomized identity and bound checks",
                       formatter_class=_formatter)
    p.add_argument("--N", type=int, default=32, help="matrix dimension (default 32)")
    p.add_argument("--eta", type=float, default=0.5, help="smallest |Im z| (default 0.5)")
    p.add_argument("--k", type=int, default=5, help="largest chain length (default 5)")
    p.add_argument("--beta", type=int, default=2, help="symmetry class of the test samples")
    p.add_argument("--trials", type=int, default=32, help="number of random chains (default 32)")
    p.add_argument("--seed", type=int, default=0, help="base seed")
    p.add_argument("--threads", type=int, help="worker threads (RESOLVENT_LAB_THREADS overrides)")
    _output_flags(p)

    p = sub.add_parser("scan", help="local-law error scan over (N, eta)", formatter_class=_formatter)
    _experiment_flags(p, "scan")
    p = sub.add_parser("sqrt-eta", help="eta-slope gap between traceless counts", formatter_class=_formatter)
    _experiment_flags(p, "sqrt-eta")
    p = sub.add_parser("thermalize", help="Heisenberg-evolved overlap decay", formatter_class=_formatter)
    _experiment_flags(p, "thermalize")
    p = sub.add_parser("clt", help="tracial versus traceless fluctuation modes", formatter_class=_formatter)
    _experiment_flags(p, "clt")
    return parser


_KIND = {"scan": "locallaw-scan", "sqrt-eta": "sqrt-eta-rule", "thermalize": "thermalization",
         "clt": "two-scale-clt"}
_OVERRIDES = ("N", "eta", "eta_exp", "k", "a", "a_alt", "layout", "energy", "form", "s", "beta", "dist",
              "trials", "seed", "recipe", "general_recipe", "threads")


def _experiment_config(args) -> ExperimentConfig:
    over = {key: getattr(args, key) for key in _OVERRIDES if getattr(args, key, None) is not None}
    if args.raw:
        over["keep_raw"] = True
    over["kind"] = _KIND[args.command]
    data = read_config_file(args.config) if args.config else {}
    if args.command == "clt" and "recipe" not in data:
        data["recipe"] = "identity-plus-traceless"
    data.update(over)
    return ExperimentConfig.from_mapping(data)


def _write_record(record, args):
    if not args.out:
        return
    if args.format == "csv":
        export_csv(record, args.out)
    else:
        persist(record, args.out)


def _write_doc(doc: dict, args, rows=None):
    if not args.out:
        return
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        if args.format == "json":
            json.dump(doc, fh, indent=1, sort_keys=True)
        else:
            w = csv.writer(fh)
            for row in rows:
                w.writerow(row)


def _fmt(z: complex) -> str:
    return f"{z.real:.12g}{z.imag:+.12g}j"


def _cmd_ncp(args) -> int:
    parts = enumerate_ncp(args.k)
    if args.count:
        print(len(parts))
    else:
        for p in parts:
            print(p)
    _write_doc({"k": args.k, "count": len(parts), "partitions": [str(p) for p in parts]}, args,
               [("partition",)] + [(str(p),) for p in parts])
    return EXIT_OK


def _cmd_kreweras(args) -> int:
    print(kreweras(Partition.from_string(args.partition)))
    return EXIT_OK


def _cmd_m_eval(args) -> int:
    k = args.k
    if not 1 <= k <= K_MAX:
        raise UsageError(f"--k must lie in 1..{K_MAX}, got {k}")
    count = k if args.form == "averaged" else k + 1
    zs = []
    for i in range(1, Z_FLAGS + 1):
        z = getattr(args, f"z{i}")
        if i <= count and z is None:
            raise UsageError(f"--z{i} is required for the {args.form} chain with k={k}")
        if i > count and z is not None:
            raise UsageError(f"--z{i} given but the {args.form} chain with k={k} uses only {count}")
        if z is not None:
            zs.append(z)
    mats = make_observables(args.N, args.recipe, args.seed, count=k).matrices
    refs = tuple({"recipe": args.recipe, "seed": args.seed, "member": j, "real": False} for j in range(k))
    chain = ChainSpec(tuple(zs), tuple(mats), args.form, matrix_refs=refs)
    doc = {"chain": chain_to_dict(chain)}
    if args.form == "averaged":
        value = m_avg(chain)
        doc["m_avg"] = [value.real, value.imag]
        print(f"<M B_k> = {_fmt(value)}")
    M = m_matrix(chain).matrix_part
    doc["m_norm"] = float(np.linalg.norm(M, 2))
    print(f"||M|| = {doc['m_norm']:.12g}")
    code = EXIT_OK
    if args.check_q:
        Mq = m_matrix_q(chain).matrix_part
        res = float(np.linalg.norm(M - Mq) / np.linalg.norm(M))
        doc["q_residual"] = res
        ok = res < Q_TOL
        print(f"q-formula residual = {res:.3e} ({'ok' if ok else 'FAIL'}, tolerance {Q_TOL:g})")
        if not ok:
            code = EXIT_NUMERIC
    rows = [("key", "value")] + [(key, json.dumps(val)) for key, val in sorted(doc.items())]
    _write_doc(doc, args, rows)
    return code


def _cmd_identity_suite(args) -> int:
    cfg = ExperimentConfig("identity-suite", N=(args.N,), eta=(args.eta,), k=args.k, beta=args.beta,
                           trials=args.trials, seed=args.seed, threads=args.threads or 1)
    record = run_experiment(cfg)
    values = record.points[0].values
    limits = {"max_q_residual": IDENTITY_TOL, "max_rec1_residual": IDENTITY_TOL,
              "max_rec2_residual": IDENTITY_TOL, "max_eigen_vs_direct": 1e-8, "max_ward_residual": 1e-10,
              "max_bound_ratio_avg": BOUND_SLACK, "max_bound_ratio_norm": BOUND_SLACK}
    failed = []
    for key, val in sorted(values.items()):
        lim = limits.get(key)
        flag = "" if lim is None else ("ok" if val <= lim else "FAIL")
        print(f"{key:24s} {val:.3e}  {flag}")
        if lim is not None and val > lim:
            failed.append(key)
    _write_record(record, args)
    if failed:
        print(f"failed checks: {', '.join(failed)}")
        return EXIT_NUMERIC
    return EXIT_OK


def _print_points(record, statistic_keys):
    for p in record.points:
        grid = f"{p.series:10s} N={p.N:<6d}"
        if p.eta is not None:
            grid += f" eta={p.eta:<10.4g}"
        if p.s is not None:
            grid += f" s={p.s:<6g}"
        cols = []
        for key in statistic_keys:
            if key in p.stats:
                cols.append(f"{key} median={p.stats[key]['median']:.4g} q90={p.stats[key]['q90']:.4g}")
            elif key in p.values:
                cols.append(f"{key}={p.values[key]:.4g}")
        print(grid + "  " + "  ".join(cols))


def _cmd_experiment(args) -> int:
    cfg = _experiment_config(args)
    if args.command == "sqrt-eta":
        result = sqrt_eta_rule_test(cfg)
        record = result.record
        _print_points(record, ("error",))
        print(f"eta-slope a={cfg.a}: {result.fit_a.slope:.3f} +- {result.fit_a.stderr:.3f}")
        print(f"eta-slope a'={cfg.a_alt}: {result.fit_alt.slope:.3f} +- {result.fit_alt.stderr:.3f}")
        print(f"gap {result.gap:.3f} (expected {result.expected_gap:.3f})")
    else:
        record = run_experiment(cfg)
        if args.command == "scan":
            _print_points(record, ("error", "psi_av", "error_iso", "psi_iso"))
            for axis in ("N", "eta"):
                if f"slope_{axis}" in record.summary:
                    print(f"{axis}-slope of median error: {record.summary[f'slope_{axis}']:.3f} "
                          f"+- {record.summary[f'stderr_{axis}']:.3f}")
        elif args.command == "thermalize":
            _print_points(record, ("error", "phi_sq"))
        else:
            _print_points(record, ("sd_tracial", "sd_traceless", "sd_ratio", "predicted_ratio"))
    print(f"config hash {record.config_hash[:16]}")
    _write_record(record, args)
    return EXIT_OK


_COMMANDS = {
    "ncp": _cmd_ncp,
    "kreweras": _cmd_kreweras,
    "m-eval": _cmd_m_eval,
    "identity-suite": _cmd_identity_suite,
    "scan": _cmd_experiment,
    "sqrt-eta": _cmd_experiment,
    "thermalize": _cmd_experiment,
    "clt": _cmd_experiment,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    command = "resolvent-lab"
    try:
        args = parser.parse_args(argv)
        command = args.command
        return _COMMANDS[command](args)
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)
    except OSError as exc:
        print(f"error in {command}: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except ArithmeticError as exc:
        print(f"error in {command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, KeyError, argparse.ArgumentTypeError) as exc:
        print(f"error in {command}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
