"""Command line entry point: ``gmsfem run``, ``gmsfem compare`` and ``gmsfem field``."""

import argparse
import logging
import sys

from ..enrich import MODES
from ..fem import write_kappa
from .config import RunConfig
from .fields import NAMED_FIELDS, generate_field, named_spec
from .runner import run_comparison, run_experiment

# flag name -> (RunConfig field, type, help)
_RUN_FLAGS = {
    "--coarse": ("coarse", int, "coarse cells per direction"),
    "--fine": ("fine", int, "fine cells per coarse cell and direction"),
    "--kappa": ("kappa", str, "KAPPA v1 path, field:<name> or constant:<value>"),
    "--contrast": ("contrast", float, "rescale the high-permeability cells to this contrast"),
    "--source": ("source", str, "source term: one, two-blob, a number or file:<path>"),
    "--initial-basis": ("initial_basis", int, "offline functions per neighborhood"),
    "--dof-convention": ("dof_convention", str, "enrichable nodes: all or interior"),
    "--mode": ("mode", str, "enrichment policy, one of: " + ", ".join(MODES)),
    "--theta": ("theta", float, "bulk marking fraction in (0, 1]"),
    "--tol": ("tol", float, "residual tolerance"),
    "--max-iters": ("max_iters", int, "maximum number of iterations"),
    "--n0": ("n0", int, "mode window width of the reduced online basis"),
    "--window-advance": ("window_advance", int, "window shift per iteration (default n0)"),
    "--basis-per-marked": ("basis_per_marked", int, "offline functions added per marked node"),
    "--seed": ("seed", int, "seed of the named field generator"),
    "--out": ("out", str, "CSV output path"),
    "--plot": ("plot", str, "gnuplot script output path"),
    "--cache-dir": ("cache_dir", str, "directory for cached local spectra"),
}
_RUN_SWITCHES = {
    "--neighbors": ("neighbors", "reduced basis also uses the overlapping neighborhoods"),
    "--include-prior": ("include_prior", "reduced basis window starts at mode 0"),
    "--per-subiteration": ("per_subiteration", "one record per color step"),
    "--timing": ("timing", "write measured wall times instead of zeros"),
}


def _add_run_options(parser):
    parser.add_argument("--config", help="flat key = value configuration file")
    for flag, (dest, typ, text) in _RUN_FLAGS.items():
        parser.add_argument(flag, dest=dest, type=typ, default=None, help=text)
    for flag, (dest, text) in _RUN_SWITCHES.items():
        parser.add_argument(flag, dest=dest, action="store_const", const=True, default=None,
                            help=text)


def build_parser():
    parser = argparse.ArgumentParser(prog="gmsfem", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one enrichment experiment")
    _add_run_options(run)

    cmp_ = sub.add_parser("compare", help="one run per initial-basis count, one plot")
    _add_run_options(cmp_)
    cmp_.add_argument("--counts", default="1,2,3,4",
                      help="comma separated initial-basis counts (default 1,2,3,4)")

    field = sub.add_parser("field", help="write a named synthetic field as KAPPA v1")
    field.add_argument("name", choices=sorted(NAMED_FIELDS))
    field.add_argument("--contrast", type=float)
    field.add_argument("--seed", type=int)
    field.add_argument("--out", required=True)
    return parser


def config_from_args(args):
    config = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {dest: getattr(args, dest) for dest, *_ in
                 list(_RUN_FLAGS.values()) + list(_RUN_SWITCHES.values())}
    return config.updated(**overrides)


def _summary(records):
    last = records[-1]
    return (f"{len(records)} records, final dof {last.dof}, e_a {last.e_a:.3e}, "
            f"e_2 {last.e_2:.3e}")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "field":
            spec = named_spec(args.name)
            if args.contrast is not None:
                spec = spec.with_contrast(args.contrast)
            seed = NAMED_FIELDS[args.name]["seed"] if args.seed is None else args.seed
            write_kappa(args.out, generate_field(spec, seed))
            print(f"wrote {args.out}")
            return 0
        config = config_from_args(args)
        if args.command == "run":
            result = run_experiment(config)
            print(f"{result.csv_path}: {_summary(result.records)}")
        else:
            counts = [int(c) for c in args.counts.split(",") if c.strip()]
            for n, result in zip(counts, run_comparison(config, counts, plot=config.plot)):
                print(f"{result.csv_path} ({n} initial): {_summary(result.records)}")
    except (ValueError, OSError, KeyError) as exc:
        print(f"gmsfem: error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"gmsfem: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
