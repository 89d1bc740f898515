"""Experiment engine: fine reference, offline space, policy loop, CSV output."""

from dataclasses import dataclass, replace
import logging
import os

import numpy as np

from ..basis import build_offline
from ..enrich import Enrichment, Problem, initial_space
from ..fem import build_fine_system, read_kappa, solve_fine
from ..grid import build_grids, enrichable_nodes
from .fields import (NAMED_FIELDS, generate_field, named_spec, rescale_contrast, resolve_source,
                     shipped_field_path)
from .output import write_csv, write_plot

logger = logging.getLogger(__name__)


def load_kappa(config):
    """Per-cell permeability for ``config`` on its ``coarse * fine`` square grid.

    ``config.kappa`` is a KAPPA v1 path, ``shipped:<name>`` for a committed
    field, ``field:<name>`` to regenerate one, or ``constant:<value>``. A given
    ``contrast`` rescales the high cells of a file field; the generator
    honours ``seed`` when set.
    """
    n = config.coarse * config.fine
    source = str(config.kappa)
    if source.startswith("constant:"):
        value = float(source.split(":", 1)[1])
        if value <= 0:
            raise ValueError("constant permeability must be positive")
        return np.full((n, n), value)
    if source.startswith("field:"):
        name = source.split(":", 1)[1]
        spec = named_spec(name)
        if config.contrast is not None:
            spec = spec.with_contrast(config.contrast)
        seed = NAMED_FIELDS[name]["seed"] if config.seed is None else config.seed
        kappa = generate_field(spec, seed)
    else:
        if source.startswith("shipped:"):
            source = shipped_field_path(source.split(":", 1)[1])
        kappa = read_kappa(source)
        if config.contrast is not None:
            kappa = rescale_contrast(kappa, config.contrast)
    if kappa.shape != (n, n):
        raise ValueError(f"permeability has {kappa.shape[1]}x{kappa.shape[0]} cells; "
                         f"coarse={config.coarse} with fine={config.fine} needs {n}x{n}")
    return kappa


def load_source(config):
    """``one``/named source, a number, or ``file:<path>`` with per-cell values."""
    source = str(config.source)
    if source.startswith("file:"):
        values = np.loadtxt(source.split(":", 1)[1], dtype=float, ndmin=2)
        n = config.coarse * config.fine
        if values.shape != (n, n):
            raise ValueError(f"source file holds {values.shape}, grid needs {(n, n)}")
        return values
    return resolve_source(source)


@dataclass
class Setup:
    """Everything shared by runs on the same field and grid."""

    grids: object
    kappa: np.ndarray
    system: object
    reference: np.ndarray
    offline: object
    problem: Problem


def prepare(config):
    """Fine reference solve and offline construction for ``config``."""
    grids = build_grids(nx=config.coarse, ny=config.coarse, n_fine=config.fine)
    kappa = load_kappa(config)
    system = build_fine_system(grids, kappa, load_source(config))
    reference = solve_fine(system)
    nodes = enrichable_nodes(grids, config.dof_convention)
    offline = build_offline(grids, kappa, nodes, cache_dir=config.cache_dir)
    problem = Problem(system, offline, nodes, reference=reference)
    return Setup(grids, kappa, system, reference, offline, problem)


@dataclass
class RunResult:
    records: list
    csv_path: str
    driver: Enrichment
    setup: Setup

    @property
    def u_ms(self):
        return self.driver.u_ms


def run_experiment(config, setup=None):
    """Run one configuration and write its CSV (plus plot script when requested).

    Any failure after the run starts flushes the records gathered so far with a
    trailing error line before re-raising.
    """
    records = []
    try:
        if setup is None:
            setup = prepare(config)
        space = initial_space(setup.problem, config.initial_basis)
        driver = Enrichment(setup.problem, config.policy(), space,
                            per_color=config.per_subiteration)
        records = driver.records
        driver.run()
    except Exception as exc:
        if config.out:
            try:
                write_csv(records, config.out, timing=config.timing,
                          error=f"{type(exc).__name__}: {exc}")
            except OSError:
                logger.error("could not write the partial CSV to %s", config.out)
        raise
    write_csv(driver.records, config.out, timing=config.timing)
    if config.plot:
        write_plot(config.plot, [(f"{config.initial_basis} initial", config.out)])
    return RunResult(driver.records, config.out, driver, setup)


def comparison_path(out, n_initial):
    stem, ext = os.path.splitext(out)
    return f"{stem}_init{n_initial}{ext or '.csv'}"


def run_comparison(config, initial_counts, plot=None):
    """One run per initial-basis count on a shared offline space, one curve each."""
    setup = prepare(config)
    results = []
    for n in initial_counts:
        cfg = replace(config, initial_basis=int(n), out=comparison_path(config.out, n), plot=None)
        results.append(run_experiment(cfg, setup))
    if plot:
        write_plot(plot, [(f"{n} initial basis", r.csv_path) for n, r in zip(initial_counts, results)],
                   title="Error comparison for different numbers of initial basis functions")
    return results
