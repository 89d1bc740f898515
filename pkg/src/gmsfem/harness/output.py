"""CSV and gnuplot emission for convergence records."""

import csv
import os

from ..enrich import ConvergenceRecord

CSV_HEADER = ("iter", "dof", "e_a", "e_2", "residual_total", "lambda_min", "wall_ms")


def _fmt(value):
    return "%.17g" % value


def record_row(rec, timing=True):
    return [str(rec.iteration), str(rec.dof), _fmt(rec.e_a), _fmt(rec.e_2),
            _fmt(rec.residual_total), _fmt(rec.lambda_min),
            _fmt(rec.wall_ms if timing else 0.0)]


def write_csv(records, path, timing=True, error=None):
    """Write records with the fixed header; ``error`` appends a trailing comment line."""
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory):
        raise OSError(f"cannot write {path}: directory {directory} does not exist")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for rec in records:
            writer.writerow(record_row(rec, timing))
        if error is not None:
            fh.write(f"# error: {error}\n")
    return path


def read_csv(path):
    out = []
    with open(path, newline="") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    reader = csv.reader(rows)
    header = next(reader)
    if tuple(header) != CSV_HEADER:
        raise ValueError(f"{path}: unexpected header {header}")
    for row in reader:
        out.append(ConvergenceRecord(
            iteration=int(row[0]), dof=int(row[1]), e_a=float(row[2]), e_2=float(row[3]),
            residual_total=float(row[4]), lambda_min=float(row[5]), wall_ms=float(row[6])))
    return out


def plot_script(curves, title="Relative energy error", ylabel="relative energy error e_a"):
    """Gnuplot script plotting e_a against DOF, one curve per ``(label, csv_path)``."""
    lines = [
        "set datafile separator ','",
        "set logscale y",
        "set format y '10^{%L}'",
        "set xlabel 'dimension of V_ms (DOF)'",
        f"set ylabel '{ylabel}'",
        f"set title '{title}'",
        "set key top right",
    ]
    parts = [f"'{path}' using 2:3 skip 1 with linespoints title '{label}'"
             for label, path in curves]
    lines.append("plot " + ", \\\n     ".join(parts))
    return "\n".join(lines) + "\n"


def emit_outputs(records, csv_path, plot_path=None, label=None, timing=True):
    """Write the CSV and, when ``plot_path`` is given, a single-curve plot script."""
    if not records:
        raise ValueError("no records to write")
    write_csv(records, csv_path, timing=timing)
    if plot_path is not None:
        write_plot(plot_path, [(label or os.path.basename(csv_path), csv_path)])
    return csv_path, plot_path


def write_plot(path, curves, **kwargs):
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory):
        raise OSError(f"cannot write {path}: directory {directory} does not exist")
    with open(path, "w", newline="\n") as fh:
        fh.write(plot_script(curves, **kwargs))
    return path
