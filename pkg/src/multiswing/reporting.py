"""CSV artifacts with a versioned header comment line.

Every file starts with ``# multiswing <kind> v<version>``; floats are written
with ``repr`` so re-reading gives back identical values.
"""

from __future__ import annotations

import csv
import math

FORMAT_VERSION = 1

SCHEMAS = {
    "prices": [("config_id", str), ("scheme", str), ("price", float), ("stderr", float),
               ("ci_low", float), ("ci_high", float), ("n_paths", int), ("seed", int),
               ("wall_time", float)],
    "training_log": [("iteration", int), ("date_index", str), ("tasks", int),
                     ("loss_mean", float), ("loss_min", float), ("loss_max", float),
                     ("weight_mean", float), ("weight_min", float), ("weight_max", float),
                     ("weight_sum", float), ("global_loss", float), ("grad_norm_mean", float),
                     ("r_mean", float), ("price", float), ("ci_low", float), ("ci_high", float)],
    "curve": [("iteration", int), ("scheme", str), ("price", float), ("ci_low", float),
              ("ci_high", float)],
}


class FormatError(ValueError):
    """A CSV file that does not carry the expected header."""


def header_line(kind: str) -> str:
    return f"# multiswing {kind} v{FORMAT_VERSION}"


def _fmt(value, typ):
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    if typ is float:
        return repr(float(value))
    if typ is int:
        return str(int(value))
    return str(value)


def _parse(text, typ):
    if text == "":
        return float("nan") if typ is float else None
    return typ(text)


def write_csv(path, kind: str, rows) -> None:
    """Write dict rows; missing keys become empty cells, unknown keys are an error."""
    schema = SCHEMAS[kind]
    names = [n for n, _ in schema]
    with open(path, "w", newline="") as fh:
        fh.write(header_line(kind) + "\n")
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in rows:
            extra = set(row) - set(names)
            if extra:
                raise KeyError(f"columns {sorted(extra)} are not part of the {kind} schema")
            writer.writerow([_fmt(row.get(n), t) for n, t in schema])


def read_csv(path, kind: str) -> list[dict]:
    schema = SCHEMAS[kind]
    with open(path, newline="") as fh:
        first = fh.readline().rstrip("\r\n")
        if first != header_line(kind):
            raise FormatError(f"{path}: expected header {header_line(kind)!r}, found {first!r}")
        reader = csv.reader(fh)
        names = next(reader)
        if names != [n for n, _ in schema]:
            raise FormatError(f"{path}: unexpected columns {names}")
        return [{n: _parse(v, t) for (n, t), v in zip(schema, row)} for row in reader]


def price_row(config_id, scheme, result) -> dict:
    return {"config_id": config_id, "scheme": scheme, "price": result.price, "stderr": result.stderr,
            "ci_low": result.ci_low, "ci_high": result.ci_high, "n_paths": result.n_paths,
            "seed": result.seed, "wall_time": result.wall_time}
