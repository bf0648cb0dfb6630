"""Plain-text model files, version 1.

Layout (line oriented, `%.17g` floats so float64 values round-trip
exactly):

    devmf-model v1
    kind dmf
    shape 50x60            # or 10x12x7 for 3-mode models
    rank_mean 5
    rank_dev 3
    mu 3.5217...
    delta_sigma2 0.01
    U                      # then one line per row, space-separated
    ...
    V
    ...
    u                      # bias vectors: a single line of numbers
    v
    P
    ...
    Q
    ...

Three-mode files add W after V, w after v, and S after Q.  Loading is
strict: any missing block, wrong row count, or non-numeric token raises
ParseError with the line number.
"""

import numpy as np

from .core import DeviationModel, MeanModel
from .errors import ParseError
from .tensor import CpDeviationModel, CpMeanModel

MAGIC = "devmf-model v1"


def _fmt_row(row):
    return " ".join(f"{x:.17g}" for x in np.atleast_1d(row))


def save_model(path, mean, dev, kind="dmf"):
    """Write mean + deviation models (2- or 3-mode) to one text file."""
    tensor = hasattr(mean, "W")
    shape = "x".join(str(n) for n in mean.shape)
    mats = [("U", mean.U), ("V", mean.V)] + ([("W", mean.W)] if tensor else [])
    vecs = [("u", mean.u), ("v", mean.v)] + ([("w", mean.w)] if tensor else [])
    devs = [("P", dev.P), ("Q", dev.Q)] + ([("S", dev.S)] if tensor else [])
    with open(path, "w") as fh:
        fh.write(f"{MAGIC}\n")
        fh.write(f"kind {kind}\n")
        fh.write(f"shape {shape}\n")
        fh.write(f"rank_mean {mean.rank}\n")
        fh.write(f"rank_dev {dev.rank}\n")
        fh.write(f"mu {mean.mu:.17g}\n")
        fh.write(f"delta_sigma2 {dev.delta_sigma2:.17g}\n")
        for name, mat in mats:
            fh.write(name + "\n")
            for row in mat:
                fh.write(_fmt_row(row) + "\n")
        for name, vec in vecs:
            fh.write(name + "\n")
            fh.write(_fmt_row(vec) + "\n")
        for name, mat in devs:
            fh.write(name + "\n")
            for row in mat:
                fh.write(_fmt_row(row) + "\n")


class _Cursor:
    def __init__(self, path, lines):
        self.path = path
        self.lines = lines
        self.pos = 0

    def next_line(self, what):
        if self.pos >= len(self.lines):
            raise ParseError(self.path, self.pos + 1, f"unexpected end of file, wanted {what}")
        line = self.lines[self.pos].rstrip("\n")
        self.pos += 1
        return line

    def error(self, message):
        raise ParseError(self.path, self.pos, message)


def _read_scalar(cur, key, cast):
    line = cur.next_line(f"`{key} <value>`")
    name, _, raw = line.partition(" ")
    if name != key:
        cur.error(f"expected `{key} <value>`, got {line!r}")
    try:
        return cast(raw)
    except ValueError:
        cur.error(f"bad value for {key}: {raw!r}")


def _read_block(cur, name, n_rows, n_cols):
    header = cur.next_line(f"block header {name!r}")
    if header != name:
        cur.error(f"expected block {name!r}, got {header!r}")
    rows = np.empty((n_rows, n_cols))
    for r in range(n_rows):
        parts = cur.next_line(f"row {r} of {name}").split()
        if len(parts) != n_cols:
            cur.error(f"block {name} row {r}: expected {n_cols} numbers, got {len(parts)}")
        try:
            rows[r] = [float(p) for p in parts]
        except ValueError:
            cur.error(f"block {name} row {r}: non-numeric token")
    return rows


def _read_vector(cur, name, n):
    return _read_block(cur, name, 1, n)[0]


def load_model(path):
    """Inverse of save_model; returns (mean, dev, kind)."""
    with open(path) as fh:
        cur = _Cursor(path, fh.readlines())
    if cur.next_line("header") != MAGIC:
        cur.error(f"not a {MAGIC} file")
    kind = _read_scalar(cur, "kind", str)
    shape_raw = _read_scalar(cur, "shape", str)
    try:
        shape = tuple(int(n) for n in shape_raw.split("x"))
    except ValueError:
        cur.error(f"bad shape {shape_raw!r}")
    if len(shape) not in (2, 3):
        cur.error(f"shape must have 2 or 3 modes, got {shape_raw!r}")
    rank_mean = _read_scalar(cur, "rank_mean", int)
    rank_dev = _read_scalar(cur, "rank_dev", int)
    mu = _read_scalar(cur, "mu", float)
    ds2 = _read_scalar(cur, "delta_sigma2", float)

    mats = [_read_block(cur, nm, n, rank_mean)
            for nm, n in zip("UVW", shape)]
    vecs = [_read_vector(cur, nm, n) for nm, n in zip("uvw", shape)]
    devs = [_read_block(cur, nm, n, rank_dev) for nm, n in zip("PQS", shape)]
    if len(shape) == 2:
        mean = MeanModel(mats[0], mats[1], vecs[0], vecs[1], mu)
        dev = DeviationModel(devs[0], devs[1], ds2)
    else:
        mean = CpMeanModel(*mats, *vecs, mu)
        dev = CpDeviationModel(*devs, ds2)
    return mean, dev, kind
