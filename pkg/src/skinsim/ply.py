"""Minimal ASCII PLY reading/writing.

Only scalar per-vertex properties are supported; non-vertex elements are
skipped on read. Values are written with shortest round-trip formatting so
a write/read cycle preserves float64 payloads bit-exactly.
"""

import numpy as np

from .errors import InputError

_SCALAR_TYPES = {
    "char", "uchar", "short", "ushort", "int", "uint",
    "int8", "uint8", "int16", "uint16", "int32", "uint32",
    "float", "double", "float32", "float64",
}


def read_ply(path):
    """Parse an ASCII PLY file.

    Returns (properties, count): `properties` maps each vertex property name
    to a float64 array of length `count`, in file order.
    """
    try:
        with open(path, "r", encoding="ascii", errors="strict") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise InputError(f"cannot read PLY file {path}: {exc}")
    except UnicodeDecodeError:
        raise InputError(f"{path}: not an ASCII PLY file")

    if not lines or lines[0].strip() != "ply":
        raise InputError(f"{path}: missing 'ply' magic line")

    # elements: list of (name, count, [property names]); only 'vertex'
    # properties are retained.
    elements = []
    fmt_seen = False
    i = 1
    while i < len(lines):
        tokens = lines[i].split()
        i += 1
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            if len(tokens) < 2 or tokens[1] != "ascii":
                raise InputError(f"{path}: only 'format ascii 1.0' is supported")
            fmt_seen = True
        elif tokens[0] == "element":
            if len(tokens) != 3:
                raise InputError(f"{path}: malformed element line")
            try:
                count = int(tokens[2])
            except ValueError:
                raise InputError(f"{path}: malformed element count {tokens[2]!r}")
            elements.append([tokens[1], count, []])
        elif tokens[0] == "property":
            if not elements:
                raise InputError(f"{path}: property before any element")
            if tokens[1] == "list":
                if elements[-1][0] == "vertex":
                    raise InputError(f"{path}: list properties on vertices are unsupported")
                elements[-1][2].append(None)
            elif len(tokens) == 3 and tokens[1] in _SCALAR_TYPES:
                elements[-1][2].append(tokens[2])
            else:
                raise InputError(f"{path}: malformed property line {lines[i - 1]!r}")
        elif tokens[0] == "end_header":
            break
        else:
            raise InputError(f"{path}: unexpected header line {lines[i - 1]!r}")
    else:
        raise InputError(f"{path}: missing end_header")
    if not fmt_seen:
        raise InputError(f"{path}: missing format line")

    data_lines = lines[i:]
    cursor = 0
    properties = {}
    count_out = 0
    for name, count, props in elements:
        if cursor + count > len(data_lines):
            raise InputError(f"{path}: truncated data for element {name}")
        if name != "vertex":
            cursor += count
            continue
        values = np.empty((count, len(props)), dtype=np.float64)
        for r in range(count):
            tokens = data_lines[cursor + r].split()
            if len(tokens) != len(props):
                raise InputError(
                    f"{path}: vertex line {r} has {len(tokens)} values, "
                    f"expected {len(props)}"
                )
            try:
                values[r] = [float(t) for t in tokens]
            except ValueError:
                raise InputError(f"{path}: non-numeric vertex value on line {r}")
        cursor += count
        properties = {p: values[:, c].copy() for c, p in enumerate(props)}
        count_out = count
    if not properties:
        raise InputError(f"{path}: no vertex element found")
    return properties, count_out


def _fmt(x):
    # repr of a Python float is the shortest string that round-trips.
    return repr(float(x))


def write_ply(path, properties, count, comment=None):
    """Write scalar vertex properties as ASCII PLY (`property double` each)."""
    names = list(properties)
    columns = []
    for name in names:
        col = np.asarray(properties[name], dtype=np.float64)
        if col.shape != (count,):
            raise InputError(f"PLY property {name}: expected {count} values, got {col.shape}")
        columns.append(col)
    out = ["ply", "format ascii 1.0"]
    if comment:
        out.append(f"comment {comment}")
    out.append(f"element vertex {count}")
    out.extend(f"property double {name}" for name in names)
    out.append("end_header")
    for r in range(count):
        out.append(" ".join(_fmt(col[r]) for col in columns))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(out) + "\n")
