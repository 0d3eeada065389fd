"""PLY point-cloud I/O (ASCII and binary little-endian).

Only the vertex element is read: x/y/z are required, red/green/blue are
captured when present, everything else is skipped. Elements after the
vertex block are ignored entirely.
"""

from __future__ import annotations

import numpy as np

from .bootstrap import PointCloud
from .errors import FormatError

_SCALAR_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _parse_header(lines):
    """-> (fmt, elements); elements = [(name, count, [(dtype_or_None, pname)])]."""
    if not lines or lines[0].strip() != "ply":
        raise FormatError("line 1: not a PLY file (missing 'ply')")
    fmt = None
    elements = []
    for ln, raw in enumerate(lines[1:], start=2):
        tokens = raw.split()
        if not tokens or tokens[0] == "comment":
            continue
        kind = tokens[0]
        if kind == "format":
            if len(tokens) < 2 or tokens[1] not in ("ascii", "binary_little_endian"):
                raise FormatError(f"line {ln}: unsupported format {raw.strip()!r}")
            fmt = tokens[1]
        elif kind == "element":
            if len(tokens) != 3:
                raise FormatError(f"line {ln}: malformed element declaration")
            try:
                count = int(tokens[2])
            except ValueError:
                raise FormatError(f"line {ln}: bad element count {tokens[2]!r}") from None
            elements.append((tokens[1], count, []))
        elif kind == "property":
            if not elements:
                raise FormatError(f"line {ln}: property before any element")
            if len(tokens) >= 2 and tokens[1] == "list":
                if len(tokens) != 5:
                    raise FormatError(f"line {ln}: malformed list property")
                elements[-1][2].append((None, tokens[4]))  # None marks a list
            elif len(tokens) == 3:
                if tokens[1] not in _SCALAR_TYPES:
                    raise FormatError(f"line {ln}: unknown property type {tokens[1]!r}")
                elements[-1][2].append((_SCALAR_TYPES[tokens[1]], tokens[2]))
            else:
                raise FormatError(f"line {ln}: malformed property declaration")
        elif kind == "end_header":
            raise AssertionError("end_header handled by caller")
        else:
            raise FormatError(f"line {ln}: unknown header keyword {kind!r}")
    if fmt is None:
        raise FormatError("header missing a 'format' line")
    return fmt, elements


def _column(rows: np.ndarray, props, name):
    for i, (_, pname) in enumerate(props):
        if pname == name:
            return rows[:, i]
    return None


def load_ply(path) -> PointCloud:
    with open(path, "rb") as fh:
        blob = fh.read()
    end = blob.find(b"end_header")
    if end < 0:
        raise FormatError("header missing 'end_header'")
    header_text = blob[:end].decode("ascii", errors="replace")
    header_lines = header_text.splitlines()
    body = blob[blob.index(b"\n", end) + 1:]

    fmt, elements = _parse_header(header_lines)
    vertex = next((e for e in elements if e[0] == "vertex"), None)
    if vertex is None:
        raise FormatError("no vertex element")
    _, count, props = vertex
    names = [p[1] for p in props]
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise FormatError(f"vertex element lacks property {axis!r}")
    if any(dt is None for dt, _ in props):
        raise FormatError("list properties on the vertex element are unsupported")

    if fmt == "ascii":
        rows = _read_ascii_vertices(body, elements, vertex)
    else:
        rows = _read_binary_vertices(body, elements, vertex)

    positions = np.stack([_column(rows, props, a) for a in ("x", "y", "z")], axis=1)
    colors = None
    rgb = [_column(rows, props, c) for c in ("red", "green", "blue")]
    if all(col is not None for col in rgb):
        scale = 255.0 if any(dt in ("u1", "i1") for dt, n in props
                             if n in ("red", "green", "blue")) else 1.0
        colors = np.stack(rgb, axis=1) / scale
    return PointCloud(positions=positions.astype(np.float64), colors=colors)


def _read_ascii_vertices(body: bytes, elements, vertex) -> np.ndarray:
    lines = body.decode("ascii", errors="replace").splitlines()
    pos = 0
    for element in elements:
        name, count, props = element
        if element is vertex:
            chunk = lines[pos:pos + count]
            if len(chunk) < count:
                raise FormatError(
                    f"vertex element truncated: {len(chunk)} of {count} rows")
            try:
                rows = np.array([[float(t) for t in line.split()[:len(props)]]
                                 for line in chunk])
            except ValueError as exc:
                raise FormatError(f"bad vertex row: {exc}") from None
            if rows.shape != (count, len(props)):
                raise FormatError("vertex row with too few values")
            return rows
        pos += count
    raise AssertionError


def _read_binary_vertices(body: bytes, elements, vertex) -> np.ndarray:
    offset = 0
    for element in elements:
        name, count, props = element
        if element is vertex:
            dtype = np.dtype([(f"f{i}", "<" + dt) for i, (dt, _) in enumerate(props)])
            need = dtype.itemsize * count
            if len(body) - offset < need:
                raise FormatError(
                    f"vertex element truncated: {len(body) - offset} of {need} bytes")
            rec = np.frombuffer(body, dtype=dtype, count=count, offset=offset)
            return np.stack([rec[f"f{i}"].astype(np.float64)
                             for i in range(len(props))], axis=1)
        if any(dt is None for dt, _ in props):
            raise FormatError(
                f"list properties in element {name!r} before vertex are unsupported")
        offset += count * sum(np.dtype(dt).itemsize for dt, _ in props)
    raise AssertionError


def write_ply(path, cloud: PointCloud) -> None:
    """Binary little-endian writer; colors (if any) stored as uchar."""
    n = cloud.positions.shape[0]
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}",
              "property float x", "property float y", "property float z"]
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if cloud.colors is not None:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
        fields += [("red", "<u1"), ("green", "<u1"), ("blue", "<u1")]
    header.append("end_header")

    rec = np.zeros(n, dtype=np.dtype(fields))
    rec["x"], rec["y"], rec["z"] = cloud.positions.T.astype(np.float32)
    if cloud.colors is not None:
        rgb = np.clip(np.round(cloud.colors * 255.0), 0, 255).astype(np.uint8)
        rec["red"], rec["green"], rec["blue"] = rgb.T
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(rec.tobytes())
