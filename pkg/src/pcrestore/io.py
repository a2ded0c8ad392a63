"""Point cloud and mesh file IO.

XYZ: one point per line, three space-separated decimal floats, written with
repr so float64 values round-trip exactly. PLY: ascii or binary little
endian, element vertex with float x, y, z properties; all other elements
and properties are skipped on read, and coordinates are stored as float32
per the format. OBJ: triangle meshes, v and f lines only.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import InvalidPointCloud
from .geometry import TriangleMesh
from .validation import check_points

_PLY_SCALAR_SIZES = {
    "char": 1, "int8": 1, "uchar": 1, "uint8": 1,
    "short": 2, "int16": 2, "ushort": 2, "uint16": 2,
    "int": 4, "int32": 4, "uint": 4, "uint32": 4,
    "float": 4, "float32": 4, "double": 8, "float64": 8,
}
_PLY_STRUCT = {
    "char": "b", "int8": "b", "uchar": "B", "uint8": "B",
    "short": "h", "int16": "h", "ushort": "H", "uint16": "H",
    "int": "i", "int32": "i", "uint": "I", "uint32": "I",
    "float": "f", "float32": "f", "double": "d", "float64": "d",
}


def read_xyz(path) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise InvalidPointCloud(
                    f"{path}:{ln}: expected three values, got {len(parts)}"
                )
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise InvalidPointCloud(f"{path}:{ln}: {exc}") from exc
    return check_points(np.asarray(rows, dtype=np.float64).reshape(-1, 3), name=str(path))


def write_xyz(path, points) -> None:
    pts = check_points(points)
    with open(path, "w", encoding="utf-8") as fh:
        # tolist() yields Python floats, whose repr round-trips exactly
        for x, y, z in pts.tolist():
            fh.write(f"{x!r} {y!r} {z!r}\n")


class _PlyElement:
    def __init__(self, name: str, count: int):
        self.name = name
        self.count = count
        self.properties: list[tuple[str, str, str | None]] = []  # (name, type, list count type)


def _parse_ply_header(fh) -> tuple[str, list[_PlyElement]]:
    if fh.readline().strip() != b"ply":
        raise InvalidPointCloud("not a PLY file (missing 'ply' line)")
    fmt = None
    elements: list[_PlyElement] = []
    while True:
        line = fh.readline()
        if not line:
            raise InvalidPointCloud("PLY header ended without end_header")
        tokens = line.decode("ascii", "replace").split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            if len(tokens) < 2 or tokens[1] not in ("ascii", "binary_little_endian"):
                raise InvalidPointCloud(f"unsupported PLY format line: {line!r}")
            fmt = tokens[1]
        elif tokens[0] == "element":
            elements.append(_PlyElement(tokens[1], int(tokens[2])))
        elif tokens[0] == "property":
            if not elements:
                raise InvalidPointCloud("PLY property before any element")
            if tokens[1] == "list":
                elements[-1].properties.append((tokens[4], tokens[3], tokens[2]))
            else:
                elements[-1].properties.append((tokens[2], tokens[1], None))
        elif tokens[0] == "end_header":
            break
    if fmt is None:
        raise InvalidPointCloud("PLY header has no format line")
    return fmt, elements


def _read_ply_ascii(fh, elements) -> np.ndarray:
    verts = None
    for el in elements:
        rows = []
        if el.name == "vertex":
            names = {n for n, _, _ in el.properties}
            for need in ("x", "y", "z"):
                if need not in names:
                    raise InvalidPointCloud(f"PLY vertex element lacks property {need!r}")
        for _ in range(el.count):
            tokens = fh.readline().split()
            if el.name == "vertex":
                values = {}
                pos = 0
                for name, typ, list_typ in el.properties:
                    if list_typ is not None:
                        n = int(tokens[pos])
                        pos += 1 + n
                        continue
                    values[name] = float(tokens[pos])
                    pos += 1
                rows.append([values["x"], values["y"], values["z"]])
        if el.name == "vertex":
            verts = np.asarray(rows, dtype=np.float64)
    return verts


def _read_ply_binary(fh, elements) -> np.ndarray:
    verts = None
    for el in elements:
        fixed = all(lt is None for _, _, lt in el.properties)
        if el.name == "vertex":
            if not fixed:
                raise InvalidPointCloud("list properties on vertex element unsupported")
            fmt = "<" + "".join(_PLY_STRUCT[t] for _, t, _ in el.properties)
            size = struct.calcsize(fmt)
            raw = fh.read(size * el.count)
            if len(raw) != size * el.count:
                raise InvalidPointCloud("PLY vertex data truncated")
            names = [n for n, _, _ in el.properties]
            cols = {n: i for i, n in enumerate(names)}
            for need in ("x", "y", "z"):
                if need not in cols:
                    raise InvalidPointCloud(f"PLY vertex element lacks property {need!r}")
            rows = list(struct.iter_unpack(fmt, raw))
            arr = np.asarray(rows, dtype=np.float64)
            verts = arr[:, [cols["x"], cols["y"], cols["z"]]]
        elif fixed:
            size = sum(_PLY_SCALAR_SIZES[t] for _, t, _ in el.properties)
            fh.seek(size * el.count, 1)
        else:
            for _ in range(el.count):
                for _, typ, list_typ in el.properties:
                    if list_typ is None:
                        fh.seek(_PLY_SCALAR_SIZES[typ], 1)
                    else:
                        raw = fh.read(_PLY_SCALAR_SIZES[list_typ])
                        n = struct.unpack("<" + _PLY_STRUCT[list_typ], raw)[0]
                        fh.seek(_PLY_SCALAR_SIZES[typ] * n, 1)
    return verts


def read_ply(path) -> np.ndarray:
    with open(path, "rb") as fh:
        fmt, elements = _parse_ply_header(fh)
        if fmt == "ascii":
            import io as _io

            text = _io.TextIOWrapper(fh, encoding="ascii")
            verts = _read_ply_ascii(text, elements)
        else:
            verts = _read_ply_binary(fh, elements)
    if verts is None:
        raise InvalidPointCloud(f"{path}: PLY file has no vertex element")
    return check_points(verts, name=str(path))


def write_ply(path, points, binary: bool = True) -> None:
    pts = check_points(points).astype(np.float32)
    header = [
        "ply",
        "format binary_little_endian 1.0" if binary else "format ascii 1.0",
        f"element vertex {pts.shape[0]}",
        "property float x",
        "property float y",
        "property float z",
        "end_header",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(pts.astype("<f4").tobytes())
        else:
            body = "\n".join(f"{x:.9g} {y:.9g} {z:.9g}" for x, y, z in pts)
            fh.write((body + "\n").encode("ascii"))


def write_obj(path, mesh: TriangleMesh) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for x, y, z in mesh.vertices.tolist():
            fh.write(f"v {x!r} {y!r} {z!r}\n")
        for a, b, c in (mesh.faces + 1).tolist():  # OBJ indices are 1-based
            fh.write(f"f {a} {b} {c}\n")


def read_points(path, fmt: str | None = None) -> np.ndarray:
    """Load a cloud, picking the reader from `fmt` or the file extension."""
    fmt = fmt or _ext_format(path)
    if fmt == "xyz":
        return read_xyz(path)
    if fmt in ("ply", "ply-ascii"):
        return read_ply(path)
    raise ValueError(f"unsupported point cloud format {fmt!r}")


def write_points(path, points, fmt: str | None = None) -> None:
    fmt = fmt or _ext_format(path)
    if fmt == "xyz":
        write_xyz(path, points)
    elif fmt == "ply":
        write_ply(path, points, binary=True)
    elif fmt == "ply-ascii":
        write_ply(path, points, binary=False)
    else:
        raise ValueError(f"unsupported point cloud format {fmt!r}")


def _ext_format(path) -> str:
    name = str(path).lower()
    if name.endswith(".xyz"):
        return "xyz"
    if name.endswith(".ply"):
        return "ply"
    raise ValueError(f"cannot infer format from {path!r}")
