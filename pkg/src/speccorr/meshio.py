"""Readers and writers for OFF, OBJ and ascii PLY triangle meshes.

All writers emit floats with 9 significant digits, which makes a
save/load cycle idempotent, and emit per-vertex color channels when the
mesh carries a ``color`` attribute.
"""

import os

import numpy as np

from .mesh import MeshError, TriangleMesh

__all__ = ["load_mesh", "save_mesh"]

_FMT = "%.9g"


def _sniff_format(path):
    ext = os.path.splitext(path)[1].lower()
    if ext in (".off", ".obj", ".ply"):
        return ext[1:]
    with open(path, "r", errors="replace") as fh:
        head = fh.read(64).lstrip()
    if head.startswith(("OFF", "COFF")):
        return "off"
    if head.startswith("ply"):
        return "ply"
    return "obj"


def load_mesh(path, fmt=None):
    """Load a triangle mesh from OFF, OBJ, or ascii PLY.

    Parameters
    ----------
    path : str or Path
        File to read.
    fmt : {"off", "obj", "ply"}, optional
        Format override; sniffed from the extension/header otherwise.

    Returns
    -------
    TriangleMesh
        Validated mesh; color attributes preserved when present.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    fmt = (fmt or _sniff_format(path)).lower()
    if fmt == "off":
        return _load_off(path)
    if fmt == "obj":
        return _load_obj(path)
    if fmt == "ply":
        return _load_ply(path)
    raise ValueError(f"unsupported mesh format {fmt!r}")


def save_mesh(mesh, path, fmt=None):
    """Write a mesh in OFF, OBJ, or ascii PLY format."""
    fmt = (fmt or os.path.splitext(path)[1].lstrip(".") or "off").lower()
    if fmt == "off":
        _save_off(mesh, path)
    elif fmt == "obj":
        _save_obj(mesh, path)
    elif fmt == "ply":
        _save_ply(mesh, path)
    else:
        raise ValueError(f"unsupported mesh format {fmt!r}")


def _tokens(path):
    with open(path, "r", errors="replace") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                yield line.split()


def _load_off(path):
    lines = _tokens(path)
    try:
        first = next(lines)
    except StopIteration:
        raise MeshError(f"empty OFF file: {path}")
    has_color = False
    if first[0].upper() in ("OFF", "COFF"):
        has_color = first[0].upper() == "COFF"
        counts = first[1:] if len(first) > 1 else next(lines)
    else:
        counts = first
    try:
        nv, nf = int(counts[0]), int(counts[1])
    except (ValueError, IndexError):
        raise MeshError(f"malformed OFF header in {path}")

    vertices = np.empty((nv, 3))
    colors = np.empty((nv, 3)) if has_color else None
    for i in range(nv):
        try:
            row = next(lines)
            vertices[i] = [float(x) for x in row[:3]]
            if has_color:
                colors[i] = [float(x) for x in row[3:6]]
            elif len(row) >= 6:
                if colors is None:
                    colors = np.zeros((nv, 3))
                colors[i] = [float(x) for x in row[3:6]]
        except (StopIteration, ValueError, IndexError):
            raise MeshError("malformed OFF vertex line", element=i)

    faces = np.empty((nf, 3), dtype=np.int64)
    for i in range(nf):
        try:
            row = next(lines)
            cnt = int(row[0])
            if cnt != 3:
                raise MeshError(f"OFF face with {cnt} vertices; only "
                                "triangles are supported", element=i)
            faces[i] = [int(x) for x in row[1:4]]
        except (StopIteration, ValueError, IndexError):
            raise MeshError("malformed OFF face line", element=i)

    attrs = {"color": colors} if colors is not None else None
    return TriangleMesh(vertices, faces, attributes=attrs)


def _save_off(mesh, path):
    color = mesh.attributes.get("color")
    with open(path, "w") as fh:
        fh.write("COFF\n" if color is not None else "OFF\n")
        fh.write(f"{mesh.n_vertices} {mesh.n_faces} 0\n")
        for i, v in enumerate(mesh.vertices):
            line = " ".join(_FMT % x for x in v)
            if color is not None:
                line += " " + " ".join(_FMT % x for x in np.atleast_1d(color[i]))
            fh.write(line + "\n")
        for f in mesh.faces:
            fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")


def _load_obj(path):
    vertices, colors, faces = [], [], []
    for row in _tokens(path):
        if row[0] == "v":
            try:
                vertices.append([float(x) for x in row[1:4]])
                if len(row) >= 7:
                    colors.append([float(x) for x in row[4:7]])
            except (ValueError, IndexError):
                raise MeshError("malformed OBJ vertex line",
                                element=len(vertices))
        elif row[0] == "f":
            try:
                idx = [int(tok.split("/")[0]) for tok in row[1:]]
            except ValueError:
                raise MeshError("malformed OBJ face line", element=len(faces))
            if len(idx) != 3:
                raise MeshError("OBJ face is not a triangle",
                                element=len(faces))
            # OBJ indices are 1-based; negative indices count from the end
            idx = [i - 1 if i > 0 else len(vertices) + i for i in idx]
            faces.append(idx)
    if not vertices:
        raise MeshError(f"no vertices in OBJ file {path}")
    attrs = None
    if colors:
        if len(colors) != len(vertices):
            raise MeshError("OBJ color channel incomplete")
        attrs = {"color": np.asarray(colors)}
    return TriangleMesh(np.asarray(vertices), np.asarray(faces, dtype=np.int64),
                        attributes=attrs)


def _save_obj(mesh, path):
    color = mesh.attributes.get("color")
    with open(path, "w") as fh:
        for i, v in enumerate(mesh.vertices):
            line = "v " + " ".join(_FMT % x for x in v)
            if color is not None:
                line += " " + " ".join(_FMT % x for x in np.atleast_1d(color[i]))
            fh.write(line + "\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def _load_ply(path):
    with open(path, "r", errors="replace") as fh:
        if fh.readline().strip() != "ply":
            raise MeshError(f"not a PLY file: {path}")
        fmt = fh.readline().split()
        if len(fmt) < 2 or fmt[1] != "ascii":
            raise MeshError("only ascii PLY is supported")
        counts = {}
        props = {}
        current = None
        while True:
            line = fh.readline()
            if not line:
                raise MeshError("PLY header without end_header")
            row = line.split()
            if not row or row[0] == "comment":
                continue
            if row[0] == "end_header":
                break
            if row[0] == "element":
                current = row[1]
                counts[current] = int(row[2])
                props[current] = []
            elif row[0] == "property":
                if row[1] == "list":
                    props[current].append((row[-1], "list"))
                else:
                    props[current].append((row[-1], row[1]))

        nv = counts.get("vertex", 0)
        nf = counts.get("face", 0)
        vprops = [name for name, _ in props.get("vertex", [])]
        vertices = np.empty((nv, 3))
        extras = {name: np.empty(nv) for name in vprops
                  if name not in ("x", "y", "z")}
        for i in range(nv):
            row = fh.readline().split()
            if len(row) < len(vprops):
                raise MeshError("malformed PLY vertex line", element=i)
            rec = dict(zip(vprops, (float(x) for x in row)))
            try:
                vertices[i] = (rec["x"], rec["y"], rec["z"])
            except KeyError:
                raise MeshError("PLY vertex element lacks x/y/z")
            for name in extras:
                extras[name][i] = rec[name]

        faces = np.empty((nf, 3), dtype=np.int64)
        for i in range(nf):
            row = fh.readline().split()
            if not row:
                raise MeshError("missing PLY face line", element=i)
            cnt = int(row[0])
            if cnt != 3:
                raise MeshError("PLY face is not a triangle", element=i)
            faces[i] = [int(x) for x in row[1:4]]

    attrs = {}
    if {"red", "green", "blue"} <= set(extras):
        attrs["color"] = np.column_stack(
            [extras.pop("red"), extras.pop("green"), extras.pop("blue")])
        # byte-valued colors are kept in their native 0..255 range
    for name, values in extras.items():
        attrs[name] = values
    return TriangleMesh(vertices, faces, attributes=attrs or None)


def _save_ply(mesh, path):
    color = mesh.attributes.get("color")
    scalars = {name: v for name, v in mesh.attributes.items()
               if name != "color" and np.ndim(v) == 1}
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {mesh.n_vertices}\n")
        fh.write("property double x\nproperty double y\nproperty double z\n")
        if color is not None:
            for ch in ("red", "green", "blue"):
                fh.write(f"property double {ch}\n")
        for name in scalars:
            fh.write(f"property double {name}\n")
        fh.write(f"element face {mesh.n_faces}\n")
        fh.write("property list uchar int vertex_indices\n")
        fh.write("end_header\n")
        for i, v in enumerate(mesh.vertices):
            row = [_FMT % x for x in v]
            if color is not None:
                row += [_FMT % x for x in np.atleast_1d(color[i])[:3]]
            for name in scalars:
                row.append(_FMT % scalars[name][i])
            fh.write(" ".join(row) + "\n")
        for f in mesh.faces:
            fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")
