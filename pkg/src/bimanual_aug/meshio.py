"""Minimal PLY (ASCII / binary) and OBJ readers and writers for meshes and point clouds."""

from __future__ import annotations

from pathlib import Path

import numpy as np

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _parse_header(fh):
    if fh.readline().strip() != b"ply":
        raise ValueError("not a PLY file")
    fmt = None
    elements = []
    while True:
        line = fh.readline()
        if not line:
            raise ValueError("PLY header not terminated")
        parts = line.decode("ascii").split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append({"name": parts[1], "count": int(parts[2]), "props": []})
        elif parts[0] == "property":
            if parts[1] == "list":
                elements[-1]["props"].append((parts[4], "list", parts[2], parts[3]))
            else:
                elements[-1]["props"].append((parts[2], parts[1]))
        elif parts[0] == "end_header":
            break
    if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
        raise ValueError(f"unsupported PLY format {fmt!r}")
    return fmt, elements


def read_ply(path):
    """Return a dict of element name -> {property: array}; face lists come back as
    an (M, 3) ``triangles`` array after fan triangulation."""
    with open(path, "rb") as fh:
        fmt, elements = _parse_header(fh)
        body = fh.read()
    out = {}
    if fmt == "ascii":
        tokens = body.split()
        pos = 0
        for el in elements:
            data = {p[0]: [] for p in el["props"]}
            for _ in range(el["count"]):
                for p in el["props"]:
                    if p[1] == "list":
                        n = int(tokens[pos]); pos += 1
                        data[p[0]].append([int(t) for t in tokens[pos:pos + n]]); pos += n
                    else:
                        data[p[0]].append(float(tokens[pos])); pos += 1
            out[el["name"]] = data
    else:
        end = "<" if fmt == "binary_little_endian" else ">"
        pos = 0
        for el in elements:
            if all(p[1] != "list" for p in el["props"]):
                dt = np.dtype([(p[0], end + _PLY_TYPES[p[1]]) for p in el["props"]])
                arr = np.frombuffer(body, dtype=dt, count=el["count"], offset=pos)
                pos += dt.itemsize * el["count"]
                out[el["name"]] = {p[0]: arr[p[0]].astype(np.float64) for p in el["props"]}
                continue
            data = {p[0]: [] for p in el["props"]}
            for _ in range(el["count"]):
                for p in el["props"]:
                    if p[1] == "list":
                        cdt = np.dtype(end + _PLY_TYPES[p[2]])
                        n = int(np.frombuffer(body, cdt, 1, pos)[0]); pos += cdt.itemsize
                        idt = np.dtype(end + _PLY_TYPES[p[3]])
                        data[p[0]].append(np.frombuffer(body, idt, n, pos).astype(np.int64).tolist())
                        pos += idt.itemsize * n
                    else:
                        vdt = np.dtype(end + _PLY_TYPES[p[1]])
                        data[p[0]].append(float(np.frombuffer(body, vdt, 1, pos)[0])); pos += vdt.itemsize
            out[el["name"]] = data
    return out


def _fan(polys):
    tris = []
    for poly in polys:
        for k in range(1, len(poly) - 1):
            tris.append((poly[0], poly[k], poly[k + 1]))
    return np.array(tris, dtype=np.int64).reshape(-1, 3)


def load_ply_mesh(path):
    """(vertices (N, 3), triangles (M, 3)) from a PLY mesh."""
    d = read_ply(path)
    v = d["vertex"]
    verts = np.stack([np.asarray(v[k], dtype=np.float64) for k in ("x", "y", "z")], axis=1)
    face = d.get("face", {})
    key = "vertex_indices" if "vertex_indices" in face else "vertex_index"
    tris = _fan(face.get(key, []))
    return verts, tris


def load_obj_mesh(path):
    verts, polys = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                polys.append(idx)
    return np.array(verts, dtype=np.float64).reshape(-1, 3), _fan(polys)


def load_mesh(path):
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".ply":
        return load_ply_mesh(path)
    if ext == ".obj":
        return load_obj_mesh(path)
    raise ValueError(f"unsupported mesh format {ext!r}")


def write_ply(path, points, normals=None, triangles=None, binary=True):
    """Write points (+ optional normals, triangles) as PLY."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cols = [points]
    props = ["x", "y", "z"]
    if normals is not None:
        cols.append(np.asarray(normals, dtype=np.float64).reshape(-1, 3))
        props += ["nx", "ny", "nz"]
    tris = None if triangles is None else np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
              f"element vertex {len(points)}"]
    header += [f"property double {p}" for p in props]
    if tris is not None:
        header += [f"element face {len(tris)}", "property list uchar int vertex_indices"]
    header.append("end_header")
    data = np.concatenate(cols, axis=1)
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(data.astype("<f8").tobytes())
            if tris is not None:
                rec = np.zeros(len(tris), dtype=[("n", "u1"), ("i", "<i4", 3)])
                rec["n"] = 3
                rec["i"] = tris
                fh.write(rec.tobytes())
        else:
            for row in data:
                fh.write((" ".join(repr(float(x)) for x in row) + "\n").encode("ascii"))
            if tris is not None:
                for t in tris:
                    fh.write(f"3 {t[0]} {t[1]} {t[2]}\n".encode("ascii"))


def read_point_cloud(path):
    """(points (N, 3), normals (N, 3) or None) from a PLY file."""
    v = read_ply(path)["vertex"]
    pts = np.stack([np.asarray(v[k], dtype=np.float64) for k in ("x", "y", "z")], axis=1)
    normals = None
    if all(k in v for k in ("nx", "ny", "nz")):
        normals = np.stack([np.asarray(v[k], dtype=np.float64) for k in ("nx", "ny", "nz")], axis=1)
    return pts, normals


def write_obj(path, vertices, triangles):
    with open(path, "w") as fh:
        for v in np.asarray(vertices, dtype=np.float64).tolist():
            fh.write(f"v {v[0]!r} {v[1]!r} {v[2]!r}\n")
        for t in np.asarray(triangles, dtype=np.int64):
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")
