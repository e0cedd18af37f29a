"""Mesh export/import: ASCII OBJ with per-vertex colors, binary LE PLY.

OBJ uses the common "v x y z r g b" color extension. Output is fully
deterministic: fixed float formatting, no comments or timestamps.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import PersistenceError
from .geometry import TriMesh


def save_obj(mesh: TriMesh, path) -> None:
    lines = []
    if mesh.vertex_colors is not None:
        for (x, y, z), (r, g, b) in zip(mesh.vertices, mesh.vertex_colors):
            lines.append(f"v {x:.6f} {y:.6f} {z:.6f} {r:.6f} {g:.6f} {b:.6f}")
    else:
        for x, y, z in mesh.vertices:
            lines.append(f"v {x:.6f} {y:.6f} {z:.6f}")
    for a, b, c in mesh.faces:
        lines.append(f"f {a + 1} {b + 1} {c + 1}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def load_obj(path) -> TriMesh:
    verts, colors, faces = [], [], []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                vals = [float(v) for v in parts[1:]]
                verts.append(vals[:3])
                if len(vals) >= 6:
                    colors.append(vals[3:6])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:4]]
                faces.append(idx)
    if colors and len(colors) != len(verts):
        raise PersistenceError("OBJ mixes colored and uncolored vertices")
    return TriMesh(np.array(verts, dtype=np.float32).reshape(-1, 3),
                   np.array(faces, dtype=np.int64).reshape(-1, 3),
                   np.array(colors, dtype=np.float32) if colors else None)


def save_ply(mesh: TriMesh, path) -> None:
    n_v, n_f = len(mesh.vertices), len(mesh.faces)
    has_color = mesh.vertex_colors is not None
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {n_v}",
              "property float x", "property float y", "property float z"]
    if has_color:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header += [f"element face {n_f}",
               "property list uchar int vertex_indices", "end_header"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if has_color:
            rgb = np.clip(np.rint(mesh.vertex_colors * 255.0), 0, 255).astype(np.uint8)
            for (x, y, z), (r, g, b) in zip(mesh.vertices, rgb):
                fh.write(struct.pack("<fffBBB", x, y, z, r, g, b))
        else:
            for x, y, z in mesh.vertices:
                fh.write(struct.pack("<fff", x, y, z))
        for a, b, c in mesh.faces:
            fh.write(struct.pack("<Biii", 3, a, b, c))


def load_ply(path) -> TriMesh:
    with open(path, "rb") as fh:
        raw = fh.read()
    end = raw.find(b"end_header\n")
    if end < 0:
        raise PersistenceError("not a PLY file")
    header = raw[:end].decode("ascii").splitlines()
    if "format binary_little_endian 1.0" not in header:
        raise PersistenceError("only binary little-endian PLY is supported")
    n_v = n_f = 0
    has_color = False
    for line in header:
        if line.startswith("element vertex"):
            n_v = int(line.split()[-1])
        elif line.startswith("element face"):
            n_f = int(line.split()[-1])
        elif line.startswith("property uchar red"):
            has_color = True
    body = raw[end + len(b"end_header\n"):]
    verts = np.empty((n_v, 3), dtype=np.float32)
    colors = np.empty((n_v, 3), dtype=np.float32) if has_color else None
    stride = 15 if has_color else 12
    for i in range(n_v):
        off = i * stride
        verts[i] = struct.unpack_from("<fff", body, off)
        if has_color:
            r, g, b = struct.unpack_from("<BBB", body, off + 12)
            colors[i] = (r / 255.0, g / 255.0, b / 255.0)
    faces = np.empty((n_f, 3), dtype=np.int64)
    base = n_v * stride
    for i in range(n_f):
        cnt, a, b, c = struct.unpack_from("<Biii", body, base + i * 13)
        if cnt != 3:
            raise PersistenceError("non-triangular PLY face")
        faces[i] = (a, b, c)
    return TriMesh(verts, faces, colors)
