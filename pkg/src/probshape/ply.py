"""Binary little-endian PLY read/write for triangle meshes."""

from __future__ import annotations

import numpy as np

from .errors import UsageError


def save_ply(path, vertices, faces, normals=None):
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(vertices)}"]
    header += ["property float x", "property float y", "property float z"]
    if normals is not None:
        header += ["property float nx", "property float ny", "property float nz"]
    header += [
        f"element face {len(faces)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if normals is not None:
            vdata = np.hstack([vertices, np.asarray(normals)]).astype("<f4")
        else:
            vdata = vertices.astype("<f4")
        f.write(vdata.tobytes())
        fdata = np.empty((len(faces), 13), dtype=np.uint8)
        fdata[:, 0] = 3
        fdata[:, 1:] = faces.astype("<i4").view(np.uint8).reshape(len(faces), 12)
        f.write(fdata.tobytes())


def load_ply(path):
    with open(path, "rb") as f:
        line = f.readline().strip()
        if line != b"ply":
            raise UsageError(f"{path} is not a PLY file")
        n_vert = n_face = 0
        props = []
        element = None
        while True:
            line = f.readline().strip().decode("ascii")
            if line == "end_header":
                break
            parts = line.split()
            if parts[0] == "format" and parts[1] != "binary_little_endian":
                raise UsageError("only binary little-endian PLY is supported")
            if parts[0] == "element":
                element = parts[1]
                if element == "vertex":
                    n_vert = int(parts[2])
                elif element == "face":
                    n_face = int(parts[2])
            elif parts[0] == "property" and element == "vertex":
                props.append(parts[-1])
        vdata = np.frombuffer(f.read(4 * len(props) * n_vert), dtype="<f4")
        vdata = vdata.astype(np.float64).reshape(n_vert, len(props))
        vertices = vdata[:, :3]
        normals = vdata[:, 3:6] if len(props) >= 6 else None
        faces = np.empty((n_face, 3), dtype=np.int64)
        raw = f.read(13 * n_face)
        arr = np.frombuffer(raw, dtype=np.uint8).reshape(n_face, 13)
        if not np.all(arr[:, 0] == 3):
            raise UsageError("only triangle faces are supported")
        faces = arr[:, 1:].copy().view("<i4").reshape(n_face, 3).astype(np.int64)
    return vertices, faces, normals
