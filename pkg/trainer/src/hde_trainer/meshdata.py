"""Standalone mesh/file handling for the trainer.

The trainer talks to the meshing toolkit only through files (OBJ in,
.hde out) and its CLI, so it carries its own small OBJ parser, normal
computation and .hde reader/writer mirroring the published format:

    HDE1 <V> <F> <mbar> <tag>
    <mbar floats per vertex line>
    <i j k per face line, 0-based>
"""

from __future__ import annotations

import subprocess
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

M_BAR = 8


@dataclass
class TriMesh:
    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3)

    @property
    def n_vertices(self):
        return len(self.vertices)


def load_obj(path) -> TriMesh:
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:]]
                for i in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[i], idx[i + 1]))
    return TriMesh(np.array(verts), np.array(faces, dtype=np.int64))


def save_obj(mesh: TriMesh, path) -> None:
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def normalize_unit_box(mesh: TriMesh) -> TriMesh:
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    extent = (hi - lo).max()
    if extent <= 0:
        raise ValueError("degenerate mesh extent")
    v = (mesh.vertices - (lo + hi) / 2.0) * (2.0 / extent)
    return TriMesh(v, mesh.faces)


def vertex_normals(mesh: TriMesh) -> np.ndarray:
    n = np.zeros((mesh.n_vertices, 3))
    v, f = mesh.vertices, mesh.faces
    fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    for k in range(3):
        np.add.at(n, f[:, k], fn)
    norm = np.linalg.norm(n, axis=1)
    good = norm > 1e-300
    n[good] /= norm[good, None]
    return n


def load_hde(path):
    """Returns (coords (V, 8), faces (F, 3), tag)."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 5 or header[0] != "HDE1":
            raise ValueError(f"{path}: not an HDE1 file")
        nv, nf, mbar, tag = int(header[1]), int(header[2]), int(header[3]), header[4]
        if mbar != M_BAR:
            raise ValueError(f"{path}: unexpected dimension {mbar}")
        coords = np.array(
            [[float(x) for x in fh.readline().split()] for _ in range(nv)]
        )
        faces = np.array(
            [[int(x) for x in fh.readline().split()] for _ in range(nf)], dtype=np.int64
        ).reshape(nf, 3)
    return coords, faces, tag


def save_hde(coords, faces, path, tag="neural") -> None:
    coords = np.asarray(coords, dtype=np.float64)
    with open(path, "w") as fh:
        fh.write(f"HDE1 {len(coords)} {len(faces)} {M_BAR} {tag}\n")
        for row in coords:
            fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")
        for a, b, c in faces:
            fh.write(f"{a} {b} {c}\n")


# -- primary-toolkit CLI bridge ---------------------------------------------------


def forge_command():
    """Invocation vector for the meshing toolkit CLI."""
    from shutil import which

    exe = which("aniso-forge")
    if exe:
        return [exe]
    return [sys.executable, "-m", "anisoforge.cli"]


def run_forge(args, **kwargs):
    cmd = forge_command() + list(args)
    return subprocess.run(cmd, capture_output=True, text=True, **kwargs)


def ground_truth_embedding(obj_path, workdir, metric_args=()) -> Path:
    """Deterministic embedding of an already-normalized OBJ via the CLI."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    proc = run_forge(
        ["embed", "--input", str(obj_path), "--output-dir", str(workdir),
         "--no-normalize", *metric_args]
    )
    if proc.returncode != 0:
        raise RuntimeError(f"embedding failed for {obj_path}:\n{proc.stderr}")
    return workdir / (Path(obj_path).stem + ".hde")
