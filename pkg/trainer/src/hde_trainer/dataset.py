"""Training samples: mesh + input features + ground-truth embedding.

Ground truth comes from the meshing toolkit's deterministic embedder
through its CLI; augmentation applies quarter-turn rotations (both signs
about each axis) and the three axis-plane mirrors, re-running the embedder
per variant because discrete metric estimation is not exactly equivariant.
Variant count with augmentation: 1 original + 6 rotations + 3 mirrors = 10.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .meshdata import (
    TriMesh,
    ground_truth_embedding,
    load_hde,
    load_obj,
    normalize_unit_box,
    save_obj,
    vertex_normals,
)

log = logging.getLogger("hde_trainer.dataset")


def _rot(axis, sign):
    R = np.zeros((3, 3))
    a, b = [i for i in range(3) if i != axis]
    R[axis, axis] = 1.0
    R[a, b] = -sign
    R[b, a] = sign
    return R


def augmentation_transforms(augment: bool):
    """Orthogonal maps applied to vertex coordinates; 10 with augmentation."""
    out = [("orig", np.eye(3))]
    if not augment:
        return out
    for axis in range(3):
        for sign in (1.0, -1.0):
            out.append((f"rot{'xyz'[axis]}{'+' if sign > 0 else '-'}", _rot(axis, sign)))
    for axis, name in ((2, "xy"), (1, "xz"), (0, "yz")):
        M = np.eye(3)
        M[axis, axis] = -1.0
        out.append((f"mirror{name}", M))
    return out


@dataclass
class TrainingSample:
    name: str
    vertices: np.ndarray  # (V, 3) normalized
    faces: np.ndarray  # (F, 3)
    features: np.ndarray  # (V, 6) coords + normals
    truth: np.ndarray  # (V, 8) ground-truth embedding
    tag: str  # augmentation tag


def _orient_fix(mesh: TriMesh, M: np.ndarray) -> TriMesh:
    v = mesh.vertices @ M.T
    f = mesh.faces
    if np.linalg.det(M) < 0:  # mirror flips orientation; rewind the faces
        f = f[:, ::-1].copy()
    return TriMesh(v, f)


def build_dataset(mesh_dir, work_dir, augment: bool = False, metric_args=()):
    """TrainingSamples for every OBJ in mesh_dir (times variants)."""
    mesh_dir = Path(mesh_dir)
    work_dir = Path(work_dir)
    samples = []
    paths = sorted(mesh_dir.glob("*.obj"))
    if not paths:
        raise FileNotFoundError(f"no OBJ meshes in {mesh_dir}")
    for path in paths:
        base = normalize_unit_box(load_obj(path))
        for tag, M in augmentation_transforms(augment):
            variant = _orient_fix(base, M)
            name = f"{path.stem}_{tag}"
            vdir = work_dir / name
            vdir.mkdir(parents=True, exist_ok=True)
            obj_path = vdir / f"{name}.obj"
            save_obj(variant, obj_path)
            try:
                hde = ground_truth_embedding(obj_path, vdir, metric_args)
                coords, faces, _ = load_hde(hde)
            except (RuntimeError, ValueError) as exc:
                log.warning("skipping %s: %s", name, exc)
                continue
            normals = vertex_normals(variant)
            samples.append(
                TrainingSample(
                    name=name,
                    vertices=variant.vertices,
                    faces=variant.faces,
                    features=np.concatenate([variant.vertices, normals], axis=1),
                    truth=coords,
                    tag=tag,
                )
            )
    return samples
