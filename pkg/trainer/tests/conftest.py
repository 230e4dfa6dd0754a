import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from _toymesh import ellipsoid_mesh, torus_mesh, write_obj

TOY_WIDTHS = (32, 64, 128, 128, 128)


@pytest.fixture(scope="session")
def mesh_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("meshes")
    write_obj(d / "torus.obj", *torus_mesh())
    write_obj(d / "ellipsoid.obj", *ellipsoid_mesh())
    return d


@pytest.fixture(scope="session")
def plain_samples(mesh_dir, tmp_path_factory):
    from hde_trainer.dataset import build_dataset

    work = tmp_path_factory.mktemp("work_plain")
    return build_dataset(mesh_dir, work, augment=False)


@pytest.fixture(scope="session")
def overfit_model(plain_samples):
    """Single-mesh 200-epoch training; shared by the smoke criteria."""
    from hde_trainer.train import TrainConfig, train

    torus_only = [s for s in plain_samples if s.name.startswith("torus")]
    cfg = TrainConfig(
        epochs=200, batch_size=4, lr=0.01, seed=0, widths=TOY_WIDTHS,
        oracle_every=50, val_fraction=0.0,
    )
    model, curves, graphs = train(torus_only, cfg)
    return model, curves, torus_only, cfg
