import numpy as np
import pytest

from endoneus.field import ArchitectureConfig, FieldModel, parameter_count
from endoneus.dataset import SceneDataset
from endoneus.scenegen import generate_dataset, preset

# Small enough for finite-difference checks over every parameter.
TINY = ArchitectureConfig(pos_freqs=2, dir_freqs=1, sdf_layers=2, sdf_width=12, radiance_layers=1,
                          radiance_width=12, feature_dim=4, init_fit_steps=0)

# Fast settings for training-loop tests.
SMALL = dict(sdf_layers=2, sdf_width=32, radiance_layers=1, radiance_width=32, feature_dim=8,
             init_fit_steps=30)


def tiny_model(seed=0, dtype=np.float64):
    return FieldModel.initialize(TINY, seed=seed, dtype=dtype)


def plane_model(z_star, c0=(0.2, 0.4, 0.6), s=200.0, dtype=np.float64):
    """Network weights realizing f(x) = z_star - x_z and a constant color c0.

    One softplus unit carries 10 + z_star - x_z, which stays far in the linear
    regime of softplus(beta=100) for |x_z| < 5, so f is exact to roundoff.
    """
    cfg = ArchitectureConfig(pos_freqs=1, dir_freqs=1, sdf_layers=1, sdf_width=2, radiance_layers=1,
                             radiance_width=2, feature_dim=1, init_fit_steps=0)
    m = FieldModel(cfg, np.zeros(parameter_count(cfg), dtype=dtype))
    b = m.blocks
    b["sdf.W0"][2, 0] = -1.0
    b["sdf.b0"][0] = 10.0 + z_star
    b["sdf.W1"][0, 0] = 1.0
    b["sdf.b1"][0] = -10.0
    c0 = np.asarray(c0, dtype=np.float64)
    b["rad.b1"][:] = np.log(c0 / (1 - c0))
    b["log_s"][...] = np.log(s)
    return m


@pytest.fixture(scope="session")
def sphere_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("sphere")
    generate_dataset(preset("sphere", frames=10, width=32, height=32), d, seed=3,
                     degradation=(2.0, 0.01), sparse_count=100)
    return d


@pytest.fixture(scope="session")
def sphere_data(sphere_dir):
    return SceneDataset.load(sphere_dir)


# -- acceptance report ----------------------------------------------------------

ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
