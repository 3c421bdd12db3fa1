import pytest

from radkit.rng import RngStream
from radkit.simulate import (
    SimConfig,
    default_geometry,
    default_grid,
    random_scene,
    synthesize_tensor,
)
from radkit.train import Frame, FrameDataset


@pytest.fixture(scope="session")
def grid():
    return default_grid()


@pytest.fixture(scope="session")
def geometry():
    return default_geometry()


def build_corpus(n: int, seed: int, grid, geometry,
                 sim: SimConfig | None = None,
                 min_scatterers: int = 1, max_scatterers: int = 3) -> FrameDataset:
    """In-memory synthetic corpus shared by trainer and acceptance tests."""
    sim = sim or SimConfig(noise_floor=0.05)
    root = RngStream(seed)
    frames = []
    for i in range(n):
        scene = random_scene(f"frame_{i:06d}", grid, root.child("scene", i),
                             min_scatterers=min_scatterers,
                             max_scatterers=max_scatterers)
        tensor = synthesize_tensor(scene, geometry, grid, sim,
                                   root.child("tensor", i))
        frames.append(Frame(scene=scene, tensor=tensor))
    return FrameDataset(frames)


@pytest.fixture(scope="session")
def small_corpus(grid, geometry):
    return build_corpus(48, seed=11, grid=grid, geometry=geometry)
