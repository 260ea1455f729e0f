import pytest

from panfuse.harness import SyntheticScene, synth_scene


@pytest.fixture(scope="session")
def fixture_scene() -> SyntheticScene:
    """The seed-7 scene used for frozen regression values: 64x64 MS, 256x256 PAN."""
    return synth_scene(seed=7, width=256, height=256, bands=4, ratio=4)


@pytest.fixture(scope="session")
def small_scene() -> SyntheticScene:
    """A fast scene for structural tests: 16x16 MS, 64x64 PAN."""
    return synth_scene(seed=3, width=64, height=64, bands=4, ratio=4)
