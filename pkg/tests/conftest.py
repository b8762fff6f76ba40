import numpy as np
import pytest

from dualcem.assembly import assemble_operators
from dualcem.grid import build_hierarchy, partition_of_unity
from dualcem.media import ChannelSpec, Channel, constant_media, generate_channelized
from dualcem.spectral import build_auxiliary_space


def small_channel_spec():
    """Two crossing channels per continuum on the unit square."""
    c1 = (Channel(((0.0, 1.0, 0.40, 0.45),)), Channel(((0.1, 0.9, 0.70, 0.75),)))
    c2 = (Channel(((0.30, 0.35, 0.0, 1.0),)), Channel(((0.60, 0.65, 0.2, 0.8),)))
    return ChannelSpec((c1, c2), kappa_background=(1.0, 1.0), capacity_background=(1.0, 1.0))


class Setup:
    def __init__(self, n_coarse, refinement, contrast=None, L=3, sigma=1.0):
        self.hier = build_hierarchy(n_coarse=n_coarse, refinement_factor=refinement)
        if contrast is None:
            self.media = constant_media(self.hier, sigma=sigma)
        else:
            self.media = generate_channelized(self.hier, small_channel_spec(), contrast)
            self.media = self.media.with_constants(sigma=sigma)
        self.pou = partition_of_unity(self.hier)
        self.ops = assemble_operators(self.hier, self.media, self.pou)
        self.aux = build_auxiliary_space(self.hier, self.media, self.pou, L)


@pytest.fixture(scope="session")
def desk():
    """4x4 coarse / 16x16 fine, channelized media at contrast 1e3, L=3."""
    return Setup(4, 4, contrast=1e3)


@pytest.fixture(scope="session")
def homog():
    """4x4 coarse / 16x16 fine, homogeneous media, L=2."""
    return Setup(4, 4, L=2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
