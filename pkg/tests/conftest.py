import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from moboseq.seqspace import LiabilityRules, MutationSpace

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_space():
    """Six editable positions, three letters each, glycosylation rule active."""
    return MutationSpace(
        parental="QVQLVESGGGLVQ",
        allowed={1: "VIN", 3: "LST", 5: "EDN", 7: "GSA", 9: "GNT", 11: "VAS"},
        max_mutations=3,
    )


@pytest.fixture
def c_space():
    """Every editable position allows C; all-C is the unique maximizer of the C count."""
    return MutationSpace(
        parental="AAAAAAAAAA",
        allowed={0: "ACD", 2: "ACE", 4: "ACF", 5: "ACG", 7: "ACH", 9: "ACK"},
        max_mutations=6,
        liabilities=LiabilityRules.none(),
    )

