import numpy as np
import pytest
from hypothesis import HealthCheck, settings

import flowsteer as fs
from flowsteer.nets import ToyVelocityNet, TrainConfig, train

settings.register_profile(
    "ci", deadline=None, derandomize=True, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("ci")

# Grid for trained-model experiments. The network's two 128-wide hidden
# layers bound the output to a 128-dimensional subspace, so the state must
# stay comfortably below that for the regression to be faithful.
NET_SHAPE = (1, 8, 8)
TRAIN_SUITE_SEED = 101
HELDOUT_SUITE_SEED = 202
# 150k iterations takes a few CPU minutes once per session; shorter runs
# leave enough regression noise to blur the strength-trend monotonicity.
TRAIN_CONFIG = TrainConfig(learning_rate=0.01, batch_size=64, iterations=150000, seed=0)


@pytest.fixture(scope="session")
def train_suite():
    return fs.make_task_suite(TRAIN_SUITE_SEED, 60, NET_SHAPE)


@pytest.fixture(scope="session")
def heldout_suite():
    return fs.make_task_suite(HELDOUT_SUITE_SEED, 30, NET_SHAPE)


@pytest.fixture(scope="session")
def heldout_edits(heldout_suite):
    return [t for t in heldout_suite if t.instruction != 0][:20]


@pytest.fixture(scope="session")
def trained_net(train_suite):
    net = ToyVelocityNet(NET_SHAPE, seed=TRAIN_CONFIG.seed)
    net, curve = train(net, train_suite, TRAIN_CONFIG)
    net.loss_curve = curve
    return net


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
