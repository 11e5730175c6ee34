import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from grantfree.model import crandn, draw_activity, draw_channels, draw_pilots, synthesize_received  # noqa: E402


class Instance:
    """A small random problem: pilots, channels, truth and a noisy received block."""

    def __init__(self, seed, K, M, T, lam=0.3, sigma2=0.2, epsilon_a=0.5):
        rng = np.random.default_rng(seed)
        self.K, self.M, self.T = K, M, T
        self.pilots = draw_pilots(rng, K, T)
        self.channels = draw_channels(rng, K, M, lam, 1.0)
        self.truth = draw_activity(rng, K, epsilon_a)
        self.received = synthesize_received(self.channels, self.pilots, self.truth.gamma, sigma2, rng)
        self.sigma2 = sigma2
        self.rng = rng

    @property
    def g(self):
        return self.channels.g

    @property
    def lam(self):
        return self.channels.lam

    @property
    def y(self):
        return self.received.y

    def random_gamma(self, scale=0.7):
        return crandn(self.rng, self.K, scale)


@pytest.fixture
def make_instance():
    return Instance


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(verdicts):
        terminalreporter.write_line(verdicts[n])
