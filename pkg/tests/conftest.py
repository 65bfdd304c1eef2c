import numpy as np
import pytest

from fedsim.data import DomainDataset, DomainSpec, generate_domain
from fedsim.model import ArchSpec, MlpModel, init_params


def finite_difference(loss_fn, params, h=1e-6):
    """Central differences of a scalar function of the parameter vector."""
    out = np.empty_like(params)
    for i in range(params.size):
        p = params.copy()
        p[i] += h
        up = loss_fn(p)
        p[i] = params[i] - h
        down = loss_fn(p)
        out[i] = (up - down) / (2 * h)
    return out


def random_model(widths, seed, activation="relu"):
    arch = ArchSpec(tuple(widths), activation)
    return MlpModel(arch, init_params(arch, np.random.default_rng(seed)))


def make_dataset(n_real=20, n_spoof=20, dim=8, seed=0, domain_id="D", split="train"):
    spec = DomainSpec(
        domain_id,
        attack_types=("print", "video"),
        num_real={split: n_real},
        num_spoof={split: n_spoof},
        noise_sigma=0.3,
        seed=seed,
        dim=dim,
    )
    return generate_domain(spec)


@pytest.fixture
def small_center():
    return make_dataset(30, 30, seed=1)


@pytest.fixture
def two_centers():
    return [make_dataset(24, 24, seed=2, domain_id="A"), make_dataset(24, 24, seed=3, domain_id="B")]


@pytest.fixture
def tiny_dataset():
    return DomainDataset(
        "T",
        np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]]),
        np.array([1, 0, 0]),
        np.array(["none", "print", "video"]),
        np.array(["train"] * 3),
    )


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line[1])
