import os
from pathlib import Path

import numpy as np
import pytest

from kinetra.config import load_config
from kinetra.functions import bump, const
from kinetra.models import CollisionTerm, DegenerateKernel, build_rotenberg, build_slab, build_sphere

HERE = Path(__file__).parent
CONFIGS = HERE / "configs"
FIXTURES = HERE / "fixtures"

# kernel scales giving a compact-part norm of 0.4 (reference configs)
ROT_ALPHA = 0.9825518399857738
SPH_ALPHA = 2.0338001896980105

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def config_path(name: str) -> Path:
    return CONFIGS / f"{name}.cfg"


def reference_config(name: str):
    return load_config(config_path(name))


def rotenberg(n=16, beta=0.5, alpha=ROT_ALPHA, collision=2.0, **kw):
    kernel = DegenerateKernel(((bump(0.55, 0.4), bump(0.55, 0.4)),), alpha) if alpha else None
    terms = [CollisionTerm(const(collision), bump(0.55, 0.4), bump(0.55, 0.4))] if collision else []
    return build_rotenberg(0.1, 1.0, 1.0, n, n, beta=const(beta), kernel=kernel, collision=terms, **kw)


def sphere(n=16, gamma=0.5, alpha=SPH_ALPHA, collision=1.0):
    kernel = DegenerateKernel(((bump(-0.5, 0.4), bump(0.5, 0.4)),), alpha) if alpha else None
    terms = [CollisionTerm(const(collision), bump(0.0, 0.6), bump(0.0, 0.6))] if collision else []
    return build_sphere(1.0, 1.0, n, n, gamma=const(gamma), kernel=kernel, collision=terms)


def slab(n=16, case="a", coef=0.5, scale=0.5, collision=1.0):
    if case == "b":
        kernels = (DegenerateKernel(((bump(0.5, 0.4), bump(0.5, 0.4)),), scale),
                   DegenerateKernel(((bump(-0.5, 0.4), bump(-0.5, 0.4)),), scale))
    else:
        kernels = (DegenerateKernel(((bump(0.5, 0.4), bump(-0.5, 0.4)),), scale),
                   DegenerateKernel(((bump(-0.5, 0.4), bump(0.5, 0.4)),), scale))
    coefs = (0.0, 0.0) if case == "c" else (coef, coef)
    terms = [CollisionTerm(const(collision), bump(0.0, 0.6), bump(0.0, 0.6))] if collision else []
    return build_slab(1.0, 1.0, n, n, case, coefs, kernels=kernels, collision=terms)


def wnorm(model, x):
    return float(np.sqrt(np.sum(model.weights * np.abs(x) ** 2)))


@pytest.fixture(scope="session")
def rot16():
    return rotenberg(16)


@pytest.fixture(scope="session")
def sph16():
    return sphere(16)


@pytest.fixture(scope="session")
def slab16():
    return slab(16)


@pytest.fixture
def tmp_out(tmp_path):
    d = tmp_path / "out"
    return str(d)


os.environ.setdefault("KINETRA_TESTS", "1")
