import os
import subprocess
import sys

import numpy as np
import pytest

from transmon_open import kernels
from transmon_open.liouville import DensityMatrix, LindbladGenerator, evolve_master, state_vector
from transmon_open.model import FockSpace
from transmon_open.trajectory import TrajectoryEngine, run_ensemble

compiled = pytest.mark.skipif(not kernels.COMPILED_AVAILABLE, reason="compiled kernels not built")


@pytest.fixture
def setup(disordered_params):
    space = FockSpace.build(3, range(0, 4))
    return disordered_params, space, LindbladGenerator.from_params(disordered_params, space)


def test_backend_selection():
    assert kernels.get_backend("python").NAME == "python"
    assert kernels.get_backend("auto") is kernels.backend
    with pytest.raises(ValueError):
        kernels.get_backend("gpu")


def test_pure_env_forces_fallback():
    env = dict(os.environ, TRANSMON_OPEN_PURE="1")
    out = subprocess.run(
        [sys.executable, "-c", "from transmon_open import kernels; print(kernels.backend.NAME)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"


@compiled
def test_compiled_is_default():
    assert kernels.get_backend("compiled").NAME == "compiled"
    if not os.environ.get("TRANSMON_OPEN_PURE"):
        assert kernels.backend.NAME == "compiled"


@compiled
def test_lindblad_apply_twins(setup, rng):
    _, _, gen = setup
    y = rng.normal(size=gen.size) + 1j * rng.normal(size=gen.size)
    a = gen.apply_flat(y, kernels.get_backend("compiled"))
    b = gen.apply_flat(y, kernels.get_backend("python"))
    assert np.abs(a - b).max() <= 1e-13 * np.abs(b).max()


@compiled
def test_chebyshev_twins(setup):
    _, space, gen = setup
    rho0 = DensityMatrix.from_state(space, {(1, 1, 1): 1})
    t = np.linspace(0, 3, 4)
    ra = evolve_master(rho0, t, generator=gen, method="chebyshev", backend=kernels.get_backend("compiled"))
    rb = evolve_master(rho0, t, generator=gen, method="chebyshev", backend=kernels.get_backend("python"))
    for x, y in zip(ra.states, rb.states):
        assert np.abs(x.to_dense() - y.to_dense()).max() < 1e-12


@compiled
def test_trajectory_twins(setup):
    p, space, _ = setup
    psi0 = state_vector(space, {(1, 2, 0): 1})
    t = np.linspace(0, 8, 41)
    ea = TrajectoryEngine(p, space, kernels.get_backend("compiled"))
    eb = TrajectoryEngine(p, space, kernels.get_backend("python"))
    for i in range(20):
        a, b = ea.run(psi0, t, 3, i), eb.run(psi0, t, 3, i)
        assert [(k, s) for _, k, s in a.jump_log] == [(k, s) for _, k, s in b.jump_log]
        assert np.allclose([x for x, _, _ in a.jump_log], [x for x, _, _ in b.jump_log], rtol=0, atol=1e-9)
        assert np.array_equal(a.sector, b.sector)
        assert np.abs(a.probabilities - b.probabilities).max() < 1e-9


@compiled
def test_ensemble_twins(setup):
    p, space, _ = setup
    psi0 = state_vector(space, {(1, 2, 0): 1})
    t = np.linspace(0, 4, 11)
    a = run_ensemble(psi0, t, p, 100, 8, space=space, backend=kernels.get_backend("compiled"))
    b = run_ensemble(psi0, t, p, 100, 8, space=space, backend=kernels.get_backend("python"))
    assert np.abs(a.mean - b.mean).max() < 1e-9
