import os
import subprocess
import sys

import numpy as np
import pytest

from msocc import _pykernels, kernels

try:
    from msocc import _ckernels
except ImportError:  # extension not built
    _ckernels = None

needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled kernel not built")


def random_inputs(rng, S, I, T=6):
    det = rng.integers(0, T + 1, (I, S)).astype(np.int32)
    nocc = np.full(I, T, dtype=np.int32)
    det = np.minimum(det, nocc[:, None]).astype(np.int32)
    log_psi = np.log(rng.dirichlet(np.ones(2**S)))
    eta = rng.normal(0, 1.5, S)
    return log_psi, eta, det, nocc


@needs_ext
@pytest.mark.parametrize("S", [1, 2, 3, 6])
def test_backends_agree(rng, S):
    args = random_inputs(rng, S, 40)
    ll_py, post_py, score_py = _pykernels.loglik_grad(*args)
    ll_c, post_c, score_c = _ckernels.loglik_grad(*args)
    assert ll_c == pytest.approx(ll_py, rel=1e-12)
    np.testing.assert_allclose(post_c, post_py, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(score_c, score_py, rtol=1e-10, atol=1e-10)


@needs_ext
def test_compiled_kernel_is_deterministic(rng):
    args = random_inputs(rng, 3, 500)
    first = _ckernels.loglik_grad(*args)
    for _ in range(3):
        again = _ckernels.loglik_grad(*args)
        assert again[0] == first[0]
        np.testing.assert_array_equal(again[1], first[1])


def test_state_posterior_sums_to_site_count(rng):
    args = random_inputs(rng, 3, 25)
    _, post, _ = kernels.loglik_grad(*args)
    assert post.sum() == pytest.approx(25)


@pytest.mark.parametrize("backend", ["python", "cython"])
def test_backend_env_switch(backend):
    if backend == "cython" and _ckernels is None:
        pytest.skip("compiled kernel not built")
    env = dict(os.environ, MSOCC_BACKEND=backend)
    out = subprocess.run(
        [sys.executable, "-c", "import msocc; print(msocc.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == backend
