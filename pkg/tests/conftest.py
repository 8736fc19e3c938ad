import numpy as np
import pytest
import torch

from talkfield.head_param import ALB_DIM, EXP_DIM, ID_DIM, ILLU_DIM, HeadParams
from talkfield.synth import DataConfig, generate_dataset

TINY_DATA = DataConfig(n_identities=2, n_frames=40, yaws=(-20.0, 0.0, 20.0), test_fraction=0.25, seed=3)


def random_params(gen: torch.Generator | None = None, dtype=torch.float64, scale: float = 0.5) -> HeadParams:
    def r(n):
        return scale * torch.randn(n, generator=gen, dtype=dtype)

    return HeadParams(r(ID_DIM), r(EXP_DIM), r(EXP_DIM), r(ALB_DIM), r(ILLU_DIM))


def central_difference_check(fn, inputs, *, step=1e-5, rtol=1e-4, atol=1e-7):
    """Compare autograd gradients of scalar ``fn(*inputs)`` with central differences.

    Returns the worst relative error. Entries whose numeric gradient is tiny
    are judged against ``atol`` instead.
    """
    inputs = [x.detach().clone().requires_grad_(True) for x in inputs]
    out = fn(*inputs)
    grads = torch.autograd.grad(out, inputs, allow_unused=True)
    worst = 0.0
    with torch.no_grad():
        for x, g in zip(inputs, grads):
            g = torch.zeros_like(x) if g is None else g
            flat = x.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                hi = fn(*inputs).item()
                flat[i] = orig - step
                lo = fn(*inputs).item()
                flat[i] = orig
                num = (hi - lo) / (2 * step)
                ana = g.reshape(-1)[i].item()
                err = abs(ana - num)
                if err > atol + rtol * abs(num):
                    raise AssertionError(f"gradient mismatch at {i}: autograd {ana}, numeric {num}")
                if abs(num) > 1e-3:
                    worst = max(worst, err / abs(num))
    return worst


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_data")
    generate_dataset(root, TINY_DATA)
    return root


@pytest.fixture
def f64():
    prev = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acceptance.RESULTS):
        terminalreporter.write_line(acceptance.RESULTS[n])
