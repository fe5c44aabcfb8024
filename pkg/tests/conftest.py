import numpy as np
import pytest

from qrewrite.model import ModelConfig, init_params


def tiny_config(**overrides) -> ModelConfig:
    base = dict(
        vocab_size=12,
        num_layers=1,
        num_heads=2,
        d_model=16,
        d_ff=24,
        dropout=0.0,
        max_len=12,
        dtype="float64",
    )
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture
def tiny_params():
    return init_params(tiny_config(), seed=0, role="forward")


@pytest.fixture
def tiny_pair_models():
    fparams = init_params(tiny_config(), seed=0, role="forward")
    bparams = init_params(tiny_config(), seed=1, role="backward")
    return fparams, bparams


def rel_err(a: float, b: float, floor: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def grads_match(fd: float, g: float, rel_tol: float, abs_tol: float) -> bool:
    """True when the two derivatives agree to rel_tol, or both sit below the
    finite-difference noise floor abs_tol (central differences cannot certify
    anything smaller)."""
    if abs(fd - g) <= abs_tol:
        return True
    return abs(fd - g) / max(abs(fd), abs(g)) <= rel_tol


def sample_coords(shape, count, rng):
    coords = set()
    total = int(np.prod(shape))
    count = min(count, total)
    while len(coords) < count:
        coords.add(tuple(int(rng.integers(0, s)) for s in shape))
    return sorted(coords)
