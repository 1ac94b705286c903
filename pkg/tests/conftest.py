import json
from pathlib import Path

import numpy as np
import pytest

from denoise_nas.autodiff import set_default_dtype

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(autouse=True)
def _float64():
    set_default_dtype("float64")
    yield
    set_default_dtype("float64")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def ref_alphas():
    """Encodings per stage in roster order plus the highlighted winners."""
    return json.loads((DATA_DIR / "reference_alphas.json").read_text())


def conv2d_loops(x, k, b, stride=1, padding=0, groups=1):
    """Direct nested-loop cross-correlation."""
    n, cin, h, w = x.shape
    cout, cig, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    cog = cout // groups
    out = np.zeros((n, cout, ho, wo))
    for ni in range(n):
        for o in range(cout):
            g = o // cog
            for yi in range(ho):
                for xi in range(wo):
                    acc = 0.0 if b is None else b[o]
                    for ci in range(cig):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[ni, g * cig + ci, yi * stride + u, xi * stride + v] * k[o, ci, u, v]
                    out[ni, o, yi, xi] = acc
    return out


@pytest.fixture(scope="session")
def bench_points():
    return json.loads((DATA_DIR / "benchmark.json").read_text())


def reference_derived_config(ref_alphas, width=64):
    from denoise_nas.nn import CandidateSpec, reference_base_config

    base = reference_base_config(width)
    return base, base.with_stages({s: CandidateSpec.parse(v) for s, v in ref_alphas["derived"].items()})


def dominated_oracle(points):
    """O(n^2) reference: points not dominated by any other."""
    return [p for p in points if not any(q.dominates(p) for q in points)]
