import pathlib

import numpy as np
import pytest

from fairshare.network import Link, NetworkSpec, Route, derive_traffic_profile
from fairshare.phasetype import erlang, exponential, hyperexponential

CONFIGS = pathlib.Path(__file__).resolve().parent.parent / "configs"


def single_link(weight=1.0):
    return NetworkSpec((Link("l1", 1.0),), (Route("r1", ("l1",), weight),))


def linear2(weights=(1.0, 1.0, 1.0)):
    return NetworkSpec(
        (Link("l1", 1.0), Link("l2", 1.0)),
        (Route("r1", ("l1",), weights[0]), Route("r2", ("l2",), weights[1]),
         Route("r3", ("l1", "l2"), weights[2])),
    )


LINEAR_LAM0 = np.array([0.6, 0.6, 0.4])


def mean_one(kind):
    if kind == "exp":
        return exponential(1.0)
    if kind == "erlang2":
        return erlang(2, 2.0)
    if kind == "hyper":
        return hyperexponential([0.75, 1.5], [0.5, 0.5])
    raise ValueError(kind)


@pytest.fixture
def linear_net():
    spec = linear2()
    dists = [exponential(1.0)] * 3
    return spec, dists, LINEAR_LAM0


@pytest.fixture
def linear_mixed():
    # phase-type files on every route, still mean one so the loads are unchanged
    spec = linear2()
    dists = [erlang(2, 2.0), hyperexponential([0.75, 1.5], [0.5, 0.5]),
             mean_one("exp")]
    return spec, dists, LINEAR_LAM0


def profile_for(spec, dists, lam0, eps):
    return derive_traffic_profile(spec, lam0, dists, eps)
