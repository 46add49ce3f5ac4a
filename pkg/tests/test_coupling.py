import json

import numpy as np
import pytest

from torusflow import Dynamics, LatticeSpec
from torusflow.coupling import (
    coupling_from_dict,
    coupling_to_dict,
    explicit_coupling,
    independent_coupling,
    load_coupling,
    point_coupling,
    reweight,
)
from torusflow.errors import CapacityError, InputError

SPEC = LatticeSpec(3, 1)


def test_independent_marginals():
    c = independent_coupling(SPEC, [0.2, 0.3, 0.5], [0.6, 0.4, 0.0])
    np.testing.assert_allclose(c.mu0, [0.2, 0.3, 0.5])
    np.testing.assert_allclose(c.mu1, [0.6, 0.4, 0.0])
    np.testing.assert_allclose(c.weights, np.outer(c.mu0, c.mu1))


def test_small_drift_is_renormalised():
    c = independent_coupling(SPEC, [0.2, 0.3, 0.5 + 5e-7], [1, 0, 0])
    assert c.weights.sum() == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("mu0", [[0.2, 0.3, 0.6], [0.5, 0.5], [-0.1, 0.6, 0.5], [np.nan, 0.5, 0.5]])
def test_rejects_bad_marginals(mu0):
    with pytest.raises(InputError):
        independent_coupling(SPEC, mu0, [1 / 3] * 3)


def test_explicit_accumulates_duplicates():
    c = explicit_coupling(SPEC, [(0, 1, 0.25), (0, 1, 0.25), (2, 2, 0.5)])
    assert c.weights[0, 1] == 0.5
    with pytest.raises(InputError):
        explicit_coupling(SPEC, [(0, 3, 1.0)])
    with pytest.raises(InputError):
        explicit_coupling(SPEC, [(0, 1, -0.5), (0, 2, 1.5)])


def test_capacity_limit():
    with pytest.raises(CapacityError):
        point_coupling(LatticeSpec(2, 13), 0, 1)


def test_dict_roundtrip(tmp_path):
    c = explicit_coupling(SPEC, [(0, 1, 0.3), (2, 0, 0.7)])
    obj = coupling_to_dict(c)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(obj))
    back = load_coupling(path)
    np.testing.assert_array_equal(back.weights, c.weights)
    ind = coupling_from_dict(SPEC, {"type": "independent", "mu0": [1, 0, 0], "mu1": [0, 0, 1]})
    assert ind.weights[0, 2] == 1.0


def test_file_errors_name_location(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"m": 3,\n "d": 1,\n')
    with pytest.raises(InputError, match="line 3"):
        load_coupling(bad)
    bad.write_text(json.dumps({"m": 3, "d": 1, "coupling": {"type": "independent", "mu0": [1, 0, 0]}}))
    with pytest.raises(InputError, match="coupling"):
        load_coupling(bad)
    bad.write_text(json.dumps({"m": "3", "d": 1, "coupling": {"type": "explicit", "entries": []}}))
    with pytest.raises(InputError, match="field m"):
        load_coupling(bad)


def test_reweight_divides_by_full_kernel():
    dyn = Dynamics("urw", SPEC)
    c = independent_coupling(SPEC, [0.2, 0.3, 0.5], [0.6, 0.4, 0.0])
    rc = reweight(c, dyn)
    np.testing.assert_allclose(rc.weights * dyn.kernel(1.0), c.weights, rtol=1e-14)
    with pytest.raises(InputError):
        reweight(c, Dynamics("urw", LatticeSpec(2, 1)))
