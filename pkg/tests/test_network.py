import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from natsim.errors import (
    AsymmetricCoupling,
    ConfigParseError,
    IndexOutOfRange,
    InvalidParameter,
    MissingAttachment,
    NegativeRate,
    NetworkValidationError,
)
from natsim.network import (
    DEFAULT_COUPLINGS,
    DetectionSpec,
    InjectionSpec,
    InterferenceMode,
    NetworkSpec,
    chain_network,
    load_network,
    network_from_dict,
    network_to_dict,
    save_network,
    single_site,
    standard_four_site,
    validate_network,
)


def violation_types(exc):
    return {(type(v), v.field) for v in exc.value.violations}


def test_standard_network_validates():
    net = validate_network(standard_four_site())
    assert net.n_sites == 4
    assert net.edges == ((0, 1, 0.5), (0, 2, 0.45), (1, 3, 0.4), (2, 3, 0.35))
    assert net.omega == (0.0, 0.0, 0.0, 0.0)
    assert net.gamma_deph == (0.0, 0.0, 0.0, 0.0)
    assert net.injection == InjectionSpec(0, 0.5, 0.1)
    assert net.detection == DetectionSpec(3, 0.5)


def test_destructive_flips_only_g01():
    c = standard_four_site("constructive", 0.7, 0.2)
    d = standard_four_site("destructive", 0.7, 0.2)
    diff = {k for k in c.coupling if c.coupling[k] != d.coupling[k]}
    assert diff == {(0, 1), (1, 0)}
    assert d.coupling[(0, 1)] == -0.5
    assert c.omega == d.omega and c.gamma_deph == d.gamma_deph


def test_sweep_endpoints():
    net = validate_network(standard_four_site(InterferenceMode.CONSTRUCTIVE, 2.0, 1.0))
    assert net.omega[2] == 2.0 and net.gamma_deph[2] == 1.0


def test_negative_dephasing_named():
    spec = standard_four_site()
    spec.gamma_deph[2] = -0.1
    with pytest.raises(NetworkValidationError) as exc:
        validate_network(spec)
    assert (NegativeRate, "gamma_deph[2]") in violation_types(exc)


def test_missing_mirror_is_asymmetric():
    spec = standard_four_site()
    del spec.coupling[(1, 0)]
    with pytest.raises(NetworkValidationError) as exc:
        validate_network(spec)
    assert violation_types(exc) == {(AsymmetricCoupling, (0, 1))}


def test_all_violations_collected():
    spec = NetworkSpec(3, [0.0, 0.0, 0.0], {(0, 5): 1.0, (5, 0): 1.0, (1, 1): 0.2}, [0.0, -1.0, 0.0])
    with pytest.raises(NetworkValidationError) as exc:
        validate_network(spec)
    kinds = {t for t, _ in violation_types(exc)}
    assert {IndexOutOfRange, NegativeRate, MissingAttachment, InvalidParameter} <= kinds


def test_standard_network_rejects_negative_gamma():
    with pytest.raises(InvalidParameter):
        standard_four_site("constructive", 0.0, -0.5)
    with pytest.raises(InvalidParameter):
        standard_four_site("constructive", float("nan"), 0.0)


def test_json_roundtrip(tmp_path):
    net = validate_network(standard_four_site("destructive", 1.25, 0.3))
    path = tmp_path / "net.json"
    save_network(net, path)
    assert validate_network(load_network(path)) == net
    data = json.loads(path.read_text())
    assert set(data) == {"n_sites", "omega", "couplings", "gamma_deph", "injection", "detection"}


def test_malformed_json():
    with pytest.raises(ConfigParseError):
        network_from_dict({"omega": [0.0]})


def test_asymmetric_json_kept_for_validation():
    data = network_to_dict(standard_four_site())
    data["couplings"].append({"i": 1, "j": 0, "g": 0.3})
    with pytest.raises(NetworkValidationError):
        validate_network(network_from_dict(data))


def test_loss_rates_and_hopping():
    net = validate_network(standard_four_site("constructive", 1.5))
    np.testing.assert_array_equal(net.loss_rates(), [0.5, 0.0, 0.0, 1.0])
    m = net.hopping_matrix()
    assert m[2, 2] == 1.5 and m[0, 1] == m[1, 0] == 0.5 and m[0, 3] == 0.0


def test_conserved_structures():
    assert validate_network(standard_four_site()).conserved_structures() == []
    spec = NetworkSpec.from_edges(
        3, [(0, 1, 0.5)], injection=InjectionSpec(0, 0.5, 0.1), detection=DetectionSpec(1, 0.5)
    )
    found = validate_network(spec).conserved_structures()
    assert any("lossless component [2]" in s for s in found)
    # symmetric diamond: the antisymmetric combination of sites 1 and 2 is dark
    sym = validate_network(standard_four_site(couplings=(0.5, 0.5, 0.5, 0.5)))
    assert any("dark mode" in s for s in sym.conserved_structures())
    # dephasing on one arm makes it bright again
    deph = validate_network(standard_four_site("constructive", 0.0, 0.3, couplings=(0.5, 0.5, 0.5, 0.5)))
    assert deph.conserved_structures() == []


rates = st.floats(0.0, 2.0, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(
    mode=st.sampled_from(list(InterferenceMode)),
    omega2=st.floats(-3.0, 3.0, allow_nan=False),
    gamma2=rates,
    couplings=st.tuples(*[st.floats(0.2, 0.5)] * 4),
)
def test_standard_network_always_valid(mode, omega2, gamma2, couplings):
    net = validate_network(standard_four_site(mode, omega2, gamma2, couplings))
    assert len(net.edges) == 4
    assert validate_network(network_from_dict(network_to_dict(net))) == net


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 6), g=st.floats(-1.0, 1.0, allow_nan=False))
def test_chain_valid(n, g):
    net = validate_network(chain_network(n, g))
    assert len(net.edges) == n - 1
    assert net.detection.site == n - 1


def test_default_couplings_in_range():
    assert all(0.2 <= g <= 0.5 for g in DEFAULT_COUPLINGS)
    assert validate_network(single_site()).n_sites == 1
