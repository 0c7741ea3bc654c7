import numpy as np
import pytest

from pinsupport.vectorfields import (
    VectorFieldError,
    VectorFieldSystem,
    get_system,
    register,
    system_names,
    validate,
)


@pytest.mark.parametrize("name", ["brownian", "additive", "geometric", "degenerate", "kolmogorov", "heisenberg", "smooth"])
def test_builtins_pass_derivative_check(name):
    vf = get_system(name)
    report = validate(vf)
    assert all(v < 1e-5 for v in report.values())
    x = np.zeros((4, vf.e))
    assert vf.sigma(x).shape == (4, vf.e, vf.d)
    assert vf.dsigma(x).shape == (4, vf.e, vf.d, vf.e)
    assert vf.b(x).shape == (4, vf.e)


def test_unknown_system_lists_known_names():
    with pytest.raises(VectorFieldError, match="heisenberg"):
        get_system("nope")
    assert "kolmogorov" in system_names()


def test_wrong_derivative_is_rejected():
    bad = VectorFieldSystem(
        "bad", 1, 1,
        sigma=lambda x: np.sin(x)[..., None],
        dsigma=lambda x: np.sin(x)[..., None, None],
    )
    with pytest.raises(VectorFieldError, match="dsigma"):
        register(bad)
    assert "bad" not in system_names()


def test_wrong_shape_is_rejected():
    bad = VectorFieldSystem("badshape", 1, 1, sigma=lambda x: x[..., None], dsigma=lambda x: np.ones(x.shape))
    with pytest.raises(VectorFieldError, match="shape"):
        validate(bad)


def test_drift_needs_gradient():
    bad = VectorFieldSystem("nograd", 1, 1, sigma=lambda x: np.ones(x.shape + (1,)),
                            dsigma=lambda x: np.zeros(x.shape + (1, 1)), drift=lambda x: x)
    with pytest.raises(VectorFieldError, match="gradient"):
        validate(bad)


def test_constant_sigma_flag_is_checked():
    bad = VectorFieldSystem("flag", 1, 1, sigma=lambda x: x[..., None], dsigma=lambda x: np.ones(x.shape + (1, 1)),
                            constant_sigma=True)
    with pytest.raises(VectorFieldError, match="constant_sigma"):
        validate(bad)


def test_field_accessors():
    vf = get_system("heisenberg")
    x = np.array([1.0, 2.0, 0.0])
    assert np.allclose(vf.field(1)(x), [1.0, 0.0, -1.0])
    assert np.allclose(vf.field(2)(x), [0.0, 1.0, 0.5])
    assert np.allclose(vf.field(0)(x), 0.0)
