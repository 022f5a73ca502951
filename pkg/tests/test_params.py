import numpy as np
import pytest

from fewts import ConfigError, Layout, ParamSet


def make_layout():
    return Layout.from_shapes([("w", (2, 3)), ("b", (2,)), ("g", (4,))])


def test_layout_offsets_and_size():
    layout = make_layout()
    assert layout.total_size == 12
    assert layout["w"].offset == 0
    assert layout["b"].offset == 6
    assert layout["g"].offset == 8
    assert layout.names() == ["w", "b", "g"]


def test_duplicate_names_rejected():
    with pytest.raises(ConfigError):
        Layout.from_shapes([("w", (2,)), ("w", (3,))])


def test_get_returns_writable_view():
    ps = ParamSet(make_layout())
    ps.get("b")[:] = [1.0, 2.0]
    assert ps.values[6] == 1.0 and ps.values[7] == 2.0


def test_set_checks_shape():
    ps = ParamSet(make_layout())
    with pytest.raises(ConfigError):
        ps.set("w", np.zeros((3, 2)))


def test_flatten_unflatten_round_trip_bitwise():
    rng = np.random.default_rng(0)
    layout = make_layout()
    ps = ParamSet(layout, rng.standard_normal(layout.total_size))
    rebuilt = ParamSet.from_arrays(layout, ps.as_arrays())
    assert rebuilt.values.tobytes() == ps.values.tobytes()


def test_from_arrays_missing_record():
    with pytest.raises(ConfigError):
        ParamSet.from_arrays(make_layout(), {"w": np.zeros((2, 3))})


def test_elementwise_arithmetic():
    layout = make_layout()
    a = ParamSet(layout, np.arange(12.0))
    b = ParamSet(layout, np.ones(12))
    assert np.array_equal(a.add(b).values, np.arange(12.0) + 1)
    assert np.array_equal(a.sub(b).values, np.arange(12.0) - 1)
    assert np.array_equal(a.scale(2.0).values, np.arange(12.0) * 2)


def test_mismatched_layouts_rejected():
    a = ParamSet(make_layout())
    other = Layout.from_shapes([("w", (12,))])
    with pytest.raises(ConfigError):
        a.add(ParamSet(other))


def test_copy_is_independent():
    ps = ParamSet(make_layout())
    c = ps.copy()
    c.values[0] = 5.0
    assert ps.values[0] == 0.0


def test_wrong_vector_length_rejected():
    with pytest.raises(ConfigError):
        ParamSet(make_layout(), np.zeros(11))
