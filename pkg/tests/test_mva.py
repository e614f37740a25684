import numpy as np
import pytest

from pseudosal.core import SaliencyMap
from pseudosal.errors import InvalidArgument
from pseudosal.mva import MvaState, load_state, save_state, snapshot_labels, stability_delta, update_mva


def test_closed_form_constant_input():
    alpha = 0.7
    for K in range(11):
        m0 = np.array([[0.2, 0.9]])
        c = np.array([[0.6, 0.1]])
        s = MvaState(alpha)
        update_mva(s, "x", m0)
        for _ in range(K):
            update_mva(s, "x", c)
        expected = alpha ** K * m0 + (1 - alpha ** K) * c
        np.testing.assert_allclose(s.entries["x"].values, expected, atol=1e-9, rtol=0)
        assert s.entries["x"].k == K + 1


def test_five_updates_weight():
    s = MvaState(0.7)
    update_mva(s, "x", np.zeros((1, 1)))
    for _ in range(5):
        update_mva(s, "x", np.ones((1, 1)))
    assert s.entries["x"].values[0, 0] == pytest.approx(0.83193, abs=1e-12)


def test_values_stay_in_unit_interval():
    r = np.random.default_rng(5)
    for _ in range(1000):
        s = MvaState(float(r.uniform(0, 0.999)))
        for _ in range(int(r.integers(1, 8))):
            v = r.random((3, 3))
            v[r.random((3, 3)) < 0.2] = r.choice([0.0, 1.0])
            update_mva(s, "a", v)
        vals = s.entries["a"].values
        assert vals.min() >= 0 and vals.max() <= 1


def test_first_update_stores_input():
    s = MvaState()
    update_mva(s, "a", SaliencyMap(np.full((2, 2), 0.3, np.float32)))
    np.testing.assert_allclose(s.map("a").values, 0.3, atol=1e-7)


def test_rejects_bad_input():
    with pytest.raises(InvalidArgument):
        MvaState(alpha=1.0)
    s = MvaState()
    with pytest.raises(InvalidArgument):
        update_mva(s, "a", np.array([[1.5]]))
    update_mva(s, "a", np.zeros((2, 2)))
    with pytest.raises(InvalidArgument):
        update_mva(s, "a", np.zeros((3, 3)))
    with pytest.raises(InvalidArgument):
        snapshot_labels(MvaState())


def test_snapshot_thresholds():
    s = MvaState()
    update_mva(s, "a", np.array([[0.5, 0.51, 0.1, 0.1]]))
    assert snapshot_labels(s)["a"].values.tolist() == [[0, 1, 0, 0]]
    # mean 0.3025, gamma 0.45375
    assert snapshot_labels(s, None)["a"].values.tolist() == [[1, 1, 0, 0]]


def test_stability_delta_and_roundtrip(tmp_path):
    a, b = MvaState(), MvaState()
    update_mva(a, "x", np.zeros((2, 2)))
    update_mva(b, "x", np.full((2, 2), 0.25))
    assert stability_delta(a, b) == pytest.approx(0.25)
    update_mva(b, "y", np.zeros((2, 2)))
    with pytest.raises(InvalidArgument):
        stability_delta(a, b)
    save_state(b, tmp_path, snapshot_labels(b))
    back = load_state(tmp_path)
    assert set(back.entries) == {"x", "y"}
    np.testing.assert_allclose(back.entries["x"].values, 0.25, atol=1 / 65535)
    assert (tmp_path / "labels" / "x.png").is_file()


def test_single_step_substitution():
    s = MvaState(0.7)
    update_mva(s, "a", np.array([[0.5]]))
    update_mva(s, "a", np.array([[1.0]]))
    assert s.entries["a"].values[0, 0] == pytest.approx(0.65)


def test_snapshot_tie_and_delta_example():
    s = MvaState()
    update_mva(s, "a", np.array([[0.5, 0.9, 0.2, 0.7]]))
    assert snapshot_labels(s)["a"].values.tolist() == [[0, 1, 0, 1]]
    a, b = MvaState(), MvaState()
    update_mva(a, "x", np.array([[0.0, 0.0]]))
    update_mva(b, "x", np.array([[0.1, 0.3]]))
    assert stability_delta(a, b) == pytest.approx(0.2)
    assert stability_delta(a, a) == 0
