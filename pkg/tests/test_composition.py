import numpy as np
import pytest

from hdcal import InvalidInput
from hdcal.composition import (
    CompositionMatrix,
    CountMatrix,
    LogContrastMatrix,
    ResponseVector,
    center,
    close,
    inverse_log_contrast,
    log_contrast,
)


def test_close_equal_counts():
    np.testing.assert_array_equal(close([[1, 1], [2, 2]]).values, [[0.5, 0.5], [0.5, 0.5]])


def test_close_forced_arithmetic():
    np.testing.assert_allclose(close([[1, 3]]).values, [[0.25, 0.75]], rtol=0, atol=1e-15)


def test_close_rows_sum_to_one(rng):
    comp = close(rng.uniform(0.1, 100, size=(5, 4)))
    assert np.abs(comp.values.sum(axis=1) - 1).max() < 1e-12


def test_close_rejects_nonpositive_and_names_cell():
    with pytest.raises(InvalidInput, match=r"row 1.*column 0"):
        close([[1.0, 2.0], [0.0, 3.0]])


def test_close_idempotent(rng):
    comp = close(rng.uniform(1, 5, size=(6, 3)))
    again = close(comp)
    np.testing.assert_allclose(again.values, comp.values, rtol=0, atol=1e-15)


def test_count_matrix_shape_checks():
    with pytest.raises(InvalidInput):
        CountMatrix(np.ones((1, 3)))
    with pytest.raises(InvalidInput):
        CountMatrix(np.ones((3, 1)))
    m = CountMatrix(np.ones((3, 2)))
    assert (m.n, m.p) == (3, 2)


def test_composition_matrix_validates_sums():
    with pytest.raises(InvalidInput):
        CompositionMatrix(np.array([[0.5, 0.4]]))


def test_log_contrast_equal_shares():
    lc = log_contrast(close([[1, 1]]), reference_index=1)
    np.testing.assert_allclose(lc.values, [[0.0]])
    assert not lc.centered


def test_log_contrast_forced_arithmetic():
    lc = log_contrast(CompositionMatrix(np.array([[0.25, 0.75]])), reference_index=1)
    np.testing.assert_allclose(lc.values, [[np.log(1 / 3)]], atol=1e-12)
    assert abs(lc.values[0, 0] - (-1.098612)) < 1e-6


def test_log_contrast_scale_invariance_oracle():
    counts = np.array([[2.0, 6.0, 4.0]])
    via_close = log_contrast(close(counts), reference_index=2).values
    direct = np.log(counts[:, :2] / counts[:, [2]])
    np.testing.assert_allclose(via_close, direct, atol=1e-14)
    np.testing.assert_allclose(via_close, [[np.log(0.5), np.log(1.5)]], atol=1e-14)


def test_log_contrast_default_reference_is_last(rng):
    comp = close(rng.uniform(1, 2, size=(4, 5)))
    lc = log_contrast(comp)
    assert lc.reference_index == 4
    np.testing.assert_allclose(lc.values, np.log(comp.values[:, :4] / comp.values[:, [4]]))


def test_log_contrast_middle_reference(rng):
    comp = close(rng.uniform(1, 2, size=(4, 5)))
    lc = log_contrast(comp, reference_index=2)
    keep = [0, 1, 3, 4]
    np.testing.assert_allclose(lc.values, np.log(comp.values[:, keep] / comp.values[:, [2]]))


@pytest.mark.parametrize("bad", [5, 17, -6, 1.5])
def test_log_contrast_invalid_reference(bad):
    with pytest.raises(InvalidInput):
        log_contrast(close(np.ones((2, 5))), reference_index=bad)


def test_inverse_log_contrast_roundtrip(rng):
    comp = close(rng.uniform(0.01, 10, size=(7, 6)))
    for ref in (0, 3, 5):
        back = inverse_log_contrast(log_contrast(comp, ref))
        np.testing.assert_allclose(back.values, comp.values, atol=1e-10)


def test_center_column():
    d, _ = center(LogContrastMatrix(np.array([[1.0], [2.0], [3.0]]), 0), ResponseVector(np.zeros(3)))
    np.testing.assert_allclose(d.values[:, 0], [-1, 0, 1])
    assert d.centered


def test_center_idempotent_and_means(rng):
    x = rng.standard_normal((10, 3)) + 5
    y = rng.standard_normal(10) - 2
    d, r = center(LogContrastMatrix(x, 3), ResponseVector(y))
    assert np.abs(d.values.mean(axis=0)).max() < 1e-10
    assert abs(r.values.mean()) < 1e-10 and r.centered
    d2, r2 = center(d, r)
    np.testing.assert_allclose(d2.values, d.values, atol=1e-12)
    np.testing.assert_allclose(r2.values, r.values, atol=1e-12)


def test_center_design_only(rng):
    d = center(LogContrastMatrix(rng.standard_normal((6, 2)), 2))
    assert isinstance(d, LogContrastMatrix) and d.centered


def test_containers_are_read_only():
    comp = close([[1.0, 3.0]])
    with pytest.raises(ValueError):
        comp.values[0, 0] = 1.0


def test_response_vector_centered_flag_checked():
    with pytest.raises(InvalidInput):
        ResponseVector(np.array([1.0, 2.0]), centered=True)
