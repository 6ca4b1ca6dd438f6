import os
import tempfile

import numpy as np
import pytest

from besselpoisson import (
    DiscreteMeasure1D,
    DiscreteMeasure2D,
    Interval,
    MeasureFormatError,
    dilate,
    general_interval,
    hat,
    load_measure_file,
    mass_1d,
    mass_2d,
    save_measure_file,
    tilde,
)


def test_dilate_keeps_center_and_truncates_at_origin():
    assert dilate(Interval(1.0, 2.0), 5.0) == Interval(0.0, 4.0)
    assert dilate(Interval(0.0, 1.0), 5.0) == Interval(0.0, 3.0)
    assert dilate(Interval(4.0, 6.0), 3.0) == Interval(2.0, 8.0)
    assert dilate(Interval(4.0, 6.0), 1.0) == Interval(4.0, 6.0)


def test_interval_basics():
    iv = Interval(2.0, 5.0)
    assert iv.length == 3.0
    assert iv.contains(3.0) and not iv.contains(2.0) and not iv.contains(5.0)
    with pytest.raises(ValueError):
        Interval(2.0, 2.0)
    with pytest.raises(ValueError):
        Interval(-1.0, 2.0)
    assert general_interval(3.0, 1.0) == Interval(2.0, 4.0)
    assert general_interval(0.5, 1.0) == Interval(0.0, 1.5)


def test_hat_box_height_equals_length():
    box = hat(Interval(1.0, 3.0))
    assert box.base == Interval(1.0, 3.0)
    assert box.height == 2.0


def test_masses_use_open_base():
    s = DiscreteMeasure1D([(1.0, 2.0), (2.0, 3.0), (3.0, 5.0)])
    assert mass_1d(s, Interval(1.0, 2.0)) == 0.0      # both atoms on the boundary
    assert mass_1d(s, Interval(1.0, 3.0)) == 3.0
    assert mass_1d(s, Interval(0.5, 3.5)) == 10.0

    m = DiscreteMeasure2D([((1.0, 0.5), 2.0), ((3.0, 2.0), 4.0)])
    assert mass_2d(m, hat(Interval(0.0, 4.0))) == 6.0   # heights up to 4 included
    assert mass_2d(m, hat(Interval(0.0, 2.0))) == 2.0   # second atom too high and outside
    assert mass_2d(m, hat(Interval(1.0, 4.0))) == 4.0   # first atom on the base boundary


def test_tilde_scales_weights_by_height_squared():
    m = DiscreteMeasure2D([((1.0, 0.5), 2.0), ((3.0, 2.0), 4.0)])
    tm = tilde(m)
    np.testing.assert_allclose(tm.ws, [0.5, 16.0])
    np.testing.assert_allclose(tm.xs, m.xs)
    np.testing.assert_allclose(tm.ts, m.ts)


def test_measure_validation():
    with pytest.raises(ValueError):
        DiscreteMeasure1D([(1.0, 2.0), (1.0, 3.0)])   # duplicate position
    with pytest.raises(ValueError):
        DiscreteMeasure1D([(0.0, 1.0)])                # on the boundary of the domain
    with pytest.raises(ValueError):
        DiscreteMeasure1D([(1.0, -2.0)])               # negative weight
    with pytest.raises(ValueError):
        DiscreteMeasure2D([((1.0, 0.0), 1.0)])         # zero height


def test_measure_file_round_trip_and_diagnostics():
    s = DiscreteMeasure1D([(1.0, 2.0), (4.0, 0.5)])
    m = DiscreteMeasure2D([((1.5, 0.75), 4.0)])
    path = tempfile.mktemp(suffix=".json")
    try:
        save_measure_file(path, 1.5, s, m)
        lam, s2, m2 = load_measure_file(path)
        assert lam == 1.5
        np.testing.assert_allclose(s2.ys, s.ys)
        np.testing.assert_allclose(s2.ws, s.ws)
        np.testing.assert_allclose(m2.xs, m.xs)
        np.testing.assert_allclose(m2.ts, m.ts)
        np.testing.assert_allclose(m2.ws, m.ws)
    finally:
        os.unlink(path)

    bad = tempfile.mktemp(suffix=".json")
    with open(bad, "w") as fh:
        fh.write('{"lambda": 1.0}')
    try:
        with pytest.raises(MeasureFormatError):
            load_measure_file(bad)
    finally:
        os.unlink(bad)
