import numpy as np
import pytest

from icecontour.grid import BinaryField, ConcentrationField, GridSpec
from icecontour.mixture import mcf_binary
from icecontour.grid import ensemble_probability
from icecontour.reference import (DampedPersistence, PersistenceFitError, climatology_binary,
                                  ensemble_binary, fit_persistence, init_year,
                                  predict_concentration, predict_persistence,
                                  read_persistence_fit, write_persistence_fit)

G = GridSpec(1, 1)


def _years(count, total):
    return [BinaryField(G, [[1.0 if k < count else 0.0]]) for k in range(total)]


def test_climatology_majority_is_inclusive():
    assert climatology_binary(_years(5, 10)).values[0, 0] == 1
    assert climatology_binary(_years(4, 10)).values[0, 0] == 0
    assert climatology_binary(_years(1, 1)).values[0, 0] == 1
    assert climatology_binary(_years(2, 3)).values[0, 0] == 1


def test_ensemble_median_with_ties_to_ice():
    assert ensemble_binary(_years(13, 25)).values[0, 0] == 1
    assert ensemble_binary(_years(12, 25)).values[0, 0] == 0
    assert ensemble_binary(_years(2, 4)).values[0, 0] == 1


def test_ensemble_binary_equals_thresholded_ensemble_probability(rng):
    g = GridSpec(4, 5)
    members = [BinaryField(g, rng.integers(0, 2, (4, 5))) for _ in range(6)]
    assert np.array_equal(ensemble_binary(members).values, mcf_binary(ensemble_probability(members)).values)


def test_init_year_convention():
    assert init_year(2010, 8, 9) == 2010
    assert init_year(2010, 9, 9) == 2010
    assert init_year(2010, 12, 1) == 2009


def _series(years, values, month):
    return [ConcentrationField(GridSpec(1, len(v)), [v], year=y, month=month) for y, v in zip(years, values)]


def test_rho_zero_when_init_series_is_constant():
    years = list(range(2000, 2010))
    target = _series(years, [[0.3 + 0.01 * k] for k in range(10)], 9)
    init = _series(years, [[0.5]] * 10, 8)
    fit = fit_persistence(target, init, 9, 8)
    assert fit.rho[0, 0] == 0.0
    pred = predict_concentration(fit, init[0], 2012).values[0, 0]
    assert pred == pytest.approx(0.3 + 0.01 * 12)


def test_rho_one_for_perfect_persistence(rng):
    years = list(range(2000, 2012))
    v = rng.uniform(0.2, 0.8, 12)
    fit = fit_persistence(_series(years, [[x] for x in v], 9), _series(years, [[x] for x in v], 8), 9, 8)
    assert fit.rho[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_rho_matches_pearson_of_detrended_pairs(rng):
    years = np.arange(2000, 2015)
    ci = 0.5 + 0.01 * (years - 2000) + rng.normal(0, 0.05, 15)
    cm = 0.3 - 0.005 * (years - 2000) + 0.6 * (ci - ci.mean()) + rng.normal(0, 0.03, 15)
    fit = fit_persistence(_series(years, [[x] for x in cm], 3), _series(years - 1, [[x] for x in ci], 11), 3, 11)
    # init month 11 precedes target month 3, so it belongs to the previous year
    ri = ci - np.polyval(np.polyfit(years - 1, ci, 1), years - 1)
    rm = cm - np.polyval(np.polyfit(years, cm, 1), years)
    assert fit.rho[0, 0] == pytest.approx(np.corrcoef(ri, rm)[0, 1], abs=1e-12)


def test_too_few_years():
    with pytest.raises(PersistenceFitError):
        fit_persistence(_series([2000, 2001], [[0.1], [0.2]], 9), _series([2000, 2001], [[0.1], [0.2]], 8), 9, 8)


def test_prediction_is_invariant_to_year_relabeling(rng):
    years = np.arange(2000, 2012)
    cm = rng.uniform(0, 1, (12, 3))
    ci = rng.uniform(0, 1, (12, 3))
    now = ConcentrationField(GridSpec(1, 3), [rng.uniform(0, 1, 3)])
    a = predict_concentration(fit_persistence(_series(years, cm, 9), _series(years, ci, 8), 9, 8), now, 2012)
    b = predict_concentration(fit_persistence(_series(years + 50, cm, 9), _series(years + 50, ci, 8), 9, 8), now, 2062)
    assert np.allclose(a.values, b.values, atol=1e-9)


def test_prediction_is_clamped_and_thresholded():
    years = list(range(2000, 2005))
    target = _series(years, [[0.2 * k] for k in range(5)], 9)
    init = _series(years, [[0.5]] * 5, 8)
    fit = fit_persistence(target, init, 9, 8)
    assert predict_concentration(fit, init[0], 2010).values[0, 0] == 1.0
    assert predict_persistence(fit, init[0], 2010).values[0, 0] == 1.0


def test_fit_dump_round_trip(tmp_path, rng):
    years = list(range(2000, 2006))
    fit = fit_persistence(_series(years, rng.uniform(0, 1, (6, 2)), 9),
                          _series(years, rng.uniform(0, 1, (6, 2)), 8), 9, 8)
    write_persistence_fit(tmp_path, fit)
    back = read_persistence_fit(tmp_path, 9, 8)
    assert np.allclose(back.rho, fit.rho, atol=1e-6)
    assert np.allclose(back.slope_m, fit.slope_m, atol=1e-6)


def test_estimator_wrapper(rng):
    years = list(range(2000, 2008))
    target = _series(years, rng.uniform(0, 1, (8, 2)), 9)
    init = _series(years, rng.uniform(0, 1, (8, 2)), 8)
    est = DampedPersistence(9, 8).fit(target, init)
    out = est.predict(init[-1], 2008)
    assert set(np.unique(out.values)) <= {0.0, 1.0}
