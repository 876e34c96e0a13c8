import hashlib

import numpy as np
import pytest

from icecontour.geometry import lengths_from_field
from icecontour.io import load_json, read_field
from icecontour.synthetic import (SyntheticScenario, build_mask, concentration_from_binary,
                                  default_region, simulate)

TINY = dict(nrows=16, ncols=16, n_years=3, members=4, leads=(0.5,))


def _digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_same_seed_gives_identical_files(tmp_path):
    scn = SyntheticScenario(**TINY, polynya_rate=0.5)
    simulate(scn, tmp_path / "a")
    simulate(scn, tmp_path / "b")
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")


def test_perfect_ensemble_reproduces_the_truth(tmp_path):
    scn = SyntheticScenario(**TINY, skill_timescale=None, dispersion=0.0)
    simulate(scn, tmp_path)
    for year in scn.years:
        obs = read_field(tmp_path / str(year) / "09" / "obs_binary.json")
        for k in range(scn.members):
            m = read_field(tmp_path / str(year) / "09" / "0.5" / f"member_{k:02d}.json")
            assert np.array_equal(m.values, obs.values, equal_nan=True)


def test_bias_shows_up_as_a_length_gap(tmp_path):
    scn = SyntheticScenario(nrows=32, ncols=32, n_years=30, members=3, leads=(0.5,),
                            skill_timescale=None, dispersion=0.0, bias_km=50.0,
                            summer_prop=0.35, winter_prop=0.6)
    simulate(scn, tmp_path)
    mask = build_mask(scn)
    geom = default_region(scn).build(mask)
    gaps = []
    for year in scn.years:
        obs = lengths_from_field(geom, read_field(tmp_path / str(year) / "09" / "obs_binary.json"))
        ens = np.mean([lengths_from_field(geom, read_field(tmp_path / str(year) / "09" / "0.5" / f"member_{k:02d}.json"))
                       for k in range(3)], axis=0)
        free = (obs + 50 < geom.line_length) & (obs > 0)
        gaps.append((ens - obs)[free])
    # raster quantisation costs up to a cell either way
    assert np.mean(np.concatenate(gaps)) == pytest.approx(50.0, abs=12.5)


def test_concentration_agrees_with_binary(tmp_path):
    scn = SyntheticScenario(**TINY, polynya_rate=1.0)
    simulate(scn, tmp_path)
    for month in (3, 9):
        b = read_field(tmp_path / "2001" / f"{month:02d}" / "obs_binary.json")
        c = read_field(tmp_path / "2001" / f"{month:02d}" / "obs_conc.json")
        assert np.array_equal(c.values >= 0.15, b.values == 1)


def test_manifest_records_truth(tmp_path):
    scn = SyntheticScenario(**TINY)
    man = simulate(scn, tmp_path)
    disk = load_json(tmp_path / "manifest.json")
    assert disk["truth"]["sigma"] == scn.sigma and disk["truth"]["kappa"] == scn.kappa
    assert len(disk["truth"]["mu"]) == 12 and man["years"] == scn.years


def test_scenario_validation_lists_problems():
    with pytest.raises(ValueError, match="sigma.*member"):
        SyntheticScenario(sigma=-1, members=0)
    with pytest.raises(ValueError, match="unknown scenario keys"):
        SyntheticScenario.from_dict({"bogus": 1})
    scn = SyntheticScenario(**TINY)
    assert SyntheticScenario.from_dict(scn.to_dict()) == scn


def test_concentration_from_binary_thresholds_back():
    scn = SyntheticScenario(**TINY)
    mask = build_mask(scn)
    from icecontour.grid import BinaryField

    v = np.where(mask.ocean, 0.0, np.nan)
    v[1:8, 2:10] = np.where(mask.ocean[1:8, 2:10], 1.0, np.nan)
    c = concentration_from_binary(BinaryField(mask.grid, v), mask)
    assert np.array_equal(c.values >= 0.15, v == 1)
