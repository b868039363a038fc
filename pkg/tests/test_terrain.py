import math

import numpy as np
import pytest

from gaitforge.terrain import Terrain, parse_terrain


def test_stairs_height():
    assert Terrain("stairs", step_length=0.5, step_height=0.1).height(0.75, 0.0) == pytest.approx(0.1)
    assert Terrain("stairs", step_length=0.5, step_height=0.1).height(-0.2, 0.0) == 0.0


def test_slope_height_descends_for_positive_alpha():
    assert Terrain("slope", alpha=0.1).height(1.0, 0.0) == pytest.approx(-math.tan(0.1), abs=1e-15)
    assert Terrain("slope", alpha=-0.1).height(1.0, 0.0) == pytest.approx(0.10033467, abs=1e-8)


def test_sinusoid_height():
    t = Terrain("sinusoid", amplitude=0.05, wavelength=2.0)
    assert t.height(0.5, 0.0) == pytest.approx(0.05, abs=1e-15)


def test_varying_slope_is_continuous():
    t = Terrain("varying_slope", segments=((1.0, 0.1), (1.0, -0.2)))
    assert t.height(1.0 - 1e-9, 0) == pytest.approx(t.height(1.0 + 1e-9, 0), abs=1e-8)
    assert t.height(2.0, 0) == pytest.approx(-math.tan(0.1) + math.tan(0.2), abs=1e-12)


@pytest.mark.parametrize("terrain", [Terrain("slope", alpha=0.2, gamma=-0.1),
                                     Terrain("sinusoid", amplitude=0.05, wavelength=1.5)])
def test_normal_is_unit_and_orthogonal_to_surface(terrain):
    for x in np.linspace(-1, 1, 7):
        n = terrain.normal(x, 0.3)
        assert np.linalg.norm(n) == pytest.approx(1.0, abs=1e-12)
        eps = 1e-6
        tx = np.array([2 * eps, 0.0, terrain.height(x + eps, 0.3) - terrain.height(x - eps, 0.3)])
        ty = np.array([0.0, 2 * eps, terrain.height(x, 0.3 + eps) - terrain.height(x, 0.3 - eps)])
        assert abs(n @ tx) / np.linalg.norm(tx) < 1e-7
        assert abs(n @ ty) / np.linalg.norm(ty) < 1e-7


def test_parse_terrain():
    assert parse_terrain("flat") == Terrain()
    assert parse_terrain("slope:7").alpha == pytest.approx(math.radians(7))
    assert parse_terrain("stairs:0.4:0.085").step_height == 0.085
    assert parse_terrain("slope:-10").label() == "slope:-10"
    for bad in ("", "slope", "stairs:0.4", "hills:3", "slope:x"):
        with pytest.raises(ValueError):
            parse_terrain(bad)


def test_terrain_validation():
    with pytest.raises(ValueError):
        Terrain("stairs", step_length=0.0, step_height=0.1)
    with pytest.raises(ValueError):
        Terrain("lava")
