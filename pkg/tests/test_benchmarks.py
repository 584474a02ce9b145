"""Benchmark blackboxes against independently coded scalar oracles."""
import math
import time

import numpy as np
import pytest

from cnma.benchmarks import (
    BAND_COEFFS,
    REGISTRY,
    UnknownBuiltinError,
    band_curve,
    band_forward,
    builtin_problem_names,
    builtin_problem_path,
    get_builtin,
    parking_forward,
    polak3_forward,
    rosenbrock_forward,
)
from cnma.problem import check_constraints, load_problem

# Reference solution listing for polak3: inputs x1..x11 then u, and the ten
# constraint responses they produce.
POLAK3_SOLUTION_X = (
    -0.025802716144530603,
    0.267246588244859,
    0.11409408476703223,
    0.16516646437336022,
    -0.15582812349227032,
    -0.0434702545214761,
    0.2699575598670672,
    0.021578735032435736,
    0.27952956951645413,
    0.2537270238373449,
    0.046348332349110455,
    6.315250767638159,
)
POLAK3_SOLUTION_Y = (
    -0.21884700655881772,
    -0.7617891125086622,
    -1.167333092823653,
    -0.10171508987575084,
    -1.2243184765747221,
    -0.9139871220406643,
    -0.04651122087569082,
    -0.46619849507939204,
    -1.3713955572721979,
    -0.16156764926343392,
)


def polak3_scalar(x):
    """Loop-and-math.exp transcription, independent of the numpy version."""
    u = x[11]
    out = []
    for i in range(10):
        total = 0.0
        for j in range(1, 12):
            total += (1.0 / j) * math.exp((x[j - 1] - math.sin(i + 2 * j)) ** 2)
        out.append(total - u)
    return out


class TestPolak3:
    def test_reference_solution_reproduced(self):
        got = polak3_forward(POLAK3_SOLUTION_X)
        assert got == pytest.approx(POLAK3_SOLUTION_Y, abs=1e-9)

    def test_matches_scalar_transcription(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            x = np.concatenate([rng.uniform(-1, 1, 11), rng.uniform(-1, 10, 1)])
            assert polak3_forward(x) == pytest.approx(
                polak3_scalar(x), abs=1e-12
            )
        assert polak3_forward(POLAK3_SOLUTION_X) == pytest.approx(
            polak3_scalar(POLAK3_SOLUTION_X), abs=1e-12
        )

    def test_linear_in_u(self):
        # u enters every output as a plain -u term
        rng = np.random.default_rng(3)
        x = rng.uniform(-1, 1, 12)
        for delta in (0.25, -1.5, 3.0):
            shifted = x.copy()
            shifted[11] += delta
            assert polak3_forward(shifted) == pytest.approx(
                polak3_forward(x) - delta, abs=1e-12
            )

    def test_origin_with_large_u_is_feasible(self):
        x = np.zeros(12)
        x[11] = 10.0
        assert (polak3_forward(x) < 0.0).all()

    def test_outputs_within_declared_bounds(self):
        problem = load_problem(builtin_problem_path("polak3"))
        lo = np.array([v.lower for v in problem.outputs])
        hi = np.array([v.upper for v in problem.outputs])
        rng = np.random.default_rng(7)
        for _ in range(500):
            x = np.concatenate([rng.uniform(-1, 1, 11), rng.uniform(-1, 10, 1)])
            y = polak3_forward(x)
            assert (y >= lo).all() and (y <= hi).all()

    def test_arity_enforced(self):
        with pytest.raises(ValueError, match="12 inputs"):
            polak3_forward(np.zeros(11))


class TestRosenbrock:
    def test_minimum_at_one_one(self):
        assert rosenbrock_forward((1.0, 1.0))[0] == 0.0

    def test_matches_formula(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            a, b = rng.uniform(-2, 2, 2)
            want = (1 - a) ** 2 + 100 * (b - a * a) ** 2
            assert rosenbrock_forward((a, b))[0] == pytest.approx(want, rel=1e-12)

    def test_arity_enforced(self):
        with pytest.raises(ValueError, match="2 inputs"):
            rosenbrock_forward((1.0, 2.0, 3.0))


class TestBand:
    def test_curve_matches_scalar_transcription(self):
        a0, a1, a2, b1, c1, d1 = BAND_COEFFS
        for theta in np.linspace(20, 40, 97):
            t = (theta - 30.0) / 10.0
            want = a0 + a1 * t + a2 * t * t + b1 * math.sin(c1 * t + d1)
            assert float(band_curve(theta)) == pytest.approx(want, abs=1e-12)

    def test_curve_is_vectorized(self):
        thetas = np.linspace(20, 40, 31)
        batch = band_curve(thetas)
        singles = [float(band_curve(t)) for t in thetas]
        assert batch == pytest.approx(singles, abs=0)

    def test_grid_oracle_finds_in_band_points_outside_stall_window(self):
        problem = load_problem(builtin_problem_path("band"))
        params = problem.blackbox.params
        thetas = np.linspace(20, 40, 2001)
        g = band_curve(thetas)
        stalled = (thetas >= params["timeout_lo"]) & (thetas <= params["timeout_hi"])
        in_band = (g >= 0.25) & (g <= 0.4) & ~stalled
        assert in_band.any()

    def test_curve_range_within_declared_output_bounds(self):
        # chord, vx, vy are pinned at 0.5, 1, 1 so f reduces to band_curve
        problem = load_problem(builtin_problem_path("band"))
        f = problem.outputs[0]
        g = band_curve(np.linspace(20, 40, 4001))
        assert g.min() >= f.lower and g.max() <= f.upper

    def test_forward_scales_curve(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            chord, vx, vy = rng.uniform(0.1, 2.0, 3)
            theta = rng.uniform(20, 40)
            want = chord * (vx * vx + vy * vy) * float(band_curve(theta))
            got = band_forward((chord, vx, vy, theta))
            assert got[0] == pytest.approx(want, rel=1e-12)

    def test_stall_window_sleeps(self):
        start = time.monotonic()
        band_forward((0.5, 1, 1, 30.0), timeout_lo=28, timeout_hi=32,
                     stall_seconds=0.1)
        assert time.monotonic() - start >= 0.09

    def test_outside_stall_window_returns_quickly(self):
        start = time.monotonic()
        band_forward((0.5, 1, 1, 20.0), timeout_lo=28, timeout_hi=32,
                     stall_seconds=30.0)
        assert time.monotonic() - start < 1.0

    def test_arity_enforced(self):
        with pytest.raises(ValueError, match="4 inputs"):
            band_forward((1.0, 2.0))


@pytest.fixture(scope="module")
def geometry():
    return dict(load_problem(builtin_problem_path("parking")).blackbox.params)


class TestParking:
    def test_deterministic(self, geometry):
        a = parking_forward((2.0, 0.1, 0.3, 35.0), **geometry)
        b = parking_forward((2.0, 0.1, 0.3, 35.0), **geometry)
        assert (a == b).all()

    def test_known_feasible_point(self, geometry):
        safe, clearance, t_stop = parking_forward((1.5, 0.1, 0.2, 30.0), **geometry)
        assert safe == 1.0
        assert clearance >= 0.0
        assert 0.0 < t_stop <= geometry["horizon"]

    def test_known_feasible_point_passes_problem_constraints(self, geometry):
        problem = load_problem(builtin_problem_path("parking"))
        x = (1.5, 0.1, 0.2, 30.0)
        y = parking_forward(x, **geometry)
        assert check_constraints(problem.constraints, problem.assignment(x, y))

    def test_stationary_car_never_parks(self, geometry):
        safe, _, t_stop = parking_forward((0.0, 0.1, 0.3, 30.0), **geometry)
        assert safe == 0.0
        assert t_stop == geometry["horizon"]

    def test_flat_curve_cannot_start(self, geometry):
        # damp = 0 leaves the sigmoid at height H/2 everywhere, far from the
        # required start pose
        safe, _, t_stop = parking_forward((2.0, 0.1, 0.0, 30.0), **geometry)
        assert safe == 0.0
        assert t_stop == geometry["horizon"]

    def test_stopping_at_start_is_not_parked(self, geometry):
        safe, _, t_stop = parking_forward((2.0, 0.1, 0.5, 100.0), **geometry)
        assert safe == 0.0
        assert t_stop == 0.0

    def test_outputs_within_declared_bounds(self, geometry):
        problem = load_problem(builtin_problem_path("parking"))
        lo = np.array([v.lower for v in problem.outputs])
        hi = np.array([v.upper for v in problem.outputs])
        rng = np.random.default_rng(13)
        for _ in range(200):
            x = [rng.uniform(v.lower, v.upper) for v in problem.inputs]
            y = parking_forward(x, **geometry)
            assert (y >= lo).all() and (y <= hi).all()
            assert y[0] in (0.0, 1.0)

    def test_arity_enforced(self, geometry):
        with pytest.raises(ValueError, match="4 inputs"):
            parking_forward((1.0,), **geometry)


class TestRegistry:
    def test_unknown_builtin_names_known_ones(self):
        with pytest.raises(UnknownBuiltinError, match="polak3"):
            get_builtin("warp_drive")

    def test_declared_arities_match_functions(self):
        # safe probe inputs: zero sleep for the blockers
        probes = {
            "polak3": np.zeros(12),
            "rosenbrock": np.zeros(2),
            "band": np.array([0.5, 1.0, 1.0, 20.0]),
            "parking": np.array([1.0, 0.1, 0.3, 30.0]),
            "sleeper": np.zeros(1),
        }
        for name, builtin in REGISTRY.items():
            x = probes[name]
            assert len(x) == builtin.in_arity
            assert len(builtin.fn(x)) == builtin.out_arity

    def test_shipped_problem_files(self):
        assert builtin_problem_names() == [
            "band", "parking", "polak3", "rosenbrock",
        ]
        for name in builtin_problem_names():
            problem = load_problem(builtin_problem_path(name))
            builtin = get_builtin(problem.blackbox.target)
            assert len(problem.inputs) == builtin.in_arity
            assert len(problem.outputs) == builtin.out_arity

    def test_unknown_problem_path(self):
        with pytest.raises(UnknownBuiltinError, match="no shipped problem"):
            builtin_problem_path("warp_drive")
