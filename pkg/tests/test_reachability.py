import numpy as np
import pytest

from reachguard.experiments import verify_reach
from reachguard.reachability import (
    CSV_HEADER,
    LipschitzBounds,
    RankDeficientData,
    TrajectoryData,
    TrajectoryFormatError,
    covering_radius,
    estimate_lipschitz,
    lipschitz_zonotope,
    load_trajectories,
    model_error_zonotope,
    read_trajectory_runs,
    reach,
    regressor,
    write_trajectories,
)
from reachguard.setops import Zonotope, box, contains_point, support
from reachguard.simworld import collect_data, domain_probes, noise_zonotope


def _linear_runs(A, B, rng, runs=3, length=20):
    out = []
    for _ in range(runs):
        x = rng.normal(size=A.shape[0])
        xs, us = [x], []
        for _ in range(length - 1):
            u = rng.normal(size=B.shape[1])
            x = A @ x + B @ u
            xs.append(x)
            us.append(u)
        out.append((np.array(xs), np.array(us)))
    return out


def _zero_bounds(n):
    return LipschitzBounds(np.zeros(n), np.full(n, 1e-12))


# --- data matrices and CSV ----------------------------------------------


def test_shift_arithmetic():
    d = TrajectoryData.from_runs([(np.zeros((3, 4)), np.zeros((2, 2)))])
    assert d.num_samples == 2
    d = TrajectoryData.from_runs([(np.zeros((5, 4)), np.zeros((4, 2))), (np.ones((7, 4)), np.ones((6, 2)))])
    assert d.num_samples == 10
    assert d.boundaries == (0, 4)
    # no column pairs a state of run 0 with a state of run 1
    assert np.all(d.x_minus[:, :4] == 0) and np.all(d.x_plus[:, :4] == 0)
    assert np.all(d.x_minus[:, 4:] == 1)


def test_from_runs_errors():
    with pytest.raises(TrajectoryFormatError):
        TrajectoryData.from_runs([(np.zeros((1, 4)), np.zeros((0, 2)))])
    with pytest.raises(TrajectoryFormatError):
        TrajectoryData.from_runs([(np.zeros((3, 4)), np.zeros((3, 2)))])
    with pytest.raises(TrajectoryFormatError):
        TrajectoryData.from_runs([])


def test_csv_round_trip_is_bit_exact(tmp_path, rng):
    runs = [(rng.normal(size=(6, 4)), rng.normal(size=(5, 2))), (rng.normal(size=(4, 4)), rng.normal(size=(3, 2)))]
    path = tmp_path / "traj.csv"
    write_trajectories(path, runs, header={"seed": 7})
    text = path.read_text().splitlines()
    assert text[0] == "# seed=7"
    assert text[1] == ",".join(CSV_HEADER)
    assert text[7].endswith(",,")  # final row of run 0 has no inputs
    back = read_trajectory_runs(path)
    for (s, u), (s2, u2) in zip(runs, back):
        assert np.array_equal(s, s2) and np.array_equal(u, u2)
    d1, d2 = TrajectoryData.from_runs(runs), load_trajectories(path)
    assert np.array_equal(d1.x_minus, d2.x_minus)
    assert np.array_equal(d1.x_plus, d2.x_plus)
    assert np.array_equal(d1.u_minus, d2.u_minus)


@pytest.mark.parametrize(
    "body, match",
    [
        ("a,b\n", "bad header"),
        (",".join(CSV_HEADER) + "\n0,0,1,2,3\n", "expected 8 fields"),
        (",".join(CSV_HEADER) + "\n0,0,1,2,3,x,0.1,0.2\n0,1,1,2,3,4,,\n", "row 2"),
        (",".join(CSV_HEADER) + "\n0,0,1,2,3,4,,\n0,1,1,2,3,4,,\n", "missing input"),
        (",".join(CSV_HEADER) + "\n0,0,1,2,3,4,0.1,0.2\n0,1,1,2,3,4,0.1,0.2\n", "must have empty inputs"),
        (",".join(CSV_HEADER) + "\n0,0,1,2,3,4,,\n", "shorter than 2"),
        (",".join(CSV_HEADER) + "\n0,0,1,2,3,4,0,0\n0,2,1,2,3,4,,\n", "steps must be"),
        ("", "empty"),
    ],
)
def test_csv_errors(tmp_path, body, match):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(TrajectoryFormatError, match=match):
        load_trajectories(path)


def test_collect_data_writes_600_rows_deterministically(tmp_path, open_world):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    collect_data(open_world, 600, seed=3, out=a)
    collect_data(open_world, 600, seed=3, out=b)
    assert a.read_bytes() == b.read_bytes()
    rows = [ln for ln in a.read_text().splitlines() if not ln.startswith("#")][1:]
    assert len(rows) == 600
    c = tmp_path / "c.csv"
    collect_data(open_world, 600, seed=4, out=c)
    assert c.read_bytes() != a.read_bytes()


# --- Lipschitz and covering radius --------------------------------------


def test_lipschitz_of_linear_contraction(rng):
    xs = rng.uniform(-1, 1, (50, 2))
    d = TrajectoryData(xs.T, 0.5 * xs.T, np.zeros((1, 50)))
    b = estimate_lipschitz(d)
    assert np.all(b.lstar >= 0.5 - 1e-6)
    assert np.all(b.lstar <= 0.5 + 1e-9)


def test_lipschitz_of_constant_map(rng):
    xs = rng.uniform(-1, 1, (30, 2))
    d = TrajectoryData(xs.T, np.ones((2, 30)), rng.normal(size=(1, 30)))
    assert np.array_equal(estimate_lipschitz(d).lstar, [0.0, 0.0])


def test_duplicate_samples_warn_and_are_skipped():
    x = np.array([[0.0, 0.0, 1.0]])
    d = TrajectoryData(x, np.array([[0.0, 1.0, 2.0]]), np.zeros((1, 3)))
    with pytest.warns(UserWarning, match="duplicate"):
        b = estimate_lipschitz(d)
    assert np.isfinite(b.lstar).all()


def test_lipschitz_needs_two_samples():
    with pytest.raises(ValueError):
        estimate_lipschitz(TrajectoryData(np.zeros((2, 1)), np.zeros((2, 1)), np.zeros((1, 1))))


def test_unicycle_bounds_finite_and_delta_shrinks_with_more_data(open_world, bounds):
    assert np.all(np.isfinite(bounds.lstar)) and np.all(bounds.lstar > 0)
    probes = domain_probes()
    deltas = []
    for steps in (600, 1200, 2400):
        d = collect_data(open_world, steps, seed=0, trajectories=steps // 30)
        deltas.append(estimate_lipschitz(d, invariant_dims=(0, 1), probes=probes).delta[0])
    assert deltas[0] > deltas[1] > deltas[2]


def test_noise_aware_lipschitz_is_smaller(data, open_world):
    plain = estimate_lipschitz(data, invariant_dims=(0, 1), probes=domain_probes())
    aware = estimate_lipschitz(
        data, invariant_dims=(0, 1), probes=domain_probes(), noise_half_widths=[0.002, 0.002, 0.001, 0.001]
    )
    assert np.all(aware.lstar <= plain.lstar)
    with pytest.raises(ValueError):
        estimate_lipschitz(data, noise_half_widths=[0.1])


def test_covering_radius_on_grid_data():
    g = np.linspace(0, 1, 11)
    pts = np.array(np.meshgrid(g, g)).reshape(2, -1)
    assert covering_radius(pts, resolution=11) == pytest.approx(0.0, abs=1e-12)
    sparse = pts[:, ::2]
    assert covering_radius(sparse, resolution=21) > 0


def test_lipschitz_zonotope():
    z = lipschitz_zonotope(LipschitzBounds([2.0, 4.0], [0.1, 0.1]))
    assert np.allclose(z.generators, np.diag([0.1, 0.2]))
    assert not z.center.any()
    z0 = lipschitz_zonotope(LipschitzBounds([0.0, 0.0], [0.1, 0.1]))
    assert not z0.generators.any()
    for d in np.random.default_rng(0).normal(size=(20, 2)):
        assert support(z, d) == pytest.approx(support(z, -d))


def test_lipschitz_bounds_validation():
    with pytest.raises(ValueError):
        LipschitzBounds([-1.0], [0.1])
    with pytest.raises(ValueError):
        LipschitzBounds([1.0], [0.0])


# --- regressor ----------------------------------------------------------


def test_regressor_recovers_linear_system(rng):
    A = np.array([[0.9, 0.1], [-0.2, 0.8]])
    B = np.array([[0.5], [0.1]])
    d = TrajectoryData.from_runs(_linear_runs(A, B, rng))
    M = regressor(d, np.zeros(2), np.zeros(2), np.zeros(1))
    assert np.allclose(M[:, 0], 0.0, atol=1e-6)
    assert np.allclose(M[:, 1:3], A, atol=1e-6)
    assert np.allclose(M[:, 3:], B, atol=1e-6)


def test_regressor_translation_equivariance(rng):
    A = np.array([[1.0, 0.1], [0.0, 1.0]])
    B = np.array([[0.0], [0.1]])
    d = TrajectoryData.from_runs(_linear_runs(A, B, rng))
    t = np.array([3.0, -2.0])
    shifted = TrajectoryData(d.x_minus + t[:, None], d.x_plus + t[:, None], d.u_minus)
    x0 = np.array([0.2, 0.1])
    M1 = regressor(d, np.zeros(2), x0, np.zeros(1))
    M2 = regressor(shifted, np.zeros(2), x0 + t, np.zeros(1))
    assert np.allclose(M1[:, 1:], M2[:, 1:], atol=1e-9)


def test_regressor_affine_column_is_local_mean(rng):
    # nonlinear map sampled densely around a point
    f = lambda x, u: np.array([np.sin(x[0]) + u[0], x[1] ** 2])  # noqa: E731
    x0, u0 = np.array([0.3, 0.5]), np.array([0.1])
    xs = x0 + rng.uniform(-1e-3, 1e-3, (200, 2))
    us = u0 + rng.uniform(-1e-3, 1e-3, (200, 1))
    d = TrajectoryData(xs.T, np.array([f(x, u) for x, u in zip(xs, us)]).T, us.T)
    M = regressor(d, np.zeros(2), x0, u0)
    assert np.allclose(M[:, 0], f(x0, u0), atol=1e-5)


def test_regressor_rank_deficient():
    d = TrajectoryData(np.ones((2, 10)), np.ones((2, 10)), np.zeros((1, 10)))
    with pytest.raises(RankDeficientData):
        regressor(d, np.zeros(2), np.zeros(2), np.zeros(1))


def test_model_error_modes():
    noise = box([0, 0], [0.1, 0.1])
    sound = model_error_zonotope(np.array([-0.3, -0.05]), np.array([0.3, 0.05]), noise, "sound")
    diff = model_error_zonotope(np.array([-0.3, -0.05]), np.array([0.3, 0.05]), noise, "difference")
    assert np.allclose(np.abs(sound.generators).sum(axis=1), [0.4, 0.15])
    # second dimension: the difference would be empty, falls back to the residual box
    assert np.allclose(np.abs(diff.generators).sum(axis=1), [0.2, 0.05])
    with pytest.raises(ValueError):
        model_error_zonotope(np.zeros(2), np.zeros(2), noise, "other")


# --- reach --------------------------------------------------------------


def test_reach_trivial_integrator(rng):
    n = 2
    A, B = np.eye(n), np.eye(n)
    d = TrajectoryData.from_runs(_linear_runs(A, B, rng))
    w = Zonotope(np.zeros(n), np.zeros((n, 0)))
    x0 = np.array([1.0, -1.0])
    u = np.array([0.3, 0.2])
    tube = reach(Zonotope(x0), [u], d, w, _zero_bounds(n))
    assert tube.horizon == 1
    assert np.allclose(tube.sets[1].center, x0 + u, atol=1e-6)
    assert contains_point(tube.sets[1], x0 + u)
    assert np.max(np.abs(tube.sets[1].generators).sum(axis=1)) < 1e-5


def test_reach_zero_plan_fixed_point(rng):
    d = TrajectoryData.from_runs(_linear_runs(np.eye(2), np.zeros((2, 1)), rng))
    w = Zonotope(np.zeros(2), np.zeros((2, 0)))
    init = box([0.5, 0.5], [0.1, 0.1])
    tube = reach(init, np.zeros((4, 1)), d, w, _zero_bounds(2))
    for s in tube.sets:
        assert contains_point(s, init.center)


def test_reach_structure_and_empty_plan(ctx):
    init = box([0, 0, 1, 0], [0.005] * 4)
    empty = ctx.tube(init, np.zeros((0, 2)))
    assert empty.horizon == 0 and empty.sets[0] is init
    tube = ctx.tube(init, np.tile([0.3, 0.1], (3, 1)))
    assert tube.sets[0] is init
    assert len(tube.regressors) == len(tube.sets) - 1 == 3
    assert all(M.shape == (4, 7) for M in tube.regressors)
    for x_star, s in zip(tube.nominal_states, tube.sets[:-1]):
        assert np.array_equal(x_star, s.center)


def test_reach_regressors_match_direct_fit(ctx):
    init = box([1.0, -0.5, 0.6, 0.8], [0.005] * 4)
    tube = ctx.tube(init, np.array([[0.4, 0.2], [0.1, -0.3], [0.0, 0.0]]))
    for M, x_star, u_star in zip(tube.regressors, tube.nominal_states, tube.nominal_inputs):
        assert np.allclose(M, regressor(ctx.data, ctx.noise.center, x_star, u_star), atol=1e-10)


def test_reach_dimension_errors(ctx):
    with pytest.raises(ValueError):
        ctx.tube(box([0, 0], [1, 1]), [[0.1, 0.0]])
    with pytest.raises(ValueError):
        ctx.tube(box([0, 0, 1, 0], [0.01] * 4), [[0.1, 0.0, 0.0]])


def test_reach_monotone_in_noise(data, bounds, rng):
    init = box([0, 0, 1, 0], [0.005] * 4)
    plan = rng.uniform([0, -0.5], [0.5, 0.5], (3, 2))
    small = reach(init, plan, data, noise_zonotope(), bounds)
    big = reach(init, plan, data, noise_zonotope([0.004, 0.004, 0.002, 0.002]), bounds)
    for s, b in zip(small.sets, big.sets):
        for d in rng.normal(size=(50, 4)):
            assert support(b, d) >= support(s, d) - 1e-9


def test_reach_generator_growth(data, bounds, open_world):
    n, m = 4, 2
    w = open_world.noise
    init = box([0, 0, 1, 0], [0.005] * 4)
    tube = reach(init, np.tile([0.2, 0.1], (6, 1)), data, w, bounds, generator_cap=None)
    limit = n + m + w.num_generators + n + n
    for a, b in zip(tube.sets, tube.sets[1:]):
        assert b.num_generators - a.num_generators <= limit
    capped = reach(init, np.tile([0.2, 0.1], (6, 1)), data, w, bounds, generator_cap=20)
    assert max(s.num_generators for s in capped.sets) <= 20


def test_reach_contains_simulator_rollouts(ctx, open_world):
    rep = verify_reach(ctx, open_world, 100, plans=5, seed=1)
    assert rep.checks == 300
    assert rep.escapes == 0


def test_verify_reach_zero_rollouts_warns(ctx, open_world):
    with pytest.warns(UserWarning, match="no rollouts"):
        rep = verify_reach(ctx, open_world, 0)
    assert rep.checks == 0 and rep.passed
