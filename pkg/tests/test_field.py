import numpy as np
import pytest

from chemobranch import (EmpiricalMeasure, Field, FieldPath, GridMismatch,
                         GridSpec, Kernel, NonFiniteQuery, deposit,
                         semigroup_step)
from chemobranch.field import field_from_bytes, field_to_bytes, field_to_csv_lines


@pytest.fixture
def grid1():
    return GridSpec(1, 128, 8.0)


@pytest.fixture
def grid2():
    return GridSpec(2, 64, 8.0)


def reference_periodized_gaussian(offset, width, extent, images=3):
    """Independent slow implementation of the mollifier profile."""
    acc = 0.0
    for m in range(-images, images + 1):
        acc += np.exp(-((offset + m * extent) ** 2) / (2 * width ** 2))
    return acc / np.sqrt(2 * np.pi * width ** 2)


class TestKernel:
    def test_unit_mass_on_torus(self, grid1, grid2):
        for grid in (grid1, grid2):
            kern = Kernel(grid)
            assert abs(kern.torus_mass() - 1.0) < 1e-10

    def test_profile_matches_reference(self, grid1):
        kern = Kernel(grid1, width=0.3)
        xs = np.linspace(-12.0, 12.0, 57)
        ref = np.array([reference_periodized_gaussian(
            ((x + 4.0) % 8.0) - 4.0, 0.3, 8.0) for x in xs])
        assert np.allclose(kern.profile1d(xs), ref, rtol=1e-12)

    def test_width_bounds(self, grid1):
        with pytest.raises(ValueError):
            Kernel(grid1, width=2.0)  # wider than L/8


class TestDeposit:
    def test_single_atom_profile(self, grid1):
        kern = Kernel(grid1, width=0.25)
        n0 = 5
        mu = EmpiricalMeasure(np.array([[0.0]]), np.array([1.0 / n0]))
        src = deposit(mu, kern, grid1)
        ref = np.array([reference_periodized_gaussian(x, 0.25, 8.0)
                        for x in ((grid1.axis_coords() + 4.0) % 8.0) - 4.0])
        assert np.allclose(src, ref / n0, rtol=1e-12)

    def test_two_atoms_same_position_linearity(self, grid2):
        kern = Kernel(grid2, width=0.4)
        pos = np.array([[1.5, 3.0], [1.5, 3.0]])
        mu2 = EmpiricalMeasure(pos, np.array([0.25, 0.25]))
        mu1 = EmpiricalMeasure(pos[:1], np.array([0.25]))
        assert np.allclose(deposit(mu2, kern, grid2),
                           2.0 * deposit(mu1, kern, grid2), rtol=1e-14)

    def test_total_integral_matches_mass(self, grid1, grid2):
        # quadrature oracle: cell_volume * sum(nodes) is spectrally exact here
        rng = np.random.default_rng(3)
        for grid in (grid1, grid2):
            kern = Kernel(grid)
            pos = rng.uniform(0, grid.extent, size=(40, grid.d))
            w = rng.uniform(0.1, 1.0, size=40)
            mu = EmpiricalMeasure(pos, w)
            src = deposit(mu, kern, grid)
            total = np.sum(src) * grid.cell_volume
            assert abs(total - mu.total_mass) < 1e-8 * mu.total_mass

    def test_empty_measure(self, grid1):
        mu = EmpiricalMeasure(np.zeros((0, 1)), np.zeros(0))
        assert np.all(deposit(mu, Kernel(grid1), grid1) == 0.0)

    def test_grid_mismatch(self, grid1, grid2):
        mu = EmpiricalMeasure(np.array([[0.0]]), np.array([1.0]))
        with pytest.raises(GridMismatch):
            deposit(mu, Kernel(grid2), grid1)


class TestSemigroupStep:
    def test_constant_field_pure_decay(self, grid1):
        c, r, dt = 2.5, 0.7, 0.05
        rho = Field(grid1, np.full(grid1.shape, c))
        out = semigroup_step(rho, None, dt, D=1.0, r=r, alpha=0.0)
        assert np.allclose(out.values, c * np.exp(-r * dt), rtol=1e-14, atol=0)
        assert out.time == pytest.approx(dt)

    def test_single_mode_eigenfunction(self, grid1):
        # mode m decays by exp(-(D k^2 + r) dt) with k = 2 pi m / L
        D, r, dt, m = 0.8, 0.3, 0.04, 3
        x = grid1.axis_coords()
        rho = Field(grid1, np.cos(2 * np.pi * m * x / grid1.extent))
        out = semigroup_step(rho, None, dt, D, r, 0.0)
        k2 = (2 * np.pi * m / grid1.extent) ** 2
        expected = np.exp(-(D * k2 + r) * dt) * rho.values
        assert np.max(np.abs(out.values - expected)) < 1e-12

    def test_constant_source_steady_state(self, grid1):
        # zero-mode ODE oracle: m' = -r m + alpha s has fixed point alpha*s/r
        D, r, alpha, s, dt = 1.0, 0.5, 0.8, 1.3, 0.05
        rho = Field(grid1, np.zeros(grid1.shape))
        src = np.full(grid1.shape, s)
        for _ in range(int(40 / r / dt)):
            rho = semigroup_step(rho, src, dt, D, r, alpha)
        assert np.allclose(rho.values, alpha * s / r, rtol=1e-6)

    def test_semigroup_property_exact(self, grid2):
        rng = np.random.default_rng(1)
        rho = Field(grid2, rng.normal(size=grid2.shape))
        src = rng.normal(size=grid2.shape)
        one = semigroup_step(rho, src, 0.08, 1.2, 0.4, 0.9)
        half = semigroup_step(rho, src, 0.04, 1.2, 0.4, 0.9)
        two = semigroup_step(half, src, 0.04, 1.2, 0.4, 0.9)
        assert np.allclose(one.values, two.values, rtol=1e-13, atol=1e-14)

    def test_zero_mode_mass_balance(self, grid1):
        # mean rho follows the exact scalar exponential formula each step
        rng = np.random.default_rng(2)
        D, r, alpha, dt = 1.0, 0.6, 0.7, 0.03
        rho = Field(grid1, rng.normal(size=grid1.shape))
        src = rng.normal(size=grid1.shape)
        out = semigroup_step(rho, src, dt, D, r, alpha)
        expected = (rho.mean * np.exp(-r * dt)
                    + alpha * np.mean(src) * (1 - np.exp(-r * dt)) / r)
        assert out.mean == pytest.approx(expected, rel=1e-12)

    def test_source_grid_mismatch(self, grid1):
        rho = Field(grid1, np.zeros(grid1.shape))
        with pytest.raises(GridMismatch):
            semigroup_step(rho, np.zeros(5), 0.01, 1.0, 1.0, 1.0)


class TestEvaluation:
    def test_single_mode_value_and_gradient(self, grid1):
        # analytic oracle for one Fourier mode
        m, L = 2, grid1.extent
        x = grid1.axis_coords()
        rho = Field(grid1, np.sin(2 * np.pi * m * x / L))
        rng = np.random.default_rng(4)
        pts = rng.uniform(0, L, size=(200, 1))
        vals = rho.value_at(pts)
        grads = rho.gradient_at(pts)
        k = 2 * np.pi * m / L
        assert np.max(np.abs(vals - np.sin(k * pts[:, 0]))) < 1e-10
        assert np.max(np.abs(grads[:, 0] - k * np.cos(k * pts[:, 0]))) < 1e-8

    def test_single_mode_2d(self, grid2):
        L = grid2.extent
        nodes = grid2.node_coords()
        vals = np.cos(2 * np.pi * nodes[:, 0] / L) * np.sin(4 * np.pi * nodes[:, 1] / L)
        rho = Field(grid2, vals.reshape(grid2.shape))
        rng = np.random.default_rng(5)
        pts = rng.uniform(0, L, size=(50, 2))
        kx, ky = 2 * np.pi / L, 4 * np.pi / L
        expect = np.cos(kx * pts[:, 0]) * np.sin(ky * pts[:, 1])
        gx = -kx * np.sin(kx * pts[:, 0]) * np.sin(ky * pts[:, 1])
        gy = ky * np.cos(kx * pts[:, 0]) * np.cos(ky * pts[:, 1])
        assert np.max(np.abs(rho.value_at(pts) - expect)) < 1e-10
        g = rho.gradient_at(pts)
        assert np.max(np.abs(g[:, 0] - gx)) < 1e-8
        assert np.max(np.abs(g[:, 1] - gy)) < 1e-8

    def test_constant_field_zero_gradient_exact(self, grid1, grid2):
        for grid in (grid1, grid2):
            rho = Field(grid, np.full(grid.shape, 3.25))
            pts = np.linspace(0.1, grid.extent - 0.1, 7).reshape(-1, 1)
            if grid.d == 2:
                pts = np.column_stack([pts, pts[::-1]])
            assert np.all(rho.gradient_at(pts) == 0.0)

    def test_node_reproduction(self, grid1):
        rng = np.random.default_rng(6)
        rho = Field(grid1, rng.normal(size=grid1.shape))
        nodes = grid1.node_coords()
        vals = rho.value_at(nodes)
        scale = np.max(np.abs(rho.values))
        assert np.max(np.abs(vals - rho.values.ravel())) < 1e-12 * scale

    def test_gradient_consistent_with_interpolant(self, grid1):
        # eval_grad must be the derivative of the value interpolant:
        # central finite differences of value_at converge to gradient_at
        rng = np.random.default_rng(7)
        rho = Field(grid1, rng.normal(size=grid1.shape))
        pts = rng.uniform(0, grid1.extent, size=(20, 1))
        h = 1e-6
        fd = (rho.value_at(pts + h) - rho.value_at(pts - h)) / (2 * h)
        assert np.allclose(rho.gradient_at(pts)[:, 0], fd, atol=1e-5)

    def test_non_finite_query(self, grid1):
        rho = Field(grid1, np.zeros(grid1.shape))
        with pytest.raises(NonFiniteQuery):
            rho.value_at(np.array([[np.nan]]))


class TestFieldPath:
    def test_stored_slices_bitwise(self, grid1):
        rng = np.random.default_rng(8)
        vals = rng.normal(size=(4, grid1.n))
        path = FieldPath(grid1, np.arange(4) * 0.1, vals)
        for k in range(4):
            f = path.field_at(0.1 * k)
            assert f.values is vals[k] or np.array_equal(f.values, vals[k])

    def test_linear_interpolation_between(self, grid1):
        vals = np.stack([np.zeros(grid1.n), np.ones(grid1.n)])
        path = FieldPath(grid1, np.array([0.0, 1.0]), vals)
        assert np.allclose(path.field_at(0.25).values, 0.25)

    def test_shifted(self, grid1):
        vals = np.zeros((2, grid1.n))
        path = FieldPath(grid1, np.array([0.0, 1.0]), vals).shifted(0.5)
        assert np.all(path.field_at(0.0).values == 0.5)


class TestFieldIO:
    def test_binary_round_trip(self, grid2):
        rng = np.random.default_rng(9)
        rho = Field(grid2, rng.normal(size=grid2.shape), time=2.25)
        back = field_from_bytes(field_to_bytes(rho))
        assert back.grid == grid2 and back.time == 2.25
        assert np.array_equal(back.values, rho.values)

    def test_csv_layout(self, grid1):
        rho = Field(grid1, np.arange(grid1.n, dtype=float))
        lines = field_to_csv_lines(rho)
        assert lines[0] == "x,value"
        assert len(lines) == grid1.n + 1
        assert lines[1] == "0.0,0.0"


class TestFieldAlongRuns:
    def make_run(self):
        from chemobranch import (DriftSpec, InitialFieldSpec,
                                 InitialMeasureSpec, ModelParams,
                                 NoiseUniverse, RateSpec,
                                 simulate_microscopic)
        params = ModelParams(
            grid=GridSpec(1, 128, 8.0),
            sigma=0.2, D=1.0, r=0.5, alpha=0.5, lambda_bar=0.6,
            birth=RateSpec("constant", {"c": 0.3}),
            death=RateSpec("constant", {"c": 0.1}),
            drift=DriftSpec("chemotaxis", {"chi": 0.5, "gsat": 2.0}),
            mu0=InitialMeasureSpec("gaussian", {"center": [4.0], "sd": 0.5}),
            rho0=InitialFieldSpec("bump", {"amp": 1.0, "center": [4.0],
                                           "width": 1.0}),
            dt=0.02, T=1.0)
        traj = simulate_microscopic(params, 60, NoiseUniverse(12, 1),
                                    snapshot_events=False)
        return params, traj

    def test_gradient_budget_along_microscopic_run(self):
        # sup|grad rho_t| <= sup|grad rho_0| + t sup|grad kernel| sup_s<1,xi_s>
        # with 10% discretization slack
        params, traj = self.make_run()
        kern = params.make_kernel()
        grad_sup_kernel = kern.sup_gradient()
        sup_mass = max(s.live_count / traj.n0 for s in traj.states)
        grad0 = np.max(np.abs(traj.fields[0].gradient_grid()[0]))
        for k, t in enumerate(traj.times):
            grad_t = np.max(np.abs(traj.fields[k].gradient_grid()[0]))
            budget = grad0 + t * grad_sup_kernel * sup_mass
            assert grad_t <= 1.1 * budget + 1e-12

    def test_field_stays_nonnegative_for_nonnegative_data(self):
        # nonnegative initial field, kernel, and weights keep the field
        # nonnegative up to spectral round-off
        _, traj = self.make_run()
        for f in traj.fields:
            assert np.min(f.values) >= -1e-12

    def test_zero_mode_balance_along_microscopic_run(self):
        # replay each step's mean-field balance from the stored snapshots:
        # the deposit is recomputed from the end-of-step population exactly
        from chemobranch import deposit, empirical
        params, traj = self.make_run()
        kern = params.make_kernel()
        r, alpha, dt = params.r, params.alpha, params.dt
        for k in range(params.n_steps):
            src = deposit(empirical(traj.states[k + 1], traj.n0), kern,
                          params.grid)
            expected = (traj.fields[k].mean * np.exp(-r * dt)
                        + alpha * np.mean(src) * (1 - np.exp(-r * dt)) / r)
            assert traj.fields[k + 1].mean == pytest.approx(expected, rel=1e-12)
