import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dqdquapi.analysis import (INV_E, NotCrossedError, bloch_times, bloch_times_from_response,
                               convergence_report, decoherence_time, delta_omega_preset,
                               quality_factor, spectral_density_from_response, summary_lines,
                               write_convergence_csv)
from dqdquapi.bath import BathSpec, Family, SpectralDensityModel, coth_half
from dqdquapi.influence import build_eta_table
from dqdquapi.propagator import SystemSpec, Trajectory, itm_evolve

from conftest import reference_bath


def synthetic(mod, dt):
    n = len(mod)
    states = np.zeros((n, 2, 2), dtype=complex)
    states[:, 0, 0] = states[:, 1, 1] = 0.5
    states[:, 0, 1] = states[:, 1, 0] = mod
    return Trajectory(dt, dt * np.arange(n), states, "synthetic")


def exponential(tau, dt, t_max):
    t = np.arange(0.0, t_max + dt / 2, dt)
    return synthetic(0.5 * np.exp(-t / tau), dt)


class TestDecoherenceTime:
    def test_synthetic_exponential(self):
        res = decoherence_time(exponential(100.0, 1.0, 300.0))
        assert abs(res.tau2 - 100.0) <= 0.01

    def test_interpolation_error_is_second_order(self):
        errs = [abs(decoherence_time(exponential(100.0, dt, 300.0)).tau2 - 100.0)
                for dt in (2.4, 1.2, 0.6)]
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)
        assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.1)

    def test_exact_hit_on_sample(self):
        traj = synthetic(np.array([0.5, 0.3, 0.5 * INV_E, 0.1]), 1.0)
        res = decoherence_time(traj)
        assert res.tau2 == 2.0 and not res.interpolated

    def test_not_crossed(self):
        with pytest.raises(NotCrossedError) as info:
            decoherence_time(exponential(100.0, 1.0, 50.0))
        assert info.value.final_ratio == pytest.approx(math.exp(-0.5))

    def test_preconditions(self):
        with pytest.raises(ValueError):
            decoherence_time(exponential(100.0, 1.0, 50.0), threshold=1.0)
        with pytest.raises(ValueError):
            decoherence_time(synthetic(np.zeros(3), 1.0))

    def test_uses_modulus(self):
        t = np.arange(0, 200.0, 1.0)
        traj = synthetic(0.5 * np.exp(-t / 50.0) * np.exp(1j * 0.3 * t), 1.0)
        assert decoherence_time(traj).tau2 == pytest.approx(50.0, abs=0.01)

    @settings(max_examples=50)
    @given(rates=st.lists(st.floats(0.0, 0.5), min_size=5, max_size=40),
           th=st.tuples(st.floats(0.05, 0.95), st.floats(0.05, 0.95)))
    def test_threshold_monotonicity(self, rates, th):
        mod = 0.5 * np.exp(-np.cumsum([0.0] + rates))
        traj = synthetic(mod, 1.0)
        lo, hi = sorted(th)
        try:
            t_lo = decoherence_time(traj, lo).tau2
        except NotCrossedError:
            return
        assert decoherence_time(traj, hi).tau2 <= t_lo


class TestBloch:
    def test_formula_arithmetic(self):
        # J(w0) = 0.01 at w0 = 0.1 for a linear spectral density, cold bath
        omega0, sigma = 0.1, 1.0
        g = 0.01 / (omega0 * math.exp(-omega0 ** 2 / (2 * sigma ** 2)))
        model = SpectralDensityModel(Family.POWER_LAW_GAUSSIAN, g, 1.0, sigma)
        bath = BathSpec.from_temperature(model, 1.0)
        res = bloch_times(bath, omega0 / 2)
        coth = float(coth_half(bath.beta, omega0))
        assert res.tau2 == pytest.approx(2 / (0.01 * coth), rel=1e-12)
        assert res.tau2 == pytest.approx(200.0, rel=1e-6)
        assert res.tau1 == res.tau2 and res.omega0 == omega0

    def test_null_bath_is_infinite(self, null_bath):
        res = bloch_times(null_bath, 0.05)
        assert res.infinite and math.isinf(res.tau1)

    @pytest.mark.parametrize("c", [0.5, 3.0])
    def test_scaling_with_coupling(self, pz_bath, c):
        base = bloch_times(pz_bath, 0.05).tau2
        scaled = bloch_times(pz_bath.with_coupling(pz_bath.model.g * c), 0.05).tau2
        assert scaled == pytest.approx(base / c, rel=1e-14)

    def test_requires_positive_tunnelling(self, pz_bath):
        with pytest.raises(ValueError):
            bloch_times(pz_bath, 0.0)

    @pytest.mark.parametrize("family, omega", [(Family.PIEZOELECTRIC, 0.1),
                                               (Family.DEFORMATION, 0.14)])
    def test_response_route_recovers_spectral_density(self, family, omega):
        bath = reference_bath(family)
        assert spectral_density_from_response(bath, omega) == pytest.approx(
            bath.model(omega), rel=1e-8)

    def test_response_route_bloch(self, pz_bath):
        assert bloch_times_from_response(pz_bath, 0.05).tau2 == pytest.approx(
            bloch_times(pz_bath, 0.05).tau2, rel=1e-8)


class TestQualityFactor:
    def test_quoted_piezoelectric_pair(self):
        omega_prime = 336 * math.pi / 115.9
        assert omega_prime == pytest.approx(9.11, abs=0.01)
        res = quality_factor(0.14, omega_prime - 0.14, q=336)
        assert res.tau2 == pytest.approx(115.9, rel=1e-12)

    def test_quoted_deformation_pair(self):
        res = quality_factor(0.1, 7.2 - 0.1, tau2=3.5)
        assert res.q == pytest.approx(8.0, rel=0.01)

    def test_trivial(self):
        res = quality_factor(math.pi, 0.0, tau2=1.0)
        assert res.q == pytest.approx(1.0) and res.omega_prime == math.pi

    @settings(max_examples=50)
    @given(tau=st.floats(0.1, 1e4), w0=st.floats(0.01, 1.0), dw=st.floats(0.0, 10.0))
    def test_round_trip(self, tau, w0, dw):
        q = quality_factor(w0, dw, tau2=tau).q
        assert quality_factor(w0, dw, q=q).tau2 == pytest.approx(tau, rel=1e-12)

    @pytest.mark.parametrize("kwargs", [{}, {"tau2": 1.0, "q": 2.0}, {"tau2": -1.0}])
    def test_preconditions(self, kwargs):
        with pytest.raises(ValueError):
            quality_factor(0.1, 1.0, **kwargs)

    def test_presets(self):
        assert delta_omega_preset("piezoelectric") == pytest.approx(8.75)
        assert delta_omega_preset("deformation") == pytest.approx(8.25)


class TestConvergenceReport:
    def test_single_cell_matches_pipeline(self, pz_bath):
        cells = convergence_report(SystemSpec(0.05), pz_bath, [10.0], [1], 200.0)
        table = build_eta_table(pz_bath, 10.0, 20, 1, verify=False)
        direct = decoherence_time(itm_evolve(SystemSpec(0.05), table, 20)).tau2
        assert len(cells) == 1 and cells[0].tau2 == direct

    def test_null_bath_never_crosses(self, null_bath):
        cells = convergence_report(SystemSpec(0.05), null_bath, [10.0, 20.0], [1, 2], 100.0)
        assert all(c.tau2 is None and c.status.startswith("not-crossed") for c in cells)

    def test_memory_deltas_reported(self, pz_bath):
        cells = convergence_report(SystemSpec(0.05), pz_bath, [10.0], [1, 2], 200.0)
        assert cells[1].delta_tau2 is not None and cells[1].delta_tau2 != 0
        assert cells[1].max_deviation > 0
        buf = io.StringIO()
        write_convergence_csv(cells, buf)
        rows = buf.getvalue().splitlines()
        assert rows[0].startswith("delta_t_ps,dkmax,tau2_ps") and len(rows) == 3

    def test_converged_flag(self):
        bath = reference_bath(Family.DEFORMATION, omega_l=0.7)
        cells = convergence_report(SystemSpec(0.07), bath, [5.0], [1, 2, 3, 4], 150.0)
        first = next(c for c in cells if c.converged)
        assert first.dkmax >= 2
        nxt = cells[[c.dkmax for c in cells].index(first.dkmax) + 1]
        assert nxt.max_deviation < 1e-3

    def test_cell_errors_do_not_abort(self, pz_bath):
        cells = convergence_report(SystemSpec(0.05), pz_bath, [10.0], [1, 13], 200.0)
        assert cells[0].status == "ok"
        assert cells[1].status.startswith("error") and "cap" in cells[1].status

    def test_empty_lists_rejected(self, pz_bath):
        with pytest.raises(ValueError):
            convergence_report(SystemSpec(0.05), pz_bath, [], [1], 100.0)


def test_summary_lines():
    text = summary_lines({"tau2_ps": 61.5, "status": "ok", "bloch": math.inf, "n": 3})
    assert text == "tau2_ps=6.15000000000e+01\nstatus=ok\nbloch=inf\nn=3\n"
