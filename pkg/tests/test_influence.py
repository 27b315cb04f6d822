import csv
import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dqdquapi import influence
from dqdquapi.bath import Family
from dqdquapi.influence import (CLASSES, ConsistencyError, SpinPair, build_eta_table,
                                diagonal_eta_frequency, diagonal_vector, factor_matrix,
                                influence_factor_I0, influence_factor_Idk, route_deviation,
                                window_geometry)
from dqdquapi.propagator import dephasing_exponent

from conftest import reference_bath

PAIRS = [SpinPair.from_index(a) for a in range(4)]


@pytest.fixture(scope="module")
def pz_table(pz_bath):
    return build_eta_table(pz_bath, 10.0, 6, 6, verify=False)


def full_exponent(path, table, n):
    total = 0j
    for k in range(n + 1):
        for kp in range(max(0, k - table.dkmax), k + 1):
            eta = table.eta(k, kp, n)
            a, b = path[k], path[kp]
            total += (a.s_plus - a.s_minus) * (eta * b.s_plus - np.conj(eta) * b.s_minus)
    return total


def factor_product(path, table, n):
    prod = 1 + 0j
    for k in range(n + 1):
        terminal = k == 0 or k == n
        prod *= influence_factor_I0(path[k], table,
                                    "terminal" if terminal else "interior")
        for kp in range(max(0, k - table.dkmax), k):
            cls = ("t" if k == n else "i") + ("t" if kp == 0 else "i")
            prod *= influence_factor_Idk(path[kp], path[k], k - kp, table, cls)
    return prod


class TestSpinPair:
    def test_index_round_trip(self):
        for a in range(4):
            assert SpinPair.from_index(a).index == a

    def test_values_restricted(self):
        with pytest.raises(ValueError):
            SpinPair(1, 0)


class TestWindowGeometry:
    def test_interior_gap(self):
        gap, later, earlier = window_geometry(10.0, 3, "ii")
        assert (gap, later, earlier) == (30.0, 10.0, 10.0)

    def test_terminal_windows_shift_centres(self):
        gap, later, earlier = window_geometry(10.0, 1, "tt")
        assert (gap, later, earlier) == (5.0, 5.0, 5.0)
        assert window_geometry(10.0, 2, "ti")[0] == 17.5


class TestBuildEtaTable:
    def test_null_bath_gives_zero_table(self, null_bath):
        table = build_eta_table(null_bath, 10.0, 5, 3)
        assert all(v == 0 for _, _, v in table.entries())

    def test_translation_invariance(self, pz_table):
        n = 6
        assert pz_table.eta(1, 1, n) == pytest.approx(pz_table.eta(2, 2, n), abs=1e-12)
        assert pz_table.eta(3, 1, n) == pz_table.eta(5, 3, n)

    def test_diagonal_damping_nonnegative(self, pz_table, df_bath):
        df_table = build_eta_table(df_bath, 20.0, 4, 2, verify=False)
        for table in (pz_table, df_table):
            assert table.diag_interior.real >= 0 and table.diag_terminal.real >= 0

    @pytest.mark.parametrize("family, dt", [(Family.PIEZOELECTRIC, 10.0),
                                            (Family.DEFORMATION, 20.0)])
    def test_routes_agree(self, family, dt):
        table = build_eta_table(reference_bath(family), dt, 3, 3, verify=False)
        assert route_deviation(table) <= 1e-8

    def test_route_disagreement_raises(self, pz_bath, monkeypatch):
        real = influence.eta_time_domain

        def skewed(*args, **kwargs):
            d_int, d_term, off = real(*args, **kwargs)
            return d_int + 1e-6, d_term, off

        monkeypatch.setattr(influence, "eta_time_domain", skewed)
        with pytest.raises(ConsistencyError):
            build_eta_table(pz_bath, 10.0, 2, 2, verify=True)

    @pytest.mark.parametrize("dt, n, m", [(0.0, 3, 1), (10.0, 3, 0), (10.0, 3, 4)])
    def test_argument_validation(self, pz_bath, dt, n, m):
        with pytest.raises(ValueError):
            build_eta_table(pz_bath, dt, n, m, verify=False)

    def test_lag_out_of_range(self, pz_table):
        with pytest.raises(IndexError):
            pz_table.get(7, "ii")
        with pytest.raises(IndexError):
            pz_table.get(0, "ii")

    def test_linear_in_coupling(self, pz_bath, pz_table):
        doubled = build_eta_table(pz_bath.with_coupling(0.07), 10.0, 6, 6, verify=False)
        for (_, _, a), (_, _, b) in zip(pz_table.entries(), doubled.entries()):
            assert b == pytest.approx(2 * a, rel=1e-9, abs=1e-15)
        pair = SpinPair(1, -1)
        assert influence_factor_I0(pair, doubled) == pytest.approx(
            influence_factor_I0(pair, pz_table) ** 2, rel=1e-9)

    def test_window_sum_reproduces_dephasing_exponent(self, pz_table):
        n = 6
        total = sum(pz_table.eta(k, kp, n) for k in range(n + 1) for kp in range(k + 1))
        gamma = 4 * dephasing_exponent(pz_table.bath, [n * pz_table.delta_t])[0].real
        assert 4 * total.real == pytest.approx(gamma, abs=1e-9)

    def test_csv_layout(self, pz_table, tmp_path):
        path = tmp_path / "eta.csv"
        pz_table.write_csv(path)
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["dk", "class", "re_eta", "im_eta"]
        assert len(rows) == 1 + 2 + 4 * pz_table.dkmax
        assert {r[1] for r in rows[3:]} == set(CLASSES)


class TestInfluenceFactors:
    def test_diagonal_pair_is_trivial(self, pz_table):
        assert influence_factor_I0(SpinPair(1, 1), pz_table) == 1
        assert influence_factor_I0(SpinPair(-1, -1), pz_table, "terminal") == 1

    def test_off_diagonal_pair(self, pz_table):
        eta = pz_table.diag_interior
        value = influence_factor_I0(SpinPair(1, -1), pz_table)
        assert value == pytest.approx(np.exp(-4 * eta.real))
        assert abs(value) <= 1

    def test_later_diagonal_pair_gives_one(self, pz_table):
        for earlier in PAIRS:
            assert influence_factor_Idk(earlier, SpinPair(1, 1), 2, pz_table) == 1

    def test_zero_table_gives_one(self, null_bath):
        table = build_eta_table(null_bath, 10.0, 4, 4)
        rng = np.random.default_rng(1)
        path = [PAIRS[i] for i in rng.integers(0, 4, 5)]
        assert factor_product(path, table, 4) == 1

    def test_unknown_classes(self, pz_table):
        with pytest.raises(ValueError):
            influence_factor_I0(SpinPair(1, -1), pz_table, "edge")
        with pytest.raises(ValueError):
            influence_factor_Idk(PAIRS[0], PAIRS[1], 1, pz_table, "xx")

    def test_matrix_forms_agree(self, pz_table):
        eta = pz_table.get(2, "ti")
        F = factor_matrix(eta)
        for a in range(4):
            for b in range(4):
                assert F[a, b] == pytest.approx(
                    influence_factor_Idk(PAIRS[a], PAIRS[b], 2, pz_table, "ti"), rel=1e-14)
        d = diagonal_vector(pz_table.diag_interior)
        assert d == pytest.approx([influence_factor_I0(p, pz_table) for p in PAIRS])

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(1, 6), data=st.data())
    def test_factorization_matches_full_exponent(self, pz_table, n, data):
        table = dataclasses.replace(pz_table, dkmax=n)
        path = [PAIRS[data.draw(st.integers(0, 3))] for _ in range(n + 1)]
        prod = factor_product(path, table, n)
        assert prod == pytest.approx(np.exp(-full_exponent(path, table, n)), rel=1e-12)
        assert abs(prod) <= 1 + 1e-12

    @settings(max_examples=30, deadline=None)
    @given(data=st.data())
    def test_swapping_branches_conjugates(self, pz_table, data):
        n = 5
        path = [PAIRS[data.draw(st.integers(0, 3))] for _ in range(n + 1)]
        swapped = [SpinPair(p.s_minus, p.s_plus) for p in path]
        assert factor_product(swapped, pz_table, n) == pytest.approx(
            np.conj(factor_product(path, pz_table, n)), rel=1e-12)


def test_diagonal_frequency_form_zero_length(pz_bath):
    assert diagonal_eta_frequency(pz_bath, [1e-12])[0] == pytest.approx(0, abs=1e-20)
