import itertools
import math

import numpy as np
import pytest

from oracles import direct_dephase
from procequil.bounds import (
    BoundReport,
    ck_constant,
    ck_rhs,
    composition_norm,
    conditions_check,
    diamond_bound_rhs,
    general_term_lhs,
    infinite_time_rhs,
    k1_rhs,
    k2_rhs,
    k3_bracket,
    k3_rhs,
    stage_povm_norms,
    verify_general_term,
    verify_instance,
)
from procequil.channels import KrausMap, identity_map
from procequil.distance import projective_library
from procequil.ensembles import gue, normalized_spectrum, random_cp_map, random_instrument, random_state
from procequil.errors import ValidationError
from procequil.process import effective_dimension, embed_instrument, intermediate_state
from procequil.spectral import diagonalize, gap_census
from procequil.timeavg import TimeWindows


def level_projectors(h):
    w, v = np.linalg.eigh(h)
    levels = np.round(w, 9)
    return [v[:, levels == e] @ v[:, levels == e].conj().T for e in np.unique(levels)]


def general_term_oracle(h, rho, inst, pattern):
    """Nested loops over every (n, m) with n != m at each ``P`` slot."""
    projs = level_projectors(h)
    d_e = h.shape[0] // inst[0].dim_in
    big = [[np.kron(k, np.eye(d_e)) for k in m.kraus_ops] for m in inst]
    pairs = [(a, b) for a in range(len(projs)) for b in range(len(projs)) if a != b]
    slots = [i for i, p in enumerate(pattern) if p == "P"]
    total = 0.0
    for choice in itertools.product(pairs, repeat=len(slots)):
        pick = dict(zip(slots, choice))
        x = rho
        for l, op in enumerate(pattern):
            if op == "P":
                n, m = pick[l]
                x = projs[n] @ x @ projs[m]
            elif op == "$":
                x = direct_dephase(h, x)
            x = sum(b @ x @ b.conj().T for b in big[l])
        total += abs(np.trace(x)) ** 2
    return total


def test_infinite_time_rhs_examples():
    assert infinite_time_rhs([1.0], [5.0], 1) == pytest.approx(1 / 5)
    assert infinite_time_rhs([1.0, 1.0], [6.0, 4.0], 2) == pytest.approx(3 / 4)
    with pytest.raises(ValidationError):
        infinite_time_rhs([], [], 1)


def test_k2_rhs_values():
    assert k2_rhs(1, 1, 0, 0, 1, 1, 7.0) == pytest.approx(5 / 7)
    assert k2_rhs(1, 1, 1, 1, 1, 1, 1.0) == pytest.approx(13.0)
    full = k2_rhs(2, 3, 0.5, 0.2, 1, 1, 1.0)
    capped = k2_rhs(2, 3, 0.5, 0.2, 1, 1, 1.0, min_replacement=True)
    assert capped == pytest.approx(full - 2 * math.sqrt(6) + 8 * 0.5 * 0.2)


def test_k3_values():
    assert k3_bracket((1, 1, 1), (0, 0, 0), (1, 1, 1)) == pytest.approx(19.0)
    assert k3_rhs((1, 1, 1), (0, 0, 0), (1, 1, 1), 19.0) == pytest.approx(1.0)
    assert k3_rhs((2, 2, 2), (0.5, 0.5, 0.5), (1, 1, 1), math.inf) == 0.0


def test_k1_rhs():
    assert k1_rhs(2.0, 0.5, 4.0) == pytest.approx(0.25)


def test_ck_examples():
    c1 = gap_census(diagonalize(np.diag([0.0, 1.0])), 0.5)
    assert ck_rhs(c1, TimeWindows((math.inf,)), 0.5, 1, 3.0) == pytest.approx(4 / 3)
    c4 = gap_census(diagonalize(np.diag([0.0, 1.0, 2.0, 3.0])), 0.5)
    val = ck_rhs(c4, TimeWindows((100.0, 100.0)), 0.5, 2, 4.0)
    assert val == pytest.approx(2**5 * 3.96**2 / 4)
    assert round(val, 2) == 125.45


def test_ck_uses_shortest_window():
    c = gap_census(diagonalize(np.diag([0.0, 1.0, 2.5])), 0.2)
    assert ck_constant(c, TimeWindows((5.0, 50.0)), 0.2, 2) == ck_constant(c, TimeWindows.uniform(5.0, 2), 0.2, 2)


def test_diamond_bound_rhs(rng):
    assert diamond_bound_rhs(1, 4.0, 4.0) == pytest.approx(0.5)
    assert diamond_bound_rhs(2, 4.0, 4.0) == pytest.approx(1.0)
    lib = projective_library(2, 2, rng)
    assert diamond_bound_rhs(lib, 4.0, 4.0) == pytest.approx(lib.total_outcomes * 0.5)


def test_conditions_margins():
    c = gap_census(diagonalize(np.diag([0.0, 0.3, 0.6, 1.0])), 0.1)
    t = 100 * math.log2(4) / 0.1
    rep = conditions_check(c, TimeWindows((t,)), 1, 64.0, 0.1)
    assert rep.time_margin == pytest.approx(100.0)
    assert rep.time_ok
    bad = conditions_check(c, TimeWindows((t, t, t)), 3, 8.0, 0.1)
    assert not bad.k_ok


def test_conditions_monotone_in_t():
    c = gap_census(diagonalize(np.diag([0.0, 0.3, 1.0])), 0.1)
    margins = [conditions_check(c, TimeWindows((t,)), 1, 3.0, 0.1).time_margin for t in (1, 10, 100)]
    assert margins == sorted(margins)


def test_tp_composition_norm_is_one(rng):
    s, _, _ = normalized_spectrum(gue(4, rng))
    inst = [random_instrument(2, 1, rng, kraus_per_outcome=2)[0] for _ in range(2)]
    assert composition_norm(s, inst, "$") == pytest.approx(1.0)
    assert composition_norm(s, inst, "I") == pytest.approx(1.0)


def test_stage_norms_at_most_one(rng):
    s, _, _ = normalized_spectrum(gue(4, rng))
    inst = [random_cp_map(2, rng) for _ in range(3)]
    norms = stage_povm_norms(s, inst)
    assert set(norms) == {1, 2, 3}
    assert all(0 < v <= 1 + 1e-12 for v in norms.values())


def test_general_term_stationary_is_zero():
    s = diagonalize(np.diag([0.0, 0.3, 0.7, 1.0]))
    rho = np.diag([0.4, 0.3, 0.2, 0.1]).astype(complex)
    rep = verify_general_term(s, rho, [KrausMap((np.diag([1.0, 0.0]).astype(complex),))], "P")
    assert rep.lhs == pytest.approx(0.0, abs=1e-30)
    assert rep.holds()


def test_general_term_single_sum_pure_state(rng):
    for _ in range(10):
        s, _, _ = normalized_spectrum(gue(4, rng))
        rho = random_state(4, rng, 1)
        inst = [random_instrument(2, 1, rng, kraus_per_outcome=2)[0]]
        rep = verify_general_term(s, rho, inst, "P")
        assert rep.lhs <= 1 / effective_dimension(rho, s) + 1e-12
        assert rep.lhs == pytest.approx(general_term_oracle(s.matrix(), rho, inst, "P"), rel=1e-10, abs=1e-16)


def test_general_term_double_sum(rng):
    for _ in range(10):
        s, _, _ = normalized_spectrum(gue(4, rng))
        rho = random_state(4, rng, 1)
        inst = [random_instrument(2, 2, rng)[0] for _ in range(2)]
        rep = verify_general_term(s, rho, inst, "PP")
        omega1 = intermediate_state(s, rho, [])
        sigma = embed_instrument(inst[0], s).apply(omega1)
        purity = 1 / effective_dimension(sigma, s, renormalize=False)
        assert rep.rhs == pytest.approx(stage_povm_norms(s, inst[1:])[1] * purity)
        assert rep.lhs <= rep.rhs * (1 + 1e-9)
        assert rep.lhs == pytest.approx(general_term_oracle(s.matrix(), rho, inst, "PP"), rel=1e-10, abs=1e-16)


@pytest.mark.parametrize("pattern", ["$P", "P$", "PI", "$$P", "P$I", "$PP", "PP$"])
def test_general_term_patterns_match_oracle(rng, pattern):
    s, _, _ = normalized_spectrum(gue(4, rng))
    rho = random_state(4, rng, 2)
    inst = [random_cp_map(2, rng) for _ in range(len(pattern))]
    lhs = general_term_lhs(s, rho, inst, pattern)
    assert lhs == pytest.approx(general_term_oracle(s.matrix(), rho, inst, pattern), rel=1e-10, abs=1e-16)
    assert verify_general_term(s, rho, inst, pattern).holds()


@pytest.mark.parametrize("pattern", ["", "$", "IP", "PPP", "PXP"])
def test_general_term_bad_patterns(rng, pattern):
    s, _, _ = normalized_spectrum(gue(4, rng))
    inst = [identity_map(2)] * max(len(pattern), 1)
    with pytest.raises(ValidationError):
        verify_general_term(s, random_state(4, rng), inst, pattern or ())


def test_verify_instance_reports(rng):
    s, _, _ = normalized_spectrum(gue(4, rng))
    rho = random_state(4, rng)
    steps = [random_instrument(2, 2, rng) for _ in range(2)]
    inst = [st[0] for st in steps]
    full = [KrausMap(tuple(k for m in st for k in m.kraus_ops)) for st in steps]
    reports = verify_instance(s, rho, inst, TimeWindows((5.0, 8.0)), 0.05, full)
    names = [r.bound_name for r in reports]
    assert names[:2] == ["finite_time_k2", "envelope_k2"]
    assert all(r.holds() for r in reports)
    assert reports[0].inputs_digest == reports[1].inputs_digest
    js = reports[0].to_json()
    assert js["bound_name"] == "finite_time_k2" and js["holds"]
    assert js["slack"] == pytest.approx(reports[0].rhs - reports[0].lhs)


def test_infinite_time_bound_random(rng):
    for _ in range(10):
        s, _, _ = normalized_spectrum(gue(6, rng))
        rho = random_state(6, rng)
        inst = [random_instrument(2, 2, rng)[0]]
        reports = verify_instance(s, rho, inst, TimeWindows((10.0,)), 0.01)
        inf = [r for r in reports if r.bound_name == "infinite_time_k1"]
        assert inf and inf[0].holds()


def test_bound_report_holds_tolerance():
    assert BoundReport(1.0 + 1e-12, 1.0, "x", "d", {}).holds()
    assert not BoundReport(1.1, 1.0, "x", "d", {}).holds()
