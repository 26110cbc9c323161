"""Transport hypothesis classes: materialization, projections, plateaus, fits.

Projection optimality is checked against random search, the circulant
materialization against an independent complex-DFT oracle, and the fitter
against closed-form plateaus, including the determinant-parity obstruction.
"""

import numpy as np
import pytest

from netsheaf import (
    CirculantTransport,
    HouseholderTransport,
    TransportClass,
    circulant_materialize,
    fit_transports,
    householder_materialize,
    per_edge_plateau,
    plateau_circulant,
    plateau_frozen,
    project_circulant,
    project_orthogonal,
    write_fit_csv,
)
from netsheaf.rng import derive


def random_orthogonal(d, rng, det=1.0):
    q = np.linalg.qr(rng.standard_normal((d, d)))[0]
    if np.linalg.det(q) * det < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_circulant(d, rng):
    m = (d - 1) // 2
    phases = rng.uniform(-np.pi, np.pi, size=m)
    return circulant_materialize(CirculantTransport(d=d, phases=phases))


def test_param_counts():
    assert TransportClass.frozen_identity().param_count(10) == 0
    assert TransportClass.free_orthogonal(16).param_count(10) == 160
    assert TransportClass.circulant().param_count(10) == 4
    assert TransportClass.circulant().param_count(7) == 3


def test_free_class_rejects_nonpositive_reflections():
    with pytest.raises(ValueError):
        TransportClass.free_orthogonal(0)


def test_householder_single_axis_reflection():
    v = np.zeros((1, 4))
    v[0, 0] = 1.0
    mat = householder_materialize(HouseholderTransport(vectors=v))
    assert np.allclose(mat, np.diag([-1.0, 1.0, 1.0, 1.0]), atol=1e-14)


def test_householder_involution_cancels():
    rng = derive(301)
    v = rng.standard_normal(5)
    mat = householder_materialize(HouseholderTransport(vectors=np.stack([v, v])))
    assert np.allclose(mat, np.eye(5), atol=1e-12)


def test_householder_orthogonality_and_parity():
    rng = derive(302)
    for reflections in (1, 4, 7):
        vec = rng.standard_normal((reflections, 6))
        mat = householder_materialize(HouseholderTransport(vectors=vec))
        assert np.linalg.norm(mat.T @ mat - np.eye(6)) <= 1e-10
        assert np.linalg.det(mat) == pytest.approx((-1.0) ** reflections, abs=1e-8)


def test_householder_application_order():
    # index 1 applies first: H(v2) H(v1) x
    v1 = np.array([1.0, 0.0, 0.0])
    v2 = np.array([0.0, 1.0, 0.0])
    mat = householder_materialize(HouseholderTransport(vectors=np.stack([v1, v2])))
    h1 = np.diag([-1.0, 1.0, 1.0])
    h2 = np.diag([1.0, -1.0, 1.0])
    assert np.allclose(mat, h2 @ h1, atol=1e-14)


def test_circulant_zero_phases_is_identity():
    for d in (2, 3, 4, 7):
        c = CirculantTransport(d=d, phases=np.zeros((d - 1) // 2))
        assert np.allclose(circulant_materialize(c), np.eye(d), atol=1e-14)


def test_circulant_matches_complex_dft_oracle():
    rng = derive(303)
    for d in (4, 5, 6, 9):
        m = (d - 1) // 2
        phases = rng.uniform(-np.pi, np.pi, size=m)
        mult = np.ones(d, dtype=complex)
        mult[1:m + 1] = np.exp(1j * phases)
        mult[d - m:] = np.conj(mult[1:m + 1][::-1])
        col = np.fft.ifft(mult)
        assert np.abs(col.imag).max() <= 1e-12
        oracle = np.empty((d, d))
        for a in range(d):
            for b in range(d):
                oracle[a, b] = col.real[(a - b) % d]
        mat = circulant_materialize(CirculantTransport(d=d, phases=phases))
        assert np.allclose(mat, oracle, atol=1e-12)


def test_circulant_pi_phase_d4():
    mat = circulant_materialize(CirculantTransport(d=4, phases=np.array([np.pi])))
    oracle = np.fft.ifft([1.0, -1.0, 1.0, -1.0]).real
    assert np.allclose(mat[:, 0], oracle, atol=1e-12)


def test_circulant_is_orthogonal_and_commutes_with_shift():
    rng = derive(304)
    d = 6
    mat = random_circulant(d, rng)
    shift = np.roll(np.eye(d), 1, axis=0)
    assert np.linalg.norm(mat.T @ mat - np.eye(d)) <= 1e-10
    assert np.abs(mat @ shift - shift @ mat).max() <= 1e-12
    assert np.allclose(mat, np.roll(np.roll(mat, 1, axis=0), 1, axis=1), atol=1e-12)


def test_circulant_rejects_wrong_phase_count():
    with pytest.raises(ValueError):
        CirculantTransport(d=6, phases=np.zeros(3))


def test_project_orthogonal_fixed_points_and_scaling():
    rng = derive(305)
    q = random_orthogonal(5, rng)
    assert np.allclose(project_orthogonal(q), q, atol=1e-12)
    assert np.allclose(project_orthogonal(2.0 * np.eye(4)), np.eye(4), atol=1e-13)


def test_project_orthogonal_beats_random_search():
    rng = derive(306)
    target = rng.standard_normal((5, 5))
    best = np.linalg.norm(target - project_orthogonal(target))
    for _ in range(50):
        dist = np.linalg.norm(target - random_orthogonal(5, rng))
        assert best <= dist + 1e-12


def test_project_orthogonal_rejects_rank_deficient():
    with pytest.raises(ValueError):
        project_orthogonal(np.outer(np.arange(1.0, 4.0), np.arange(1.0, 4.0)))


def test_project_circulant_fixed_point_and_identity():
    rng = derive(307)
    mat = random_circulant(7, rng)
    proj = circulant_materialize(project_circulant(mat))
    assert np.linalg.norm(proj - mat) <= 1e-10
    assert np.allclose(project_circulant(np.eye(6)).phases, 0.0, atol=1e-12)


def test_project_circulant_idempotent():
    rng = derive(308)
    target = random_orthogonal(6, rng)
    first = circulant_materialize(project_circulant(target))
    second = circulant_materialize(project_circulant(first))
    assert np.linalg.norm(second - first) <= 1e-10


def test_project_circulant_beats_random_phases():
    rng = derive(309)
    d = 6
    target = random_orthogonal(d, rng)
    best = np.linalg.norm(target - circulant_materialize(project_circulant(target)))
    m = (d - 1) // 2
    for _ in range(1000):
        c = CirculantTransport(d=d, phases=rng.uniform(-np.pi, np.pi, size=m))
        assert best <= np.linalg.norm(target - circulant_materialize(c)) + 1e-12


def test_project_circulant_flags_degenerate_frequency():
    with pytest.warns(UserWarning):
        proj = project_circulant(np.zeros((5, 5)))
    assert np.allclose(proj.phases, 0.0)


def test_plateau_frozen_closed_forms():
    d = 2
    edges = {(0, 1): np.eye(d), (1, 2): np.eye(d)}
    assert plateau_frozen(edges) == 0.0
    # squared Frobenius distance ||diag(-2, 0)||_F^2 = 4, divided by d = 2
    assert plateau_frozen({(0, 1): np.diag([-1.0, 1.0])}) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        plateau_frozen({})


def test_plateau_ordering_is_nested():
    rng = derive(310)
    edges = {(0, e): random_orthogonal(6, rng) for e in range(1, 9)}
    free = np.mean([per_edge_plateau(t, TransportClass.free_orthogonal(16))
                    for t in edges.values()])
    circ = plateau_circulant(edges)
    frozen = plateau_frozen(edges)
    assert free <= circ + 1e-12
    assert circ <= frozen + 1e-12
    assert free <= 1e-20


def test_plateau_circulant_zero_for_circulant_edges():
    rng = derive(311)
    edges = {(0, e): random_circulant(7, rng) for e in range(1, 5)}
    assert plateau_circulant(edges) <= 1e-20


def test_per_edge_plateau_free_is_polar_distance():
    rng = derive(312)
    target = random_orthogonal(5, rng) + 0.01 * rng.standard_normal((5, 5))
    direct = np.linalg.norm(target - project_orthogonal(target)) ** 2 / 5
    got = per_edge_plateau(target, TransportClass.free_orthogonal(8))
    assert got == pytest.approx(direct, rel=1e-10)


def test_fit_circulant_identity_target_starts_at_zero():
    res = fit_transports({(0, 1): np.eye(6)}, TransportClass.circulant(),
                         iters=5, step=0.1)
    assert res.loss_history[0] == pytest.approx(0.0, abs=1e-20)
    assert res.final_losses[(0, 1)] == pytest.approx(0.0, abs=1e-20)
    assert res.iterations[(0, 1)] == 0


def test_fit_circulant_reaches_plateau_within_one_percent():
    rng = derive(313)
    edges = {(0, e): random_orthogonal(6, rng) for e in range(1, 9)}
    res = fit_transports(edges, TransportClass.circulant(), iters=500, step=0.6)
    plateau = plateau_circulant(edges)
    mean_loss = np.mean(list(res.final_losses.values()))
    assert mean_loss <= 1.01 * plateau
    assert mean_loss >= plateau - 1e-10
    for mat in res.transports.values():
        assert np.linalg.norm(mat.T @ mat - np.eye(6)) <= 1e-10


def test_fit_free_recovers_random_rotation():
    rng = derive(314)
    edges = {(0, e): random_orthogonal(6, rng) for e in range(1, 5)}
    res = fit_transports(edges, TransportClass.free_orthogonal(16),
                         iters=4000, step=0.6, seed=derive(315))
    assert res.parity_mismatch == []
    assert max(res.final_losses.values()) <= 1e-6
    assert len(res.loss_history) <= 4001
    assert res.loss_history[-1] <= res.loss_history[0]
    assert all(0 < it <= 4000 for it in res.iterations.values())


def test_fit_free_parity_mismatch_hits_reflection_gap():
    # an orthogonal target with determinant -1 is unreachable by an even
    # product; the best even approximation sits at squared Frobenius
    # distance 4, so the per-coordinate loss plateaus at 4 / d
    rng = derive(316)
    target = random_orthogonal(6, rng, det=-1.0)
    with pytest.warns(UserWarning):
        res = fit_transports({(0, 1): target}, TransportClass.free_orthogonal(4),
                             iters=4000, step=0.6, seed=derive(317))
    assert res.parity_mismatch == [(0, 1)]
    assert res.final_losses[(0, 1)] == pytest.approx(4.0 / 6, rel=0.05)


def test_fit_free_flip_parity_recovers_reflection():
    rng = derive(318)
    target = random_orthogonal(6, rng, det=-1.0)
    res = fit_transports({(0, 1): target}, TransportClass.free_orthogonal(6),
                         iters=4000, step=0.6, seed=derive(319),
                         flip_parity=True)
    assert res.parity_mismatch == []
    assert res.final_losses[(0, 1)] <= 1e-6
    fitted = res.transports[(0, 1)]
    assert np.linalg.det(fitted) == pytest.approx(-1.0, abs=1e-8)
    assert np.linalg.norm(fitted - target) ** 2 <= 1e-6


def test_fit_rejects_bad_inputs():
    rng = derive(320)
    with pytest.raises(ValueError):
        fit_transports({}, TransportClass.circulant())
    with pytest.raises(ValueError):
        fit_transports({(0, 1): np.eye(4)}, TransportClass.frozen_identity())
    skewed = np.eye(4) + 0.5
    with pytest.raises(ValueError):
        fit_transports({(0, 1): skewed}, TransportClass.circulant())
    q = random_orthogonal(4, rng)
    with pytest.raises(ValueError):
        fit_transports({(0, 1): q}, TransportClass.circulant(), iters=0)


def test_monte_carlo_trace_identity():
    # mean ||A v||^2 over standard Gaussians equals ||A||_F^2; this is the
    # identity connecting the sampled-vector loss to the Frobenius loss
    rng = derive(321)
    a = rng.standard_normal((6, 6))
    v = rng.standard_normal((100_000, 6))
    est = ((v @ a.T) ** 2).sum(axis=1).mean()
    assert est == pytest.approx(np.linalg.norm(a) ** 2, rel=0.01)


def test_write_fit_csv_round_trip(tmp_path):
    rng = derive(322)
    edges = {(0, 1): random_orthogonal(6, rng), (1, 2): random_orthogonal(6, rng)}
    res = fit_transports(edges, TransportClass.circulant(), iters=50, step=0.6)
    out = tmp_path / "fit.csv"
    write_fit_csv(out, res, edges)
    lines = out.read_text().splitlines()
    assert lines[0].startswith("#")
    assert lines[1] == "edge_i,edge_j,class,final_loss,plateau,iterations"
    assert len(lines) == 4
    first = lines[2].split(",")
    assert first[0] == "0" and first[1] == "1" and first[2] == "circulant"
    assert float(first[3]) == pytest.approx(res.final_losses[(0, 1)])
    assert int(first[5]) == res.iterations[(0, 1)]
    assert 0 < int(first[5]) <= 50


def test_early_stop_retires_edges_independently():
    rng = derive(323)
    easy = np.eye(6)
    hard = random_orthogonal(6, rng)
    edges = {(0, 1): easy, (0, 2): hard}
    res = fit_transports(edges, TransportClass.free_orthogonal(16),
                         iters=3000, step=0.6, seed=derive(324),
                         stop_excess=1e-7)
    assert res.final_losses[(0, 1)] <= 1e-7
    assert res.final_losses[(0, 2)] <= 1e-7
    first_stop = min(res.iterations.values())
    last_stop = max(res.iterations.values())
    assert 0 < first_stop <= last_stop < 3000
    assert len(res.loss_history) == last_stop + 1
    capped = fit_transports(edges, TransportClass.free_orthogonal(16),
                            iters=3000, step=0.6, seed=derive(324),
                            stop_excess=None)
    assert capped.iterations == {(0, 1): 3000, (0, 2): 3000}
    assert len(capped.loss_history) == 3001
    # retiring an edge must not perturb the survivors: the mean-loss
    # histories agree exactly until the first retirement
    assert np.array_equal(res.loss_history[:first_stop + 1],
                          capped.loss_history[:first_stop + 1])
    assert capped.final_losses[(0, 2)] <= res.final_losses[(0, 2)]
    with pytest.raises(ValueError):
        fit_transports(edges, TransportClass.free_orthogonal(16),
                       stop_excess=0.0)
