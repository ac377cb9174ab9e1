import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lonchar.estimator import (
    AccumulatorSet,
    InsufficientDataError,
    PairMoments,
    ReconstructionResult,
    cc_magnitude_estimate,
    cc_phase_difference_estimate,
    estimate_mode_losses,
    exact_moments,
    exact_pair_moments,
    reconstruct_exact,
    reconstruct_first_order,
)
from lonchar.lon_core import LonError, haar_random_unitary, normalize_phases
from lonchar.simulator import ExperimentConfig, RunRecord, characterization_arrays, generate_runs
from lonchar.stats_analytic import conditional_covariance, gaussian_moment, no_count_probability

from conftest import binomial_z, random_subunitary, seeds, subunitaries


def normalized(L):
    return normalize_phases(np.asarray(L, dtype=complex))[0]


def stream_set(L, c, runs, seed, **kw):
    cfg = ExperimentConfig(modes=L.shape[0], chi_sq=c, runs=runs, seed=seed, chunk_size=65536,
                           input_kind=kw.pop("input_kind", "two-mode-squeezed"))
    alpha, bob = characterization_arrays(cfg, L)
    return AccumulatorSet(L.shape[0], **kw).accumulate_batch(alpha, bob, 0)


def gauge_fixed(L, r, i):
    """Row phases making column r real nonnegative, then column i phase making L_ri real."""
    L = np.asarray(L, dtype=complex)
    out = np.exp(-1j * np.angle(L[:, r]))[:, None] * L
    out[:, i] *= np.exp(-1j * np.angle(out[r, i]))
    return out


# --- accumulation ---------------------------------------------------------------

def test_accumulate_all_modes_counting_changes_nothing():
    acc = AccumulatorSet(2)
    acc.accumulate(RunRecord("characterization", np.array([1, 2]), alice_amplitudes=np.array([1 + 1j, 2.0])))
    assert acc.total_runs == 1
    assert np.all(acc.conditioned_counts == 0) and np.all(acc.sum_cross == 0)


def test_accumulate_zero_counts_updates_every_mode():
    a = np.array([1 + 1j, 2.0 - 0.5j])
    acc = AccumulatorSet(2).accumulate(RunRecord("characterization", np.zeros(2, int), alice_amplitudes=a))
    assert np.all(acc.conditioned_counts == 1)
    for i in range(2):
        view = acc.accumulator(i)
        assert np.allclose(view.sum_cross, a * np.conj(a[i]))
        assert np.allclose(view.sum_abs, np.abs(a) ** 2)


def test_accumulate_skips_rbs_runs():
    acc = AccumulatorSet(2)
    acc.accumulate(RunRecord("rbs", np.zeros(2, int), alice_counts=np.zeros(2, int)))
    assert acc.skipped_rbs == 1 and acc.total_runs == 0


def test_conditioned_fraction_matches_no_count_probability():
    c, runs = 0.25, 10**5
    L = random_subunitary(3, 2)
    acc = stream_set(L, c, runs, 4)
    assert acc.total_runs == runs
    for i in range(3):
        assert acc.conditioned_counts[i] <= runs
        assert binomial_z(acc.conditioned_counts[i], runs, no_count_probability(c, L, i)) < 4


def test_stream_and_batch_paths_agree():
    L = random_subunitary(2, 5)
    cfg = ExperimentConfig(modes=2, chi_sq=0.2, runs=2000, run_mix=0.7, seed=9)
    recs = list(generate_runs(cfg, L))
    a = AccumulatorSet(2, pairs=True).accumulate_stream(recs)
    b = AccumulatorSet(2, pairs=True)
    for k, rec in enumerate(recs):
        if rec.kind == "characterization":
            b.accumulate_batch(rec.alice_amplitudes[None], rec.bob_counts[None], k)
    assert a.skipped_rbs == sum(r.kind == "rbs" for r in recs)
    for name in ("counts", "sum_cross", "sum_abs", "sum_outer", "pair_abs2"):
        assert np.allclose(getattr(a, name), getattr(b, name), rtol=1e-12, atol=1e-12)


def test_merge_matches_concatenated_stream():
    L = random_subunitary(3, 1)
    cfg = ExperimentConfig(modes=3, chi_sq=0.3, runs=50_000, seed=3)
    alpha, bob = characterization_arrays(cfg, L)
    whole = AccumulatorSet(3, pairs=True).accumulate_batch(alpha, bob, 0)
    cut = 17_321
    left = AccumulatorSet(3, pairs=True).accumulate_batch(alpha[:cut], bob[:cut], 0)
    right = AccumulatorSet(3, pairs=True).accumulate_batch(alpha[cut:], bob[cut:], cut)
    for merged in (left.merge(right), right.merge(left)):
        for name in merged._array_names():
            x, y = getattr(merged, name), getattr(whole, name)
            assert np.abs(x - y).max() <= 1e-12 * max(1.0, np.abs(y).max())
        r1 = reconstruct_exact(merged, 0.3)
        r2 = reconstruct_exact(whole, 0.3)
        assert np.abs(r1.estimate - r2.estimate).max() < 1e-12
    with pytest.raises(LonError):
        whole.merge(AccumulatorSet(3, full=False))


# --- first-order reconstruction ------------------------------------------------------

def test_first_order_identity_exact():
    for c in (0.2, 0.01, 1e-6):
        res = reconstruct_first_order(exact_moments(c, np.eye(3)), c)
        assert np.abs(res.estimate - np.eye(3)).max() < 1e-12
        assert res.flags == [] and res.method == "first-order"


def test_first_order_bias_small_for_dominant_diagonal():
    c, checked = 0.04, 0
    for s in range(40):
        u = normalized(haar_random_unitary(2, s))
        if np.min(np.abs(np.diag(u)) ** 2) < 0.7:
            continue
        res = reconstruct_first_order(exact_moments(c, u), c)
        assert np.abs(res.estimate - u).max() <= 0.03
        checked += 1
    assert checked >= 10


def test_first_order_error_halves_with_squeezing():
    ratios = []
    for s in range(200):
        u = normalized(haar_random_unitary(3, s))
        if np.min(np.abs(np.diag(u)) ** 2) <= 0.2:
            continue
        e1 = np.abs(reconstruct_first_order(exact_moments(0.04, u), 0.04).estimate - u).max()
        e2 = np.abs(reconstruct_first_order(exact_moments(0.02, u), 0.02).estimate - u).max()
        ratios.append(e1 / e2)
        if len(ratios) == 10:
            break
    assert len(ratios) == 10
    assert min(ratios) >= 2.0


def test_first_order_flags():
    mom = exact_moments(0.2, np.eye(2))
    mom.mean_abs[0, 0] = 1.5  # noise pushed above 1 + chi^2
    res = reconstruct_first_order(mom, 0.2)
    assert "radicand-clamped:0" in res.flags and "ill-conditioned-column:0" in res.flags
    assert res.estimate[0, 0] == 0


def test_first_order_sigma_inflated_for_small_diagonal():
    L = np.array([[0.9, 0.3], [0.3, 0.02]])
    acc = stream_set(L, 0.3, 20_000, 1)
    res = reconstruct_first_order(acc, 0.3)
    base = 1 / (0.3 * np.sqrt(acc.conditioned_counts))
    assert np.allclose(res.sigma[:, 0], base[0])
    if "ill-conditioned-column:1" in res.flags:
        assert np.all(res.sigma[:, 1] > base[1])


@pytest.mark.xfail(strict=True, reason="first-order bias at chi^2 = 0.25 exceeds 0.02 for Haar 4-mode networks")
def test_first_order_simulated_four_modes():
    u = haar_random_unitary(4, 0)
    res = reconstruct_first_order(stream_set(u, 0.25, 400_000, 0, full=False), 0.25, jackknife=False)
    assert np.abs(res.estimate - normalized(u)).max() <= 0.02


def test_insufficient_data_names_mode():
    L = np.diag([1.0, 0.999])
    acc = stream_set(L, 0.9, 300, 0)
    with pytest.raises(InsufficientDataError, match="mode"):
        reconstruct_first_order(acc, 0.9)
    with pytest.raises(InsufficientDataError):
        reconstruct_exact(AccumulatorSet(2), 0.2)


# --- exact reconstruction -----------------------------------------------------------

@settings(max_examples=25)
@given(subunitaries(min_dim=1, max_dim=4), st.floats(0.01, 0.49))
def test_exact_round_trip(L, c):
    if np.min(np.abs(np.diag(L))) < 1e-3:
        return
    res = reconstruct_exact(exact_moments(c, L), c)
    assert np.abs(res.estimate - normalized(L)).max() < 1e-10
    again, _ = normalize_phases(res.estimate)
    assert np.abs(again - res.estimate).max() < 1e-15


def test_exact_uniform_loss_column_norms():
    L = 0.9 * haar_random_unitary(4, 3)
    res = reconstruct_exact(exact_moments(0.3, L), 0.3)
    assert np.allclose(np.linalg.norm(res.estimate, axis=0), 0.9, atol=1e-10)


def test_exact_covariance_round_trip():
    c = 0.35
    L = random_subunitary(4, 6)
    mom = exact_moments(c, L)
    est = reconstruct_exact(mom, c).estimate
    for i in range(4):
        back = conditional_covariance(c, est, [i]).covariance
        assert np.abs(back - mom.covariances[i]).max() < 1e-9


def test_exact_flags_zero_column():
    L = np.array([[0.9, 0.0], [0.1, 0.0]])
    res = reconstruct_exact(exact_moments(0.3, L), 0.3)
    assert "degenerate-direction:1" in res.flags
    with pytest.raises(LonError):
        reconstruct_exact(AccumulatorSet(2, full=False), 0.3)


def test_cross_estimator_consistency():
    c = 0.05
    rng = np.random.default_rng(5)
    a = np.eye(4) + 0.15 * (rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
    L = 0.9 * a / np.linalg.norm(a, 2)
    acc = stream_set(L, c, 10**6, 11)
    r1 = reconstruct_first_order(acc, c)
    r2 = reconstruct_exact(acc, c)
    combined = np.sqrt(r1.jackknife_sigma**2 + r2.jackknife_sigma**2)
    assert np.all(np.abs(r1.estimate - r2.estimate) <= 3 * combined + 1e-12)


def test_result_json_round_trip():
    acc = stream_set(random_subunitary(2, 1), 0.3, 5000, 2)
    res = reconstruct_exact(acc, 0.3)
    back = ReconstructionResult.from_json(json.loads(json.dumps(res.to_json(note=1))))
    assert np.array_equal(back.estimate, res.estimate)
    assert np.array_equal(back.sigma, res.sigma)
    assert np.array_equal(back.jackknife_sigma, res.jackknife_sigma)
    assert np.array_equal(back.conditioned_counts, res.conditioned_counts)
    assert (back.method, back.chi_sq, back.flags) == (res.method, res.chi_sq, res.flags)


def test_jackknife_close_to_formula():
    acc = stream_set(random_subunitary(3, 8), 0.25, 200_000, 6)
    res = reconstruct_exact(acc, 0.25)
    ratio = res.jackknife_sigma / res.sigma
    assert 0.1 < np.median(ratio) < 10  # reported, loosely bounded


def test_scaling_law():
    c = 0.25
    L = random_subunitary(3, 4)
    target = normalized(L)
    scaled = []
    for t in (10**4, 10**5, 10**6):
        errs = [np.abs(reconstruct_exact(stream_set(L, c, t, 100 + s), c, jackknife=False).estimate - target).max()
                for s in range(5)]
        scaled.append(np.mean(errs) * math.sqrt(t))
    k = math.exp(np.mean(np.log(scaled)))
    assert all(0.5 <= x / k <= 2.0 for x in scaled)


# --- per-mode losses -------------------------------------------------------------------

def test_mode_losses_zero_counts():
    out = estimate_mode_losses(np.zeros((10, 3)), 0.2)
    assert np.all(out.ell_sq == 0) and out.loss == 1.0
    with pytest.raises(LonError):
        estimate_mode_losses(np.zeros((0, 3)), 0.2)


def test_mode_losses_unitary():
    u = haar_random_unitary(3, 2)
    _, bob = characterization_arrays(ExperimentConfig(modes=3, chi_sq=0.2, runs=500_000, seed=1), u)
    out = estimate_mode_losses(bob, 0.2)
    assert np.all(np.abs(out.ell_sq - 1) < 4 * out.sigma)


def test_mode_losses_uniform_loss():
    t2 = 0.6
    L = math.sqrt(t2) * haar_random_unitary(4, 2)
    _, bob = characterization_arrays(ExperimentConfig(modes=4, chi_sq=0.2, runs=500_000, seed=2), L)
    out = estimate_mode_losses(bob, 0.2)
    sigma_loss = math.sqrt(np.sum(out.sigma**2)) / 4  # upper bound ignoring correlations
    assert abs(out.loss - (1 - t2)) < 4 * 2 * sigma_loss


# --- CC magnitudes ---------------------------------------------------------------------

def test_cc_magnitudes_identity():
    for exact in (False, True):
        mags = cc_magnitude_estimate(exact_moments(0.2, np.eye(3)), 0.2, exact=exact).magnitudes
        assert np.abs(mags - np.eye(3)).max() < 1e-6


@given(seeds, st.integers(2, 4), st.floats(0.01, 0.5))
def test_cc_magnitude_bias_bound(seed, m, c):
    u = haar_random_unitary(m, seed)
    mags = cc_magnitude_estimate(exact_moments(c, u), c).magnitudes
    assert np.all(np.abs(mags**2 - np.abs(u) ** 2) <= c / (1 - c) + 1e-12)
    exact = cc_magnitude_estimate(exact_moments(c, u), c, exact=True).magnitudes
    assert np.abs(exact - np.abs(u)).max() < 1e-8


@given(subunitaries(max_dim=4), st.floats(0.01, 0.5))
def test_cc_estimators_conjugation_invariant(L, c):
    for exact in (False, True):
        a = cc_magnitude_estimate(exact_moments(c, L), c, exact=exact).magnitudes
        b = cc_magnitude_estimate(exact_moments(c, L.conj()), c, exact=exact).magnitudes
        assert np.array_equal(a, b)
    m = L.shape[0]
    if m >= 2:
        p1 = exact_pair_moments(c, L, 0, 1)
        p2 = exact_pair_moments(c, L.conj(), 0, 1)
        assert np.array_equal(p1.mean_abs, p2.mean_abs)
        assert np.abs(p1.mean_abs2 - p2.mean_abs2).max() <= 1e-14 * np.abs(p1.mean_abs2).max()


def test_cc_magnitudes_match_first_order_on_real_network():
    c = 0.05
    L = np.eye(3) + 0.2 * np.abs(np.random.default_rng(3).normal(size=(3, 3)))
    L = 0.95 * L / np.linalg.norm(L, 2)
    mom = exact_moments(c, L)
    fo = np.abs(reconstruct_first_order(mom, c).estimate)
    cc = cc_magnitude_estimate(mom, c).magnitudes
    # both carry O(chi^2) bias in |L_ji|^2
    assert np.abs(fo**2 - cc**2).max() < 2 * c


def test_cc_magnitudes_from_cc_stream():
    c = 0.3
    L = random_subunitary(3, 7)
    acc = stream_set(L, c, 300_000, 5, full=False, input_kind="classical-classical")
    est = cc_magnitude_estimate(acc, c, exact=True)
    assert np.all(np.abs(est.magnitudes - np.abs(L)) <= 4 * est.sigma + 1e-12)


# --- CC phases -----------------------------------------------------------------------

def _gaussian_pair_moments(c, L, r, i):
    cov = conditional_covariance(c, L, [r, i]).covariance
    m = L.shape[0]
    mean_abs = np.array([gaussian_moment(cov, [j], [j]).real for j in range(m)])
    mean_abs2 = np.array([[gaussian_moment(cov, [j, k], [j, k]).real for k in range(m)] for j in range(m)])
    return PairMoments((r, i), math.inf, mean_abs, mean_abs2)


def test_cc_phases_all_real():
    c = 0.1
    L = np.abs(random_subunitary(3, 2))
    pm = _gaussian_pair_moments(c, L, 0, 1)
    est = cc_phase_difference_estimate(pm, c, L[:, 0], np.abs(L[:, 1]))
    assert np.allclose(est.cos, 1.0, atol=0.05)
    fit = cc_phase_difference_estimate(pm, c, L[:, 0], np.abs(L[:, 1]), refine=True)
    assert np.allclose(fit.cos, 1.0, atol=1e-6)


def test_cc_phase_quarter_turn():
    c = 0.2
    L = np.array([[0.6, 0.5, 0.1], [0.3, 0.6, 0.2], [0.2, 0.4j, 0.7]])
    pm = _gaussian_pair_moments(c, L, 0, 1)
    fit = cc_phase_difference_estimate(pm, c, L[:, 0], np.abs(L[:, 1]), refine=True)
    assert abs(fit.cos_ref[2]) < 1e-6
    assert abs(fit.cos_ref[1] - 1) < 1e-6


def test_cc_phase_unresolved_pairs():
    c = 0.2
    L = np.array([[0.8, 0.5], [0.0, 0.6]])
    pm = exact_pair_moments(c, L, 0, 1)
    est = cc_phase_difference_estimate(pm, c, L[:, 0], np.abs(L[:, 1]))
    assert (0, 1) in est.unresolved and np.isnan(est.cos[0, 1])


def test_cc_pair_moments_need_tracking():
    with pytest.raises(LonError):
        AccumulatorSet(2).pair_moments(0, 1)


@pytest.mark.slow
def test_cc_phases_statistical():
    c, runs, r, i = 0.5, 10**7, 0, 1
    L = random_subunitary(3, 4)
    truth = gauge_fixed(L, r, i)
    acc = AccumulatorSet(3, full=False, pairs=True)
    cfg = ExperimentConfig(modes=3, chi_sq=c, seed=8, chunk_size=65536, input_kind="classical-classical")
    step = 10**6
    for k in range(runs // step):
        cfg.seed = 1000 + k
        alpha, bob = characterization_arrays(cfg, L, runs=step)
        acc.accumulate_batch(alpha, bob, k * step)
    fit = cc_phase_difference_estimate(acc.pair_moments(r, i), c, np.abs(L[:, r]), np.abs(L[:, i]), refine=True)
    ph = np.angle(truth[:, i])
    expected = np.cos(ph[:, None] - ph[None, :])
    assert np.abs(fit.cos - expected).max() <= 0.1
