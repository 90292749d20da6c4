import numpy as np
import pytest

from climcred import (
    FactorModel,
    MacroTrajectory,
    MicroAdjustments,
    MigrationMatrix,
    ValidationError,
    build_block_correlation,
    build_schedule,
    loadings_proposed,
    loadings_t1,
    loadings_t2,
    regulatory_correlation,
    sample_factors,
)
from climcred.errors import CalibrationError

# mpmath, 40 digits: 0.12 w + 0.24 (1 - w), w = (1 - e^-0.5) / (1 - e^-50)
R_AT_1PCT = 0.19278367916551601

M4 = np.array([
    [0.88, 0.08, 0.03, 0.01],
    [0.05, 0.82, 0.09, 0.04],
    [0.02, 0.08, 0.80, 0.10],
    [0.00, 0.00, 0.00, 1.00],
])


def _fixture(G=2, T=4, d=3, seed=0, stationary=False):
    rng = np.random.default_rng(seed)
    mats = [MigrationMatrix(entries=M4) for _ in range(G)]
    C = np.eye(d)
    C[0, 1] = C[1, 0] = -0.25
    model = FactorModel(correlation=C)
    intensities = np.ones((T, d))
    if not stationary:
        intensities[:, 1:] = rng.uniform(0.5, 2.0, size=(T, d - 1))
    intensities[:, 0] = 1.0
    macro = MacroTrajectory(intensities=intensities)
    micro_values = rng.uniform(0.2, 1.5, size=(G, 3, T, d))
    if stationary:
        micro_values = np.broadcast_to(micro_values[:, :, :1, :], micro_values.shape).copy()
    micro = MicroAdjustments(values=micro_values)
    return macro, micro, mats, model


def test_regulatory_correlation_anchors():
    assert regulatory_correlation(0.0) == 0.24
    assert regulatory_correlation(1.0) == 0.12
    assert regulatory_correlation(0.0, basel3=True) == 0.24 * 1.25
    assert regulatory_correlation(1.0, basel3=True) == 0.12 * 1.25
    assert regulatory_correlation(0.01) == pytest.approx(R_AT_1PCT, abs=1e-15)
    with pytest.raises(ValidationError):
        regulatory_correlation(1.2)


def test_block_correlation_structure():
    model = build_block_correlation(rho=0.2, rho_o=0.4, regions=1)
    want = np.array([[1.0, -0.2, 0.0], [-0.2, 1.0, 0.0], [0.0, 0.0, 1.0]])
    assert np.allclose(model.correlation, want)

    tiny = build_block_correlation(rho=0.0, rho_o=0.0, regions=3)
    assert np.array_equal(tiny.correlation, np.eye(5))

    big = build_block_correlation(rho=0.2, rho_o=0.4, regions=5)
    assert big.dim == 7
    assert np.all(np.linalg.eigvalsh(big.correlation) > 0)


def test_factor_model_rejects_non_psd():
    C = np.array([[1.0, 0.99, -0.99], [0.99, 1.0, 0.99], [-0.99, 0.99, 1.0]])
    with pytest.raises(ValidationError):
        FactorModel(correlation=C)


def test_sample_factors_independent_case():
    model = FactorModel(correlation=np.eye(3))
    n = 40_000
    Z = sample_factors(model, horizon=2, n_paths=n, seed=5)
    flat = Z.reshape(-1, 3)
    corr = np.corrcoef(flat.T)
    off = corr[~np.eye(3, dtype=bool)]
    assert np.max(np.abs(off)) < 4.0 / np.sqrt(flat.shape[0])


def test_sample_factors_matches_target_correlation():
    model = build_block_correlation(rho=0.3, rho_o=0.5, regions=2)
    Z = sample_factors(model, horizon=1, n_paths=1_000_000, seed=10)
    corr = np.corrcoef(Z[:, 0, :].T)
    assert np.max(np.abs(corr - model.correlation)) < 0.01


def test_sample_factors_deterministic_and_stable_under_growth():
    model = FactorModel(correlation=np.eye(2))
    a = sample_factors(model, horizon=3, n_paths=1000, seed=9)
    b = sample_factors(model, horizon=3, n_paths=1000, seed=9)
    assert a.tobytes() == b.tobytes()
    # leading paths do not depend on the total path count
    big = sample_factors(model, horizon=3, n_paths=5000, seed=9)
    assert np.array_equal(big[:1000], a)


def test_t1_keeps_regulatory_correlation_and_matrices():
    macro, micro, mats, model = _fixture()
    sched = loadings_t1(macro, micro, mats, model)
    pd_reg = M4[:3, 3]
    r_reg = regulatory_correlation(pd_reg)
    assert np.array_equal(sched.correlations, np.broadcast_to(r_reg[None, :, None], sched.correlations.shape))
    recomputed = np.einsum("gitd,de,gite->git", sched.loadings, model.correlation, sched.loadings)
    assert np.max(np.abs(recomputed - sched.correlations)) < 1e-12
    assert np.all(sched.matrices == M4[None, None, :, :])


def test_t1_is_scale_invariant_in_adjustments():
    macro, micro, mats, model = _fixture()
    tripled = MicroAdjustments(values=3.0 * micro.values)
    a = loadings_t1(macro, micro, mats, model).loadings
    b = loadings_t1(macro, tripled, mats, model).loadings
    assert np.max(np.abs(a - b)) < 1e-13


def test_t1_constant_inputs_give_constant_schedule():
    macro, micro, mats, model = _fixture(stationary=True)
    sched = loadings_t1(macro, micro, mats, model)
    assert np.max(np.abs(sched.loadings - sched.loadings[:, :, :1, :])) < 1e-15


def test_t2_reduces_to_t1_at_time_one():
    macro, micro, mats, model = _fixture()
    t1 = loadings_t1(macro, micro, mats, model)
    t2 = loadings_t2(macro, micro, mats, model)
    assert np.max(np.abs(t1.loadings[:, :, 0] - t2.loadings[:, :, 0])) < 1e-12
    assert np.max(np.abs(t1.correlations[:, :, 0] - t2.correlations[:, :, 0])) < 1e-12


def test_t2_stationary_keeps_regulatory_correlation():
    macro, micro, mats, model = _fixture(stationary=True)
    t2 = loadings_t2(macro, micro, mats, model)
    assert np.max(np.abs(t2.correlations - t2.correlations[:, :, :1])) < 1e-14
    pd_reg = M4[:3, 3]
    r_reg = regulatory_correlation(pd_reg)
    assert np.max(np.abs(t2.correlations - r_reg[None, :, None])) < 1e-14


def test_t2_correlation_grows_with_intensity():
    macro, micro, mats, model = _fixture(stationary=True)
    boosted = macro.intensities.copy()
    boosted[2:, 1:] *= 1.8  # raise climate intensities after t=2
    t2 = loadings_t2(MacroTrajectory(intensities=boosted), micro, mats, model)
    r_reg = regulatory_correlation(M4[:3, 3])
    assert np.all(t2.correlations[:, :, 2:] > r_reg[None, :, None])
    assert np.all(t2.matrices[:, 2] == M4)  # T2 never touches the matrices


def test_proposed_reduces_to_t1_at_time_one():
    macro, micro, mats, model = _fixture()
    t1 = loadings_t1(macro, micro, mats, model)
    prop = loadings_proposed(macro, micro, mats, model)
    assert np.max(np.abs(prop.loadings[:, :, 0] - t1.loadings[:, :, 0])) < 1e-12
    assert np.max(np.abs(prop.correlations[:, :, 0] - t1.correlations[:, :, 0])) < 1e-12
    assert np.max(np.abs(prop.matrices[:, 0] - M4)) < 1e-12


def test_proposed_and_t2_loadings_coincide():
    macro, micro, mats, model = _fixture(seed=42)
    t2 = loadings_t2(macro, micro, mats, model)
    prop = loadings_proposed(macro, micro, mats, model)
    assert np.max(np.abs(t2.loadings - prop.loadings)) < 1e-12
    assert np.max(np.abs(t2.correlations - prop.correlations)) < 1e-12


def test_proposed_stationary_scenario_keeps_matrices():
    macro, micro, mats, model = _fixture(stationary=True)
    prop = loadings_proposed(macro, micro, mats, model)
    assert np.max(np.abs(prop.matrices - M4[None, None, :, :])) < 1e-12
    assert np.max(np.abs(prop.loadings - prop.loadings[:, :, :1, :])) < 1e-14


def test_proposed_intensity_spike_raises_risk():
    # single group, flat adjustments; double the transition intensity at t=3
    G, T, d = 1, 4, 2
    mats = [MigrationMatrix(entries=M4)]
    model = FactorModel(correlation=np.eye(d))
    intensities = np.ones((T, d))
    intensities[2, 1] = 2.0
    macro = MacroTrajectory(intensities=intensities)
    micro = MicroAdjustments(values=np.ones((G, 3, T, d)))
    prop = loadings_proposed(macro, micro, mats, model)
    r_reg = regulatory_correlation(M4[:3, 3])
    assert np.all(prop.correlations[0, :, 2] > r_reg)
    # investment-grade rows have negative default thresholds: PDs must rise
    assert np.all(prop.matrices[0, 2, :3, 3] > M4[:3, 3])
    # other periods stay at the anchor
    assert np.max(np.abs(prop.matrices[0, 0] - M4)) < 1e-12


def test_proposed_rejects_unanchored_factor():
    G, T, d = 1, 3, 2
    mats = [MigrationMatrix(entries=M4)]
    model = FactorModel(correlation=np.eye(d))
    intensities = np.ones((T, d))
    macro = MacroTrajectory(intensities=intensities)
    values = np.ones((G, 3, T, d))
    values[0, :, 0, 1] = 0.0  # unused at t=1 but used later
    with pytest.raises(CalibrationError):
        loadings_proposed(macro, MicroAdjustments(values=values), mats, model)


def test_proposed_allows_never_used_factor():
    G, T, d = 1, 3, 3
    mats = [MigrationMatrix(entries=M4)]
    model = FactorModel(correlation=np.eye(d))
    macro = MacroTrajectory(intensities=np.ones((T, d)))
    values = np.ones((G, 3, T, d))
    values[..., 2] = 0.0  # third factor never used
    sched = loadings_proposed(macro, MicroAdjustments(values=values), mats, model)
    assert np.all(sched.loadings[..., 2] == 0.0)


def test_all_approaches_satisfy_correlation_identity():
    macro, micro, mats, model = _fixture(seed=7)
    for name in ("t1", "t2", "proposed"):
        sched = build_schedule(name, macro, micro, mats, model)
        recomputed = np.einsum(
            "gitd,de,gite->git", sched.loadings, model.correlation, sched.loadings
        )
        assert np.max(np.abs(recomputed - sched.correlations)) < 1e-12
        assert np.all(sched.correlations >= 0.0)
        assert np.all(sched.correlations < 1.0)


def test_degenerate_loadings_rejected():
    macro, micro, mats, model = _fixture()
    dead = MicroAdjustments(values=np.zeros_like(micro.values))
    with pytest.raises(CalibrationError):
        loadings_t1(macro, dead, mats, model)


def test_basel3_flag_scales_anchor():
    macro, micro, mats, model = _fixture(stationary=True)
    base = loadings_t1(macro, micro, mats, model)
    scaled = loadings_t1(macro, micro, mats, model, basel3=True)
    assert np.allclose(scaled.correlations, 1.25 * base.correlations, rtol=1e-15)


def test_macro_trajectory_invariants():
    with pytest.raises(ValidationError):
        MacroTrajectory(intensities=np.array([[1.0, 0.5], [1.1, 0.5]]))
    with pytest.raises(ValidationError):
        MacroTrajectory(intensities=np.array([[np.inf, 0.5]]))
