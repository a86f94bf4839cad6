import json

import numpy as np
import pytest

from anm.errors import MissingArtifactError, NotPositiveDefiniteError, NumericalError, ValidationError
from anm.neuronlab import selection
from anm.neuronlab.selection import (
    NeuronSet,
    SeedPolicy,
    covariance,
    gaussian_mi,
    gaussian_mi_from_cov,
    load_neuron_set,
    log_det_spd,
    mims_select,
    pick_seed_neuron,
    save_neuron_set,
)
from anm.neuronlab.stats import ActivationMatrix, export_stats, load_stats, neuron_stats

from tests.conftest import make_stats


def _acts(values) -> ActivationMatrix:
    return ActivationMatrix(np.asarray(values, dtype=np.float64), "model", "data")


@pytest.mark.parametrize("rho", [0.0, 0.5, -0.5, 0.9, -0.9])
def test_bivariate_mi_closed_form(rho):
    cov = np.array([[1.0, rho], [rho, 1.0]])
    expected = -0.5 * np.log(1 - rho ** 2)
    assert gaussian_mi_from_cov(cov, [0], 1) == pytest.approx(expected, abs=1e-9)


def test_block_diagonal_has_zero_mi():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 3))
    b = rng.normal(size=(2, 2))
    cov = np.zeros((5, 5))
    cov[:3, :3] = a @ a.T + np.eye(3)
    cov[3:, 3:] = b @ b.T + np.eye(2)
    assert gaussian_mi_from_cov(cov, [0, 1, 2], 3) == pytest.approx(0.0, abs=1e-9)


def test_log_det_matches_eigenvalues():
    rng = np.random.default_rng(1)
    for _ in range(50):
        size = int(rng.integers(1, 17))
        a = rng.normal(size=(size, size))
        spd = a @ a.T + size * np.eye(size)
        expected = np.sum(np.log(np.linalg.eigvalsh(spd)))
        assert log_det_spd(spd) == pytest.approx(expected, rel=1e-9, abs=1e-9)


def test_log_det_reports_failing_pivot():
    with pytest.raises(NotPositiveDefiniteError) as info:
        log_det_spd(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert info.value.pivot == 1
    assert info.value.value == pytest.approx(-3.0)
    assert isinstance(info.value, NumericalError)


def test_mi_rejects_bad_arguments():
    cov = np.eye(3)
    with pytest.raises(ValidationError):
        gaussian_mi_from_cov(cov, [], 1)
    with pytest.raises(ValidationError):
        gaussian_mi_from_cov(cov, [0, 1], 1)


def test_covariance_ridge_rule():
    rng = np.random.default_rng(2)
    acts = _acts(rng.normal(size=(30, 6)))
    estimate = covariance(acts, [4, 1, 2])
    centred = acts.values[:, [4, 1, 2]] - acts.values[:, [4, 1, 2]].mean(axis=0)
    raw = centred.T @ centred / 30
    assert estimate.ridge == pytest.approx(1e-6 * np.trace(raw) / 3)
    np.testing.assert_allclose(estimate.matrix, raw + estimate.ridge * np.eye(3), rtol=1e-12)
    with pytest.raises(ValidationError):
        covariance(acts, [1, 1])
    with pytest.raises(ValidationError):
        covariance(acts, [6])


def test_zero_trace_uses_ridge_floor():
    acts = _acts(np.ones((5, 2)))
    assert covariance(acts, [0, 1]).ridge == 1e-12


def _reference_mi(values, omega, phi):
    joint = list(omega) + [phi]
    centred = values[:, joint] - values[:, joint].mean(axis=0)
    raw = centred.T @ centred / values.shape[0]
    lam = 1e-6 * np.trace(raw) / len(joint)
    full = raw + lam * np.eye(len(joint))

    def logdet(m):
        return np.linalg.slogdet(m)[1]

    return 0.5 * (logdet(full[:-1, :-1]) + logdet(full[-1:, -1:]) - logdet(full))


def _reference_mims(values, seed, k):
    omega = [seed]
    while len(omega) < k:
        gains = {phi: _reference_mi(values, omega, phi) for phi in range(values.shape[1]) if phi not in omega}
        omega.append(max(gains, key=lambda phi: (gains[phi], -phi)))
    return tuple(omega)


def test_mims_agrees_with_reference_search():
    rng = np.random.default_rng(3)
    for _ in range(20):
        d = int(rng.integers(2, 11))
        k = int(rng.integers(1, min(4, d) + 1))
        mixing = rng.normal(size=(d, d))
        values = rng.normal(size=(60, d)) @ mixing
        seed = int(rng.integers(d))
        selected = mims_select(_acts(values), seed, k)
        assert selected.indices == _reference_mims(values, seed, k)
        assert len(selected.gains) == k - 1


def test_mims_gains_match_gaussian_mi():
    rng = np.random.default_rng(4)
    acts = _acts(rng.normal(size=(50, 6)) @ rng.normal(size=(6, 6)))
    selected = mims_select(acts, 0, 3)
    assert selected.gains[0] == pytest.approx(gaussian_mi(acts, [0], selected.indices[1]))
    assert selected.gains[1] == pytest.approx(gaussian_mi(acts, selected.indices[:2], selected.indices[2]))


def test_mims_with_k_one_is_the_seed():
    selected = mims_select(_acts(np.random.default_rng(5).normal(size=(10, 4))), 2, 1)
    assert selected.indices == (2,) and selected.gains == ()


def test_mims_ignores_neuron_scale():
    rng = np.random.default_rng(8)
    values = rng.normal(size=(200, 6)) @ rng.normal(size=(6, 6))
    baseline = mims_select(_acts(values), 0, 4)
    for neuron, scale in ((baseline.indices[1], 10.0), (3, 0.1)):
        rescaled = values.copy()
        rescaled[:, neuron] *= scale
        selected = mims_select(_acts(rescaled), 0, 4)
        assert selected.indices == baseline.indices
        assert selected.gains == pytest.approx(baseline.gains, rel=1e-3)


def test_mims_raises_when_every_gain_is_nan(monkeypatch):
    monkeypatch.setattr(selection, "_mi_on_full", lambda raw, omega, phi: float("nan"))
    with pytest.raises(NumericalError, match="NaN"):
        mims_select(_acts(np.random.default_rng(9).normal(size=(10, 4))), 0, 2)


def test_mims_argument_range():
    acts = _acts(np.random.default_rng(6).normal(size=(10, 4)))
    with pytest.raises(ValidationError):
        mims_select(acts, 0, 5)
    with pytest.raises(ValidationError):
        mims_select(acts, 4, 2)


def test_stats_match_numpy():
    values = np.random.default_rng(7).gamma(2.0, size=(200, 5))
    stats = neuron_stats(_acts(values))
    centred = values - values.mean(axis=0)
    var = (centred ** 2).mean(axis=0)
    np.testing.assert_allclose(stats.mean, values.mean(axis=0), rtol=1e-12)
    np.testing.assert_allclose(stats.std, values.std(axis=0), rtol=1e-12)
    np.testing.assert_allclose(stats.skewness, (centred ** 3).mean(axis=0) / var ** 1.5, rtol=1e-10)
    np.testing.assert_allclose(stats.kurtosis, (centred ** 4).mean(axis=0) / var ** 2 - 3, rtol=1e-10)
    assert sum(stats.mean_histogram.counts) == 5
    assert stats.n == 200


def test_constant_neuron_has_zero_spread():
    values = np.column_stack([np.full(10, 0.3), np.arange(10.0)])
    stats = neuron_stats(_acts(values))
    assert stats.std[0] == 0.0
    assert stats.skewness[0] == 0.0 and stats.kurtosis[0] == 0.0


def test_activation_matrix_needs_two_finite_rows():
    with pytest.raises(ValidationError):
        _acts(np.ones((1, 3)))
    with pytest.raises(NumericalError):
        _acts(np.array([[1.0, np.nan], [0.0, 0.0]]))


def test_real_activations(acts, stats):
    assert acts.values.shape == (24, 64)
    assert stats.d == 64
    assert np.all(stats.std >= 0)


@pytest.mark.parametrize(
    "text, expected",
    [
        ("max-variance", SeedPolicy()),
        ("explicit:5", SeedPolicy("explicit", index=5)),
        ("random:3", SeedPolicy("random", seed=3)),
        ("random", SeedPolicy("random", seed=0)),
    ],
)
def test_seed_policy_parse(text, expected):
    assert SeedPolicy.parse(text) == expected


@pytest.mark.parametrize("text", ["explicit", "explicit:x", "random:two", "loudest"])
def test_seed_policy_parse_errors(text):
    with pytest.raises(ValidationError):
        SeedPolicy.parse(text)


def test_pick_seed_neuron():
    stats = make_stats([0.0, 0.0, 0.0, 0.0], [0.1, 0.5, 0.5, 0.2])
    # first maximum wins
    assert pick_seed_neuron(stats) == 1
    assert pick_seed_neuron(stats, "explicit:3") == 3
    assert pick_seed_neuron(stats, "random:4") == pick_seed_neuron(stats, SeedPolicy("random", seed=4))
    assert 0 <= pick_seed_neuron(stats, "random:4") < 4
    with pytest.raises(ValidationError):
        pick_seed_neuron(stats, "explicit:4")


def test_stats_json_round_trip(tmp_path, stats):
    loaded = load_stats(export_stats(stats, tmp_path / "stats.json"))
    np.testing.assert_allclose(loaded.mean, stats.mean)
    np.testing.assert_allclose(loaded.std, stats.std)
    assert loaded.model_id == stats.model_id
    assert loaded.mean_histogram == stats.mean_histogram


def test_stats_csv_columns(tmp_path, stats):
    path = export_stats(stats, tmp_path / "stats.csv")
    header = path.read_text(encoding="utf-8").splitlines()[0]
    assert header == "neuron,mean,std,skewness,kurtosis"
    with pytest.raises(ValidationError):
        load_stats(path)


def test_neuron_set_file(tmp_path):
    neurons = NeuronSet((4, 1, 7), (0.5, 0.25))
    path = save_neuron_set(neurons, tmp_path / "set.json", seed_policy="max-variance")
    assert json.loads(path.read_text(encoding="utf-8"))["seed_policy"] == "max-variance"
    assert load_neuron_set(path) == neurons
    with pytest.raises(MissingArtifactError):
        load_neuron_set(tmp_path / "none.json")
    path.write_text("{}", encoding="utf-8")
    with pytest.raises(ValidationError):
        load_neuron_set(path)


def test_neuron_set_rejects_duplicates():
    with pytest.raises(ValidationError):
        NeuronSet((1, 1))
    with pytest.raises(ValidationError):
        NeuronSet(())
