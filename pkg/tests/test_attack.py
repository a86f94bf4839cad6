import numpy as np
import pytest

from anm.attack.perturbation import (
    Perturbation,
    apply,
    budget_bound,
    export_visual,
    load_perturbation,
    project_linf,
    save_perturbation,
    uniform_noise,
)
from anm.attack.pgd import (
    AttackConfig,
    TargetPolicy,
    anm_loss,
    anm_m,
    anm_random,
    anm_s,
    random_neurons,
    step_size,
    target_value,
)
from anm.campaign.reports import amplification_report
from anm.errors import ShapeError, ValidationError
from anm.netgraph.models import INPUT_SHAPE, feature_vector
from anm.neuronlab.selection import NeuronSet

from tests.conftest import make_stats

EPSILON = 16 / 255


def test_sigma_multiple_target():
    stats = make_stats([0.2471], [0.1952])
    assert target_value(stats, 0, TargetPolicy()) == pytest.approx(2.1991, abs=5e-4)


def test_direct_target_and_range():
    stats = make_stats([0.0, 1.0], [1.0, 1.0])
    assert target_value(stats, 1, TargetPolicy("direct", value=3.5)) == 3.5
    with pytest.raises(ValidationError):
        target_value(stats, 2, TargetPolicy())
    with pytest.raises(ValidationError):
        TargetPolicy("direct")
    with pytest.raises(ValidationError):
        TargetPolicy("maximize")


def test_step_schedule_halves_every_two_epochs():
    config = AttackConfig()
    assert config.step0 == pytest.approx(4 * EPSILON)
    expected = [4 * EPSILON * 2.0 ** -(e // 2) for e in range(10)]
    assert [step_size(e, config) for e in range(10)] == expected
    with pytest.raises(ValidationError):
        step_size(10, config)


@pytest.mark.parametrize(
    "changes",
    [{"epsilon": 0.0}, {"step0": -1.0}, {"epochs": 0}, {"n_drop": 0}, {"batch_size": 0}, {"k_neurons": 0}],
)
def test_attack_config_validation(changes):
    with pytest.raises(ValidationError):
        AttackConfig(**changes)


def test_attack_config_from_dict():
    config = AttackConfig.from_dict({"epochs": 3, "target": {"kind": "direct", "value": 2.0}})
    assert config.epochs == 3 and config.target == TargetPolicy("direct", value=2.0)
    assert AttackConfig.from_dict(config.as_dict()) == config


def test_loss_at_zero_perturbation(resnet, generation):
    batch = generation.images[:6]
    neurons = [3, 10, 40]
    targets = [1.0, 2.0, 0.5]
    features = feature_vector(resnet, batch).data[:, neurons].astype(np.float64)
    expected = np.mean((np.array(targets) - features) ** 2)
    zero = np.zeros(INPUT_SHAPE, dtype=np.float32)
    assert anm_loss(resnet, batch, neurons, targets, zero) == pytest.approx(expected, rel=1e-5)


def test_loss_checks_target_count(resnet, generation):
    with pytest.raises(ValidationError):
        anm_loss(resnet, generation.images[:2], [1, 2], [1.0], np.zeros(INPUT_SHAPE, dtype=np.float32))


def test_every_step_stays_within_budget(resnet, generation, stats, quick_attack):
    steps = []

    def record(epoch, delta):
        steps.append((epoch, float(np.abs(delta).max())))

    perturbation = anm_s(resnet, generation, 5, stats, quick_attack, on_step=record)
    # 24 samples in batches of 8 over 2 epochs
    assert [e for e, _ in steps] == [0, 0, 0, 1, 1, 1]
    assert all(bound <= EPSILON for _, bound in steps)
    assert perturbation.linf() <= EPSILON
    assert perturbation.linf() > 0


def test_single_neuron_provenance(resnet, generation, stats, quick_attack):
    perturbation = anm_s(resnet, generation, 5, stats, quick_attack)
    provenance = perturbation.provenance
    assert perturbation.method == "anm-s"
    assert perturbation.neurons == (5,)
    assert provenance["model_id"] == resnet.model_id
    assert provenance["dataset_checksum"] == generation.checksum
    assert len(provenance["epoch_losses"]) == 2
    assert provenance["final_loss"] == provenance["epoch_losses"][-1]
    assert provenance["targets"][0] == pytest.approx(target_value(stats, 5, TargetPolicy()), rel=1e-6)


def test_attack_is_deterministic(resnet, generation, stats, quick_attack):
    neurons = NeuronSet((1, 2, 3))
    first = anm_m(resnet, generation, neurons, stats, quick_attack)
    second = anm_m(resnet, generation, neurons, stats, quick_attack)
    assert first.delta.tobytes() == second.delta.tobytes()
    assert first.method == "anm-m"


def test_random_neurons_are_distinct():
    chosen = random_neurons(64, 12, seed=3)
    assert len(set(chosen.indices)) == 12
    assert all(0 <= j < 64 for j in chosen.indices)
    assert random_neurons(64, 12, seed=3) == chosen
    with pytest.raises(ValidationError):
        random_neurons(4, 5, seed=0)


def test_random_attack_uses_config_seed(resnet, generation, stats, quick_attack):
    perturbation = anm_random(resnet, generation, 3, stats, quick_attack)
    assert perturbation.method == "anm-random"
    assert perturbation.neurons == random_neurons(64, 3, quick_attack.seed).indices


def test_attack_needs_generation_data(resnet, pretext, stats, quick_attack):
    with pytest.raises(ValidationError, match="generation"):
        anm_s(resnet, pretext, 0, stats, quick_attack)


def test_attack_checks_stats_width(resnet, generation, quick_attack):
    with pytest.raises(ValidationError, match="neurons"):
        anm_s(resnet, generation, 0, make_stats([0.0] * 3, [1.0] * 3), quick_attack)


def test_uniform_noise_stays_within_budget():
    noise = uniform_noise(EPSILON, seed=2)
    assert noise.delta.shape == INPUT_SHAPE
    assert np.all(np.abs(noise.delta).astype(np.float64) <= EPSILON)
    assert noise.method == "uniform-noise"
    assert uniform_noise(EPSILON, seed=2).delta.tobytes() == noise.delta.tobytes()
    assert uniform_noise(EPSILON, seed=3).delta.tobytes() != noise.delta.tobytes()


def test_apply_clamps_to_pixel_range():
    delta = np.full(INPUT_SHAPE, 0.05, dtype=np.float32)
    images = np.stack([np.zeros(INPUT_SHAPE), np.full(INPUT_SHAPE, 0.98)]).astype(np.float32)
    out = apply(Perturbation(delta, 0.06), images)
    np.testing.assert_allclose(out[0], 0.05)
    np.testing.assert_array_equal(out[1], 1.0)
    assert apply(delta, images[0]).shape == INPUT_SHAPE
    with pytest.raises(ShapeError):
        apply(delta, np.zeros((2, 3, 16, 16), dtype=np.float32))


def test_projection_and_budget_check():
    delta = np.array([-1.0, -0.01, 0.0, 0.5], dtype=np.float32)
    bound = budget_bound(0.1)
    np.testing.assert_array_equal(project_linf(delta, 0.1), np.float32([-bound, -0.01, 0.0, bound]))
    with pytest.raises(ValidationError, match="budget"):
        Perturbation(np.full(INPUT_SHAPE, 0.2, dtype=np.float32), 0.1)
    with pytest.raises(ShapeError):
        Perturbation(np.zeros((3, 8, 8), dtype=np.float32), 0.1)


def test_perturbation_file_round_trip(tmp_path, resnet, generation, stats, quick_attack):
    perturbation = anm_s(resnet, generation, 7, stats, quick_attack)
    loaded = load_perturbation(save_perturbation(perturbation, tmp_path / "p.anmp"))
    assert loaded.delta.tobytes() == perturbation.delta.tobytes()
    assert loaded.epsilon == perturbation.epsilon
    assert loaded.provenance == perturbation.provenance


def test_export_visual(tmp_path):
    noise = uniform_noise(EPSILON, seed=0)
    image = np.load(export_visual(noise, tmp_path / "visual.npy"))
    assert image.shape == INPUT_SHAPE
    assert image.min() >= 0.0 and image.max() <= 1.0
    np.testing.assert_allclose(image, np.clip(0.5 + 10 * noise.delta, 0, 1), rtol=1e-6)


def test_single_neuron_set_matches_single_attack(resnet, generation, stats, quick_attack):
    single = anm_s(resnet, generation, 11, stats, quick_attack)
    as_set = anm_m(resnet, generation, NeuronSet((11,)), stats, quick_attack)
    assert as_set.delta.tobytes() == single.delta.tobytes()


@pytest.mark.parametrize("epsilon", [16 / 255, 8 / 255, 0.1, 0.5])
def test_saturated_projection_never_exceeds_epsilon(epsilon):
    projected = project_linf(np.full(INPUT_SHAPE, 1.0, dtype=np.float32), epsilon)
    assert np.all(np.abs(projected).astype(np.float64) <= epsilon)
    assert projected.max() == budget_bound(epsilon)
    assert np.nextafter(budget_bound(epsilon), np.float32(1)) > epsilon
    Perturbation(projected, epsilon)


def test_loss_matches_scalar_loop(resnet, generation):
    rng = np.random.default_rng(21)
    batch = generation.images[:4]
    neurons = [2, 17, 33, 60]
    targets = rng.uniform(0.5, 3.0, len(neurons))
    delta = project_linf(rng.uniform(-EPSILON, EPSILON, INPUT_SHAPE).astype(np.float32), EPSILON)
    total = 0.0
    for image in batch:
        features = feature_vector(resnet, apply(delta, image)[None]).data[0]
        for neuron, target in zip(neurons, targets):
            total += (float(np.float32(target)) - float(features[neuron])) ** 2
    expected = total / (len(batch) * len(neurons))
    assert anm_loss(resnet, batch, neurons, targets, delta) == pytest.approx(expected, rel=1e-6)


def test_epoch_losses_trend_downward(resnet, generation, stats):
    for seed in range(5):
        config = AttackConfig(epochs=6, batch_size=8, k_neurons=3, seed=seed)
        losses = anm_random(resnet, generation, 3, stats, config).provenance["epoch_losses"]
        assert len(losses) == 6
        for previous, current in zip(losses, losses[1:]):
            assert current <= 1.05 * previous
        assert losses[-1] < losses[0]


def test_multi_neuron_amplification_rows(resnet, generation, stats, quick_attack):
    neurons = NeuronSet((4, 20, 41))
    perturbation = anm_m(resnet, generation, neurons, stats, quick_attack)
    report = amplification_report(resnet, generation, perturbation, neurons=perturbation.neurons)
    assert [row.neuron for row in report.rows] == [4, 20, 41]
    assert all(row.targeted for row in report.rows)
    assert all(row.change > 0 for row in report.rows)
