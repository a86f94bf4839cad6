import numpy as np
import pytest

from anm.data.datasets import ROLES, BatchPlan, Dataset, batches, generate_synthetic, split_dataset
from anm.data.packed import MAGIC, VERSION, load_packed, save_packed
from anm.errors import TruncatedFileError, ValidationError
from anm.utils.binfmt import PayloadWriter, write_container


@pytest.mark.parametrize(
    "kind, role, labeled",
    [("generation", "generation", False), ("pretext", "pretext", True), ("task", "downstream-train", True)],
)
def test_generated_kinds(kind, role, labeled):
    dataset = generate_synthetic(kind, 3, 12, seed=0)
    assert dataset.role == role
    assert dataset.has_labels is labeled
    assert dataset.images.shape == (12, 3, 32, 32)
    assert dataset.images.min() >= 0.0 and dataset.images.max() <= 1.0
    if labeled:
        assert set(np.unique(dataset.labels)) == {0, 1, 2}


def test_generation_is_deterministic():
    first = generate_synthetic("task", 3, 12, seed=4)
    second = generate_synthetic("task", 3, 12, seed=4)
    assert first.checksum == second.checksum
    assert generate_synthetic("task", 3, 12, seed=5).checksum != first.checksum


def test_generation_data_has_no_labels(generation):
    with pytest.raises(ValidationError, match="no labels"):
        generation.labels


def test_bad_generator_arguments():
    with pytest.raises(ValidationError):
        generate_synthetic("imagenet", 3, 12, seed=0)
    with pytest.raises(ValidationError):
        generate_synthetic("task", 5, 3, seed=0)
    with pytest.raises(ValidationError):
        generate_synthetic("task", 1, 10, seed=0)


def test_pixel_range_is_enforced():
    images = np.full((1, 3, 32, 32), 1.5, dtype=np.float32)
    with pytest.raises(ValidationError, match=r"\[0, 1\]"):
        Dataset(images, None, 0, "generation")


def test_split_assigns_downstream_roles():
    task = generate_synthetic("task", 3, 30, seed=0)
    train, test = split_dataset(task, 10, seed=0)
    assert (train.role, test.role) == ("downstream-train", "downstream-test")
    assert (len(train), len(test)) == (20, 10)
    with pytest.raises(ValidationError):
        split_dataset(task, 30)


def test_batches_cover_every_sample_once_per_epoch(generation):
    plan = BatchPlan(batch_size=7, epochs=2, seed=3)
    seen: dict[int, list[int]] = {0: [], 1: []}
    sizes = []
    for epoch, idx in batches(generation, plan):
        seen[epoch].extend(idx.tolist())
        sizes.append(len(idx))
    for epoch in seen:
        assert sorted(seen[epoch]) == list(range(len(generation)))
    # 24 samples in batches of 7: 7, 7, 7, 3 per epoch
    assert sizes == [7, 7, 7, 3] * 2


def test_batch_order_is_reproducible(generation):
    plan = BatchPlan(batch_size=5, epochs=1, seed=9)
    first = [idx.tolist() for _, idx in batches(generation, plan)]
    second = [idx.tolist() for _, idx in batches(generation, plan)]
    assert first == second


def test_batch_larger_than_dataset(generation):
    with pytest.raises(ValidationError, match="exceeds"):
        list(batches(generation, BatchPlan(batch_size=100)))


def test_packed_round_trip(tmp_path, task_split):
    train, _ = task_split
    loaded = load_packed(save_packed(train, tmp_path / "train.anmd"))
    assert loaded.checksum == train.checksum
    assert loaded.role == train.role
    assert loaded.num_classes == train.num_classes
    assert loaded.manifest["kind"] == "task"
    np.testing.assert_array_equal(loaded.labels, train.labels)


def test_packed_unlabeled_round_trip(tmp_path, generation):
    loaded = load_packed(save_packed(generation, tmp_path / "gen.anmd"))
    assert not loaded.has_labels
    assert loaded.dataset_id == generation.dataset_id


def test_task_labels_are_balanced():
    labels = generate_synthetic("task", 8, 4096, seed=0).labels
    counts = np.bincount(labels, minlength=8)
    assert counts.max() - counts.min() <= 1
    assert counts.sum() == 4096
    uneven = np.bincount(generate_synthetic("task", 8, 1003, seed=0).labels, minlength=8)
    assert uneven.max() - uneven.min() <= 1


def test_nearest_centroid_beats_chance():
    train = generate_synthetic("task", 8, 400, seed=0)
    test = generate_synthetic("task", 8, 200, seed=1, task_seed=0)
    flat_train = train.images.reshape(len(train), -1).astype(np.float64)
    flat_test = test.images.reshape(len(test), -1).astype(np.float64)
    centroids = np.stack([flat_train[train.labels == c].mean(axis=0) for c in range(8)])
    distances = ((flat_test[:, None, :] - centroids[None]) ** 2).sum(axis=2)
    accuracy = np.mean(distances.argmin(axis=1) == test.labels)
    assert accuracy > 1 / 8


def test_truncated_packed_file(tmp_path, generation):
    path = save_packed(generation, tmp_path / "gen.anmd")
    blob = path.read_bytes()
    path.write_bytes(blob[:-100])
    with pytest.raises(TruncatedFileError) as info:
        load_packed(path)
    assert (info.value.expected, info.value.actual) == (len(blob), len(blob) - 100)


def test_class_header_must_cover_labels(tmp_path, task_split):
    train, _ = task_split
    out = PayloadWriter()
    out.u8(ROLES.index(train.role))
    for value in (len(train), 2, 32, 32):
        out.u32(value)
    out.u8(1)
    out.array(train.images, "f4")
    out.array(train.labels, "u4")
    out.string("{}")
    path = tmp_path / "bad.anmd"
    write_container(path, MAGIC, VERSION, out.getvalue())
    with pytest.raises(ValidationError, match="header declares 2 classes"):
        load_packed(path)
