import numpy as np
import pytest

from partshare.analysis import box_agreement
from partshare.errors import InvalidConfig, TooLarge
from partshare.part_model import PartUniverse
from partshare.sampling import SamplerStrategy, train_shared
from partshare.synthgen import (
    PRESETS,
    SynthConfig,
    brute_force_stump,
    generate,
    preset,
    separating_columns,
    split,
)


def _prototype_of_column(data, universe):
    return np.array([data.part_prototype[pid] for pid in universe.part_ids])


def test_generation_is_deterministic():
    a = generate(preset("provenance", seed=3))
    b = generate(preset("provenance", seed=3))
    np.testing.assert_array_equal(a.global_features, b.global_features)
    np.testing.assert_array_equal(a.labels.labels, b.labels.labels)
    for x, y in zip(a.images, b.images):
        np.testing.assert_array_equal(x.matrix(), y.matrix())
    assert a.boxes == b.boxes
    c = generate(preset("provenance", seed=4))
    assert not np.array_equal(a.global_features, c.global_features)


def test_noise_free_private_prototypes_are_separable_by_one_column_each():
    data, _ = split(generate(preset("planted", seed=0)))
    universe = PartUniverse.from_images(data.images)
    r = universe.encode(data.images)
    proto = _prototype_of_column(data, universe)
    for l in range(3):
        cols = separating_columns(r, data.labels.column(l))
        assert cols, f"category {l} has no separating column"
        # every separating column is a copy of the category's own prototype
        assert set(proto[cols]) == {l}
    model = train_shared(r, data.labels, SamplerStrategy.max_exploit(), budget=3, iterations=60, depth=1)
    final = [row["train_error"] for row in model.training_log if row["iteration"] == 59]
    assert final == [0.0, 0.0, 0.0]


def test_single_prototype_separates_two_categories():
    cfg = SynthConfig(num_images=40, num_categories=2, num_prototypes=2, parts_per_image=4, seed=1)
    data = generate(cfg)
    universe = PartUniverse.from_images(data.images)
    r = universe.encode(data.images)
    proto = _prototype_of_column(data, universe)
    # exhaustive single-column classification: each prototype column alone classifies both categories
    for q in range(2):
        col = np.flatnonzero(proto == q)[0]
        for l in range(2):
            y = data.labels.column(l)
            assert col in separating_columns(r, y) or col in separating_columns(-r, y)
    model = train_shared(r, data.labels, SamplerStrategy.max_exploit(), budget=1, iterations=20, depth=1)
    assert len(model.pool) == 1
    assert proto[model.pool.selected[0]] in (0, 1)
    final = [row["train_error"] for row in model.training_log if row["iteration"] == 19]
    assert final == [0.0, 0.0]


def test_boxes_cover_planted_parts_exactly():
    data = generate(preset("provenance", seed=0))
    by_image = data.boxes_by_image()
    for image in data.images[:20]:
        for part in image.parts:
            agreements = [box_agreement(part.box, b.rect) for b in by_image[image.image_id]]
            assert all(a in (0.0, 1.0) for a in agreements)
            q = data.part_prototype[part.part_id]
            planted = 0 <= q < data.config.num_prototypes
            assert (max(agreements, default=0.0) == 1.0) == planted


def test_presets_validate_and_split():
    for name in PRESETS:
        cfg = preset(name, seed=2)
        cfg.validate()
        train, test = split(generate(preset(name, seed=2, num_images=12, num_test=6)))
        assert len(train.images) == 12 and len(test.images) == 6
        assert train.labels.mode == cfg.mode
    with pytest.raises(InvalidConfig):
        preset("nope")


def test_multilabel_preset_has_multiple_positives():
    data = generate(preset("provenance", seed=0))
    assert (data.labels.labels == 1).sum(axis=1).max() > 1


def test_invalid_configs():
    with pytest.raises(InvalidConfig):
        SynthConfig(num_images=0).validate()
    with pytest.raises(InvalidConfig):
        SynthConfig(num_prototypes=4).validate()  # default sharing needs P == L
    with pytest.raises(InvalidConfig):
        SynthConfig(presence=1.5).validate()
    with pytest.raises(InvalidConfig):
        SynthConfig(num_categories=2, num_prototypes=2, sharing_matrix=((True, False), (False, False))).validate()
    with pytest.raises(InvalidConfig):
        SynthConfig(parts_per_image=101).validate()


def test_brute_force_single_example():
    part, thr, err = brute_force_stump(np.array([[0.3, 0.1]]), np.array([1.0]), np.array([1.0]))
    # a single example is already classified by the constant leaf
    assert (part, thr, err) == (None, None, 0.0)


def test_brute_force_finds_separating_threshold():
    r = np.array([[0.1, 5.0], [0.4, 5.0], [0.9, 5.0]])
    part, thr, err = brute_force_stump(r, np.array([-1.0, 1.0, 1.0]), np.full(3, 1 / 3))
    assert (part, thr, err) == (0, 0.25, 0.0)


def test_brute_force_size_limit():
    with pytest.raises(TooLarge):
        brute_force_stump(np.zeros((1001, 1000)), np.ones(1001), np.ones(1001))
