import zipfile

import numpy as np
import pytest

from partshare.errors import ModelFormatError
from partshare.fusion import bootstrap_fuse
from partshare.model_io import load_model, save_model
from partshare.part_model import PartUniverse
from partshare.sampling import SamplerStrategy, attach_parts, train_shared
from partshare.synthgen import generate, preset, split


@pytest.fixture(scope="module")
def data():
    return split(generate(preset("ambiguous", seed=0, num_images=36, num_test=24)))


def _parts_model(train):
    universe = PartUniverse.from_images(train.images)
    r = universe.encode(train.images)
    model = train_shared(r, train.labels, SamplerStrategy(), budget=6, iterations=15, depth=2)
    return attach_parts(model, universe)


def test_parts_model_round_trip(tmp_path, data):
    train, test = data
    model = _parts_model(train)
    save_model(model, tmp_path / "m.zip", extra={"categories": train.categories})
    back, extra = load_model(tmp_path / "m.zip")
    assert extra == {"categories": train.categories}
    assert back.pool.selected == model.pool.selected
    assert back.part_ids == model.part_ids and back.part_boxes == model.part_boxes
    probe = model.lift(model.pool_responses(test.images))
    np.testing.assert_array_equal(back.scores(probe), model.scores(probe))
    np.testing.assert_array_equal(back.predict(probe), model.predict(probe))


def test_fused_model_round_trip(tmp_path, data):
    train, test = data
    model = bootstrap_fuse(train.global_features, train.images, train.labels, budget=6, iterations=10,
                           depth=1, global_iterations=10)
    save_model(model, tmp_path / "f.zip")
    back, _ = load_model(tmp_path / "f.zip")
    pm = model.part_model
    probe = pm.lift(pm.pool_responses(test.images))
    np.testing.assert_array_equal(back.scores(test.global_features, probe),
                                  model.scores(test.global_features, probe))
    assert back.fusion == model.fusion and back.transfer_exponent == model.transfer_exponent


def test_saving_twice_is_byte_identical(tmp_path, data):
    model = _parts_model(data[0])
    save_model(model, tmp_path / "a.zip")
    save_model(model, tmp_path / "b.zip")
    assert (tmp_path / "a.zip").read_bytes() == (tmp_path / "b.zip").read_bytes()


def test_bad_archives(tmp_path):
    (tmp_path / "junk.zip").write_bytes(b"not a zip")
    with pytest.raises(ModelFormatError):
        load_model(tmp_path / "junk.zip")
    with zipfile.ZipFile(tmp_path / "other.zip", "w") as zf:
        zf.writestr("meta.json", '{"format": "something-else", "version": 1}')
    with pytest.raises(ModelFormatError, match="format tag"):
        load_model(tmp_path / "other.zip")
    with zipfile.ZipFile(tmp_path / "empty.zip", "w") as zf:
        zf.writestr("readme.txt", "hi")
    with pytest.raises(ModelFormatError, match="meta.json"):
        load_model(tmp_path / "empty.zip")
    with pytest.raises(TypeError):
        save_model(object(), tmp_path / "x.zip")
