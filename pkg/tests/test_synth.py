import pytest

from togkit.dataset import load_dataset, validate_dataset
from togkit.synth import FULL_SCENES, MINI_SCENES, build_fixture

from .conftest import FIXTURE_MANIFEST, ROOT

MINI = ROOT / "tests" / "fixtures" / "mini" / "manifest.json"


@pytest.mark.parametrize("scenes,shipped", [(MINI_SCENES, MINI), (FULL_SCENES, FIXTURE_MANIFEST)], ids=["mini", "full"])
def test_rebuild_matches_shipped(tmp_path, scenes, shipped):
    path = build_fixture(tmp_path, scenes)
    assert path.read_bytes() == shipped.read_bytes()
    for img in sorted((shipped.parent / "images").iterdir()):
        assert (tmp_path / "images" / img.name).read_bytes() == img.read_bytes(), img.name


def test_other_seed_is_valid(tmp_path):
    d = load_dataset(build_fixture(tmp_path, MINI_SCENES, seed=123))
    rep = validate_dataset(d)
    assert not rep.errors
    assert [s.scene_id for s in d.scenes] == ["scene_001", "scene_002", "scene_003"]
