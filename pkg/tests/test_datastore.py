"""Filesystem datastore tests."""

import json
import os

import numpy as np
import pytest

from labelforge.datastore import Datastore
from labelforge.errors import BadImage, CorruptIndex, DimMismatch, UnknownImage
from labelforge.nifti import nifti_write
from labelforge.volume import LabelMask, Volume


def volume_bytes(dims=(6, 5, 4), seed=0, gz=True):
    rng = np.random.default_rng(seed)
    v = Volume(rng.normal(size=dims).astype(np.float32))
    return v, nifti_write(v, gz=gz)


def label_bytes(dims=(6, 5, 4), seed=1):
    rng = np.random.default_rng(seed)
    m = (rng.random(dims) > 0.5).astype(np.float32)
    return m.astype(np.uint8), nifti_write(Volume(m), gz=True)


class TestOpenOrInit:
    def test_empty_dir(self, tmp_path):
        ds = Datastore.open_or_init(tmp_path)
        assert ds.list_images() == []
        assert (tmp_path / "index.json").exists()

    def test_scans_existing_volumes(self, tmp_path):
        _, raw = volume_bytes()
        (tmp_path / "spleen_1.nii.gz").write_bytes(raw)
        (tmp_path / "spleen_2.nii.gz").write_bytes(raw)
        ds = Datastore.open_or_init(tmp_path)
        assert ds.list_images() == ["spleen_1", "spleen_2"]
        labeled, unlabeled = ds.partition()
        assert labeled == []
        assert unlabeled == ["spleen_1", "spleen_2"]

    def test_scan_strips_both_extensions(self, tmp_path):
        _, raw = volume_bytes(gz=False)
        (tmp_path / "plain.nii").write_bytes(raw)
        ds = Datastore.open_or_init(tmp_path)
        assert ds.list_images() == ["plain"]

    def test_reopen_uses_index(self, tmp_path):
        _, raw = volume_bytes()
        (tmp_path / "a.nii.gz").write_bytes(raw)
        ds = Datastore.open_or_init(tmp_path)
        ds.set_meta("a", "note", "kept")
        ds2 = Datastore.open_or_init(tmp_path)
        assert ds2.get_meta("a")["note"] == "kept"

    def test_corrupt_json(self, tmp_path):
        (tmp_path / "index.json").write_text("{not json")
        with pytest.raises(CorruptIndex):
            Datastore.open_or_init(tmp_path)

    def test_missing_referenced_file(self, tmp_path):
        _, raw = volume_bytes()
        (tmp_path / "a.nii.gz").write_bytes(raw)
        ds = Datastore.open_or_init(tmp_path)
        os.remove(ds.image_path("a"))
        with pytest.raises(CorruptIndex) as exc:
            Datastore.open_or_init(tmp_path)
        assert "a.nii.gz" in str(exc.value)

    def test_missing_entry_keys(self, tmp_path):
        (tmp_path / "index.json").write_text(
            json.dumps({"version": 1, "entries": {"a": {}}})
        )
        with pytest.raises(CorruptIndex):
            Datastore.open_or_init(tmp_path)


class TestAddImage:
    def test_add_round_trip_bytes(self, tmp_path):
        _, raw = volume_bytes(seed=3)
        ds = Datastore.open_or_init(tmp_path)
        image_id = ds.add_image("ct_07", raw)
        assert image_id == "ct_07"
        assert ds.list_images() == ["ct_07"]
        assert ds.image_path("ct_07").read_bytes() == raw

    def test_duplicate_id_suffixed(self, tmp_path):
        _, raw = volume_bytes()
        ds = Datastore.open_or_init(tmp_path)
        assert ds.add_image("a", raw) == "a"
        assert ds.add_image("a", raw) == "a-2"
        assert ds.add_image("a", raw) == "a-3"
        assert ds.list_images() == ["a", "a-2", "a-3"]

    def test_rejects_garbage(self, tmp_path):
        ds = Datastore.open_or_init(tmp_path)
        with pytest.raises(BadImage):
            ds.add_image("junk", b"\x00" * 64)
        assert ds.list_images() == []
        ds2 = Datastore.open_or_init(tmp_path)
        assert ds2.list_images() == []

    def test_uncompressed_extension(self, tmp_path):
        _, raw = volume_bytes(gz=False)
        ds = Datastore.open_or_init(tmp_path)
        ds.add_image("flat", raw)
        assert ds.image_path("flat").name == "flat.nii"

    def test_survives_reopen(self, tmp_path):
        v, raw = volume_bytes(seed=4)
        ds = Datastore.open_or_init(tmp_path)
        ds.add_image("y", raw)
        ds2 = Datastore.open_or_init(tmp_path)
        got = ds2.load_image("y")
        assert np.array_equal(got.data, v.data)


class TestSaveLabel:
    def setup_store(self, tmp_path):
        ds = Datastore.open_or_init(tmp_path / "store")
        _, raw = volume_bytes()
        ds.add_image("img", raw)
        return ds

    def test_final_label_flips_partition(self, tmp_path):
        ds = self.setup_store(tmp_path)
        _, raw = label_bytes()
        ds.save_label("img", "final", raw)
        labeled, unlabeled = ds.partition()
        assert labeled == ["img"] and unlabeled == []
        assert ds.has_label("img", "final")

    def test_original_does_not_mark_labeled(self, tmp_path):
        ds = self.setup_store(tmp_path)
        _, raw = label_bytes()
        ds.save_label("img", "original", raw)
        labeled, unlabeled = ds.partition()
        assert labeled == [] and unlabeled == ["img"]

    def test_unknown_image(self, tmp_path):
        ds = self.setup_store(tmp_path)
        _, raw = label_bytes()
        with pytest.raises(UnknownImage):
            ds.save_label("ghost", "final", raw)

    def test_bad_tag(self, tmp_path):
        ds = self.setup_store(tmp_path)
        _, raw = label_bytes()
        with pytest.raises(ValueError):
            ds.save_label("img", "draft", raw)

    def test_dim_mismatch_persists_nothing(self, tmp_path):
        ds = self.setup_store(tmp_path)
        _, raw = label_bytes(dims=(3, 3, 3))
        with pytest.raises(DimMismatch):
            ds.save_label("img", "final", raw)
        assert not ds.has_label("img", "final")
        assert ds.partition()[0] == []
        ds2 = Datastore.open_or_init(tmp_path / "store")
        assert not ds2.has_label("img", "final")

    def test_label_binarized_on_load(self, tmp_path):
        ds = self.setup_store(tmp_path)
        arr = np.zeros((6, 5, 4), dtype=np.float32)
        arr[1:3, 1:3, 1:3] = 7.0
        ds.save_label("img", "final", nifti_write(Volume(arr), gz=True))
        m = ds.load_label("img", "final")
        assert isinstance(m, LabelMask)
        assert m.data.dtype == np.uint8
        assert set(np.unique(m.data)) <= {0, 1}
        assert m.data.sum() == 8

    def test_overwrite_same_tag(self, tmp_path):
        ds = self.setup_store(tmp_path)
        _, raw = label_bytes(seed=5)
        ds.save_label("img", "final", raw)
        full = np.ones((6, 5, 4), dtype=np.float32)
        ds.save_label("img", "final", nifti_write(Volume(full), gz=True))
        assert ds.load_label("img", "final").data.sum() == 6 * 5 * 4


class TestAtomicity:
    def test_index_commit_failure_leaves_previous_index(self, tmp_path, monkeypatch):
        _, raw = volume_bytes()
        ds = Datastore.open_or_init(tmp_path)
        ds.add_image("first", raw)

        real_replace = os.replace

        def flaky(a, b, *args, **kwargs):
            if str(b).endswith("index.json"):
                raise OSError("simulated crash")
            return real_replace(a, b, *args, **kwargs)

        monkeypatch.setattr(os, "replace", flaky)
        with pytest.raises(OSError):
            ds.add_image("second", raw)
        monkeypatch.undo()

        ds2 = Datastore.open_or_init(tmp_path)
        assert "first" in ds2.list_images()
        assert "second" not in ds2.list_images()
        # whatever happened, the on-disk index stayed valid json
        json.loads((tmp_path / "index.json").read_text())


class TestModelBased:
    def test_random_sequences_match_reference_map(self, tmp_path):
        rng = np.random.default_rng(42)
        _, img_raw = volume_bytes(dims=(4, 4, 4))
        _, lab_raw = label_bytes(dims=(4, 4, 4))

        for trial in range(5):
            root = tmp_path / f"store{trial}"
            ds = Datastore.open_or_init(root)
            reference = {}
            for _ in range(30):
                op = rng.integers(0, 3)
                if op == 0:
                    want = f"im{rng.integers(0, 8)}"
                    got = ds.add_image(want, img_raw)
                    assert got not in reference
                    reference[got] = set()
                elif op == 1 and reference:
                    target = sorted(reference)[rng.integers(0, len(reference))]
                    tag = ("final", "original")[rng.integers(0, 2)]
                    ds.save_label(target, tag, lab_raw)
                    reference[target].add(tag)
                else:
                    ghost = f"zz{rng.integers(0, 8)}"
                    with pytest.raises(UnknownImage):
                        ds.save_label(ghost, "final", lab_raw)

            assert sorted(ds.list_images()) == sorted(reference)
            labeled, unlabeled = ds.partition()
            assert set(labeled) == {k for k, v in reference.items() if "final" in v}
            assert set(labeled) | set(unlabeled) == set(reference)
            assert not set(labeled) & set(unlabeled)
            ds2 = Datastore.open_or_init(root)
            assert sorted(ds2.list_images()) == sorted(reference)
            assert set(ds2.labeled_ids()) == set(labeled)
