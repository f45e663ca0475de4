"""Filesystem datastore: images, label lifecycle, and the JSON index.

Layout under the root directory:

    index.json            {"version":1, "entries":{id:{"image":..., "labels":{...}, "meta":{...}}}}
    images/               volumes added through the API
    labels/final/         human-approved labels (these define the labeled pool)
    labels/original/      machine-predicted labels

File paths in the index are relative to the root. Mutations serialize
through one in-process lock and commit by writing a temp file and renaming
over index.json, so readers never observe a half-written index.
"""

from __future__ import annotations

import json
import os
import threading
import time
from pathlib import Path

from .errors import (
    BadImage,
    CorruptIndex,
    DimMismatch,
    LabelForgeError,
    UnknownImage,
)
from .nifti import nifti_read
from .volume import LabelMask, Volume

LABEL_TAGS = ("final", "original")
_IMAGE_SUFFIXES = (".nii.gz", ".nii")


def _stem(name: str) -> str:
    for suf in _IMAGE_SUFFIXES:
        if name.endswith(suf):
            return name[: -len(suf)]
    return name


def _ext_for(raw: bytes) -> str:
    return ".nii.gz" if raw[:2] == b"\x1f\x8b" else ".nii"


class Datastore:
    """Single-writer, multi-reader image and label store."""

    def __init__(self, root, entries):
        self.root = Path(root)
        self._entries = entries  # id -> {"image": rel, "labels": {...}, "meta": {...}}
        self._lock = threading.Lock()

    # -- loading / initialization -------------------------------------------

    @classmethod
    def open_or_init(cls, root) -> "Datastore":
        """Open an existing store or build one by scanning for volumes."""
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        index = root / "index.json"
        if index.exists():
            try:
                with open(index) as f:
                    doc = json.load(f)
                entries = doc["entries"]
                if not isinstance(entries, dict):
                    raise TypeError("entries must be an object")
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise CorruptIndex(f"cannot parse {index}: {e}") from e
            for image_id, ent in entries.items():
                try:
                    refs = [ent["image"], *ent.get("labels", {}).values()]
                except (KeyError, TypeError, AttributeError) as e:
                    raise CorruptIndex(
                        f"entry {image_id!r} is malformed: {e}"
                    ) from e
                for rel in refs:
                    if not (root / rel).exists():
                        raise CorruptIndex(
                            f"entry {image_id!r} references missing file {root / rel}"
                        )
            return cls(root, entries)
        entries = {}
        for p in sorted(root.iterdir()):
            if p.is_file() and p.name.endswith(_IMAGE_SUFFIXES):
                entries[_stem(p.name)] = {
                    "image": p.name,
                    "labels": {},
                    "meta": {"added_at": time.time()},
                }
        ds = cls(root, entries)
        ds._write_index()
        return ds

    def _write_index(self):
        doc = {"version": 1, "entries": self._entries}
        tmp = self.root / "index.json.tmp"
        with open(tmp, "w") as f:
            json.dump(doc, f, indent=2)
        os.replace(tmp, self.root / "index.json")

    # -- queries -------------------------------------------------------------

    def list_images(self) -> list:
        """All image ids in insertion order."""
        return list(self._entries)

    def has_image(self, image_id: str) -> bool:
        return image_id in self._entries

    def has_label(self, image_id: str, tag: str = "final") -> bool:
        ent = self._entries.get(image_id)
        return bool(ent and tag in ent["labels"])

    def partition(self):
        """(labeled, unlabeled) ids; an image is labeled iff a final label exists."""
        labeled = [i for i, e in self._entries.items() if "final" in e["labels"]]
        unlabeled = [i for i, e in self._entries.items() if "final" not in e["labels"]]
        return labeled, unlabeled

    def labeled_ids(self) -> list:
        return self.partition()[0]

    def unlabeled_ids(self) -> list:
        return self.partition()[1]

    def image_path(self, image_id: str) -> Path:
        if image_id not in self._entries:
            raise UnknownImage(image_id)
        return self.root / self._entries[image_id]["image"]

    def label_path(self, image_id: str, tag: str = "final") -> Path:
        if image_id not in self._entries:
            raise UnknownImage(image_id)
        labels = self._entries[image_id]["labels"]
        if tag not in labels:
            raise LabelForgeError(f"image {image_id!r} has no {tag!r} label")
        return self.root / labels[tag]

    def load_image(self, image_id: str) -> Volume:
        return nifti_read(self.image_path(image_id).read_bytes())

    def load_label(self, image_id: str, tag: str = "final") -> LabelMask:
        v = nifti_read(self.label_path(image_id, tag).read_bytes())
        return LabelMask((v.data > 0.5).astype("uint8"))

    def get_meta(self, image_id: str) -> dict:
        if image_id not in self._entries:
            raise UnknownImage(image_id)
        return dict(self._entries[image_id]["meta"])

    # -- mutations -----------------------------------------------------------

    def add_image(self, image_id: str, raw: bytes) -> str:
        """Persist NIfTI bytes under images/; returns the assigned id."""
        try:
            nifti_read(raw)
        except LabelForgeError as e:
            raise BadImage(f"not a readable NIfTI volume: {e}") from e
        with self._lock:
            assigned = image_id
            k = 2
            while assigned in self._entries:
                assigned = f"{image_id}-{k}"
                k += 1
            images = self.root / "images"
            images.mkdir(exist_ok=True)
            rel = f"images/{assigned}{_ext_for(raw)}"
            tmp = self.root / (rel + ".tmp")
            tmp.write_bytes(raw)
            os.replace(tmp, self.root / rel)
            self._entries[assigned] = {
                "image": rel,
                "labels": {},
                "meta": {"added_at": time.time()},
            }
            self._write_index()
            return assigned

    def save_label(self, image_id: str, tag: str, raw: bytes) -> Path:
        """Persist a label volume for an image; "final" flips it to labeled."""
        if tag not in LABEL_TAGS:
            raise ValueError(f"tag must be one of {LABEL_TAGS}, got {tag!r}")
        if image_id not in self._entries:
            raise UnknownImage(image_id)
        try:
            lab = nifti_read(raw)
        except LabelForgeError as e:
            raise BadImage(f"label is not a readable NIfTI volume: {e}") from e
        img = self.load_image(image_id)
        if lab.dims != img.dims:
            raise DimMismatch(f"label dims {lab.dims} vs image {img.dims}")
        with self._lock:
            d = self.root / "labels" / tag
            d.mkdir(parents=True, exist_ok=True)
            rel = f"labels/{tag}/{image_id}{_ext_for(raw)}"
            tmp = self.root / (rel + ".tmp")
            tmp.write_bytes(raw)
            os.replace(tmp, self.root / rel)
            ent = self._entries[image_id]
            ent["labels"][tag] = rel
            ent["meta"]["label_saved_at"] = time.time()
            self._write_index()
            return self.root / rel

    def set_meta(self, image_id: str, key: str, value) -> None:
        if image_id not in self._entries:
            raise UnknownImage(image_id)
        with self._lock:
            self._entries[image_id]["meta"][key] = value
            self._write_index()
