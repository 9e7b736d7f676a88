"""Shared fixtures: a small synthetic CT scan with ten labelled structures."""

import json

import numpy as np
import pytest

from semsam_bench.volume import LabelMap, Volume, write_nifti

STRUCTURE_NAMES = {
    1: "liver", 2: "spleen", 3: "pancreas", 4: "stomach", 5: "aorta",
    6: "left kidney", 7: "right kidney", 8: "gallbladder", 9: "duodenum", 10: "esophagus",
}

# (start, size) per label on a 32 x 32 x 24 grid; boxes are pairwise disjoint
STRUCTURE_BOXES = {
    1: ((2, 2, 4), (5, 5, 12)),
    2: ((12, 3, 6), (4, 4, 10)),
    3: ((22, 4, 2), (5, 6, 14)),
    4: ((3, 14, 8), (4, 5, 9)),
    5: ((13, 14, 5), (5, 4, 12)),
    6: ((24, 15, 7), (4, 4, 10)),
    7: ((4, 25, 3), (5, 4, 13)),
    8: ((14, 24, 9), (4, 5, 8)),
    9: ((24, 25, 4), (5, 5, 11)),
    10: ((10, 9, 16), (3, 3, 6)),
}

SCAN_AFFINE = np.array([
    [-1.5, 0.0, 0.0, 20.0],
    [0.0, -1.5, 0.0, 20.0],
    [0.0, 0.0, 2.0, -30.0],
    [0.0, 0.0, 0.0, 1.0],
])


def make_scan():
    labels = np.zeros((32, 32, 24), dtype=np.int32)
    for label_id, (start, size) in STRUCTURE_BOXES.items():
        labels[tuple(slice(s, s + n) for s, n in zip(start, size))] = label_id
    rng = np.random.default_rng(42)
    voxels = -100.0 + 5.0 * rng.standard_normal(labels.shape)
    voxels[labels > 0] += 140.0 + 10.0 * labels[labels > 0]
    return Volume(voxels=voxels, affine=SCAN_AFFINE), LabelMap(labels=labels, affine=SCAN_AFFINE,
                                                                names=STRUCTURE_NAMES)


@pytest.fixture
def scan():
    """(Volume, LabelMap) of the synthetic scan."""
    return make_scan()


@pytest.fixture
def scan_files(tmp_path):
    """The synthetic scan written as NIfTI files plus a label-name JSON."""
    volume, labelmap = make_scan()
    paths = {
        "volume": tmp_path / "ct.nii",
        "labels": tmp_path / "labels.nii",
        "names": tmp_path / "names.json",
    }
    write_nifti(volume, paths["volume"])
    write_nifti(labelmap, paths["labels"], dtype="int16")
    paths["names"].write_text(json.dumps({str(k): v for k, v in STRUCTURE_NAMES.items()}))
    return paths
