import numpy as np
import pytest
from hypothesis import given, strategies as st

from e1d3.dataset import find_file, kfold_split, list_subjects, load_subject
from e1d3.errors import InvalidLabel, MissingModality, TooFewSubjects
from e1d3.nifti import write_nifti
from e1d3.volume import Volume3


def _subject(root, sid, rng, seg=True, order=("flair", "t2", "t1ce", "t1")):
    d = root / sid
    d.mkdir()
    data = {}
    for i, mod in enumerate(order):
        arr = rng.standard_normal((4, 5, 6)) + 10 * (i + 1)
        data[mod] = arr
        write_nifti(Volume3(arr, (1.0, 1.0, 2.0)), d / f"{sid}_{mod}.nii.gz")
    if seg:
        lab = rng.choice(np.array([0, 1, 2, 4], np.uint8), size=(4, 5, 6))
        data["seg"] = lab
        write_nifti(Volume3(lab), d / f"{sid}_seg.nii.gz", "uint8")
    return d, data


def test_channel_order_is_fixed(tmp_path, rng):
    d, data = _subject(tmp_path, "BraTS_001", rng)
    v = load_subject(d)
    assert v.subject_id == "BraTS_001"
    for ch, mod in zip(v.channels, ("t1", "t1ce", "t2", "flair")):
        assert ch.data.tobytes() == data[mod].tobytes()
    np.testing.assert_array_equal(v.labels.data, data["seg"])
    assert v.labels.data.dtype == np.uint8 and v.spacing == (1.0, 1.0, 2.0)


def test_missing_modality_and_unlabelled(tmp_path, rng):
    d, _ = _subject(tmp_path, "s", rng, seg=False)
    assert load_subject(d).labels is None
    (d / "s_t2.nii.gz").unlink()
    with pytest.raises(MissingModality):
        load_subject(d)


def test_bad_labels_and_suffix_override(tmp_path, rng):
    d, _ = _subject(tmp_path, "s", rng, seg=False)
    write_nifti(Volume3(np.full((4, 5, 6), 3.0)), d / "s_seg.nii.gz", "uint8")
    with pytest.raises(InvalidLabel):
        load_subject(d)
    (d / "s_seg.nii.gz").rename(d / "s_mask.nii.gz")
    with pytest.raises(InvalidLabel):
        load_subject(d, {"seg": "_mask"})


def test_find_file_and_listing(tmp_path, rng):
    _subject(tmp_path, "b", rng)
    _subject(tmp_path, "a", rng)
    (tmp_path / "notes.txt").write_text("x")
    assert [p.rsplit("/", 1)[1] for p in list_subjects(tmp_path)] == ["a", "b"]
    # _t1 must not pick up _t1ce
    assert find_file(tmp_path / "a", "_t1").endswith("a_t1.nii.gz")
    assert find_file(tmp_path / "a", "_pd") is None


def test_kfold_examples():
    ids = [f"s{i}" for i in range(10)]
    folds = kfold_split(ids, 5, seed=3)
    assert [len(f) for f in folds] == [2] * 5
    assert folds == kfold_split(ids, 5, seed=3)
    assert folds != kfold_split(ids, 5, seed=4)
    with pytest.raises(TooFewSubjects):
        kfold_split(ids[:3], 5)
    with pytest.raises(ValueError):
        kfold_split(["a", "a", "b"], 2)


@given(st.integers(2, 40), st.integers(2, 8), st.integers(0, 1000))
def test_kfold_partitions(n, k, seed):
    ids = [f"id{i}" for i in range(n)]
    if n < k:
        with pytest.raises(TooFewSubjects):
            kfold_split(ids, k, seed)
        return
    folds = kfold_split(ids, k, seed)
    flat = [s for f in folds for s in f]
    assert sorted(flat) == sorted(ids) and len(flat) == len(set(flat))
    sizes = [len(f) for f in folds]
    assert max(sizes) - min(sizes) <= 1
