import numpy as np
import pytest

from windsr.dataset import MAGIC, build_dataset, read_dataset, write_dataset
from windsr.errors import FormatError
from windsr.synthetic import empirical_stats, generate_synthetic_pair


@pytest.fixture
def dataset():
    pairs = [generate_synthetic_pair(seed=s, hr_size=16, scale_factor=8) for s in range(3)]
    return build_dataset(pairs, stats=empirical_stats(pairs))


def test_round_trip_bit_exact(tmp_path, dataset):
    manifest = tmp_path / "toy.txt"
    write_dataset(dataset, str(manifest))
    back = read_dataset(str(manifest))
    assert len(back) == len(dataset)
    for a, b in zip(dataset.pairs, back.pairs):
        assert a.timestamp_id == b.timestamp_id
        for va, vb in zip(a.hr_targets + a.conditioning.variables,
                          b.hr_targets + b.conditioning.variables):
            assert va.spec == vb.spec
            for ga, gb in zip(va.grids, vb.grids):
                np.testing.assert_array_equal(ga.values, gb.values)
    assert back.stats.table == dataset.stats.table


def test_write_read_write_identical_bytes(tmp_path, dataset):
    m1, m2 = tmp_path / "a.txt", tmp_path / "b.txt"
    write_dataset(dataset, str(m1))
    write_dataset(read_dataset(str(m1)), str(m2))
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    # manifests identical apart from the payload filename they reference
    t1 = (tmp_path / "a.txt").read_text().replace("a.bin", "x.bin")
    t2 = (tmp_path / "b.txt").read_text().replace("b.bin", "x.bin")
    assert t1 == t2


def test_corrupt_magic_rejected(tmp_path, dataset):
    manifest = tmp_path / "toy.txt"
    write_dataset(dataset, str(manifest))
    payload = tmp_path / "toy.bin"
    blob = bytearray(payload.read_bytes())
    blob[:4] = b"XXXX"
    payload.write_bytes(bytes(blob))
    with pytest.raises(FormatError, match="magic"):
        read_dataset(str(manifest))


def test_truncated_payload_names_failing_record(tmp_path, dataset):
    manifest = tmp_path / "toy.txt"
    write_dataset(dataset, str(manifest))
    payload = tmp_path / "toy.bin"
    blob = payload.read_bytes()
    payload.write_bytes(blob[: len(blob) - 100])
    with pytest.raises(FormatError, match="record 2"):
        read_dataset(str(manifest))


def test_record_order_follows_manifest(tmp_path, dataset):
    manifest = tmp_path / "toy.txt"
    write_dataset(dataset, str(manifest))
    lines = manifest.read_text().splitlines()
    recs = [ln for ln in lines if ln.startswith("rec ")]
    others = [ln for ln in lines if not ln.startswith("rec ")]
    manifest.write_text("\n".join(others + recs[::-1]) + "\n")
    back = read_dataset(str(manifest))
    ids = [p.timestamp_id for p in back.pairs]
    assert ids == [p.timestamp_id for p in dataset.pairs][::-1]


def test_variable_order_normalized_to_manifest(tmp_path, dataset):
    manifest = tmp_path / "toy.txt"
    write_dataset(dataset, str(manifest))
    back = read_dataset(str(manifest))
    want = [s.name for s in dataset.variable_specs()]
    got = [v.spec.name for v in back.pairs[0].hr_targets + back.pairs[0].conditioning.variables]
    assert got == want


def test_missing_target_variable_rejected(tmp_path, dataset):
    manifest = tmp_path / "toy.txt"
    write_dataset(dataset, str(manifest))
    lines = [ln for ln in manifest.read_text().splitlines()
             if not (ln.startswith("var ") and " target " in ln)]
    fixed = []
    for ln in lines:
        if ln.startswith("variables "):
            n = int(ln.split()[1]) - 2
            fixed.append(f"variables {n}")
        else:
            fixed.append(ln)
    manifest.write_text("\n".join(fixed) + "\n")
    with pytest.raises(FormatError, match="target"):
        read_dataset(str(manifest))


def test_magic_constant_documented_value():
    assert MAGIC == b"WSRDBIN1"
