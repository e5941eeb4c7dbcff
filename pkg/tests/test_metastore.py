import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from posepipe import synthscene
from posepipe.errors import ChecksumMismatch, DuplicateKey, NotFound, ProbeFailed
from posepipe.metastore import BlobRef, BlobStore

from conftest import import_frames

# sha256 of the empty input; algorithm-defined constant
EMPTY_SHA256 = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"

# 1 MiB deterministic payload; digest frozen from sha256sum and openssl
# run on the identical byte stream
PAYLOAD7_SHA256 = "11eb1483c98bc611d8e59822a5d377a706bbd1d7465358b5ded2122e04eae404"


def payload7() -> bytes:
    chunks = [
        hashlib.md5(f"posepipe-payload-7-{i}".encode()).digest() * 4
        for i in range(16384)
    ]
    out = b"".join(chunks)
    assert len(out) == 1 << 20
    return out


@pytest.fixture()
def blobs(tmp_path):
    return BlobStore(tmp_path / "store")


def test_empty_payload_digest(blobs):
    ref = blobs.put_blob(b"")
    assert ref.digest == EMPTY_SHA256
    assert ref.size_bytes == 0


def test_put_is_idempotent(blobs):
    ref1 = blobs.put_blob(b"hello")
    ref2 = blobs.put_blob(b"hello")
    assert ref1 == ref2
    assert len(blobs.digests()) == 1
    assert blobs.path_of(ref1.digest).parent.name == ref1.digest[:2]


def test_digest_matches_external_hash_oracle(blobs):
    ref = blobs.put_blob(payload7())
    assert ref.digest == PAYLOAD7_SHA256
    assert ref.size_bytes == 1 << 20


def test_roundtrip_bytes_identical(blobs, tmp_path):
    data = b"some video bytes" * 1000
    ref = blobs.put_blob(data)
    out = blobs.get_blob(ref, tmp_path)
    assert out.read_bytes() == data


def test_single_byte_corruption_detected(blobs, tmp_path):
    data = payload7()[: 1 << 12]
    ref = blobs.put_blob(data)
    stored = blobs.path_of(ref.digest)
    corrupted = bytearray(data)
    corrupted[137] ^= 0x40
    stored.write_bytes(bytes(corrupted))
    with pytest.raises(ChecksumMismatch):
        blobs.get_blob(ref, tmp_path)
    # the unusable copy must not be left behind
    assert not (tmp_path / ref.digest).exists()


@settings(max_examples=40, deadline=None)
@given(position=st.integers(0, 4095), flip=st.integers(1, 255))
def test_any_single_byte_corruption_detected(tmp_path_factory, position, flip):
    root = tmp_path_factory.mktemp("blobs")
    blobs = BlobStore(root / "store")
    data = bytes(range(256)) * 16
    ref = blobs.put_blob(data)
    stored = blobs.path_of(ref.digest)
    corrupted = bytearray(data)
    corrupted[position % len(data)] ^= flip
    stored.write_bytes(bytes(corrupted))
    with pytest.raises(ChecksumMismatch):
        blobs.get_blob(ref, root / "dest")


def test_get_unknown_digest(blobs, tmp_path):
    ref = BlobRef(digest="0" * 64, size_bytes=3)
    with pytest.raises(NotFound):
        blobs.get_blob(ref, tmp_path)


def test_storage_errors_mapped(blobs, monkeypatch):
    import errno
    import os as os_module

    from posepipe.errors import StorageFull, StoreRootUnwritable

    def fail_with(code):
        def replace(src, dst):
            raise OSError(code, os_module.strerror(code))
        return replace

    monkeypatch.setattr("posepipe.metastore.os.replace", fail_with(errno.ENOSPC))
    with pytest.raises(StorageFull):
        blobs.put_blob(b"does not fit")
    monkeypatch.setattr("posepipe.metastore.os.replace", fail_with(errno.EACCES))
    with pytest.raises(StoreRootUnwritable):
        blobs.put_blob(b"may not write")


def test_gc_removes_only_unreferenced(blobs):
    keep = blobs.put_blob(b"keep me")
    drop = blobs.put_blob(b"drop me")
    removed = blobs.gc({keep.digest})
    assert removed == 1
    assert blobs.digests() == {keep.digest}
    assert not blobs.path_of(drop.digest).exists()


def _frames(n=6, w=16, h=12):
    rng = np.random.default_rng(1)
    return rng.integers(0, 255, size=(n, h, w, 3), dtype=np.uint8)


def test_import_video_probes_metadata(pipe, tmp_path):
    path = tmp_path / "clip.pprv"
    synthscene.write_rawvideo(_frames(30, 64, 48), path, fps=25.0)
    record = pipe.store.import_video("t", "a", path, pipe.frame_source)
    assert (record.frame_count, record.width, record.height) == (30, 64, 48)
    assert record.fps == 25.0
    fetched = pipe.store.video_record("t", "a")
    assert fetched.blob == record.blob


def test_import_duplicate_key_rejected(pipe, tmp_path):
    path = tmp_path / "clip.pprv"
    synthscene.write_rawvideo(_frames(), path)
    pipe.store.import_video("t", "a", path, pipe.frame_source)
    with pytest.raises(DuplicateKey):
        pipe.store.import_video("t", "a", path, pipe.frame_source)


def test_same_filename_under_other_project_ok(pipe, tmp_path):
    path = tmp_path / "clip.pprv"
    synthscene.write_rawvideo(_frames(), path)
    pipe.store.import_video("t", "a", path, pipe.frame_source)
    record = pipe.store.import_video("t2", "a", path, pipe.frame_source)
    assert record.project == "t2"


def test_import_unprobeable_file(pipe, tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"not a video at all")
    with pytest.raises(ProbeFailed):
        pipe.store.import_video("t", "junk", path, pipe.frame_source)


def test_working_copy_validates_and_cleans_up(pipe, tmp_path):
    frames = _frames()
    import_frames(pipe, "t", "a", frames)
    scratch = tmp_path / "scratch2"
    scratch.mkdir()
    with pipe.store.working_copy("t", "a", scratch) as path:
        copied, _ = synthscene.read_rawvideo(path)
        assert np.array_equal(copied, frames)
    assert list(scratch.iterdir()) == []


def test_delete_video_cascade_counts(pipe):
    import_frames(pipe, "t", "a", _frames())
    pipe.select_method("tracking_bbox", "ref-color")
    pipe.engine.populate("tracking_bbox")
    pipe.annotate("t", "a", tracking_method=0, subject_id=0, track_ids=[0])
    pipe.engine.populate("person_bbox")
    # video + tracking method row + tracklets + annotation + person bbox
    removed = pipe.store.delete_video_cascade("t", "a")
    assert removed == 5
    assert pipe.engine.audit_referential_integrity() == []
    assert pipe.engine.keys("video") == []
    assert pipe.engine.keys_to_populate("tracking_bbox") == []


def test_delete_video_without_descendants(pipe):
    import_frames(pipe, "t", "solo", _frames())
    assert pipe.store.delete_video_cascade("t", "solo") == 1
    with pytest.raises(NotFound):
        pipe.store.delete_video_cascade("t", "solo")


def test_gc_keeps_row_referenced_blobs(pipe):
    import_frames(pipe, "t", "a", _frames())
    orphan = pipe.store.blobs.put_blob(b"orphan bytes")
    assert pipe.store.gc_blobs() == 1
    assert not pipe.store.blobs.path_of(orphan.digest).exists()
    assert pipe.store.video_record("t", "a").blob.digest in pipe.store.blobs.digests()
