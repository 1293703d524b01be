import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semsurprise.data import (
    EmbeddingSet,
    FormatError,
    LabelHierarchy,
    RiskTier,
    load_csv,
    load_embeddings,
    load_hierarchy,
    save_embeddings,
    save_hierarchy,
)

from conftest import unit_rows


def test_minimal_file(tmp_path):
    v = np.eye(4)[:2]
    path = tmp_path / "two.semb"
    save_embeddings(EmbeddingSet(v, np.array([0, 1])), path)
    got = load_embeddings(path)
    assert len(got) == 2 and got.dim == 4
    assert got.labels.tolist() == [0, 1]


def test_renormalizes_inside_band(tmp_path):
    v = np.array([[0.9995, 0.0, 0.0]])
    path = tmp_path / "band.semb"
    save_embeddings(EmbeddingSet(v, None, RiskTier.FAR, normalized=False), path)
    raw = bytearray(path.read_bytes())
    raw[8] = 1  # normalized flag
    path.write_bytes(bytes(raw))
    got = load_embeddings(path)
    assert got.normalized
    np.testing.assert_allclose(np.linalg.norm(got.vectors, axis=1), 1.0, atol=1e-12)


def test_norm_violation(tmp_path):
    path = tmp_path / "bad.semb"
    save_embeddings(EmbeddingSet(np.array([[0.5, 0.0]]), None, RiskTier.NEAR, normalized=False), path)
    raw = bytearray(path.read_bytes())
    raw[8] = 1
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="norm violation"):
        load_embeddings(path)


def test_constructor_rejects_unnormalized():
    with pytest.raises(ValueError, match="norm violation"):
        EmbeddingSet(np.array([[2.0, 0.0]]), np.array([0]))


def test_labels_iff_id():
    with pytest.raises(ValueError):
        EmbeddingSet(np.eye(2), None, RiskTier.ID)
    with pytest.raises(ValueError):
        EmbeddingSet(np.eye(2), np.array([0, 1]), RiskTier.FAR)


def test_empty_set_round_trip(tmp_path):
    path = tmp_path / "empty.semb"
    emb = EmbeddingSet(np.zeros((0, 5)), None, RiskTier.NEAR)
    save_embeddings(emb, path)
    assert path.stat().st_size == 22  # header only
    assert load_embeddings(path) == emb


def test_large_round_trip_exact(tmp_path, rng):
    v = unit_rows(rng, 1000, 64)
    emb = EmbeddingSet(v, rng.integers(0, 10, 1000))
    path = tmp_path / "big.semb"
    save_embeddings(emb, path)
    got = load_embeddings(path)
    assert np.max(np.abs(got.vectors - v)) == 0.0
    assert got == emb


def test_float32_round_trip(tmp_path, rng):
    v = unit_rows(rng, 20, 8).astype(np.float32)
    emb = EmbeddingSet(v, None, RiskTier.FAR)
    save_embeddings(emb, tmp_path / "f.semb")
    got = load_embeddings(tmp_path / "f.semb")
    assert got.vectors.dtype == np.float32
    assert got == emb


@settings(max_examples=25, deadline=None)
@given(n=st.integers(0, 30), d=st.integers(1, 12), tier=st.sampled_from(list(RiskTier)), seed=st.integers(0, 2**31))
def test_round_trip_property(tmp_path_factory, n, d, tier, seed):
    r = np.random.default_rng(seed)
    v = r.standard_normal((n, d))
    labels = r.integers(0, 5, n) if tier == RiskTier.ID else None
    emb = EmbeddingSet(v, labels, tier, normalized=False)
    path = tmp_path_factory.mktemp("rt") / "x.semb"
    save_embeddings(emb, path)
    assert load_embeddings(path) == emb


def test_malformed_header(tmp_path):
    (tmp_path / "short.semb").write_bytes(b"SEM")
    with pytest.raises(FormatError, match="malformed header"):
        load_embeddings(tmp_path / "short.semb")
    (tmp_path / "magic.semb").write_bytes(b"XXXX" + bytes(20))
    with pytest.raises(FormatError, match="malformed header"):
        load_embeddings(tmp_path / "magic.semb")


def test_dimension_mismatch(tmp_path):
    path = tmp_path / "trunc.semb"
    save_embeddings(EmbeddingSet(np.eye(3), np.arange(3)), path)
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(FormatError, match="dimension mismatch"):
        load_embeddings(path)


def test_unknown_subclass(tmp_path, hier_2x2):
    path = tmp_path / "lab.semb"
    save_embeddings(EmbeddingSet(np.eye(2), np.array([0, 7])), path)
    with pytest.raises(FormatError, match="unknown subclass"):
        load_embeddings(path, hier_2x2)


def test_hierarchy_round_trip(tmp_path, hier_2x2):
    save_hierarchy(hier_2x2, tmp_path / "h.hier")
    got = load_hierarchy(tmp_path / "h.hier")
    assert got == hier_2x2
    assert got.checksum() == hier_2x2.checksum()
    assert got.siblings(0) == [1]
    assert got.superclass_array.tolist() == [0, 0, 1, 1]


def test_hierarchy_loss_needs_siblings():
    h = LabelHierarchy.from_pairs([("a", "A"), ("b", "B"), ("c", "B")])
    with pytest.raises(ValueError, match="no siblings"):
        h.check_hierarchy_loss()


def test_csv_import(tmp_path, hier_2x2):
    path = tmp_path / "x.csv"
    path.write_text("dim=2\na0,1,0\nb1,0,1\n2,0.6,0.8\n")
    emb = load_csv(path, hier_2x2)
    assert emb.risk_tier == RiskTier.ID
    assert emb.labels.tolist() == [0, 3, 2]
    path.write_text("dim=2\n-,1,0\n-,0,1\n")
    far = load_csv(path, hier_2x2, RiskTier.FAR)
    assert far.labels is None and len(far) == 2
    path.write_text("dim=3\n-,1,0\n")
    with pytest.raises(FormatError, match="dimension mismatch"):
        load_csv(path)


def test_tier_parse():
    assert RiskTier.parse("near") is RiskTier.NEAR
    assert RiskTier.parse("Far") is RiskTier.FAR
    assert RiskTier.FAR.label == "Far"
