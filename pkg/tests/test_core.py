import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from kinrec.core import (Dataset, Embedding, Modality, cosine_similarity, l2_normalize,
                         read_embeddings, write_embeddings)
from kinrec.errors import DimensionMismatch, MalformedRecord, ZeroVector

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def nonzero_vectors(n):
    return arrays(np.float64, n, elements=finite).filter(lambda v: np.linalg.norm(v) > 1e-3)


class TestNormalize:
    def test_three_four_five(self):
        np.testing.assert_allclose(l2_normalize([3, 4]), [0.6, 0.8], atol=1e-15)

    def test_already_unit(self):
        np.testing.assert_array_equal(l2_normalize([1, 0, 0]), [1.0, 0.0, 0.0])

    def test_zero_vector(self):
        with pytest.raises(ZeroVector):
            l2_normalize([0, 0])

    def test_tolerance_boundary(self):
        with pytest.raises(ZeroVector):
            l2_normalize([1e-13, 0.0])
        assert np.linalg.norm(l2_normalize([1e-11, 0.0])) == pytest.approx(1.0)

    @given(nonzero_vectors(7))
    def test_unit_norm_and_direction(self, v):
        u = l2_normalize(v)
        assert abs(np.linalg.norm(u) - 1.0) < 1e-9
        assert np.dot(u, v) > 0


class TestCosine:
    @pytest.mark.parametrize("a,b,expected", [
        ([1, 0], [1, 0], 1.0),
        ([1, 0], [0, 1], 0.0),
        ([1, 1], [1, 0], 0.70710678),
    ])
    def test_examples(self, a, b, expected):
        assert cosine_similarity(a, b) == pytest.approx(expected, abs=1e-8)

    def test_zero_argument(self):
        with pytest.raises(ZeroVector):
            cosine_similarity([0, 0], [1, 0])
        with pytest.raises(ZeroVector):
            cosine_similarity([1, 0], [0, 0])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            cosine_similarity([1, 0], [1, 0, 0])

    @settings(max_examples=200)
    @given(nonzero_vectors(5), nonzero_vectors(5), st.floats(1e-3, 1e3))
    def test_properties(self, a, b, alpha):
        assert cosine_similarity(a, b) == cosine_similarity(b, a)
        assert abs(cosine_similarity(alpha * a, b) - cosine_similarity(a, b)) < 1e-12
        assert abs(cosine_similarity(a, a) - 1.0) < 1e-12
        assert -1.0 <= cosine_similarity(a, b) <= 1.0


class TestDataModel:
    def test_embedding_widens_and_freezes(self):
        e = Embedding("a", np.array([1, 2], dtype=np.float32))
        assert e.vec.dtype == np.float64
        with pytest.raises(ValueError):
            e.vec[0] = 3.0

    def test_normalized(self):
        e = Embedding("a", [3.0, 4.0], fid="F1", mid="MID1").normalized()
        assert abs(np.linalg.norm(e.vec) - 1) < 1e-9
        assert e.fid == "F1"

    def test_dataset_rejects_duplicates_and_mixed_dims(self):
        with pytest.raises(MalformedRecord):
            Dataset((Embedding("a", [1.0]), Embedding("a", [2.0])))
        with pytest.raises(DimensionMismatch):
            Dataset((Embedding("a", [1.0]), Embedding("b", [2.0, 1.0])))

    def test_dataset_index(self):
        ds = Dataset((Embedding("a", [1.0, 0.0]), Embedding("b", [0.0, 1.0])))
        assert ds.dim == 2 and ds["b"].id == "b" and ds.index["a"] == 0
        np.testing.assert_array_equal(ds.matrix(["b"]), [[0.0, 1.0]])


class TestJsonLines:
    def test_round_trip(self, tmp_path):
        embs = [Embedding("x1", [0.5, 1.5], "F1", "M1", "AF", Modality.TRACK),
                Embedding("x2", [1.0, -2.0])]
        path = tmp_path / "e.jsonl"
        write_embeddings(path, embs)
        ds = read_embeddings(path)
        assert ds.ids == ["x1", "x2"]
        assert ds["x1"].modality is Modality.TRACK and ds["x1"].subgroup == "AF"
        np.testing.assert_array_equal(ds["x2"].vec, [1.0, -2.0])

    @pytest.mark.parametrize("bad", [
        "not json",
        json.dumps({"vec": [1, 2]}),
        json.dumps({"id": "b", "vec": []}),
        json.dumps({"id": "b", "vec": ["x", 1]}),
        json.dumps({"id": "b", "vec": [1, 2], "modality": "video"}),
        json.dumps({"id": "b", "vec": [1, 2, 3]}),
        json.dumps({"id": "a", "vec": [1, 2]}),
    ])
    def test_rejects_with_line_number(self, tmp_path, bad):
        path = tmp_path / "e.jsonl"
        path.write_text(json.dumps({"id": "a", "vec": [1, 2]}) + "\n\n" + bad + "\n")
        with pytest.raises(MalformedRecord) as info:
            read_embeddings(path)
        assert info.value.line == 3
        assert "line 3" in str(info.value)
