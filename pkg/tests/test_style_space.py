"""Blending laws, PCA fitting / editing and the embedding store."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gesturegen.style_space import (
    EmbeddingSet,
    PcaModel,
    StyleSpaceError,
    blend,
    parse_blend_spec,
    pca_edit,
    pca_fit,
    window_starts,
    write_scatter_csv,
)


def random_set(n=200, d=64, seed=0, labels=("Neutral", "Happy")):
    rng = np.random.default_rng(seed)
    scales = np.linspace(3.0, 0.2, d)
    X = rng.standard_normal((n, d)) * scales @ np.linalg.qr(rng.standard_normal((d, d)))[0]
    return EmbeddingSet([f"c{i}" for i in range(n)], [labels[i % len(labels)] for i in range(n)], list(X))


def power_iteration_spectrum(cov, k, iters=5000):
    """Leading eigenvalues by power iteration with deflation (independent of LAPACK eigh)."""
    A = cov.copy()
    rng = np.random.default_rng(42)
    out = []
    for _ in range(k):
        v = rng.standard_normal(len(A))
        lam = 0.0
        for _ in range(iters):
            w = A @ v
            v = w / np.linalg.norm(w)
            new = v @ A @ v
            if abs(new - lam) < 1e-15 * max(1.0, abs(new)):
                break
            lam = new
        out.append(lam)
        A = A - lam * np.outer(v, v)
    return np.array(out)


# -- blending ------------------------------------------------------------------------------------
class TestBlend:
    def test_identity(self):
        e = np.random.default_rng(0).standard_normal(64)
        np.testing.assert_array_equal(blend([e], [1.0]), e)

    def test_endpoint(self):
        a, b = np.random.default_rng(1).standard_normal((2, 64))
        np.testing.assert_array_equal(blend([a, b], [0.0, 1.0]), b)

    def test_midpoint(self):
        a, b = np.random.default_rng(2).standard_normal((2, 64))
        np.testing.assert_array_equal(blend([a, b], [0.5, 0.5]), 0.5 * a + 0.5 * b)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-3, 3), st.floats(-5, 5), st.integers(0, 10_000))
    def test_linear(self, w, scale, seed):
        a, b, c, d = np.random.default_rng(seed).standard_normal((4, 16))
        ws = [w, 1.0 - w]
        np.testing.assert_allclose(blend([a + c, b + d], ws), blend([a, b], ws) + blend([c, d], ws), atol=1e-12)
        np.testing.assert_allclose(blend([scale * a, scale * b], ws), scale * blend([a, b], ws), atol=1e-12)

    def test_weight_sum(self):
        with pytest.raises(StyleSpaceError, match="sum"):
            blend([np.zeros(3), np.ones(3)], [0.5, 0.6])

    def test_length_mismatch(self):
        with pytest.raises(StyleSpaceError):
            blend([np.zeros(3)], [0.5, 0.5])

    def test_parse_spec(self):
        assert parse_blend_spec("a@0:0.25, b:c@512:0.75") == [("a@0", 0.25), ("b:c@512", 0.75)]
        with pytest.raises(StyleSpaceError):
            parse_blend_spec("a0.5")
        with pytest.raises(StyleSpaceError):
            parse_blend_spec("a:x")


# -- PCA -------------------------------------------------------------------------------------------
class TestPca:
    def test_line(self):
        rng = np.random.default_rng(3)
        t = rng.standard_normal(100)
        direction = rng.standard_normal(64)
        X = t[:, None] * direction + 1e-3 * rng.standard_normal((100, 64))
        m = pca_fit(EmbeddingSet([str(i) for i in range(100)], ["a"] * 100, list(X)), 2)
        full = pca_fit(EmbeddingSet([str(i) for i in range(100)], ["a"] * 100, list(X)), 64)
        assert m.explained_variance[0] / full.explained_variance.sum() > 0.999

    def test_orthonormal_and_sorted(self):
        m = pca_fit(random_set(), 64)
        np.testing.assert_allclose(m.components @ m.components.T, np.eye(64), atol=1e-6)
        assert np.all(np.diff(m.explained_variance) <= 0)

    def test_full_rank_reconstruction(self):
        data = random_set()
        m = pca_fit(data, 64)
        np.testing.assert_allclose(m.reconstruct(m.project(data.matrix)), data.matrix, atol=1e-5)

    def test_eigenvalues_match_power_iteration(self):
        data = random_set(d=16)
        m = pca_fit(data, 16)
        X = data.matrix - data.matrix.mean(axis=0)
        oracle = power_iteration_spectrum(X.T @ X / (len(X) - 1), 16)
        np.testing.assert_allclose(m.explained_variance, oracle, atol=1e-6)

    def test_sign_convention(self):
        m = pca_fit(random_set(), 8)
        idx = np.argmax(np.abs(m.components), axis=1)
        assert np.all(m.components[np.arange(8), idx] > 0)

    def test_row_order_invariant(self):
        data = random_set()
        perm = np.random.default_rng(4).permutation(len(data))
        shuffled = EmbeddingSet([data.ids[i] for i in perm], [data.labels[i] for i in perm],
                                [data.vectors[i] for i in perm])
        a, b = pca_fit(data, 10), pca_fit(shuffled, 10)
        np.testing.assert_allclose(a.components, b.components, atol=1e-9)
        np.testing.assert_allclose(a.explained_variance, b.explained_variance, rtol=1e-9)
        for lab in a.style_std:
            np.testing.assert_allclose(a.style_std[lab], b.style_std[lab], atol=1e-9)

    def test_subspace_identities(self):
        data = random_set()
        m = pca_fit(data, 5)
        z = np.random.default_rng(5).standard_normal(5)
        np.testing.assert_allclose(m.project(m.reconstruct(z)), z, atol=1e-10)
        once = m.reconstruct(m.project(data.matrix))
        np.testing.assert_allclose(m.reconstruct(m.project(once)), once, atol=1e-10)

    def test_k_exceeds_rank(self):
        rng = np.random.default_rng(6)
        X = rng.standard_normal((30, 3)) @ rng.standard_normal((3, 64))
        data = EmbeddingSet([str(i) for i in range(30)], ["a"] * 30, list(X))
        pca_fit(data, 3)
        with pytest.raises(StyleSpaceError, match="rank 3"):
            pca_fit(data, 4)

    def test_k_exceeds_rows(self):
        with pytest.raises(StyleSpaceError):
            pca_fit(random_set(n=5), 6)

    def test_json_round_trip(self, tmp_path):
        m = pca_fit(random_set(), 4)
        m.save(tmp_path / "pca.json")
        back = PcaModel.load(tmp_path / "pca.json")
        np.testing.assert_array_equal(back.components, m.components)
        np.testing.assert_array_equal(back.style_std["Happy"], m.style_std["Happy"])


class TestEdit:
    def test_zero_delta(self):
        data = random_set()
        m = pca_fit(data, 64)
        e = data.vectors[3]
        np.testing.assert_allclose(pca_edit(e, m, 0, 0.0, "Neutral"), e, atol=1e-12)
        np.testing.assert_allclose(m.reconstruct(m.project(e)), e, atol=1e-10)

    def test_shift_in_component_space(self):
        data = random_set()
        m = pca_fit(data, 64)
        e = data.vectors[7]
        edited = pca_edit(e, m, 1, 2.0, "Neutral")
        dz = m.project(edited) - m.project(e)
        expect = np.zeros(64)
        expect[1] = 2.0 * m.style_std["Neutral"][1]
        np.testing.assert_allclose(dz, expect, atol=1e-9)

    def test_style_std_by_label(self):
        data = random_set()
        m = pca_fit(data, 3)
        Z = m.project(data.matrix)
        neutral = Z[np.array(data.labels) == "Neutral"]
        np.testing.assert_allclose(m.style_std["Neutral"], neutral.std(axis=0), atol=1e-12)

    def test_unknown_label(self):
        m = pca_fit(random_set(), 3)
        with pytest.raises(StyleSpaceError, match="Oration"):
            pca_edit(np.zeros(64), m, 0, 1.0, "Oration")

    def test_component_range(self):
        m = pca_fit(random_set(), 3)
        with pytest.raises(StyleSpaceError):
            pca_edit(np.zeros(64), m, 3, 1.0, "Neutral")


class TestStore:
    def test_csv_round_trip(self, tmp_path):
        data = random_set(n=10)
        data.save_csv(tmp_path / "e.csv")
        back = EmbeddingSet.load_csv(tmp_path / "e.csv")
        assert back.ids == data.ids and back.labels == data.labels
        np.testing.assert_array_equal(back.matrix, data.matrix)
        header = (tmp_path / "e.csv").read_text().splitlines()[0].split(",")
        assert header[:3] == ["clip_id", "label", "e0"] and len(header) == 66

    def test_duplicate_ids(self):
        data = random_set(n=3)
        with pytest.raises(StyleSpaceError, match="duplicate"):
            data.add("c0", "x", np.zeros(64))

    def test_unknown_id(self):
        with pytest.raises(StyleSpaceError, match="nope"):
            random_set(n=3).get("nope")

    def test_scatter_csv(self, tmp_path):
        data = random_set(n=12)
        write_scatter_csv(tmp_path / "s.csv", data, pca_fit(data, 2))
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "clip_id,label,pc1,pc2" and len(lines) == 13

    def test_window_starts(self):
        assert window_starts(1200, 512) == [0, 512]
        assert window_starts(300, 512) == [0]
        assert window_starts(1024, 512) == [0, 512]
