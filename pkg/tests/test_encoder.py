import numpy as np
import pytest

from greenhop import encoder as E
from greenhop.errors import InvalidInput


def gather_oracle(vol, s, k, c):
    H, W, T, _ = vol.shape
    r, q = s // 2, k // 2
    out = []
    for h in range(H):
        for w in range(W):
            for t in range(T):
                p = []
                for dh in range(-r, r + 1):
                    for dw in range(-r, r + 1):
                        for dt in range(-q, q + 1):
                            hh = min(max(h + dh, 0), H - 1)
                            ww = min(max(w + dw, 0), W - 1)
                            tt = min(max(t + dt, 0), T - 1)
                            p.append(vol[hh, ww, tt, c])
                out.append(p)
    return np.array(out)


def pool_oracle(v):
    H, W, T, C = v.shape
    out = np.empty((H // 2, W // 2, T, C))
    for i in range(H // 2):
        for j in range(W // 2):
            for t in range(T):
                for c in range(C):
                    out[i, j, t, c] = max(v[2 * i + a, 2 * j + b, t, c] for a in (0, 1) for b in (0, 1))
    return out


def test_neighborhood_center_row_major():
    vol = np.arange(16, dtype=float).reshape(4, 4, 1, 1)
    p = E.extract_neighborhoods(vol, 3, 1, 0)
    center = 1 * 4 + 1
    assert p[center].tolist() == [0, 1, 2, 4, 5, 6, 8, 9, 10]


def test_neighborhoods_match_gather_oracle(rng):
    vol = rng.normal(size=(8, 8, 4, 2))
    for c in (0, 1):
        assert np.array_equal(E.extract_neighborhoods(vol, 3, 3, c), gather_oracle(vol, 3, 3, c))


def test_neighborhood_errors():
    with pytest.raises(InvalidInput):
        E.extract_neighborhoods(np.zeros((2, 2, 1, 1)), 5, 1, 0)
    with pytest.raises(InvalidInput):
        E.extract_neighborhoods(np.zeros((4, 4, 1, 1)), 3, 1, 1)
    assert np.all(E.extract_neighborhoods(np.full((4, 4, 2, 1), 3.0), 3, 3, 0) == 3.0)


def test_max_pool(rng):
    assert E.max_pool(np.array([[1, 2], [3, 4]], float).reshape(2, 2, 1, 1)).ravel().tolist() == [4]
    v = rng.normal(size=(16, 16, 4, 3))
    assert np.array_equal(E.max_pool(v), pool_oracle(v))
    small = rng.normal(size=(4, 4, 2, 1))
    assert np.array_equal(E.max_pool(small.repeat(2, 0).repeat(2, 1)), small)
    with pytest.raises(InvalidInput):
        E.max_pool(np.zeros((3, 4, 1, 1)))


def test_resolution_chain_and_bookkeeping(small_encoder):
    enc, train = small_encoder
    assert enc.per_hop_resolutions == [(112, 112, 12), (56, 56, 12), (28, 28, 12), (14, 14, 12)]
    feats = E.encode(enc, train[0])
    assert [f.shape[:3] for f in feats] == enc.per_hop_resolutions
    assert [f.shape[-1] for f in feats] == enc.per_hop_channel_counts
    for hop in enc.hops:
        assert hop.n_channels == sum(1 + b.n_ac for b in hop.banks)
    assert np.array_equal(feats[0], E.encode(enc, train[0])[0])


def test_encode_matches_straight_line_reference(small_encoder):
    enc, train = small_encoder
    from greenhop import saab
    vol = train[1].astype(np.float32)
    feats = E.encode(enc, vol)
    x = vol.astype(np.float64)
    for level, hop in enumerate(enc.hops):
        H, W, T, _ = x.shape
        cols = []
        for c, bank in enumerate(hop.banks):
            patches = gather_oracle(x, 3, 3, c) if level >= 2 else E.extract_neighborhoods(x, 3, 3, c)
            cols.append(saab.transform(bank, patches).reshape(H, W, T, -1))
        ref = np.concatenate(cols, axis=-1)
        assert np.abs(ref - feats[level]).max() <= 1e-6 * max(1.0, np.abs(ref).max())
        nxt = feats[level]
        if hop.expand is not None:
            nxt = nxt[..., hop.expand]
        if hop.config.pool_after:
            nxt = pool_oracle(nxt)
        x = nxt.astype(np.float64)


def test_constant_volumes_keep_no_ac():
    vols = [np.full((16, 16, 3, 2), v, np.float32) for v in (1.0, 2.0)]
    enc = E.fit_encoder(vols)
    assert enc.per_hop_kept_ac == [0, 0, 0, 0]
    assert enc.per_hop_channel_counts == [len(h.banks) for h in enc.hops]
    f1 = E.encode(enc, vols[0])[0]
    assert np.all(f1[..., 0] == f1[0, 0, 0, 0])


def test_training_order_invariance(small_phantoms):
    cases, _ = small_phantoms
    vols = [c.volume[:32, :32, :4] for c in cases[:4]]
    a = E.fit_encoder(vols)
    b = E.fit_encoder(vols[::-1])
    for ha, hb in zip(a.hops, b.hops):
        for ba, bb in zip(ha.banks, hb.banks):
            assert np.allclose(ba.eigenvalues, bb.eigenvalues, rtol=1e-6)


def test_threads_do_not_change_model(small_phantoms):
    cases, _ = small_phantoms
    vols = [c.volume[:32, :32, :4] for c in cases[:4]]
    a, b = E.fit_encoder(vols, threads=1), E.fit_encoder(vols, threads=4)
    for ha, hb in zip(a.hops, b.hops):
        for ba, bb in zip(ha.banks, hb.banks):
            assert np.array_equal(ba.ac_filters, bb.ac_filters)


def test_encoder_errors(small_encoder):
    enc, _ = small_encoder
    with pytest.raises(InvalidInput):
        E.fit_encoder([])
    with pytest.raises(InvalidInput):
        E.encode(enc, np.zeros((56, 56, 12, 2)))
    with pytest.raises(InvalidInput):
        E.HopConfig(spatial_window=2)


def test_odd_dims_are_replicate_padded():
    vols = [np.random.default_rng(i).normal(size=(10, 14, 3, 1)) for i in range(2)]
    enc = E.fit_encoder(vols)
    assert enc.per_hop_resolutions[:3] == [(10, 14, 3), (5, 7, 3), (3, 4, 3)]
    assert enc.hops[1].pool_pad == (1, 1)
