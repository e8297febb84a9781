import numpy as np
import pytest

from greenhop import encoder as enc_mod
from greenhop.data.phantoms import PhantomSpec, generate_phantoms
from greenhop.data.preprocess import standardize


@pytest.fixture(scope="session")
def small_phantoms():
    cases, manifest = generate_phantoms(PhantomSpec(seed=11, speckle=0.15), (4, 4, 4))
    return cases, manifest


@pytest.fixture(scope="session")
def small_encoder(small_phantoms):
    cases, manifest = small_phantoms
    train = [standardize(c.volume) for c, r in zip(cases, manifest) if r.split == "TRAIN"]
    cfgs = [enc_mod.HopConfig(pool_after=i < 3, expand_threshold=0.005) for i in range(4)]
    return enc_mod.fit_encoder(train, cfgs), train


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_seg(small_phantoms, small_encoder):
    """Segmentation model trained on the small phantom TRAIN split, plus per-split level grids."""
    from greenhop import segmentation as S
    from greenhop.gbt import GBTParams

    cases, manifest = small_phantoms
    enc, _ = small_encoder
    split = {"TRAIN": [], "TEST": []}
    for c, r in zip(cases, manifest):
        split[r.split].append(c)
    box = S.compute_crop_box([c.masks for c in split["TRAIN"]])
    h0, h1, w0, w1 = box

    def samples(group):
        out = []
        for c in group:
            f = enc_mod.encode(enc, standardize(c.volume))
            for p in (0, 1):
                out.append((S.level_grids(f, box, p), c.masks[..., p]))
        return out

    train, test = samples(split["TRAIN"]), samples(split["TEST"])
    gp = GBTParams(rounds=40)
    params = S.SegParams(initial=gp, residual=gp)
    model, audit = S.train_segmentation([g for g, _ in train], [m[h0:h1, w0:w1] for _, m in train],
                                        box, (112, 112), params)
    return model, audit, train, test


@pytest.fixture(scope="session")
def small_container(small_phantoms, small_encoder, small_seg):
    """Encoder, decoder and classifier trained in memory, plus volumes to predict on."""
    from greenhop import classification as C
    from greenhop.data.container import ModelContainer
    from greenhop.gbt import GBTParams

    cases, manifest = small_phantoms
    enc, _ = small_encoder
    seg = small_seg[0]
    counts = enc.per_hop_channel_counts
    train = [c for c, r in zip(cases, manifest) if r.split == "TRAIN"]
    X = np.stack([C.build_descriptor(enc_mod.encode(enc, standardize(c.volume)), channel_counts=counts)
                  for c in train])
    y = np.array([c.label for c in train])
    cls = C.train_classifier(X, y, GBTParams(rounds=10, max_depth=2, min_samples_leaf=1), channel_counts=counts)
    vols = [standardize(c.volume) for c in cases[:3]] + [np.ones((112, 112, 12, 2), np.float32)]
    return ModelContainer(enc, seg, cls, {"seed": 3}), vols


def pytest_terminal_summary(terminalreporter):
    from helpers import RESULTS, summary_lines

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in summary_lines():
            terminalreporter.write_line(line)
