from greenhop.census import Census, census, conv3d, unet3d_reference
from greenhop.data.container import ModelContainer


def test_conv_count():
    assert conv3d(2, 16, 3) == 27 * 2 * 16 + 16
    assert conv3d(16, 1, 1) == 17


def test_reference_unet_hand_count():
    enc = [(2, 16), (16, 32), (32, 64), (64, 128), (128, 256)]
    total = sum(27 * a * b + b + 27 * b * b + b for a, b in enc)
    for w in (128, 64, 32, 16):
        total += 8 * 2 * w * w + w                       # transposed conv from 2w to w
        total += 27 * 2 * w * w + w + 27 * w * w + w     # two convs after concatenation
    total += 16 + 1
    assert unet3d_reference() == total == 5_645_345


def test_census_counts(small_encoder, small_seg):
    enc, _ = small_encoder
    c = census(ModelContainer(enc, small_seg[0]))
    assert c.saab == sum(b.dim * b.n_ac + 1 for h in enc.hops for b in h.banks)
    seg = small_seg[0]
    assert c.seg_trees == sum(e.n_nodes + 1 for e in [seg.initial, *seg.residual.values()])
    assert c.cls_trees == 0 and c.total == c.saab + c.seg_trees
    rows = dict((k, v) for k, v in c.rows())
    assert rows["reference_unet3d"] == 5_645_345 and float(rows["ratio"]) == round(c.ratio, 6)


def test_ratio():
    assert Census(10, 20, 30, 600).ratio == 0.1
