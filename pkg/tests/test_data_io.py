import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from greenhop.data.container import ModelContainer, load_model, save_model
from greenhop.data.manifest import ef_class, parse_manifest, parse_manifest_text
from greenhop.data.phantoms import PhantomSpec, generate_phantoms
from greenhop.data.preprocess import preprocess, resize_bilinear, standardize
from greenhop.data.volume_io import decode_volume, encode_volume, read_volume, write_volume
from greenhop.errors import CapabilityError, FormatError, InvalidInput, LoadError
from helpers import prediction_bytes


# ---------------------------------------------------------------- volumes

def test_volume_round_trip(tmp_path, rng):
    v = rng.normal(size=(8, 8, 2, 2)).astype(np.float32)
    write_volume(v, tmp_path / "a.glvol")
    back = read_volume(tmp_path / "a.glvol")
    assert back.tobytes() == v.tobytes() and back.shape == v.shape


def test_volume_header_and_layout():
    raw = b"GLVOL1 2 2 1 1\n" + np.arange(4, dtype="<f4").tobytes()
    v = decode_volume(raw)
    assert v.shape == (2, 2, 1, 1) and v[1, 0, 0, 0] == 2.0
    vol = np.arange(24, dtype=np.float32).reshape(2, 3, 2, 2)
    payload = encode_volume(vol).split(b"\n", 1)[1]
    flat = np.frombuffer(payload, "<f4")
    assert flat[1] == vol[0, 0, 0, 1] and flat[2] == vol[0, 0, 1, 0] and flat[4] == vol[0, 1, 0, 0]


def test_volume_errors():
    raw = b"GLVOL1 2 2 1 1\n" + np.zeros(3, "<f4").tobytes()
    with pytest.raises(FormatError, match="12 bytes, expected 16"):
        decode_volume(raw)
    with pytest.raises(FormatError, match="magic"):
        decode_volume(b"GLVOL9 1 1 1 1\n" + bytes(4))
    bad = b"GLVOL1 1 1 1 2\n" + np.array([0, np.nan], "<f4").tobytes()
    with pytest.raises(FormatError, match="byte offset 19"):
        decode_volume(bad)
    with pytest.raises(InvalidInput):
        encode_volume(np.zeros((2, 2)))


# ---------------------------------------------------------------- manifest

def test_ef_cut_offs():
    assert [ef_class(e) for e in (55, 45, 35, 50, 40, 50.0001, 39.999)] == [1, 2, 3, 2, 2, 1, 3]


def test_manifest_parse(tmp_path):
    text = "FileName,EF,Split,Extra\r\na,55,train,x\r\nb,45,VAL,y\r\nc,35,Test,z\r\n"
    m = parse_manifest_text(text)
    assert [r.label for r in m] == [1, 2, 3]
    assert [r.file_name for r in m.split("TRAIN")] == ["a"]
    m.write(tmp_path / "m.csv")
    again = parse_manifest(tmp_path / "m.csv")
    assert [(r.file_name, r.ef_percent, r.split) for r in again] == [(r.file_name, r.ef_percent, r.split) for r in m]


@pytest.mark.parametrize("body, match", [
    ("".join(f"f{i},50,TRAIN\n" for i in range(1, 7)) + "f7,abc,TRAIN\n", "row 7, column EF"),
    ("a,50,TRAIN\na,40,TEST\n", "row 2, column FileName: duplicate"),
    ("a,120,TRAIN\n", "outside"),
    ("a,50,HOLDOUT\n", "unknown split"),
])
def test_manifest_errors(body, match):
    with pytest.raises(FormatError, match=match):
        parse_manifest_text("FileName,EF,Split\n" + body)


def test_manifest_missing_column():
    with pytest.raises(FormatError, match="split"):
        parse_manifest_text("FileName,EF\na,50\n")


# ---------------------------------------------------------------- preprocess

def test_preprocess_identity_and_constant(rng):
    v = rng.normal(size=(112, 112, 14, 2))
    out = preprocess(v, standardize_intensity=False)
    assert out.shape == (112, 112, 12, 2)
    assert np.max(np.abs(out - v[:, :, :12])) <= 1e-6
    assert np.max(np.abs(preprocess(np.full((64, 64, 12, 2), 7.0)))) <= 1e-6
    shifted = preprocess(v, offset=2, standardize_intensity=False)
    assert np.max(np.abs(shifted - v[:, :, 2:14])) <= 1e-6
    with pytest.raises(InvalidInput):
        preprocess(v[:, :, :11])


def test_resize_round_trip(rng):
    for _ in range(3):
        img = standardize(gaussian_filter(rng.normal(size=(28, 28)), 2.0))
        up = resize_bilinear(img, 112, 112)
        back = resize_bilinear(up, 28, 28)
        assert np.mean(np.abs(back - img)) <= 5e-2


# ---------------------------------------------------------------- phantoms

def test_phantoms_deterministic_and_in_range():
    spec = PhantomSpec(seed=5)
    a, ma = generate_phantoms(spec, 4)
    b, mb = generate_phantoms(spec, 4)
    assert all(x.volume.tobytes() == y.volume.tobytes() and x.masks.tobytes() == y.masks.tobytes()
               for x, y in zip(a, b))
    assert ma.to_csv() == mb.to_csv()
    for c in a:
        lo, hi = spec.ratio_ranges[c.label]
        assert lo <= c.masks[..., 1].sum() / c.masks[..., 0].sum() <= hi
        assert ef_class(c.ef_percent) == c.label
    assert {r.split for r in ma} == {"TRAIN", "TEST"}
    with pytest.raises(InvalidInput):
        generate_phantoms(PhantomSpec(ratio_ranges={1: (0.5, 0.6), 2: (0.4, 0.5), 3: (0.7, 0.8)}), 1)


def test_phantom_classes_separable_by_depth2_stump():
    cases, _ = generate_phantoms(PhantomSpec(seed=9), 20)
    r = np.array([c.area_ratio for c in cases])
    y = np.array([c.label for c in cases])
    best = 0.0
    cuts = np.unique(r)
    for t1 in cuts:
        for t2 in cuts[cuts > t1]:
            pred = np.where(r <= t1, 1, np.where(r <= t2, 2, 3))
            best = max(best, float(np.mean(pred == y)))
    assert best >= 0.95


# ---------------------------------------------------------------- container


def test_container_round_trip_is_bit_identical(tmp_path, small_container):
    container, vols = small_container
    save_model(container, tmp_path / "m")
    loaded = load_model(tmp_path / "m")
    assert loaded.capabilities == {"encoder": True, "seg": True, "cls": True}
    assert loaded.config == {"seed": 3}
    assert prediction_bytes(loaded, vols) == prediction_bytes(container, vols)


@pytest.mark.parametrize("section", ["encoder", "seg", "cls"])
def test_tampered_byte_names_section(tmp_path, small_container, section):
    save_model(small_container[0], tmp_path)
    p = tmp_path / f"{section}.bin"
    raw = bytearray(p.read_bytes())
    raw[-3] ^= 0x01
    p.write_bytes(bytes(raw))
    with pytest.raises(LoadError, match=f"checksum failure in section '{section}'"):
        load_model(tmp_path)


def test_missing_cls_loads_seg_only(tmp_path, small_container):
    container, _ = small_container
    save_model(container, tmp_path)
    (tmp_path / "cls.bin").unlink()
    loaded = load_model(tmp_path)
    assert loaded.capabilities == {"encoder": True, "seg": True, "cls": False}
    with pytest.raises(CapabilityError, match="cls"):
        loaded.require("cls")
    seg_only = ModelContainer(container.encoder, container.seg, None)
    save_model(seg_only, tmp_path / "s")
    assert "has_cls=0" in (tmp_path / "s" / "meta.txt").read_text()
    assert not load_model(tmp_path / "s").capabilities["cls"]


def test_stale_sections_removed(tmp_path, small_container):
    container, _ = small_container
    save_model(container, tmp_path)
    save_model(ModelContainer(container.encoder), tmp_path)
    assert not (tmp_path / "seg.bin").exists() and not (tmp_path / "cls.bin").exists()


def test_version_gate(tmp_path, small_container):
    save_model(ModelContainer(small_container[0].encoder), tmp_path)
    meta = tmp_path / "meta.txt"
    text = meta.read_text().replace("format_version=1", "format_version=2")
    meta.write_text(text)
    import hashlib
    sums = (tmp_path / "checksums.txt").read_text().splitlines()
    sums[0] = f"{hashlib.sha256(text.encode()).hexdigest()}  meta.txt"
    (tmp_path / "checksums.txt").write_text("\n".join(sums) + "\n")
    with pytest.raises(LoadError, match="version 2"):
        load_model(tmp_path)
    with pytest.raises(LoadError, match="meta.txt missing"):
        load_model(tmp_path / "nowhere")
