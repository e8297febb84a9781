import pytest

from greenhop.config import apply_overrides, echo, load_config, parse_config
from greenhop.errors import ConfigError


def test_seed_is_mandatory(tmp_path):
    with pytest.raises(ConfigError, match="seed"):
        parse_config({"threads": 2})
    (tmp_path / "empty.yaml").write_text("")
    with pytest.raises(ConfigError, match="seed"):
        load_config(tmp_path / "empty.yaml")


def test_defaults_and_hop_overrides(tmp_path):
    (tmp_path / "c.yaml").write_text(
        "seed: 4\nencoder:\n  hops: [{}, {energy_threshold: 0.95}, {}, {safety_margin: 3}]\n")
    cfg = load_config(tmp_path / "c.yaml")
    hops = cfg.encoder.hop_configs()
    assert [h.energy_threshold for h in hops] == [0.99, 0.95, 0.99, 0.99]
    assert hops[3].safety_margin == 3 and [h.pool_after for h in hops] == [True, True, True, False]
    assert cfg.segmentation.seg_params(4).residual.rounds == 300
    assert cfg.classifier.oversample == "balanced"


@pytest.mark.parametrize("data, where", [
    ({"seed": 1, "bogus": 1}, "bogus"),
    ({"seed": 1, "encoder": {"energy_threshold": 1.5}}, "encoder.energy_threshold"),
    ({"seed": 1, "preprocess": {"target": 100}}, "multiple of 8"),
    ({"seed": 1, "classifier": {"hops": [1, 1]}}, "distinct"),
    ({"seed": 1, "encoder": {"hops": [{}]}}, "exactly 4"),
])
def test_validation_errors_name_the_key(data, where):
    with pytest.raises(ConfigError, match=where):
        parse_config(data)


def test_bad_yaml(tmp_path):
    (tmp_path / "bad.yaml").write_text("seed: [1\n")
    with pytest.raises(ConfigError, match="YAML"):
        load_config(tmp_path / "bad.yaml")
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.yaml")


def test_overrides_take_precedence():
    cfg = parse_config({"seed": 1, "paths": {"data": "a"}})
    new = apply_overrides(cfg, {"seed": 9, "paths.data": "b", "paths.out": None, "segmentation.rounds": 5})
    assert (new.seed, new.paths.data, new.paths.out, new.segmentation.rounds) == (9, "b", None, 5)
    assert cfg.seed == 1


def test_echo_excludes_machine_specific_keys():
    a = parse_config({"seed": 1, "threads": 1, "paths": {"data": "x"}})
    b = parse_config({"seed": 1, "threads": 4, "paths": {"data": "y"}})
    assert echo(a) == echo(b) and "paths" not in echo(a)
    assert parse_config(dict(echo(a), threads=2)).encoder == a.encoder
