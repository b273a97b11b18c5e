"""Flat config format: parsing, canonical serialization, hashing."""

import math

import pytest

from symcrit import config
from symcrit.errors import ConfigurationError

SAMPLE = """\
# comment line

solver.mode = restricted
solver.max_iterations = 5000
solver.grad_tol = 1e-08
domain.kind = square
domain.side = 6.0
domain.resolution = 9
model.positivity = true
run.seed = 0
"""


def test_parse_types():
    cfg = config.parse_config(SAMPLE)
    assert cfg["solver.mode"] == "restricted"
    assert cfg["solver.max_iterations"] == 5000
    assert isinstance(cfg["solver.max_iterations"], int)
    assert cfg["solver.grad_tol"] == 1e-8
    assert isinstance(cfg["solver.grad_tol"], float)
    assert cfg["model.positivity"] is True
    assert cfg["domain.kind"] == "square"


def test_parse_serialize_parse_is_identity():
    cfg = config.parse_config(SAMPLE)
    text = config.serialize_config(cfg)
    again = config.parse_config(text)
    assert again == cfg
    # serialization of a parsed serialization is a fixed point
    assert config.serialize_config(again) == text


def test_serialization_is_canonical():
    a = config.parse_config("b.x = 1\na.y = 2.5\na.x = true\n")
    b = config.parse_config("a.x =   true\na.y = 2.5\n\n# note\nb.x = 1\n")
    assert config.serialize_config(a) == config.serialize_config(b)
    text = config.serialize_config(a)
    # sorted keys, one blank line between sections, trailing newline
    assert text == "a.x = true\na.y = 2.5\n\nb.x = 1\n"


@pytest.mark.parametrize("value", [0.1, 1.0 / 3.0, 1e-300, 6.02e23, -2.5])
def test_float_round_trip_is_bit_exact(value):
    text = config.serialize_config({"s.v": value})
    back = config.parse_config(text)["s.v"]
    assert isinstance(back, float)
    assert back == value and math.copysign(1, back) == math.copysign(1, value)


@pytest.mark.parametrize("text", [
    "solver.mode restricted",          # no equals sign
    "mode = restricted",               # key without a section
    "a.b.c = 1",                       # nested deeper than one dot
    "a. = 1",                          # empty key part
    ".b = 1",                          # empty section part
    "a b.c = 1",                       # space inside the key
    "a.b =",                           # empty value
    "a.b = nan",                       # non-finite number
    "a.b = inf",
    "a.b = -inf",
    "a.b = 1\na.b = 2",                # duplicate key
])
def test_malformed_configs_rejected(text):
    with pytest.raises(ConfigurationError):
        config.parse_config(text)


def test_parse_error_names_the_line():
    with pytest.raises(ConfigurationError, match="line 3"):
        config.parse_config("a.b = 1\n\nbad line\n")


def test_string_values_pass_through():
    cfg = config.parse_config("group.label = dihedral_4\nrun.tag = two words\n")
    assert cfg["group.label"] == "dihedral_4"
    assert cfg["run.tag"] == "two words"


def test_hash_ignores_formatting_but_not_values():
    a = config.parse_config("a.x = 1\nb.y = 2.0\n")
    b = config.parse_config("# prelude\nb.y =    2.0\na.x = 1\n")
    assert config.config_hash(a) == config.config_hash(b)
    c = dict(a)
    c["b.y"] = 2.0000000001
    assert config.config_hash(c) != config.config_hash(a)
    assert len(config.config_hash(a)) == 64


def test_write_read_round_trip(tmp_path):
    cfg = config.parse_config(SAMPLE)
    path = tmp_path / "run.cfg"
    config.write_config(cfg, path)
    assert config.read_config(path) == cfg


def test_take_typed_lookup():
    cfg = config.parse_config(
        "s.flag = true\ns.count = 7\ns.ratio = 0.5\ns.name = abc\n")
    assert config.take(cfg, "s.flag", "bool") is True
    assert config.take(cfg, "s.count", "int") == 7
    assert config.take(cfg, "s.ratio", "float") == 0.5
    assert config.take(cfg, "s.name", "str") == "abc"
    # ints promote to float, bools never do
    assert config.take(cfg, "s.count", "float") == 7.0
    with pytest.raises(ConfigurationError):
        config.take(cfg, "s.flag", "float")
    with pytest.raises(ConfigurationError):
        config.take(cfg, "s.flag", "int")
    with pytest.raises(ConfigurationError):
        config.take(cfg, "s.count", "bool")
    with pytest.raises(ConfigurationError):
        config.take(cfg, "s.name", "int")


def test_take_missing_keys():
    cfg = {}
    assert config.take(cfg, "s.k", "int", default=3) == 3
    assert config.take(cfg, "s.k", "str", default=None) is None
    with pytest.raises(ConfigurationError, match="missing required"):
        config.take(cfg, "s.k", "int")
    with pytest.raises(ConfigurationError, match="unknown config kind"):
        config.take({"s.k": 1}, "s.k", "complex")
