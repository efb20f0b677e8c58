import pytest

from repcali.config import (
    ConfigError,
    ExperimentConfig,
    apply_overrides,
    config_digest,
    parse_config,
    serialize_config,
)


def test_empty_text_gives_defaults():
    cfg = parse_config("")
    assert cfg == ExperimentConfig()
    assert cfg.model.d_h == 64
    assert cfg.calibration.lam == 1.0
    assert cfg.train.lr == pytest.approx(3e-4)


def test_parse_values_and_comments():
    text = """
# experiment setup
[model]
d_h = 32  # width
heads = 4

[calibration]
enabled = true
lambda = 0.5

[method]
kind = repcali

[task]
sizes = 128/32/32
"""
    cfg = parse_config(text)
    assert cfg.model.d_h == 32
    assert cfg.calibration.enabled is True
    assert cfg.calibration.lam == 0.5
    assert cfg.method.kind == "repcali"
    assert cfg.task.sizes_tuple() == (128, 32, 32)


def test_unknown_section_and_key_report_lines():
    with pytest.raises(ConfigError) as exc:
        parse_config("[warp]\nspeed = 9\n")
    assert "line 1" in str(exc.value)
    with pytest.raises(ConfigError) as exc:
        parse_config("[model]\nwobble = 1\n")
    assert "line 2" in str(exc.value) and "wobble" in str(exc.value)


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError) as exc:
        parse_config("[model]\nd_h = 8\nd_h = 16\n")
    assert "duplicate" in str(exc.value)


def test_type_mismatch_reported():
    with pytest.raises(ConfigError) as exc:
        parse_config("[model]\nd_h = wide\n")
    assert "expected int" in str(exc.value)
    with pytest.raises(ConfigError):
        parse_config("[calibration]\nenabled = maybe\n")


def test_negative_lambda_rejected():
    with pytest.raises(ConfigError):
        parse_config("[calibration]\nlambda = -1\n")


def test_key_outside_section_rejected():
    with pytest.raises(ConfigError):
        parse_config("d_h = 8\n")


def test_calibration_composition_rule():
    with pytest.raises(ConfigError):
        parse_config("[calibration]\nenabled = true\n[method]\nkind = lora\n")
    parse_config("[calibration]\nenabled = true\n[method]\nkind = full\n")


def test_task_must_fit_model():
    with pytest.raises(ConfigError):
        parse_config("[task]\nvocab = 128\n")
    with pytest.raises(ConfigError):
        parse_config("[task]\nlen_max = 32\n")


def test_roundtrip_serialize_parse():
    cfg = parse_config("[model]\nd_h = 32\n[calibration]\nlambda = 0.25\n"
                       "[train]\nlr = 0.001\n")
    echo = serialize_config(cfg)
    again = parse_config(echo)
    assert again == cfg
    assert serialize_config(again) == echo


def test_serialization_canonical_sorted():
    echo = serialize_config(ExperimentConfig())
    sections = [l for l in echo.splitlines() if l.startswith("[")]
    assert sections == sorted(sections)
    assert "lambda = 1.0" in echo  # the reserved-word key survives


def test_overrides_apply_and_validate():
    cfg = ExperimentConfig().validate()
    apply_overrides(cfg, ["--train.epochs=3", "--calibration.lambda=0.5"])
    assert cfg.train.epochs == 3
    assert cfg.calibration.lam == 0.5
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["--model.mystery=1"])
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["--nonsense"])
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["--calibration.lambda=-2"])


def test_digest_stable_and_sensitive():
    a = ExperimentConfig().validate()
    b = ExperimentConfig().validate()
    assert config_digest(a) == config_digest(b)
    apply_overrides(b, ["--train.seed=9"])
    assert config_digest(a) != config_digest(b)
