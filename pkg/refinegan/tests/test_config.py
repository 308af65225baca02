import logging
import sys
from pathlib import Path

import pytest

PROJECT_ROOT = Path(__file__).resolve().parents[2]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from refinegan.app.config import Settings, get_settings  # noqa: E402
from refinegan.app.errors import UsageError  # noqa: E402
from refinegan.app.models import AcquisitionPlane  # noqa: E402
from refinegan.app.schemas import RunConfig  # noqa: E402
from refinegan.app.services.run_config import (  # noqa: E402
    config_keys,
    dump_run_config,
    flatten,
    load_run_config,
    parse_flat,
)


def test_settings_read_environment(monkeypatch):
    monkeypatch.setenv("REFINEGAN_THREADS", "3")
    monkeypatch.setenv("REFINEGAN_LOG_LEVEL", "debug")
    monkeypatch.setenv("REFINEGAN_DETERMINISTIC", "off")

    settings = Settings()

    assert settings.threads == 3
    assert settings.log_level == "DEBUG"
    assert settings.log_level_value == logging.DEBUG
    assert settings.deterministic is False


def test_settings_fall_back_on_bad_values(monkeypatch):
    monkeypatch.setenv("REFINEGAN_THREADS", "-2")
    monkeypatch.setenv("REFINEGAN_LOG_LEVEL", "chatty")
    monkeypatch.delenv("REFINEGAN_DETERMINISTIC", raising=False)

    settings = Settings()

    assert settings.threads >= 1
    assert settings.log_level == "INFO"
    assert settings.deterministic is True


def test_get_settings_is_cached(monkeypatch):
    get_settings.cache_clear()
    monkeypatch.setenv("REFINEGAN_LOG_LEVEL", "WARNING")
    try:
        first = get_settings()
        monkeypatch.setenv("REFINEGAN_LOG_LEVEL", "ERROR")
        assert get_settings() is first
        assert first.log_level == "WARNING"
    finally:
        get_settings.cache_clear()


def test_parse_flat_handles_comments_and_whitespace():
    text = """
    # experiment
    seed = 11
    planes = axial, coronal   # two planes
    generator.depth=2
    """

    assert parse_flat(text) == {
        "seed": "11",
        "planes": "axial, coronal",
        "generator.depth": "2",
    }


def test_parse_flat_rejects_bad_lines_and_duplicates():
    with pytest.raises(UsageError):
        parse_flat("seed 11")
    with pytest.raises(UsageError):
        parse_flat("seed = 1\nseed = 2")


def test_load_run_config_nests_keys_and_applies_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "seed = 11\nepochs = 3\nplanes = axial,sagittal\n"
        "generator.depth = 2\ngenerator.recurrent = true\nloss.lambda_l1 = 2.5\n",
        encoding="utf-8",
    )

    cfg = load_run_config(path, {"seed": 5, "out_dir": None})

    assert cfg.seed == 5
    assert cfg.epochs == 3
    assert cfg.planes == (AcquisitionPlane.AXIAL, AcquisitionPlane.SAGITTAL)
    assert cfg.generator.depth == 2
    assert cfg.discriminator.depth == 2
    assert cfg.loss.lambda_l1 == 2.5
    assert cfg.out_dir == "runs"


def test_unknown_or_invalid_keys_are_usage_errors(tmp_path):
    with pytest.raises(UsageError):
        load_run_config(overrides={"generator.colour": "blue"})
    with pytest.raises(UsageError):
        load_run_config(overrides={"epochs": "many"})
    with pytest.raises(UsageError):
        load_run_config(overrides={"epochs": 101})
    with pytest.raises(UsageError):
        load_run_config(overrides={"planes": "axial,axial"})
    with pytest.raises(UsageError):
        load_run_config(tmp_path / "missing.cfg")


def test_optimizers_follow_generator_recurrence():
    plain = RunConfig()
    recurrent = RunConfig(generator={"recurrent": True})

    assert (plain.g_optimizer.kind, plain.d_optimizer.kind) == ("adadelta", "adadelta")
    assert plain.g_optimizer.lr == 1.0
    assert (recurrent.g_optimizer.kind, recurrent.d_optimizer.kind) == ("rmsprop", "rmsprop")
    assert plain.r_optimizer.kind == "rmsprop"
    assert plain.r_optimizer.lr == 1e-3


def test_refinement_network_is_always_recurrent():
    cfg = RunConfig(generator={"noise_input": True}, refinement={"recurrent": False})

    assert cfg.refinement.recurrent is True
    assert cfg.refinement.noise_input is False


def test_dump_then_load_reproduces_configuration(tmp_path):
    cfg = load_run_config(
        overrides={
            "seed": 3,
            "planes": "coronal,axial",
            "generator.recurrent": "true",
            "augment.rotation_enabled": "true",
            "r_optimizer.lr": "0.02",
        }
    )

    path = tmp_path / "resolved.cfg"
    text = dump_run_config(cfg, path)

    assert text.startswith("# resolved refinegan run configuration\n")
    assert load_run_config(path) == cfg
    assert flatten(load_run_config(path)) == flatten(cfg)


def test_config_keys_cover_nested_sections():
    keys = dict(config_keys())

    assert keys["seed"] == "7"
    assert keys["planes"] == "axial"
    assert keys["generator.depth"] == "3"
    assert keys["refinement.recurrent"] == "true"
    assert keys["g_optimizer.kind"] == "adadelta"


def test_slices_per_batch_divides_images_by_channels():
    assert RunConfig().slices_per_batch == 64
    assert RunConfig(generator={"in_channels": 4}).slices_per_batch == 32
    assert RunConfig(images_per_batch=3, generator={"in_channels": 4}).slices_per_batch == 1
