import dataclasses

import pytest

from sgcvq import ConfigError, EngineConfig, validate_config


def test_default_config_accepted():
    cfg = validate_config(EngineConfig())
    assert cfg.level_dims == (8, 8, 8, 8)
    assert cfg.num_levels == 4
    assert cfg.sigma == 0.5
    assert cfg.gamma_ema == 0.99
    assert cfg.aggregation_mode == "concat"


def test_uneven_default_split_puts_remainder_first():
    cfg = validate_config(EngineConfig(code_dim=10, num_levels=4))
    assert cfg.level_dims == (3, 3, 2, 2)
    assert sum(cfg.level_dims) == 10


def test_level_dims_sum_mismatch_rejected():
    cfg = EngineConfig(code_dim=32, num_levels=4, level_dims=(8, 8, 8, 7))
    with pytest.raises(ConfigError, match="level_dims sum"):
        validate_config(cfg)


def test_gamma_ema_open_interval():
    with pytest.raises(ConfigError, match="gamma_ema range"):
        validate_config(EngineConfig(gamma_ema=1.0))
    with pytest.raises(ConfigError, match="gamma_ema range"):
        validate_config(EngineConfig(gamma_ema=0.0))


@pytest.mark.parametrize("field,value,name", [
    ("codebook_size", 0, "codebook_size"),
    ("code_dim", 0, "code_dim"),
    ("num_levels", 1, "num_levels"),
    ("alpha", 0.0, "alpha"),
    ("sigma", 1.0, "sigma"),
    ("beta", -0.5, "beta"),
    ("epsilon", 0.0, "epsilon"),
    ("gamma_commit", -1.0, "gamma_commit"),
    ("num_classes", 1, "num_classes"),
    ("cosface_s", 0.0, "cosface_s"),
    ("cosface_m", 1.0, "cosface_m"),
    ("lr_semantic", 0.0, "lr_semantic"),
    ("aggregation_mode", "sum", "aggregation_mode"),
    ("variant", "vq", "variant"),
    ("seed", -1, "seed"),
])
def test_each_invariant_reported_by_name(field, value, name):
    cfg = dataclasses.replace(EngineConfig(), **{field: value})
    with pytest.raises(ConfigError, match=name):
        validate_config(cfg)


def test_level_dims_must_be_positive():
    cfg = EngineConfig(code_dim=8, num_levels=4, level_dims=(5, 1, 2, 0))
    with pytest.raises(ConfigError, match="level_dims sum"):
        validate_config(cfg)


def test_guided_dim_excludes_last_level():
    cfg = validate_config(EngineConfig(code_dim=12, num_levels=3,
                                       level_dims=(5, 4, 3)))
    assert cfg.guided_dim == 9
    slices = cfg.level_slices()
    assert [s.start for s in slices] == [0, 5, 9]
    assert [s.stop for s in slices] == [5, 9, 12]
