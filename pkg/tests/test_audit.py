import json

import pytest

from transblstm import ModelConfig, TaskModel, build_model, count_params_analytic, count_params_model, preset
from transblstm.audit import REFERENCE_TOTALS_M, reference_ratio_check, reported_configs
from transblstm.autodiff import precision
from transblstm.errors import ConfigError

MODES = ["none", "replace_ffn", "parallel_sum", "pure_blstm"]

# Totals (pretraining heads included) frozen from the closed-form counts.
FROZEN_REPORTED = {
    "base/trans": 109_508_402,
    "base/trans-blstm-small": 152_012_594,
    "base/trans-blstm": 236_993_330,
    "large/trans": 335_428_914,
    "large/trans-blstm-small": 486_522_162,
    "large/trans-blstm": 788_634_930,
}


def instantiated(cfg):
    # float16 storage keeps the base/large instantiations cheap; counts do not depend on dtype
    with precision("float16"):
        return count_params_model(build_model(cfg, 0))


@pytest.mark.parametrize("mode", MODES)
@pytest.mark.parametrize("width", ["full", "half"])
@pytest.mark.parametrize("name", ["toy", "small"])
def test_analytic_matches_instantiated_small_presets(name, mode, width):
    cfg = preset(name, width, blstm_mode=mode)
    assert count_params_analytic(cfg).total == count_params_model(build_model(cfg, 0))


@pytest.mark.parametrize("mode", MODES)
def test_analytic_matches_instantiated_base(mode):
    cfg = preset("base", blstm_mode=mode, num_layers=2)
    assert count_params_analytic(cfg).total == instantiated(cfg)


def test_analytic_matches_instantiated_large_single_layer():
    cfg = preset("large", "half", blstm_mode="parallel_sum", num_layers=1)
    assert count_params_analytic(cfg).total == instantiated(cfg)


def test_zero_layer_config_is_embeddings_plus_heads():
    cfg = preset("toy", num_layers=0)
    rep = count_params_analytic(cfg)
    h, v, p = 16, 100, 32
    embeddings = v * h + p * h + 2 * h + 2 * h
    heads = (h * h + h + 2 * h + v) + (h * h + h + 2 * h + 2)
    assert rep.embeddings == embeddings and rep.heads == heads
    assert rep.total == embeddings + heads == count_params_model(build_model(cfg, 0))


@pytest.mark.parametrize("width", ["full", "half"])
def test_tb2_minus_trans_is_blstm_plus_projection(width):
    cfg = preset("toy", width)
    trans = count_params_model(build_model(cfg, 0))
    tb2 = count_params_model(build_model(cfg.replace(blstm_mode="parallel_sum"), 0))
    h, hb = cfg.hidden, cfg.blstm_hidden
    blstm = 2 * 4 * (h * hb + hb * hb + hb)
    proj = (2 * hb * h + h) if hb != h // 2 else 0
    assert tb2 - trans == cfg.num_layers * (blstm + proj)


def test_report_components_sum_to_total():
    rep = count_params_analytic(preset("base", blstm_mode="parallel_sum"))
    rows = dict(rep.rows())
    parts = ["embeddings", "attention", "ffn", "blstm", "projection", "layer_norm", "heads"]
    assert sum(rows[k] for k in parts) == rows["total"]
    assert rows["encoder_total"] + rows["heads"] == rows["total"]
    rec = json.loads(rep.to_json())
    assert rec["total"] == rep.total and rec["config"]["blstm_mode"] == "parallel_sum"
    assert "total" in rep.to_table()


def test_reported_totals_are_frozen():
    got = {k: count_params_analytic(c).total for k, c in reported_configs().items()}
    assert got == FROZEN_REPORTED


@pytest.mark.parametrize("key", list(FROZEN_REPORTED))
@pytest.mark.parametrize("with_heads", [True, False])
def test_reported_within_two_percent(key, with_heads):
    size, arch = key.split("/")
    rep = count_params_analytic(reported_configs()[key])
    count = rep.total if with_heads else rep.encoder_total
    ref = REFERENCE_TOTALS_M[(size, arch)] * 1e6
    assert abs(count - ref) / ref <= 0.02


def test_reported_ratios_within_five_percent():
    tot = {k: count_params_analytic(c).total for k, c in reported_configs().items()}
    base = {k.split("/")[1]: v for k, v in tot.items() if k.startswith("base/")}
    large = {k.split("/")[1]: v for k, v in tot.items() if k.startswith("large/")}
    r = reference_ratio_check(base, large)
    for size in ("base", "large"):
        assert abs(r[f"{size}_computed"] / r[f"{size}_reported"] - 1) < 0.05
    assert 2.1 < r["base_computed"] < 2.3 and 2.3 < r["large_computed"] < 2.5


def test_replace_ffn_is_smaller_by_ffn_total():
    cfg = preset("base", blstm_mode="parallel_sum")
    tb2 = count_params_analytic(cfg)
    tb1 = count_params_analytic(cfg.replace(blstm_mode="replace_ffn"))
    assert tb2.total - tb1.total == cfg.num_layers * tb2.ffn


def test_tied_table_counted_once():
    model = build_model(preset("toy"), 0)
    params = model.parameters()
    assert len(params) == len({id(p) for p in params})
    assert model.mlm.table is model.encoder.embeddings.token


def test_task_model_counts():
    cfg = preset("toy")
    enc = count_params_analytic(cfg).encoder_total
    cls = TaskModel(cfg, "classify", num_classes=3)
    assert count_params_model(cls) == enc + (16 * 16 + 16) + (16 * 3 + 3)
    span = TaskModel(cfg, "span")
    assert count_params_model(span) == enc + 16 * 2 + 2


def test_invalid_config_is_config_error():
    with pytest.raises(ConfigError):
        count_params_analytic(ModelConfig(hidden=10, num_heads=3))
    with pytest.raises(ConfigError):
        preset("toy", "quarter")


def test_dtype_does_not_change_counts():
    cfg = preset("toy", blstm_mode="replace_ffn")
    with precision("float64"):
        a = count_params_model(build_model(cfg, 0))
    assert a == instantiated(cfg) == count_params_analytic(cfg).total
