import numpy as np
import pytest

from repcali.calibration import CalibrationOptions
from repcali.config import ExperimentConfig
from repcali.methods import (
    ArmError,
    NoClosedFormError,
    TuningMethodSpec,
    attach,
    audit_params,
    compare_methods,
    published_param_formula,
)
from repcali.model import ModelConfig, Seq2SeqModel, count_trainable_params
from repcali.tasks import TaskSpec, generate_task
from repcali.trainer import train

CFG = ModelConfig(layers=2, d_h=16, heads=2, ffn_mult=2, vocab=16, n_max=12, dropout=0.0)


def fresh(seed=0, cfg=CFG):
    return Seq2SeqModel(cfg, seed)


def attach_kind(kind, seed=0, cfg=CFG, **spec_kw):
    model = fresh(seed, cfg)
    spec = TuningMethodSpec(kind=kind, **spec_kw)
    calib = CalibrationOptions(enabled=True) if kind == "repcali" else None
    _, mask = attach(model, spec, seed=11, calib=calib)
    return model, spec, mask


# ---------------------------------------------------------------------------
# published closed-form instantiations


def test_formula_instantiations():
    assert published_param_formula("adapter", 2, 4, d_m=2) == 64
    assert published_param_formula("prefix", 2, 4, d_m=2, n=3) == 42
    assert published_param_formula("lora", 2, 4, d_m=2) == 64
    assert published_param_formula("repcali", 2, 4) == 8


def test_formula_missing_kinds_raise():
    for kind in ("full", "prompt", "bitfit"):
        with pytest.raises(NoClosedFormError):
            published_param_formula(kind, 2, 4, d_m=2)


# ---------------------------------------------------------------------------
# attach semantics


def test_double_attach_rejected():
    model, spec, _ = attach_kind("bitfit")
    with pytest.raises(RuntimeError):
        attach(model, spec, seed=1)


def test_bitfit_trains_exactly_bias_subset():
    model, _, mask = attach_kind("bitfit")
    for name, t in model.named_params():
        expected = name.endswith(".b") or name.endswith(".bias")
        assert t.requires_grad == expected, name
        assert mask[name] == expected


def test_lora_zero_init_identity_and_frozen_base():
    base = fresh(3)
    x = np.array([[4, 5, 6]])
    y = np.array([[1, 7]])
    before = base.decode(base.encode(x), y).data.copy()
    model, _, _ = attach_kind("lora", seed=3, d_m=2)
    after = model.decode(model.encode(x), y)
    assert before.tobytes() == after.data.tobytes()
    assert all(not t.requires_grad for name, t in model.named_params()
               if "lora" not in name)


def test_lora_changes_output_once_up_projection_moves():
    model, _, _ = attach_kind("lora", seed=3, d_m=2)
    x = np.array([[4, 5, 6]])
    y = np.array([[1, 7]])
    base = model.decode(model.encode(x), y).data.copy()
    model.enc_blocks[0].attn.wq.lora_b.data[:] = 0.3
    changed = model.decode(model.encode(x), y).data
    assert not np.array_equal(base, changed)


def test_adapter_identity_at_init_and_sensitive_after_perturbation():
    base = fresh(4)
    x = np.array([[4, 5, 6, 7]])
    y = np.array([[1, 8]])
    before = base.decode(base.encode(x), y).data.copy()
    model, _, _ = attach_kind("adapter", seed=4, d_m=4)
    at_init = model.decode(model.encode(x), y).data
    assert np.array_equal(before, at_init)  # up projection starts at zero
    model.enc_blocks[0].attn_adapter.up.data[:] = 0.2
    perturbed = model.decode(model.encode(x), y).data
    assert not np.array_equal(at_init, perturbed)


def test_prompt_prepends_learned_vectors():
    model, spec, _ = attach_kind("prompt", prompt_len=3)
    latent = model.encode(np.array([[4, 5]]))
    assert latent.shape == (1, 3 + 2, CFG.d_h)


def test_prefix_extends_attention_only_internally():
    model, _, _ = attach_kind("prefix", prefix_len=3, d_m=4)
    x = np.array([[4, 5, 6]])
    latent = model.encode(x)
    assert latent.shape == (1, 3, CFG.d_h)  # prefixes live inside attention
    logits = model.decode(latent, np.array([[1, 7]]))
    assert logits.shape == (1, 2, CFG.vocab)


def test_repcali_attaches_block_and_freezes_base():
    model, _, mask = attach_kind("repcali")
    assert model.calibration is not None
    trainable = {n for n, t in model.named_params() if t.requires_grad}
    assert trainable == {"calibration.embed_table", "calibration.ln_gain",
                         "calibration.ln_bias"}
    # plug-and-play: registry diff vs a bare model is exactly the block
    bare = {n for n, _ in fresh(0).named_params()}
    now = {n for n, _ in model.named_params()}
    assert now - bare == trainable


def test_full_with_calibration_trains_everything():
    model = fresh(5)
    spec = TuningMethodSpec(kind="full")
    attach(model, spec, seed=9, calib=CalibrationOptions(enabled=True, lam=1.0))
    assert model.calibration is not None
    assert all(t.requires_grad for _, t in model.named_params())


def test_freeze_decoder_composes():
    for kind in ("full", "repcali", "adapter", "lora", "prefix", "prompt", "bitfit"):
        model = fresh(6)
        spec = TuningMethodSpec(kind=kind, d_m=4, freeze_decoder=True)
        calib = CalibrationOptions(enabled=True) if kind == "repcali" else None
        attach(model, spec, seed=2, calib=calib)
        for name, t in model.named_params():
            if name.startswith("dec."):
                assert not t.requires_grad, (kind, name)


def test_d_m_must_be_smaller_than_width():
    model = fresh(0)
    with pytest.raises(ValueError):
        attach(model, TuningMethodSpec(kind="lora", d_m=CFG.d_h), seed=0)


# ---------------------------------------------------------------------------
# audits: registry-walk oracle


def lora_expected(cfg: ModelConfig, d_m: int) -> int:
    sites = 2 * cfg.layers          # every self-attention, both stacks
    return sites * 2 * (2 * cfg.d_h * d_m)


def adapter_expected(cfg: ModelConfig, d_m: int) -> int:
    blocks = 2 * cfg.layers
    return blocks * 2 * (2 * cfg.d_h * d_m)


def prefix_expected(cfg: ModelConfig, d_m: int, n: int) -> int:
    sites = 2 * cfg.layers
    return n * d_m + d_m * d_m + sites * 2 * cfg.d_h * d_m


@pytest.mark.parametrize("layers,d_h,d_m,n", [
    (1, 8, 2, 2), (2, 16, 4, 3), (2, 16, 8, 5), (3, 24, 4, 4), (2, 32, 2, 7),
])
def test_registry_matches_formula_across_configs(layers, d_h, d_m, n):
    cfg = ModelConfig(layers=layers, d_h=d_h, heads=2, ffn_mult=2,
                      vocab=12, n_max=16, dropout=0.0)
    for kind, expected in (
        ("adapter", adapter_expected(cfg, d_m)),
        ("lora", lora_expected(cfg, d_m)),
        ("prefix", prefix_expected(cfg, d_m, n)),
    ):
        model = Seq2SeqModel(cfg, 0)
        spec = TuningMethodSpec(kind=kind, d_m=d_m, prefix_len=n)
        attach(model, spec, seed=1)
        report = audit_params(model, spec)
        assert report.registry_count == expected
        assert report.formula_count == expected
        assert report.match_flag is True


def test_audit_full_is_hundred_percent():
    model, spec, _ = attach_kind("full")
    report = audit_params(model, spec)
    assert report.pct_of_base == pytest.approx(100.0)
    assert report.formula_count is None and report.match_flag is None
    assert report.registry_count == count_trainable_params(model)


def test_audit_repcali_flags_literal_mismatch():
    model, spec, _ = attach_kind("repcali")
    report = audit_params(model, spec)
    assert report.registry_count == CFG.n_max * CFG.d_h + 2 * CFG.d_h
    assert report.formula_count == report.registry_count
    assert report.literal_2dh == 2 * CFG.d_h
    assert report.literal_match is False
    assert report.seed_mode == "positional"


def test_audit_prompt_and_bitfit_registry_only():
    for kind in ("prompt", "bitfit"):
        model, spec, _ = attach_kind(kind)
        report = audit_params(model, spec)
        assert report.formula_count is None
        assert report.registry_count > 0


def test_mask_cardinality_equals_registry_count():
    for kind in ("repcali", "adapter", "lora", "prefix", "prompt", "bitfit", "full"):
        model, spec, mask = attach_kind(kind, d_m=4)
        report = audit_params(model, spec)
        params = dict(model.named_params())
        mask_scalars = sum(params[n].size for n, on in mask.items() if on)
        assert mask_scalars == report.registry_count, kind


# ---------------------------------------------------------------------------
# frozen means frozen


def tiny_task():
    return generate_task(TaskSpec(kind="copy", vocab=12, len_min=3, len_max=5,
                                  n_train=48, n_dev=8, n_test=8, seed=3))


class _T:
    lr = 1e-3
    batch = 16
    epochs = 1
    patience = 5
    seed = 99


@pytest.mark.parametrize("kind", ["repcali", "adapter", "lora", "prefix", "prompt", "bitfit"])
def test_one_training_epoch_conserves_frozen_tensors(kind):
    cfg = ModelConfig(layers=1, d_h=16, heads=2, ffn_mult=2, vocab=12, n_max=8,
                      dropout=0.0)
    model = Seq2SeqModel(cfg, 7)
    spec = TuningMethodSpec(kind=kind, d_m=4, freeze_decoder=True)
    calib = CalibrationOptions(enabled=True) if kind == "repcali" else None
    attach(model, spec, seed=5, calib=calib)
    frozen_before = {n: t.data.copy() for n, t in model.named_params()
                     if not t.requires_grad}
    trainable_before = {n: t.data.copy() for n, t in model.named_params()
                        if t.requires_grad}
    train(model, tiny_task(), _T(), seed=1)
    params = dict(model.named_params())
    for name, before in frozen_before.items():
        delta = np.abs(params[name].data - before).max()
        assert delta == 0.0, f"{kind}: frozen tensor {name} moved by {delta}"
    moved = any(not np.array_equal(params[n].data, before)
                for n, before in trainable_before.items())
    assert moved, f"{kind}: no trainable tensor moved at all"


# ---------------------------------------------------------------------------
# comparison harness


def compare_config(arms):
    cfg = ExperimentConfig()
    cfg.model.L = 1
    cfg.model.d_h = 16
    cfg.model.heads = 2
    cfg.model.ffn_mult = 2
    cfg.model.vocab = 12
    cfg.model.n_max = 8
    cfg.model.dropout = 0.0
    cfg.task.kind = "reverse"
    cfg.task.vocab = 12
    cfg.task.len_min = 3
    cfg.task.len_max = 5
    cfg.task.sizes = "48/8/8"
    cfg.method.d_m = 4
    cfg.method.arms = arms
    cfg.train.epochs = 1
    cfg.train.batch = 16
    return cfg.validate()


def test_compare_same_kind_arms_identical():
    rows = compare_methods(compare_config("full,full"))
    assert len(rows) == 2
    a, b = rows
    assert (a.params, a.token_acc, a.exact_match, a.bleu4) == \
           (b.params, b.token_acc, b.exact_match, b.bleu4)


def test_compare_single_arm_degenerates_to_one_run():
    rows = compare_methods(compare_config("lora"))
    assert len(rows) == 1
    assert rows[0].method == "lora"
    assert rows[0].params == lora_expected(
        ModelConfig(layers=1, d_h=16, heads=2, ffn_mult=2, vocab=12, n_max=8), 4)


def test_compare_rows_sorted_and_params_match_audit():
    rows = compare_methods(compare_config("lora,bitfit,adapter"))
    assert [r.method for r in rows] == ["adapter", "bitfit", "lora"]
    for r in rows:
        assert r.params > 0
        assert 0 <= r.token_acc <= 1


def test_compare_arm_failure_names_arm():
    cfg = compare_config("lora")
    cfg.method.arms = "lora"
    cfg.method.d_m = 4
    cfg.train.lr = float("nan")  # poisons training
    with pytest.raises(ArmError) as exc:
        compare_methods(cfg)
    assert "lora" in str(exc.value)
