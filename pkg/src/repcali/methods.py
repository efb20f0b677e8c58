"""Pluggable fine-tuning strategies with exact parameter accounting.

Seven strategies share one attach surface:

* ``full``       - every base parameter trains; optionally composed with a
                   calibration block (the block then trains too).
* ``repcali``    - base frozen; only an injected calibration block trains.
* ``adapter``    - base frozen; bias-free bottlenecks after the attention
                   and feed-forward sublayers of every block.
* ``lora``       - base frozen; rank-d_m updates on the query and value
                   projections of every self-attention.
* ``prefix``     - base frozen; reparameterized key/value prefixes (shared
                   seed and projection, per-site heads) on every
                   self-attention.
* ``prompt``     - base frozen; learned vectors prepended to the encoder
                   input embeddings.
* ``bitfit``     - no injection; only base bias terms train.

``freeze_decoder`` composes with any kind and clears the trainable flag of
every parameter in the decoder stack (names under ``dec.``), injected ones
included.

The closed-form counts evaluated by ``published_param_formula`` take ``L`` as
the total number of transformer blocks; an encoder-decoder with ``layers``
per stack therefore passes ``2 * layers``.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .calibration import CalibrationBlock, CalibrationOptions, repcali_param_count
from .model import Adapter, Seq2SeqModel, _embedding, _weight, count_trainable_params
from .rng import SplitMix64, derive
from .tensor import Tensor

KINDS = ("full", "repcali", "adapter", "lora", "prefix", "prompt", "bitfit")


class NoClosedFormError(ValueError):
    """Raised for kinds whose count is registry-only (full, prompt, bitfit)."""


@dataclass(frozen=True)
class TuningMethodSpec:
    kind: str
    d_m: int = 8
    prefix_len: int = 4
    prompt_len: int = 4
    freeze_decoder: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown tuning method {self.kind!r}")
        if min(self.d_m, self.prefix_len, self.prompt_len) < 1:
            raise ValueError("d_m, prefix_len and prompt_len must be positive")


def published_param_formula(kind: str, layers: int, d_h: int, d_m: int = 0, n: int = 0) -> int:
    """Evaluate the published closed-form trainable-parameter count."""
    if kind == "adapter":
        return layers * 2 * (2 * d_h * d_m)
    if kind == "lora":
        return layers * 2 * (2 * d_h * d_m)
    if kind == "prefix":
        return n * d_m + d_m * d_m + layers * 2 * d_h * d_m
    if kind == "repcali":
        return 2 * d_h
    if kind in ("full", "prompt", "bitfit"):
        raise NoClosedFormError(f"{kind}: no closed form, registry count only")
    raise ValueError(f"unknown tuning method {kind!r}")


def _self_attentions(model: Seq2SeqModel):
    for i, blk in enumerate(model.enc_blocks):
        yield f"enc.{i}.attn", blk.attn
    for i, blk in enumerate(model.dec_blocks):
        yield f"dec.{i}.self_attn", blk.self_attn


def attach(model: Seq2SeqModel, spec: TuningMethodSpec, seed: int,
           calib: CalibrationOptions | None = None):
    """Inject the method's tensors and set trainable flags.

    Returns (model, mask) where mask maps every registry name to its
    trainable flag after attachment.
    """
    if model.method_kind is not None:
        raise RuntimeError(f"model already has method {model.method_kind!r} attached")
    cfg = model.cfg
    if spec.kind in ("adapter", "lora", "prefix") and spec.d_m >= cfg.d_h:
        raise ValueError(f"d_m={spec.d_m} must be smaller than d_h={cfg.d_h}")

    before = {name for name, _ in model.named_params()}
    rng = SplitMix64(derive(seed, f"method-{spec.kind}"))

    if spec.kind == "repcali":
        opts = calib if calib is not None else CalibrationOptions(enabled=True)
        if not opts.enabled:
            raise ValueError("kind=repcali requires calibration enabled")
        model.calibration = CalibrationBlock(
            cfg.d_h, cfg.n_max, opts.lam, opts.seed_mode, opts.zero_init,
            seed=derive(seed, "calibration"))
    elif spec.kind == "adapter":
        for i, blk in enumerate(model.enc_blocks + model.dec_blocks):
            blk.attn_adapter = Adapter(rng.fork(f"a{i}"), cfg.d_h, spec.d_m)
            blk.ffn_adapter = Adapter(rng.fork(f"f{i}"), cfg.d_h, spec.d_m)
    elif spec.kind == "lora":
        for name, attn in _self_attentions(model):
            for proj in (attn.wq, attn.wv):
                proj.lora_a = _weight(rng.fork(f"{name}.a"), cfg.d_h, spec.d_m)
                proj.lora_b = Tensor(np.zeros((spec.d_m, cfg.d_h), dtype=np.float32),
                                     requires_grad=True)
                proj.lora_scale = 1.0  # alpha = d_m
    elif spec.kind == "prefix":
        model.prefix_seed = _embedding(rng.fork("seed"), spec.prefix_len, spec.d_m)
        model.prefix_shared = _weight(rng.fork("shared"), spec.d_m, spec.d_m)
        for name, attn in _self_attentions(model):
            k_head = _weight(rng.fork(f"{name}.k"), spec.d_m, cfg.d_h)
            v_head = _weight(rng.fork(f"{name}.v"), spec.d_m, cfg.d_h)
            attn.prefix = (model.prefix_seed, model.prefix_shared, k_head, v_head)
    elif spec.kind == "prompt":
        if spec.prompt_len > cfg.n_max:
            raise ValueError("prompt_len cannot exceed n_max")
        model.prompt = _embedding(rng.fork("prompt"), spec.prompt_len, cfg.d_h)
    elif spec.kind == "full" and calib is not None and calib.enabled:
        model.calibration = CalibrationBlock(
            cfg.d_h, cfg.n_max, calib.lam, calib.seed_mode, calib.zero_init,
            seed=derive(seed, "calibration"))

    injected = [name for name, _ in model.named_params() if name not in before]

    if spec.kind == "full":
        predicate = lambda name: True
    elif spec.kind == "bitfit":
        predicate = lambda name: name.endswith(".b") or name.endswith(".bias")
    else:
        allowed = set(injected)
        predicate = lambda name: name in allowed
    model.set_trainable(predicate)
    if spec.freeze_decoder:
        for name, t in model.named_params():
            if name.startswith("dec."):
                t.requires_grad = False

    model.method_kind = spec.kind
    model.method_spec = spec
    model.injected_names = injected
    mask = {name: t.requires_grad for name, t in model.named_params()}
    return model, mask


@dataclass
class AuditReport:
    kind: str
    formula_count: int | None
    registry_count: int
    match_flag: bool | None
    pct_of_base: float
    literal_2dh: int | None = None
    literal_match: bool | None = None
    seed_mode: str | None = None


def audit_params(model: Seq2SeqModel, spec: TuningMethodSpec) -> AuditReport:
    """Compare the live trainable registry against the closed-form counts."""
    if model.method_kind != spec.kind:
        raise ValueError("audit spec does not match the attached method")
    injected = set(getattr(model, "injected_names", []))
    if spec.kind in ("full", "bitfit"):
        registry = count_trainable_params(model)
    else:
        registry = sum(t.size for name, t in model.named_params()
                       if name in injected and t.requires_grad)
    total = sum(t.size for _, t in model.named_params())
    pct = 100.0 * registry / total

    layers_total = 2 * model.cfg.layers  # encoder plus decoder blocks
    literal = None
    literal_match = None
    seed_mode = None
    if spec.kind == "repcali":
        block = model.calibration
        seed_mode = block.seed_mode
        counts = repcali_param_count(block.seed_mode, block.n_max, block.d_h)
        formula = counts.count
        literal = counts.literal_2dh
        literal_match = registry == literal
    else:
        try:
            formula = published_param_formula(
                spec.kind, layers_total, model.cfg.d_h, spec.d_m, spec.prefix_len)
        except NoClosedFormError:
            formula = None
    match = None if formula is None else (formula == registry)
    return AuditReport(kind=spec.kind, formula_count=formula, registry_count=registry,
                       match_flag=match, pct_of_base=pct, literal_2dh=literal,
                       literal_match=literal_match, seed_mode=seed_mode)


# ---------------------------------------------------------------------------
# method comparison harness


class ArmError(RuntimeError):
    """Raised when one comparison arm fails; names the arm."""


@dataclass
class CompareRow:
    method: str
    params: int
    pct_of_base: float
    token_acc: float
    exact_match: float
    bleu4: float


def _worker_count() -> int:
    env = os.environ.get("REPCALI_THREADS", "")
    if env.strip():
        return max(1, int(env))
    return os.cpu_count() or 1


def compare_methods(config, dataset=None) -> list[CompareRow]:
    """Train and evaluate every arm in config.method.arms with a shared
    base-model init and task; rows come back sorted by method name.

    Each arm draws its method/train randomness from a stream keyed by the
    method kind, so two arms of the same kind produce identical rows.
    """
    from .config import ExperimentConfig  # local: config imports nothing from here
    from .trainer import evaluate, train

    assert isinstance(config, ExperimentConfig)
    kinds = config.method.arms_list()
    if not kinds:
        raise ValueError("no comparison arms configured")
    if dataset is None:
        from .tasks import generate_task
        dataset = generate_task(config.task_spec())

    def run_arm(kind: str) -> CompareRow:
        arm_seed = derive(config.train.seed, f"arm-{kind}")
        model = Seq2SeqModel(config.model_config(),
                             derive(config.train.seed, "model"))
        spec = TuningMethodSpec(kind=kind, d_m=config.method.d_m,
                                prefix_len=config.method.prefix_len,
                                prompt_len=config.method.prompt_len,
                                freeze_decoder=config.method.freeze_decoder)
        c = config.calibration
        if kind == "repcali":
            calib = CalibrationOptions(enabled=True, lam=c.lam,
                                       seed_mode=c.seed_mode, zero_init=c.zero_init)
        elif kind == "full":
            calib = config.calibration_options()
        else:
            calib = None
        attach(model, spec, arm_seed, calib)
        audit = audit_params(model, spec)
        train(model, dataset, config.train, seed=arm_seed)
        report = evaluate(model, dataset.test)
        return CompareRow(method=kind, params=audit.registry_count,
                          pct_of_base=audit.pct_of_base,
                          token_acc=report["token_acc"],
                          exact_match=report["exact_match"],
                          bleu4=report["bleu4"])

    rows: list[CompareRow] = []
    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        futures = [(kind, pool.submit(run_arm, kind)) for kind in kinds]
        for kind, fut in futures:
            try:
                rows.append(fut.result())
            except Exception as exc:
                raise ArmError(f"comparison arm {kind!r} failed: {exc}") from exc
    rows.sort(key=lambda r: r.method)
    return rows
