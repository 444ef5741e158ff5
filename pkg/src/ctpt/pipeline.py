"""Training stages, loss, evaluation, zero-shot transfer, and ablation.

Stage one tunes a task-specific prompt through a fixed random subspace
projection. Stage two jointly tunes cross-task attention over frozen
source prompts and a per-token observation gate, decoding through the
union verbalizer. All candidate evaluation is derivative-free.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cmaes import CmaEs
from .data import FewShotExample, TaskDataset, encode_context
from .errors import ArgumentError, TrainingError
from .frozen_model import FrozenModel
from .metrics import compute_metric, per_label_scores
from .numerics import RngStream
from .prompts import (
    SubspaceProjection,
    build_pattern,
    cross_task_attend,
    gate_combine,
    make_attention_projection,
    make_gate_projection,
    make_prompt_projection,
    project_gate,
    project_prompt,
    unpack_attention,
)
from .verbalizer import TaskVerbalizer, UnionVerbalizer, label_log_probs, union_label_log_probs


# -- decoding -------------------------------------------------------------------


class TaskDecoder:
    """Decode mask logits through one task's own verbalizer."""

    def __init__(self, verb: TaskVerbalizer):
        self.verb = verb
        self.labels = verb.labels

    def log_probs(self, logits: np.ndarray) -> np.ndarray:
        return label_log_probs(logits, self.verb)

    def decode(self, logits: np.ndarray) -> str:
        return self.labels[int(np.argmax(self.log_probs(logits)))]


class UnionDecoder:
    """Decode mask logits through the union verbalizer onto one task."""

    def __init__(self, union: UnionVerbalizer, task_id: str):
        self.union = union
        self.task_id = task_id
        self.labels = union.verbalizers[task_id].labels

    def log_probs(self, logits: np.ndarray) -> np.ndarray:
        return union_label_log_probs(logits, self.union, self.task_id)

    def decode(self, logits: np.ndarray) -> str:
        return self.labels[int(np.argmax(self.log_probs(logits)))]


# -- bundles and configs ----------------------------------------------------------


@dataclass(frozen=True)
class EncodedExample:
    ids: np.ndarray
    gold_index: int
    task_id: str


class TaskBundle:
    """One task's dataset, verbalizer, projection, and few-shot sets.

    The trained intrinsic vector is exposed through a read-counting
    property so transfer runs can prove they never touched it.
    """

    def __init__(
        self,
        dataset: TaskDataset,
        verbalizer: TaskVerbalizer,
        projection: SubspaceProjection,
        few_train: list[FewShotExample],
        few_dev: list[FewShotExample],
    ):
        self.dataset = dataset
        self.verbalizer = verbalizer
        self.projection = projection
        self.few_train = few_train
        self.few_dev = few_dev
        self._z: np.ndarray | None = None
        self.z_reads = 0
        self.untrained = False
        self._encoded: dict[str, list[EncodedExample]] = {}

    @property
    def task_id(self) -> str:
        return self.dataset.task_id

    @property
    def trained(self) -> bool:
        return self._z is not None

    @property
    def z(self) -> np.ndarray:
        if self._z is None:
            raise TrainingError(f"task {self.task_id}: task-specific prompt not trained")
        self.z_reads += 1
        return self._z

    def set_z(self, z: np.ndarray, untrained: bool = False) -> None:
        self._z = np.asarray(z, dtype=np.float64).copy()
        self.untrained = untrained

    def prompt_shape(self, model: FrozenModel) -> tuple[int, int]:
        d = model.config.embed_dim
        return self.projection.target_dim // d, d

    def task_prompt(self, model: FrozenModel) -> np.ndarray:
        n, d = self.prompt_shape(model)
        return project_prompt(self.projection, self.z, n, d)

    def base_prompt(self, model: FrozenModel) -> np.ndarray:
        """The fixed offset prompt; reads no trained state."""
        n, d = self.prompt_shape(model)
        return self.projection.offset.reshape(n, d)

    def encoded(self, split: str, model: FrozenModel) -> list[EncodedExample]:
        if split not in self._encoded:
            examples = self.few_train if split == "train" else self.few_dev
            self._encoded[split] = [
                EncodedExample(
                    ids=encode_context(ex.conversation, ex.target_index, model.vocab),
                    gold_index=self.verbalizer.label_index(ex.label),
                    task_id=self.task_id,
                )
                for ex in examples
            ]
        return self._encoded[split]


def make_bundle(
    dataset: TaskDataset,
    verbalizer: TaskVerbalizer,
    model: FrozenModel,
    prompt_len: int,
    intrinsic_dim: int,
    seed_stream: RngStream,
    k: int,
    sample_rng: RngStream,
) -> TaskBundle:
    from .data import sample_few_shot

    projection = make_prompt_projection(model, prompt_len, intrinsic_dim, seed_stream)
    few_train, few_dev = sample_few_shot(dataset, k, sample_rng)
    return TaskBundle(dataset, verbalizer, projection, few_train, few_dev)


@dataclass
class StageConfig:
    """Budget and geometry for one derivative-free stage."""

    budget: int = 3000
    sigma0: float = 1.0
    intrinsic_dim: int = 200
    population_size: int | None = None
    dev_every: int = 1


@dataclass
class CtptStageConfig(StageConfig):
    gate_intrinsic_dim: int | None = None  # default: one per prompt token
    heads: int = 4
    mode: str = "joint"  # "joint" or "sequential"
    # Per-block step scales: the optimizer works in normalized units and the
    # attention/gate sub-vectors are stretched by these factors. Attention
    # weight perturbations are amplified by sqrt(d) through the matvec, so
    # they need small steps; the logistic gate needs large ones to saturate.
    attn_scale: float = 0.03
    gate_scale: float = 2.0


@dataclass
class StageResult:
    z: np.ndarray
    dev_loss: float
    best_train_loss: float
    evaluations: int
    generations: int
    trace: list[dict] = field(default_factory=list)
    untrained: bool = False
    param_count: int = 0


@dataclass
class CtptResult:
    z_attn: np.ndarray
    z_gate: np.ndarray
    attn_seed: int
    gate_seed: int
    heads: int
    dev_loss: float
    best_train_loss: float
    evaluations: int
    generations: int
    gate: np.ndarray
    param_count: int
    mode: str
    trace: list[dict] = field(default_factory=list)


@dataclass
class EvalReport:
    task_id: str
    metric_name: str
    score: float
    per_label: dict
    examples: int
    predictions: list[str] = field(default_factory=list)
    gold: list[str] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "task": self.task_id,
            "metric": self.metric_name,
            "score": self.score,
            "examples": self.examples,
            "per_label": self.per_label,
        }


# -- loss and scoring ---------------------------------------------------------


def batch_loss(
    model: FrozenModel,
    prompt: np.ndarray,
    examples: list[EncodedExample],
    decoders: dict[str, TaskDecoder | UnionDecoder],
) -> float:
    """Mean cross-entropy of decoded label distributions vs gold labels."""
    if not examples:
        raise ArgumentError("cannot compute a loss over zero examples")
    inputs = [build_pattern(model, prompt, ex.ids) for ex in examples]
    logits = model.forward_batch(inputs)
    total = 0.0
    for row, ex in zip(logits, examples):
        total += -decoders[ex.task_id].log_probs(row)[ex.gold_index]
    return total / len(examples)


def score_examples(
    model: FrozenModel,
    prompt: np.ndarray,
    examples: list[EncodedExample],
    decoder,
    metric_name: str,
    labels: tuple[str, ...],
    neutral_label: str | None,
) -> float:
    inputs = [build_pattern(model, prompt, ex.ids) for ex in examples]
    logits = model.forward_batch(inputs)
    pred = [decoder.decode(row) for row in logits]
    gold = [decoder.labels[ex.gold_index] for ex in examples]
    return compute_metric(metric_name, gold, pred, labels, neutral_label)


def _candidate_losses(loss_fn, candidates: np.ndarray, workers: int) -> list[float]:
    if workers <= 1:
        return [loss_fn(c) for c in candidates]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(loss_fn, candidates))


def _run_stage(
    opt: CmaEs,
    loss_fn,
    dev_loss_fn,
    budget: int,
    dev_every: int,
    workers: int,
) -> tuple[np.ndarray, float, list[dict]]:
    """Shared ask/evaluate/tell loop; selects the best dev-loss candidate."""
    best_z: np.ndarray | None = None
    best_dev = np.inf
    trace: list[dict] = []
    while opt.evaluations < budget:
        batch = opt.ask()
        losses = _candidate_losses(loss_fn, batch.candidates, workers)
        batch.losses[:] = losses
        gen_best = int(np.argmin(batch.losses))
        gen_best_z = batch.candidates[gen_best].copy()
        opt.tell(batch)
        record = opt.trace_record()
        if opt.generation % dev_every == 0:
            dev = dev_loss_fn(gen_best_z)
            if dev < best_dev:
                best_dev = dev
                best_z = gen_best_z
            record["dev_loss"] = dev
        trace.append(record)
    if best_z is None:
        raise TrainingError("budget exhausted before any candidate was selected")
    return best_z, best_dev, trace


def train_tspt(
    bundle: TaskBundle,
    model: FrozenModel,
    cfg: StageConfig,
    rng: RngStream,
    workers: int = 1,
) -> StageResult:
    """Tune the task-specific intrinsic vector on the few-shot train set."""
    n, d = bundle.prompt_shape(model)
    decoders = {bundle.task_id: TaskDecoder(bundle.verbalizer)}
    train_examples = bundle.encoded("train", model)
    dev_examples = bundle.encoded("dev", model) or train_examples

    if cfg.budget <= 0:
        z = np.zeros(cfg.intrinsic_dim)
        bundle.set_z(z, untrained=True)
        dev = batch_loss(model, bundle.base_prompt(model), dev_examples, decoders)
        return StageResult(
            z=z, dev_loss=dev, best_train_loss=np.nan, evaluations=0, generations=0,
            untrained=True, param_count=cfg.intrinsic_dim,
        )

    def loss_fn(z):
        prompt = project_prompt(bundle.projection, z, n, d)
        return batch_loss(model, prompt, train_examples, decoders)

    def dev_loss_fn(z):
        prompt = project_prompt(bundle.projection, z, n, d)
        return batch_loss(model, prompt, dev_examples, decoders)

    opt = CmaEs(cfg.intrinsic_dim, np.zeros(cfg.intrinsic_dim), cfg.sigma0, rng,
                population_size=cfg.population_size)
    best_z, best_dev, trace = _run_stage(
        opt, loss_fn, dev_loss_fn, cfg.budget, cfg.dev_every, workers
    )
    bundle.set_z(best_z)
    return StageResult(
        z=best_z,
        dev_loss=best_dev,
        best_train_loss=opt.best_loss,
        evaluations=opt.evaluations,
        generations=opt.generation,
        trace=trace,
        param_count=cfg.intrinsic_dim,
    )


@dataclass
class CtptAssembly:
    """Everything needed to rebuild the combined prompt deterministically."""

    attn_proj: SubspaceProjection
    gate_proj: SubspaceProjection
    heads: int

    def prompt(
        self,
        base_prompt: np.ndarray,
        source_prompts: list[np.ndarray],
        z_attn: np.ndarray,
        z_gate: np.ndarray,
        gate_override: np.ndarray | None = None,
    ) -> np.ndarray:
        d = base_prompt.shape[1]
        params = unpack_attention(self.attn_proj, z_attn, d, self.heads)
        cross = cross_task_attend(base_prompt, source_prompts, params)
        gate = gate_override if gate_override is not None else project_gate(self.gate_proj, z_gate)
        return gate_combine(gate, base_prompt, cross)


def make_ctpt_assembly(model: FrozenModel, prompt_len: int, cfg: CtptStageConfig,
                       rng: RngStream) -> CtptAssembly:
    d = model.config.embed_dim
    gate_dim = cfg.gate_intrinsic_dim or prompt_len
    return CtptAssembly(
        attn_proj=make_attention_projection(d, cfg.intrinsic_dim, rng.child("attn_projection"),
                                            heads=cfg.heads),
        gate_proj=make_gate_projection(prompt_len, gate_dim, rng.child("gate_projection")),
        heads=cfg.heads,
    )


def _train_cross_stage(
    base_prompt: np.ndarray,
    source_prompts: list[np.ndarray],
    train_examples: list[EncodedExample],
    dev_examples: list[EncodedExample],
    decoders: dict,
    model: FrozenModel,
    cfg: CtptStageConfig,
    rng: RngStream,
    workers: int,
) -> CtptResult:
    """Joint (or sequential) optimization of attention and gate vectors."""
    n = base_prompt.shape[0]
    assembly = make_ctpt_assembly(model, n, cfg, rng)
    za_dim = cfg.intrinsic_dim
    zg_dim = cfg.gate_intrinsic_dim or n

    def stage_loss(examples):
        def fn(z_attn, z_gate):
            prompt = assembly.prompt(base_prompt, source_prompts, z_attn, z_gate)
            return batch_loss(model, prompt, examples, decoders)

        return fn

    train_loss = stage_loss(train_examples)
    dev_loss = stage_loss(dev_examples or train_examples)

    def split_units(u):
        return cfg.attn_scale * u[:za_dim], cfg.gate_scale * u[za_dim:]

    trace: list[dict] = []
    if cfg.mode == "joint":
        opt = CmaEs(za_dim + zg_dim, np.zeros(za_dim + zg_dim), cfg.sigma0,
                    rng.child("opt"), population_size=cfg.population_size)
        best, best_dev, trace = _run_stage(
            opt,
            lambda u: train_loss(*split_units(u)),
            lambda u: dev_loss(*split_units(u)),
            cfg.budget,
            cfg.dev_every,
            workers,
        )
        z_attn, z_gate = split_units(best)
        best_train, evals, gens = opt.best_loss, opt.evaluations, opt.generation
    elif cfg.mode == "sequential":
        half = max(cfg.budget // 2, 1)
        opt_a = CmaEs(za_dim, np.zeros(za_dim), cfg.sigma0, rng.child("opt_attn"),
                      population_size=cfg.population_size)
        zeros_gate = np.zeros(zg_dim)
        u_attn, _, trace_a = _run_stage(
            opt_a,
            lambda u: train_loss(cfg.attn_scale * u, zeros_gate),
            lambda u: dev_loss(cfg.attn_scale * u, zeros_gate),
            half,
            cfg.dev_every,
            workers,
        )
        z_attn = cfg.attn_scale * u_attn
        opt_b = CmaEs(zg_dim, np.zeros(zg_dim), cfg.sigma0, rng.child("opt_gate"),
                      population_size=cfg.population_size)
        u_gate, best_dev, trace_b = _run_stage(
            opt_b,
            lambda u: train_loss(z_attn, cfg.gate_scale * u),
            lambda u: dev_loss(z_attn, cfg.gate_scale * u),
            cfg.budget - half,
            cfg.dev_every,
            workers,
        )
        z_gate = cfg.gate_scale * u_gate
        trace = trace_a + trace_b
        best_train = opt_b.best_loss
        evals = opt_a.evaluations + opt_b.evaluations
        gens = opt_a.generation + opt_b.generation
    else:
        raise ArgumentError(f"unknown ctpt mode {cfg.mode!r}")

    return CtptResult(
        z_attn=z_attn,
        z_gate=z_gate,
        attn_seed=assembly.attn_proj.seed,
        gate_seed=assembly.gate_proj.seed,
        heads=cfg.heads,
        dev_loss=best_dev,
        best_train_loss=best_train,
        evaluations=evals,
        generations=gens,
        gate=project_gate(assembly.gate_proj, z_gate),
        param_count=za_dim + zg_dim,
        mode=cfg.mode,
        trace=trace,
    )


def train_ctpt(
    target: TaskBundle,
    sources: list[TaskBundle],
    model: FrozenModel,
    cfg: CtptStageConfig,
    rng: RngStream,
    union: UnionVerbalizer,
    workers: int = 1,
) -> CtptResult:
    """Cross-task stage for a trained target: queries come from its
    task-specific prompt, keys/values from frozen source prompts, decoding
    through the union verbalizer."""
    if not sources:
        raise ArgumentError("cross-task training requires at least one source task")
    missing = [s.task_id for s in sources if not s.trained]
    if missing:
        raise TrainingError(f"source tasks without trained prompts: {missing}")
    if not target.trained:
        raise TrainingError(f"target task {target.task_id} has no trained prompt")

    target_prompt = target.task_prompt(model)
    source_prompts = [s.task_prompt(model) for s in sources]
    decoders = {target.task_id: UnionDecoder(union, target.task_id)}
    return _train_cross_stage(
        target_prompt,
        source_prompts,
        target.encoded("train", model),
        target.encoded("dev", model),
        decoders,
        model,
        cfg,
        rng,
        workers,
    )


def zero_shot_transfer(
    sources: list[TaskBundle],
    target: TaskBundle,
    model: FrozenModel,
    cfg: CtptStageConfig,
    rng: RngStream,
    union: UnionVerbalizer,
    metric_name: str,
    workers: int = 1,
) -> tuple[CtptResult, "EvalReport"]:
    """Train attention and gate on source-task data only; the target's own
    trained prompt never participates (its untrained offset stands in as
    the attention query and the gate's task-side input)."""
    if not sources:
        raise ArgumentError("zero-shot transfer requires at least one source task")
    if any(s.task_id == target.task_id for s in sources):
        raise ArgumentError(f"target task {target.task_id} must not appear among sources")
    missing = [s.task_id for s in sources if not s.trained]
    if missing:
        raise TrainingError(f"source tasks without trained prompts: {missing}")

    base = target.base_prompt(model)
    source_prompts = [s.task_prompt(model) for s in sources]
    train_examples = [ex for s in sources for ex in s.encoded("train", model)]
    dev_examples = [ex for s in sources for ex in s.encoded("dev", model)]
    decoders = {s.task_id: UnionDecoder(union, s.task_id) for s in sources}

    result = _train_cross_stage(
        base, source_prompts, train_examples, dev_examples, decoders,
        model, cfg, rng, workers,
    )
    assembly = CtptAssembly(
        attn_proj=_rebuild_attn_proj(model, result, cfg),
        gate_proj=_rebuild_gate_proj(base.shape[0], result, cfg),
        heads=result.heads,
    )
    prompt = assembly.prompt(base, source_prompts, result.z_attn, result.z_gate)
    report = evaluate(
        target.dataset, model, prompt, UnionDecoder(union, target.task_id), metric_name
    )
    return result, report


def _rebuild_attn_proj(model: FrozenModel, result: CtptResult, cfg: CtptStageConfig):
    return make_attention_projection(
        model.config.embed_dim, cfg.intrinsic_dim, RngStream(result.attn_seed),
        heads=result.heads,
    )


def _rebuild_gate_proj(prompt_len: int, result: CtptResult, cfg: CtptStageConfig):
    gate_dim = cfg.gate_intrinsic_dim or prompt_len
    return make_gate_projection(prompt_len, gate_dim, RngStream(result.gate_seed))


def evaluate(
    dataset: TaskDataset,
    model: FrozenModel,
    prompt: np.ndarray,
    decoder,
    metric_name: str,
    chunk: int = 256,
) -> EvalReport:
    """Predict every test utterance's label and score the requested metric."""
    if not dataset.test:
        raise ArgumentError(f"task {dataset.task_id}: no test split to evaluate")
    contexts = []
    gold = []
    for conv in dataset.test:
        for j, utt in enumerate(conv.utterances):
            contexts.append(encode_context(conv, j, model.vocab))
            gold.append(utt.emotion)
    predictions: list[str] = []
    for start in range(0, len(contexts), chunk):
        batch = [
            build_pattern(model, prompt, ids) for ids in contexts[start : start + chunk]
        ]
        logits = model.forward_batch(batch)
        predictions.extend(decoder.decode(row) for row in logits)
    score = compute_metric(
        metric_name, gold, predictions, dataset.labels, dataset.neutral_label
    )
    return EvalReport(
        task_id=dataset.task_id,
        metric_name=metric_name,
        score=score,
        per_label=per_label_scores(gold, predictions, dataset.labels),
        examples=len(gold),
        predictions=predictions,
        gold=gold,
    )


@dataclass
class AblationResult:
    per_size: dict[int, dict]

    def sizes(self) -> list[int]:
        return sorted(self.per_size)


def ablate_sources(
    target: TaskBundle,
    sources: list[TaskBundle],
    model: FrozenModel,
    cfg: CtptStageConfig,
    rng: RngStream,
    union: UnionVerbalizer,
    metric_name: str,
    workers: int = 1,
) -> AblationResult:
    """Average cross-task score for every source-subset size.

    Size zero skips the cross-task stage entirely and reports the plain
    task-specific score.
    """
    if len(sources) < 2:
        raise ArgumentError("ablation needs at least two source tasks")
    per_size: dict[int, dict] = {}

    tspt_report = evaluate(
        target.dataset, model, target.task_prompt(model),
        TaskDecoder(target.verbalizer), metric_name,
    )
    per_size[0] = {"mean": tspt_report.score, "scores": [tspt_report.score], "subsets": [[]]}

    for size in range(1, len(sources) + 1):
        scores, subsets = [], []
        for idx, combo in enumerate(itertools.combinations(range(len(sources)), size)):
            subset = [sources[i] for i in combo]
            stage_rng = rng.child(f"ablate:{size}:{idx}")
            result = train_ctpt(target, subset, model, cfg, stage_rng, union, workers)
            assembly = CtptAssembly(
                attn_proj=_rebuild_attn_proj(model, result, cfg),
                gate_proj=_rebuild_gate_proj(target.prompt_shape(model)[0], result, cfg),
                heads=result.heads,
            )
            prompt = assembly.prompt(
                target.task_prompt(model),
                [s.task_prompt(model) for s in subset],
                result.z_attn,
                result.z_gate,
            )
            report = evaluate(
                target.dataset, model, prompt, UnionDecoder(union, target.task_id), metric_name
            )
            scores.append(report.score)
            subsets.append([s.task_id for s in subset])
        per_size[size] = {"mean": float(np.mean(scores)), "scores": scores, "subsets": subsets}
    return AblationResult(per_size=per_size)
