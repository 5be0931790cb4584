"""Stage orchestration around the embedding-space search loop.

Run directory layout::

    config.toml       copy of the effective configuration
    autoencoder/      pretrained simulator + decoder checkpoint
    controller/       controller checkpoint and loop state (for resume)
    records.csv       one row per iteration
    trace.jsonl       per-iteration policy samples (for replay)
    report.json       summary
    best_arch.json    best architecture found
"""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autoencoder import AutoencoderModel, decode, pretrain
from .config import SearchConfig
from .controller import (
    ControllerModel,
    NotPretrainedError,
    PolicySample,
    init_from_simulator,
    reinforce_update,
    sample_action,
    update_baseline,
)
from .evaluator.base import EvalBudget, EvaluationFailed, Evaluator, Reward
from .evaluator.synthetic import SyntheticOracle
from .nn import CheckpointError, NumericError
from .nn.params import atomic_write
from .space import Architecture, discretize, encode_origin, random_architecture

log = logging.getLogger(__name__)

RECORD_COLUMNS = ["iter", "arch_json", "reward", "baseline", "advantage", "grad_norm", "wall_ms"]


@dataclass
class SearchRecord:
    iteration: int
    architecture: Architecture
    embedding: np.ndarray | None  # action sampled from this architecture
    reward: float
    baseline: float
    advantage: float
    grad_norm: float
    wall_ms: float = 0.0

    def row(self) -> list[str]:
        return [
            str(self.iteration),
            self.architecture.to_json(),
            repr(float(self.reward)),
            repr(float(self.baseline)),
            repr(float(self.advantage)),
            repr(float(self.grad_norm)),
            repr(round(float(self.wall_ms), 3)),
        ]


@dataclass
class SearchReport:
    records: list
    best_architecture: Architecture
    best_reward: float
    initial_architecture: Architecture
    decoder_digest_before: str
    decoder_digest_after: str
    final: Reward | None = None
    extra: dict = field(default_factory=dict)

    @property
    def best_so_far(self) -> list[float]:
        return list(np.maximum.accumulate([r.reward for r in self.records]))

    def to_dict(self) -> dict:
        rewards = [r.reward for r in self.records]
        d = {
            "iterations": len(self.records),
            "best_architecture": self.best_architecture.to_dict(),
            "best_reward": self.best_reward,
            "mean_reward": float(np.mean(rewards)) if rewards else None,
            "initial_architecture": self.initial_architecture.to_dict(),
            "initial_architecture_rule": "random_architecture(space, search_seed)",
            "decoder_digest_before": self.decoder_digest_before,
            "decoder_digest_after": self.decoder_digest_after,
            "decoder_unchanged": self.decoder_digest_before == self.decoder_digest_after,
        }
        if self.final is not None:
            d["final"] = {"value": self.final.value, **self.final.metadata}
        d.update(self.extra)
        return d


# -- evaluators -----------------------------------------------------------------


def make_evaluator(cfg: SearchConfig) -> Evaluator:
    if cfg.evaluator == "synthetic":
        return SyntheticOracle.seeded(cfg.space, cfg.target_seed)
    from .evaluator.child import ChildEvaluator
    from .evaluator.data import load_dataset

    return ChildEvaluator.from_config(cfg, load_dataset(cfg))


def safe_evaluate(evaluator: Evaluator, arch: Architecture, budget: EvalBudget) -> tuple[float, dict]:
    """Evaluation failures are penalized with reward 0 rather than aborting the run."""
    try:
        r = evaluator.evaluate(arch, budget)
        return r.value, r.metadata
    except (EvaluationFailed, NumericError) as exc:
        log.warning("evaluation failed for %s: %s", arch.to_json(), exc)
        return 0.0, {"failed": str(exc)}


# -- stage one ------------------------------------------------------------------


def run_pretrain(cfg: SearchConfig, out=None):
    """Assemble and pretrain the autoencoder; saves it under ``<out>/autoencoder``."""
    out = Path(out or cfg.out)
    model = AutoencoderModel.create(cfg.space, cfg.embed_dim or None, cfg.hidden, cfg.pretrain_seed)
    report = pretrain(
        model,
        epochs=cfg.pretrain_epochs,
        batch=cfg.pretrain_batch,
        lr=cfg.pretrain_lr,
        seed=cfg.pretrain_seed,
        batches_per_epoch=cfg.pretrain_batches,
        holdout_size=cfg.holdout,
        one_hot=cfg.pretrain_one_hot,
        checkpoint_dir=out / "autoencoder",
    )
    atomic_write(out / "autoencoder" / "pretrain_report.json", json.dumps(report.to_dict(), indent=2))
    return model, report


def load_autoencoder(cfg: SearchConfig, out=None) -> AutoencoderModel:
    d = Path(out or cfg.out) / "autoencoder"
    if not (d / "autoencoder.json").is_file():
        raise NotPretrainedError(f"no pretrained autoencoder under {d}; run `nases pretrain` first")
    ae = AutoencoderModel.load(d)
    if ae.space != cfg.space:
        raise NotPretrainedError(f"autoencoder under {d} was trained for a different space")
    return ae


# -- stage two ------------------------------------------------------------------


def iteration_seed(search_seed: int, iteration: int) -> int:
    return int(np.random.SeedSequence([search_seed, iteration]).generate_state(1, np.uint64)[0] >> 1)


def _records_text(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_COLUMNS)
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


def _read_records(path: Path, limit: int) -> list[SearchRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if len(out) >= limit:
                break
            out.append(
                SearchRecord(
                    int(row["iter"]),
                    Architecture.from_json(row["arch_json"]),
                    None,
                    float(row["reward"]),
                    float(row["baseline"]),
                    float(row["advantage"]),
                    float(row["grad_norm"]),
                    float(row["wall_ms"]),
                )
            )
    return out


def _read_trace(path: Path, limit: int) -> list[str]:
    if not path.is_file():
        return []
    return path.read_text().splitlines()[:limit]


def run_search(
    cfg: SearchConfig,
    evaluator: Evaluator | None = None,
    ae: AutoencoderModel | None = None,
    resume: bool = False,
    out=None,
) -> SearchReport:
    """Run the search loop for ``cfg.iterations`` iterations in total.

    Each iteration evaluates the current architecture, credits the reward to
    the policy sample that produced it, samples a new embedding from the
    current architecture, and decodes it into the next architecture. With
    ``resume`` the loop continues from the checkpoint in ``<out>/controller``.
    """
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    space = cfg.space
    ae = ae if ae is not None else load_autoencoder(cfg, out)
    evaluator = evaluator if evaluator is not None else make_evaluator(cfg)
    budget = cfg.budget
    decoder_before = ae.decoder.digest()
    state_path = out / "controller" / "state.json"
    records_path = out / "records.csv"
    trace_path = out / "trace.jsonl"

    if resume and state_path.is_file():
        try:
            state = json.loads(state_path.read_text())
            controller = ControllerModel.load(out / "controller")
            records = _read_records(records_path, state["iteration"])
            trace = _read_trace(trace_path, state["iteration"])
            current = Architecture.from_json(state["current_arch"])
            initial = Architecture.from_json(state["initial_arch"])
            pending = PolicySample.from_dict(state["pending"]) if state["pending"] else None
        except (OSError, KeyError, ValueError, CheckpointError) as exc:
            raise CheckpointError(f"cannot resume from {out}: {exc}") from exc
        if len(records) != state["iteration"]:
            raise CheckpointError("records.csv is shorter than the checkpointed iteration count")
        if state.get("decoder_digest") != decoder_before:
            raise CheckpointError("autoencoder checkpoint changed since the run started")
        for r, line in zip(records, trace):
            r.embedding = np.asarray(json.loads(line)["action"])
    else:
        controller = init_from_simulator(ae, cfg.sigma, cfg.baseline_decay)
        records, trace = [], []
        initial = current = random_architecture(space, cfg.search_seed)
        pending = None
        atomic_write(out / "config.toml", cfg.to_toml())

    atomic_write(records_path, _records_text(records))
    atomic_write(trace_path, "".join(line + "\n" for line in trace))

    start = len(records) + 1
    with open(records_path, "a", newline="") as rfh, open(trace_path, "a") as tfh:
        writer = csv.writer(rfh, lineterminator="\n")
        for it in range(start, cfg.iterations + 1):
            t0 = time.perf_counter()
            reward, meta = safe_evaluate(evaluator, current, budget)
            if pending is None:
                baseline = update_baseline(controller, reward)
                advantage, grad_norm = 0.0, 0.0
            else:
                upd = reinforce_update(controller, pending, reward, cfg.controller_lr)
                baseline, advantage, grad_norm = upd["baseline"], upd["advantage"], upd["grad_norm"]

            sample = sample_action(controller, encode_origin(current, space), iteration_seed(cfg.search_seed, it))
            nxt = discretize(decode(ae, sample.action), space)
            wall = (time.perf_counter() - t0) * 1000.0 if cfg.record_timing else 0.0
            rec = SearchRecord(it, current, sample.action, reward, baseline, advantage, grad_norm, wall)
            records.append(rec)
            writer.writerow(rec.row())
            rfh.flush()
            tline = json.dumps({"iter": it, "action": sample.action.tolist(), "log_prob": sample.log_prob})
            tfh.write(tline + "\n")
            tfh.flush()

            pending, current = sample, nxt
            controller.save(out / "controller")
            state = {
                "iteration": it,
                "current_arch": current.to_json(),
                "initial_arch": initial.to_json(),
                "pending": pending.to_dict(),
                "decoder_digest": decoder_before,
            }
            atomic_write(state_path, json.dumps(state))
            if it % 50 == 0:
                log.info("iter %d reward=%.4f best=%.4f", it, reward, max(r.reward for r in records))

    best = max(records, key=lambda r: r.reward)  # first occurrence wins ties
    report = SearchReport(
        records,
        best.architecture,
        best.reward,
        initial,
        decoder_before,
        ae.decoder.digest(),
    )
    atomic_write(out / "report.json", json.dumps(report.to_dict(), indent=2))
    atomic_write(out / "best_arch.json", best.architecture.to_json() + "\n")
    return report


def random_search(space, evaluator: Evaluator, iterations: int, seed: int, budget: EvalBudget | None = None):
    """Uniform random sampling baseline with the same evaluation budget."""
    budget = budget or EvalBudget()
    rng = np.random.default_rng(seed)
    rewards = []
    for _ in range(iterations):
        arch = random_architecture(space, int(rng.integers(2**63 - 1)))
        rewards.append(safe_evaluate(evaluator, arch, budget)[0])
    return rewards


def replay_check(report: SearchReport, ae: AutoencoderModel) -> bool:
    """Every record's architecture must be the decode of the previous record's action."""
    for prev, cur in zip(report.records, report.records[1:]):
        if discretize(decode(ae, prev.embedding), ae.space) != cur.architecture:
            return False
    return True


# -- stage three ----------------------------------------------------------------


def run_final(cfg: SearchConfig, arch: Architecture, evaluator=None, out=None) -> Reward:
    """Retrain ``arch`` from scratch for ``epochs_e2`` epochs and score it once on test data."""
    evaluator = evaluator if evaluator is not None else make_evaluator(cfg)
    budget = cfg.budget
    if hasattr(evaluator, "final"):
        result = evaluator.final(arch, budget)
    else:
        result = evaluator.evaluate(arch, budget)
    if out is not None:
        payload = {"architecture": arch.to_dict(), "value": result.value, **result.metadata}
        atomic_write(Path(out) / "final.json", json.dumps(payload, indent=2))
    return result


def run_pipeline(cfg: SearchConfig, out=None) -> SearchReport:
    """Pretrain, search and final-train in one go."""
    out = Path(out or cfg.out)
    ae, _ = run_pretrain(cfg, out)
    evaluator = make_evaluator(cfg)
    report = run_search(cfg, evaluator, ae, out=out)
    report.final = run_final(cfg, report.best_architecture, evaluator, out)
    atomic_write(out / "report.json", json.dumps(report.to_dict(), indent=2))
    return report
