"""End-to-end experiment driver built on the CLI subcommands.

Runs ingest-layout data through audit, debias, BM25, encoding, probing,
kernel re-ranking on original and debiased collections, evaluation and
report. Each stage goes through ``cli.main`` so every stage leaves its own
manifest.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from . import cli
from .errors import ValidationError
from .tkmodel import EncoderConfig

log = logging.getLogger("posbias.pipeline")

REQUIRED_FILES = ("collection.tsv", "queries.tsv", "qrels.txt", "answers.tsv")
REPORT_FILES = ("answer_positions.csv", "ats_curve.csv", "mats_table.csv", "effectiveness.csv")


def _toy_encoder() -> EncoderConfig:
    return EncoderConfig(d=32, n_layers=2, n_heads=4, head_size=8, ff_dim=64, alpha=0.0, passage_offset=0)


@dataclass(frozen=True)
class PipelineConfig:
    """Inputs, seeds and model settings for one end-to-end run.

    ``data_dir`` must hold the canonical ingest layout. The default encoder
    and kernel weights form a small position-sensitive scorer: no gate
    bypass, query and passage positions aligned, weight only on the two
    highest-similarity kernels.
    """

    data_dir: Path
    out_dir: Path
    debias_seed: int = 1
    embed_seed: int = 3
    weight_seed: int = 7
    probe_seed: int = 0
    encoder: EncoderConfig = field(default_factory=_toy_encoder)
    kernels: int = 11
    sigma: float = 0.1
    score_weights: Optional[Tuple[float, ...]] = (0.0,) * 9 + (1.0, 1.0)
    retrieve_k: int = 100
    rerank_depth: int = 10
    eval_k: int = 10
    probe_cap: int = 10_000
    threads: int = 1

    def validate(self) -> None:
        missing = [n for n in REQUIRED_FILES if not (Path(self.data_dir) / n).is_file()]
        if missing:
            raise ValidationError(f"{self.data_dir} lacks {', '.join(missing)}")
        if self.score_weights is not None and len(self.score_weights) != self.kernels:
            raise ValidationError(f"{len(self.score_weights)} score weights for {self.kernels} kernels")
        for name in ("retrieve_k", "rerank_depth", "eval_k", "probe_cap", "threads", "kernels"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["data_dir"], d["out_dir"] = str(self.data_dir), str(self.out_dir)
        d["encoder"] = self.encoder.to_dict()
        return d


class StageError(RuntimeError):
    def __init__(self, argv: List[str], code: int):
        super().__init__(f"stage {argv[0]!r} exited with {code}")
        self.argv, self.code = argv, code


def _stage(cfg: PipelineConfig, *argv) -> None:
    argv = [str(a) for a in argv]
    full = ["--threads", str(cfg.threads), *argv] if argv[0] in ("retrieve", "encode", "rerank") else argv
    log.info("posbias %s", " ".join(full))
    code = cli.main(full)
    if code != cli.EXIT_OK:
        raise StageError(full, code)


def run_pipeline(cfg: PipelineConfig) -> Dict[str, Path]:
    """Run every stage and return the report CSV paths keyed by file name."""
    cfg.validate()
    data, out = Path(cfg.data_dir), Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "pipeline.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    qrels, answers, queries = data / "qrels.txt", data / "answers.tsv", data / "queries.tsv"
    colls = {"orig": data / "collection.tsv", "deb": out / "debiased" / "collection.tsv"}

    _stage(cfg, "audit", "--collection", colls["orig"], "--qrels", qrels, "--answers", answers, "--out", out / "audit_orig")
    _stage(
        cfg, "debias", "--collection", colls["orig"], "--seed", cfg.debias_seed,
        "--out", colls["deb"], "--rotation-map", out / "debiased" / "rotation_map.tsv",
    )
    _stage(cfg, "audit", "--collection", colls["deb"], "--qrels", qrels, "--answers", answers, "--out", out / "audit_deb")

    enc_path = out / "encoder.json"
    enc_path.write_text(json.dumps(cfg.encoder.to_dict(), indent=2, sort_keys=True) + "\n")
    weights = out / "encoder_weights"
    encoder_args = ["--embed-seed", cfg.embed_seed, "--weights", weights]
    _stage(
        cfg, "encode", "--collection", colls["orig"], "--encoder-config", enc_path, "--seed", cfg.weight_seed,
        "--embed-seed", cfg.embed_seed, "--save-weights", weights, "--out", out / "dumps" / "encoder.tsv",
    )
    _stage(cfg, "encode", "--collection", colls["orig"], *encoder_args, "--alpha", 1.0, "--out", out / "dumps" / "no_pe.tsv")
    for label in ("encoder", "no_pe"):
        _stage(cfg, "probe", "--dump", out / "dumps" / f"{label}.tsv", "--cap", cfg.probe_cap, "--seed", cfg.probe_seed,
               "--out", out / f"probe_{label}")

    kernel_args = ["--kernels", cfg.kernels, "--sigma", cfg.sigma, "--depth", cfg.rerank_depth]
    if cfg.score_weights is not None:
        kernel_args += ["--score-weights", ",".join(repr(float(w)) for w in cfg.score_weights)]
    runs = out / "runs"
    for tag, coll in colls.items():
        _stage(cfg, "retrieve", "--collection", coll, "--queries", queries, "--k", cfg.retrieve_k, "--out", runs / f"bm25_{tag}.txt")
        _stage(
            cfg, "rerank", "--collection", coll, "--queries", queries, "--run", runs / f"bm25_{tag}.txt",
            *encoder_args, *kernel_args, "--out", runs / f"tk_{tag}.txt",
        )
    for model in ("bm25", "tk"):
        _stage(
            cfg, "eval", "--run", runs / f"{model}_orig.txt", "--run-b", runs / f"{model}_deb.txt",
            "--qrels", qrels, "--k", cfg.eval_k, "--out", out / f"eval_{model}",
        )
    _stage(
        cfg, "report",
        "--audit", f"original={out / 'audit_orig'}", "--audit", f"debiased={out / 'audit_deb'}",
        "--probe", f"encoder={out / 'probe_encoder'}", "--probe", f"no_pe={out / 'probe_no_pe'}",
        "--eval", f"bm25={out / 'eval_bm25'}", "--eval", f"tk={out / 'eval_tk'}",
        "--out", out / "report",
    )
    return {name: out / "report" / name for name in REPORT_FILES}
