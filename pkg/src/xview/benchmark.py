"""Desk-scale benchmark: generate the synthetic dataset, run the staged
schedule, and score held-out retrieval.

The defaults here are calibrated for minutes-scale CPU runs: a 3-cluster
dataset with 100 training and 20 held-out pairs per cluster, 64-dim
embeddings, and a few hundred steps per phase. The learning rate is
raised above the full-scale default because these encoders are four
blocks, not eight, and see three orders of magnitude less data.
"""

from dataclasses import dataclass
from pathlib import Path

from .config import stage_config_from_text
from .containers import read_checkpoint
from .errors import ConfigError
from .retrieval import distance_matrix, recall_at_k, top_one_percent
from .synthetic import SyntheticSpec, generate_synthetic_dataset
from .synthproxy import ProxyConfig
from .training import embed_manifest, run_stage

BENCH_RHO = 0.7
BENCH_NOISE_STD = 0.3
BENCH_LR = 5e-4
BENCH_STEPS = {
    "baseline-ga": (300, 100),
    "baseline-synth": (300, 100),
    "joint": (300, 100),
    "fusion": (1400, 400),
}


def benchmark_config_text(seed: int, lr: float = BENCH_LR,
                          steps: dict | None = None, rho: float = BENCH_RHO,
                          embed_dim: int = 64) -> str:
    steps = steps or BENCH_STEPS
    lines = []
    for stage, (s_ex, s_hn) in steps.items():
        lines.append(f"[{stage}]")
        lines.append(f"steps_exhaustive = {s_ex}")
        lines.append(f"steps_hard_negative = {s_hn}")
        lines.append(f"lr = {lr}")
        lines.append(f"seed = {seed}")
        lines.append(f"embed_dim = {embed_dim}")
        lines.append(f"rho = {rho}")
        lines.append("")
    return "\n".join(lines)


@dataclass
class EvalScores:
    top1: float
    top10: float
    top1pct: float


def _score(query_emb, ref_emb) -> EvalScores:
    dist = distance_matrix(query_emb, ref_emb)
    n = dist.shape[1]
    gt = list(range(dist.shape[0]))
    return EvalScores(top1=recall_at_k(dist, gt, 1),
                      top10=recall_at_k(dist, gt, min(10, n)),
                      top1pct=top_one_percent(dist, gt))


def evaluate_checkpoint(ckpt_path, test_manifest, query_source: str = "encoder",
                        query_view: str = "ground") -> EvalScores:
    """Held-out retrieval scores for one checkpoint. Queries and gallery
    rows share ids, so ground truth is the identity pairing."""
    ckpt = read_checkpoint(ckpt_path)
    q = embed_manifest(ckpt, test_manifest, source=query_source, view=query_view)
    r = embed_manifest(ckpt, test_manifest, source="encoder", view="aerial")
    if q.ids != r.ids:
        raise ConfigError("query and gallery ids diverge on one manifest")
    return _score(q, r)


def make_benchmark_dataset(data_dir, seed: int, rho: float = BENCH_RHO,
                           clusters: int = 3, per_cluster: int = 100,
                           test_per_cluster: int = 20,
                           complementary_dims: int = 10) -> tuple[Path, Path]:
    spec = SyntheticSpec(clusters=clusters, per_cluster=per_cluster,
                         test_per_cluster=test_per_cluster,
                         complementary_dims=complementary_dims, seed=seed)
    proxy = ProxyConfig(rho=rho, noise_std=BENCH_NOISE_STD, seed=seed)
    return generate_synthetic_dataset(data_dir, spec, proxy=proxy)


@dataclass
class ScheduleScores:
    baseline: EvalScores
    joint: EvalScores
    fusion: EvalScores


def run_full_schedule(data_dir, work_dir, seed: int, lr: float = BENCH_LR,
                      steps: dict | None = None, rho: float = BENCH_RHO,
                      stages=("baseline-ga", "joint", "fusion")) -> dict:
    """Train the staged pipeline on an existing synthetic dataset and
    return checkpoint paths plus held-out scores per stage."""
    data_dir, work_dir = Path(data_dir), Path(work_dir)
    work_dir.mkdir(parents=True, exist_ok=True)
    train_manifest = data_dir / "train.csv"
    test_manifest = data_dir / "test.csv"
    text = benchmark_config_text(seed, lr=lr, steps=steps, rho=rho)

    out: dict = {"checkpoints": {}, "scores": {}}
    warm = {"joint": "baseline-ga", "fusion": "joint"}
    for stage in stages:
        cfg = stage_config_from_text(text, stage)
        ckpt_path = work_dir / f"{stage}.ckpt"
        warm_path = out["checkpoints"].get(warm.get(stage))
        run_stage(cfg, train_manifest, ckpt_path, warm_start=warm_path,
                  log_dir=work_dir)
        out["checkpoints"][stage] = ckpt_path
        if stage == "baseline-synth":
            scores = evaluate_checkpoint(ckpt_path, test_manifest,
                                         query_source="proxy")
        else:
            scores = evaluate_checkpoint(ckpt_path, test_manifest)
        out["scores"][stage] = scores
    return out
