"""Ablation harness: retrain the pipeline under nested feature toggles.

Two row tables are provided. TABLE_ROWS mirrors the classic six-row
component table (baseline, +instance & inter losses, the two aggregation
variants, extended clustering, two-step memory). DIRECTIONAL_ROWS is the
five-step nested chain used by the desk-scale directional experiment:
baseline, +inter-modality phase, +cross-update aggregation, +extended
clustering (instance losses enter here, where the cleaner clusters support
them), and the full setup with the two-step memory schedule. All rows share
seeds, datasets and every non-toggled hyperparameter.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .clustering import INTER, INTRA_INFRARED, INTRA_VISIBLE
from .synth import SynthSpec, generate
from .trainer import TrainConfig, run_training

TABLE_ROWS: tuple[tuple[str, dict], ...] = (
    ("baseline", dict(use_instance_loss=False, use_inter_phase=False, aggregation="none",
                      use_emcc=False, memory_update="rtmem")),
    ("+instance+inter", dict(use_instance_loss=True, use_inter_phase=True, aggregation="none",
                             use_emcc=False, memory_update="rtmem")),
    ("+cma", dict(use_instance_loss=True, use_inter_phase=True, aggregation="cma",
                  use_emcc=False, memory_update="rtmem")),
    ("+ima", dict(use_instance_loss=True, use_inter_phase=True, aggregation="ima",
                  use_emcc=False, memory_update="rtmem")),
    ("+emcc", dict(use_instance_loss=True, use_inter_phase=True, aggregation="ima",
                   use_emcc=True, memory_update="rtmem")),
    ("full", dict(use_instance_loss=True, use_inter_phase=True, aggregation="ima",
                  use_emcc=True, memory_update="tsmem")),
)

DIRECTIONAL_ROWS: tuple[tuple[str, dict], ...] = (
    ("baseline", dict(use_instance_loss=False, use_inter_phase=False, aggregation="none",
                      use_emcc=False, memory_update="rtmem")),
    ("+inter", dict(use_instance_loss=False, use_inter_phase=True, aggregation="none",
                    use_emcc=False, memory_update="rtmem")),
    ("+cross-update", dict(use_instance_loss=False, use_inter_phase=True, aggregation="ima",
                           use_emcc=False, memory_update="rtmem")),
    ("+emcc", dict(use_instance_loss=True, use_inter_phase=True, aggregation="ima",
                   use_emcc=True, memory_update="rtmem")),
    ("full", dict(use_instance_loss=True, use_inter_phase=True, aggregation="ima",
                  use_emcc=True, memory_update="tsmem")),
)

# kept for the CLI default
ABLATION_ROWS = TABLE_ROWS


def standard_spec(seed: int = 0) -> SynthSpec:
    """Desk-scale dataset used for the directional experiments: 20 ids,
    2 modalities, 2 cameras, 32 dims."""
    return SynthSpec(seed=seed)


def standard_config(seed: int = 0, epochs: int = 30) -> TrainConfig:
    """Desk-scale training setup shared by every ablation row.

    The clustering ranges are sized to the standard dataset (16 rows per
    identity, 8 per identity and modality) and the instance-level terms are
    softened relative to the cluster-level ones.
    """
    return TrainConfig(
        seed=seed,
        epochs=epochs,
        dim_out=16,
        lr=1e-4,
        iters_per_epoch=4,
        switch_epoch=epochs // 3,
        blend_offset=0.2,
        instance_loss_weight=0.5,
        k1=15,
        k2_intra=2,
        k2_inter=3,
        k3=80,
        eps_start=0.5,
        eps_end=0.5,
        min_samples=4,
    )


@dataclass
class AblationRow:
    name: str
    rank1: np.ndarray   # per seed
    mean_ap: np.ndarray
    ari: np.ndarray

    @property
    def rank1_mean(self) -> float:
        return float(self.rank1.mean())

    @property
    def rank1_std(self) -> float:
        return float(self.rank1.std())


def _final_ari(history) -> float:
    final = history[-1].clusters
    if INTER in final and np.isfinite(final[INTER][2]):
        return final[INTER][2]
    vals = [final[m][2] for m in (INTRA_VISIBLE, INTRA_INFRARED) if m in final]
    vals = [v for v in vals if np.isfinite(v)]
    return float(np.mean(vals)) if vals else float("nan")


def run_ablate(
    base_config: TrainConfig,
    spec: SynthSpec,
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4),
    rows: tuple[tuple[str, dict], ...] = TABLE_ROWS,
    progress=None,
) -> list[AblationRow]:
    """Train every row over the shared seeds and collect final metrics."""
    datasets = {s: generate(replace(spec, seed=s)) for s in seeds}
    report = []
    for name, toggles in rows:
        rank1, mean_ap, ari = [], [], []
        for s in seeds:
            cfg = replace(base_config, seed=s, **toggles)
            state = run_training(cfg, datasets[s])
            last = state.history[-1]
            rank1.append(last.rank1)
            mean_ap.append(last.map)
            ari.append(_final_ari(state.history))
            if progress is not None:
                progress(name, s, last.rank1)
        report.append(
            AblationRow(name, np.asarray(rank1), np.asarray(mean_ap), np.asarray(ari))
        )
    return report


def format_report(report: list[AblationRow]) -> str:
    lines = [f"{'configuration':<18} {'rank1':>15} {'mAP':>15} {'ARI':>15}"]
    for row in report:
        lines.append(
            f"{row.name:<18}"
            f" {row.rank1.mean():8.4f}±{row.rank1.std():6.4f}"
            f" {row.mean_ap.mean():8.4f}±{row.mean_ap.std():6.4f}"
            f" {np.nanmean(row.ari):8.4f}±{np.nanstd(row.ari):6.4f}"
        )
    return "\n".join(lines)
