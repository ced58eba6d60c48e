"""Command-line entry point: synth, cluster, train, eval, ablate."""
from __future__ import annotations

import argparse
import csv
import shutil
import struct
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import ablate as ablate_mod
from .clustering import CLUSTER_MODES, cluster_epoch, mode_distance
from .config import ConfigError, load_synth_spec, load_train_config
from .encoder import ToyEncoder
from .features import DatasetSplit, FeatureSet, load_featureset, normalize, save_featureset
from .memory import save_memory
from .metrics import clustering_scores, evaluate
from .synth import generate
from .trainer import TrainConfig, init_state, train_epoch
from .clustering import assign_pseudo_labels


def _cmd_synth(args) -> int:
    spec = load_synth_spec(args.spec) if args.spec else ablate_mod.standard_spec()
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    split = generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, fs in (("train", split.train), ("query", split.query), ("gallery", split.gallery)):
        save_featureset(fs, out / f"{name}.ecul")
    print(f"wrote train/query/gallery feature files under {out}")
    return 0


def _cmd_cluster(args) -> int:
    fs = normalize(load_featureset(args.features))
    cfg = load_train_config(args.config) if args.config else TrainConfig()
    schedule = cfg.cluster_schedule()
    use_extension = not args.no_extension
    if args.dump_jaccard:
        dist, _ = mode_distance(fs, schedule, args.mode, use_extension)
        with open(args.dump_jaccard, "wb") as fh:
            fh.write(struct.pack("<Q", dist.shape[0]))
            fh.write(dist.astype(np.float32).tobytes())
    assignment = cluster_epoch(fs, schedule, args.epoch, args.mode, use_extension)
    print(f"mode={args.mode} epoch={args.epoch} eps={schedule.eps(args.epoch):.4f}")
    print(f"clusters: {assignment.num_clusters}")
    print(f"noise fraction: {assignment.noise_fraction:.4f}")
    identities = fs.identity[assignment.rows]
    if np.all(identities >= 0):
        ari, nmi = clustering_scores(assignment, identities)
        print(f"ARI: {ari:.4f}")
        print(f"NMI: {nmi:.4f}")
    save_featureset(assign_pseudo_labels(fs, assignment), args.features)
    return 0


def _epoch_csv_row(record) -> list[str]:
    row = [str(record.epoch), repr(record.lr), str(int(record.skipped))]
    for mode in CLUSTER_MODES:
        count, noise, ari = record.clusters.get(mode, (0, float("nan"), float("nan")))
        row += [str(count), repr(noise), repr(ari)]
    row += [repr(record.loss_intra), repr(record.loss_inter)]
    row += [repr(record.rank1), repr(record.map), repr(record.minp)]
    return row


_EPOCH_HEADER = (
    ["epoch", "lr", "skipped"]
    + [f"{mode}_{col}" for mode in CLUSTER_MODES for col in ("clusters", "noise", "ari")]
    + ["loss_intra", "loss_inter", "rank1", "map", "minp"]
)


def _cmd_train(args) -> int:
    cfg = load_train_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    train_fs = normalize(load_featureset(args.features))
    query = normalize(load_featureset(args.query)) if args.query else None
    gallery = normalize(load_featureset(args.gallery)) if args.gallery else None
    data = DatasetSplit(train=train_fs, query=query, gallery=gallery)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.config:
        shutil.copy(args.config, out / "config.txt")
    else:
        (out / "config.txt").write_text("# built-in defaults\n")

    state = init_state(cfg, data)
    for _ in range(cfg.epochs):
        train_epoch(state)
        record = state.history[-1]
        if args.verbose:
            print(
                f"epoch {record.epoch}: loss_intra={record.loss_intra:.4f} "
                f"loss_inter={record.loss_inter:.4f} rank1={record.rank1:.4f}"
            )

    with open(out / "epochs.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_EPOCH_HEADER)
        for record in state.history:
            writer.writerow(_epoch_csv_row(record))
    with open(out / "losses.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "phase", "term", "value"])
        for epoch, phase, term, value in state.loss_rows:
            writer.writerow([epoch, phase, term, repr(value)])
    state.encoder.save(out / "encoder.npy")
    for (scope, level), bank in sorted(state.banks.items()):
        save_memory(bank, out / f"memory_{scope}_{level}.bin")
        if args.dump_memory:
            save_memory(bank, Path(args.dump_memory).with_suffix(f".{scope}.{level}.bin"))
    if args.dump_pairs:
        with open(args.dump_pairs, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["visible_key", "infrared_key", "votes"])
            if state.pairing is not None:
                for m, n, votes in state.pairing.pairs:
                    writer.writerow([m, n, votes])
    final = state.history[-1]
    print(f"finished {cfg.epochs} epochs; final rank1={final.rank1:.4f} mAP={final.map:.4f}")
    return 0


def _cmd_eval(args) -> int:
    query = normalize(load_featureset(args.query))
    gallery = normalize(load_featureset(args.gallery))
    encoder = ToyEncoder.load(args.encoder) if args.encoder else None
    result = evaluate(query, gallery, encoder, filter_same_camera=args.filter_same_camera)
    ranks = [r for r in (1, 5, 10, 20) if r <= result.cmc.size]
    print(f"{'metric':<10} value")
    for r in ranks:
        print(f"rank-{r:<5} {result.cmc[r - 1]:.4f}")
    print(f"{'mAP':<10} {result.map:.4f}")
    print(f"{'mINP':<10} {result.minp:.4f}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "value"])
            for r in ranks:
                writer.writerow([f"rank{r}", repr(float(result.cmc[r - 1]))])
            writer.writerow(["map", repr(result.map)])
            writer.writerow(["minp", repr(result.minp)])
    return 0


def _cmd_ablate(args) -> int:
    cfg = load_train_config(args.config) if args.config else ablate_mod.standard_config()
    spec = load_synth_spec(args.spec) if args.spec else ablate_mod.standard_spec()
    seeds = tuple(int(s) for s in args.seeds.split(","))
    progress = None
    if args.verbose:
        progress = lambda name, seed, rank1: print(f"  {name} seed={seed}: rank1={rank1:.4f}")
    report = ablate_mod.run_ablate(cfg, spec, seeds, progress=progress)
    print(ablate_mod.format_report(report))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "ablation.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["configuration", "seed", "rank1", "map", "ari"])
            for row in report:
                for i, s in enumerate(seeds):
                    writer.writerow(
                        [row.name, s, repr(float(row.rank1[i])), repr(float(row.mean_ap[i])),
                         repr(float(row.ari[i]))]
                    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecul",
        description="Unsupervised cross-modal pseudo-labeling and contrastive-memory training",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic train/query/gallery split")
    p.add_argument("--spec", help="flat key=value synthesis spec (defaults built in)")
    p.add_argument("--out", required=True, help="output directory for the three feature files")
    p.add_argument("--seed", type=int, help="override the spec seed")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("cluster", help="run one clustering round and write pseudo-labels back")
    p.add_argument("--features", required=True)
    p.add_argument("--epoch", type=int, default=0)
    p.add_argument("--mode", choices=CLUSTER_MODES, default="inter")
    p.add_argument("--config", help="flat key=value training config (clustering keys used)")
    p.add_argument("--dump-jaccard", help="write the distance matrix (u64 N + float32 entries)")
    p.add_argument("--no-extension", action="store_true", help="skip the encoding extension")
    p.set_defaults(func=_cmd_cluster)

    p = sub.add_parser("train", help="train the toy encoder on a feature file")
    p.add_argument("--config", help="flat key=value training config")
    p.add_argument("--features", required=True, help="training feature file")
    p.add_argument("--query", help="held-out query features for per-epoch evaluation")
    p.add_argument("--gallery", help="held-out gallery features for per-epoch evaluation")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--dump-memory", help="extra path prefix for final bank snapshots")
    p.add_argument("--dump-pairs", help="CSV path for the final cross-modal pairing")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="retrieval metrics for a query/gallery pair")
    p.add_argument("--query", required=True)
    p.add_argument("--gallery", required=True)
    p.add_argument("--encoder", help="encoder weight file (.npy)")
    p.add_argument("--filter-same-camera", action="store_true")
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="train the nested ablation rows over shared seeds")
    p.add_argument("--config", help="base training config (defaults to the desk-scale setup)")
    p.add_argument("--spec", help="synthetic data spec (defaults to the desk-scale dataset)")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--out", help="directory for the per-seed CSV report")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=_cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, ConfigError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
