"""Command-line entry point: ``cfgnn <subcommand> --config run.yaml [flags]``."""

import argparse
import logging
import sys

from . import dataset
from .config import parse_config
from .errors import CfgnnError
from .experiment import (
    Experiment,
    deterministic_mode,
    export_csv,
    load_records,
    save_records,
    seed_for,
)

log = logging.getLogger("cfgnn")

COMMANDS = {
    "gen-synth": "generate the synthetic pretraining set and its split",
    "ingest": "validate a measurement CSV and write a canonical copy",
    "pairs": "build multi-user samples and the split from measurements",
    "pretrain": "train the GNN on synthetic data",
    "finetune": "fine-tune the pretrained GNN on the target domain",
    "freeze-sweep": "fine-tune and evaluate every freeze level",
    "eval": "evaluate all configured methods over the SNR sweep",
    "export": "re-export saved records as CSV",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="cfgnn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment config (YAML)")
    common.add_argument("--seed", type=int, default=None, help="override config seed")
    common.add_argument("--out", default=None, help="run directory (overrides config output)")
    common.add_argument("--retrain", action="store_true",
                        help="train even when checkpoints exist")
    common.add_argument("--deterministic", action="store_true",
                        help="single-threaded BLAS for bit-reproducible output")
    common.add_argument("-v", "--verbose", action="store_true")
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name == "freeze-sweep":
            p.add_argument("--levels", type=int, nargs="+", default=None,
                           help="freeze levels (default: config eval.freeze_sweep or 0..8)")
        if name == "export":
            p.add_argument("--domain", default=None, help="which records_<domain>.json to export")
            p.add_argument("--csv", default=None, help="destination CSV path")
    return parser


def _summary(records):
    for r in sorted(records, key=lambda r: r.sort_key()):
        freeze = "" if r.freeze is None else f" freeze={r.freeze}"
        print(f"{r.method:15s}{freeze:10s} {r.snr_db:6.1f} dB  {r.mean_sum_rate:8.3f} "
              f"+/- {r.std:.3f}  (n={r.count})")


def run_command(args):
    config = parse_config(args.config, {"seed": args.seed, "output": args.out})
    exp = Experiment(config, args.out, retrain=args.retrain, deterministic=args.deterministic)
    cmd = args.command

    if cmd == "gen-synth":
        channels = exp.source_channels()
        path = exp.path("source_channels.npz")
        dataset.save_channels(path, channels, config.seed, "synthetic")
        manifest = dataset.split(len(channels), config.dataset.fractions,
                                 seed_for(exp.seed, "source_split"))
        dataset.save_json(manifest, exp.path("source_split.json"))
        print(f"wrote {len(channels)} channels of shape {channels.shape[1:]} to {path}")
        exp.write_manifest(cmd, {"channels": path.name, "split": "source_split.json"})
    elif cmd == "ingest":
        ms = exp.measurements()
        dataset.write_measurements(ms, exp.path("measurements.csv"))
        print(f"{ms.num_positions} positions x {ms.num_aps} APs, "
              f"source={ms.metadata.get('source')}")
        exp.write_manifest(cmd, {"measurements": "measurements.csv"})
    elif cmd == "pairs":
        ms, samples = exp.measured_samples(exp.measurements())
        manifest = dataset.split(samples, config.dataset.fractions, seed_for(exp.seed, "target_split"))
        dataset.save_json(samples, exp.path("samples.json"))
        dataset.save_json(manifest, exp.path("target_split.json"))
        print(f"{len(samples)} samples of {samples.users_per_sample} users from "
              f"{ms.num_positions} positions; split {len(manifest.train)}/"
              f"{len(manifest.val)}/{len(manifest.test)}")
        exp.write_manifest(cmd, {"samples": "samples.json", "split": "target_split.json"})
    elif cmd == "pretrain":
        with deterministic_mode(args.deterministic):
            exp.pretrained()
        exp.write_manifest(cmd, {"checkpoint": "pretrained.json"})
    elif cmd == "finetune":
        with deterministic_mode(args.deterministic):
            exp.finetuned()
        name = f"finetuned_freeze{config.finetune.freeze}.json"
        exp.write_manifest(cmd, {"checkpoint": name})
    elif cmd == "freeze-sweep":
        with deterministic_mode(args.deterministic):
            records = exp.freeze_sweep(args.levels)
        export_csv(records, exp.path("freeze_sweep.csv"))
        save_records(records, exp.path("records_freeze_sweep.json"))
        _summary(records)
        exp.write_manifest(cmd, {"metrics": "freeze_sweep.csv"}, {"freeze_sweep": records})
    elif cmd == "eval":
        outputs = exp.run()
        for domain, records in outputs.items():
            print(f"[{domain}]")
            _summary(records)
    elif cmd == "export":
        domain = args.domain or config.domains[0]
        records = load_records(exp.out / f"records_{domain}.json")
        dest = args.csv or exp.path(f"metrics_{domain}.csv")
        export_csv(records, dest)
        print(f"wrote {len(records)} records to {dest}")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return run_command(args)
    except CfgnnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
