"""Config-driven pipeline: data preparation, pretraining, fine-tuning, evaluation.

Two data domains exist.  The *source* domain is synthetic and used for
pretraining.  The optional *target* domain stands for real deployment data
(a measurement file, or a differently configured synthetic generator) and
is used for fine-tuning, from-scratch training and, by default, evaluation.

All randomness is derived from ``config.seed`` through named substreams, so
each stage is reproducible on its own.
"""

import contextlib
import csv
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import dataset, gnn, training
from .channel import LinkBudget
from .errors import CheckpointError, ConfigError, InsufficientDataError, InvalidArgumentError
from .precoders import conjugate_beamforming, gram_condition, sum_rate, zero_forcing

log = logging.getLogger(__name__)

CSV_FIELDS = ["method", "freeze", "snr_db", "mean_sum_rate", "std", "count"]

_STREAMS = {
    "source_data": 1,
    "target_data": 2,
    "source_split": 3,
    "target_split": 4,
    "init": 5,
    "pretrain": 6,
    "finetune": 7,
    "scratch_init": 8,
    "scratch": 9,
    "target_samples": 10,
}


@dataclass
class MetricsRecord:
    method: str
    snr_db: float
    mean_sum_rate: float
    std: float
    count: int
    freeze: int | None = None
    skipped: int = 0

    def sort_key(self):
        return (self.method, -1 if self.freeze is None else self.freeze, self.snr_db)


def rng_for(seed, stream):
    return np.random.default_rng([seed, _STREAMS[stream]])


def seed_for(seed, stream):
    return int(np.random.SeedSequence([seed, _STREAMS[stream]]).generate_state(1)[0])


@contextlib.contextmanager
def deterministic_mode(enabled=True):
    """Pin BLAS/OpenMP pools to one thread so reductions have a fixed order."""
    if not enabled:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=1):
        yield


@dataclass
class DomainData:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    gain_scale: float = 1.0


def _normalized(channels, manifest, normalize):
    parts = [channels[manifest.train], channels[manifest.val], channels[manifest.test]]
    scale = 1.0
    if normalize:
        if len(manifest.train) == 0:
            raise InsufficientDataError("gain normalization needs a non-empty training split")
        scale = training.input_scale_for(parts[0])
        parts = [p / scale for p in parts]
    return DomainData(*parts, gain_scale=scale)


class Experiment:
    """One run directory plus the config that defines it.

    Artifacts are cached on the instance and on disk (checkpoints), so the
    CLI stages can be invoked separately or all at once via ``run``.
    """

    def __init__(self, config, out_dir=None, retrain=False, deterministic=False):
        self.config = config
        self.out = Path(out_dir or config.output)
        self.retrain = retrain
        self.deterministic = deterministic
        self._source = None
        self._target = None
        self._params = {}

    @property
    def seed(self):
        return self.config.seed

    def path(self, name):
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out / name

    # data ---------------------------------------------------------------

    def source_channels(self):
        sc, syn = self.config.scenario, self.config.dataset.synthetic
        spec = dataset.SyntheticSpec(syn.area_side_m, syn.carrier_ghz, syn.d_min_m)
        return dataset.generate_synthetic_dataset(syn.count, sc.aps, sc.users, spec,
                                                  rng_for(self.seed, "source_data"))

    def source(self):
        if self._source is None:
            channels = self.source_channels()
            manifest = dataset.split(len(channels), self.config.dataset.fractions,
                                     seed_for(self.seed, "source_split"))
            self._source = _normalized(channels, manifest, self.config.dataset.normalize_gain)
        return self._source

    def measurements(self):
        target = self._require_target()
        if target.measured is None:
            raise ConfigError("no measurement file configured", "dataset.target.measured")
        ms = dataset.load_measurements(target.measured.path, target.measured.unit_scale)
        if ms.num_aps != self.config.scenario.aps:
            raise ConfigError(f"measurement file has {ms.num_aps} APs but scenario.aps is "
                              f"{self.config.scenario.aps}", "scenario.aps")
        return ms

    def measured_samples(self, ms):
        """Multi-user samples: all pairs for K=2, else top-N positions + sampled K-tuples."""
        measured = self.config.dataset.target.measured
        k = self.config.scenario.users
        if k == 1:
            return ms, dataset.SampleSet(np.arange(ms.num_positions)[:, None], ms.num_positions)
        if k == 2 and measured.top_n is None and measured.sample_count is None:
            return ms, dataset.build_two_user_pairs(ms)
        if measured.top_n is not None:
            ms = dataset.select_top_by_strength(ms, measured.top_n)
        count = measured.sample_count
        if count is None:
            count = min(math.comb(ms.num_positions, 2), math.comb(ms.num_positions, k))
        samples = dataset.build_k_user_samples(ms, k, count,
                                               rng_for(self.seed, "target_samples"))
        samples.seed = self.seed
        return ms, samples

    def target_channels(self):
        target = self._require_target()
        sc = self.config.scenario
        if target.synthetic is not None:
            syn = target.synthetic
            spec = dataset.SyntheticSpec(syn.area_side_m, syn.carrier_ghz, syn.d_min_m)
            return dataset.generate_synthetic_dataset(syn.count, sc.aps, sc.users, spec,
                                                      rng_for(self.seed, "target_data"))
        ms, samples = self.measured_samples(self.measurements())
        return dataset.materialize_all(ms, samples)

    def target(self):
        if self._target is None:
            channels = self.target_channels()
            manifest = dataset.split(len(channels), self.config.dataset.fractions,
                                     seed_for(self.seed, "target_split"))
            self._target = _normalized(channels, manifest, self.config.dataset.normalize_gain)
        return self._target

    def _require_target(self):
        if self.config.dataset.target is None:
            raise ConfigError("this stage needs a target domain", "dataset.target")
        return self.config.dataset.target

    def domain(self, name):
        return self.target() if name == "target" else self.source()

    # training -------------------------------------------------------------

    def _train_config(self, section, freeze=0, seed_stream="pretrain"):
        t = self.config.train
        return training.TrainConfig(
            learning_rate=section.learning_rate, epochs=section.epochs,
            batch_size=section.batch_size, train_snr_db=t.train_snr_db,
            total_power=t.total_power, freeze_prefix=freeze,
            seed=seed_for(self.seed, seed_stream))

    def _fresh_params(self, stream):
        m = self.config.model
        return gnn.init_params(m.hidden_width, rng_for(self.seed, stream), m.leaky_slope,
                               seed=self.seed, self_inclusive=m.self_inclusive)

    def _obtain(self, name, fit):
        """Load checkpoint ``name`` unless absent or retraining; otherwise fit and save."""
        if name in self._params:
            return self._params[name]
        path = self.path(f"{name}.json")
        if path.exists() and not self.retrain:
            params, meta = gnn.read_checkpoint(path)
            if meta.get("config_sha256") not in (None, self.config.digest()):
                log.warning("%s was trained under a different config; pass --retrain to refresh",
                            path)
            m = self.config.model
            if (params.num_layers, params.hidden_width, params.leaky_slope,
                    params.self_inclusive) != (gnn.NUM_LAYERS, m.hidden_width, m.leaky_slope,
                                               m.self_inclusive):
                raise CheckpointError(
                    f"{path}: checkpoint architecture (width {params.hidden_width}, "
                    f"{params.num_layers} layers) does not match the config; use --retrain")
            log.info("loaded %s", path)
        else:
            params, history = fit()
            gnn.save_checkpoint(params, path, {"config_sha256": self.config.digest()})
            history.to_csv(self.path(f"{name}_history.csv"))
            log.info("saved %s", path)
        self._params[name] = params
        return params

    def pretrained(self):
        def fit():
            src = self.source()
            cfg = self._train_config(self.config.train, 0, "pretrain")
            return training.train(self._fresh_params("init"), src.train, src.val, cfg)
        return self._obtain("pretrained", fit)

    def finetuned(self, freeze=None):
        freeze = self.config.finetune.freeze if freeze is None else freeze

        def fit():
            tgt = self.target()
            cfg = self._train_config(self.config.finetune, freeze, "finetune")
            return training.fine_tune(self.pretrained(), tgt.train, tgt.val, cfg)
        return self._obtain(f"finetuned_freeze{freeze}", fit)

    def scratch(self):
        def fit():
            tgt = self.target()
            cfg = self._train_config(self.config.finetune, 0, "scratch")
            return training.train(self._fresh_params("scratch_init"), tgt.train, tgt.val, cfg)
        return self._obtain("scratch", fit)

    # evaluation ---------------------------------------------------------

    def _budgets(self):
        p = self.config.train.total_power
        return [(snr, LinkBudget.from_snr(p, snr)) for snr in self.config.eval.snr_sweep_db]

    def _rate_records(self, method, rates_for, freeze=None, skipped=0):
        records = []
        for snr, budget in self._budgets():
            rates = rates_for(budget)
            records.append(MetricsRecord(method, snr, float(np.mean(rates)), float(np.std(rates)),
                                         int(rates.size), freeze, skipped))
        return records

    def evaluate_method(self, method, channels, freeze=None):
        p = self.config.train.total_power
        if method == "cb":
            w = conjugate_beamforming(channels, p)
            return self._rate_records(method, lambda b: sum_rate(channels, w, b.noise_variance).sum_rate)
        if method == "zf":
            k, m = channels.shape[-2:]
            if k > m:
                raise InsufficientDataError(f"zero forcing needs K <= M, got K={k}, M={m}")
            ok = gram_condition(channels) <= self.config.eval.zf_cond_max
            good = channels[ok]
            skipped = int(np.count_nonzero(~ok))
            if skipped:
                log.warning("zf: skipped %d ill-conditioned samples of %d", skipped, len(channels))
            if good.shape[0] == 0:
                raise InsufficientDataError("zero forcing: every test sample is ill-conditioned")
            w = zero_forcing(good, p, self.config.eval.zf_cond_max)
            return self._rate_records(method, lambda b: sum_rate(good, w, b.noise_variance).sum_rate,
                                      skipped=skipped)
        if method == "gnn_pretrained":
            params = self.pretrained()
        elif method == "gnn_finetuned":
            params = self.finetuned(freeze)
            freeze = self.config.finetune.freeze if freeze is None else freeze
        elif method == "gnn_scratch":
            params = self.scratch()
        else:
            raise InvalidArgumentError(f"unknown method {method!r}")
        return self._rate_records(method, lambda b: training.gnn_sum_rates(params, channels, b),
                                  freeze=freeze)

    def evaluate(self, domain):
        """Records for every configured method and SNR on ``domain``'s test split."""
        test = self.domain(domain).test
        if test.shape[0] == 0:
            raise InsufficientDataError(f"{domain} test split is empty")
        records = []
        for method in self.config.methods:
            if method == "gnn_finetuned" and self.config.eval.freeze_sweep is not None:
                for l in self.config.eval.freeze_sweep:
                    records += self.evaluate_method(method, test, freeze=l)
            else:
                records += self.evaluate_method(method, test)
        return records

    def freeze_sweep(self, levels=None):
        levels = self.config.eval.freeze_sweep if levels is None else levels
        if levels is None:
            levels = list(range(9))
        test = self.target().test
        records = []
        for l in levels:
            records += self.evaluate_method("gnn_finetuned", test, freeze=l)
        return records

    def run(self):
        """Evaluate every configured domain; write CSVs, records and the manifest."""
        with deterministic_mode(self.deterministic):
            outputs = {}
            for domain in self.config.domains:
                records = self.evaluate(domain)
                csv_path = self.path(f"metrics_{domain}.csv")
                export_csv(records, csv_path)
                save_records(records, self.path(f"records_{domain}.json"))
                outputs[domain] = records
            self.write_manifest("eval", {d: f"metrics_{d}.csv" for d in outputs}, outputs)
        return outputs

    def write_manifest(self, command, files, outputs=None):
        doc = {
            "command": command,
            "seed": self.seed,
            "config_sha256": self.config.digest(),
            "config": self.config.to_dict(),
            "files": files,
            "gain_scale": {},
            "zf_skipped": {},
        }
        if self._source is not None:
            doc["gain_scale"]["source"] = self._source.gain_scale
        if self._target is not None:
            doc["gain_scale"]["target"] = self._target.gain_scale
        for domain, records in (outputs or {}).items():
            for r in records:
                if r.method == "zf":
                    doc["zf_skipped"][domain] = r.skipped
        with open(self.path("manifest.json"), "w") as f:
            json.dump(doc, f, indent=1, sort_keys=True)
            f.write("\n")


def run_experiment(config, out_dir=None, retrain=False, deterministic=False):
    """Build, train as needed and evaluate; returns records of the first domain."""
    outputs = Experiment(config, out_dir, retrain, deterministic).run()
    return outputs[config.domains[0]]


def _fmt(x):
    return repr(float(x))


def export_csv(records, path):
    """Write ``method,freeze,snr_db,mean_sum_rate,std,count`` rows sorted by method/freeze/SNR."""
    if not records:
        raise InvalidArgumentError("no records to export")
    rows = sorted(records, key=MetricsRecord.sort_key)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for r in rows:
            writer.writerow([r.method, "" if r.freeze is None else r.freeze, _fmt(r.snr_db),
                             _fmt(r.mean_sum_rate), _fmt(r.std), r.count])


def save_records(records, path):
    with open(path, "w") as f:
        json.dump([asdict(r) for r in records], f, indent=1)
        f.write("\n")


def load_records(path):
    with open(path) as f:
        return [MetricsRecord(**doc) for doc in json.load(f)]
