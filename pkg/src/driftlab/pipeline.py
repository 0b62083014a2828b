"""End-to-end experiment: source model, Fisher, then every domain x method.

All randomness descends from one integer seed through named sub-streams,
so each stage is reproducible on its own and independent of stage order.
"""
import json
import os
from dataclasses import dataclass, field

from .analysis import corruption_table, layer_variance
from .checkpoint import save_checkpoint
from .data import corrupt, generate_glyphs, load_idx, sample_target_set
from .dira import adapt_supervised, finetune
from .dira_ss import (adapt_self_supervised, build_y_model, compute_y_fisher, main_accuracy,
                      pretrain_joint)
from .ewc import AnchorParams, compute_fisher
from .network import Network, accuracy, train
from .rng import derive_seed

METHODS = ("Source", "finetune", "DIRA", "DIRA-SS")


def _quiet(msg):
    pass


def load_source_data(cfg, seed):
    if cfg.data.idx is not None:
        p = cfg.data.idx
        return (load_idx(p["train_images"], p["train_labels"], "source_train"),
                load_idx(p["test_images"], p["test_labels"], "source_test"))
    return generate_glyphs(cfg.glyph_spec(derive_seed(seed, "data")))


def train_source(cfg, train_data, seed, log=_quiet):
    size = train_data.size
    net = Network.create(cfg.dims(size * size, train_data.n_classes), derive_seed(seed, "init"))
    t = cfg.training
    return train(net, train_data, t.epochs, t.lr, t.batch_size, derive_seed(seed, "train"), log)


def source_fisher(cfg, net, train_data, seed):
    n = min(cfg.fisher.n_samples, len(train_data))
    fisher = compute_fisher(net, train_data, n, derive_seed(seed, "fisher"), cfg.fisher.label_mode)
    return fisher, AnchorParams(net.params)


def train_y_model(cfg, train_data, seed, log=_quiet):
    size = train_data.size
    y = build_y_model(cfg.dims(size * size, train_data.n_classes), cfg.split_k(),
                      derive_seed(seed, "y-init"))
    ss = cfg.dira_ss
    return pretrain_joint(y, train_data, cfg.joint_config(), ss.epochs, ss.lr,
                          derive_seed(seed, "y-train"), cfg.training.batch_size, log)


def y_fisher(cfg, y, train_data, seed):
    n = min(cfg.fisher.n_samples, len(train_data))
    fisher = compute_y_fisher(y, train_data, n, derive_seed(seed, "y-fisher"), cfg.dira_ss.beta,
                              cfg.fisher.objective)
    return fisher, AnchorParams(y.trainable_params())


def make_target(test_data, domain, n, seed, index, balanced=False):
    """Corrupted copy of the source test split and ``n`` samples drawn from it."""
    target = corrupt(test_data, domain, derive_seed(seed, "corrupt", index))
    s_t = sample_target_set(target, min(n, len(target)), derive_seed(seed, "sample", index), balanced)
    return target, s_t


@dataclass
class Prepared:
    train: object
    test: object
    net: object
    fisher: object
    anchor: object
    y: object = None
    y_fisher: object = None
    y_anchor: object = None


def prepare(cfg, seed, log=_quiet, with_y=True):
    log("preparing source data")
    tr, te = load_source_data(cfg, seed)
    log("training source model")
    net = train_source(cfg, tr, seed, log)
    fisher, anchor = source_fisher(cfg, net, tr, seed)
    prep = Prepared(tr, te, net, fisher, anchor)
    if with_y:
        log("joint pretraining of the Y model")
        prep.y = train_y_model(cfg, tr, seed, log)
        prep.y_fisher, prep.y_anchor = y_fisher(cfg, prep.y, tr, seed)
    return prep


@dataclass
class SweepResult:
    table: object
    reports: dict = field(default_factory=dict)
    dira_models: dict = field(default_factory=dict)
    variance: object = None
    clean: dict = field(default_factory=dict)


def run_sweep(cfg, seed, prepared=None, workers=None, log=_quiet):
    """Source / finetune / DIRA / DIRA-SS on every configured domain."""
    prep = prepared or prepare(cfg, seed, log)
    grid, cfas_cfg = cfg.hyper_grid(), cfg.cfas_config()
    results = {m: {} for m in METHODS}
    out = SweepResult(None)
    out.clean = {"Source": accuracy(prep.net, prep.test), "DIRA-SS": main_accuracy(prep.y, prep.test)}
    for i, domain in enumerate(cfg.domain_specs()):
        name = domain.name
        log(f"domain {name}")
        target, s_t = make_target(prep.test, domain, cfg.n_target_samples, seed, i,
                                  cfg.balanced_samples)
        common = dict(cfas_cfg=cfas_cfg, seed=derive_seed(seed, "adapt", i), target_test=target,
                      domain=name, workers=workers)
        ft = finetune(prep.net, prep.anchor, prep.fisher, s_t, prep.test, grid, **common)
        dira = adapt_supervised(prep.net, prep.anchor, prep.fisher, s_t, prep.test, grid, **common)
        ss = adapt_self_supervised(prep.y, prep.y_anchor, prep.y_fisher, s_t.images, prep.test, grid,
                                   **common)
        out.reports[name] = {"finetune": ft, "dira": dira, "dira-ss": ss}
        out.dira_models[name] = prep.net.with_params(dira.best.params)
        results["Source"][name] = 100.0 * accuracy(prep.net, target)
        results["finetune"][name] = 100.0 * ft.best.target_accuracy
        results["DIRA"][name] = 100.0 * dira.best.target_accuracy
        results["DIRA-SS"][name] = 100.0 * ss.best.target_accuracy
    out.table = corruption_table(results, [d.name for d in cfg.domain_specs()],
                                 "Top-1 accuracy (%) on corrupted test split")
    if len(out.dira_models) >= 2:
        out.variance = layer_variance(list(out.dira_models.values()))
    return out


def write_sweep(result, out_dir, cfg=None):
    """Write deterministic result files; timings go to metadata.json only."""
    os.makedirs(os.path.join(out_dir, "reports"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "models"), exist_ok=True)
    files = {"table.txt": result.table.to_text(), "table.json": result.table.to_json()}
    if result.variance is not None:
        files["variance.txt"] = result.variance.to_text()
        files["variance.json"] = result.variance.to_json()
    files["clean.json"] = json.dumps(result.clean, indent=2, sort_keys=True) + "\n"
    if cfg is not None:
        files["config.json"] = json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
    meta = {}
    for name, reps in result.reports.items():
        for mode, rep in reps.items():
            files[os.path.join("reports", f"{name}.{mode}.json")] = rep.to_json()
            files[os.path.join("reports", f"{name}.{mode}.txt")] = rep.to_text()
            meta[f"{name}.{mode}"] = rep.metadata
    for rel, text in files.items():
        with open(os.path.join(out_dir, rel), "w", encoding="utf-8") as fh:
            fh.write(text)
    for name, model in result.dira_models.items():
        save_checkpoint(model, os.path.join(out_dir, "models", f"dira.{name}.json"))
    with open(os.path.join(out_dir, "metadata.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    return sorted(files) + [os.path.join("models", f"dira.{n}.json") for n in sorted(result.dira_models)]
