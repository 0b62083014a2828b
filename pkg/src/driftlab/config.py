"""Experiment configuration: a single JSON document where every field has a default."""
import json
import math
from dataclasses import asdict, dataclass, field, fields

from .data import CORRUPTIONS, DomainSpec, GlyphSpec
from .dira import CFASConfig, HyperGrid
from .dira_ss import JointLossConfig
from .errors import UsageError

DEFAULT_DOMAINS = tuple((c, 5) for c in CORRUPTIONS if c != "none")


@dataclass
class DataConfig:
    image_size: int = 16
    samples_per_class: int = 250
    stroke_width: float = 1.2
    idx: dict = None  # {"train_images", "train_labels", "test_images", "test_labels"}


@dataclass
class ModelConfig:
    hidden: list = field(default_factory=lambda: [256, 128, 64])


@dataclass
class TrainingConfig:
    epochs: int = 30
    lr: float = 0.05
    batch_size: int = 32


@dataclass
class FisherConfig:
    n_samples: int = 1000
    label_mode: str = "true"
    objective: str = "joint"


@dataclass
class GridConfig:
    lambdas: list = field(default_factory=lambda: [0.0, 1.0, 10.0, 1e2, 1e3, 1e4])
    etas: list = field(default_factory=lambda: [1e-3, 3e-3, 1e-2, 3e-2, 1e-1])
    steps: int = 100
    batch_size: int = 32
    scheme: str = "implicit"


@dataclass
class CfasConfigSection:
    zeta: float = 10.0


@dataclass
class DiraSSConfig:
    k: int = None  # None: ceil(K / 2)
    beta: float = 1.0
    epochs: int = 30
    lr: float = 0.05


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    fisher: FisherConfig = field(default_factory=FisherConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    cfas: CfasConfigSection = field(default_factory=CfasConfigSection)
    dira_ss: DiraSSConfig = field(default_factory=DiraSSConfig)
    domains: list = field(default_factory=lambda: [list(d) for d in DEFAULT_DOMAINS])
    n_target_samples: int = 50
    balanced_samples: bool = False

    # typed views, each validated by the owning module's constructor
    def glyph_spec(self, seed):
        return GlyphSpec(image_size=self.data.image_size, samples_per_class=self.data.samples_per_class,
                         stroke_width=self.data.stroke_width, seed=seed)

    def hyper_grid(self):
        g = self.grid
        return HyperGrid(tuple(g.lambdas), tuple(g.etas), g.steps, g.batch_size, g.scheme)

    def cfas_config(self):
        return CFASConfig(self.cfas.zeta)

    def joint_config(self):
        return JointLossConfig(self.dira_ss.beta)

    def domain_specs(self):
        return [DomainSpec(c, int(s)) for c, s in self.domains]

    def dims(self, in_dim, n_classes):
        return [in_dim] + [int(h) for h in self.model.hidden] + [n_classes]

    def split_k(self):
        depth = len(self.model.hidden) + 1
        return self.dira_ss.k if self.dira_ss.k is not None else math.ceil(depth / 2)

    def validate(self):
        """Check every field before any work starts; raises UsageError."""
        self.hyper_grid()
        self.cfas_config()
        self.joint_config()
        specs = self.domain_specs()
        if not specs:
            raise UsageError("config must list at least one domain")
        if self.data.idx is None:
            self.glyph_spec(0)
            if self.data.samples_per_class % 5 or self.data.samples_per_class <= 0:
                raise UsageError("data.samples_per_class must be a positive multiple of 5")
        else:
            missing = {"train_images", "train_labels", "test_images", "test_labels"} - set(self.data.idx)
            if missing:
                raise UsageError(f"data.idx is missing {sorted(missing)}")
        if not self.model.hidden or any(int(h) <= 0 for h in self.model.hidden):
            raise UsageError("model.hidden must list positive widths")
        t = self.training
        if t.epochs <= 0 or t.lr <= 0 or t.batch_size <= 0:
            raise UsageError("training epochs, lr and batch_size must be positive")
        if self.fisher.n_samples <= 0:
            raise UsageError("fisher.n_samples must be positive")
        if self.fisher.label_mode not in ("true", "sampled"):
            raise UsageError("fisher.label_mode must be 'true' or 'sampled'")
        if self.fisher.objective not in ("joint", "main"):
            raise UsageError("fisher.objective must be 'joint' or 'main'")
        depth = len(self.model.hidden) + 1
        if not 1 <= self.split_k() < depth:
            raise UsageError(f"dira_ss.k must satisfy 1 <= k < {depth}")
        if self.dira_ss.epochs <= 0 or self.dira_ss.lr <= 0:
            raise UsageError("dira_ss epochs and lr must be positive")
        if not isinstance(self.balanced_samples, bool):
            raise UsageError("balanced_samples must be true or false")
        if self.n_target_samples <= 0:
            raise UsageError("n_target_samples must be positive")
        return self

    def to_dict(self):
        return asdict(self)


def _build(cls, raw, where):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise UsageError(f"config section {where!r} must be an object")
    known = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise UsageError(f"unknown config keys in {where!r}: {sorted(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        sub = SECTIONS.get((cls, name))
        kwargs[name] = _build(sub, value, f"{where}.{name}") if sub else value
    return cls(**kwargs)


SECTIONS = {
    (ExperimentConfig, "data"): DataConfig,
    (ExperimentConfig, "model"): ModelConfig,
    (ExperimentConfig, "training"): TrainingConfig,
    (ExperimentConfig, "fisher"): FisherConfig,
    (ExperimentConfig, "grid"): GridConfig,
    (ExperimentConfig, "cfas"): CfasConfigSection,
    (ExperimentConfig, "dira_ss"): DiraSSConfig,
}


def config_from_dict(raw):
    try:
        return _build(ExperimentConfig, raw or {}, "config").validate()
    except TypeError as exc:
        raise UsageError(f"invalid config: {exc}") from exc


def load_config(path=None):
    if path is None:
        return config_from_dict({})
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: config is not valid JSON ({exc.msg})") from exc
    return config_from_dict(raw)
