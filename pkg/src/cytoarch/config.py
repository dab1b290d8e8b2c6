"""Pipeline configuration dataclasses and YAML (de)serialization.

Defaults reproduce the published segmentation / clustering / embedding /
boosting parameter set; every field can be overridden from a config file or
from CLI flags.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import yaml


@dataclass
class PopulationConfig:
    """One synthetic cell population drawn inside a region polygon."""

    count: int = 0
    mean_size: float = 6.0          # semi-major axis, px
    size_spread: float = 1.0        # std of semi-major axis, px
    orientation_mean_deg: float = 0.0
    orientation_kappa: float = 0.0  # von Mises concentration on doubled angles; 0 = uniform
    eccentricity: float = 0.7       # 0 = circle
    intensity_mean: float = 45.0
    intensity_spread: float = 8.0
    polygon: Optional[list] = None  # [[x, y], ...]; None = whole frame
    structure: Optional[str] = None  # name when this population defines an annotated structure


@dataclass
class SynthConfig:
    width: int = 1024
    height: int = 1024
    background_level: float = 230.0
    noise_std: float = 8.0
    resolution_um: float = 0.5
    seed: int = 0
    populations: list = field(default_factory=list)

    def validate(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        for pop in self.populations:
            if pop.count < 0:
                raise ValueError("population count must be >= 0")


@dataclass
class SegmentationParams:
    block_size: int = 101
    c: float = -12.0
    min_area: int = 20
    max_area: int = 5000


@dataclass
class PatchParams:
    size: int = 64


@dataclass
class KMeansParams:
    k: int = 2000
    min_cluster: int = 5
    seed: int = 0
    init_sample: int = 20000
    chunk_size: int = 10000
    n_passes: int = 3


@dataclass
class DiffusionParams:
    epsilon: float = 5000.0   # set <= 0 to derive from the median pairwise squared distance
    alpha: float = 1.0
    n_evecs: int = 100
    m: int = 10


@dataclass
class RegionalParams:
    tile_side: int = 224
    train_stride: int = 224
    map_stride: int = 112
    min_cells: int = 5


@dataclass
class BoostParams:
    max_depth: int = 3
    eta: float = 0.2
    objective: str = "binary:logistic"
    rounds: int = 100
    reg_lambda: float = 1.0
    min_child_weight: float = 1.0
    seed: int = 0

    def validate(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not (0.0 < self.eta <= 1.0):
            raise ValueError("eta must be in (0, 1]")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.objective != "binary:logistic":
            raise ValueError(f"unsupported objective: {self.objective}")


@dataclass
class ExplainParams:
    margin_high: float = 1.0
    margin_low: float = -1.0


@dataclass
class PathsConfig:
    out_dir: str = "out"
    annotations: Optional[str] = None
    train_sections: list = field(default_factory=list)
    eval_sections: list = field(default_factory=list)


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    segmentation: SegmentationParams = field(default_factory=SegmentationParams)
    patch: PatchParams = field(default_factory=PatchParams)
    kmeans: KMeansParams = field(default_factory=KMeansParams)
    dm: DiffusionParams = field(default_factory=DiffusionParams)
    regional: RegionalParams = field(default_factory=RegionalParams)
    boost: BoostParams = field(default_factory=BoostParams)
    explain: ExplainParams = field(default_factory=ExplainParams)
    n_sections: int = 1
    structures: Optional[list] = None      # restrict detector set; None = all annotated
    reference_model: Optional[str] = None  # path to the reference diffusion model


def _from_dict(cls, data):
    if data is None:
        return cls()
    kwargs = {}
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in data.items():
        if key not in names:
            raise ValueError(f"unknown config key {key!r} for {cls.__name__}")
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> PipelineConfig:
    data = dict(data or {})
    synth_data = dict(data.get("synth") or {})
    pops = [
        pop if isinstance(pop, PopulationConfig) else _from_dict(PopulationConfig, pop)
        for pop in synth_data.pop("populations", [])
    ]
    synth = _from_dict(SynthConfig, synth_data)
    synth.populations = pops
    return PipelineConfig(
        paths=_from_dict(PathsConfig, data.get("paths")),
        synth=synth,
        segmentation=_from_dict(SegmentationParams, data.get("segmentation")),
        patch=_from_dict(PatchParams, data.get("patch")),
        kmeans=_from_dict(KMeansParams, data.get("kmeans")),
        dm=_from_dict(DiffusionParams, data.get("dm")),
        regional=_from_dict(RegionalParams, data.get("regional")),
        boost=_from_dict(BoostParams, data.get("boost")),
        explain=_from_dict(ExplainParams, data.get("explain")),
        n_sections=int(data.get("n_sections", 1)),
        structures=data.get("structures"),
        reference_model=data.get("reference_model"),
    )


def load_config(path) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    return config_from_dict(data or {})


def config_to_dict(cfg: PipelineConfig) -> dict:
    return dataclasses.asdict(cfg)


def save_config(cfg: PipelineConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=False)
