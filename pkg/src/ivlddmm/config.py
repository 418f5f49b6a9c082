"""Run configuration: flat ``key = value`` text with dotted keys.

Unset kernel widths follow the mesh resolution: k1.sigma = 2 lambda and
lddmm.sigmaV = 5 lambda. lddmm.sigma unset means 0.1 sqrt(initial sqdist).
"""
import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass

from .errors import ParseError
from .kernels import FeatureKernel, KernelMetric, SpatialKernel
from .lddmm import RegistrationConfig


@dataclass
class RunConfig:
    lam: float = 100.0
    dim: int = 2
    features: str = "genes"          # genes | rna | labels
    genes_k: int = 10
    genes_criterion: str = "std"
    weight_mode: str = "counts"
    k1_sigma: typing.Optional[float] = None
    k1_cutoff: bool = False
    k2_kind: str = "identity"
    k2_sigma: float = 1.0
    k2_log_scale: bool = False
    lddmm_sigma: typing.Optional[float] = None
    lddmm_sigmaV: typing.Optional[float] = None
    lddmm_nt: int = 10
    lddmm_max_iters: int = 200
    lddmm_tol: float = 1e-6
    lddmm_optimizer: str = "gd"
    atlas_rounds: int = 3
    atlas_mode: str = "celltype"
    atlas_bounds: str = "file"       # file | none
    atlas_literal_alpha: bool = False
    grid_n: int = 25
    seed: int = 0
    n_replicates: int = 1

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        for name in ("genes_k", "lddmm_nt", "lddmm_max_iters", "atlas_rounds", "grid_n",
                     "n_replicates"):
            if getattr(self, name) < 1:
                raise ValueError(f"{key_of(name)} must be >= 1")
        for name in ("k1_sigma", "lddmm_sigma", "lddmm_sigmaV"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{key_of(name)} must be positive")
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if self.atlas_bounds not in ("file", "none"):
            raise ValueError("atlas.bounds must be 'file' or 'none'")

    @property
    def spatial_sigma(self):
        return self.k1_sigma if self.k1_sigma is not None else 2.0 * self.lam

    @property
    def flow_sigma(self):
        return self.lddmm_sigmaV if self.lddmm_sigmaV is not None else 5.0 * self.lam

    def metric(self):
        return KernelMetric(SpatialKernel(self.spatial_sigma, self.k1_cutoff),
                            FeatureKernel(self.k2_kind, self.k2_sigma, self.k2_log_scale))

    def registration(self):
        return RegistrationConfig(sigma=self.lddmm_sigma, sigmaV=self.flow_sigma,
                                  nt=self.lddmm_nt, max_iters=self.lddmm_max_iters,
                                  tol=self.lddmm_tol, optimizer=self.lddmm_optimizer)

    def as_pairs(self):
        return {key_of(f.name): getattr(self, f.name) for f in dataclasses.fields(self)}

    def hash(self):
        blob = json.dumps(self.as_pairs(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def to_text(self):
        lines = []
        for k, v in self.as_pairs().items():
            lines.append(f"{k} = {'none' if v is None else v}")
        return "\n".join(lines) + "\n"


def key_of(field_name):
    if field_name == "lam":
        return "lambda"
    head, _, tail = field_name.partition("_")
    if head in ("genes", "k1", "k2", "lddmm", "atlas", "grid") and tail:
        return f"{head}.{tail}"
    return field_name


_FIELDS = {key_of(f.name): f for f in dataclasses.fields(RunConfig)}
_HINTS = typing.get_type_hints(RunConfig)


def _convert(key, text, lineno=None):
    hint = _HINTS[_FIELDS[key].name]
    optional = typing.get_origin(hint) is typing.Union
    base = [t for t in typing.get_args(hint) if t is not type(None)][0] if optional else hint
    text = text.strip()
    if optional and text.lower() in ("none", ""):
        return None
    try:
        if base is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if base is int:
            return int(text)
        if base is float:
            return float(text)
        return text
    except ValueError:
        raise ParseError(f"bad value {text!r} for {key}", lineno) from None


def parse_pairs(lines, start=1):
    out = {}
    for lineno, raw in enumerate(lines, start=start):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected key = value, got {raw.strip()!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ParseError(f"unknown config key {key!r}", lineno)
        out[_FIELDS[key].name] = _convert(key, value, lineno)
    return out


def load_config(path=None, overrides=()):
    """Defaults, then the file at ``path``, then ``key=value`` overrides."""
    values = {}
    if path is not None:
        with open(path) as fh:
            values.update(parse_pairs(fh.readlines()))
    for item in overrides:
        if "=" not in item:
            raise ParseError(f"override must be key=value, got {item!r}")
        values.update(parse_pairs([item]))
    return RunConfig(**values)
