"""key=value configuration files for the EM, MAP and total-variability settings.

Example::

    # comments and blank lines are ignored
    em.n_components = 32
    map.relevance = 8
    tv.rank = 10
    score.normalize = zscore
"""

from dataclasses import dataclass, field, fields, replace

from .errors import ValidationError
from .gmm_ubm import EmConfig, MapConfig
from .pipeline.scoring import NORMALIZERS, TvConfig


@dataclass(frozen=True)
class PipelineConfig:
    em: EmConfig = field(default_factory=EmConfig)
    map: MapConfig = field(default_factory=MapConfig)
    tv: TvConfig = field(default_factory=TvConfig)
    normalize: str = "warp"

    def with_seed(self, seed):
        return replace(self, em=replace(self.em, seed=seed), tv=replace(self.tv, seed=seed))


def _coerce(text, kind, key):
    if kind is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValidationError(f"{key}: expected a boolean, got {text!r}")
    try:
        return kind(text)
    except ValueError:
        raise ValidationError(f"{key}: expected {kind.__name__}, got {text!r}") from None


def parse_config(lines, source="<config>"):
    sections = {"em": {}, "map": {}, "tv": {}}
    normalize = "warp"
    types = {"em": EmConfig, "map": MapConfig, "tv": TvConfig}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not value:
            raise ValidationError(f"{source}:{lineno}: expected key = value")
        if key == "score.normalize":
            if value not in NORMALIZERS:
                raise ValidationError(f"{source}:{lineno}: normalize must be one of {sorted(NORMALIZERS)}")
            normalize = value
            continue
        section, _, name = key.partition(".")
        if section not in types:
            raise ValidationError(f"{source}:{lineno}: unknown key {key!r}")
        known = {f.name: f.type for f in fields(types[section])}
        if name not in known:
            raise ValidationError(f"{source}:{lineno}: unknown key {key!r}")
        kind = {"int": int, "float": float, "bool": bool}.get(getattr(known[name], "__name__", known[name]))
        sections[section][name] = _coerce(value, kind, key)
    return PipelineConfig(EmConfig(**sections["em"]), MapConfig(**sections["map"]),
                          TvConfig(**sections["tv"]), normalize)


def load_config(path):
    try:
        with open(path) as fh:
            return parse_config(fh.read().splitlines(), str(path))
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from None
