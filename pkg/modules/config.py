import dataclasses
import json
import logging
from dataclasses import dataclass
from typing import Any, Dict, List

from modules.errors import ConfigError
from modules.kmer import MAX_K
from modules.seqio import MAX_QUAL_BYTE

logger = logging.getLogger(__name__)

DECODERS = ('aviterbi', 'fano')
FIRST_KMER_POLICIES = ('observed', 'truth')

# JSON / header spelling -> attribute name
_ALIASES = {'lambda': 'lam'}


@dataclass(frozen=True)
class RunConfig:
    """Every tuning knob of a run.

    Defaults are the simulated-data settings: k=13, d=4, gamma=1e-4,
    lambda=250, Fano step 0.5 and bias 2. Real data usually wants bias 10.
    """
    k: int = 13
    d: int = 4
    gamma: float = 1e-4
    lam: float = 250.0
    delta: float = 0.5
    bias: float = 2.0
    max_iters: int = 30
    tol: float = 1e-5
    threads: int = 1
    seed: int = 0
    phred_offset: int = 33
    decoder: str = 'fano'
    first_kmer: str = 'observed'
    max_visits_factor: int = 64
    prune_floor: float = 1e-8
    qmax: int = 60

    def __post_init__(self) -> None:
        if not 1 <= self.k <= MAX_K:
            raise ConfigError(f"k must be in 1..{MAX_K}, got {self.k}")
        if not 0 <= self.d <= self.k:
            raise ConfigError(f"d must be in 0..k={self.k}, got {self.d}")
        if not self.gamma > 0:
            raise ConfigError(f"gamma must be > 0, got {self.gamma}")
        if not self.lam >= 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if not self.delta > 0:
            raise ConfigError(f"delta must be > 0, got {self.delta}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if self.max_iters < 0:
            raise ConfigError(f"max_iters must be >= 0, got {self.max_iters}")
        if not self.tol >= 0:
            raise ConfigError(f"tol must be >= 0, got {self.tol}")
        if self.phred_offset not in (33, 64):
            raise ConfigError(f"phred offset must be 33 or 64, got {self.phred_offset}")
        if self.decoder not in DECODERS:
            raise ConfigError(f"decoder must be one of {DECODERS}, got {self.decoder!r}")
        if self.first_kmer not in FIRST_KMER_POLICIES:
            raise ConfigError(f"first_kmer must be one of {FIRST_KMER_POLICIES}, got {self.first_kmer!r}")
        if self.max_visits_factor < 1:
            raise ConfigError(f"max_visits_factor must be >= 1, got {self.max_visits_factor}")
        if not 0 <= self.prune_floor < 0.25:
            raise ConfigError(f"prune_floor must be in [0, 0.25), got {self.prune_floor}")
        # every quality must stay printable when written back
        if not 1 <= self.qmax <= MAX_QUAL_BYTE - self.phred_offset:
            raise ConfigError(f"qmax must be in 1..{MAX_QUAL_BYTE - self.phred_offset} at offset "
                              f"{self.phred_offset}, got {self.qmax}")

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RunConfig':
        known = set(cls.field_names())
        values: Dict[str, Any] = {}
        for key, value in data.items():
            name = config_key(key)
            if name not in known:
                raise ConfigError(f"unknown config key {key!r}")
            values[name] = value
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path: str) -> 'RunConfig':
        return cls.from_dict(read_config_file(path))

    def to_dict(self) -> Dict[str, Any]:
        out = dataclasses.asdict(self)
        out['lambda'] = out.pop('lam')
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def replace(self, **changes: Any) -> 'RunConfig':
        """Copy with overrides; None values are ignored."""
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})

    def header_lines(self, command: str = '') -> List[str]:
        """'#key=value' echo placed at the top of output files."""
        lines = [f"#command={command}"] if command else []
        lines.extend(f"#{key}={value}" for key, value in sorted(self.to_dict().items()))
        return lines


def config_key(name: str) -> str:
    """Attribute name for a JSON key or flag spelling ('lambda', 'max-iters')."""
    return _ALIASES.get(name, name.replace('-', '_'))


def read_config_file(path: str) -> Dict[str, Any]:
    """Raw key/value pairs of a JSON config file, keys normalised by config_key.

    Raises:
        ConfigError: not JSON, or not a JSON object
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    logger.debug("Loaded config from %s", path)
    return {config_key(key): value for key, value in data.items()}
