"""Experiment configuration files (TOML).

One file describes one experiment: the scene, the transmit plan, the
demodulator, the beacon motion, the tracking mode and the seeds.  Every
field is checked at load time and errors name the offending key, e.g.
``schedule.hop_step: must be >= 0``.
"""
import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import CFCWError, InvalidConfiguration
from .words import POSES

MOTION_KINDS = ("static", "radial", "constant-speed", "star", "circle", "word", "file")
MODES = ("ranging", "track")


@dataclass
class SceneConfig:
    speed_of_sound: float = 343.0
    mic_snr_db: float = None
    spacing: float = 0.036
    secondary_distance: float = 0.15
    mics: list = None  # subset of the 7 mic indices
    reflectors: list = field(default_factory=list)  # tables: wall distance/coefficient/axis
    ambient: list = field(default_factory=list)  # tables: kind voice|white, level_db
    linear_gain: float = 1.0
    quadratic_gain: float = 0.1
    absorption_db_per_m_khz: float = 0.0
    sample_rate: float = 192e3


@dataclass
class ScheduleConfig:
    receive_frequency: float = 7000.0
    base_primary: float = 40000.0
    hop_step: float = 2000.0  # 0 -> one fixed tone pair
    hop_period: float = 3e-3
    glide: float = 0.0
    min_primary: float = 25000.0
    secondary_lag: object = "auto"  # seconds, or "auto" from the start range
    secondary_gain: float = 0.2


@dataclass
class DemodSection:
    win_los: float = 1e-3
    guard_samples: int = 2
    low_snr_db: float = 20.0
    velocity_aided: bool = True
    detrend: bool = False


@dataclass
class MotionConfig:
    kind: str = "static"
    start: list = None  # radial / static / constant-speed start point
    distance: float = 0.005
    duration: float = 0.5
    hold: float = 0.05
    speed: float = 0.5
    ramp: float = 0.05
    center: list = None  # star / circle
    size: float = 0.08
    lead_in: float = 0.15
    word: str = "fit"
    pose: str = "flat-top"
    surface: str = "plane"
    lift_height: float = 0.02
    path: str = None  # csv with t,x,y,z for kind="file"
    jitter: float = 0.0  # m, seeded uniform offset of the start / centre per axis


@dataclass
class TrackingConfig:
    mode: str = "track"
    lead_in: float = 0.1
    correct_start_bias: bool = True
    population: int = 200
    generations: int = 500


@dataclass
class HandwritingConfig:
    enabled: bool = None  # default: on for word motion
    smooth_window: int = 5
    k_neighbors: int = 8


@dataclass
class CoexistenceConfig:
    enabled: bool = True  # ambient sources from [scene] double as the voice reference


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    out: str = None
    scene: SceneConfig = field(default_factory=SceneConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    demod: DemodSection = field(default_factory=DemodSection)
    motion: MotionConfig = field(default_factory=MotionConfig)
    tracking: TrackingConfig = field(default_factory=TrackingConfig)
    handwriting: HandwritingConfig = field(default_factory=HandwritingConfig)
    coexistence: CoexistenceConfig = field(default_factory=CoexistenceConfig)
    source: str = None  # file the config was read from

    @property
    def hopping(self):
        return self.schedule.hop_step > 0

    def with_seed(self, seed):
        return dataclasses.replace(self, seed=int(seed))

    def to_dict(self):
        return dataclasses.asdict(self)


_SECTIONS = {
    "scene": SceneConfig, "schedule": ScheduleConfig, "demod": DemodSection,
    "motion": MotionConfig, "tracking": TrackingConfig, "handwriting": HandwritingConfig,
    "coexistence": CoexistenceConfig,
}


def _bad(key, msg):
    return InvalidConfiguration(f"{key}: {msg}")


def _typed(key, value, default):
    """Coerce ``value`` to the type of ``default`` where that is unambiguous."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise _bad(key, f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise _bad(key, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise _bad(key, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise _bad(key, f"expected a string, got {value!r}")
    return value


def _section(name, cls, table):
    if not isinstance(table, dict):
        raise _bad(name, "expected a table")
    kw = {}
    known = {f.name: f for f in dataclasses.fields(cls)}
    for k, v in table.items():
        if k not in known:
            raise _bad(f"{name}.{k}", f"unknown key (known: {', '.join(sorted(known))})")
        f = known[k]
        default = f.default if f.default is not dataclasses.MISSING else None
        kw[k] = _typed(f"{name}.{k}", v, default)
    return cls(**kw)


def _point(key, v, required=False):
    if v is None:
        if required:
            raise _bad(key, "required")
        return None
    if not (isinstance(v, list) and len(v) == 3 and all(isinstance(a, (int, float)) for a in v)):
        raise _bad(key, "expected [x, y, z] in metres")
    return [float(a) for a in v]


def validate(cfg, base_dir=None):
    s, sc, d, m, t = cfg.scene, cfg.schedule, cfg.demod, cfg.motion, cfg.tracking
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or cfg.seed < 0:
        raise _bad("seed", "must be a non-negative integer")
    if s.speed_of_sound <= 0:
        raise _bad("scene.speed_of_sound", "must be > 0")
    if s.spacing <= 0 or s.secondary_distance <= 0:
        raise _bad("scene.spacing", "spacing and secondary_distance must be > 0")
    if s.mics is not None:
        if not (isinstance(s.mics, list) and s.mics and all(isinstance(i, int) and 0 <= i < 7
                                                            for i in s.mics)):
            raise _bad("scene.mics", "expected a list of mic indices in 0..6")
        if len(set(s.mics)) != len(s.mics):
            raise _bad("scene.mics", "duplicate mic index")
    for k, r in enumerate(s.reflectors):
        key = f"scene.reflectors[{k}]"
        if not isinstance(r, dict):
            raise _bad(key, "expected a table")
        if not 0 <= r.get("coefficient", 0.8) <= 1:
            raise _bad(f"{key}.coefficient", "must be in [0, 1]")
        if r.get("distance", 0.5) <= 0:
            raise _bad(f"{key}.distance", "must be > 0")
        _point(f"{key}.axis", r.get("axis", [1.0, 0.0, 0.0]))
    for k, a in enumerate(s.ambient):
        key = f"scene.ambient[{k}]"
        if not isinstance(a, dict) or a.get("kind", "voice") not in ("voice", "white"):
            raise _bad(f"{key}.kind", "must be 'voice' or 'white'")
        if not isinstance(a.get("level_db", 60.0), (int, float)):
            raise _bad(f"{key}.level_db", "expected a number")
    if not 0 < s.quadratic_gain < s.linear_gain:
        raise _bad("scene.quadratic_gain", "need 0 < quadratic_gain < linear_gain")
    if s.sample_rate % 16000:
        raise _bad("scene.sample_rate", "must be a multiple of 16000 Hz")
    if sc.hop_step < 0:
        raise _bad("schedule.hop_step", "must be >= 0")
    if sc.hop_period <= 0:
        raise _bad("schedule.hop_period", "must be > 0")
    if not 0 <= sc.glide < sc.hop_period / 2:
        raise _bad("schedule.glide", "must be in [0, hop_period / 2)")
    if sc.base_primary < sc.min_primary:
        raise _bad("schedule.base_primary", f"below min_primary {sc.min_primary} Hz")
    if sc.base_primary + sc.hop_step > s.sample_rate / 2:
        raise _bad("schedule.base_primary", "top primary exceeds the simulation Nyquist")
    if not (sc.secondary_lag == "auto" or isinstance(sc.secondary_lag, (int, float))):
        raise _bad("schedule.secondary_lag", "expected seconds or \"auto\"")
    if d.win_los < 0.5e-3:
        raise _bad("demod.win_los", "must be >= 0.5 ms")
    if d.guard_samples < 0:
        raise _bad("demod.guard_samples", "must be >= 0")
    if m.kind not in MOTION_KINDS:
        raise _bad("motion.kind", f"must be one of {', '.join(MOTION_KINDS)}")
    m.start = _point("motion.start", m.start, m.kind in ("static", "radial", "constant-speed"))
    m.center = _point("motion.center", m.center, m.kind in ("star", "circle"))
    if m.duration <= 0:
        raise _bad("motion.duration", "must be > 0")
    if m.jitter < 0:
        raise _bad("motion.jitter", "must be >= 0")
    if m.speed <= 0:
        raise _bad("motion.speed", "must be > 0")
    if m.kind == "word" and m.pose not in POSES:
        raise _bad("motion.pose", f"must be one of {', '.join(sorted(POSES))}")
    if m.kind == "word" and not 0.03 <= m.size <= 0.20:
        raise _bad("motion.size", "word size must be in [0.03, 0.20] m")
    if m.kind == "file":
        if not m.path:
            raise _bad("motion.path", "required for kind = \"file\"")
        p = Path(m.path)
        if not p.is_absolute() and base_dir is not None:
            p = Path(base_dir) / p
        if not p.exists():
            raise _bad("motion.path", f"file not found: {p}")
        m.path = str(p)
    if t.mode not in MODES:
        raise _bad("tracking.mode", f"must be one of {', '.join(MODES)}")
    if t.lead_in <= 0:
        raise _bad("tracking.lead_in", "must be > 0")
    if t.mode == "track" and s.mics is not None and len(s.mics) < 4:
        raise _bad("scene.mics", "3D tracking needs at least 4 microphones")
    if t.population < 10 or t.generations < 1:
        raise _bad("tracking.population", "population >= 10 and generations >= 1 required")
    return cfg


def from_dict(data, base_dir=None, source=None):
    if not isinstance(data, dict):
        raise InvalidConfiguration("config root must be a table")
    kw = {}
    for k, v in data.items():
        if k in _SECTIONS:
            kw[k] = _section(k, _SECTIONS[k], v)
        elif k in ("name", "out"):
            if not isinstance(v, str):
                raise _bad(k, "expected a string")
            kw[k] = v
        elif k == "seed":
            kw[k] = v
        else:
            raise _bad(k, "unknown key")
    cfg = ExperimentConfig(**kw, source=source)
    return validate(cfg, base_dir)


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise InvalidConfiguration(f"config file not found: {path}")
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as e:
        raise InvalidConfiguration(f"{path}: {e}") from None
    try:
        return from_dict(data, base_dir=path.parent, source=str(path))
    except CFCWError:
        raise
    except TypeError as e:  # pragma: no cover
        raise InvalidConfiguration(str(e)) from None


def bundled_configs():
    """Paths of the experiment files shipped with the package."""
    here = Path(__file__).parent / "configs"
    return sorted(here.glob("*.toml"))


def bundled(name):
    p = Path(__file__).parent / "configs" / f"{name}.toml"
    if not p.exists():
        raise InvalidConfiguration(f"no bundled config named {name!r}")
    return p
