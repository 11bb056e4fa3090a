"""Synthetic handwriting: labelled beacon paths for words on a writing surface.

Letters are drawn as chains of moves in glyph units (x-height 0.5, ascender
1.0).  Each move is a smooth spline through a few control points traversed
with a minimum-jerk time law, so the pen slows to a stop at every move
boundary.  The connected body of the word is written first; dots and
crossbars follow as separate strokes reached through off-surface lift arcs.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import make_interp_spline

from .errors import InvalidArgument
from .sim import MotionPath

STROKE, LIFT, STOP = 0, 1, 2
LABEL_NAMES = {STROKE: "stroke", LIFT: "lift", STOP: "stop"}

# letter -> (width, body moves, extra strokes); every move shares its first
# point with the previous move's last point
LETTERS = {
    "a": (0.38, [[(0, 0), (0.3, 0.45)],
                 [(0.3, 0.45), (0.15, 0.5), (0.03, 0.3), (0.08, 0.03), (0.25, 0.1), (0.3, 0.45)],
                 [(0.3, 0.45), (0.31, 0.05), (0.38, 0.0)]], []),
    "c": (0.32, [[(0, 0), (0.28, 0.45), (0.15, 0.5), (0.04, 0.3), (0.1, 0.03), (0.32, 0.05)]], []),
    "d": (0.4, [[(0, 0), (0.3, 0.45)],
                [(0.3, 0.45), (0.15, 0.5), (0.03, 0.3), (0.08, 0.03), (0.25, 0.1), (0.3, 0.45)],
                [(0.3, 0.45), (0.32, 1.0)],
                [(0.32, 1.0), (0.31, 0.05), (0.4, 0.0)]], []),
    "e": (0.32, [[(0, 0), (0.1, 0.2), (0.3, 0.3), (0.25, 0.5), (0.1, 0.45), (0.05, 0.2),
                  (0.12, 0.02), (0.32, 0.05)]], []),
    "f": (0.3, [[(0, 0), (0.2, 0.6), (0.32, 1.0)],
                [(0.32, 1.0), (0.2, 0.9), (0.16, 0.5), (0.15, 0.0)],
                [(0.15, 0.0), (0.3, 0.0)]], []),
    "g": (0.36, [[(0, 0), (0.3, 0.45)],
                 [(0.3, 0.45), (0.15, 0.5), (0.03, 0.3), (0.08, 0.05), (0.25, 0.1), (0.3, 0.45)],
                 [(0.3, 0.45), (0.3, -0.35), (0.18, -0.45), (0.08, -0.3), (0.36, 0.0)]], []),
    "h": (0.38, [[(0, 0), (0.08, 1.0)],
                 [(0.08, 1.0), (0.06, 0.0)],
                 [(0.06, 0.0), (0.1, 0.35), (0.2, 0.5), (0.3, 0.4), (0.3, 0.0)],
                 [(0.3, 0.0), (0.38, 0.0)]], []),
    "i": (0.22, [[(0, 0), (0.12, 0.5)],
                 [(0.12, 0.5), (0.13, 0.05), (0.22, 0.0)]],
          [[(0.12, 0.72), (0.14, 0.75)]]),
    "k": (0.32, [[(0, 0), (0.08, 1.0)],
                 [(0.08, 1.0), (0.06, 0.0)],
                 [(0.06, 0.0), (0.08, 0.25), (0.28, 0.5)],
                 [(0.28, 0.5), (0.1, 0.25)],
                 [(0.1, 0.25), (0.32, 0.0)]], []),
    "l": (0.22, [[(0, 0), (0.15, 0.6), (0.16, 1.0)],
                 [(0.16, 1.0), (0.1, 0.6), (0.1, 0.05), (0.22, 0.0)]], []),
    "m": (0.48, [[(0, 0), (0.05, 0.5)],
                 [(0.05, 0.5), (0.05, 0.0)],
                 [(0.05, 0.0), (0.1, 0.4), (0.17, 0.5), (0.22, 0.4), (0.23, 0.0)],
                 [(0.23, 0.0), (0.28, 0.4), (0.35, 0.5), (0.4, 0.4), (0.41, 0.0)],
                 [(0.41, 0.0), (0.48, 0.0)]], []),
    "n": (0.36, [[(0, 0), (0.05, 0.5)],
                 [(0.05, 0.5), (0.05, 0.0)],
                 [(0.05, 0.0), (0.1, 0.4), (0.2, 0.5), (0.28, 0.4), (0.29, 0.0)],
                 [(0.29, 0.0), (0.36, 0.0)]], []),
    "o": (0.36, [[(0, 0), (0.2, 0.5)],
                 [(0.2, 0.5), (0.05, 0.38), (0.08, 0.04), (0.24, 0.03), (0.3, 0.3), (0.2, 0.5)],
                 [(0.2, 0.5), (0.36, 0.4)]], []),
    "r": (0.3, [[(0, 0), (0.08, 0.5)],
                [(0.08, 0.5), (0.07, 0.0)],
                [(0.07, 0.0), (0.1, 0.35), (0.2, 0.5), (0.3, 0.42)]], []),
    "s": (0.32, [[(0, 0), (0.25, 0.5)],
                 [(0.25, 0.5), (0.1, 0.42), (0.12, 0.3), (0.27, 0.18), (0.2, 0.02), (0.05, 0.05)],
                 [(0.05, 0.05), (0.32, 0.0)]], []),
    "t": (0.28, [[(0, 0), (0.15, 0.85)],
                 [(0.15, 0.85), (0.15, 0.1), (0.28, 0.0)]],
          [[(0.02, 0.55), (0.3, 0.55)]]),
    "u": (0.36, [[(0, 0), (0.05, 0.5)],
                 [(0.05, 0.5), (0.05, 0.1), (0.15, 0.0), (0.27, 0.15), (0.28, 0.5)],
                 [(0.28, 0.5), (0.28, 0.05), (0.36, 0.0)]], []),
    "w": (0.4, [[(0, 0), (0.05, 0.5)],
                [(0.05, 0.5), (0.1, 0.05), (0.15, 0.0), (0.2, 0.3)],
                [(0.2, 0.3), (0.25, 0.05), (0.3, 0.0), (0.4, 0.5)]], []),
    "x": (0.32, [[(0, 0), (0.08, 0.45)],
                 [(0.08, 0.45), (0.3, 0.0)]],
          [[(0.3, 0.5), (0.08, 0.0)]]),
    "y": (0.34, [[(0, 0), (0.05, 0.5)],
                 [(0.05, 0.5), (0.05, 0.15), (0.15, 0.02), (0.25, 0.2), (0.27, 0.5)],
                 [(0.27, 0.5), (0.27, -0.35), (0.17, -0.45), (0.1, -0.3), (0.34, 0.0)]], []),
}

TEMPLATES = ("fit", "home", "star", "alexa", "okay", "sign", "word")

CORPUS = (
    "fit", "sit", "kit", "lit", "hit", "wit", "tin", "tint", "this", "thin",
    "that", "than", "tail", "time", "tide", "tilt", "stir", "star", "start", "stair",
    "smile", "mist", "exit", "extra", "next", "text", "taxi", "axis", "mix", "fix",
    "six", "wax", "list", "gift", "lift", "shift", "shirt", "write", "white", "kite",
    "tire", "rice", "dice", "nice", "night", "light", "right", "sight", "edit", "unit",
)

POSES = {
    # origin, tilt of the writing plane about its x axis (deg)
    "flat-top": ((-0.05, -0.02, 0.25), 0.0),
    "flat-beside": ((0.15, -0.02, 0.06), 0.0),
    "slant-beside": ((0.15, -0.05, 0.12), 45.0),
    "vertical-top": ((-0.05, 0.12, 0.18), 90.0),
}


@dataclass(frozen=True)
class SyntheticWordSpec:
    word: str = "fit"
    size: float = 0.10  # width of the word, metres
    pose: str = "flat-top"
    speed: float = 0.25  # peak pen speed, m/s
    lift_height: float = 0.02
    dwell: float = 0.04  # pause at every stop, s
    lead_in: float = 0.15  # static time before writing (start fix), s
    lead_out: float = 0.05
    surface: str = "plane"  # or "cylinder"
    radius: float = 0.10  # cylinder radius, metres
    tilt: float = None  # overrides the pose tilt (degrees)
    origin: tuple = None  # overrides the pose origin
    spurious_stops: int = 0  # pauses at the apex of the first lifts
    max_speed: float = 1.0

    def __post_init__(self):
        if not 0.03 <= self.size <= 0.20:
            raise InvalidArgument(f"size {self.size} m outside [0.03, 0.20]")
        if self.pose not in POSES:
            raise InvalidArgument(f"unknown pose {self.pose!r}; choose from {sorted(POSES)}")
        bad = [c for c in self.word if c not in LETTERS]
        if not self.word or bad:
            raise InvalidArgument(f"word {self.word!r} uses unsupported letters {bad}")
        if not 0 < self.speed <= self.max_speed:
            raise InvalidArgument(f"speed must be in (0, {self.max_speed}] m/s")
        if self.surface not in ("plane", "cylinder"):
            raise InvalidArgument("surface must be 'plane' or 'cylinder'")
        if self.lift_height < 0 or self.dwell < 0 or self.lead_in < 0 or self.radius <= 0:
            raise InvalidArgument("lift_height, dwell, lead_in must be >= 0 and radius > 0")


@dataclass
class SyntheticWord:
    spec: SyntheticWordSpec
    timestamps: np.ndarray
    positions: np.ndarray  # (n, 3)
    labels: np.ndarray  # STROKE / LIFT / STOP per sample
    ink: np.ndarray  # (n, 2) surface coordinates (metres), ground-truth flat ink
    stroke_ids: np.ndarray  # stroke index per sample, -1 on lifts
    stop_times: np.ndarray  # centre of every programmed stop
    stop_on_surface: np.ndarray  # False for spurious mid-lift stops
    frame: dict = field(default_factory=dict)

    @property
    def path(self):
        return MotionPath(self.timestamps, self.positions)

    @property
    def n_lifts(self):
        lab = self.labels == LIFT
        return int(np.sum(lab[1:] & ~lab[:-1]) + lab[0])

    def resample(self, timestamps):
        """Ground truth at other times (nearest-sample labels)."""
        t = np.asarray(timestamps, dtype=float)
        idx = np.clip(np.searchsorted(self.timestamps, t), 0, len(self.timestamps) - 1)
        pos = self.path.position_at(t)
        ink = np.stack([np.interp(t, self.timestamps, self.ink[:, k]) for k in range(2)], axis=1)
        return pos, self.labels[idx], ink, self.stroke_ids[idx]


def _layout(word):
    """Glyph-unit body moves and extra strokes for a whole word."""
    body, extras = [], []
    x0 = 0.0
    prev_exit = None
    for ch in word:
        w, moves, ext = LETTERS[ch]
        for k, mv in enumerate(moves):
            pts = [(x0 + x, y) for x, y in mv]
            if k == 0 and prev_exit is not None:
                pts[0] = prev_exit
            body.append(pts)
        prev_exit = body[-1][-1]
        for e in ext:
            extras.append([(x0 + x, y) for x, y in e])
        x0 += w
    return body, extras


def _curve(ctrl, step):
    """Dense arclength-uniform samples of a smooth curve through ``ctrl``."""
    c = np.asarray(ctrl, dtype=float)
    chord = np.r_[0, np.cumsum(np.linalg.norm(np.diff(c, axis=0), axis=1))]
    if chord[-1] <= 0:
        return c[:1].repeat(2, axis=0)
    k = min(3, len(c) - 1)
    spl = make_interp_spline(chord, c, k=k)
    fine = spl(np.linspace(0, chord[-1], max(200, int(chord[-1] / step) * 4)))
    arc = np.r_[0, np.cumsum(np.linalg.norm(np.diff(fine, axis=0), axis=1))]
    return fine, arc


def _min_jerk(n_t):
    tau = np.linspace(0, 1, n_t)
    return 10 * tau ** 3 - 15 * tau ** 4 + 6 * tau ** 5


class _Surface:
    def __init__(self, spec):
        origin, tilt = POSES[spec.pose]
        if spec.origin is not None:
            origin = spec.origin
        if spec.tilt is not None:
            tilt = spec.tilt
        t = np.deg2rad(tilt)
        self.origin = np.asarray(origin, dtype=float)
        self.u = np.array([1.0, 0.0, 0.0])
        self.v = np.array([0.0, np.cos(t), np.sin(t)])
        self.n = np.cross(self.u, self.v)  # towards the writer
        self.kind = spec.surface
        self.radius = spec.radius

    def point(self, uv, h=0.0):
        uv = np.atleast_2d(uv)
        u, v = uv[:, 0], uv[:, 1]
        h = np.broadcast_to(np.asarray(h, dtype=float), u.shape)
        if self.kind == "plane":
            return (self.origin + u[:, None] * self.u + v[:, None] * self.v
                    + h[:, None] * self.n)
        # bend the u direction onto a circle of radius R curving away from the writer
        a = u / self.radius
        r = self.radius + h
        return (self.origin + (r * np.sin(a))[:, None] * self.u + v[:, None] * self.v
                + (r * np.cos(a) - self.radius)[:, None] * self.n)

    def as_dict(self):
        return {"origin": self.origin, "u": self.u, "v": self.v, "n": self.n,
                "kind": self.kind, "radius": self.radius}


def generate_word(spec: SyntheticWordSpec, frame_rate=1000.0):
    """Labelled path of the beacon writing ``spec.word``.

    Returns a :class:`SyntheticWord` sampled at ``frame_rate``.  The pen
    starts resting at the first point for ``lead_in`` seconds.
    """
    body, extras = _layout(spec.word)
    # extent of the rendered curves (splines can overshoot their control points)
    all_pts = np.vstack([_curve(mv, 1e-3)[0] for mv in body + extras])
    glyph_w = all_pts[:, 0].max() - all_pts[:, 0].min()
    scale = spec.size / glyph_w
    x_shift = all_pts[:, 0].min()
    # centre the word on the surface origin
    height_mid = 0.5 * (all_pts[:, 1].max() + all_pts[:, 1].min())

    def to_m(pts):
        a = np.asarray(pts, dtype=float)
        return np.stack([(a[:, 0] - x_shift) * scale - spec.size / 2,
                         (a[:, 1] - height_mid) * scale], axis=1)

    surf = _Surface(spec)
    dt = 1.0 / frame_rate
    step = spec.speed * dt

    moves = []  # (kind, uv (m,2), height (m,), stroke id)
    stroke = 0
    for mv in body:
        uv, _ = _curve(to_m(mv), step)
        moves.append(("stroke", uv, np.zeros(len(uv)), stroke))
    n_spur = spec.spurious_stops
    for e in extras:
        start = moves[-1][1][-1]
        end = to_m(e)[0]
        line = np.linspace(0, 1, 400)
        uv = start + line[:, None] * (end - start)
        h = spec.lift_height * np.sin(np.pi * line)
        if n_spur > 0:
            half = len(line) // 2
            moves.append(("lift", uv[:half + 1], h[:half + 1], -1))
            moves.append(("spurious", None, None, -1))
            moves.append(("lift", uv[half:], h[half:], -1))
            n_spur -= 1
        else:
            moves.append(("lift", uv, h, -1))
        stroke += 1
        uv, _ = _curve(to_m(e), step)
        moves.append(("stroke", uv, np.zeros(len(uv)), stroke))

    ts, pos, lab, ink, sid = [], [], [], [], []
    stop_t, stop_on = [], []
    t = 0.0

    def emit(p3, uv2, label, s):
        nonlocal t
        for k in range(len(p3)):
            ts.append(t)
            pos.append(p3[k])
            ink.append(uv2[k])
            lab.append(label)
            sid.append(s)
            t += dt

    def dwell(p3, uv2, seconds, s, on_surface=True):
        n = max(1, int(round(seconds / dt)))
        stop_t.append(t + 0.5 * (n - 1) * dt)
        stop_on.append(on_surface)
        emit(np.repeat(p3[None], n, 0), np.repeat(uv2[None], n, 0), STOP, s)

    first_uv = moves[0][1][0]
    first_p = surf.point(first_uv)[0]
    n_lead = max(1, int(round(spec.lead_in / dt)))
    emit(np.repeat(first_p[None], n_lead, 0), np.repeat(first_uv[None], n_lead, 0), STOP, 0)
    last_p, last_uv, last_s = first_p, first_uv, 0
    for kind, uv, h, s in moves:
        if kind == "spurious":
            dwell(last_p, last_uv, spec.dwell, -1, on_surface=False)
            continue
        p3 = surf.point(uv, h)
        seg = np.linalg.norm(np.diff(p3, axis=0), axis=1)
        arc = np.r_[0, np.cumsum(seg)]
        if arc[-1] <= 0:
            continue
        # minimum-jerk peak speed is 1.875 * L / T
        dur = 1.875 * arc[-1] / spec.speed
        n_t = max(3, int(np.ceil(dur / dt)) + 1)
        sgrid = _min_jerk(n_t)[1:] * arc[-1]
        pts = np.stack([np.interp(sgrid, arc, p3[:, k]) for k in range(3)], axis=1)
        uvs = np.stack([np.interp(sgrid, arc, uv[:, k]) for k in range(2)], axis=1)
        label = LIFT if kind == "lift" else STROKE
        emit(pts, uvs, label, s)
        last_p, last_uv, last_s = pts[-1], uvs[-1], s
        if kind == "stroke" or (kind == "lift" and h[-1] < 1e-12):
            dwell(last_p, last_uv, spec.dwell, s)
    n_out = max(1, int(round(spec.lead_out / dt)))
    emit(np.repeat(last_p[None], n_out, 0), np.repeat(last_uv[None], n_out, 0), STOP, last_s)

    return SyntheticWord(spec, np.array(ts), np.array(pos), np.array(lab, dtype=int),
                         np.array(ink), np.array(sid, dtype=int), np.array(stop_t),
                         np.array(stop_on, dtype=bool), surf.as_dict())


def tracking_noise(n, seed=None, frame_rate=1 / 3e-3, bias=1.0e-3, drift=0.5e-3, white=0.1e-3,
                   drift_time=0.3):
    """Position error resembling the tracker: fixed offset, slow drift, white jitter."""
    rng = np.random.default_rng(seed)
    b = rng.normal(0, bias / np.sqrt(3), 3)
    walk = rng.normal(0, 1, (n, 3))
    a = np.exp(-1.0 / (drift_time * frame_rate))
    slow = np.zeros((n, 3))
    for k in range(1, n):
        slow[k] = a * slow[k - 1] + np.sqrt(1 - a * a) * walk[k]
    return b + drift / np.sqrt(3) * slow + rng.normal(0, white / np.sqrt(3), (n, 3))


# motion generators for ranging and tracking experiments

def radial_path(start, distance, duration, hold=0.05, rate=1000.0, direction=None):
    """Smooth (minimum-jerk) retreat of ``distance`` metres along the line from the origin."""
    p0 = np.asarray(start, dtype=float)
    u = p0 / np.linalg.norm(p0) if direction is None else np.asarray(direction) / np.linalg.norm(direction)
    t = np.arange(0, duration + 1e-12, 1.0 / rate)
    s = np.clip((t - hold) / max(duration - 2 * hold, 1e-9), 0, 1)
    s = 10 * s ** 3 - 15 * s ** 4 + 6 * s ** 5
    return MotionPath(t, p0 + np.outer(s * distance, u))


def constant_speed_radial(start, speed, duration, ramp=0.05, rate=1000.0):
    """Radial motion accelerating linearly to ``speed`` over ``ramp`` seconds."""
    p0 = np.asarray(start, dtype=float)
    u = p0 / np.linalg.norm(p0)
    t = np.arange(0, duration + 1e-12, 1.0 / rate)
    v = speed * np.clip(t / ramp, 0, 1) if ramp > 0 else np.full_like(t, speed)
    s = np.r_[0, np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(t))]
    return MotionPath(t, p0 + np.outer(s, u)), s


def star_path(center, size=0.08, speed=0.5, lead_in=0.15, rate=1000.0, normal_axis=2,
              points=5):
    """Five-pointed star drawn at a constant speed (corners rounded by a short blend)."""
    c = np.asarray(center, dtype=float)
    ang = np.pi / 2 + np.arange(points) * 4 * np.pi / points
    verts2 = 0.5 * size * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    verts2 = np.vstack([verts2, verts2[:1]])
    axes = [k for k in range(3) if k != normal_axis]
    verts = np.repeat(c[None], len(verts2), 0)
    verts[:, axes[0]] += verts2[:, 0]
    verts[:, axes[1]] += verts2[:, 1]
    seg = np.linalg.norm(np.diff(verts, axis=0), axis=1)
    arc = np.r_[0, np.cumsum(seg)]
    dt = 1.0 / rate
    ramp = 0.05
    # trapezoid speed: ramp up, cruise, ramp down
    t_cruise = arc[-1] / speed - ramp
    dur = t_cruise + 2 * ramp
    t = np.arange(0, dur + dt / 2, dt)
    v = speed * np.clip(np.minimum(t / ramp, (dur - t) / ramp), 0, 1)
    s = np.r_[0, np.cumsum(0.5 * (v[1:] + v[:-1]) * dt)]
    s = np.clip(s * arc[-1] / s[-1], 0, arc[-1])
    pos = np.stack([np.interp(s, arc, verts[:, k]) for k in range(3)], axis=1)
    # round the corners so the spline path stays smooth
    from scipy.ndimage import uniform_filter1d
    w = max(1, int(0.01 / (speed * dt)))
    pos = uniform_filter1d(pos, size=w, axis=0, mode="nearest")
    n_lead = int(round(lead_in * rate))
    pos = np.vstack([np.repeat(pos[:1], n_lead, 0), pos, np.repeat(pos[-1:], n_lead // 3, 0)])
    tt = np.arange(len(pos)) * dt
    return MotionPath(tt, pos)


def shape_path(center, kind="circle", size=0.08, speed=0.5, lead_in=0.15, rate=1000.0):
    """Circle or square outline at a constant speed in the horizontal plane."""
    if kind == "star":
        return star_path(center, size, speed, lead_in, rate)
    c = np.asarray(center, dtype=float)
    dt = 1.0 / rate
    if kind == "circle":
        r = size / 2
        per = 2 * np.pi * r
        ramp = 0.05
        dur = per / speed + ramp
        t = np.arange(0, dur + dt / 2, dt)
        v = speed * np.clip(np.minimum(t / ramp, (dur - t) / ramp), 0, 1)
        s = np.r_[0, np.cumsum(0.5 * (v[1:] + v[:-1]) * dt)]
        a = s / r
        pos = c + np.stack([r * np.cos(a), r * np.sin(a), np.zeros_like(a)], axis=1)
    else:
        raise InvalidArgument(f"unknown shape {kind!r}")
    n_lead = int(round(lead_in * rate))
    pos = np.vstack([np.repeat(pos[:1], n_lead, 0), pos, np.repeat(pos[-1:], n_lead // 3, 0)])
    return MotionPath(np.arange(len(pos)) * dt, pos)
