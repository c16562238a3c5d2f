"""Procedural avatar renderer.

Every demographic attribute owns a disjoint pixel cue, documented here so a
small model can in principle invert the rendering:

  skin_tone_index -> face fill color (palette row)
  ethnicity_class -> implied by skin tone (two tones per ethnicity)
  age_class       -> face width (six distinct ellipse aspect ratios)
  gender_class    -> chin bar (male) vs lash marks above the eyes (female)
  hair_style      -> hair region geometry (curly/long/short/wavy)
  hair_color      -> hair region fill color
  expression      -> mouth shape (frown arc/flat/smile arc/open circle)

Per-sample jitter is a whole-face translation of at most one pixel plus
additive noise restricted to background pixels, so two renders of the same
profile differ while attribute regions stay untouched by noise.
"""

import numpy as np

from ..errors import ConfigError
from .profiles import AGE_CLASSES

# Palette "A" is the default; "B" applies a constant channel offset to every
# color (ordering and semantics preserved) and serves as a distribution shift.
_SKIN_A = (
    (0.96, 0.87, 0.80), (0.92, 0.80, 0.70), (0.87, 0.72, 0.58),
    (0.80, 0.65, 0.48), (0.72, 0.58, 0.40), (0.64, 0.50, 0.34),
    (0.55, 0.42, 0.28), (0.45, 0.33, 0.22), (0.35, 0.25, 0.16),
    (0.24, 0.17, 0.11),
)
_HAIR_A = {
    "black": (0.08, 0.08, 0.10),
    "blonde": (0.85, 0.72, 0.35),
    "brown": (0.42, 0.28, 0.15),
    "gray": (0.62, 0.62, 0.64),
    "red": (0.55, 0.20, 0.10),
}
_BG_A = (0.82, 0.84, 0.86)

_SHIFT_B = (0.03, -0.04, 0.06)


def _shift(rgb, off):
    return tuple(float(np.clip(c + o, 0.0, 1.0)) for c, o in zip(rgb, off))


PALETTES = {
    "A": {"skin": _SKIN_A, "hair": _HAIR_A, "background": _BG_A},
    "B": {
        "skin": tuple(_shift(c, _SHIFT_B) for c in _SKIN_A),
        "hair": {k: _shift(v, _SHIFT_B) for k, v in _HAIR_A.items()},
        "background": _shift(_BG_A, _SHIFT_B),
    },
}

# Face half-width as a fraction of the half-height, one value per age bucket
# (children render roundest).
_AGE_WIDTH = (0.95, 0.88, 0.82, 0.76, 0.70, 0.64)

_EYE_COLOR = (0.06, 0.06, 0.06)
_MOUTH_COLOR = (0.55, 0.18, 0.18)


def _check_spec(image_spec):
    h, w, patch = image_spec
    if h % patch != 0 or w % patch != 0:
        raise ConfigError(
            f"image size {h}x{w} not divisible by patch size {patch}"
        )
    return h, w, patch


def _geometry(profile, h, w, jitter_rng):
    dy = int(jitter_rng.integers(-1, 2))
    dx = int(jitter_rng.integers(-1, 2))
    cy = h / 2.0 + dy
    cx = w / 2.0 + dx
    ry = 0.34 * h
    rx = ry * _AGE_WIDTH[AGE_CLASSES.index(profile.age_class)]
    return cy, cx, ry, rx


def face_region_mask(profile, image_spec, jitter_seed=0):
    """Boolean mask of the face ellipse for this profile and jitter seed."""
    h, w, _ = _check_spec(image_spec)
    rng = np.random.default_rng(jitter_seed)
    cy, cx, ry, rx = _geometry(profile, h, w, rng)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def render_avatar(profile, image_spec, jitter_seed=0, palette="A"):
    """Render a profile to an (H, W, 3) float array in [0, 1].

    Bit-identical for identical (profile, image_spec, jitter_seed, palette).
    """
    h, w, _ = _check_spec(image_spec)
    pal = PALETTES[palette]
    rng = np.random.default_rng(jitter_seed)

    cy, cx, ry, rx = _geometry(profile, h, w, rng)
    bg_noise = rng.uniform(-0.04, 0.04, size=(h, w))

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    face = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0

    # hair geometry, anchored to face-relative coordinates
    outer = ((yy - cy) / (ry * 1.12)) ** 2 + ((xx - cx) / (rx * 1.12)) ** 2 <= 1.0
    xrel = xx - cx
    style = profile.hair_style
    if style == "short":
        hair = outer & (yy <= cy - 0.16 * h)
    elif style == "long":
        hair = (outer & (yy <= cy - 0.10 * h)) | (
            outer & ~face & (yy <= cy + 0.30 * h)
        )
    elif style == "curly":
        bumps = 0.10 + 0.06 * (np.cos(xrel * 2.2) + 1.0) / 2.0
        wide = ((yy - cy) / (ry * 1.18)) ** 2 + ((xx - cx) / (rx * 1.18)) ** 2 <= 1.0
        hair = wide & (yy <= cy - bumps * h)
    elif style == "wavy":
        hair = outer & (yy <= cy - (0.12 + 0.05 * np.sin(xrel * 1.1)) * h)
    else:
        raise ConfigError(f"unknown hair_style {style!r}")

    img = np.empty((h, w, 3), dtype=np.float64)
    img[:] = pal["background"]
    img += bg_noise[:, :, None]

    skin = np.asarray(pal["skin"][profile.skin_tone_index])
    img[face] = skin
    img[hair] = pal["hair"][profile.hair_color]

    # eyes
    ey = cy - 0.06 * h
    er = max(1.0, 0.035 * h)
    for ex in (cx - 0.13 * w, cx + 0.13 * w):
        eye = (yy - ey) ** 2 + (xx - ex) ** 2 <= er**2
        img[eye] = _EYE_COLOR

    # gender cue
    if profile.gender_class == "male":
        chin = (
            (yy >= cy + 0.20 * h)
            & (yy <= cy + 0.24 * h)
            & (np.abs(xrel) <= 0.10 * w)
        )
        img[chin] = skin * 0.55
    else:
        for ex in (cx - 0.13 * w, cx + 0.13 * w):
            lash = (
                (yy >= ey - er - max(1.0, h / 32.0))
                & (yy < ey - er)
                & (np.abs(xx - ex) <= er)
            )
            img[lash] = _EYE_COLOR

    # mouth
    my = cy + 0.13 * h
    half = 0.09 * w
    thick = max(1.0, h / 32.0)
    xhat = xrel / half
    inside = np.abs(xhat) <= 1.0
    expr = profile.expression
    if expr == "neutral":
        mouth = inside & (yy >= my) & (yy <= my + thick)
    elif expr == "smiling":
        curve = my + 0.05 * h * (1.0 - xhat**2)
        mouth = inside & (np.abs(yy - curve) <= thick)
    elif expr == "frowning":
        curve = my + 0.05 * h * xhat**2
        mouth = inside & (np.abs(yy - curve) <= thick)
    elif expr == "surprised":
        mouth = (yy - (my + 0.02 * h)) ** 2 + xrel**2 <= (0.045 * h) ** 2
    else:
        raise ConfigError(f"unknown expression {expr!r}")
    img[mouth] = _MOUTH_COLOR

    return np.clip(img, 0.0, 1.0)


def to_uint8(img):
    """Quantize a [0, 1] float image to 8-bit RGB."""
    return np.round(img * 255.0).astype(np.uint8)
