"""Demographic attribute domains, profile sampling, and text rendering.

The attribute set is fixed at seven: six categorical attributes plus a skin
tone palette index. Skin tones are partitioned two-per-ethnicity, so the
(ethnicity, skin_tone_index) pair is consistent by construction and the tone
alone identifies the ethnicity in pixel space. Every attribute surfaces in
the rendered sentence, which makes the text injective over the full profile
domain.
"""

from dataclasses import dataclass, asdict

import numpy as np

from ..errors import ConfigError

AGE_CLASSES = ("0-9", "10-19", "20-29", "30-39", "40-59", "60+")
GENDER_CLASSES = ("female", "male")
ETHNICITY_CLASSES = ("asian", "black", "hispanic", "middle eastern", "white")
HAIR_STYLES = ("curly", "long", "short", "wavy")
HAIR_COLORS = ("black", "blonde", "brown", "gray", "red")
EXPRESSIONS = ("frowning", "neutral", "smiling", "surprised")

# Palette index -> descriptive name, ordered strictly bright to dark.
SKIN_TONE_NAMES = (
    "porcelain", "fair", "light", "beige", "olive",
    "tan", "bronze", "brown", "umber", "ebony",
)

# Two disjoint palette indices per ethnicity. The assignment is an arbitrary
# but fixed convention of this synthetic generator; it exists so that skin
# tone is a pixel-level proxy for ethnicity, not a demographic claim.
ETHNICITY_SKIN_TONES = {
    "white": (0, 1),
    "asian": (2, 3),
    "hispanic": (4, 5),
    "middle eastern": (6, 7),
    "black": (8, 9),
}

ATTRIBUTE_DOMAINS = {
    "age_class": AGE_CLASSES,
    "gender_class": GENDER_CLASSES,
    "ethnicity_class": ETHNICITY_CLASSES,
    "hair_style": HAIR_STYLES,
    "hair_color": HAIR_COLORS,
    "expression": EXPRESSIONS,
    "skin_tone_index": tuple(range(len(SKIN_TONE_NAMES))),
}

# Attributes drawn from their own balanced bag; skin tone follows ethnicity.
SAMPLED_ATTRIBUTES = (
    "age_class", "gender_class", "ethnicity_class",
    "hair_style", "hair_color", "expression",
)

TONE_TO_ETHNICITY = {
    tone: eth for eth, tones in ETHNICITY_SKIN_TONES.items() for tone in tones
}


def max_class_count():
    """Largest class count over the sampled attributes (stratification floor)."""
    return max(len(ATTRIBUTE_DOMAINS[a]) for a in SAMPLED_ATTRIBUTES)


@dataclass(frozen=True)
class DemographicProfile:
    age_class: str
    gender_class: str
    ethnicity_class: str
    hair_style: str
    hair_color: str
    expression: str
    skin_tone_index: int

    def validate(self):
        for name in SAMPLED_ATTRIBUTES:
            value = getattr(self, name)
            if value not in ATTRIBUTE_DOMAINS[name]:
                raise ConfigError(f"{name}={value!r} not in its domain")
        tones = ETHNICITY_SKIN_TONES[self.ethnicity_class]
        if self.skin_tone_index not in tones:
            raise ConfigError(
                f"skin_tone_index {self.skin_tone_index} inconsistent with "
                f"ethnicity {self.ethnicity_class!r} (allowed: {tones})"
            )
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class ProfileSampler:
    """Stratified profile stream.

    Each attribute draws from a bag holding one shuffled copy of its class
    set; a bag is reshuffled and refilled when it empties. Any prefix of n
    draws therefore has per-class counts within +-1 of n/k for an attribute
    with k classes. Skin tone uses one bag per ethnicity over that
    ethnicity's two palette indices.
    """

    def __init__(self, rng):
        if isinstance(rng, (int, np.integer, np.random.SeedSequence)):
            rng = np.random.default_rng(rng)
        self.rng = rng
        self._bags = {name: [] for name in SAMPLED_ATTRIBUTES}
        self._tone_bags = {eth: [] for eth in ETHNICITY_CLASSES}

    def _draw(self, name):
        bag = self._bags[name]
        if not bag:
            classes = ATTRIBUTE_DOMAINS[name]
            bag.extend(classes[i] for i in self.rng.permutation(len(classes)))
        return bag.pop()

    def _draw_tone(self, ethnicity):
        bag = self._tone_bags[ethnicity]
        if not bag:
            tones = ETHNICITY_SKIN_TONES[ethnicity]
            bag.extend(tones[i] for i in self.rng.permutation(len(tones)))
        return bag.pop()

    def sample(self):
        values = {name: self._draw(name) for name in SAMPLED_ATTRIBUTES}
        values["skin_tone_index"] = self._draw_tone(values["ethnicity_class"])
        return DemographicProfile(**values)


_STRAT_SALT = 31


def stratified_class_counts(sizes, circle, rng):
    """Per-split class count matrix from a rotating surplus allocation.

    circle is a permutation of class indices giving the order in which the
    remainder slots (size mod k) walk around the classes; the walk continues
    across splits. Every row s sums to sizes[s] with each entry within +-1 of
    sizes[s]/k, and because consecutive surplus blocks tile the circle, the
    column totals stay within +-1 of sum(sizes)/k as well.
    """
    k = len(circle)
    counts = np.zeros((len(sizes), k), dtype=np.int64)
    off = int(rng.integers(k))
    for s, n_s in enumerate(sizes):
        q, r = divmod(int(n_s), k)
        counts[s] += q
        for j in range(r):
            counts[s, circle[(off + j) % k]] += 1
        off += r
    return counts


def _shuffled_values(domain, counts, rng):
    values = [domain[c] for c in range(len(domain)) for _ in range(int(counts[c]))]
    rng.shuffle(values)
    return values


def stratified_profiles(sizes, seed):
    """Per-split profile lists with jointly coordinated stratification.

    Every attribute's class counts are within +-1 of uniform inside each
    split and over the union of all splits. Skin tone is allocated on a
    ten-position circle interleaved by ethnicity (positions p and p+5 hold
    the two palette indices of one ethnicity), so any contiguous surplus run
    spreads within +-1 over ethnicities too; ethnicity is then derived from
    the tone, which keeps the (ethnicity, tone) pairing consistent while
    both marginals meet the bound.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, _STRAT_SALT]))
    streams = {}
    for name in SAMPLED_ATTRIBUTES:
        if name == "ethnicity_class":
            continue
        domain = ATTRIBUTE_DOMAINS[name]
        circle = [int(c) for c in rng.permutation(len(domain))]
        counts = stratified_class_counts(sizes, circle, rng)
        streams[name] = [
            _shuffled_values(domain, counts[s], rng) for s in range(len(sizes))
        ]

    eth_order = [
        ETHNICITY_CLASSES[i] for i in rng.permutation(len(ETHNICITY_CLASSES))
    ]
    flips = rng.integers(0, 2, size=len(eth_order))
    circle = []
    for lap in range(2):
        for i, eth in enumerate(eth_order):
            circle.append(ETHNICITY_SKIN_TONES[eth][int(lap + flips[i]) % 2])
    tone_domain = ATTRIBUTE_DOMAINS["skin_tone_index"]
    tone_counts = stratified_class_counts(sizes, circle, rng)
    tone_streams = [
        _shuffled_values(tone_domain, tone_counts[s], rng)
        for s in range(len(sizes))
    ]

    splits = []
    for s, n_s in enumerate(sizes):
        profiles = []
        for i in range(int(n_s)):
            tone = tone_streams[s][i]
            profiles.append(DemographicProfile(
                age_class=streams["age_class"][s][i],
                gender_class=streams["gender_class"][s][i],
                ethnicity_class=TONE_TO_ETHNICITY[tone],
                hair_style=streams["hair_style"][s][i],
                hair_color=streams["hair_color"][s][i],
                expression=streams["expression"][s][i],
                skin_tone_index=tone,
            ))
        splits.append(profiles)
    return splits


def render_text(profile):
    """Deterministic sentence for a profile; injective over the domain."""
    p = profile
    return (
        f"The person appears to be {p.ethnicity_class} {p.gender_class}, "
        f"approximately {p.age_class} years old. "
        f"They have {p.hair_color} {p.hair_style} hair. "
        f"Their skin tone is {SKIN_TONE_NAMES[p.skin_tone_index]}. "
        f"Their expression is {p.expression}."
    )


def all_profiles():
    """Enumerate the full (consistent) profile domain."""
    out = []
    for age in AGE_CLASSES:
        for gender in GENDER_CLASSES:
            for eth in ETHNICITY_CLASSES:
                for tone in ETHNICITY_SKIN_TONES[eth]:
                    for style in HAIR_STYLES:
                        for color in HAIR_COLORS:
                            for expr in EXPRESSIONS:
                                out.append(DemographicProfile(
                                    age_class=age,
                                    gender_class=gender,
                                    ethnicity_class=eth,
                                    hair_style=style,
                                    hair_color=color,
                                    expression=expr,
                                    skin_tone_index=tone,
                                ))
    return out
