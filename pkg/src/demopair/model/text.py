"""Closed-vocabulary word tokenizer for the templated captions.

The caption language is finite by construction, so the vocabulary is built
once from the template scaffolding plus every attribute value. Ids 0 and 1
are reserved for padding and the end-of-sequence token; the eos feature is
the text encoder's global representation.
"""

import re

from ..errors import DataError
from ..synthgen import profiles as P

PAD_ID = 0
EOS_ID = 1

_TOKEN_RE = re.compile(r"[a-z0-9+-]+|[.,]")

_TEMPLATE_WORDS = (
    "the person appears to be , approximately years old . "
    "they have hair . their skin tone is . their expression is ."
)


def tokenize(text: str):
    """Lowercase word/punctuation split; hyphenated tokens stay whole."""
    return _TOKEN_RE.findall(text.lower())


def build_vocab():
    words = set(tokenize(_TEMPLATE_WORDS))
    for domain in (P.AGE_CLASSES, P.GENDER_CLASSES, P.ETHNICITY_CLASSES,
                   P.HAIR_STYLES, P.HAIR_COLORS, P.EXPRESSIONS,
                   P.SKIN_TONE_NAMES):
        for value in domain:
            words.update(tokenize(value))
    return {"<pad>": PAD_ID, "<eos>": EOS_ID, **{
        w: i for i, w in enumerate(sorted(words), start=2)
    }}


VOCAB = build_vocab()
VOCAB_SIZE = len(VOCAB)


def encode(text: str, max_len: int, vocab=None):
    """Token id list ending in EOS_ID; length (incl. eos) capped at max_len."""
    vocab = VOCAB if vocab is None else vocab
    ids = []
    for word in tokenize(text):
        if word not in vocab:
            raise DataError(f"out-of-vocabulary word {word!r}")
        ids.append(vocab[word])
    ids.append(EOS_ID)
    if len(ids) > max_len:
        raise DataError(
            f"text encodes to {len(ids)} tokens, exceeding max length {max_len}"
        )
    return ids
